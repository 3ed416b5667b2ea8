"""Oracle verification suite behind the gradcheck CLI command.

Every check validates an implementation path against an independent
reference: closed forms, quadrature, brute-force loops or central finite
differences.  The suite is self-contained (numpy + stdlib only) so it can
run in any install.
"""

from __future__ import annotations

import math

import numpy as np

from . import amplifier, head, selector
from . import tensor as tc
from .config import RunConfig
from .model import SamplerModel, run_episode


def normal_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def normal_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-10, depth: int = 24) -> float:
    """Recursive adaptive Simpson quadrature."""

    def simpson(lo, hi, flo, fmid, fhi):
        return (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)

    def recurse(lo, hi, flo, fmid, fhi, whole, eps, level):
        mid = 0.5 * (lo + hi)
        lmid = 0.5 * (lo + mid)
        rmid = 0.5 * (mid + hi)
        fl = f(lmid)
        fr = f(rmid)
        left = simpson(lo, mid, flo, fl, fmid)
        right = simpson(mid, hi, fmid, fr, fhi)
        if level <= 0 or abs(left + right - whole) <= 15 * eps:
            return left + right + (left + right - whole) / 15.0
        return (recurse(lo, mid, flo, fl, fmid, left, eps / 2, level - 1)
                + recurse(mid, hi, fmid, fr, fhi, right, eps / 2, level - 1))

    mid = 0.5 * (a + b)
    fa, fm, fb = f(a), f(mid), f(b)
    whole = simpson(a, b, fa, fm, fb)
    return recurse(a, b, fa, fm, fb, whole, tol, depth)


def exclusion_prob_and_grads(scores, sigma: float):
    """Exact exclusion probabilities and gradients for 3 scores, top-2.

    q_e = P(frame e has the minimal perturbed score)
        = integral phi(z) prod_{j != e} Phi(z + (s_j - s_e)/sigma) dz
    """
    s = np.asarray(scores, dtype=np.float64)
    q = np.zeros(3)
    dq = np.zeros((3, 3))
    for e in range(3):
        others = [j for j in range(3) if j != e]

        def integrand(z, e=e, others=others):
            v = normal_pdf(z)
            for j in others:
                v *= normal_cdf(z + (s[j] - s[e]) / sigma)
            return v

        q[e] = adaptive_simpson(integrand, -9, 9)
        for m_idx in others:
            def dintegrand(z, e=e, m=m_idx, others=others):
                v = normal_pdf(z) * normal_pdf(z + (s[m] - s[e]) / sigma) / sigma
                for j in others:
                    if j != m:
                        v *= normal_cdf(z + (s[j] - s[e]) / sigma)
                return v

            dq[e, m_idx] = adaptive_simpson(dintegrand, -9, 9)
        dq[e, e] = -dq[e].sum()
    return q, dq


def _check_primitive_fd(rng):
    cases = []
    wconst = rng.standard_normal((3, 4))
    ops = {
        "mul": lambda t: (t * t).sum(),
        "div": lambda t: (tc.Tensor(np.ones((3, 4)), dtype=np.float64) / (t * t + 2.0)).sum(),
        "relu": lambda t: tc.relu(t).sum(),
        "sigmoid": lambda t: tc.sigmoid(t).sum(),
        "softplus": lambda t: tc.softplus(t).sum(),
        "log": lambda t: tc.log(t * t + 1.0).sum(),
        "sqrt": lambda t: tc.sqrt(t * t + 1.0).sum(),
        "softmax": lambda t: (tc.softmax(t, axis=1) * tc.Tensor(wconst, dtype=np.float64)).sum(),
        "max": lambda t: (t.max(axes=1) * 1.5).sum(),
        "cumsum": lambda t: (tc.cumsum(t, axis=1) * tc.Tensor(wconst, dtype=np.float64)).sum(),
        "l2norm": lambda t: tc.l2norm(t) * 1.0,
        "matmul": lambda t: (tc.matmul(t, tc.Tensor(wconst.T.copy(), dtype=np.float64)) * 0.5).sum(),
    }
    worst = 0.0
    for name, fn in ops.items():
        point = tc.Tensor(rng.standard_normal((3, 4)) + 0.1, dtype=np.float64)
        err = tc.finite_diff_check(fn, point, 1e-3)
        worst = max(worst, err)
        cases.append((name, err))
    conv_w = tc.Tensor(rng.standard_normal((2, 1, 3, 3)), dtype=np.float64)
    x = tc.Tensor(rng.standard_normal((1, 1, 6, 6)), dtype=np.float64)
    err = tc.finite_diff_check(
        lambda t: (tc.conv2d(t, conv_w, stride=2, pad=1) * 0.5).sum(), x, 1e-4)
    worst = max(worst, err)
    cases.append(("conv2d", err))
    err = tc.finite_diff_check(
        lambda t: (tc.bilinear_resize(t, 9, 4) * tc.bilinear_resize(t, 9, 4)).sum(), x, 1e-4)
    worst = max(worst, err)
    cases.append(("bilinear_resize", err))
    return worst <= 1e-4, f"max rel err {worst:.2e} over {len(cases)} primitives"


def _check_topk_closed_form(rng):
    s = tc.Tensor(np.array([1.0, 0.0], dtype=np.float32))
    n = 100_000
    soft, _ = selector.perturbed_topk(s, 1, 1.0, n, rng)
    p = normal_cdf(1 / math.sqrt(2))
    se = math.sqrt(p * (1 - p) / n)
    err = abs(soft.data[0, 0] - p)
    return err < 3 * se, f"mass {soft.data[0, 0]:.4f} vs Phi(1/sqrt2)={p:.4f} (3se={3*se:.4f})"


def _check_topk_jacobian(rng):
    """MC Jacobian vs quadrature, 5% per entry at n = 1e5.

    The estimator's per-entry sigma at this n is ~2-3% of the smallest
    entries, so the 5% bound needs a pinned noise stream; the stream below
    is an arbitrary fixed draw, not a tuned one (the closed-form check
    above exercises the estimator on fresh noise every run).
    """
    scores = np.array([0.55, 0.21, 0.78])
    sigma = 0.5
    n = 100_000
    s = tc.Tensor(scores.astype(np.float32))
    _, noise = selector.perturbed_topk(s, 2, sigma, n, np.random.default_rng(999))
    q, dq = exclusion_prob_and_grads(scores, sigma)
    want = np.zeros((3, 2, 3))
    want[0, 0] = -dq[0]
    want[1, 0] = dq[0]
    want[1, 1] = dq[2]
    want[2, 1] = -dq[2]
    worst = 0.0
    for i in range(3):
        for t in range(2):
            up = np.zeros((3, 2))
            up[i, t] = 1.0
            got = selector.perturbed_topk_backward(up, noise)
            for m in range(3):
                w = want[i, t, m]
                if abs(w) < 1e-6:
                    if abs(got[m]) > 0.01:
                        return False, f"entry ({i},{t},{m}): {got[m]:.4f} vs ~0"
                else:
                    worst = max(worst, abs(got[m] - w) / abs(w))
    return worst < 0.05, f"max rel err {worst:.3f} vs quadrature Jacobian"


def _check_zero_temperature(rng):
    for _ in range(100):
        s = tc.Tensor(rng.uniform(0, 1, 12).astype(np.float32))
        soft, _ = selector.perturbed_topk(s, 5, 0.0, 16, rng)
        if not np.array_equal(soft.data, selector.hard_topk(s, 5)):
            return False, "sigma=0 selection differs from hard top-k"
    return True, "100 random score vectors bit-exact"


def _check_identity_warp(rng):
    frames = tc.Tensor(rng.uniform(0, 1, (2, 1, 12, 12)).astype(np.float32))
    feats = tc.Tensor(np.ones((2, 3, 4, 4), dtype=np.float32))
    w_s = tc.Tensor((np.ones(3) / math.sqrt(3)).astype(np.float32))
    out = amplifier.amplify(frames, feats, w_s, (16, 16))
    want = tc.bilinear_resize(frames, 16, 16)
    diff = float(np.abs(out.frames.data - want.data).max())
    return diff <= 1e-5, f"max abs diff vs resized original {diff:.2e}"


def _check_amplification_law(rng):
    w = 64
    marg = np.ones(w, dtype=np.float32)
    marg[:w // 2] = 3.0  # 75% of mass in the left half
    cdf = amplifier.build_cdf(tc.Tensor(marg))
    grid = amplifier.invert_and_grid(cdf, cdf, (4, 64))
    frac = float(np.mean(grid.xs.data + 0.5 < w / 2))
    return abs(frac - 0.75) <= 1 / 64, f"heavy-half sample fraction {frac:.4f} (want 0.75)"


def _tiny_episode(cfg, rng, dtype):
    n_way, k, q = 3, 1, 1
    m = cfg["data.frames"]
    side = cfg["data.side"]
    videos = [rng.uniform(0, 1, (m, cfg["data.channels"], side, side)).astype(dtype)
              for _ in range(n_way * (k + q))]
    labels = [0, 1, 2, 0, 1, 2]
    return videos, labels, n_way, n_way * k


def _check_episode_fd(seed):
    """Sampled-coordinate FD on the full episode loss in float64.

    The selection matrices are captured once (smoothed, sigma = 0.1) and
    frozen; the score-to-selection Jacobian has its own closed-form and
    quadrature checks above (a fixed-noise Monte-Carlo top-k is piecewise
    constant in the scores, so finite differences cannot see that edge).
    """
    cfg = RunConfig({"data.frames": 8, "data.side": 24, "scan.side": 16,
                     "head.side": 24, "selector.T": 4, "selector.n": 64,
                     "data.event_max": 8})
    model = SamplerModel(cfg, seed=seed, dtype=np.float64)
    data_rng = np.random.default_rng([seed, 5])
    videos, labels, n_way, n_support = _tiny_episode(cfg, data_rng, np.float64)

    capture = run_episode(model, videos, labels, n_way, n_support,
                          train=True, sigma=0.1,
                          rng=np.random.default_rng([seed, 99]), collect=True)
    frozen = capture.sel_matrices

    def loss_value(record=False):
        rng = np.random.default_rng([seed, 99])  # fixed eps every call
        if record:
            with tc.record() as rec:
                out = run_episode(model, videos, labels, n_way, n_support,
                                  train=True, sigma=0.1, rng=rng,
                                  frozen_selections=frozen)
                rec.backward(out.loss)
            return out.loss.item()
        out = run_episode(model, videos, labels, n_way, n_support,
                          train=True, sigma=0.1, rng=rng, frozen_selections=frozen)
        return out.loss.item()

    for _, t in model.named_params():
        t.grad = None
    base = loss_value(record=True)
    step = 1e-6
    worst = 0.0
    checked = skipped = 0
    coord_rng = np.random.default_rng([seed, 7])
    for name, t in model.named_params():
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        picks = coord_rng.choice(flat.size, size=min(2, flat.size), replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + step
            up = loss_value()
            flat[i] = orig - step
            dn = loss_value()
            flat[i] = orig
            numeric = (up - dn) / (2 * step)
            a = grad.reshape(-1)[i]
            if max(abs(a), abs(numeric)) < 1e-5:
                checked += 1  # both sides agree the coordinate is inert
                continue
            # central differences are only meaningful on a locally smooth
            # piece; a ReLU or grid-segment kink inside the bracket shows
            # up as disagreeing one-sided slopes
            fwd = (up - base) / step
            bwd = (base - dn) / step
            if abs(fwd - bwd) > 0.02 * max(abs(fwd), abs(bwd), 1e-6):
                skipped += 1
                continue
            checked += 1
            err = abs(a - numeric) / max(abs(a), abs(numeric))
            worst = max(worst, err)
    ok = worst <= 1e-3 and checked >= 3 * max(1, skipped)
    return ok, (f"max rel err {worst:.2e} over {checked} smooth coordinates "
                f"({skipped} kink-straddling skipped)")


def _check_adapter_invariants(seed):
    from .adapter import TaskAdapter
    rng = np.random.default_rng(seed)
    ad = TaskAdapter(feat_channels=6, dt=8, selector_d=5, rng=rng)
    sup = [tc.Tensor(rng.standard_normal((6, 2, 2)).astype(np.float32)) for _ in range(4)]
    summary = ad.encode_task(sup)
    perm = ad.encode_task([sup[2], sup[0], sup[3], sup[1]])
    if not np.array_equal(summary.mu.data, perm.mu.data):
        return False, "encoder not permutation invariant"
    f_t = ad.sample_summary(summary, None, train=False)
    gen = ad.generate(f_t)
    n2 = float(np.linalg.norm(gen.theta_ts.data))
    ns = float(np.linalg.norm(gen.theta_sa.data))
    if abs(n2 - 1) > 1e-6 or abs(ns - 1) > 1e-6:
        return False, f"installed norms {n2:.8f}, {ns:.8f}"
    scaled = ad.generate(f_t * 3.0)
    dmax = max(float(np.abs(scaled.theta_ts.data - gen.theta_ts.data).max()),
               float(np.abs(scaled.theta_sa.data - gen.theta_sa.data).max()))
    if dmax > 1e-6:
        return False, f"positive-scale invariance violated ({dmax:.2e})"
    return True, "unit norms, permutation and scale invariance hold"


def _check_loss_anchor(rng):
    q = tc.Tensor(rng.standard_normal((2, 4)).astype(np.float32))
    probs = head.classify(q, [q] * 5)  # equidistant prototypes -> uniform
    ce = head.cross_entropy(probs, 0)
    want = math.log(5)
    err = abs(ce.item() - want)
    return err <= 1e-6, f"uniform CE {ce.item():.6f} vs ln5 {want:.6f}"


def run_suite(seed: int, report=print) -> bool:
    """Run every oracle check; report one line each; True when all pass.

    Each check owns an rng substream so outcomes do not shift when checks
    are added or reordered.
    """
    streams = [np.random.default_rng([seed, i]) for i in range(16)]
    checks = [
        ("primitive_finite_differences", lambda: _check_primitive_fd(streams[0])),
        ("perturbed_topk_closed_form", lambda: _check_topk_closed_form(streams[1])),
        ("perturbed_topk_quadrature_jacobian", lambda: _check_topk_jacobian(streams[2])),
        ("zero_temperature_identity", lambda: _check_zero_temperature(streams[3])),
        ("identity_warp", lambda: _check_identity_warp(streams[4])),
        ("amplification_law", lambda: _check_amplification_law(streams[5])),
        ("episode_loss_finite_differences", lambda: _check_episode_fd(seed)),
        ("adapter_invariants", lambda: _check_adapter_invariants(seed)),
        ("uniform_cross_entropy_anchor", lambda: _check_loss_anchor(streams[6])),
    ]
    all_ok = True
    for name, fn in checks:
        ok, detail = fn()
        all_ok = all_ok and ok
        report(f"{'ok  ' if ok else 'FAIL'} {name}: {detail}")
    return all_ok
