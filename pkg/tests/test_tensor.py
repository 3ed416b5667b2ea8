"""Tensor engine tests: primitive semantics, autodiff, serialization."""

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import stsampler.tensor as tc


def sliding_window_conv(x, w, stride, pad):
    """Brute-force cross-correlation oracle, independent of the kernels."""
    n, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, co, oh, ow))
    for b in range(n):
        for o in range(co):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[b, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[b, o, i, j] = (patch * w[o].astype(np.float64)).sum()
    return out


class TestForwardPrimitives:
    def test_matmul_shape(self):
        a = tc.Tensor(np.ones((2, 3)))
        b = tc.Tensor(np.ones((3, 1)))
        assert tc.matmul(a, b).shape == (2, 1)

    def test_matmul_shape_mismatch_diagnostic(self):
        a = tc.Tensor(np.ones((2, 3)))
        b = tc.Tensor(np.ones((2, 3)))
        with pytest.raises(tc.ShapeError, match="matmul"):
            tc.matmul(a, b)

    def test_relu_definition(self):
        out = tc.relu(tc.Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_conv2d_matches_sliding_window_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((1, 1, 5, 5)).astype(np.float32)
        w = rng.standard_normal((1, 1, 3, 3)).astype(np.float32)
        got = tc.conv2d(tc.Tensor(x), tc.Tensor(w), stride=1, pad=1).data
        want = sliding_window_conv(x, w, 1, 1)
        np.testing.assert_allclose(got, want, atol=1e-5)

    @pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1), (3, 2)])
    def test_conv2d_stride_pad_variants(self, stride, pad):
        rng = np.random.default_rng(stride * 10 + pad)
        x = rng.standard_normal((2, 3, 8, 9)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        got = tc.conv2d(tc.Tensor(x), tc.Tensor(w), stride=stride, pad=pad).data
        want = sliding_window_conv(x, w, stride, pad)
        np.testing.assert_allclose(got, want, atol=1e-4)

    def test_softmax_normalized(self):
        rng = np.random.default_rng(3)
        x = tc.Tensor(rng.standard_normal((4, 7)).astype(np.float32))
        s = tc.softmax(x, axis=1).data
        assert np.all(s >= 0) and np.all(s <= 1)
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-6)

    def test_no_silent_broadcast(self):
        a = tc.Tensor(np.ones((3, 4)))
        b = tc.Tensor(np.ones((4,)))
        with pytest.raises(tc.ShapeError):
            tc.add(a, b)

    def test_scalar_broadcast_allowed(self):
        a = tc.Tensor(np.ones((3, 4)))
        out = a * 2.0 + 1.0
        np.testing.assert_array_equal(out.data, np.full((3, 4), 3.0))

    def test_forward_deterministic(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        a = tc.conv2d(tc.Tensor(x), tc.Tensor(w), stride=2, pad=1).data
        b = tc.conv2d(tc.Tensor(x), tc.Tensor(w), stride=2, pad=1).data
        assert np.array_equal(a, b)

    def test_bilinear_resize_identity(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(0, 1, (1, 1, 6, 6)).astype(np.float32)
        out = tc.bilinear_resize(tc.Tensor(x), 6, 6).data
        np.testing.assert_allclose(out, x, atol=1e-6)

    def test_bilinear_resize_matches_hand_oracle(self):
        # 4x4 checkerboard down to 2x2: each output pixel sits at the center
        # of a 2x2 block, so it averages the block
        board = np.indices((4, 4)).sum(axis=0) % 2
        x = board[None, None].astype(np.float32)
        out = tc.bilinear_resize(tc.Tensor(x), 2, 2).data[0, 0]
        np.testing.assert_allclose(out, np.full((2, 2), 0.5), atol=1e-6)

    def test_concat_and_take(self):
        a = tc.Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
        b = tc.Tensor(np.arange(3, dtype=np.float32).reshape(1, 3))
        cat = tc.concat([a, b], axis=0)
        assert cat.shape == (3, 3)
        picked = tc.take(cat, [2, 0])
        np.testing.assert_array_equal(picked.data[0], b.data[0])


class TestBackward:
    def test_sum_identity_jacobian(self):
        x = tc.Tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
        with tc.record() as rec:
            rec.backward(x.sum())
        np.testing.assert_array_equal(x.grad, np.ones((3, 4), dtype=np.float32))

    def test_sum_of_squares_gradient(self):
        x = tc.Tensor([1.0, 2.0], requires_grad=True)
        with tc.record() as rec:
            rec.backward((x * x).sum())
        np.testing.assert_allclose(x.grad, [2.0, 4.0], atol=1e-6)

    def test_grad_accumulates_across_uses(self):
        x = tc.Tensor([3.0], requires_grad=True)
        with tc.record() as rec:
            y = x + x
            rec.backward(y.sum())
        np.testing.assert_allclose(x.grad, [2.0])

    def test_nonscalar_loss_rejected(self):
        x = tc.Tensor(np.ones(3), requires_grad=True)
        with tc.record() as rec:
            y = x * 2.0
            with pytest.raises(tc.ShapeError, match="scalar"):
                rec.backward(y)

    def test_mlp_gradient_matches_finite_differences(self):
        """Random 3-layer MLP: analytic vs central differences <= 1e-4."""
        rng = np.random.default_rng(42)
        w1 = tc.Tensor(rng.standard_normal((5, 8)) * 0.5, dtype=np.float64)
        w2 = tc.Tensor(rng.standard_normal((8, 6)) * 0.5, dtype=np.float64)
        w3 = tc.Tensor(rng.standard_normal((6, 1)) * 0.5, dtype=np.float64)
        x0 = tc.Tensor(rng.standard_normal((2, 5)), dtype=np.float64)

        def net(p):
            h1 = tc.relu(tc.matmul(x0, p))
            h2 = tc.sigmoid(tc.matmul(h1, w2))
            return tc.matmul(h2, w3).sum()

        assert tc.finite_diff_check(net, w1, 1e-3) <= 1e-4

    def test_primitive_fd_checks_at_random_points(self):
        """Every differentiable primitive agrees with central differences."""
        rng = np.random.default_rng(9)

        cases = {
            "add": lambda t: (t + tc.Tensor(cmat, dtype=np.float64)).sum(),
            "mul": lambda t: (t * t).sum(),
            "div": lambda t: (tc.Tensor(np.ones(t.shape), dtype=np.float64) / (t * t + 2.0)).sum(),
            "relu": lambda t: tc.relu(t).sum(),
            "sigmoid": lambda t: tc.sigmoid(t).sum(),
            "softplus": lambda t: tc.softplus(t).sum(),
            "exp": lambda t: tc.exp(t).sum(),
            "log": lambda t: tc.log(t * t + 1.0).sum(),
            "sqrt": lambda t: tc.sqrt(t * t + 1.0).sum(),
            "mean": lambda t: (t.mean(axes=0) * tc.Tensor(wvec, dtype=np.float64)).sum(),
            "max": lambda t: (t.max(axes=0) * tc.Tensor(wvec, dtype=np.float64)).sum(),
            "min": lambda t: (t.min(axes=0) * tc.Tensor(wvec, dtype=np.float64)).sum(),
            "cumsum": lambda t: (tc.cumsum(t, axis=1) * tc.Tensor(cmat, dtype=np.float64)).sum(),
            "softmax": lambda t: (tc.softmax(t, axis=1) * tc.Tensor(cmat, dtype=np.float64)).sum(),
            "l2norm": lambda t: tc.l2norm(t) * 1.0,
            "reshape": lambda t: (t.reshape(12) * tc.Tensor(cmat.reshape(12), dtype=np.float64)).sum(),
            "transpose": lambda t: (tc.transpose(t) * tc.Tensor(cmat.T.copy(), dtype=np.float64)).sum(),
            "concat": lambda t: tc.concat([t, t * 2.0], axis=0).sum(),
            "take": lambda t: (tc.take(t, [2, 0, 2]) * 1.5).sum(),
            "swapaxes": lambda t: (tc.swapaxes(t, 0, 1) * tc.Tensor(cmat.T.copy(), dtype=np.float64)).sum(),
            "bmm": lambda t: (tc.bmm(t.reshape(2, 2, 3), tc.Tensor(cmat.reshape(2, 3, 2), dtype=np.float64)) * 0.5).sum(),
        }
        for case_idx, (name, fn) in enumerate(cases.items()):
            for trial in range(10):
                rng2 = np.random.default_rng(1000 * case_idx + trial)
                wvec = rng2.standard_normal(4)
                cmat = rng2.standard_normal((3, 4))
                point = tc.Tensor(rng2.standard_normal((3, 4)) + 0.1, dtype=np.float64)
                err = tc.finite_diff_check(fn, point, 1e-3)
                assert err <= 1e-4, f"{name} trial {trial}: fd error {err}"

    def test_conv_and_resize_and_warp_fd(self):
        rng = np.random.default_rng(17)
        w = tc.Tensor(rng.standard_normal((2, 1, 3, 3)), dtype=np.float64)
        x = tc.Tensor(rng.standard_normal((1, 1, 6, 6)), dtype=np.float64)

        def conv_loss(t):
            return (tc.conv2d(t, w, stride=2, pad=1) * 0.5).sum()

        assert tc.finite_diff_check(conv_loss, x, 1e-4) <= 1e-4

        def resize_loss(t):
            y = tc.bilinear_resize(t, 9, 4)
            return (y * y).sum()

        assert tc.finite_diff_check(resize_loss, x, 1e-4) <= 1e-4

        img = tc.Tensor(rng.standard_normal((1, 2, 6, 6)), dtype=np.float64)
        # keep sample coordinates away from integers (bilinear kinks)
        ys = tc.Tensor(rng.uniform(0.3, 4.4, (1, 5)).round(1) + 0.07, dtype=np.float64)
        xs = tc.Tensor(rng.uniform(0.3, 4.4, (1, 5)).round(1) + 0.07, dtype=np.float64)

        def warp_coord_loss(t):
            y = tc.warp(img, ys, t)
            return (y * y).sum()

        assert tc.finite_diff_check(warp_coord_loss, xs, 1e-5) <= 1e-4


class TestFiniteDiffCheck:
    def test_quadratic_exactness(self):
        p = tc.Tensor(np.array([1.0, 2.0, 3.0]), dtype=np.float64)
        assert tc.finite_diff_check(lambda t: (t * t).sum(), p, 1e-3) <= 1e-6

    def test_sigmoid_sum_at_zero(self):
        p = tc.Tensor(np.zeros(5), dtype=np.float64)
        assert tc.finite_diff_check(lambda t: tc.sigmoid(t).sum(), p, 1e-3) <= 1e-5

    def test_constant_function_zero_error(self):
        p = tc.Tensor(np.array([1.0, -2.0]), dtype=np.float64)
        err = tc.finite_diff_check(lambda t: (t * 0.0).sum(), p, 1e-3)
        assert err == 0.0

    def test_nondeterministic_rejected(self):
        state = {"n": 0}

        def fn(t):
            state["n"] += 1
            return (t * float(state["n"])).sum()

        with pytest.raises(ValueError, match="non-deterministic"):
            tc.finite_diff_check(fn, tc.Tensor(np.ones(2), dtype=np.float64), 1e-3)

    def test_nonpositive_step_rejected(self):
        with pytest.raises(ValueError):
            tc.finite_diff_check(lambda t: t.sum(), tc.Tensor(np.ones(2)), 0.0)


class TestRecordSemantics:
    def test_no_record_means_no_taping(self):
        x = tc.Tensor(np.ones(3), requires_grad=True)
        y = x * 2.0
        assert y._record is None and not y.requires_grad

    def test_record_is_topologically_ordered(self):
        x = tc.Tensor(np.ones(3), requires_grad=True)
        with tc.record() as rec:
            y = x * 2.0
            z = y + x
            _ = z.sum()
        seen = {id(x)}
        for node in rec.nodes:
            for t in node.inputs:
                if t.requires_grad:
                    assert id(t) in seen
            seen.add(id(node.output))

    def test_tensor_invariant_size(self):
        t = tc.Tensor(np.zeros((2, 3, 4)))
        assert int(np.prod(t.shape)) == t.data.size


class TestInvariantsProperty:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
    def test_softmax_rows_sum_to_one(self, rows, cols, seed):
        x = np.random.default_rng(seed).standard_normal((rows, cols)).astype(np.float32)
        s = tc.softmax(tc.Tensor(x), axis=1).data
        assert np.all(s >= 0) and np.all(s <= 1)
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-6)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_finite_outputs_on_finite_inputs(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((2, 2, 6, 6)).astype(np.float32) * 3
        w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
        y = tc.conv2d(tc.Tensor(x), tc.Tensor(w), stride=1, pad=1)
        z = tc.softmax(tc.sigmoid(y).mean(axes=(2, 3)), axis=1)
        assert np.all(np.isfinite(z.data))


class TestSerialization:
    def test_roundtrip(self):
        rng = np.random.default_rng(2)
        arr = rng.standard_normal((2, 3, 4)).astype(np.float32)
        buf = io.BytesIO()
        tc.write_tnsr(buf, arr)
        buf.seek(0)
        back = tc.read_tnsr(buf)
        assert back.dtype == np.float32
        np.testing.assert_array_equal(back, arr)

    def test_header_layout(self):
        buf = io.BytesIO()
        tc.write_tnsr(buf, np.zeros((2, 5), dtype=np.float32))
        raw = buf.getvalue()
        header, _, payload = raw.partition(b"\n")
        assert header == b"TNSR v1 2 2 5"
        assert len(payload) == 2 * 5 * 4

    def test_scalar_roundtrip(self):
        buf = io.BytesIO()
        tc.write_tnsr(buf, np.asarray(3.5, dtype=np.float32))
        buf.seek(0)
        assert tc.read_tnsr(buf).item() == 3.5

    def test_truncated_payload_rejected(self):
        buf = io.BytesIO(b"TNSR v1 1 4\n\x00\x00")
        with pytest.raises(ValueError, match="truncated"):
            tc.read_tnsr(buf)
