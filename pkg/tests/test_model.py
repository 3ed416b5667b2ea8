"""Episode-level integration of the full model."""

import numpy as np

import stsampler.tensor as tc
from stsampler.config import RunConfig
from stsampler.model import SamplerModel, run_episode, uniform_stride_indices

CFG = RunConfig({"data.frames": 8, "data.side": 24, "scan.side": 16,
                 "head.side": 24, "selector.T": 4, "selector.n": 32,
                 "data.event_max": 8})


def random_episode(rng, n_way=3, k=1, q=1, cfg=CFG):
    videos = [rng.uniform(0, 1, (cfg["data.frames"], cfg["data.channels"],
                                 cfg["data.side"], cfg["data.side"])).astype(np.float32)
              for _ in range(n_way * (k + q))]
    labels = list(range(n_way)) * (k + q)
    return videos, labels, n_way, n_way * k


class TestRunEpisode:
    def test_output_shapes_and_probs(self):
        rng = np.random.default_rng(0)
        videos, labels, n_way, n_sup = random_episode(rng)
        model = SamplerModel(CFG, seed=1)
        out = run_episode(model, videos, labels, n_way, n_sup,
                          train=False, sigma=0.0, rng=None, collect=True)
        assert out.probs.shape == (3, 3)
        np.testing.assert_allclose(out.probs.sum(axis=1), 1.0, atol=1e-5)
        assert out.selected.shape == (6, 4)
        assert out.saliency.shape == (6, 4, 24, 24)
        assert out.amplified.shape == (6, 4, 1, 24, 24)

    def test_generated_params_unit_norm(self):
        rng = np.random.default_rng(1)
        videos, labels, n_way, n_sup = random_episode(rng)
        model = SamplerModel(CFG, seed=1)
        out = run_episode(model, videos, labels, n_way, n_sup,
                          train=False, sigma=0.0, rng=None)
        assert abs(np.linalg.norm(out.w2) - 1) < 1e-6
        assert abs(np.linalg.norm(out.w_s) - 1) < 1e-6

    def test_eval_is_deterministic(self):
        rng = np.random.default_rng(2)
        videos, labels, n_way, n_sup = random_episode(rng)
        model = SamplerModel(CFG, seed=1)
        a = run_episode(model, videos, labels, n_way, n_sup,
                        train=False, sigma=0.0, rng=None)
        b = run_episode(model, videos, labels, n_way, n_sup,
                        train=False, sigma=0.0, rng=None)
        np.testing.assert_array_equal(a.probs, b.probs)
        np.testing.assert_array_equal(a.selected, b.selected)

    def test_selected_indices_sorted_at_eval(self):
        rng = np.random.default_rng(3)
        videos, labels, n_way, n_sup = random_episode(rng)
        model = SamplerModel(CFG, seed=1)
        out = run_episode(model, videos, labels, n_way, n_sup,
                          train=False, sigma=0.0, rng=None)
        for row in out.selected:
            assert np.all(np.diff(row) > 0)

    def test_baseline_uses_uniform_stride_and_no_adapter(self):
        rng = np.random.default_rng(4)
        videos, labels, n_way, n_sup = random_episode(rng)
        model = SamplerModel(CFG.with_overrides({"train.baseline": "true"}), seed=1)
        out = run_episode(model, videos, labels, n_way, n_sup,
                          train=False, sigma=0.0, rng=None)
        want = uniform_stride_indices(8, 4)
        for row in out.selected:
            np.testing.assert_array_equal(row, want)
        assert out.w2 is None and out.saliency is None

    def test_train_mode_loss_backward_touches_all_params(self):
        rng = np.random.default_rng(5)
        videos, labels, n_way, n_sup = random_episode(rng)
        model = SamplerModel(CFG, seed=1)
        with tc.record() as rec:
            out = run_episode(model, videos, labels, n_way, n_sup,
                              train=True, sigma=0.1, rng=np.random.default_rng(6))
            rec.backward(out.loss)
        missing = [n for n, t in model.named_params() if t.grad is None]
        assert missing == []

    def test_soft_selection_columns_normalized_in_training(self):
        rng = np.random.default_rng(7)
        videos, labels, n_way, n_sup = random_episode(rng)
        model = SamplerModel(CFG, seed=1)
        out = run_episode(model, videos, labels, n_way, n_sup,
                          train=True, sigma=0.1, rng=np.random.default_rng(8),
                          collect=True)
        for sel in out.sel_matrices:
            np.testing.assert_allclose(sel.sum(axis=0), 1.0, atol=1e-5)
            assert abs(sel.sum() - 4.0) < 1e-4

    def test_frozen_selections_reproduce_values(self):
        rng = np.random.default_rng(9)
        videos, labels, n_way, n_sup = random_episode(rng)
        model = SamplerModel(CFG, seed=1)
        cap = run_episode(model, videos, labels, n_way, n_sup,
                          train=True, sigma=0.1, rng=np.random.default_rng(10),
                          collect=True)
        replay = run_episode(model, videos, labels, n_way, n_sup,
                             train=True, sigma=0.1, rng=np.random.default_rng(10),
                             frozen_selections=cap.sel_matrices)
        assert abs(replay.loss.item() - cap.loss.item()) < 1e-4

    def test_sigma_zero_training_selection_is_hard(self):
        """In the snapped phase training uses exact one-hot selections."""
        rng = np.random.default_rng(11)
        videos, labels, n_way, n_sup = random_episode(rng)
        model = SamplerModel(CFG, seed=1)
        out = run_episode(model, videos, labels, n_way, n_sup,
                          train=True, sigma=0.0, rng=np.random.default_rng(12),
                          collect=True)
        for sel in out.sel_matrices:
            assert set(np.unique(sel)) <= {0.0, 1.0}
            np.testing.assert_array_equal(sel.sum(axis=0), 1.0)


class TestCheckpointSections:
    def test_section_names_match_contract(self):
        model = SamplerModel(CFG, seed=0)
        assert set(model.sections()) == {
            "scan_net", "selector", "task_encoder", "gen_t", "gen_s",
            "backbone", "w_r"}
