"""Harness: optimizer, schedules, checkpointing, evaluation, metrics."""

import os

import numpy as np
import pytest

import stsampler.tensor as tc
from stsampler import data as ds
from stsampler import train as tr
from stsampler.config import RunConfig
from stsampler.io_formats import read_checkpoint, write_checkpoint
from stsampler.model import SamplerModel, uniform_stride_indices

TINY = {"data.classes": 8, "data.per_class": 5, "data.frames": 8, "data.side": 24,
        "scan.side": 16, "head.side": 24, "selector.T": 4, "selector.n": 32,
        "data.event_max": 6, "data.event_min": 3, "data.pattern_size": 10,
        "train.n_way": 2, "train.n_query": 2, "train.epochs": 2, "train.episodes": 2,
        "eval.episodes": 4}


@pytest.fixture(scope="module")
def tiny_env(tmp_path_factory):
    out = tmp_path_factory.mktemp("tinydata")
    cfg = RunConfig(dict(TINY, **{"data.dir": str(out)}))
    ds.generate_dataset(cfg, seed=2, out_dir=str(out))
    return cfg


class TestSGD:
    def test_momentum_update(self):
        t = tc.Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
        opt = tr.SGD([("p", t)], momentum=0.5, clip=0.0)
        t.grad = np.array([2.0], dtype=np.float32)
        opt.step(0.1)
        np.testing.assert_allclose(t.data, [0.8])  # 1 - 0.1*2
        t.grad = np.array([0.0], dtype=np.float32)
        opt.step(0.1)
        np.testing.assert_allclose(t.data, [0.7])  # velocity carries 0.5*2

    def test_clip_bounds_global_norm(self):
        t = tc.Tensor(np.zeros(4, dtype=np.float32), requires_grad=True)
        opt = tr.SGD([("p", t)], momentum=0.0, clip=1.0)
        t.grad = np.full(4, 10.0, dtype=np.float32)
        opt.step(1.0)
        assert abs(np.linalg.norm(t.data) - 1.0) < 1e-5

    def test_lr_schedule_anchors(self):
        assert tr.lr_schedule(0, 0.01, 0.9, 100) == pytest.approx(0.01)
        assert tr.lr_schedule(100, 0.01, 0.9, 100) == pytest.approx(0.009)


class TestTrainLoop:
    def test_train_writes_checkpoint_and_log(self, tiny_env, tmp_path):
        out = tmp_path / "run"
        model, ckpt = tr.train(tiny_env, seed=1, out_dir=str(out))
        assert os.path.exists(ckpt)
        lines = open(out / "metrics.csv").read().strip().splitlines()
        assert lines[0] == "epoch,loss,acc,sigma,lr"
        assert len(lines) == 1 + tiny_env["train.epochs"]

    def test_training_deterministic_given_seed(self, tiny_env, tmp_path):
        m1, c1 = tr.train(tiny_env, seed=5, out_dir=str(tmp_path / "a"))
        m2, c2 = tr.train(tiny_env, seed=5, out_dir=str(tmp_path / "b"))
        for (n1, t1), (n2, t2) in zip(m1.named_params(), m2.named_params()):
            assert n1 == n2
            np.testing.assert_array_equal(t1.data, t2.data)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")  # overflow is the point
    def test_divergence_guard(self, tiny_env, tmp_path):
        cfg = tiny_env.with_overrides({"train.lr": "1e6", "train.clip": "0"})
        # huge lr reliably overflows float32 within two epochs
        with pytest.raises(tr.TrainingDiverged):
            tr.train(cfg, seed=1, out_dir=str(tmp_path / "d"))

    def test_single_episode_overfit(self, tiny_env):
        """A memorizable episode reaches perfect accuracy within 200 steps."""
        trace = tr.overfit_single_episode(tiny_env.with_overrides({"train.lr": "0.02"}),
                                          seed=3, steps=200)
        assert max(trace) == 1.0


class TestCheckpoint:
    def test_roundtrip_preserves_values_and_config(self, tiny_env, tmp_path):
        model = SamplerModel(tiny_env, seed=4)
        path = str(tmp_path / "m.ckpt")
        write_checkpoint(path, tiny_env, model.sections())
        cfg2, sections = read_checkpoint(path)
        assert cfg2.values == tiny_env.values
        rebuilt = SamplerModel(cfg2, seed=0)
        rebuilt.load_sections(sections)
        for (n1, t1), (n2, t2) in zip(model.named_params(), rebuilt.named_params()):
            np.testing.assert_array_equal(t1.data, t2.data)

    def test_shape_mismatch_rejected(self, tiny_env, tmp_path):
        model = SamplerModel(tiny_env, seed=4)
        path = str(tmp_path / "m.ckpt")
        write_checkpoint(path, tiny_env, model.sections())
        other = SamplerModel(tiny_env.with_overrides({"head.D": "32"}), seed=0)
        _, sections = read_checkpoint(path)
        with pytest.raises(tc.ShapeError, match="shape mismatch"):
            other.load_sections(sections)

    def test_load_model_rebuilds_from_config_echo(self, tiny_env, tmp_path):
        out = tmp_path / "run"
        _, ckpt = tr.train(tiny_env, seed=1, out_dir=str(out))
        model, cfg = tr.load_model(ckpt)
        assert cfg["selector.T"] == tiny_env["selector.T"]


class TestEvaluate:
    def test_untrained_model_at_chance(self, tiny_env):
        by = ds.load_manifest(tiny_env["data.dir"])
        model = SamplerModel(tiny_env, seed=6)
        mean, ci, per = tr.evaluate(model, by["train"], episodes=60, seed=9)
        assert abs(mean - 0.5) < max(3 * ci, 0.15)  # 2-way chance

    def test_same_seed_identical_accuracy(self, tiny_env):
        by = ds.load_manifest(tiny_env["data.dir"])
        model = SamplerModel(tiny_env, seed=6)
        a = tr.evaluate(model, by["train"], episodes=10, seed=3)
        b = tr.evaluate(model, by["train"], episodes=10, seed=3)
        assert a[0] == b[0]
        np.testing.assert_array_equal(a[2], b[2])

    def test_thread_count_does_not_change_results(self, tiny_env, monkeypatch):
        by = ds.load_manifest(tiny_env["data.dir"])
        model = SamplerModel(tiny_env, seed=6)
        monkeypatch.setenv("SAMPLER_THREADS", "1")
        a = tr.evaluate(model, by["train"], episodes=8, seed=4)
        monkeypatch.setenv("SAMPLER_THREADS", "3")
        b = tr.evaluate(model, by["train"], episodes=8, seed=4)
        np.testing.assert_array_equal(a[2], b[2])

    def test_ci_shrinks_with_episode_count(self, tiny_env):
        by = ds.load_manifest(tiny_env["data.dir"])
        model = SamplerModel(tiny_env, seed=6)
        _, ci_small, _ = tr.evaluate(model, by["train"], episodes=25, seed=5)
        _, ci_big, _ = tr.evaluate(model, by["train"], episodes=100, seed=5)
        # expected ratio 2; sampling noise keeps it loose
        assert ci_big < ci_small * 0.85

    def test_evaluation_does_not_mutate_checkpoint(self, tiny_env):
        by = ds.load_manifest(tiny_env["data.dir"])
        model = SamplerModel(tiny_env, seed=6)
        before = {n: t.data.copy() for n, t in model.named_params()}
        tr.evaluate(model, by["train"], episodes=5, seed=7)
        for n, t in model.named_params():
            np.testing.assert_array_equal(t.data, before[n])


class TestSamplerMetrics:
    def test_truly_random_scores_give_chance_ratio(self, tiny_env):
        """The recall-ratio normalization is calibrated: noise scores -> 1.0."""
        from stsampler import selector
        by = ds.load_manifest(tiny_env["data.dir"])
        m = tiny_env["data.frames"]
        t_sel = tiny_env["selector.T"]
        rng = np.random.default_rng(13)
        ratios = []
        for rec in by["train"] * 50:
            sel = selector.selected_indices(
                selector.hard_topk(rng.uniform(0, 1, m), t_sel))
            event = set(rec.event_frames)
            hit = sum(1 for f in sel if f in event)
            ratios.append((hit / t_sel) / (len(event) / m))
        assert abs(np.mean(ratios) - 1.0) < 3 * np.std(ratios) / np.sqrt(len(ratios))

    def test_metrics_run_on_untrained_model(self, tiny_env):
        by = ds.load_manifest(tiny_env["data.dir"])
        model = SamplerModel(tiny_env, seed=8)
        recall, mass = tr.sampler_metrics(model, by["train"], episodes=40, seed=11)
        assert np.isfinite(recall) and recall > 0
        assert np.isfinite(mass)

    def test_oracle_upper_bound(self, tiny_env):
        """Selecting exactly the event frames yields ratio capped by M/T."""
        by = ds.load_manifest(tiny_env["data.dir"])
        m = tiny_env["data.frames"]
        t_sel = tiny_env["selector.T"]
        rec = by["train"][0]
        event = set(rec.event_frames)
        hit = min(len(event), t_sel)
        ratio = (hit / t_sel) / (len(event) / m)
        assert ratio <= m / len(event) + 1e-9


class TestUniformStride:
    def test_even_coverage(self):
        idx = uniform_stride_indices(16, 8)
        np.testing.assert_array_equal(idx, [1, 3, 5, 7, 9, 11, 13, 15])
        assert len(set(idx)) == 8

    def test_full_when_t_equals_m(self):
        np.testing.assert_array_equal(uniform_stride_indices(4, 4), [0, 1, 2, 3])
