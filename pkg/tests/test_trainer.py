import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssat import checkpoint
from ssat.checkpoint import CheckpointError
from ssat.datagen.pairs import FaceBank, SyntheticPairs
from ssat.layers import NetWidths
from ssat.losses import LossWeights
from ssat.network import SSATModel
from ssat.tensor import Parameter
from ssat.trainer import (
    AdamState,
    NonFiniteGradientError,
    Optimizers,
    TrainConfig,
    adam_step,
    load_model,
    load_training_state,
    lr_schedule,
    read_log,
    train_iteration,
    train_loop,
    window_mean,
)

TINY = NetWidths(base=4, semantic=2)


def tiny_config(**kw):
    base = dict(widths=TINY, total_iterations=6, checkpoint_every=3, n_bare=2, n_makeup=2, seed=5)
    base.update(kw)
    return TrainConfig.desk(**base)


def tiny_data(config):
    return SyntheticPairs(FaceBank(config.n_bare, config.n_makeup, config.seed))


class TestSchedule:
    def test_paper_values(self):
        cfg = TrainConfig.paper()
        assert lr_schedule(0, cfg) == 2e-4
        assert lr_schedule(150_000, cfg) == 2e-4
        assert lr_schedule(225_000, cfg) == pytest.approx(1e-4, abs=1e-12)
        assert lr_schedule(300_000, cfg) == 0.0

    def test_desk_decay_start(self):
        cfg = TrainConfig.desk()
        assert cfg.total_iterations == 2000 and cfg.decay_start == 1000
        assert lr_schedule(1000, cfg) == 2e-4 and lr_schedule(1001, cfg) < 2e-4

    @given(st.integers(1, 500), st.floats(0.01, 1.0))
    def test_continuous_non_increasing(self, total, frac):
        cfg = TrainConfig.desk(total_iterations=total, decay_start_fraction=frac)
        lrs = np.array([lr_schedule(i, cfg) for i in range(total + 1)])
        assert np.all(np.diff(lrs) <= 0)
        assert lrs[-1] == 0 or cfg.decay_start >= total
        # largest jump is one decay step
        step = cfg.lr_initial / max(total - cfg.decay_start, 1)
        assert np.all(np.abs(np.diff(lrs)) <= step + 1e-15)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            lr_schedule(2001, TrainConfig.desk())


def _scalar_param(value=0.0, grad=None):
    p = Parameter(np.array([value], np.float32))
    p.grad = None if grad is None else np.array([grad], np.float32)
    return {"w": p}


class TestAdam:
    def test_first_step_is_minus_lr(self):
        params = _scalar_param(1.0, 1.0)
        adam_step(params, AdamState(), 0.01)
        # m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
        assert params["w"].data[0] == pytest.approx(1.0 - 0.01 / (1 + 1e-8), abs=1e-7)

    def test_repeated_unit_grad_keeps_unit_steps(self):
        params = _scalar_param(0.0)
        state = AdamState()
        for _ in range(5):
            params["w"].grad = np.ones(1, np.float32)
            adam_step(params, state, 0.1)
        assert params["w"].data[0] == pytest.approx(-0.5, abs=1e-5)
        assert state.step == 5

    def test_zero_grads_and_zero_lr(self):
        params = _scalar_param(3.0)
        state = AdamState()
        adam_step(params, state, 0.1)
        assert params["w"].data[0] == 3.0 and state.step == 1
        params["w"].grad = np.ones(1, np.float32)
        adam_step(params, state, 0.0)
        assert params["w"].data[0] == 3.0

    def test_moment_shapes(self):
        p = Parameter(np.zeros((2, 3), np.float32))
        p.grad = np.ones((2, 3), np.float32)
        state = AdamState()
        adam_step({"p": p}, state, 0.1)
        assert state.m["p"].shape == (2, 3) and state.v["p"].shape == (2, 3)

    def test_non_finite_grad(self):
        params = _scalar_param(0.0, np.nan)
        with pytest.raises(NonFiniteGradientError, match="iteration 7"):
            adam_step(params, AdamState(), 0.1, iteration=7)

    def test_clip(self):
        params = _scalar_param(0.0, 100.0)
        state = AdamState()
        adam_step(params, state, 0.1, clip_norm=1.0)
        assert state.m["w"][0] == pytest.approx(0.5)


class TestConfig:
    def test_paper_preset(self):
        cfg = TrainConfig.paper()
        assert (cfg.total_iterations, cfg.lr_initial, cfg.decay_start_fraction, cfg.batch_size) == (300_000, 2e-4, 0.5, 1)
        assert (cfg.beta1, cfg.beta2) == (0.5, 0.999)
        assert cfg.loss_weights == LossWeights(1.0, 1.0, 1.0, 1.0)

    @pytest.mark.parametrize("preset", ["paper", "desk"])
    def test_dict_roundtrip(self, preset):
        cfg = getattr(TrainConfig, preset)()
        assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    def test_shipped_configs(self):
        from pathlib import Path

        root = Path(__file__).resolve().parents[1] / "configs"
        assert TrainConfig.from_json(root / "paper.json") == TrainConfig.paper()
        assert TrainConfig.from_json(root / "desk.json") == TrainConfig.desk()

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown"):
            TrainConfig.from_dict({"lr": 1.0})

    @pytest.mark.parametrize("kw", [{"decay_start_fraction": 0.0}, {"batch_size": 2}, {"total_iterations": 0}, {"clip_norm": -1.0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig.desk(**kw)


class TestIteration:
    def test_report_and_two_steps(self):
        cfg = tiny_config()
        model = SSATModel(cfg.widths, seed=0)
        opts = Optimizers.for_config(cfg)
        report = train_iteration(model, tiny_data(cfg)[0], cfg, opts)
        assert opts.g.step == 1 and opts.d.step == 1
        rec = report.to_record()
        assert rec["total"] == pytest.approx(rec["sem"] + rec["makeup"] + rec["rec"] + rec["adv"], abs=1e-6)

    def test_descent_without_adversary(self):
        cfg = tiny_config(loss_weights=LossWeights(1.0, 1.0, 1.0, 0.0), lr_initial=1e-4)
        model = SSATModel(cfg.widths, seed=0)
        opts = Optimizers.for_config(cfg)
        pair = tiny_data(cfg)[1]
        first = train_iteration(model, pair, cfg, opts).total
        second = train_iteration(model, pair, cfg, opts).total
        assert second <= first

    def test_zero_lr_changes_nothing(self):
        cfg = tiny_config(lr_initial=0.0)
        model = SSATModel(cfg.widths, seed=0)
        before = {k: p.data.copy() for k, p in model.named_parameters().items()}
        train_iteration(model, tiny_data(cfg)[0], cfg, Optimizers.for_config(cfg))
        for k, p in model.named_parameters().items():
            np.testing.assert_array_equal(p.data, before[k])


@pytest.fixture(scope="module")
def straight_run(tmp_path_factory):
    cfg = tiny_config()
    out = tmp_path_factory.mktemp("straight")
    final = train_loop(SSATModel(cfg.widths, seed=cfg.seed), tiny_data(cfg), cfg, out, progress_every=0)
    return cfg, out, final


class TestLoop:
    def test_outputs(self, straight_run):
        cfg, out, final = straight_run
        recs = read_log(out / "train_log.ndjson")
        assert [r["iteration"] for r in recs] == list(range(6))
        assert (out / "ckpt_0000003.ssat").exists() and final.exists()
        assert window_mean(recs, "total", 0, 6) > 0
        with pytest.raises(ValueError):
            window_mean(recs, "total", 10, 20)

    def test_deterministic(self, straight_run, tmp_path):
        cfg, out, final = straight_run
        again = train_loop(SSATModel(cfg.widths, seed=cfg.seed), tiny_data(cfg), cfg, tmp_path, progress_every=0)
        assert again.read_bytes() == final.read_bytes()
        assert (tmp_path / "train_log.ndjson").read_bytes() == (out / "train_log.ndjson").read_bytes()

    def test_resume_matches(self, straight_run, tmp_path):
        cfg, out, final = straight_run
        model, opts, cfg2, start = load_training_state(out / "ckpt_0000003.ssat")
        assert start == 3 and cfg2 == cfg
        # resume into a copy of the log truncated at the checkpoint
        lines = (out / "train_log.ndjson").read_bytes().splitlines(keepends=True)
        (tmp_path / "train_log.ndjson").write_bytes(b"".join(lines))
        resumed = train_loop(model, tiny_data(cfg), cfg, tmp_path, opts, start_iteration=start, progress_every=0)
        assert resumed.read_bytes() == final.read_bytes()
        assert (tmp_path / "train_log.ndjson").read_bytes() == (out / "train_log.ndjson").read_bytes()

    def test_empty_dataset(self, tmp_path):
        cfg = tiny_config()
        with pytest.raises(ValueError):
            train_loop(SSATModel(cfg.widths), [], cfg, tmp_path)


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path, rng):
        arrays = {"a": rng.normal(size=(3, 4)).astype(np.float32), "b.c": np.float32([np.pi])}
        checkpoint.save(tmp_path / "x.ssat", {"k": [1, 2]}, arrays)
        ck = checkpoint.load(tmp_path / "x.ssat")
        assert ck.config == {"k": [1, 2]}
        for k, v in arrays.items():
            assert ck.arrays[k].tobytes() == v.tobytes()

    def test_layout(self, tmp_path):
        checkpoint.save(tmp_path / "x.ssat", {}, {"w": np.float32([[1.0, 2.0]])})
        data = (tmp_path / "x.ssat").read_bytes()
        expected = b"SSAT1" + (2).to_bytes(4, "little") + b"{}" + (1).to_bytes(4, "little")
        expected += (1).to_bytes(2, "little") + b"w" + bytes([2]) + (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
        expected += np.float32([1.0, 2.0]).tobytes()
        assert data == expected

    def test_model_roundtrip(self, straight_run):
        cfg, out, final = straight_run
        model, _ = load_model(final)
        ck = checkpoint.load(final)
        for k, p in model.G.named_parameters().items():
            assert p.data.tobytes() == ck.arrays["G." + k].tobytes()

    def test_optimizer_state_roundtrip(self, straight_run, tmp_path):
        cfg, out, final = straight_run
        model, opts, _, nxt = load_training_state(final)
        from ssat.trainer import save_training_state

        save_training_state(tmp_path / "again.ssat", model, opts, cfg, nxt)
        assert (tmp_path / "again.ssat").read_bytes() == final.read_bytes()

    @pytest.mark.parametrize("mutate", [lambda b: b"XXXX1" + b[5:], lambda b: b[:-3], lambda b: b + b"\0", lambda b: b[:9]])
    def test_corruption(self, tmp_path, mutate):
        checkpoint.save(tmp_path / "x.ssat", {"a": 1}, {"w": np.zeros(4, np.float32)})
        (tmp_path / "x.ssat").write_bytes(mutate((tmp_path / "x.ssat").read_bytes()))
        with pytest.raises(CheckpointError):
            checkpoint.load(tmp_path / "x.ssat")

    def test_float64_rejected(self, tmp_path):
        with pytest.raises(CheckpointError):
            checkpoint.save(tmp_path / "x.ssat", {}, {"w": np.zeros(2)})

    def test_shape_mismatch(self, tmp_path):
        model = SSATModel(TINY)
        arrays = {k: np.zeros(1, np.float32) for k in model.G.named_parameters()}
        with pytest.raises(CheckpointError):
            checkpoint.load_into(model.G, arrays)
        with pytest.raises(CheckpointError):
            checkpoint.load_into(model.G, {})
