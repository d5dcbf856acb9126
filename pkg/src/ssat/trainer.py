"""Optimization: learning-rate schedule, Adam, one D-then-G iteration, the training loop."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import checkpoint
from .datagen.augment import augment
from .datagen.pairs import PseudoPair, pair_seed
from .layers import NetWidths
from .losses import (
    LossReport,
    LossWeights,
    adversarial_loss_discriminator,
    adversarial_loss_generator,
    makeup_loss,
    overall_loss,
    reconstruction_loss,
    semantic_loss,
)
from .network import SSATModel
from .tensor import NonFiniteError, Parameter, backward, tensor

log = logging.getLogger(__name__)

PRESETS = ("paper", "desk")


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run.

    Args:
        preset: ``"paper"``, ``"desk"`` or ``"custom"``.
        total_iterations: Number of optimizer iterations.
        lr_initial: Learning rate before the decay starts.
        decay_start_fraction: Fraction of the run after which the rate
            decays linearly to zero.
        checkpoint_every: Cadence in iterations; 0 writes only the final one.
        clip_norm: Optional global gradient-norm clip per network.
    """

    preset: str = "desk"
    total_iterations: int = 2000
    lr_initial: float = 2e-4
    decay_start_fraction: float = 0.5
    batch_size: int = 1
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 500
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float | None = None
    augment: bool = True
    widths: NetWidths = field(default_factory=NetWidths.desk)
    image_size: int = 64
    sigma: float = 100.0
    n_bare: int = 30
    n_makeup: int = 30

    def __post_init__(self):
        if not 0.0 < self.decay_start_fraction <= 1.0:
            raise ValueError("decay_start_fraction must lie in (0, 1]")
        if self.total_iterations < 1:
            raise ValueError("total_iterations must be positive")
        if self.batch_size != 1:
            raise ValueError("only batch size 1 is supported")
        if self.lr_initial < 0:
            raise ValueError("lr_initial must be nonnegative")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")

    @classmethod
    def paper(cls, **overrides) -> TrainConfig:
        base = cls(
            preset="paper",
            total_iterations=300_000,
            checkpoint_every=10_000,
            widths=NetWidths.paper(),
            image_size=256,
            n_bare=300,
            n_makeup=300,
        )
        return replace(base, **overrides)

    @classmethod
    def desk(cls, **overrides) -> TrainConfig:
        return replace(cls(), **overrides)

    @property
    def decay_start(self) -> int:
        return int(round(self.total_iterations * self.decay_start_fraction))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_weights"] = asdict(self.loss_weights)
        d["widths"] = self.widths.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        preset = d.pop("preset", "desk")
        base = cls.paper() if preset == "paper" else cls()
        if "loss_weights" in d:
            d["loss_weights"] = LossWeights(**d["loss_weights"])
        if "widths" in d:
            d["widths"] = NetWidths(**d["widths"])
        unknown = set(d) - set(base.to_dict())
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return replace(base, preset=preset, **d)

    @classmethod
    def from_json(cls, path) -> TrainConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))


def lr_schedule(iteration: int, config: TrainConfig) -> float:
    """Constant, then linear decay to zero at the last iteration."""
    total = config.total_iterations
    if not 0 <= iteration <= total:
        raise ValueError(f"iteration {iteration} outside [0, {total}]")
    start = config.decay_start
    if iteration <= start or start >= total:
        return config.lr_initial
    return config.lr_initial * (total - iteration) / (total - start)


class NonFiniteGradientError(NonFiniteError):
    """A parameter gradient contained NaN or inf."""


@dataclass
class AdamState:
    """Per-parameter first and second moments (float32) plus the step count."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8

    def arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.m.{k}": a for k, a in self.m.items()}
        out.update({f"{prefix}.v.{k}": a for k, a in self.v.items()})
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray], prefix: str) -> None:
        pm, pv = f"{prefix}.m.", f"{prefix}.v."
        self.m = {k[len(pm):]: a.copy() for k, a in arrays.items() if k.startswith(pm)}
        self.v = {k[len(pv):]: a.copy() for k, a in arrays.items() if k.startswith(pv)}


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads if g is not None))


def adam_step(params: dict[str, Parameter], state: AdamState, lr: float, iteration: int | None = None, clip_norm: float | None = None) -> None:
    """Bias-corrected Adam update of every parameter; missing grads count as zero."""
    grads = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.isfinite(g).all():
            where = f" at iteration {iteration}" if iteration is not None else ""
            raise NonFiniteGradientError(f"non-finite gradient in {name}{where}")
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        grads[name] = g.astype(np.float32, copy=False)
    if clip_norm is not None:
        norm = global_norm(grads.values())
        if norm > clip_norm:
            scale = np.float32(clip_norm / norm)
            grads = {k: g * scale for k, g in grads.items()}
    state.step += 1
    b1, b2 = np.float32(state.beta1), np.float32(state.beta2)
    c1 = np.float32(1.0 - state.beta1**state.step)
    c2 = np.float32(1.0 - state.beta2**state.step)
    lr32, eps = np.float32(lr), np.float32(state.eps)
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data = p.data - lr32 * (m / c1) / (np.sqrt(v / c2) + eps)


@dataclass
class Optimizers:
    g: AdamState
    d: AdamState

    @classmethod
    def for_config(cls, config: TrainConfig) -> Optimizers:
        kw = dict(beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
        return cls(AdamState(**kw), AdamState(**kw))


def generator_terms(model: SSATModel, pair: PseudoPair) -> tuple[dict, object]:
    """The four generator objectives for one pair (adversarial term left to the caller)."""
    t, r = pair.target, pair.reference
    o = model.forward_transfer(t.rgb, t.parsing, r.rgb, r.parsing, self_rec=True, cycle=True)
    x_t, y_r = tensor(t.rgb), tensor(r.rgb)
    terms = {
        "sem": semantic_loss(o.s_t_small, o.s_r_small, o.s_hat_r, o.s_hat_t),
        "makeup": makeup_loss(o.y_hat_t, x_t, tensor(pair.y_bar_t), o.x_hat_r, y_r, tensor(pair.x_bar_r)),
        "rec": reconstruction_loss(x_t, o.x_self, o.x_cycle, y_r, o.y_self, o.y_cycle),
    }
    return terms, o


def train_iteration(model: SSATModel, pair: PseudoPair, config: TrainConfig, opts: Optimizers, iteration: int = 0) -> LossReport:
    """One discriminator step on detached fakes, then one generator step."""
    lr = lr_schedule(iteration, config)
    t, r = pair.target, pair.reference
    d_t, d_r = model.D.for_domain(t.domain), model.D.for_domain(r.domain)

    model.D.set_requires_grad(False)
    model.G.set_requires_grad(True)
    model.G.zero_grad()
    terms, o = generator_terms(model, pair)

    # x_hat_r carries the target's look, y_hat_t the reference's
    model.D.set_requires_grad(True)
    model.D.zero_grad()
    d_loss = adversarial_loss_discriminator(d_t(tensor(t.rgb)), d_t(o.x_hat_r.detach()))
    d_loss = d_loss + adversarial_loss_discriminator(d_r(tensor(r.rgb)), d_r(o.y_hat_t.detach()))
    backward(d_loss)
    adam_step(model.D.named_parameters(), opts.d, lr, iteration, config.clip_norm)
    model.D.set_requires_grad(False)

    terms["adv"] = adversarial_loss_generator(d_t(o.x_hat_r)) + adversarial_loss_generator(d_r(o.y_hat_t))
    total, report = overall_loss(terms, config.loss_weights, iteration)
    backward(total)
    adam_step(model.G.named_parameters(), opts.g, lr, iteration, config.clip_norm)
    report.extras = {"d_loss": float(d_loss.item()), "lr": lr}
    return report


# -- persistence -------------------------------------------------------------


def save_training_state(path, model: SSATModel, opts: Optimizers, config: TrainConfig, next_iteration: int) -> None:
    arrays = {f"G.{k}": p.data for k, p in model.G.named_parameters().items()}
    arrays.update({f"D.{k}": p.data for k, p in model.D.named_parameters().items()})
    arrays.update(opts.g.arrays("opt_g"))
    arrays.update(opts.d.arrays("opt_d"))
    meta = {
        "model": model.config(),
        "train": config.to_dict(),
        "next_iteration": next_iteration,
        "opt_g_step": opts.g.step,
        "opt_d_step": opts.d.step,
    }
    checkpoint.save(path, meta, arrays)


def load_model(path) -> tuple[SSATModel, checkpoint.Checkpoint]:
    ck = checkpoint.load(path)
    model = SSATModel.from_config(ck.config["model"])
    checkpoint.load_into(model.G, ck.arrays, "G.")
    checkpoint.load_into(model.D, ck.arrays, "D.")
    return model, ck


def load_training_state(path) -> tuple[SSATModel, Optimizers, TrainConfig, int]:
    model, ck = load_model(path)
    config = TrainConfig.from_dict(ck.config["train"])
    opts = Optimizers.for_config(config)
    opts.g.load_arrays(ck.arrays, "opt_g")
    opts.d.load_arrays(ck.arrays, "opt_d")
    opts.g.step = ck.config["opt_g_step"]
    opts.d.step = ck.config["opt_d_step"]
    return model, opts, config, ck.config["next_iteration"]


# -- loop --------------------------------------------------------------------


def iteration_sample(dataset, config: TrainConfig, iteration: int) -> PseudoPair:
    """Pair and augmentation for one iteration, a pure function of seed and iteration."""
    rng = np.random.default_rng(pair_seed(config.seed, 1, iteration))
    pair = dataset[int(rng.integers(len(dataset)))]
    return augment(pair, rng) if config.augment else pair


def _record_line(report: LossReport) -> str:
    return json.dumps(report.to_record(), sort_keys=False) + "\n"


def train_loop(
    model: SSATModel,
    dataset,
    config: TrainConfig,
    out_dir,
    opts: Optimizers | None = None,
    start_iteration: int = 0,
    stop_iteration: int | None = None,
    progress_every: int = 100,
) -> Path:
    """Run iterations ``start_iteration .. stop_iteration - 1``, logging and checkpointing.

    The log ``train_log.ndjson`` gets one JSON record per iteration; on a
    resumed run lines are appended after truncating anything past the
    resume point. Returns the final checkpoint path.
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    opts = opts or Optimizers.for_config(config)
    stop = config.total_iterations if stop_iteration is None else stop_iteration
    log_path = out_dir / "train_log.ndjson"
    _truncate_log(log_path, start_iteration)
    t0 = time.perf_counter()
    with open(log_path, "a", encoding="utf-8") as fh:
        for it in range(start_iteration, stop):
            report = train_iteration(model, iteration_sample(dataset, config, it), config, opts, it)
            fh.write(_record_line(report))
            done = it + 1
            if config.checkpoint_every and done % config.checkpoint_every == 0 and done < stop:
                fh.flush()
                save_training_state(out_dir / f"ckpt_{done:07d}.ssat", model, opts, config, done)
            if progress_every and done % progress_every == 0:
                rate = (time.perf_counter() - t0) / (done - start_iteration)
                log.info("iteration %d/%d total %.4f (%.2f s/it)", done, stop, report.total, rate)
    final = out_dir / "final.ssat"
    save_training_state(final, model, opts, config, stop)
    return final


def _truncate_log(path: Path, keep: int) -> None:
    if not path.exists():
        return
    if keep == 0:
        path.unlink()
        return
    lines = path.read_text(encoding="utf-8").splitlines(keepends=True)
    path.write_text("".join(lines[:keep]), encoding="utf-8")


def read_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]


def window_mean(records: list[dict], key: str, start: int, stop: int) -> float:
    vals = [r[key] for r in records if start <= r["iteration"] < stop]
    if not vals:
        raise ValueError(f"no records in [{start}, {stop})")
    return float(np.mean(vals))

