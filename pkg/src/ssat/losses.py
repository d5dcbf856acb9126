"""Training objectives: semantic, makeup (SPL), reconstruction, least-squares GAN."""
from __future__ import annotations

from dataclasses import dataclass, field

from .tensor import ShapeError, Tensor, mean, square, tabs, tensor


def _check_same(*ts: Tensor) -> None:
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise ShapeError(f"loss operands must share a shape, got {sorted(shapes)}")


def l1(a: Tensor, b) -> Tensor:
    """Mean absolute difference."""
    return mean(tabs(a - b))


def semantic_loss(s_t: Tensor, s_r: Tensor, warped_t: Tensor, warped_r: Tensor) -> Tensor:
    """``|s_t - warped_r| + |s_r - warped_t|``, each term mean-reduced.

    ``warped_r`` is the reference parsing carried onto the target grid and
    ``warped_t`` the target parsing carried onto the reference grid.
    """
    _check_same(s_t, warped_r)
    _check_same(s_r, warped_t)
    return l1(warped_r, s_t) + l1(warped_t, s_r)


@dataclass(frozen=True)
class SPLWeights:
    gradient: float = 1.0
    color: float = 1.0


def image_gradients(x: Tensor) -> tuple[Tensor, Tensor]:
    """Forward differences along width and height of ``[C, H, W]``."""
    return x[:, :, 1:] - x[:, :, :-1], x[:, 1:, :] - x[:, :-1, :]


def makeup_spl_loss(generated: Tensor, identity_source: Tensor, color_target: Tensor, weights: SPLWeights = SPLWeights()) -> Tensor:
    """Gradient consistency with ``identity_source`` plus color consistency with ``color_target``."""
    _check_same(generated, identity_source, color_target)
    gx, gy = image_gradients(generated)
    sx, sy = image_gradients(tensor(identity_source))
    grad_term = l1(gx, sx) + l1(gy, sy)
    return weights.gradient * grad_term + weights.color * l1(generated, color_target)


def makeup_loss(y_hat_t, x_t, y_bar_t, x_hat_r, y_r, x_bar_r, weights: SPLWeights = SPLWeights()) -> Tensor:
    return makeup_spl_loss(y_hat_t, x_t, y_bar_t, weights) + makeup_spl_loss(x_hat_r, y_r, x_bar_r, weights)


def reconstruction_loss(x_t, x_self, x_cycle, y_r, y_self, y_cycle) -> Tensor:
    for a, b in ((x_t, x_self), (y_r, y_self), (x_t, x_cycle), (y_r, y_cycle)):
        _check_same(a, b)
    return l1(x_self, x_t) + l1(y_self, y_r) + l1(x_cycle, x_t) + l1(y_cycle, y_r)


def _per_scale(maps, target: float) -> Tensor:
    total = None
    for m in maps:
        term = mean(square(m - target))
        total = term if total is None else total + term
    return total * (1.0 / len(maps))


def adversarial_loss_discriminator(real_logits: list[Tensor], fake_logits: list[Tensor]) -> Tensor:
    """Least-squares loss pushing real maps to 1 and fake maps to 0, averaged over scales."""
    return _per_scale(real_logits, 1.0) + _per_scale(fake_logits, 0.0)


def adversarial_loss_generator(fake_logits: list[Tensor]) -> Tensor:
    return _per_scale(fake_logits, 1.0)


@dataclass(frozen=True)
class LossWeights:
    sem: float = 1.0
    makeup: float = 1.0
    rec: float = 1.0
    adv: float = 1.0

    def __post_init__(self):
        for name in ("sem", "makeup", "rec", "adv"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be nonnegative")


TERMS = ("sem", "makeup", "rec", "adv")


@dataclass
class LossReport:
    terms: dict[str, float]
    total: float
    iteration: int = 0
    extras: dict[str, float] = field(default_factory=dict)

    def to_record(self) -> dict:
        rec = {"iteration": self.iteration}
        rec.update({k: self.terms[k] for k in TERMS})
        rec["total"] = self.total
        rec.update(self.extras)
        return rec


def overall_loss(terms: dict[str, Tensor], weights: LossWeights = LossWeights(), iteration: int = 0) -> tuple[Tensor, LossReport]:
    """Weighted sum of the four objectives; the report keeps raw term values."""
    total = None
    for name in TERMS:
        w = getattr(weights, name)
        if w == 0:
            continue
        part = terms[name] * w
        total = part if total is None else total + part
    if total is None:
        total = Tensor(0.0)
    raw = {k: float(terms[k].item()) for k in TERMS}
    weighted = sum(getattr(weights, k) * raw[k] for k in TERMS)
    return total, LossReport(raw, weighted, iteration)
