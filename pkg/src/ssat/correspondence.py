"""Feature fusion and symmetric semantic correspondence.

One cosine-similarity matrix between the fused features of two images
drives every warp: its rows carry reference content onto the target
grid, its transpose carries target content onto the reference grid.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .layers import ConvBlock, Module, NetWidths
from .tensor import (
    ShapeError,
    Tensor,
    avg_pool,
    clamp_min,
    concat,
    matmul,
    mean,
    scaled_softmax_rows,
    sqrt,
    square,
    transpose,
    tsum,
    upsample_nearest,
)

log = logging.getLogger(__name__)

SIGMA = 100.0
NORM_FLOOR = 1e-8
DIRECTIONS = ("ref_to_target", "target_to_ref")


class FeatureFusion(Module):
    """Two high-level conv blocks over ``[C^M; S^M]`` (stride 2, then 1)."""

    def __init__(self, widths: NetWidths, rng):
        f1, f2 = widths.ff
        self.blocks = [
            ConvBlock(widths.ff_in, f1, 3, 1, 2, rng),
            ConvBlock(f1, f2, 3, 1, 1, rng),
        ]

    def __call__(self, x: Tensor) -> list[Tensor]:
        outs = []
        for block in self.blocks:
            x = block(x)
            outs.append(x)
        return outs


@dataclass
class FusedFeatures:
    tensor: Tensor
    source: str = "target"

    @property
    def channels(self) -> int:
        return self.tensor.shape[0]

    @property
    def spatial(self) -> tuple[int, int]:
        return self.tensor.shape[1], self.tensor.shape[2]


def _resample_to(x: Tensor, size: int) -> Tensor:
    h = x.shape[1]
    if h == size:
        return x
    if h > size:
        return avg_pool(x, h // size)
    return upsample_nearest(x, size // h)


def feature_fusion(content_pyramid: list[Tensor], semantic_feat: Tensor, ff: FeatureFusion, source: str = "target") -> FusedFeatures:
    """Concatenate every content level, the last semantic level and both FF maps at 1/4 scale."""
    c_last = content_pyramid[-1]
    if c_last.shape[1:] != semantic_feat.shape[1:]:
        raise ShapeError(f"content {c_last.shape} and semantic {semantic_feat.shape} features are misaligned")
    size = semantic_feat.shape[1]
    high = ff(concat([c_last, semantic_feat], axis=0))
    parts = [_resample_to(c, size) for c in content_pyramid]
    parts.append(semantic_feat)
    parts.extend(_resample_to(f, size) for f in high)
    for p in parts:
        if p.shape[1:] != semantic_feat.shape[1:]:
            raise RuntimeError(f"resampled map {p.shape} is not aligned to {semantic_feat.shape}")
    return FusedFeatures(concat(parts, axis=0), source)


@dataclass
class CorrelationMatrix:
    """Cosine similarities ``[hw_target, hw_reference]`` between feature columns."""

    values: Tensor
    target_hw: tuple[int, int]
    reference_hw: tuple[int, int]
    sigma: float = SIGMA

    @property
    def T(self) -> CorrelationMatrix:
        return CorrelationMatrix(transpose(self.values), self.reference_hw, self.target_hw, self.sigma)


def _unit_columns(feat: Tensor) -> Tensor:
    d, h, w = feat.shape
    cols = feat.reshape(d, h * w)
    centred = cols - mean(cols, axis=1, keepdims=True)
    norms = sqrt(tsum(square(centred), axis=0, keepdims=True))
    if (norms.data < NORM_FLOOR).any():
        log.warning("zero-norm centred feature vector; clamping norm to %g", NORM_FLOOR)
    return centred / clamp_min(norms, NORM_FLOOR)


def correlation(x_f: FusedFeatures | Tensor, y_f: FusedFeatures | Tensor, sigma: float = SIGMA) -> CorrelationMatrix:
    """``a[i, j] = cos(x_i - mean, y_j - mean)`` with channel means over positions."""
    x = x_f.tensor if isinstance(x_f, FusedFeatures) else x_f
    y = y_f.tensor if isinstance(y_f, FusedFeatures) else y_f
    if x.shape[0] != y.shape[0] or x.shape[1] * x.shape[2] != y.shape[1] * y.shape[2]:
        raise ShapeError(f"cannot correlate features {x.shape} and {y.shape}")
    a = matmul(transpose(_unit_columns(x)), _unit_columns(y))
    return CorrelationMatrix(a, (x.shape[1], x.shape[2]), (y.shape[1], y.shape[2]), sigma)


def warp_weights(a: CorrelationMatrix, direction: str = "ref_to_target") -> Tensor:
    if direction == "ref_to_target":
        return scaled_softmax_rows(a.values, a.sigma)
    if direction == "target_to_ref":
        return scaled_softmax_rows(transpose(a.values), a.sigma)
    raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")


def apply_weights(weights: Tensor, values: Tensor, out_hw: tuple[int, int]) -> Tensor:
    c, h, w = values.shape
    if weights.shape[1] != h * w:
        raise ShapeError(f"warp weights {weights.shape} do not match values {values.shape}")
    out = matmul(values.reshape(c, h * w), transpose(weights))
    return out.reshape(c, *out_hw)


def soft_warp(a: CorrelationMatrix, values: Tensor, direction: str = "ref_to_target") -> Tensor:
    """Each output location is a softmax-weighted average of the source locations.

    ``ref_to_target`` moves reference-grid values onto the target grid
    using rows of ``a``; ``target_to_ref`` uses the transpose.
    """
    src_hw, dst_hw = (a.reference_hw, a.target_hw) if direction == "ref_to_target" else (a.target_hw, a.reference_hw)
    if direction in DIRECTIONS and tuple(values.shape[1:]) != tuple(src_hw):
        raise ShapeError(f"{direction} expects values on a {src_hw} grid, got {values.shape}")
    return apply_weights(warp_weights(a, direction), values, dst_hw)


@dataclass
class SSCFTOutputs:
    warped_ref_makeup: Tensor  # reference makeup on the target grid
    warped_target_makeup: Tensor  # target makeup on the reference grid
    warped_ref_parsing: Tensor | None
    warped_target_parsing: Tensor | None
    corr: CorrelationMatrix


def sscft(x_f, y_f, x_m: Tensor, y_m: Tensor, s_t: Tensor | None = None, s_r: Tensor | None = None, sigma: float = SIGMA) -> SSCFTOutputs:
    """Warp makeup features (and parsings) in both directions from one correlation."""
    a = correlation(x_f, y_f, sigma)
    w_rt = warp_weights(a, "ref_to_target")
    w_tr = warp_weights(a, "target_to_ref")
    ht, hr = a.target_hw, a.reference_hw
    return SSCFTOutputs(
        warped_ref_makeup=apply_weights(w_rt, y_m, ht),
        warped_target_makeup=apply_weights(w_tr, x_m, hr),
        warped_ref_parsing=None if s_r is None else apply_weights(w_rt, s_r, ht),
        warped_target_parsing=None if s_t is None else apply_weights(w_tr, s_t, hr),
        corr=a,
    )


def correspondence_visualization(a: CorrelationMatrix, reference_rgb: np.ndarray) -> np.ndarray:
    """Reference image re-assembled on the target grid by the soft warp.

    ``reference_rgb`` is ``[3, H, W]``; it is average-pooled to the
    correlation grid, warped, then nearest-upsampled back to ``H x W``.
    """
    h, w = a.reference_hw
    factor = reference_rgb.shape[1] // h
    small = Tensor(reference_rgb.astype(np.float32)).data.reshape(3, h, factor, w, factor).mean(axis=(2, 4))
    weights = scaled_softmax_rows(Tensor(a.values.data), a.sigma).data
    th, tw = a.target_hw
    warped = (small.reshape(3, h * w) @ weights.T).reshape(3, th, tw)
    return np.repeat(np.repeat(warped, factor, axis=1), factor, axis=2)
