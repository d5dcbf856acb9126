"""Resize / crop / flip / rotate augmentation applied per pair side."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .faces import ANCHORS, BACKGROUND, FLIP_PERM, ParsedImage, anchor_points, one_hot
from .pairs import PseudoPair
from .warp import bilinear_sample, nearest_sample

# 286 / 256 resize ratio, +-30 degree rotation, flip probability 0.5
RESIZE_RATIO = 286 / 256
MAX_ROTATION_DEG = 30.0
FLIP_P = 0.5


def resized_size(size: int) -> int:
    return math.ceil(RESIZE_RATIO * size)


@dataclass(frozen=True)
class AugmentParams:
    size: int
    offset: tuple[int, int]  # crop origin (x, y) inside the resized image
    flip: bool
    angle_deg: float

    @classmethod
    def sample(cls, rng: np.random.Generator, size: int) -> AugmentParams:
        big = resized_size(size)
        ox, oy = (int(v) for v in rng.integers(0, big - size + 1, size=2))
        flip = bool(rng.uniform() < FLIP_P)
        angle = float(rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG))
        return cls(size, (ox, oy), flip, angle)

    def forward(self, pts: np.ndarray) -> np.ndarray:
        """Source pixel coordinates ``[N, 2]`` to augmented coordinates."""
        s = self.size
        k = resized_size(s) / s
        p = (np.asarray(pts, np.float64) + 0.5) * k - 0.5
        p = p - np.array(self.offset, np.float64)
        if self.flip:
            p[:, 0] = (s - 1) - p[:, 0]
        c = (s - 1) / 2.0
        t = math.radians(self.angle_deg)
        rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
        return (p - c) @ rot.T + c

    def inverse(self, pts: np.ndarray) -> np.ndarray:
        s = self.size
        k = resized_size(s) / s
        c = (s - 1) / 2.0
        t = math.radians(self.angle_deg)
        rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
        p = (np.asarray(pts, np.float64) - c) @ rot + c
        if self.flip:
            p[:, 0] = (s - 1) - p[:, 0]
        p = p + np.array(self.offset, np.float64)
        return (p + 0.5) / k - 0.5


def _grid(size: int) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size]
    return np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)


def background_color(rgb: np.ndarray, parsing: np.ndarray) -> np.ndarray:
    mask = parsing[BACKGROUND] > 0.5
    if not mask.any():
        return np.zeros(rgb.shape[0], rgb.dtype)
    return rgb[:, mask].mean(axis=1)


def _apply_rgb(rgb, params, src, fill):
    out = bilinear_sample(rgb, src[:, 0], src[:, 1], fill=fill)
    return out.reshape(rgb.shape[0], params.size, params.size).astype(np.float32)


def augment_image(image: ParsedImage, params: AugmentParams, extra: list[np.ndarray] = ()) -> tuple[ParsedImage, list[np.ndarray]]:
    """Apply one geometric transform to an image, its parsing, landmarks and any co-registered RGB maps."""
    s = params.size
    if image.size != (s, s):
        raise ValueError(f"augment expects {s}x{s} inputs, got {image.size}")
    src = params.inverse(_grid(s))
    rgb = _apply_rgb(image.rgb, params, src, background_color(image.rgb, image.parsing))
    labels = image.parsing.argmax(axis=0)[None].astype(np.float64)
    lab = nearest_sample(labels, src[:, 0], src[:, 1], fill=[BACKGROUND]).reshape(s, s).astype(np.int64)
    parsing = one_hot(lab, image.parsing.shape[0])
    extras = [_apply_rgb(e, params, src, background_color(e, image.parsing)) for e in extra]

    lm = params.forward(image.landmarks)
    if params.flip:
        lm = lm[FLIP_PERM]
    lm = np.clip(lm, 0, s - 1)
    lm[list(ANCHORS)] = anchor_points(s, s)
    out = ParsedImage(rgb, parsing, lm, image.domain, dict(image.meta))
    return out, extras


def augment(pair: PseudoPair, rng: np.random.Generator) -> PseudoPair:
    """Independent random transform per side; each side's ground truth follows its image."""
    s = pair.target.size[0]
    pt = AugmentParams.sample(rng, s)
    pr = AugmentParams.sample(rng, s)
    target, (y_bar_t,) = augment_image(pair.target, pt, [pair.y_bar_t])
    reference, (x_bar_r,) = augment_image(pair.reference, pr, [pair.x_bar_r])
    return PseudoPair(target, reference, y_bar_t, x_bar_r)
