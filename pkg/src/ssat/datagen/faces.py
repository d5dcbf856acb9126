"""Parametric synthetic faces with parsing maps and landmarks.

Each face is drawn from a handful of ellipses in a slightly rotated face
frame: head, ears, neck, hair cap, eyes, brows and lips. The parsing map
and the landmarks are computed from the same geometry as the pixels, so
the three always agree. Makeup faces add a saturated lip color, an eye
shadow ring and cheek blush on top of the bare face.
"""
from __future__ import annotations

import colorsys
from dataclasses import dataclass, field

import numpy as np

CLASSES = (
    "background",
    "skin",
    "lip",
    "eye_interior",
    "eyebrow",
    "hair",
    "ear_neck",
    "mouth_interior",
)
BACKGROUND, SKIN, LIP, EYE, BROW, HAIR, EAR_NECK, MOUTH = range(len(CLASSES))
DOMAINS = ("makeup", "non_makeup")

# landmark index layout
OVAL = range(0, 10)
LEFT_EYE = range(10, 13)
RIGHT_EYE = range(13, 16)
LEFT_BROW = range(16, 18)
RIGHT_BROW = range(18, 20)
LIPS = range(20, 24)
ANCHORS = range(24, 32)
N_FACE_POINTS = 24
N_LANDMARKS = 32

# flipped[i] = mirror(original[FLIP_PERM[i]])
FLIP_PERM = np.array(
    list(range(9, -1, -1))
    + [14, 13, 15, 11, 10, 12]
    + [19, 18, 17, 16]
    + [21, 20, 22, 23]
    + [26, 25, 24, 31, 30, 29, 28, 27]
)

# bare lips are the skin tone scaled by these per-channel factors
LIP_TINT_LO = np.array([0.86, 0.62, 0.62])
LIP_TINT_HI = np.array([0.95, 0.72, 0.72])
SKIN_TONE = (0.45, 0.9)
SKIN_RATIO_LO = np.array([1.0, 0.72, 0.58])
SKIN_RATIO_HI = np.array([1.0, 0.80, 0.68])
LIGHT_RANGE = (0.94, 1.06)


@dataclass(frozen=True)
class FaceConfig:
    size: int = 64
    n_classes: int = 8
    min_lip_delta: float = 0.4  # L1 over RGB, in [-1, 1] units
    max_tilt_deg: float = 8.0

    def __post_init__(self):
        if self.size < 16 or self.size % 4:
            raise ValueError("face size must be a multiple of 4 and at least 16")
        if self.n_classes < len(CLASSES):
            raise ValueError(f"need at least {len(CLASSES)} parsing classes")


@dataclass
class ParsedImage:
    """RGB in [-1, 1] as ``[3, H, W]``, one-hot parsing ``[L, H, W]``, landmarks ``[P, 2]`` (x, y)."""

    rgb: np.ndarray
    parsing: np.ndarray
    landmarks: np.ndarray
    domain: str = "non_makeup"
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> tuple[int, int]:
        return self.rgb.shape[1], self.rgb.shape[2]

    @property
    def labels(self) -> np.ndarray:
        return self.parsing.argmax(axis=0)

    def region(self, cls: int) -> np.ndarray:
        return self.parsing[cls] > 0.5

    def copy(self) -> ParsedImage:
        return ParsedImage(self.rgb.copy(), self.parsing.copy(), self.landmarks.copy(), self.domain, dict(self.meta))


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((n_classes, *labels.shape), np.float32)
    np.put_along_axis(out, labels[None].astype(np.int64), 1.0, axis=0)
    return out


def to_unit(rgb01: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] colors to 8 bits, then map to [-1, 1]."""
    q = np.clip(np.round(rgb01 * 255.0), 0, 255)
    return (q / 127.5 - 1.0).astype(np.float32)


def anchor_points(h: int, w: int) -> np.ndarray:
    x1, y1 = w - 1.0, h - 1.0
    xm, ym = x1 / 2.0, y1 / 2.0
    return np.array([[0, 0], [xm, 0], [x1, 0], [x1, ym], [x1, y1], [xm, y1], [0, y1], [0, ym]], dtype=np.float64)


def lip_color_box() -> tuple[np.ndarray, np.ndarray]:
    """Per-channel [lo, hi] of every bare-lip color the sampler can emit, in [0, 1]."""
    lo = SKIN_TONE[0] * SKIN_RATIO_LO * LIP_TINT_LO * LIGHT_RANGE[0]
    hi = SKIN_TONE[1] * SKIN_RATIO_HI * LIP_TINT_HI * LIGHT_RANGE[1]
    return lo, hi


def box_l1_distance(color: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    return float(np.sum(np.maximum(lo - color, 0) + np.maximum(color - hi, 0)))


def _saturated(rng, s_range, v_range) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(rng.uniform(0, 1), rng.uniform(*s_range), rng.uniform(*v_range)))


def sample_makeup_lip(rng, min_delta: float) -> np.ndarray:
    lo, hi = lip_color_box()
    # the box lives in [0, 1]; the configured gap is in [-1, 1] units
    while True:
        c = _saturated(rng, (0.55, 0.95), (0.35, 0.85))
        if all(2.0 * box_l1_distance(c * k, lo, hi) >= min_delta for k in (*LIGHT_RANGE, 1.0)):
            return c


def _ellipse(u, v, cu, cv, ru, rv) -> np.ndarray:
    return ((u - cu) / ru) ** 2 + ((v - cv) / rv) ** 2 <= 1.0


def generate_face(seed: int, config: FaceConfig = FaceConfig(), domain: str = "non_makeup") -> ParsedImage:
    """Render one deterministic face for ``seed``."""
    if domain not in DOMAINS:
        raise ValueError(f"domain must be one of {DOMAINS}")
    rng = np.random.default_rng([seed, DOMAINS.index(domain)])
    s = config.size
    cx = s * (0.5 + rng.uniform(-0.04, 0.04))
    cy = s * (0.5 + rng.uniform(-0.03, 0.03))
    rx = s * rng.uniform(0.27, 0.31)
    ry = s * rng.uniform(0.34, 0.38)
    tilt = np.deg2rad(rng.uniform(-config.max_tilt_deg, config.max_tilt_deg))
    cos_t, sin_t = np.cos(tilt), np.sin(tilt)

    eye_u, eye_v = 0.40 * rx, -0.10 * ry
    ew = rx * rng.uniform(0.17, 0.21)
    eh = ew * rng.uniform(0.42, 0.55)
    brow_v = eye_v - eh - ry * rng.uniform(0.10, 0.14)
    brow_w, brow_h = ew * 1.15, max(1.1, 0.045 * ry)
    mouth_v = ry * rng.uniform(0.45, 0.52)
    mw = rx * rng.uniform(0.34, 0.42)
    mh = ry * rng.uniform(0.12, 0.15)
    mouth_open = rng.uniform(0.0, 0.5) if rng.uniform() < 0.6 else 0.0
    hairline = -ry * rng.uniform(0.45, 0.6)

    ys, xs = np.mgrid[0:s, 0:s].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    u = cos_t * dx + sin_t * dy
    v = -sin_t * dx + cos_t * dy

    face = _ellipse(u, v, 0, 0, rx, ry)
    labels = np.full((s, s), BACKGROUND, np.int64)
    neck = (np.abs(u) < 0.45 * rx) & (v > 0.55 * ry)
    ears = _ellipse(u, v, -rx, 0.0, 0.13 * rx, 0.22 * ry) | _ellipse(u, v, rx, 0.0, 0.13 * rx, 0.22 * ry)
    labels[neck | ears] = EAR_NECK
    hair = _ellipse(u, v, 0, -0.06 * ry, 1.14 * rx, 1.1 * ry) & (v < 0.25 * ry) & (~face | (v < hairline))
    labels[hair] = HAIR
    labels[face & ~(v < hairline)] = SKIN
    for side in (-1, 1):
        labels[_ellipse(u, v, side * eye_u, brow_v, brow_w, brow_h) & face] = BROW
        labels[_ellipse(u, v, side * eye_u, eye_v, ew, eh)] = EYE
    lips = _ellipse(u, v, 0, mouth_v, mw, mh)
    labels[lips] = LIP
    if mouth_open > 0:
        labels[_ellipse(u, v, 0, mouth_v, 0.7 * mw, mouth_open * mh)] = MOUTH

    tone = rng.uniform(*SKIN_TONE)
    skin = tone * rng.uniform(SKIN_RATIO_LO, SKIN_RATIO_HI)
    palette = np.zeros((len(CLASSES), 3))
    palette[BACKGROUND] = rng.uniform(0.15, 0.85) + rng.uniform(-0.08, 0.08, 3)
    palette[SKIN] = skin
    palette[LIP] = skin * rng.uniform(LIP_TINT_LO, LIP_TINT_HI)
    palette[EYE] = (0.92, 0.92, 0.9)
    hair_c = rng.uniform(0.05, 0.35) * np.array([1.0, rng.uniform(0.7, 0.9), rng.uniform(0.5, 0.8)])
    palette[HAIR] = hair_c
    palette[BROW] = np.clip(hair_c * 1.15, 0, 1)
    palette[EAR_NECK] = skin * rng.uniform(0.82, 0.96)
    palette[MOUTH] = (0.32, 0.08, 0.1)
    img = palette[labels]

    # iris
    for side in (-1, 1):
        iris = _ellipse(u, v, side * eye_u, eye_v, 0.85 * eh, 0.85 * eh) & (labels == EYE)
        img[iris] = (0.12, 0.09, 0.08)

    makeup = {}
    if domain == "makeup":
        lip_c = sample_makeup_lip(rng, config.min_lip_delta)
        img[labels == LIP] = lip_c
        shadow_c = _saturated(rng, (0.4, 0.8), (0.35, 0.8))
        blush_c = _saturated(rng, (0.35, 0.7), (0.7, 0.95)) * np.array([1.0, 0.7, 0.75])
        skinmask = labels == SKIN
        for side in (-1, 1):
            ring = _ellipse(u, v, side * eye_u, eye_v - 0.3 * eh, 1.7 * ew, 2.4 * eh) & skinmask
            img[ring] = 0.35 * img[ring] + 0.65 * shadow_c
            blush = _ellipse(u, v, side * 0.52 * rx, 0.22 * ry, 0.2 * rx, 0.14 * ry) & skinmask
            img[blush] = 0.5 * img[blush] + 0.5 * blush_c
        makeup = {"lip": lip_c.tolist(), "shadow": shadow_c.tolist(), "blush": blush_c.tolist()}

    light = 1.0 + 0.06 * (xs / s - 0.5) * rng.choice((-1, 1)) - 0.05 * (ys / s - 0.5)
    light = np.clip(light, *LIGHT_RANGE)
    img = np.clip(img * light[..., None], 0, 1)

    def to_xy(pu, pv):
        return (cx + cos_t * pu - sin_t * pv, cy + sin_t * pu + cos_t * pv)

    pts = []
    for th in np.linspace(np.pi + 0.35, -0.35, 10):
        pts.append(to_xy(rx * np.cos(th), ry * np.sin(th)))
    for side in (-1, 1):
        cu = side * eye_u
        pts += [to_xy(cu - ew, eye_v), to_xy(cu + ew, eye_v), to_xy(cu, eye_v - eh)]
    for side in (-1, 1):
        cu = side * eye_u
        pts += [to_xy(cu - brow_w, brow_v), to_xy(cu + brow_w, brow_v)]
    pts += [to_xy(-mw, mouth_v), to_xy(mw, mouth_v), to_xy(0, mouth_v - mh), to_xy(0, mouth_v + mh)]
    landmarks = np.clip(np.array(pts), 0, s - 1)
    landmarks = np.vstack([landmarks, anchor_points(s, s)])

    return ParsedImage(
        rgb=to_unit(img.transpose(2, 0, 1)),
        parsing=one_hot(labels, config.n_classes),
        landmarks=landmarks,
        domain=domain,
        meta={"seed": int(seed), "makeup": makeup},
    )


def region_mean_color(image: ParsedImage, cls: int) -> np.ndarray:
    mask = image.region(cls)
    if not mask.any():
        raise ValueError(f"class {CLASSES[cls]} is empty")
    return image.rgb[:, mask].mean(axis=1)


def color_l1(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.abs(np.asarray(a) - np.asarray(b)).sum())
