"""The full transfer/removal network: encoders, fusion, correspondence, decoder, critics.

A forward pass encodes both faces, fuses their features, builds a single
correlation matrix and decodes two results from it: the target wearing the
reference makeup and the reference with the target's (bare) look.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .correspondence import SIGMA, CorrelationMatrix, FeatureFusion, FusedFeatures, feature_fusion, sscft
from .datagen.faces import BROW, EYE, LIP, SKIN
from .layers import Decoder, Discriminator, EncoderStack, Module, NetWidths, check_one_hot
from .tensor import ShapeError, Tensor, tensor

DOWNSAMPLE = 4
REGIONS = ("Lip", "Eye", "Face")
EYE_RING_PX = 2


class ContractError(ValueError):
    """Raised when caller-supplied arguments violate an operation's contract."""


def downsample_parsing(parsing: np.ndarray, factor: int = DOWNSAMPLE) -> np.ndarray:
    """Class-majority vote over ``factor x factor`` cells, returned one-hot.

    Ties go to the lowest class index.
    """
    n, h, w = parsing.shape
    if h % factor or w % factor:
        raise ShapeError(f"parsing size {h}x{w} is not divisible by {factor}")
    counts = parsing.reshape(n, h // factor, factor, w // factor, factor).sum(axis=(2, 4))
    labels = counts.argmax(axis=0)
    return (np.arange(n)[:, None, None] == labels[None]).astype(np.float32)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else tensor(np.asarray(x, np.float32))


@dataclass
class FeatureBundle:
    """Per-image features: content, makeup, semantic and fused."""

    content: Tensor
    pyramid: list[Tensor]
    makeup: Tensor
    semantic: Tensor
    fused: FusedFeatures
    parsing_small: Tensor


@dataclass
class TransferOutputs:
    """Both decoded results of one pair plus the intermediate products the losses need.

    ``y_hat_t`` is the target wearing the reference makeup; ``x_hat_r`` is
    the reference carrying the target's look. ``s_hat_t`` is the reference
    parsing warped onto the target grid and ``s_hat_r`` the target parsing
    warped onto the reference grid.
    """

    y_hat_t: Tensor
    x_hat_r: Tensor
    corr: CorrelationMatrix
    s_hat_t: Tensor
    s_hat_r: Tensor
    s_t_small: Tensor
    s_r_small: Tensor
    warped_ref_makeup: Tensor
    warped_target_makeup: Tensor
    x_self: Tensor | None = None
    y_self: Tensor | None = None
    x_cycle: Tensor | None = None
    y_cycle: Tensor | None = None
    target: FeatureBundle | None = field(default=None, repr=False)
    reference: FeatureBundle | None = field(default=None, repr=False)


@dataclass
class PartialMaskSet:
    """Named binary masks on the feature grid (``h x w``)."""

    masks: dict[str, np.ndarray]

    def __post_init__(self):
        shapes = {m.shape for m in self.masks.values()}
        if len(shapes) > 1:
            raise ShapeError(f"masks disagree in shape: {sorted(shapes)}")
        for name, m in self.masks.items():
            if not np.isin(m, (0.0, 1.0)).all():
                raise ContractError(f"mask {name!r} is not binary")

    @classmethod
    def from_parsing(cls, parsing_small: np.ndarray, complete: bool = False, lip: int = LIP, eye: int = EYE, brow: int = BROW, skin: int = SKIN) -> PartialMaskSet:
        """Lip, Eye and Face masks from a feature-resolution one-hot parsing.

        Eye is the eyebrows plus a ring dilated ``EYE_RING_PX`` cells around
        the eye interiors, interiors excluded; Face is skin minus the other
        two. With ``complete`` an ``Other`` mask covers every remaining cell
        so the set tiles the plane.
        """
        lab = parsing_small.argmax(axis=0)
        interior = lab == eye
        ring = ndimage.binary_dilation(interior, structure=np.ones((3, 3), bool), iterations=EYE_RING_PX)
        lip_m = lab == lip
        eye_m = ((lab == brow) | ring) & ~interior & ~lip_m
        face_m = (lab == skin) & ~lip_m & ~eye_m
        masks = {"Lip": lip_m, "Eye": eye_m, "Face": face_m}
        if complete:
            masks["Other"] = ~(lip_m | eye_m | face_m)
        return cls({k: v.astype(np.float32) for k, v in masks.items()})

    @classmethod
    def full(cls, h: int, w: int) -> PartialMaskSet:
        return cls({"All": np.ones((h, w), np.float32)})

    @property
    def shape(self) -> tuple[int, int]:
        return next(iter(self.masks.values())).shape


@dataclass(frozen=True)
class InterpolationWeights:
    alpha1: float
    alpha2: float

    def __post_init__(self):
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ContractError(f"interpolation weights must be nonnegative, got {self.alpha1}, {self.alpha2}")
        if abs(self.alpha1 + self.alpha2 - 1.0) > 1e-9:
            raise ContractError(f"interpolation weights must sum to 1, got {self.alpha1 + self.alpha2}")

    @classmethod
    def from_alpha(cls, alpha: float) -> InterpolationWeights:
        return cls(float(alpha), 1.0 - float(alpha))


class Generator(Module):
    """Everything trained by the generator objective."""

    def __init__(self, widths: NetWidths, rng):
        self.E_c = EncoderStack(3, widths.encoder, "content", rng)
        self.E_m = EncoderStack(3, widths.encoder, "makeup", rng)
        self.E_s = EncoderStack(widths.n_classes, widths.semantic_encoder, "semantic", rng)
        self.FF = FeatureFusion(widths, rng)
        self.dec = Decoder(widths, rng)


class Critics(Module):
    """``D_X`` judges the non-makeup domain, ``D_Y`` the makeup domain."""

    def __init__(self, widths: NetWidths, rng):
        self.D_X = Discriminator(widths, rng)
        self.D_Y = Discriminator(widths, rng)

    def for_domain(self, domain: str) -> Discriminator:
        if domain == "non_makeup":
            return self.D_X
        if domain == "makeup":
            return self.D_Y
        raise ValueError(f"unknown domain {domain!r}")


class SSATModel(Module):
    """Encoders, fusion, decoder and both discriminators, built from one seed.

    Args:
        widths: Channel configuration.
        sigma: Softmax sharpness for the correspondence warp.
        seed: Initialization seed.
    """

    def __init__(self, widths: NetWidths = NetWidths.desk(), sigma: float = SIGMA, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.widths = widths
        self.sigma = float(sigma)
        self.seed = int(seed)
        self.G = Generator(widths, rng)
        self.D = Critics(widths, rng)

    def config(self) -> dict:
        return {"widths": self.widths.to_dict(), "sigma": self.sigma, "seed": self.seed}

    @classmethod
    def from_config(cls, cfg: dict) -> SSATModel:
        return cls(NetWidths(**cfg["widths"]), cfg["sigma"], cfg.get("seed", 0))

    def _check_pair(self, image: Tensor, parsing) -> None:
        if image.ndim != 3 or image.shape[0] != 3:
            raise ShapeError(f"image must be [3,H,W], got {image.shape}")
        p = parsing.data if isinstance(parsing, Tensor) else np.asarray(parsing)
        check_one_hot(p, self.widths.n_classes)
        if p.shape[1:] != image.shape[1:]:
            raise ShapeError(f"parsing {p.shape} and image {image.shape} sizes differ")

    def encode(self, image, parsing, semantic: Tensor | None = None) -> FeatureBundle:
        """Run the three encoders and fusion on one face.

        ``semantic`` lets a caller reuse features already computed for
        the same parsing.
        """
        image = _as_tensor(image)
        self._check_pair(image, parsing)
        p = parsing.data if isinstance(parsing, Tensor) else np.asarray(parsing, np.float32)
        content, pyramid = self.G.E_c(image)
        makeup, _ = self.G.E_m(image)
        if semantic is None:
            semantic, _ = self.G.E_s(tensor(p))
        fused = feature_fusion(pyramid, semantic, self.G.FF)
        return FeatureBundle(content, pyramid, makeup, semantic, fused, tensor(downsample_parsing(p)))

    def _pair(self, t: FeatureBundle, r: FeatureBundle) -> TransferOutputs:
        out = sscft(t.fused, r.fused, t.makeup, r.makeup, t.parsing_small, r.parsing_small, self.sigma)
        return TransferOutputs(
            y_hat_t=self.G.dec(t.content, out.warped_ref_makeup),
            x_hat_r=self.G.dec(r.content, out.warped_target_makeup),
            corr=out.corr,
            s_hat_t=out.warped_ref_parsing,
            s_hat_r=out.warped_target_parsing,
            s_t_small=t.parsing_small,
            s_r_small=r.parsing_small,
            warped_ref_makeup=out.warped_ref_makeup,
            warped_target_makeup=out.warped_target_makeup,
            target=t,
            reference=r,
        )

    def forward_transfer(self, x_t, s_t, y_r, s_r, self_rec: bool = False, cycle: bool = False) -> TransferOutputs:
        """Transfer the reference makeup onto the target and the target look onto the reference."""
        x_t, y_r = _as_tensor(x_t), _as_tensor(y_r)
        if x_t.shape != y_r.shape:
            raise ShapeError(f"target {x_t.shape} and reference {y_r.shape} must be co-sized")
        outs = self._pair(self.encode(x_t, s_t), self.encode(y_r, s_r))
        if self_rec:
            outs.x_self = self.G.dec(outs.target.content, outs.target.makeup)
            outs.y_self = self.G.dec(outs.reference.content, outs.reference.makeup)
        if cycle:
            outs.x_cycle, outs.y_cycle = self.cycle_pass(outs, s_t, s_r)
        return outs

    def self_reconstruct(self, x, s) -> Tensor:
        """Decode a face from its own content and unwarped makeup features."""
        b = self.encode(x, s)
        return self.G.dec(b.content, b.makeup)

    def cycle_pass(self, outputs: TransferOutputs, s_t, s_r) -> tuple[Tensor, Tensor]:
        """Feed both results back in with their roles swapped; returns ``(x_t^cycle, y_r^cycle)``.

        ``x_hat_r`` has the reference geometry and ``y_hat_t`` the target
        geometry, so each keeps the parsing (and semantic features) of the
        face whose shape it carries.
        """
        sem_t = outputs.target.semantic if outputs.target is not None else None
        sem_r = outputs.reference.semantic if outputs.reference is not None else None
        new_t = self.encode(outputs.x_hat_r, s_r, sem_r)
        new_r = self.encode(outputs.y_hat_t, s_t, sem_t)
        second = self._pair(new_t, new_r)
        return second.x_hat_r, second.y_hat_t

    def warped_makeup(self, target: FeatureBundle, y_r, s_r) -> Tensor:
        """Reference makeup features carried onto the target grid."""
        ref = self.encode(y_r, s_r)
        return sscft(target.fused, ref.fused, target.makeup, ref.makeup, sigma=self.sigma).warped_ref_makeup

    def partial_transfer(self, x_t, s_t, refs, assignment: dict[str, int], masks: PartialMaskSet | None = None) -> Tensor:
        """Compose makeup region by region from several references, then decode once.

        Args:
            x_t: Target image.
            s_t: Target parsing.
            refs: List of ``(y_r, s_r)`` references.
            assignment: Region name to reference index.
            masks: Region masks on the feature grid; derived from ``s_t``
                when omitted.
        """
        t = self.encode(x_t, s_t)
        h, w = t.content.shape[1:]
        if masks is None:
            masks = PartialMaskSet.from_parsing(t.parsing_small.data)
        if masks.shape != (h, w):
            raise ShapeError(f"masks are {masks.shape}, feature grid is {(h, w)}")
        unknown = set(assignment) - set(masks.masks)
        if unknown:
            raise ContractError(f"no mask for regions {sorted(unknown)}")
        for k in set(assignment.values()):
            if not 0 <= k < len(refs):
                raise ContractError(f"reference index {k} out of range")
        owner = np.full((h, w), -1)
        for region, k in assignment.items():
            m = masks.masks[region] > 0
            clash = m & (owner >= 0) & (owner != k)
            if clash.any():
                raise ContractError(f"region {region!r} overlaps a region assigned to another reference")
            owner[m] = k
        warped = {k: self.warped_makeup(t, *refs[k]) for k in sorted(set(assignment.values()))}
        total = None
        for region, k in assignment.items():
            part = warped[k] * tensor(masks.masks[region][None])
            total = part if total is None else total + part
        if total is None:
            total = tensor(np.zeros(t.makeup.shape, np.float32))
        return self.G.dec(t.content, total)

    def interpolate_styles(self, x_t, s_t, ref1, ref2, alpha: InterpolationWeights | float) -> Tensor:
        """Decode a convex blend of the makeup features warped from two references."""
        if not isinstance(alpha, InterpolationWeights):
            alpha = InterpolationWeights.from_alpha(alpha)
        t = self.encode(x_t, s_t)
        blend = self.blend(self.warped_makeup(t, *ref1), self.warped_makeup(t, *ref2), alpha)
        return self.G.dec(t.content, blend)

    @staticmethod
    def blend(m1: Tensor, m2: Tensor, alpha: InterpolationWeights) -> Tensor:
        return m1 * alpha.alpha1 + m2 * alpha.alpha2
