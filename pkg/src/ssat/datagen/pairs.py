"""Pseudo-paired ground truth and the pair enumeration used for training."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .faces import EAR_NECK, EYE, MOUTH, FaceConfig, ParsedImage, generate_face
from .histogram import match_region
from .warp import piecewise_affine_warp, triangulate

PRESERVED = (EYE, MOUTH)


@dataclass
class PseudoPair:
    """A (target, reference) pair plus warped ground truth for both directions.

    ``y_bar_t`` is the reference re-shaped to the target geometry (makeup
    ground truth for the target); ``x_bar_r`` is the target re-shaped to
    the reference geometry (ground truth for the reference).
    """

    target: ParsedImage
    reference: ParsedImage
    y_bar_t: np.ndarray
    x_bar_r: np.ndarray


def warp_to(src: ParsedImage, dst: ParsedImage) -> np.ndarray:
    """``src`` pixels re-arranged onto ``dst`` geometry, dst interiors kept, ear/neck matched to ``src``."""
    tri = triangulate(dst.landmarks)
    out = piecewise_affine_warp(src.rgb, src.landmarks, dst.landmarks, tri)
    keep = np.zeros(dst.size, bool)
    for cls in PRESERVED:
        keep |= dst.region(cls)
    out[:, keep] = dst.rgb[:, keep]
    return match_region(out, dst.region(EAR_NECK), src.rgb, src.region(EAR_NECK))


def make_pseudo_pair(target: ParsedImage, reference: ParsedImage) -> PseudoPair:
    if target.landmarks.shape != reference.landmarks.shape:
        raise ValueError("target and reference landmark layouts differ")
    return PseudoPair(
        target=target,
        reference=reference,
        y_bar_t=warp_to(reference, target),
        x_bar_r=warp_to(target, reference),
    )


@dataclass(frozen=True)
class PairSpec:
    """One entry of the ordered pair grid.

    ``order == "transfer"`` puts the bare face in the target slot,
    ``"removal"`` puts the makeup face there.
    """

    bare: int
    makeup: int
    order: str
    seed: int


def pair_seed(base_seed: int, *indices: int) -> int:
    return int(np.random.SeedSequence([base_seed, *indices]).generate_state(1)[0])


def enumerate_pairs(n_bare: int, n_makeup: int, base_seed: int = 0) -> list[PairSpec]:
    """Every (bare, makeup) combination in both slot orders: ``2 * n_bare * n_makeup`` pairs."""
    specs = []
    for i in range(n_bare):
        for j in range(n_makeup):
            for k, order in enumerate(("transfer", "removal")):
                specs.append(PairSpec(i, j, order, pair_seed(base_seed, i, j, k)))
    return specs


def grid_for_pairs(n_pairs: int) -> int:
    """Side length ``n`` with ``2 * n * n == n_pairs``."""
    n = int(round((n_pairs / 2) ** 0.5))
    if 2 * n * n != n_pairs:
        raise ValueError(f"{n_pairs} is not 2*n*n for an integer n")
    return n


class FaceBank:
    """Bare and makeup faces addressed by index, rendered once on demand."""

    def __init__(self, n_bare: int, n_makeup: int, base_seed: int = 0, config: FaceConfig = FaceConfig()):
        self.n_bare, self.n_makeup = n_bare, n_makeup
        self.base_seed = base_seed
        self.config = config
        self._cache: dict[tuple[str, int], ParsedImage] = {}

    def face_seed(self, domain: str, index: int) -> int:
        return pair_seed(self.base_seed, 0 if domain == "non_makeup" else 1, index)

    def get(self, domain: str, index: int) -> ParsedImage:
        key = (domain, index)
        if key not in self._cache:
            self._cache[key] = generate_face(self.face_seed(domain, index), self.config, domain)
        return self._cache[key]

    def pair(self, spec: PairSpec) -> PseudoPair:
        bare = self.get("non_makeup", spec.bare)
        made = self.get("makeup", spec.makeup)
        if spec.order == "transfer":
            return make_pseudo_pair(bare, made)
        return make_pseudo_pair(made, bare)


class SyntheticPairs:
    """Indexable pseudo pairs rendered in memory from a :class:`FaceBank`."""

    def __init__(self, bank: FaceBank, specs: list[PairSpec] | None = None):
        self.bank = bank
        self.specs = specs if specs is not None else enumerate_pairs(bank.n_bare, bank.n_makeup, bank.base_seed)

    def __len__(self) -> int:
        return len(self.specs)

    def __getitem__(self, i: int) -> PseudoPair:
        return self.bank.pair(self.specs[i])
