"""Held-out checks of a trained model on fresh synthetic faces."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen.faces import LIP, FaceConfig, ParsedImage
from .datagen.pairs import FaceBank, PairSpec, PseudoPair, pair_seed
from .network import SSATModel
from .tensor import no_grad

HELDOUT_OFFSET = 1_000_003


def lip_mean(rgb: np.ndarray, parsing: np.ndarray) -> np.ndarray:
    mask = parsing[LIP] > 0.5
    if not mask.any():
        raise ValueError("no lip pixels in parsing")
    return rgb[:, mask].mean(axis=1)


def heldout_pairs(n: int = 20, seed: int = 0, config: FaceConfig = FaceConfig()) -> list[PseudoPair]:
    """``n`` bare-target / makeup-reference pairs from faces never seen in training.

    Faces come from a bank whose base seed is offset from the training one.
    """
    bank = FaceBank(n, n, seed + HELDOUT_OFFSET, config)
    return [bank.pair(PairSpec(i, (i * 7 + 3) % n, "transfer", pair_seed(seed, 2, i))) for i in range(n)]


@dataclass
class LipReport:
    distances: np.ndarray  # L1 between transferred and reference lip colour
    initial: np.ndarray  # L1 between target and reference lip colour

    @property
    def mean_distance(self) -> float:
        return float(self.distances.mean())

    @property
    def mean_initial(self) -> float:
        return float(self.initial.mean())


def _l1(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.abs(a - b).sum())


def lip_transfer_report(model: SSATModel, pairs: list[PseudoPair]) -> LipReport:
    """Colour L1 (summed over RGB) of the lips of each transfer result against its reference."""
    dist, init = [], []
    with no_grad():
        for p in pairs:
            t: ParsedImage = p.target
            r: ParsedImage = p.reference
            out = model.forward_transfer(t.rgb, t.parsing, r.rgb, r.parsing)
            ref_lip = lip_mean(r.rgb, r.parsing)
            dist.append(_l1(lip_mean(out.y_hat_t.data, t.parsing), ref_lip))
            init.append(_l1(lip_mean(t.rgb, t.parsing), ref_lip))
    return LipReport(np.array(dist), np.array(init))
