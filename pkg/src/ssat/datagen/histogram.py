"""Exact histogram specification on 8-bit levels."""
from __future__ import annotations

import logging

import numpy as np

log = logging.getLogger(__name__)

LEVELS = 256


def to_levels(values: np.ndarray) -> np.ndarray:
    """Map [-1, 1] floats to integer levels 0..255."""
    return np.clip(np.round((np.asarray(values, np.float64) + 1.0) * 127.5), 0, LEVELS - 1).astype(np.int64)


def from_levels(levels: np.ndarray) -> np.ndarray:
    return (np.asarray(levels, np.float64) / 127.5 - 1.0).astype(np.float32)


def histogram_match(source: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Remap ``source`` so its sorted values are the reference quantiles.

    The k-th smallest source value (stable rank, 0-based) receives the
    reference value at empirical quantile ``(k + 1) / n``, i.e. sorted
    reference index ``ceil((k + 1) * m / n) - 1``. Values are handled on
    256 levels in [-1, 1]; the mapping never reverses source order.
    """
    source = np.asarray(source)
    reference = np.asarray(reference)
    if source.size == 0 or reference.size == 0:
        log.warning("histogram_match on an empty region; returning source unchanged")
        return source.astype(np.float32, copy=True)
    n, m = source.size, reference.size
    order = np.argsort(source.ravel(), kind="stable")
    ref_sorted = np.sort(to_levels(reference.ravel()))
    pick = (np.arange(1, n + 1, dtype=np.int64) * m + n - 1) // n - 1
    out = np.empty(n, np.int64)
    out[order] = ref_sorted[pick]
    return from_levels(out).reshape(source.shape)


def match_region(image: np.ndarray, mask: np.ndarray, reference: np.ndarray, ref_mask: np.ndarray) -> np.ndarray:
    """Per-channel histogram matching of ``image[:, mask]`` toward ``reference[:, ref_mask]``."""
    out = image.copy()
    if not mask.any() or not ref_mask.any():
        log.warning("histogram_match region is empty; leaving image unchanged")
        return out
    for ch in range(image.shape[0]):
        out[ch][mask] = histogram_match(image[ch][mask], reference[ch][ref_mask])
    return out
