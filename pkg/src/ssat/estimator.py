"""Scikit-learn style wrapper around training and transfer."""
from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .datagen.faces import ParsedImage
from .datagen.pairs import FaceBank, SyntheticPairs
from .network import SSATModel
from .tensor import no_grad
from .trainer import TrainConfig, load_model, train_loop


def check_parsed(image, size: int | None = None, n_classes: int | None = None, name: str = "image") -> ParsedImage:
    """Validate a parsed face and return it unchanged.

    Raises:
        TypeError: ``image`` is not a :class:`ParsedImage`.
        ValueError: Shapes disagree, values are non-finite, or the parsing is
            not one-hot.
    """
    if not isinstance(image, ParsedImage):
        raise TypeError(f"{name} must be a ParsedImage, got {type(image).__name__}")
    rgb, parsing = np.asarray(image.rgb), np.asarray(image.parsing)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"{name}: rgb must be [3, H, W], got {rgb.shape}")
    if parsing.shape[1:] != rgb.shape[1:]:
        raise ValueError(f"{name}: parsing {parsing.shape} does not match rgb {rgb.shape}")
    if size is not None and rgb.shape[1:] != (size, size):
        raise ValueError(f"{name}: expected {size}x{size}, got {rgb.shape[1]}x{rgb.shape[2]}")
    if n_classes is not None and parsing.shape[0] != n_classes:
        raise ValueError(f"{name}: expected {n_classes} parsing classes, got {parsing.shape[0]}")
    if not np.isfinite(rgb).all():
        raise ValueError(f"{name}: rgb has non-finite values")
    if not (np.isin(parsing, (0.0, 1.0)).all() and np.all(parsing.sum(axis=0) == 1)):
        raise ValueError(f"{name}: parsing must be one-hot per pixel")
    return image


def check_pairs(X, size: int | None = None, n_classes: int | None = None) -> list[tuple[ParsedImage, ParsedImage]]:
    """Validate a sequence of ``(target, reference)`` pairs."""
    pairs = list(X)
    if not pairs:
        raise ValueError("expected at least one (target, reference) pair")
    out = []
    for i, item in enumerate(pairs):
        if len(item) != 2:
            raise ValueError(f"item {i} must be a (target, reference) pair")
        t = check_parsed(item[0], size, n_classes, f"X[{i}] target")
        r = check_parsed(item[1], size, n_classes, f"X[{i}] reference")
        out.append((t, r))
    return out


class MakeupTransfer(BaseEstimator, TransformerMixin):
    """Train a transfer network on pseudo pairs, then apply it to face pairs.

    ``fit`` takes an indexable pair dataset (for instance
    :class:`~ssat.datagen.io.ManifestDataset`); with ``X=None`` it trains on
    freshly generated synthetic faces. ``transform`` maps ``(target,
    reference)`` pairs to transfer results; a bare-faced reference gives
    makeup removal.

    Args:
        preset: ``"desk"`` or ``"paper"`` training configuration.
        n_iterations: Overrides the preset's iteration count when set.
        learning_rate: Initial Adam learning rate.
        seed: Seed for weights, sampling and augmentation.
        checkpoint: Optional checkpoint to start from; with
            ``n_iterations=0`` ``fit`` only loads it.
        work_dir: Where logs and checkpoints go; a temporary directory when
            ``None``.
    """

    def __init__(self, preset="desk", n_iterations=None, learning_rate=2e-4, seed=0, checkpoint=None, work_dir=None):
        self.preset = preset
        self.n_iterations = n_iterations
        self.learning_rate = learning_rate
        self.seed = seed
        self.checkpoint = checkpoint
        self.work_dir = work_dir

    def _config(self) -> TrainConfig:
        if self.preset not in ("desk", "paper"):
            raise ValueError(f"preset must be 'desk' or 'paper', got {self.preset!r}")
        base = TrainConfig.paper() if self.preset == "paper" else TrainConfig.desk()
        overrides = {"seed": int(self.seed), "lr_initial": float(self.learning_rate), "checkpoint_every": 0}
        if self.n_iterations:
            overrides["total_iterations"] = int(self.n_iterations)
        return TrainConfig.from_dict({**base.to_dict(), **overrides})

    def fit(self, X=None, y=None):
        """Train (or load) the model. ``y`` is ignored; pseudo pairs carry their own targets."""
        config = self._config()
        if self.checkpoint is not None:
            model, _ = load_model(self.checkpoint)
        else:
            model = SSATModel(config.widths, config.sigma, config.seed)
        if self.n_iterations == 0:
            self.model_, self.config_ = model, config
            return self
        dataset = X if X is not None else SyntheticPairs(FaceBank(config.n_bare, config.n_makeup, config.seed))
        if len(dataset) == 0:
            raise ValueError("training dataset is empty")
        if self.work_dir is None:
            with tempfile.TemporaryDirectory() as tmp:
                train_loop(model, dataset, config, tmp, progress_every=0)
        else:
            self.checkpoint_path_ = train_loop(model, dataset, config, Path(self.work_dir), progress_every=0)
        self.model_, self.config_ = model, config
        return self

    def _fitted(self) -> SSATModel:
        if not hasattr(self, "model_"):
            raise NotFittedError("MakeupTransfer is not fitted; call fit first")
        return self.model_

    def transform(self, X) -> np.ndarray:
        """Transfer results ``[N, 3, H, W]`` for ``(target, reference)`` pairs."""
        model = self._fitted()
        pairs = check_pairs(X, n_classes=model.widths.n_classes)
        out = []
        with no_grad():
            for t, r in pairs:
                out.append(model.forward_transfer(t.rgb, t.parsing, r.rgb, r.parsing).y_hat_t.data.copy())
        return np.stack(out)

    def predict(self, X) -> np.ndarray:
        return self.transform(X)
