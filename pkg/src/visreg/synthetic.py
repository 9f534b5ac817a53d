"""Synthetic rating/feature generators with planted low-rank structure."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FeatureStore, RatingMatrix, Scale, substream


@dataclass(frozen=True, eq=False)
class SyntheticData:
    ratings: RatingMatrix
    features: FeatureStore
    P_true: np.ndarray
    Q_true: np.ndarray
    full: np.ndarray  # complete noiseless rating matrix (raters x items)


def make_synthetic(n_raters: int = 300, n_items: int = 200, rank: int = 3, density: float = 0.3,
                   feature_dim: int = 16, feature_noise: float = 0.3, label_noise: float = 0.0,
                   scale: Scale | str = Scale.BINARY, seed: int = 0) -> SyntheticData:
    """Ratings from ``sign(P_true' Q_true)`` (binary) or a clipped affine map
    onto half stars, and item features ``A Q_true + noise``.

    ``label_noise`` flips that fraction of binary ratings (stars: adds
    Gaussian noise of that standard deviation before snapping to the grid).
    """
    scale = Scale.parse(scale)
    rng = substream(seed, "synthetic")
    P = rng.standard_normal((rank, n_raters))
    Q = rng.standard_normal((rank, n_items))
    score = P.T @ Q / np.sqrt(rank)
    if scale is Scale.BINARY:
        full = np.where(score >= 0, 1.0, -1.0)
    else:
        full = np.clip(np.round((2.75 + 1.0 * score) * 2) / 2, 0.5, 5.0)

    mask = rng.random((n_raters, n_items)) < density
    raters, items = np.nonzero(mask)
    values = full[raters, items].copy()
    if label_noise > 0:
        if scale is Scale.BINARY:
            flip = rng.random(len(values)) < label_noise
            values[flip] *= -1
        else:
            noisy = values + label_noise * rng.standard_normal(len(values))
            values = np.clip(np.round(noisy * 2) / 2, 0.5, 5.0)

    A = rng.standard_normal((feature_dim, rank))
    V = (A @ Q).T + feature_noise * np.sqrt(rank) * rng.standard_normal((n_items, feature_dim))
    return SyntheticData(
        RatingMatrix(n_raters, n_items, raters, items, values, scale),
        FeatureStore(V), P, Q, full)
