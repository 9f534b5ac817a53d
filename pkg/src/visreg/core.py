"""Domain types shared across the package: ratings, features, latent factors
and hyperparameters, plus the two elementary prediction operations."""
from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass, field

import numpy as np


class Scale(enum.Enum):
    """Rating scale. Binary ratings are -1/+1, stars are 0.5..5.0 in half steps."""

    BINARY = "binary"
    STARS = "stars"

    @property
    def low(self) -> float:
        return -1.0 if self is Scale.BINARY else 0.5

    @property
    def high(self) -> float:
        return 1.0 if self is Scale.BINARY else 5.0

    @property
    def grid(self) -> np.ndarray:
        if self is Scale.BINARY:
            return np.array([-1.0, 1.0])
        return np.arange(1, 11) * 0.5

    def contains(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if self is Scale.BINARY:
            return (values == 1.0) | (values == -1.0)
        doubled = values * 2.0
        return (doubled == np.round(doubled)) & (values >= 0.5) & (values <= 5.0)

    @classmethod
    def parse(cls, name: str | Scale) -> Scale:
        if isinstance(name, Scale):
            return name
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown rating scale {name!r}; expected 'binary' or 'stars'") from None


def substream(seed: int, name: str) -> np.random.Generator:
    """Named random stream derived from a master seed.

    Streams with different names are statistically independent, so adding
    draws to one stage never perturbs another.
    """
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(zlib.crc32(name.encode()),))
    return np.random.default_rng(ss)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RatingMatrix:
    """Sparse set of observed ``(rater, item, value)`` triplets.

    Stored as three parallel arrays. A pair appears at most once, which is
    exactly the observation indicator of the squared-error objective.
    """

    num_raters: int
    num_items: int
    raters: np.ndarray
    items: np.ndarray
    values: np.ndarray
    scale: Scale = Scale.BINARY

    def __post_init__(self):
        raters = np.asarray(self.raters, dtype=np.int64).ravel()
        items = np.asarray(self.items, dtype=np.int64).ravel()
        values = np.asarray(self.values, dtype=np.float64).ravel()
        if not (len(raters) == len(items) == len(values)):
            raise ValueError("raters, items and values must have equal length")
        if len(raters):
            if raters.min() < 0 or raters.max() >= self.num_raters:
                raise IndexError("rater index out of range")
            if items.min() < 0 or items.max() >= self.num_items:
                raise IndexError("item index out of range")
            keys = raters * self.num_items + items
            if len(np.unique(keys)) != len(keys):
                raise ValueError("duplicate (rater, item) pair")
        scale = Scale.parse(self.scale)
        bad = ~scale.contains(values)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValueError(f"rating {values[i]!r} at position {i} is not on the {scale.value} scale")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "raters", _frozen(raters))
        object.__setattr__(self, "items", _frozen(items))
        object.__setattr__(self, "values", _frozen(values))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def triplets(self) -> list[tuple[int, int, float]]:
        return list(zip(self.raters.tolist(), self.items.tolist(), self.values.tolist()))

    def subset(self, mask_or_index) -> RatingMatrix:
        """Triplets selected by a boolean mask or an index array, same shape."""
        sel = np.asarray(mask_or_index)
        return RatingMatrix(self.num_raters, self.num_items, self.raters[sel],
                            self.items[sel], self.values[sel], self.scale)

    def received_counts(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.num_items)

    def to_dense(self) -> np.ndarray:
        """Dense matrix with zeros where unobserved (small problems only)."""
        out = np.zeros((self.num_raters, self.num_items))
        out[self.raters, self.items] = self.values
        return out


@dataclass(frozen=True, eq=False)
class FeatureStore:
    """Dense per-item feature vectors, one row per item, with cached norms."""

    vectors: np.ndarray
    ids: np.ndarray | None = None
    norms: np.ndarray = field(init=False)

    def __post_init__(self):
        v = np.array(self.vectors, dtype=np.float64, ndmin=2)
        if v.ndim != 2:
            raise ValueError("feature vectors must form a 2-D array")
        if not np.isfinite(v).all():
            row = int(np.flatnonzero(~np.isfinite(v).all(axis=1))[0])
            raise ValueError(f"non-finite feature entry in row {row}")
        ids = np.arange(len(v), dtype=np.uint64) if self.ids is None else np.asarray(self.ids, dtype=np.uint64)
        if len(ids) != len(v):
            raise ValueError("ids and vectors differ in length")
        object.__setattr__(self, "vectors", _frozen(v))
        object.__setattr__(self, "ids", _frozen(ids.copy()))
        object.__setattr__(self, "norms", _frozen(np.linalg.norm(v, axis=1)))

    @property
    def num_items(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def zero_rows(self) -> np.ndarray:
        """Indices of rows whose cosine similarity is undefined."""
        return np.flatnonzero(self.norms == 0.0)

    def take(self, index) -> FeatureStore:
        index = np.asarray(index)
        return FeatureStore(self.vectors[index], self.ids[index])


@dataclass(eq=False)
class LatentModel:
    """Rater factors ``P`` (d x raters) and item factors ``Q`` (d x items)."""

    P: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        self.Q = np.asarray(self.Q, dtype=np.float64)
        if self.P.ndim != 2 or self.Q.ndim != 2 or self.P.shape[0] != self.Q.shape[0]:
            raise ValueError(f"incompatible factor shapes {self.P.shape} and {self.Q.shape}")
        if not (np.isfinite(self.P).all() and np.isfinite(self.Q).all()):
            raise ValueError("latent factors must be finite")

    @property
    def d(self) -> int:
        return self.P.shape[0]

    @property
    def num_raters(self) -> int:
        return self.P.shape[1]

    @property
    def num_items(self) -> int:
        return self.Q.shape[1]

    def copy(self) -> LatentModel:
        return LatentModel(self.P.copy(), self.Q.copy())

    def check_compatible(self, ratings: RatingMatrix) -> None:
        if (self.num_raters, self.num_items) != (ratings.num_raters, ratings.num_items):
            raise ValueError(
                f"model is {self.num_raters}x{self.num_items} but ratings are "
                f"{ratings.num_raters}x{ratings.num_items}")


@dataclass(frozen=True)
class Hyperparams:
    """Training and regression settings.

    ``alpha1`` weights the L2 penalty on both factor matrices and ``alpha2``
    the visual-similarity penalty. ``ridge_lambda`` and ``ridge_kappa`` control
    the anchored ridge regression used for cold-start queries.
    ``neighbor_k = 0`` keeps every item pair in the visual penalty.
    """

    alpha1: float = 0.1
    alpha2: float = 0.1
    learning_rate: float = 0.01
    epochs: int = 200
    seed: int = 0
    init_scale: float = 0.1
    neighbor_k: int = 50
    ridge_lambda: float = 0.1
    ridge_kappa: float = 0.5
    dim: int = 20
    grad_tol: float = 1e-8

    def __post_init__(self):
        if not self.alpha1 >= 0:
            raise ValueError("alpha1 must be >= 0")
        if not self.alpha2 >= 0:
            raise ValueError("alpha2 must be >= 0")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 <= self.ridge_kappa <= 1:
            raise ValueError("ridge_kappa must lie in [0, 1]")
        if not self.ridge_lambda >= 0:
            raise ValueError("ridge_lambda must be >= 0")
        if not self.init_scale >= 0:
            raise ValueError("init_scale must be >= 0")
        if self.epochs < 0 or self.neighbor_k < 0:
            raise ValueError("epochs and neighbor_k must be non-negative")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")


def predict_rating(model: LatentModel, rater: int, item: int) -> float:
    """Raw (unclamped) rating estimate ``P[:, rater] . Q[:, item]``."""
    if not 0 <= rater < model.num_raters:
        raise IndexError(f"rater {rater} out of range [0, {model.num_raters})")
    if not 0 <= item < model.num_items:
        raise IndexError(f"item {item} out of range [0, {model.num_items})")
    return float(model.P[:, rater] @ model.Q[:, item])


def decode_prediction(raw, scale: Scale | str, majority: float = 1.0):
    """Map raw scores onto the rating scale.

    Binary: sign of the score, with exact zeros going to ``majority``.
    Stars: clamped to [0.5, 5.0] without rounding. Works on scalars and arrays.
    """
    scale = Scale.parse(scale)
    arr = np.asarray(raw, dtype=float)
    if scale is Scale.BINARY:
        out = np.where(arr > 0, 1.0, np.where(arr < 0, -1.0, float(majority)))
    else:
        out = np.clip(arr, scale.low, scale.high)
    return float(out) if out.ndim == 0 else out
