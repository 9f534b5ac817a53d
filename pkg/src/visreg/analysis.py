"""Diagnostic analyses: preference-by-age cross tables, the hotness paradox
curve and 2-D latent-space exports. All outputs are plot-ready tables."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import FeatureStore, LatentModel, RatingMatrix, Scale
from .features import SimilarityGraph, _sign_fix

__all__ = [
    "DemographicTable", "compute_hotness", "preference_by_age", "hotness_paradox_curve",
    "neighbor_order", "export_latent_2d", "age_table_csv", "paradox_csv", "latent_csv",
]


@dataclass(frozen=True, eq=False)
class DemographicTable:
    """Per-subject age, group label and (optionally) hotness.

    Hotness is the fraction of positive binary ratings a subject received.
    """

    ages: np.ndarray
    groups: np.ndarray | None = None
    hotness: np.ndarray | None = None
    age_bounds: tuple[float, float] | None = None

    def __post_init__(self):
        ages = np.asarray(self.ages, dtype=float)
        object.__setattr__(self, "ages", ages)
        if self.groups is not None:
            object.__setattr__(self, "groups", np.asarray(self.groups, dtype=object))
        if self.hotness is not None:
            h = np.asarray(self.hotness, dtype=float)
            finite = h[np.isfinite(h)]
            if ((finite < 0) | (finite > 1)).any():
                raise ValueError("hotness must lie in [0, 1]")
            object.__setattr__(self, "hotness", h)
        if self.age_bounds is not None:
            lo, hi = self.age_bounds
            known = ages[np.isfinite(ages)]
            if ((known < lo) | (known > hi)).any():
                raise ValueError(f"ages outside bounds {self.age_bounds}")

    def __len__(self) -> int:
        return len(self.ages)

    def with_hotness(self, hotness) -> DemographicTable:
        return DemographicTable(self.ages, self.groups, hotness, self.age_bounds)


def compute_hotness(ratings: RatingMatrix) -> np.ndarray:
    """Positive fraction of received binary ratings per item (NaN if none)."""
    if ratings.scale is not Scale.BINARY:
        raise ValueError("hotness is defined on binary ratings only")
    total = np.bincount(ratings.items, minlength=ratings.num_items).astype(float)
    pos = np.bincount(ratings.items, weights=(ratings.values > 0).astype(float), minlength=ratings.num_items)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total > 0, pos / total, np.nan)


def _bin_of(ages: np.ndarray, edges: np.ndarray) -> np.ndarray:
    # bins are [edges[i], edges[i+1]); the last one is closed on the right
    b = np.searchsorted(edges, ages, side="right") - 1
    b[ages == edges[-1]] = len(edges) - 2
    b[(ages < edges[0]) | (ages > edges[-1]) | ~np.isfinite(ages)] = -1
    return b


def preference_by_age(ratings: RatingMatrix, rater_demo: DemographicTable, item_demo: DemographicTable,
                      bins) -> tuple[np.ndarray, np.ndarray]:
    """Percentage of positive ratings from rater age bin i toward subject age bin j.

    Returns ``(percent, counts)``; cells without ratings are NaN in
    ``percent`` (missing, not zero).
    """
    if ratings.scale is not Scale.BINARY:
        raise ValueError("preference_by_age needs binary ratings")
    if len(rater_demo) != ratings.num_raters or len(item_demo) != ratings.num_items:
        raise ValueError("demographics must cover every rater and every item")
    edges = np.asarray(bins, dtype=float)
    nb = len(edges) - 1
    if nb < 1 or np.any(np.diff(edges) <= 0):
        raise ValueError("age bin edges must be strictly increasing with at least two entries")
    rb = _bin_of(rater_demo.ages[ratings.raters], edges)
    ib = _bin_of(item_demo.ages[ratings.items], edges)
    if (rb < 0).any() or (ib < 0).any():
        raise ValueError("some rated pairs have ages outside the bin range or no demographics")
    cell = rb * nb + ib
    counts = np.bincount(cell, minlength=nb * nb).reshape(nb, nb)
    pos = np.bincount(cell, weights=(ratings.values > 0).astype(float), minlength=nb * nb).reshape(nb, nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        pct = np.where(counts > 0, 100.0 * pos / counts, np.nan)
    return pct, counts


def neighbor_order(vectors: np.ndarray | FeatureStore, max_n: int) -> np.ndarray:
    """Indices of each subject's ``max_n`` most cosine-similar others
    (ties to the lower index), shape (subjects, max_n)."""
    v = vectors.vectors if isinstance(vectors, FeatureStore) else np.asarray(vectors, dtype=float)
    norms = np.linalg.norm(v, axis=1)
    if (norms == 0).any():
        raise ValueError(f"subject {int(np.flatnonzero(norms == 0)[0])} has a zero vector")
    unit = v / norms[:, None]
    n = len(v)
    out = np.empty((n, max_n), dtype=np.int64)
    for lo in range(0, n, 512):
        hi = min(lo + 512, n)
        keyed = -np.clip(unit[lo:hi] @ unit.T, -1, 1)
        keyed[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        out[lo:hi] = np.argsort(keyed, axis=1, kind="stable")[:, :max_n]
    return out


def hotness_paradox_curve(hotness, neighbors, sizes, index: np.ndarray | None = None) -> np.ndarray:
    """Percentage of subjects whose n nearest neighbours are, on average,
    strictly hotter than the subject, for each n in ``sizes``.

    ``neighbors`` is a (subjects x dim) vector matrix or ``FeatureStore``
    (feature or latent similarity), or a ``SimilarityGraph`` holding enough
    neighbours. A precomputed :func:`neighbor_order` result may be passed as
    ``index`` instead, with ``neighbors=None``.
    """
    h = np.asarray(hotness, dtype=float)
    if not np.isfinite(h).all():
        raise ValueError("hotness must be defined for every subject")
    n_subj = len(h)
    sizes = [int(s) for s in sizes]
    if any(s < 1 for s in sizes):
        raise ValueError("neighbourhood sizes must be positive")
    if any(s >= n_subj for s in sizes):
        raise ValueError(f"neighbourhood size must be smaller than the population ({n_subj})")
    max_n = max(sizes)
    if index is not None:
        idx = np.asarray(index)
        if idx.shape[0] != n_subj or idx.shape[1] < max_n:
            raise ValueError(f"neighbour index must have shape ({n_subj}, >= {max_n})")
        idx = idx[:, :max_n]
    elif isinstance(neighbors, SimilarityGraph):
        widths = np.diff(neighbors.indptr)
        if neighbors.num_items != n_subj or widths.min() < max_n:
            raise ValueError(f"similarity graph holds fewer than {max_n} neighbours per subject")
        idx = np.stack([neighbors.indices[neighbors.indptr[f]:neighbors.indptr[f] + max_n]
                        for f in range(n_subj)])
    else:
        arr = neighbors.vectors if isinstance(neighbors, FeatureStore) else np.asarray(neighbors, dtype=float)
        if len(arr) != n_subj:
            raise ValueError("one neighbour vector per subject is required")
        idx = neighbor_order(arr, max_n)
    csum = np.cumsum(h[idx], axis=1)
    out = []
    for s in sizes:
        mean = csum[:, s - 1] / s
        out.append(100.0 * np.count_nonzero(mean > h) / n_subj)
    return np.array(out)


def export_latent_2d(factors: LatentModel | np.ndarray, labels=None, which: str = "Q") -> np.ndarray:
    """Project factor columns onto their first two principal components.

    Returns an (n, 3) array of ``(x, y, label)``; label is NaN when absent.
    """
    if isinstance(factors, LatentModel):
        factors = factors.Q if which == "Q" else factors.P
    X = np.asarray(factors, dtype=float).T  # one row per column/subject
    if X.shape[0] < 3:
        raise ValueError("need at least 3 columns to project")
    centered = X - X.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s.size == 0 or s[0] <= 1e-12 * max(np.abs(X).max(), 1.0):
        raise ValueError("factor matrix has rank 0 after centring; nothing to project")
    basis = _sign_fix(vt[:2])
    xy = centered @ basis.T
    if xy.shape[1] < 2:
        xy = np.hstack([xy, np.zeros((len(xy), 2 - xy.shape[1]))])
    lab = np.full(len(X), np.nan) if labels is None else np.asarray(labels, dtype=float)
    if len(lab) != len(X):
        raise ValueError("one label per column is required")
    return np.column_stack([xy, lab])


# ---------------------------------------------------------------------------
# CSV emitters


def _num(x) -> str:
    return "" if not np.isfinite(x) else repr(float(x))


def age_table_csv(pct: np.ndarray, counts: np.ndarray, bins) -> str:
    """Long format: ``rater_bin_lo,rater_bin_hi,subject_bin_lo,subject_bin_hi,positive_pct,count``."""
    edges = list(bins)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rater_bin_lo", "rater_bin_hi", "subject_bin_lo", "subject_bin_hi", "positive_pct", "count"])
    for i in range(pct.shape[0]):
        for j in range(pct.shape[1]):
            w.writerow([edges[i], edges[i + 1], edges[j], edges[j + 1], _num(pct[i, j]), int(counts[i, j])])
    return buf.getvalue()


def paradox_csv(rows: list[tuple[str, int, float]]) -> str:
    """``similarity,size,percent_hotter`` rows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["similarity", "size", "percent_hotter"])
    for sim, size, pct in rows:
        w.writerow([sim, size, _num(pct)])
    return buf.getvalue()


def latent_csv(table: np.ndarray, ids=None) -> str:
    """``id,x,y,label`` rows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "x", "y", "label"])
    ids = range(len(table)) if ids is None else ids
    for i, (x, y, lab) in zip(ids, table):
        w.writerow([i, _num(x), _num(y), _num(lab)])
    return buf.getvalue()


def write_text(path, text: str) -> None:
    Path(path).write_text(text)
