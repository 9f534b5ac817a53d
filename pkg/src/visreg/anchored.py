"""Cold-start regression from feature space into the latent item space.

Every training item is an anchor. Its feature vector is reconstructed from
all other anchors by a ridge regression whose penalty grows with
dissimilarity, and the same weights applied to the neighbours' latent
factors give a linear map ``M_g`` from features to latent factors. A query
is mapped with the projection of its most similar anchor.
"""
from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .core import FeatureStore, Hyperparams, LatentModel, Scale, decode_prediction
from .features import similarity_matrix

_PROJ_MAGIC = b"VANR"


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class AnchorProjections:
    anchors: np.ndarray  # item indices into the feature store / model
    matrices: np.ndarray  # (n_anchors, d, feature_dim)
    ridge_lambda: float
    ridge_kappa: float
    anchor_ids: np.ndarray | None = None  # external ids, written to disk

    @property
    def num_anchors(self) -> int:
        return len(self.anchors)

    @property
    def d(self) -> int:
        return self.matrices.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.matrices.shape[2]


def _neighbourhood(g: int, pool: np.ndarray, sims_g: np.ndarray, max_neighbors: int | None):
    others = pool[pool != g]
    if max_neighbors is not None and max_neighbors < len(others):
        s = sims_g[others]
        order = np.lexsort((others, -s))[:max_neighbors]
        others = np.sort(others[order])
    return others


def _ridge_operator(N: np.ndarray, gamma: np.ndarray, lam: float, kappa: float) -> np.ndarray:
    """Return ``[N'N + lam (kappa G'G + (1-kappa) I)]^-1 N'`` for column-stacked ``N``."""
    A = N.T @ N
    A[np.diag_indices_from(A)] += lam * (kappa * gamma**2 + (1.0 - kappa))
    try:
        factor = sla.cho_factor(A, lower=True, check_finite=False)
        out = sla.cho_solve(factor, N.T, check_finite=False)
    except np.linalg.LinAlgError:
        raise SingularSystemError(
            "ridge system is singular; use ridge_lambda > 0 (and ridge_kappa < 1 when "
            "neighbours duplicate the anchor)") from None
    if not np.isfinite(out).all():
        raise SingularSystemError("ridge solve produced non-finite weights; use ridge_lambda > 0")
    return out


def _weights_and_neighbours(g, features, hp, pool=None, sims=None, max_neighbors=None):
    if features.num_items < 2:
        raise ValueError("anchored regression needs at least 2 items")
    if features.norms[g] == 0:
        raise ValueError(f"anchor {g} has a zero-norm feature vector")
    pool = np.arange(features.num_items) if pool is None else np.asarray(pool)
    if sims is None:
        sims = similarity_matrix(features.take([g]), features)[0]
    nbrs = _neighbourhood(g, pool, sims, max_neighbors)
    N = features.vectors[nbrs].T  # feature_dim x n_neighbours
    gamma = 1.0 - sims[nbrs]
    op = _ridge_operator(N, gamma, hp.ridge_lambda, hp.ridge_kappa)
    return op, nbrs


def solve_anchor_weights(g: int, features: FeatureStore, hp: Hyperparams,
                         pool=None, max_neighbors: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Reconstruction weights of anchor ``g`` over its neighbours.

    Returns ``(beta, neighbours)`` where ``neighbours`` lists the item
    indices (all of ``pool`` except ``g``, in ascending order) matching the
    entries of ``beta``.
    """
    op, nbrs = _weights_and_neighbours(g, features, hp, pool, max_neighbors=max_neighbors)
    return op @ features.vectors[g], nbrs


def build_projections(model: LatentModel, features: FeatureStore, hp: Hyperparams,
                      anchors=None, max_neighbors: int | None = None,
                      threads: int = 1) -> AnchorProjections:
    """Per-anchor projection ``M_g = N_Q [N_V'N_V + lam(...)]^-1 N_V'``.

    ``anchors`` restricts both the anchor set and every neighbourhood to the
    given items (defaults to all items). ``max_neighbors`` keeps only the
    most similar neighbours of each anchor.
    """
    if model.num_items != features.num_items:
        raise ValueError(f"model has {model.num_items} items, features {features.num_items}")
    anchors = np.arange(features.num_items) if anchors is None else np.asarray(anchors, dtype=np.int64)
    sims = similarity_matrix(features.take(anchors), features)

    def one(i):
        op, nbrs = _weights_and_neighbours(anchors[i], features, hp, anchors, sims[i], max_neighbors)
        return model.Q[:, nbrs] @ op

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            mats = list(pool.map(one, range(len(anchors))))
    else:
        mats = [one(i) for i in range(len(anchors))]
    mats = np.stack(mats) if mats else np.zeros((0, model.d, features.dim))
    return AnchorProjections(anchors, mats, float(hp.ridge_lambda), float(hp.ridge_kappa),
                             features.ids[anchors].copy())


def nearest_anchor(query_v, projections: AnchorProjections, features: FeatureStore) -> int:
    """Position (within ``projections.anchors``) of the most similar anchor;
    ties go to the lowest position."""
    q = np.asarray(query_v, dtype=float).ravel()
    if q.size != features.dim:
        raise ValueError(f"query has dim {q.size}, features have dim {features.dim}")
    qn = np.linalg.norm(q)
    if qn == 0:
        raise ValueError("query feature vector has zero norm")
    anchor_feats = features.vectors[projections.anchors]
    s = (anchor_feats / features.norms[projections.anchors, None]) @ (q / qn)
    return int(np.argmax(s))


def regress_query(query_v, projections: AnchorProjections, features: FeatureStore) -> np.ndarray:
    """Latent estimate ``M_ghat @ query_v`` for a feature vector."""
    pos = nearest_anchor(query_v, projections, features)
    return projections.matrices[pos] @ np.asarray(query_v, dtype=float).ravel()


def regress_queries(queries: np.ndarray, projections: AnchorProjections, features: FeatureStore) -> np.ndarray:
    """Vectorised :func:`regress_query`; returns a (d, n_queries) matrix."""
    queries = np.asarray(queries, dtype=float)
    if queries.ndim != 2 or queries.shape[1] != features.dim:
        raise ValueError(f"queries must have shape (n, {features.dim})")
    qn = np.linalg.norm(queries, axis=1)
    if (qn == 0).any():
        raise ValueError(f"query {int(np.flatnonzero(qn == 0)[0])} has zero norm")
    anchor_unit = features.vectors[projections.anchors] / features.norms[projections.anchors, None]
    best = np.argmax((queries / qn[:, None]) @ anchor_unit.T, axis=1)
    return np.einsum("nij,nj->in", projections.matrices[best], queries)


def predict_cold(query_v, projections: AnchorProjections, features: FeatureStore, model: LatentModel,
                 rater: int, scale: Scale | str = Scale.BINARY, majority: float = 1.0) -> float:
    if not 0 <= rater < model.num_raters:
        raise IndexError(f"rater {rater} out of range [0, {model.num_raters})")
    q_hat = regress_query(query_v, projections, features)
    return decode_prediction(float(model.P[:, rater] @ q_hat), scale, majority)


def save_projections(path, proj: AnchorProjections) -> None:
    ids = proj.anchor_ids if proj.anchor_ids is not None else proj.anchors
    with open(path, "wb") as fh:
        fh.write(_PROJ_MAGIC + struct.pack("<III", proj.num_anchors, proj.d, proj.feature_dim))
        fh.write(struct.pack("<dd", proj.ridge_lambda, proj.ridge_kappa))
        for item_id, M in zip(np.asarray(ids, dtype=np.uint64).tolist(), proj.matrices):
            fh.write(struct.pack("<Q", item_id))
            fh.write(np.ascontiguousarray(M, dtype="<f8").tobytes())


def load_projections(path, features: FeatureStore | None = None) -> AnchorProjections:
    """Read a ``VANR`` file. Anchor ids are resolved to row indices of
    ``features`` when given, otherwise taken as indices directly."""
    raw = Path(path).read_bytes()
    if raw[:4] != _PROJ_MAGIC:
        raise ValueError(f"{path}: not a VANR projection file")
    n, d, dim = struct.unpack_from("<III", raw, 4)
    lam, kappa = struct.unpack_from("<dd", raw, 16)
    rec = np.dtype([("id", "<u8"), ("M", "<f8", (d, dim))])
    if len(raw) != 32 + n * rec.itemsize:
        raise ValueError(f"{path}: truncated or oversized projection file")
    arr = np.frombuffer(raw, dtype=rec, count=n, offset=32)
    ids = arr["id"].copy()
    if features is None:
        anchors = ids.astype(np.int64)
    else:
        lookup = {int(x): i for i, x in enumerate(features.ids.tolist())}
        missing = [int(x) for x in ids if int(x) not in lookup]
        if missing:
            raise ValueError(f"{path}: anchor ids missing from features, e.g. {missing[:5]}")
        anchors = np.array([lookup[int(x)] for x in ids], dtype=np.int64)
    return AnchorProjections(anchors, arr["M"].astype(np.float64).reshape(n, d, dim), lam, kappa, ids)
