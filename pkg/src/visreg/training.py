"""Gradient-descent matrix factorisation with an optional visual-similarity
penalty on the item factors.

The objective is::

    1/2 sum_obs (R_mf - P_m.Q_f)^2
      + alpha1/2 (|P|^2 + |Q|^2)
      + alpha2/2 sum_{(f,g) in graph} (S_fg - Q_f.Q_g)^2

where the last sum runs over the directed edges of a ``SimilarityGraph``.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .core import Hyperparams, LatentModel, RatingMatrix, substream
from .features import SimilarityGraph

_logger = logging.getLogger(__name__)

_MODEL_MAGIC = b"VMF1"


class TrainingDiverged(RuntimeError):
    pass


class LossTerms(NamedTuple):
    total: float
    data: float
    l2: float
    visual: float


@dataclass
class TrainReport:
    history: np.ndarray  # (epochs_run, 4): total, data, l2, visual at the start of each epoch
    epochs_run: int
    final_gradient_norm: float
    final_loss: LossTerms | None = None
    converged: bool = False

    @property
    def losses(self) -> np.ndarray:
        return self.history[:, 0]

    def to_csv(self, path) -> None:
        rows = ["epoch,total,data,l2,visual"]
        for e, (t, d, l2, v) in enumerate(self.history.tolist()):
            rows.append(f"{e},{t!r},{d!r},{l2!r},{v!r}")
        Path(path).write_text("\n".join(rows) + "\n")


class _SparsePattern:
    """CSR matrix with a fixed sparsity pattern whose values are refilled
    from an array aligned with the original (row, col) order."""

    def __init__(self, rows, cols, shape):
        n = len(rows)
        coo = sp.coo_matrix((np.arange(1, n + 1, dtype=np.float64), (rows, cols)), shape=shape)
        self.csr = coo.tocsr()
        self.csr.sort_indices()
        self.perm = self.csr.data.astype(np.int64) - 1

    def fill(self, values):
        m = self.csr.copy()
        m.data = np.asarray(values, dtype=np.float64)[self.perm]
        return m


@dataclass
class _Problem:
    """Precomputed index structures for repeated loss/gradient evaluation."""

    ratings: RatingMatrix
    graph: SimilarityGraph | None
    hp: Hyperparams
    rating_pattern: _SparsePattern = field(init=False)
    edge_pattern: _SparsePattern | None = field(init=False)
    edges: tuple | None = field(init=False)

    def __post_init__(self):
        r = self.ratings
        self.rating_pattern = _SparsePattern(r.raters, r.items, (r.num_raters, r.num_items))
        self.edges = None
        self.edge_pattern = None
        if self.graph is not None and self.hp.alpha2 != 0:
            if self.graph.num_items != r.num_items:
                raise ValueError(f"graph covers {self.graph.num_items} items, ratings {r.num_items}")
            src, dst, s = self.graph.edges()
            self.edges = (src, dst, s)
            self.edge_pattern = _SparsePattern(src, dst, (r.num_items, r.num_items))

    def evaluate(self, P, Q, want_grad=True):
        r, hp = self.ratings, self.hp
        pred = np.einsum("ij,ij->j", P[:, r.raters], Q[:, r.items])
        resid = pred - r.values
        data = 0.5 * float(resid @ resid)
        l2 = 0.5 * hp.alpha1 * float(np.sum(P * P) + np.sum(Q * Q))
        visual = 0.0
        dP = dQ = None
        if want_grad:
            E = self.rating_pattern.fill(resid)
            dP = (E @ Q.T).T + hp.alpha1 * P
            dQ = (E.T @ P.T).T + hp.alpha1 * Q
        if self.edges is not None:
            src, dst, s = self.edges
            vres = np.einsum("ij,ij->j", Q[:, src], Q[:, dst]) - s
            visual = 0.5 * hp.alpha2 * float(vres @ vres)
            if want_grad:
                W = self.edge_pattern.fill(vres)
                # edge (f, g) contributes to both endpoints
                dQ = dQ + hp.alpha2 * ((W @ Q.T).T + (W.T @ Q.T).T)
        terms = LossTerms(data + l2 + visual, data, l2, visual)
        return terms, dP, dQ


def init_model(ratings: RatingMatrix, d: int = 20, seed: int = 0, init_scale: float = 0.1) -> LatentModel:
    """Uniform(-init_scale, init_scale) factors from the seed's ``init`` stream."""
    if d < 1:
        raise ValueError("latent dimension must be >= 1")
    rng = substream(seed, "init")
    P = rng.uniform(-1.0, 1.0, size=(d, ratings.num_raters)) * init_scale
    Q = rng.uniform(-1.0, 1.0, size=(d, ratings.num_items)) * init_scale
    return LatentModel(P, Q)


def _check(model: LatentModel, ratings: RatingMatrix, graph: SimilarityGraph | None):
    model.check_compatible(ratings)
    if graph is not None and graph.num_items != model.num_items:
        raise ValueError(f"graph covers {graph.num_items} items, model {model.num_items}")


def loss(model: LatentModel, ratings: RatingMatrix, graph: SimilarityGraph | None,
         hp: Hyperparams) -> LossTerms:
    _check(model, ratings, graph)
    terms, _, _ = _Problem(ratings, graph, hp).evaluate(model.P, model.Q, want_grad=False)
    return terms


def gradients(model: LatentModel, ratings: RatingMatrix, graph: SimilarityGraph | None,
              hp: Hyperparams) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of :func:`loss` with respect to ``P`` and ``Q``."""
    _check(model, ratings, graph)
    _, dP, dQ = _Problem(ratings, graph, hp).evaluate(model.P, model.Q)
    return dP, dQ


def train(ratings: RatingMatrix, graph: SimilarityGraph | None, hp: Hyperparams,
          model: LatentModel | None = None) -> tuple[LatentModel, TrainReport]:
    """Full-batch gradient descent with a fixed step size.

    Runs ``hp.epochs`` steps or stops early once the gradient norm falls
    below ``hp.grad_tol``. Raises :class:`TrainingDiverged` if the loss stops
    being finite.
    """
    if len(ratings) == 0:
        raise ValueError("training needs at least one rating")
    if model is None:
        model = init_model(ratings, hp.dim, hp.seed, hp.init_scale)
    else:
        model = model.copy()
    _check(model, ratings, graph)
    problem = _Problem(ratings, graph, hp)
    P, Q = model.P, model.Q
    history = []
    gnorm = np.inf
    converged = False
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(hp.epochs):
            terms, dP, dQ = problem.evaluate(P, Q)
            if not np.isfinite(terms.total):
                raise TrainingDiverged(f"loss became non-finite at epoch {epoch}; lower the learning rate")
            history.append(terms)
            gnorm = float(np.sqrt(np.sum(dP * dP) + np.sum(dQ * dQ)))
            if gnorm < hp.grad_tol:
                converged = True
                break
            P = P - hp.learning_rate * dP
            Q = Q - hp.learning_rate * dQ
        final, dP, dQ = problem.evaluate(P, Q)
    if not np.isfinite(final.total):
        raise TrainingDiverged(f"loss became non-finite at epoch {len(history)}; lower the learning rate")
    if not converged:
        gnorm = float(np.sqrt(np.sum(dP * dP) + np.sum(dQ * dQ)))
    _logger.debug("trained %d epochs, final loss %.6g, |grad| %.3g", len(history), final.total, gnorm)
    report = TrainReport(np.array(history, dtype=float).reshape(-1, 4), len(history), gnorm, final, converged)
    return LatentModel(P, Q), report


def save_model(path, model: LatentModel) -> None:
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC + struct.pack("<III", model.d, model.num_raters, model.num_items))
        fh.write(np.ascontiguousarray(model.P, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.Q, dtype="<f8").tobytes())


def load_model(path) -> LatentModel:
    raw = Path(path).read_bytes()
    if raw[:4] != _MODEL_MAGIC:
        raise ValueError(f"{path}: not a VMF1 model file")
    d, m, f = struct.unpack_from("<III", raw, 4)
    if len(raw) != 16 + 8 * d * (m + f):
        raise ValueError(f"{path}: truncated or oversized model file")
    P = np.frombuffer(raw, dtype="<f8", count=d * m, offset=16).reshape(d, m)
    Q = np.frombuffer(raw, dtype="<f8", count=d * f, offset=16 + 8 * d * m).reshape(d, f)
    return LatentModel(P.astype(np.float64), Q.astype(np.float64))
