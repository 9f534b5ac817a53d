"""Split protocol, known-rating budgets, metrics, baselines and experiment runs.

Half of the items are used for training. Each test item has half of its
received ratings held out. A budget then reveals some of the remaining
ratings to the model before prediction.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .anchored import build_projections, regress_queries
from .core import FeatureStore, Hyperparams, RatingMatrix, Scale, decode_prediction, substream
from .features import build_similarity_graph
from .training import train

_logger = logging.getLogger(__name__)

FULL = "full"
METHODS = ("MF", "MF+VisReg")
REPORT_FIELDS = ("method", "budget", "seed", "accuracy", "mae", "pearson")


def parse_budget(budget) -> int | str:
    """``0`` (visual only), a positive count, or ``"full"``."""
    if isinstance(budget, str):
        b = budget.strip().lower()
        if b in ("full", "fullhistory", "full_history"):
            return FULL
        if b == "visual":
            return 0
        budget = int(b)
    if budget is None:
        return FULL
    if int(budget) < 0:
        raise ValueError("budget must be non-negative")
    return int(budget)


@dataclass(eq=False)
class EvalPlan:
    train_items: np.ndarray
    test_items: np.ndarray
    known: dict[int, np.ndarray]  # test item -> triplet indices revealed to the model
    heldout: dict[int, np.ndarray]  # test item -> triplet indices to predict
    budget: int | str
    seed: int
    excluded: dict[int, str] = field(default_factory=dict)
    short: list[int] = field(default_factory=list)  # items with fewer known ratings than the budget
    train_raters: np.ndarray | None = None

    def training_indices(self, ratings: RatingMatrix) -> np.ndarray:
        in_train = np.isin(ratings.items, self.train_items)
        idx = [np.flatnonzero(in_train)] + [self.known[f] for f in self.test_items.tolist()]
        return np.sort(np.concatenate(idx)).astype(np.int64)

    def heldout_indices(self) -> np.ndarray:
        if not self.heldout:
            return np.zeros(0, dtype=np.int64)
        return np.sort(np.concatenate([self.heldout[f] for f in self.test_items.tolist()])).astype(np.int64)

    def same_as(self, other: EvalPlan) -> bool:
        return (np.array_equal(self.train_items, other.train_items)
                and np.array_equal(self.test_items, other.test_items)
                and all(np.array_equal(self.known[f], other.known[f]) for f in self.known)
                and all(np.array_equal(self.heldout[f], other.heldout[f]) for f in self.heldout)
                and self.known.keys() == other.known.keys())


def make_plan(ratings: RatingMatrix, budget, seed: int = 0, min_received: int = 2) -> EvalPlan:
    """Seeded item split with per-item held-out halves and revealed budgets.

    The split and the held-out sets depend only on ``seed``, never on
    ``budget``, so plans for different budgets share their test data and the
    revealed sets are nested.
    """
    budget = parse_budget(budget)
    counts = ratings.received_counts()
    min_received = max(int(min_received), 2)
    excluded = {int(f): f"received {int(counts[f])} ratings (< {min_received})"
                for f in np.flatnonzero(counts < min_received)}
    eligible = np.flatnonzero(counts >= min_received)

    perm = substream(seed, "split").permutation(eligible)
    n_train = (len(perm) + 1) // 2
    train_items = np.sort(perm[:n_train])
    test_items = np.sort(perm[n_train:])

    order = np.argsort(ratings.items, kind="stable")
    bounds = np.searchsorted(ratings.items[order], np.arange(ratings.num_items + 1))
    shuffle = substream(seed, "shuffle")
    known, heldout, short = {}, {}, []
    for f in test_items.tolist():
        mine = order[bounds[f]:bounds[f + 1]]
        mine = mine[shuffle.permutation(len(mine))]
        n_held = len(mine) // 2
        heldout[f] = np.sort(mine[:n_held])
        pool = mine[n_held:]
        if budget == FULL:
            take = len(pool)
        else:
            take = min(budget, len(pool))
            if take < budget:
                short.append(f)
        known[f] = np.sort(pool[:take])
    return EvalPlan(train_items, test_items, known, heldout, budget, int(seed), excluded, short,
                    np.arange(ratings.num_raters))


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {truth.size} truths")
    if pred.size == 0:
        raise ValueError("metrics need at least one prediction")
    return pred, truth


def accuracy(pred, truth) -> float:
    """Percentage of exactly matching ratings."""
    pred, truth = _pair(pred, truth)
    return 100.0 * np.count_nonzero(pred == truth) / pred.size


def mae(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def pearson(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    if pred.size < 2:
        raise ValueError("Pearson correlation needs at least 2 pairs")
    a = pred - pred.mean()
    b = truth - truth.mean()
    sa, sb = np.sqrt(a @ a), np.sqrt(b @ b)
    if sa == 0 or sb == 0:
        raise ValueError("Pearson correlation is undefined for constant input")
    return float(np.clip((a @ b) / (sa * sb), -1.0, 1.0))


def baseline_majority(ratings: RatingMatrix | np.ndarray) -> float:
    """Most frequent rating value; ties go to the smaller value."""
    values = ratings.values if isinstance(ratings, RatingMatrix) else np.asarray(ratings, dtype=float)
    if len(values) == 0:
        raise ValueError("no ratings to take a majority over")
    uniq, counts = np.unique(values, return_counts=True)
    return float(uniq[np.argmax(counts)])  # unique is sorted, argmax takes the first max


def baseline_random(scale: Scale | str, seed: int, n: int, grid: bool | None = None) -> np.ndarray:
    """Uniform random predictions.

    Binary draws ±1 with equal probability. Stars draws continuously from
    [0.5, 5.0] by default (``grid=True`` draws half-star values instead);
    predictions are never rounded elsewhere either.
    """
    scale = Scale.parse(scale)
    rng = substream(seed, "random-baseline")
    if scale is Scale.BINARY or grid:
        return rng.choice(scale.grid, size=n)
    return rng.uniform(scale.low, scale.high, size=n)


@dataclass
class ExperimentResult:
    method: str
    budget: int | str
    seed: int
    accuracy: float
    mae: float
    pearson: float
    majority: float
    n_train: int
    n_test: int
    raw: np.ndarray = field(repr=False, default=None)
    truth: np.ndarray = field(repr=False, default=None)
    plan: EvalPlan | None = field(repr=False, default=None)

    def row(self) -> dict:
        return {"method": self.method, "budget": self.budget, "seed": self.seed,
                "accuracy": self.accuracy, "mae": self.mae, "pearson": self.pearson}


def run_experiment(ratings: RatingMatrix, features: FeatureStore | None, hp: Hyperparams, budget,
                   method: str = "MF+VisReg", coldstart: bool = False, seed: int | None = None,
                   min_received: int = 10, graph=None, max_neighbors: int | None = None) -> ExperimentResult:
    """Train on the planned split and score the held-out ratings.

    Test items' revealed ratings join the training triplets. With
    ``coldstart`` each test item's factor is replaced by the anchored
    regression estimate from its feature vector, anchors being the training
    items. ``graph`` may be passed to reuse a precomputed similarity graph.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    seed = hp.seed if seed is None else int(seed)
    plan = make_plan(ratings, budget, seed, min_received)
    train_idx = plan.training_indices(ratings)
    test_idx = plan.heldout_indices()
    if np.intersect1d(train_idx, test_idx).size:
        raise AssertionError("held-out ratings leaked into the training set")
    if test_idx.size == 0:
        raise ValueError("plan has no held-out ratings")
    train_set = ratings.subset(train_idx)
    majority = baseline_majority(train_set)

    visual = method == "MF+VisReg" and hp.alpha2 > 0
    if (visual or coldstart) and features is None:
        raise ValueError(f"{method}{' with cold start' if coldstart else ''} needs feature vectors")
    if features is not None and features.num_items != ratings.num_items:
        raise ValueError(f"features cover {features.num_items} items, ratings {ratings.num_items}")
    if visual and graph is None:
        graph = build_similarity_graph(features, hp.neighbor_k)
    run_hp = hp if method == "MF+VisReg" else _without_visual(hp)
    model, _ = train(train_set, graph if visual else None, _with_seed(run_hp, seed))

    if coldstart:
        proj = build_projections(model, features, hp, anchors=plan.train_items, max_neighbors=max_neighbors)
        model.Q[:, plan.test_items] = regress_queries(features.vectors[plan.test_items], proj, features)

    r, f, truth = ratings.raters[test_idx], ratings.items[test_idx], ratings.values[test_idx]
    raw = np.einsum("ij,ij->j", model.P[:, r], model.Q[:, f])
    decoded = decode_prediction(raw, ratings.scale, majority)
    scored = raw if ratings.scale is Scale.BINARY else decoded
    try:
        corr = pearson(scored, truth)
    except ValueError:
        corr = float("nan")
    return ExperimentResult(method, plan.budget, seed, accuracy(decoded, truth), mae(decoded, truth), corr,
                            majority, len(train_idx), len(test_idx), raw, truth, plan)


def _without_visual(hp: Hyperparams) -> Hyperparams:
    return Hyperparams(**{**asdict(hp), "alpha2": 0.0})


def _with_seed(hp: Hyperparams, seed: int) -> Hyperparams:
    return hp if hp.seed == seed else Hyperparams(**{**asdict(hp), "seed": seed})


def _budget_key(b):
    return (1, 0) if b == FULL else (0, b)


def sort_rows(rows: list[dict]) -> list[dict]:
    return sorted(rows, key=lambda r: (r["method"], _budget_key(r["budget"]), r["seed"]))


def report_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in sort_rows(rows):
        w.writerow({k: (repr(float(row[k])) if k in ("accuracy", "mae", "pearson") else row[k])
                    for k in REPORT_FIELDS})
    return buf.getvalue()


def report_json(rows: list[dict]) -> str:
    clean = [{k: (None if isinstance(row[k], float) and np.isnan(row[k]) else row[k]) for k in REPORT_FIELDS}
             for row in sort_rows(rows)]
    return json.dumps(clean, indent=2) + "\n"


def write_report(rows: list[dict], csv_path=None, json_path=None) -> None:
    if csv_path:
        Path(csv_path).write_text(report_csv(rows))
    if json_path:
        Path(json_path).write_text(report_json(rows))


def read_report_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        out = []
        for row in csv.DictReader(fh):
            out.append({"method": row["method"], "budget": parse_budget(row["budget"]),
                        "seed": int(row["seed"]), "accuracy": float(row["accuracy"]),
                        "mae": float(row["mae"]), "pearson": float(row["pearson"])})
        return out
