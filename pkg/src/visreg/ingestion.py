"""Dataset loaders and writers: MovieLens ``::`` ratings, triplet CSV,
demographics CSV, and feature files aligned to the rating item ids."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .analysis import DemographicTable
from .core import FeatureStore, RatingMatrix, Scale
from .features import read_features

_logger = logging.getLogger(__name__)


class IdMap:
    """Bijection between external ids (strings) and dense indices, assigned
    in first-appearance order."""

    def __init__(self, external=()):
        self.external: list[str] = []
        self._index: dict[str, int] = {}
        for e in external:
            self.add(e)

    def add(self, ext) -> int:
        ext = str(ext)
        idx = self._index.get(ext)
        if idx is None:
            idx = self._index[ext] = len(self.external)
            self.external.append(ext)
        return idx

    def index(self, ext) -> int:
        return self._index[str(ext)]

    def get(self, ext, default=None):
        return self._index.get(str(ext), default)

    def __contains__(self, ext) -> bool:
        return str(ext) in self._index

    def __len__(self) -> int:
        return len(self.external)

    def __eq__(self, other) -> bool:
        return isinstance(other, IdMap) and self.external == other.external

    def subset(self, keep: np.ndarray) -> IdMap:
        return IdMap(self.external[i] for i in np.asarray(keep).tolist())


@dataclass(eq=False)
class DatasetBundle:
    ratings: RatingMatrix
    rater_ids: IdMap
    item_ids: IdMap
    features: FeatureStore | None = None
    rater_demo: DemographicTable | None = None
    item_demo: DemographicTable | None = None
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.rater_ids) != self.ratings.num_raters or len(self.item_ids) != self.ratings.num_items:
            raise ValueError("id maps do not match the rating matrix dimensions")


def _fmt_value(v: float, scale: Scale) -> str:
    if scale is Scale.BINARY:
        return "1" if v > 0 else "-1"
    return format(v, "g")


def _bundle(rows, scale: Scale, path, report) -> DatasetBundle:
    if not rows:
        raise ValueError(f"{path}: no ratings")
    raters, items = IdMap(), IdMap()
    latest: dict[tuple[int, int], float] = {}
    dups = 0
    for r, i, v in rows:
        key = (raters.add(r), items.add(i))
        if key in latest:
            dups += 1
            del latest[key]  # re-insert so iteration order reflects the last occurrence
        latest[key] = v
    if dups:
        _logger.warning("%s: %d duplicate ratings; last occurrence kept", path, dups)
    report["duplicates"] = dups
    keys = np.array(list(latest.keys()), dtype=np.int64).reshape(-1, 2)
    vals = np.fromiter(latest.values(), dtype=float, count=len(latest))
    ratings = RatingMatrix(len(raters), len(items), keys[:, 0], keys[:, 1], vals, scale)
    return DatasetBundle(ratings, raters, items, report=report)


def load_movielens(path) -> DatasetBundle:
    """Read ``UserID::MovieID::Rating::Timestamp`` lines as star ratings.

    Timestamps are dropped; a repeated (user, movie) pair keeps its last
    rating and is counted in ``report['duplicates']``.
    """
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("::")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected UserID::MovieID::Rating::Timestamp")
            try:
                value = float(parts[2])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: rating {parts[2]!r} is not a number") from None
            if not Scale.STARS.contains(value):
                raise ValueError(f"{path}:{lineno}: rating {parts[2]} is not on the half-star grid")
            rows.append((parts[0], parts[1], value))
    return _bundle(rows, Scale.STARS, path, {"lines": len(rows)})


def save_movielens(path, bundle: DatasetBundle) -> None:
    """Write ratings in MovieLens format with timestamp 0."""
    r = bundle.ratings
    with open(path, "w") as fh:
        for m, f, v in zip(r.raters.tolist(), r.items.tolist(), r.values.tolist()):
            fh.write(f"{bundle.rater_ids.external[m]}::{bundle.item_ids.external[f]}::{format(v, 'g')}::0\n")


def load_triplets(path, scale: Scale | str = Scale.BINARY) -> DatasetBundle:
    """Read ``rater_id,item_id,value`` CSV lines (an optional header is skipped).

    On the binary scale only -1 and +1 are accepted: an unknown rating is an
    absent line, never a 0.
    """
    scale = Scale.parse(scale)
    rows = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), 1):
            if not rec or not "".join(rec).strip():
                continue
            if len(rec) != 3:
                raise ValueError(f"{path}:{lineno}: expected rater_id,item_id,value")
            try:
                value = float(rec[2])
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise ValueError(f"{path}:{lineno}: value {rec[2]!r} is not a number") from None
            if not scale.contains(value):
                raise ValueError(f"{path}:{lineno}: value {rec[2]} is not on the {scale.value} scale")
            rows.append((rec[0].strip(), rec[1].strip(), value))
    return _bundle(rows, scale, path, {"lines": len(rows)})


def save_triplets(path, bundle: DatasetBundle) -> None:
    r = bundle.ratings
    with open(path, "w") as fh:
        for m, f, v in zip(r.raters.tolist(), r.items.tolist(), r.values.tolist()):
            fh.write(f"{bundle.rater_ids.external[m]},{bundle.item_ids.external[f]},{_fmt_value(v, r.scale)}\n")


def load_demographics(path) -> dict[str, tuple[float, str]]:
    """``subject_id,age,group`` CSV into ``{subject_id: (age, group)}``."""
    out = {}
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), 1):
            if not rec:
                continue
            if len(rec) != 3:
                raise ValueError(f"{path}:{lineno}: expected subject_id,age,group")
            try:
                age = float(rec[1])
            except ValueError:
                if lineno == 1:
                    continue
                raise ValueError(f"{path}:{lineno}: age {rec[1]!r} is not a number") from None
            out[rec[0].strip()] = (age, rec[2].strip())
    return out


def save_demographics(path, demo: dict[str, tuple[float, str]]) -> None:
    with open(path, "w") as fh:
        fh.write("subject_id,age,group\n")
        for sid, (age, group) in demo.items():
            fh.write(f"{sid},{format(age, 'g')},{group}\n")


def _table(ids: IdMap, demo: dict) -> DemographicTable:
    ages = np.array([demo.get(e, (np.nan, ""))[0] for e in ids.external], dtype=float)
    groups = np.array([demo.get(e, (np.nan, ""))[1] for e in ids.external], dtype=object)
    return DemographicTable(ages, groups)


def attach_demographics(bundle: DatasetBundle, demo: dict | str | Path) -> DatasetBundle:
    """Per-rater and per-item tables (NaN age where a subject is missing)."""
    if not isinstance(demo, dict):
        demo = load_demographics(demo)
    out = replace(bundle, rater_demo=_table(bundle.rater_ids, demo), item_demo=_table(bundle.item_ids, demo))
    out.report = {**bundle.report,
                  "demographics_missing_raters": int(np.isnan(out.rater_demo.ages).sum()),
                  "demographics_missing_items": int(np.isnan(out.item_demo.ages).sum())}
    return out


def attach_features(bundle: DatasetBundle, features: FeatureStore | str | Path) -> DatasetBundle:
    """Align feature rows to the bundle's item indices.

    Every rated item needs a feature vector; otherwise loading fails with a
    coverage report listing the missing item ids.
    """
    if not isinstance(features, FeatureStore):
        features = read_features(features)
    lookup = {str(int(i)): row for row, i in enumerate(features.ids.tolist())}
    missing = [e for e in bundle.item_ids.external if e not in lookup]
    if missing:
        raise ValueError(f"features cover {len(bundle.item_ids) - len(missing)} of {len(bundle.item_ids)} "
                         f"items; missing ids include {missing[:10]}")
    rows = np.array([lookup[e] for e in bundle.item_ids.external], dtype=np.int64)
    out = replace(bundle, features=features.take(rows))
    out.report = {**bundle.report, "unused_feature_rows": features.num_items - len(rows)}
    return out


def filter_dataset(bundle: DatasetBundle, min_received: int = 10, age_bounds=None,
                   min_given: int = 0) -> DatasetBundle:
    """Drop items with too few received ratings, raters with too few given
    ratings, and subjects outside ``age_bounds``, repeating until nothing
    changes. Indices are compacted; removal counts go in ``report``.
    """
    r = bundle.ratings
    keep_r = np.ones(r.num_raters, bool)
    keep_i = np.ones(r.num_items, bool)
    if age_bounds is not None:
        lo, hi = age_bounds
        for demo, keep in ((bundle.rater_demo, keep_r), (bundle.item_demo, keep_i)):
            if demo is None:
                raise ValueError("age bounds need demographics attached to the bundle")
            ok = (demo.ages >= lo) & (demo.ages <= hi)  # NaN ages fail
            keep &= ok
    active = keep_r[r.raters] & keep_i[r.items]
    rounds = 0
    while True:
        rounds += 1
        received = np.bincount(r.items[active], minlength=r.num_items)
        given = np.bincount(r.raters[active], minlength=r.num_raters)
        new_i = keep_i & (received >= min_received)
        new_r = keep_r & (given >= min_given)
        if np.array_equal(new_i, keep_i) and np.array_equal(new_r, keep_r):
            break
        keep_i, keep_r = new_i, new_r
        active = keep_r[r.raters] & keep_i[r.items]

    ri, ii = np.flatnonzero(keep_r), np.flatnonzero(keep_i)
    rmap = np.full(r.num_raters, -1)
    rmap[ri] = np.arange(len(ri))
    imap = np.full(r.num_items, -1)
    imap[ii] = np.arange(len(ii))
    sel = np.flatnonzero(active)
    ratings = RatingMatrix(len(ri), len(ii), rmap[r.raters[sel]], imap[r.items[sel]], r.values[sel], r.scale)

    def sub(demo, idx):
        if demo is None:
            return None
        return DemographicTable(demo.ages[idx], None if demo.groups is None else demo.groups[idx],
                                None if demo.hotness is None else demo.hotness[idx],
                                tuple(age_bounds) if age_bounds is not None else demo.age_bounds)

    report = {**bundle.report, "removed_items": int(r.num_items - len(ii)),
              "removed_raters": int(r.num_raters - len(ri)), "removed_ratings": int(len(r) - len(sel)),
              "filter_rounds": rounds}
    return DatasetBundle(ratings, bundle.rater_ids.subset(ri), bundle.item_ids.subset(ii),
                         None if bundle.features is None else bundle.features.take(ii),
                         sub(bundle.rater_demo, ri), sub(bundle.item_demo, ii), report)


def load_dataset(ratings_path, fmt: str = "triplets", scale: Scale | str = Scale.BINARY,
                 features=None, demographics=None) -> DatasetBundle:
    """Convenience loader combining ratings, features and demographics."""
    if fmt == "movielens":
        bundle = load_movielens(ratings_path)
    elif fmt == "triplets":
        bundle = load_triplets(ratings_path, scale)
    else:
        raise ValueError(f"unknown ratings format {fmt!r}")
    if features is not None:
        bundle = attach_features(bundle, features)
    if demographics is not None:
        bundle = attach_demographics(bundle, demographics)
    return bundle
