import logging

import numpy as np
import pytest

from visreg.core import FeatureStore, RatingMatrix
from visreg.features import write_features
from visreg.ingestion import (DatasetBundle, IdMap, attach_demographics, attach_features, filter_dataset,
                              load_dataset, load_demographics, load_movielens, load_triplets,
                              save_demographics, save_movielens, save_triplets)


class TestMovieLens:
    def test_documented_line(self, tmp_path):
        p = tmp_path / "r.dat"
        p.write_text("1::122::5::838985046\n")
        b = load_movielens(p)
        np.testing.assert_array_equal(b.ratings.raters, [0])
        np.testing.assert_array_equal(b.ratings.items, [0])
        np.testing.assert_array_equal(b.ratings.values, [5.0])
        assert b.rater_ids.external == ["1"] and b.item_ids.external == ["122"]
        assert b.ratings.scale.value == "stars"

    def test_empty_file(self, tmp_path):
        p = tmp_path / "r.dat"
        p.write_text("")
        with pytest.raises(ValueError, match="no ratings"):
            load_movielens(p)

    def test_counts_match_line_oracle(self, tmp_path):
        rng = np.random.default_rng(0)
        pairs = set()
        while len(pairs) < 100:
            pairs.add((int(rng.integers(1, 30)), int(rng.integers(1, 40))))
        lines = [f"{u}::{m}::{rng.integers(1, 11) / 2:g}::{rng.integers(1e9)}" for u, m in sorted(pairs)]
        p = tmp_path / "r.dat"
        p.write_text("\n".join(lines) + "\n")
        b = load_movielens(p)
        assert len(b.ratings) == sum(1 for line in p.read_text().splitlines() if line)
        assert b.ratings.num_raters == len({line.split("::")[0] for line in lines})
        assert b.ratings.num_items == len({line.split("::")[1] for line in lines})
        assert b.report["duplicates"] == 0

    def test_malformed_and_off_grid(self, tmp_path):
        p = tmp_path / "r.dat"
        p.write_text("1::2::4::0\n1::3\n")
        with pytest.raises(ValueError, match=":2:"):
            load_movielens(p)
        p.write_text("1::2::4.2::0\n")
        with pytest.raises(ValueError, match="half-star"):
            load_movielens(p)

    def test_duplicates_last_wins(self, tmp_path, caplog):
        p = tmp_path / "r.dat"
        p.write_text("1::2::4::0\n1::3::2::0\n1::2::1.5::0\n")
        with caplog.at_level(logging.WARNING):
            b = load_movielens(p)
        assert b.report["duplicates"] == 1
        assert "duplicate" in caplog.text
        assert dict(zip(b.ratings.items.tolist(), b.ratings.values.tolist())) == {0: 1.5, 1: 2.0}

    def test_round_trip(self, tmp_path):
        p, q = tmp_path / "a.dat", tmp_path / "b.dat"
        p.write_text("10::5::3.5::0\n7::5::1::0\n10::2::0.5::0\n")
        save_movielens(q, load_movielens(p))
        assert q.read_bytes() == p.read_bytes()


class TestTriplets:
    def test_positive_line(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("7,9,1\n")
        b = load_triplets(p, "binary")
        np.testing.assert_array_equal(b.ratings.values, [1.0])
        assert b.rater_ids.index("7") == 0 and b.item_ids.index("9") == 0

    def test_zero_is_rejected(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("1,2,-1\n7,9,0\n")
        with pytest.raises(ValueError, match=":2:"):
            load_triplets(p, "binary")

    def test_header_skipped(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("rater_id,item_id,value\n1,2,-1\n")
        assert len(load_triplets(p).ratings) == 1

    @pytest.mark.parametrize("scale", ["binary", "stars"])
    def test_10k_round_trip_is_byte_exact(self, tmp_path, scale):
        rng = np.random.default_rng(5)
        cells = rng.choice(300 * 200, 10_000, replace=False)
        if scale == "binary":
            vals = ["1" if x else "-1" for x in rng.random(10_000) < 0.5]
        else:
            vals = [format(x, "g") for x in rng.integers(1, 11, 10_000) / 2]
        text = "".join(f"u{c // 200},i{c % 200},{v}\n" for c, v in zip(cells.tolist(), vals))
        p, q = tmp_path / "a.csv", tmp_path / "b.csv"
        p.write_text(text)
        b = load_triplets(p, scale)
        assert len(b.ratings) == 10_000
        save_triplets(q, b)
        assert q.read_bytes() == p.read_bytes()
        b2 = load_triplets(q, scale)
        assert b2.rater_ids == b.rater_ids and b2.item_ids == b.item_ids
        np.testing.assert_array_equal(b2.ratings.values, b.ratings.values)


def test_id_map_first_appearance():
    m = IdMap(["c", "a", "c", "b"])
    assert m.external == ["c", "a", "b"]
    assert m.index("b") == 2 and "a" in m and m.get("z") is None
    assert m.subset(np.array([2, 0])).external == ["b", "c"]


def test_bundle_dimension_check():
    r = RatingMatrix(2, 1, [0, 1], [0, 0], [1, 1])
    with pytest.raises(ValueError, match="id maps"):
        DatasetBundle(r, IdMap(["a"]), IdMap(["x"]))


def make_bundle(raters, items, values=None, n_raters=None, n_items=None):
    raters, items = np.asarray(raters), np.asarray(items)
    n_r = n_raters or int(raters.max()) + 1
    n_i = n_items or int(items.max()) + 1
    vals = np.ones(len(raters)) if values is None else values
    return DatasetBundle(RatingMatrix(n_r, n_i, raters, items, vals),
                         IdMap(f"r{i}" for i in range(n_r)), IdMap(f"i{i}" for i in range(n_i)))


def filter_oracle(pairs, min_received, min_given):
    """Repeat removal passes over a Python list until nothing changes."""
    pairs = list(pairs)
    while True:
        rec, giv = {}, {}
        for m, f in pairs:
            rec[f] = rec.get(f, 0) + 1
            giv[m] = giv.get(m, 0) + 1
        kept = [(m, f) for m, f in pairs if rec[f] >= min_received and giv[m] >= min_given]
        if kept == pairs:
            return kept
        pairs = kept


class TestFilter:
    def test_item_with_nine_ratings_removed(self):
        b = make_bundle(list(range(10)) + list(range(9)), [0] * 10 + [1] * 9)
        out = filter_dataset(b, min_received=10)
        assert out.item_ids.external == ["i0"]
        assert out.report["removed_items"] == 1 and out.report["removed_ratings"] == 9

    def test_threshold_zero_is_identity(self):
        rng = np.random.default_rng(0)
        cells = rng.choice(200, 60, replace=False)
        b = make_bundle(cells // 20, cells % 20, n_raters=10, n_items=20)
        out = filter_dataset(b, min_received=0)
        np.testing.assert_array_equal(out.ratings.raters, b.ratings.raters)
        np.testing.assert_array_equal(out.ratings.items, b.ratings.items)
        assert out.item_ids == b.item_ids and out.rater_ids == b.rater_ids

    def test_cascade_reaches_fixed_point(self):
        # dropping rater 2 (one rating given) leaves item 1 below threshold
        b = make_bundle([0, 1, 0, 2, 1], [0, 0, 1, 1, 2], n_items=3)
        out = filter_dataset(b, min_received=2, min_given=2)
        assert out.report["filter_rounds"] > 2
        kept = filter_oracle(zip(b.ratings.raters.tolist(), b.ratings.items.tolist()), 2, 2)
        got = [(out.rater_ids.external[m], out.item_ids.external[f])
               for m, f in zip(out.ratings.raters.tolist(), out.ratings.items.tolist())]
        assert got == [(f"r{m}", f"i{f}") for m, f in kept]

    def test_random_cascades_match_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            cells = rng.choice(30 * 25, int(rng.integers(40, 200)), replace=False)
            b = make_bundle(cells // 25, cells % 25, n_raters=30, n_items=25)
            mr, mg = int(rng.integers(1, 8)), int(rng.integers(0, 6))
            out = filter_dataset(b, min_received=mr, min_given=mg)
            kept = filter_oracle(zip(b.ratings.raters.tolist(), b.ratings.items.tolist()), mr, mg)
            got = [(out.rater_ids.external[m], out.item_ids.external[f])
                   for m, f in zip(out.ratings.raters.tolist(), out.ratings.items.tolist())]
            assert got == [(f"r{m}", f"i{f}") for m, f in kept]

    def test_age_bounds(self):
        b = make_bundle([0, 1, 2], [0, 0, 1])
        demo = {"r0": (20, "f"), "r1": (60, "m"), "r2": (30, "f"), "i0": (25, "m"), "i1": (31, "f")}
        out = filter_dataset(attach_demographics(b, demo), min_received=1, age_bounds=(18, 40))
        assert out.rater_ids.external == ["r0", "r2"]
        assert out.rater_demo.age_bounds == (18, 40)
        with pytest.raises(ValueError, match="demographics"):
            filter_dataset(b, min_received=1, age_bounds=(18, 40))


class TestSidecars:
    def test_features_coverage(self, tmp_path):
        b = make_bundle([0, 1], [0, 1])  # items "i0", "i1" are not numeric ids
        with pytest.raises(ValueError, match="missing ids"):
            attach_features(b, FeatureStore(np.eye(2), np.array([0, 1], dtype=np.uint64)))
        p = tmp_path / "r.csv"
        p.write_text("1,30,1\n2,10,-1\n")
        fs = FeatureStore(np.arange(6.0).reshape(3, 2), np.array([10, 20, 30], dtype=np.uint64))
        write_features(tmp_path / "f.tsv", fs)
        out = load_dataset(p, features=tmp_path / "f.tsv")
        np.testing.assert_array_equal(out.features.vectors, [[4.0, 5.0], [0.0, 1.0]])
        assert out.report["unused_feature_rows"] == 1

    def test_demographics_round_trip(self, tmp_path):
        p, q = tmp_path / "d.csv", tmp_path / "e.csv"
        p.write_text("subject_id,age,group\n1,25,f\n2,31.5,m\n")
        demo = load_demographics(p)
        assert demo == {"1": (25.0, "f"), "2": (31.5, "m")}
        save_demographics(q, demo)
        assert q.read_bytes() == p.read_bytes()

    def test_missing_demographics_are_nan(self):
        b = attach_demographics(make_bundle([0, 1], [0, 0]), {"r0": (22, "f")})
        assert b.rater_demo.ages[0] == 22 and np.isnan(b.rater_demo.ages[1])
        assert b.report["demographics_missing_raters"] == 1
