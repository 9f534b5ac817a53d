"""Command-line pipeline: ``visreg {train,project,predict,evaluate,analyze}``.

Every flag may also come from ``--config FILE`` holding ``key = value``
lines (dashes or underscores in keys); flags on the command line win.
Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or validation
error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import analysis, evaluation
from .anchored import (SingularSystemError, build_projections, load_projections, regress_queries,
                       save_projections)
from .core import FeatureStore, Hyperparams, Scale, decode_prediction
from .features import apply_pca, build_similarity_graph, fit_pca, read_features
from .ingestion import IdMap, attach_demographics, attach_features, filter_dataset, load_dataset
from .synthetic import make_synthetic
from .training import TrainingDiverged, load_model, save_model, train

_logger = logging.getLogger("visreg")


class UsageError(Exception):
    pass


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("VISREG_THREADS", "1")))
    except ValueError:
        return 1


def _csv_list(text, conv=str):
    return [conv(x.strip()) for x in str(text).split(",") if x.strip()]


# ---------------------------------------------------------------------------
# config handling


def read_config(path) -> dict:
    cfg = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        cfg[key.strip().replace("-", "_")] = value.strip()
    return cfg


def _apply_config(parser: argparse.ArgumentParser, sub: argparse.ArgumentParser, cfg: dict):
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in cfg.items():
        if key not in known:
            raise UsageError(f"unknown config key {key!r}")
        action = known[key]
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            defaults[key] = action.type(raw)
        else:
            defaults[key] = raw
    sub.set_defaults(**defaults)


# ---------------------------------------------------------------------------
# shared option groups


def _add_data(p, features_required=False):
    p.add_argument("--ratings", help="ratings file (triplet CSV or MovieLens ::)")
    p.add_argument("--format", default="triplets", choices=["triplets", "movielens"])
    p.add_argument("--scale", default=None, choices=["binary", "stars"],
                   help="rating scale (MovieLens is always stars)")
    p.add_argument("--features", help="feature file (text '#dim D' or binary VFEA)")
    p.add_argument("--pca-energy", type=float, default=0.99,
                   help="PCA energy kept before computing similarities (0 disables)")
    p.add_argument("--min-received", type=int, default=0,
                   help="drop items with fewer received ratings before anything else")


def _add_hp(p):
    p.add_argument("--dim", type=int, default=20)
    p.add_argument("--alpha1", type=float, default=0.1)
    p.add_argument("--alpha2", type=float, default=None,
                   help="visual weight (default 0.1 binary, 0.001 stars)")
    p.add_argument("--lr", "--learning-rate", dest="lr", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init-scale", type=float, default=0.1)
    p.add_argument("--knn", type=int, default=50, help="neighbours per item in the visual term (0 = all)")
    p.add_argument("--lambda", dest="ridge_lambda", type=float, default=0.1)
    p.add_argument("--kappa", dest="ridge_kappa", type=float, default=0.5)


def _hp(args, scale: Scale) -> Hyperparams:
    alpha2 = args.alpha2
    if alpha2 is None:
        alpha2 = 0.1 if scale is Scale.BINARY else 0.001
    try:
        return Hyperparams(alpha1=args.alpha1, alpha2=alpha2, learning_rate=args.lr, epochs=args.epochs,
                           seed=args.seed, init_scale=args.init_scale, neighbor_k=args.knn,
                           ridge_lambda=args.ridge_lambda, ridge_kappa=args.ridge_kappa, dim=args.dim)
    except ValueError as err:
        raise UsageError(str(err)) from None


def _load(args, need_features=False, demographics=None):
    if not args.ratings:
        raise UsageError("--ratings is required")
    if need_features and not args.features:
        raise UsageError("--features is required here")
    scale = "stars" if args.format == "movielens" else (args.scale or "binary")
    bundle = load_dataset(args.ratings, args.format, scale, demographics=demographics)
    if args.min_received:
        bundle = filter_dataset(bundle, args.min_received)
    if args.features:
        bundle = attach_features(bundle, args.features)
        bundle.features = _reduce(bundle.features, args.pca_energy)
    return bundle


def _reduce(features: FeatureStore, energy, *others: FeatureStore):
    """PCA fitted on ``features``; ``others`` (queries) get the same map."""
    if not energy:
        return (features, *others) if others else features
    reducer = fit_pca(features, energy)
    if reducer.degenerate:
        raise UsageError("features are identical for every item; use --pca-energy 0")
    out = [apply_pca(reducer, f) for f in (features, *others)]
    return tuple(out) if others else out[0]


def _sidecar(path) -> Path:
    return Path(str(path) + ".json")


def _write_sidecar(path, bundle, majority, hp: Hyperparams, pca_energy):
    meta = {"raters": bundle.rater_ids.external, "items": bundle.item_ids.external,
            "scale": bundle.ratings.scale.value, "majority": majority, "hyperparams": asdict(hp),
            "pca_energy": pca_energy}
    _sidecar(path).write_text(json.dumps(meta) + "\n")


def _read_sidecar(path) -> dict:
    p = _sidecar(path)
    if not p.exists():
        raise UsageError(f"missing id map {p} (written by 'visreg train')")
    return json.loads(p.read_text())


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    if args.visreg and not args.features:
        raise UsageError("--visreg requires --features")
    bundle = _load(args)
    hp = _hp(args, bundle.ratings.scale)
    graph = build_similarity_graph(bundle.features, hp.neighbor_k) if args.visreg else None
    model, report = train(bundle.ratings, graph, hp)
    save_model(args.out, model)
    majority = evaluation.baseline_majority(bundle.ratings)
    _write_sidecar(args.out, bundle, majority, hp, args.pca_energy)
    if args.report:
        report.to_csv(args.report)
    _logger.info("trained %d epochs, final loss %.6g", report.epochs_run, report.final_loss.total)
    return 0


def _aligned_features(path, items: list[str]) -> FeatureStore:
    feats = read_features(path)
    lookup = {str(int(i)): r for r, i in enumerate(feats.ids.tolist())}
    missing = [e for e in items if e not in lookup]
    if missing:
        raise UsageError(f"features lack {len(missing)} model items, e.g. {missing[:5]}")
    return feats.take([lookup[e] for e in items])


def _pca_energy(args, meta):
    # the model's training-time setting unless overridden on the command line
    return meta.get("pca_energy", 0) if args.pca_energy is None else args.pca_energy


def cmd_project(args) -> int:
    model = load_model(args.model)
    meta = _read_sidecar(args.model)
    feats = _reduce(_aligned_features(args.features, meta["items"]), _pca_energy(args, meta))
    try:
        hp = Hyperparams(ridge_lambda=args.ridge_lambda, ridge_kappa=args.ridge_kappa)
    except ValueError as err:
        raise UsageError(str(err)) from None
    proj = build_projections(model, feats, hp, max_neighbors=args.max_neighbors, threads=_threads())
    save_projections(args.out, proj)
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    meta = _read_sidecar(args.model)
    scale, majority = Scale.parse(meta["scale"]), meta["majority"]
    raters = meta["raters"]
    if args.raters:
        rmap = IdMap(raters)
        wanted = _csv_list(args.raters)
        unknown = [r for r in wanted if r not in rmap]
        if unknown:
            raise UsageError(f"unknown rater id(s): {unknown[:5]}")
        ridx = np.array([rmap.index(r) for r in wanted], dtype=np.int64)
    else:
        ridx = np.arange(len(raters))
    if (args.item is None) == (args.query_features is None):
        raise UsageError("give exactly one of --item (warm) or --query-features (cold)")
    lines = []
    if args.item is not None:
        items = IdMap(meta["items"])
        if args.item not in items:
            raise UsageError(f"unknown item id {args.item!r}")
        raw = model.P[:, ridx].T @ model.Q[:, items.index(args.item)]
        pred = np.atleast_1d(decode_prediction(raw, scale, majority))
        lines.append("rater_id,prediction")
        lines += [f"{raters[m]},{p!r}" for m, p in zip(ridx.tolist(), pred.tolist())]
    else:
        if not args.projections or not args.features:
            raise UsageError("cold prediction needs --projections and --features")
        feats = _aligned_features(args.features, meta["items"])
        queries = read_features(args.query_features)
        if queries.dim != feats.dim:
            raise UsageError(f"query features have dim {queries.dim}, training features {feats.dim}")
        feats, queries = _reduce(feats, _pca_energy(args, meta), queries)
        proj = load_projections(args.projections, feats)
        q_hat = regress_queries(queries.vectors, proj, feats)
        raw = model.P[:, ridx].T @ q_hat  # raters x queries
        pred = np.atleast_2d(decode_prediction(raw, scale, majority))
        if queries.num_items == 1:
            lines.append("rater_id,prediction")
            lines += [f"{raters[m]},{p!r}" for m, p in zip(ridx.tolist(), pred[:, 0].tolist())]
        else:
            lines.append("query_id,rater_id,prediction")
            for j, qid in enumerate(queries.ids.tolist()):
                lines += [f"{qid},{raters[m]},{p!r}" for m, p in zip(ridx.tolist(), pred[:, j].tolist())]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_evaluate(args) -> int:
    if args.synthetic:
        data = make_synthetic(args.synthetic_raters, args.synthetic_items, rank=args.synthetic_rank,
                              density=args.synthetic_density, feature_noise=args.synthetic_noise,
                              label_noise=args.synthetic_label_noise, scale=args.scale or "binary",
                              seed=args.synthetic_seed)
        ratings, feats = data.ratings, _reduce(data.features, args.pca_energy)
    else:
        bundle = _load(args)
        ratings, feats = bundle.ratings, bundle.features
    hp = _hp(args, ratings.scale)
    budgets = [evaluation.parse_budget(b) for b in _csv_list(args.budgets)]
    seeds = _csv_list(args.seeds, int)
    methods = _csv_list(args.methods)
    for m in methods:
        if m not in evaluation.METHODS:
            raise UsageError(f"unknown method {m!r}; choose from {', '.join(evaluation.METHODS)}")
    if feats is None and (args.coldstart or "MF+VisReg" in methods):
        raise UsageError("MF+VisReg and --coldstart need --features")
    graph = build_similarity_graph(feats, hp.neighbor_k) if feats is not None and hp.alpha2 > 0 else None

    jobs = [(m, b, s) for m in methods for b in budgets for s in seeds]

    def run(job):
        m, b, s = job
        cold = args.coldstart and b == 0
        return evaluation.run_experiment(ratings, feats, hp, b, m, coldstart=cold, seed=s,
                                         min_received=args.min_received or 2, graph=graph).row()

    threads = _threads()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(j) for j in jobs]
    evaluation.write_report(rows, args.out_csv, args.out_json)
    if not args.out_csv and not args.out_json:
        sys.stdout.write(evaluation.report_csv(rows))
    if args.assert_visreg_gain:
        return _check_gain(rows, ratings.scale)
    return 0


def _check_gain(rows, scale: Scale) -> int:
    positive = sorted({r["budget"] for r in rows if r["budget"] != evaluation.FULL and r["budget"] > 0})
    if not positive:
        raise UsageError("--assert-visreg-gain needs a positive numeric budget")
    b = positive[0]

    def mean(method, key):
        vals = [r[key] for r in rows if r["method"] == method and r["budget"] == b]
        if not vals:
            raise UsageError("--assert-visreg-gain needs both MF and MF+VisReg runs")
        return float(np.mean(vals))

    if scale is Scale.BINARY:
        gain = mean("MF+VisReg", "accuracy") - mean("MF", "accuracy")
    else:
        gain = mean("MF", "mae") - mean("MF+VisReg", "mae")
    _logger.info("visual regularisation gain at budget %s: %.4f", b, gain)
    if gain <= 0:
        print(f"MF+VisReg did not beat MF at budget {b} (gain {gain:.4f})", file=sys.stderr)
        return 1
    return 0


def cmd_analyze(args) -> int:
    if not (args.preference_by_age or args.hotness_paradox or args.latent_2d):
        raise UsageError("choose at least one of --preference-by-age, --hotness-paradox, --latent-2d")
    if args.preference_by_age and not args.demographics:
        raise UsageError("--preference-by-age requires --demographics")
    bundle = _load(args, demographics=args.demographics)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = None
    if args.model:
        model = load_model(args.model)
        meta = _read_sidecar(args.model)
        if meta["items"] != bundle.item_ids.external:
            raise UsageError("model items do not match the ratings file")

    if args.preference_by_age:
        bins = _csv_list(args.age_bins, float)
        pct, counts = analysis.preference_by_age(bundle.ratings, bundle.rater_demo, bundle.item_demo, bins)
        (out_dir / "preference_by_age.csv").write_text(analysis.age_table_csv(pct, counts, bins))

    hot = analysis.compute_hotness(bundle.ratings) if bundle.ratings.scale is Scale.BINARY else None
    if args.hotness_paradox:
        if hot is None:
            raise UsageError("--hotness-paradox needs binary ratings")
        rated = np.isfinite(hot)
        sizes = _csv_list(args.sizes, int)
        rows = []
        variants = []
        if bundle.features is not None:
            variants.append(("feature", bundle.features.vectors))
        if model is not None:
            variants.append(("latent", model.Q.T))
        if not variants:
            raise UsageError("--hotness-paradox needs --features and/or --model")
        for name, vecs in variants:
            curve = analysis.hotness_paradox_curve(hot[rated], vecs[rated], sizes)
            rows += [(name, s, p) for s, p in zip(sizes, curve.tolist())]
        (out_dir / "hotness_paradox.csv").write_text(analysis.paradox_csv(rows))

    if args.latent_2d:
        if model is None:
            raise UsageError("--latent-2d requires --model")
        table = analysis.export_latent_2d(model.Q, hot)
        (out_dir / "latent_2d.csv").write_text(analysis.latent_csv(table, bundle.item_ids.external))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="visreg", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key = value file mirroring the flags")
    parser.add_argument("-v", "--verbose", action="store_true")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("train", help="fit latent factors")
    _add_data(p)
    _add_hp(p)
    p.add_argument("--visreg", action="store_true", help="add the visual similarity term")
    p.add_argument("--out", default="model.vmf")
    p.add_argument("--report", default=None, help="per-epoch loss CSV")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("project", help="build cold-start projection matrices")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--pca-energy", type=float, default=None, help="default: the value used in training")
    p.add_argument("--lambda", dest="ridge_lambda", type=float, default=0.1)
    p.add_argument("--kappa", dest="ridge_kappa", type=float, default=0.5)
    p.add_argument("--max-neighbors", type=int, default=None)
    p.add_argument("--out", default="projections.vanr")
    p.set_defaults(func=cmd_project)

    p = subs.add_parser("predict", help="predict ratings for a known item or a feature query")
    p.add_argument("--model", required=True)
    p.add_argument("--item", default=None, help="external id of a trained item (warm)")
    p.add_argument("--query-features", default=None, help="feature file of new items (cold)")
    p.add_argument("--projections", default=None)
    p.add_argument("--features", default=None, help="training features (cold)")
    p.add_argument("--pca-energy", type=float, default=None, help="default: the value used in training")
    p.add_argument("--raters", default=None, help="comma-separated rater ids (default all)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_predict)

    p = subs.add_parser("evaluate", help="run the split protocol over budgets and seeds")
    _add_data(p)
    _add_hp(p)
    p.add_argument("--budgets", default="0,10,100,full")
    p.add_argument("--seeds", default="0")
    p.add_argument("--methods", default="MF,MF+VisReg")
    p.add_argument("--coldstart", action="store_true", help="use anchored regression at budget 0")
    p.add_argument("--out-csv", default=None)
    p.add_argument("--out-json", default=None)
    p.add_argument("--assert-visreg-gain", action="store_true")
    p.add_argument("--synthetic", action="store_true", help="use a generated dataset instead of files")
    p.add_argument("--synthetic-raters", type=int, default=400)
    p.add_argument("--synthetic-items", type=int, default=200)
    p.add_argument("--synthetic-rank", type=int, default=3)
    p.add_argument("--synthetic-density", type=float, default=0.6)
    p.add_argument("--synthetic-noise", type=float, default=1.25)
    p.add_argument("--synthetic-label-noise", type=float, default=0.1)
    p.add_argument("--synthetic-seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("analyze", help="emit analysis tables")
    _add_data(p)
    p.add_argument("--demographics", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--preference-by-age", action="store_true")
    p.add_argument("--age-bins", default="18,21,24,27,30,33,37")
    p.add_argument("--hotness-paradox", action="store_true")
    p.add_argument("--sizes", default="1,10,100")
    p.add_argument("--latent-2d", action="store_true")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            sub = parser._subparsers._group_actions[0].choices[args.command]
            _apply_config(parser, sub, read_config(args.config))
            args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as err:
        print(f"visreg {args.command}: {err}", file=sys.stderr)
        return 2
    except SingularSystemError as err:
        print(f"visreg {args.command}: {err}", file=sys.stderr)
        return 2
    except (TrainingDiverged, FloatingPointError, np.linalg.LinAlgError) as err:
        print(f"visreg {args.command}: {err}", file=sys.stderr)
        return 1
    except (ValueError, IndexError, KeyError, FileNotFoundError) as err:
        print(f"visreg {args.command}: {err}", file=sys.stderr)
        return 2
    except RuntimeError as err:
        print(f"visreg {args.command}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
