"""Command-line pipeline: synth, build-dict, train, evaluate, predict,
plot, and sweep-k.

Every command is a pure function of its input files, flags, and seed;
outputs land under user-specified paths and inputs are never mutated.
A TOML config can supply any flag (flags win); the seed must come from
the flag or the config, never a hidden default.

Exit codes: 0 success, 2 bad usage, 3 validation failure, 4 runtime
failure. --error-json prints a machine-readable error to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

import numpy as np

from . import domain, metrics, pipeline, plotting, synth
from .clustering import KMeansModel
from .dictionary import ClusterDictionarySet
from .domain import DomainError
from .features import FeatureKind
from .ilstm import DEFAULT_PERCENT
from .model import TrainConfig, load_model, save_model
from .pipeline import (DictionaryBundle, ExperimentConfig, InSampleLeakError,
                       build_dictionary, check_no_otr_overlap, evaluate_models,
                       predict_trips, run_experiment, train_model)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_RUNTIME = 4

DEFAULT_KS = (6, 30, 60, 120)


class UsageError(Exception):
    pass


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as f:
        return tomllib.load(f)


class Options:
    """Flag values merged over the config file (flags win)."""

    def __init__(self, args: argparse.Namespace, command: str):
        self._args = vars(args)
        config = _load_config(self._args.get("config"))
        self._section = config.get(command, {})
        self._top = config

    def get(self, key: str, default=None):
        flag = self._args.get(key)
        if flag is not None:
            return flag
        if key in self._section:
            return self._section[key]
        if key in self._top and not isinstance(self._top[key], dict):
            return self._top[key]
        return default

    def require(self, key: str):
        value = self.get(key)
        if value is None:
            raise UsageError(f"--{key.replace('_', '-')} is required "
                             "(flag or config file)")
        return value

    def seed(self) -> int:
        value = self.get("seed")
        if value is None:
            raise UsageError("a seed is required: pass --seed or put "
                             "'seed = N' in the config file")
        return int(value)


def _read_many_trips(paths) -> list[domain.Trip]:
    trips: list[domain.Trip] = []
    for p in paths:
        trips.extend(domain.read_trips_csv(p))
    return trips


def _read_many_links(paths) -> dict[str, domain.Link]:
    links: dict[str, domain.Link] = {}
    for p in paths:
        links.update(domain.read_links_csv(p))
    return links


def _read_trip_meta(path) -> dict[str, int]:
    if path is None:
        return {}
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header is None or header[:2] != ["trip_id", "car_class"]:
            raise DomainError(f"{path}: expected header trip_id,car_class")
        return {row[0]: int(row[1]) for row in r}


def _write_trip_meta(path, car_class_by_trip: dict[str, int]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["trip_id", "car_class"])
        for trip_id in sorted(car_class_by_trip):
            w.writerow([trip_id, car_class_by_trip[trip_id]])


def _load_bundle(opts: Options) -> DictionaryBundle:
    with open(opts.require("dict"), encoding="utf-8") as f:
        dset = ClusterDictionarySet.from_json_dict(json.load(f))
    with open(opts.require("kmeans"), encoding="utf-8") as f:
        kmeans = KMeansModel.from_json_dict(json.load(f))
    otr_path = opts.get("otr_links")
    otr_ids: frozenset[str] = frozenset()
    if otr_path:
        with open(otr_path, encoding="utf-8") as f:
            otr_ids = frozenset(json.load(f)["link_ids"])
    return DictionaryBundle(kmeans=kmeans, dset=dset, otr_link_ids=otr_ids)


def _train_config(opts: Options, seed: int) -> TrainConfig:
    base = TrainConfig()
    return TrainConfig(
        epochs=int(opts.get("epochs", base.epochs)),
        batch_size=int(opts.get("batch_size", base.batch_size)),
        sz=int(opts.get("sz", base.sz)),
        lr0=float(opts.get("lr0", base.lr0)),
        lr_min=float(opts.get("lr_min", base.lr_min)),
        w_reg=float(opts.get("w_reg", base.w_reg)),
        w_cls=float(opts.get("w_cls", base.w_cls)),
        seed=seed,
        hidden=int(opts.get("hidden", base.hidden)),
        dropout=float(opts.get("dropout", base.dropout)),
    )


def cmd_synth(opts: Options) -> int:
    seed = opts.seed()
    base = synth.WorldConfig()
    cfg = synth.WorldConfig(
        n_regions=int(opts.get("n_regions", base.n_regions)),
        links_per_region=int(opts.get("links_per_region", base.links_per_region)),
        n_archetypes=int(opts.get("n_archetypes", base.n_archetypes)),
        trips_per_region=int(opts.get("trips_per_region", base.trips_per_region)),
        mean_trip_links=float(opts.get("mean_trip_links", base.mean_trip_links)),
        points_per_link=float(opts.get("points_per_link", base.points_per_link)),
        noise_std=float(opts.get("noise_std", base.noise_std)),
        stay_prob=float(opts.get("stay_prob", base.stay_prob)),
        seed=seed,
    )
    out_dir = Path(opts.require("out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    world = synth.gen_world(cfg)
    roles: dict[str, str] = {}
    for region in world.regions:
        role = ("otr" if region.startswith("otr")
                else "train" if region == "train"
                else "test" if region == "test" else "unsplit")
        roles[region] = role
        table = world.regions[region]
        domain.write_links_csv(out_dir / f"links_{region}.csv",
                               [table[i] for i in sorted(table)])
        gen = synth.gen_trips(world, region, cfg.trips_per_region, seed)
        domain.write_trips_csv(out_dir / f"trips_{region}.csv", gen.trips)
        _write_trip_meta(out_dir / f"trip_meta_{region}.csv",
                         gen.car_class_by_trip)
    meta = {
        "seed": seed,
        "roles": roles,
        "config": {
            "n_regions": cfg.n_regions,
            "links_per_region": cfg.links_per_region,
            "n_archetypes": cfg.n_archetypes,
            "trips_per_region": cfg.trips_per_region,
            "mean_trip_links": cfg.mean_trip_links,
            "points_per_link": cfg.points_per_link,
            "noise_std": cfg.noise_std,
            "stay_prob": cfg.stay_prob,
        },
        "archetype_by_link": {i: world.archetype_by_link[i]
                              for i in sorted(world.archetype_by_link)},
    }
    with open(out_dir / "world_meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=1, sort_keys=True)
    print(f"wrote {cfg.n_regions} regions under {out_dir}")
    return EXIT_OK


def cmd_build_dict(opts: Options) -> int:
    seed = opts.seed()
    trips = _read_many_trips(_as_list(opts.require("trips")))
    links = _read_many_links(_as_list(opts.require("links")))
    out = Path(opts.require("out"))
    bundle = build_dictionary(
        trips, links, k=int(opts.get("k", 120)),
        percent=int(opts.get("percent", DEFAULT_PERCENT)), seed=seed,
        agg=str(opts.get("agg", "pooled")))
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        json.dump(bundle.dset.to_json_dict(), f)
    kmeans_out = Path(opts.get("kmeans_out") or out.with_name("kmeans.json"))
    with open(kmeans_out, "w", encoding="utf-8") as f:
        json.dump(bundle.kmeans.to_json_dict(), f)
    otr_out = Path(opts.get("otr_links_out") or out.with_name("otr_links.json"))
    with open(otr_out, "w", encoding="utf-8") as f:
        json.dump({"link_ids": sorted(bundle.otr_link_ids)}, f)
    print(f"dictionary: {out} (k={bundle.dset.k}, percent={bundle.dset.percent}); "
          f"kmeans: {kmeans_out}; otr links: {otr_out}")
    return EXIT_OK


def _as_list(value) -> list:
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


def _feature_kind(opts: Options) -> FeatureKind:
    return FeatureKind(str(opts.get("features", "infra")))


def _with_cds(opts: Options) -> bool:
    value = str(opts.get("cds", "on")).lower()
    if value not in ("on", "off"):
        raise UsageError("--cds must be 'on' or 'off'")
    return value == "on"


def cmd_train(opts: Options) -> int:
    seed = opts.seed()
    trips = _read_many_trips(_as_list(opts.require("trips")))
    links = _read_many_links(_as_list(opts.require("links")))
    bundle = _load_bundle(opts)
    meta = _read_trip_meta(opts.get("trip_meta"))
    cfg = _train_config(opts, seed)
    kind = str(opts.get("model", "rnn"))
    if kind not in ("rnn", "mlp", "mean"):
        raise UsageError(f"--model must be rnn, mlp, or mean, got {kind!r}")
    model = train_model(
        kind, trips, links, bundle, _feature_kind(opts), _with_cds(opts),
        cfg, max_skip=int(opts.get("max_skip", 3)),
        val_frac=float(opts.get("val_frac", 0.2)), car_class_by_trip=meta)
    out = Path(opts.require("out"))
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(out, model)
    if model.history:
        last = model.history[-1]
        print(f"trained {kind}: {len(model.history)} epochs, "
              f"final train MSE {last['train_mse']:.4f} (standardized)")
    print(f"model: {out}")
    return EXIT_OK


def cmd_evaluate(opts: Options) -> int:
    seed = opts.seed()
    trips = _read_many_trips(_as_list(opts.require("trips")))
    links = _read_many_links(_as_list(opts.require("links")))
    bundle = _load_bundle(opts)
    meta = _read_trip_meta(opts.get("trip_meta"))
    named = []
    for spec in _as_list(opts.require("model")):
        if "=" not in spec:
            raise UsageError(f"--model expects NAME=PATH, got {spec!r}")
        name, path = spec.split("=", 1)
        named.append((name, load_model(path)))
    rows = evaluate_models(named, trips, links, bundle, seed, meta)
    out = Path(opts.require("out"))
    out.parent.mkdir(parents=True, exist_ok=True)
    metrics.write_report_csv(out, rows)
    print(metrics.format_report_text(rows))
    print(f"report: {out}")
    return EXIT_OK


def cmd_predict(opts: Options) -> int:
    seed = opts.seed()
    trips = _read_many_trips(_as_list(opts.require("trips")))
    links = _read_many_links(_as_list(opts.require("links")))
    bundle = _load_bundle(opts)
    meta = _read_trip_meta(opts.get("trip_meta"))
    model = load_model(str(opts.require("model")))
    for trip in trips:
        domain.validate_trip(trip, links)
    out = Path(opts.require("out"))
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["trip_id", "step_index", "speed_pred_kmh"])
        for trip in trips:
            preds = predict_trips(model, [trip], links, bundle, seed, meta)
            for p, value in zip(trip.points, preds):
                w.writerow([trip.trip_id, p.step_index, f"{value:.6f}"])
    print(f"predictions: {out}")
    return EXIT_OK


def cmd_plot(opts: Options) -> int:
    trips = _read_many_trips(_as_list(opts.require("trips")))
    preds_path = opts.require("pred")
    by_trip: dict[str, dict[int, float]] = {}
    with open(preds_path, newline="", encoding="utf-8") as f:
        r = csv.reader(f)
        header = next(r)
        if header != ["trip_id", "step_index", "speed_pred_kmh"]:
            raise DomainError(f"{preds_path}: unexpected prediction header")
        for row in r:
            by_trip.setdefault(row[0], {})[int(row[1])] = float(row[2])
    out_dir = Path(opts.require("out"))
    n_plots = 0
    for trip in trips:
        preds = by_trip.get(trip.trip_id)
        if preds is None:
            continue
        true = [p.speed for p in trip.points]
        pred = [preds[p.step_index] for p in trip.points]
        plotting.write_trip_plot(out_dir, trip.trip_id, true, pred)
        n_plots += 1
    print(f"wrote {n_plots} trip plot(s) under {out_dir}")
    return EXIT_OK


def _load_world_dir(opts: Options):
    data = Path(opts.require("data"))
    with open(data / "world_meta.json", encoding="utf-8") as f:
        meta = json.load(f)
    roles = meta["roles"]
    otr_regions = sorted(r for r, role in roles.items() if role == "otr")
    train_region = next(r for r, role in roles.items() if role == "train")
    test_region = next(r for r, role in roles.items() if role == "test")
    links: dict[str, domain.Link] = {}
    for region in roles:
        links.update(domain.read_links_csv(data / f"links_{region}.csv"))
    otr_trips = _read_many_trips([data / f"trips_{r}.csv" for r in otr_regions])
    train_trips = domain.read_trips_csv(data / f"trips_{train_region}.csv")
    test_trips = domain.read_trips_csv(data / f"trips_{test_region}.csv")
    meta_map: dict[str, int] = {}
    for region in roles:
        meta_map.update(_read_trip_meta(data / f"trip_meta_{region}.csv"))
    return otr_trips, train_trips, test_trips, links, meta_map


def cmd_sweep_k(opts: Options) -> int:
    seed = opts.seed()
    otr_trips, train_trips, test_trips, links, meta = _load_world_dir(opts)
    ks = [int(v) for v in _as_list(opts.get("ks", list(DEFAULT_KS)))]
    out = Path(opts.require("out"))
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in ks:
        xcfg = ExperimentConfig(
            k=k, percent=int(opts.get("percent", DEFAULT_PERCENT)),
            feature_kind=_feature_kind(opts), sz=int(opts.get("sz", 5)),
            max_skip=int(opts.get("max_skip", 3)),
            agg=str(opts.get("agg", "pooled")), seed=seed,
            train_cfg=_train_config(opts, seed))
        report, _ = run_experiment(otr_trips, train_trips, test_trips, links,
                                   xcfg, meta, methods=("ROPPA_RNN",))
        row = report[0]
        rows.append((k, row.mse, row.rmse, row.mae))
        print(f"k={k}: MSE {row.mse:.3f}  RMSE {row.rmse:.3f}  MAE {row.mae:.3f}")
    with open(out, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["otr_clusters", "mse", "rmse", "mae"])
        for k, m, r, a in rows:
            w.writerow([k, f"{m:.6f}", f"{r:.6f}", f"{a:.6f}"])
    print(f"sweep: {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="speedgrid",
        description="Spatio-temporal speed dictionaries and recurrent "
                    "point-wise speed prediction.")
    parser.add_argument("--error-json", action="store_true",
                        help="print errors as JSON on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, **kwargs) -> argparse.ArgumentParser:
        p = sub.add_parser(name, **kwargs)
        p.add_argument("--config", help="TOML config mirroring the flags")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, default=None,
                       help="worker cap (stages here are sequential)")
        return p

    p = add("synth", help="generate a synthetic world and trips")
    p.add_argument("--out")
    for flag in ("--n-regions", "--links-per-region", "--n-archetypes",
                 "--trips-per-region"):
        p.add_argument(flag, type=int)
    for flag in ("--mean-trip-links", "--points-per-link", "--noise-std",
                 "--stay-prob"):
        p.add_argument(flag, type=float)

    p = add("build-dict", help="cluster OTR links and build the dictionary")
    p.add_argument("--links", action="append")
    p.add_argument("--trips", action="append")
    p.add_argument("--k", type=int)
    p.add_argument("--percent", type=int)
    p.add_argument("--agg", choices=("pooled", "unweighted"))
    p.add_argument("--out")
    p.add_argument("--kmeans-out")
    p.add_argument("--otr-links-out")

    def add_model_io(p: argparse.ArgumentParser) -> None:
        p.add_argument("--trips", action="append")
        p.add_argument("--links", action="append")
        p.add_argument("--dict")
        p.add_argument("--kmeans")
        p.add_argument("--otr-links")
        p.add_argument("--trip-meta")

    p = add("train", help="train one model")
    add_model_io(p)
    p.add_argument("--model", choices=("rnn", "mlp", "mean"))
    p.add_argument("--features", choices=("topo", "infra"))
    p.add_argument("--cds", choices=("on", "off"))
    p.add_argument("--sz", type=int)
    p.add_argument("--max-skip", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--lr-min", type=float)
    p.add_argument("--w-reg", type=float)
    p.add_argument("--w-cls", type=float)
    p.add_argument("--val-frac", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--out")

    p = add("evaluate", help="metric report for trained models")
    add_model_io(p)
    p.add_argument("--model", action="append",
                   help="NAME=PATH, repeatable; row order follows input order")
    p.add_argument("--out")

    p = add("predict", help="per-point speed predictions for trips")
    add_model_io(p)
    p.add_argument("--model")
    p.add_argument("--out")

    p = add("plot", help="true-vs-predicted SVG + CSV per trip")
    p.add_argument("--trips", action="append")
    p.add_argument("--pred")
    p.add_argument("--out")

    p = add("sweep-k", help="full pipeline per cluster count")
    p.add_argument("--data", help="directory produced by synth")
    p.add_argument("--ks", type=int, action="append")
    p.add_argument("--percent", type=int)
    p.add_argument("--features", choices=("topo", "infra"))
    p.add_argument("--cds", choices=("on", "off"))
    p.add_argument("--sz", type=int)
    p.add_argument("--max-skip", type=int)
    p.add_argument("--agg", choices=("pooled", "unweighted"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--out")
    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "build-dict": cmd_build_dict,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "plot": cmd_plot,
    "sweep-k": cmd_sweep_k,
}


def _emit_error(as_json: bool, code: int, exc: Exception) -> None:
    if as_json:
        doc = {"error": {"type": type(exc).__name__, "message": str(exc),
                         "exit_code": code}}
        print(json.dumps(doc), file=sys.stderr)
    else:
        print(f"speedgrid: error: {exc}", file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    opts = Options(args, args.command)
    as_json = bool(args.error_json)
    try:
        return _COMMANDS[args.command](opts)
    except UsageError as exc:
        _emit_error(as_json, EXIT_USAGE, exc)
        return EXIT_USAGE
    except (DomainError, InSampleLeakError) as exc:
        _emit_error(as_json, EXIT_VALIDATION, exc)
        return EXIT_VALIDATION
    except Exception as exc:  # runtime failures keep a distinct exit code
        _emit_error(as_json, EXIT_RUNTIME, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
