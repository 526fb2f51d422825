"""End-to-end orchestration: dictionary building, training, evaluation.

Every stage is a pure function of its inputs and a seed, so a whole run
is reproducible byte for byte. Off-training-region (OTR) data only ever
builds the dictionary; a guard refuses training or evaluation data whose
links intersect the OTR set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .clustering import (KMeansModel, feature_matrix, kmeans_assign_many,
                         kmeans_fit)
from .dictionary import ClusterDictionarySet, build_cluster_dictionary
from .domain import Link, LinkTable, Trip, validate_trip
from .features import (FeatureKind, FeatureVector, ScalarStandardizer,
                       Standardizer, assemble_trip_features, passthrough_dims,
                       scalar_standardizer_fit, standardizer_fit)
from .ilstm import build_link_grids
from .metrics import ReportRow, evaluate
from .model import (TrainConfig, TrainedModel, fit_mean_baseline, predict_trip,
                    train)
from .roppa import build_point_dataset, build_roppa_dataset


class InSampleLeakError(ValueError):
    """OTR links appeared in a training or evaluation dataset."""


@dataclass
class DictionaryBundle:
    """Fitted clustering plus the per-cluster speed dictionary."""

    kmeans: KMeansModel
    dset: ClusterDictionarySet
    otr_link_ids: frozenset[str]


def links_in_trips(trips: Iterable[Trip]) -> list[str]:
    seen: set[str] = set()
    for trip in trips:
        for p in trip.points:
            seen.add(p.link_id)
    return sorted(seen)


def check_no_otr_overlap(otr_link_ids: frozenset[str],
                         trips: Iterable[Trip]) -> None:
    overlap = sorted(otr_link_ids.intersection(links_in_trips(trips)))
    if overlap:
        shown = ", ".join(overlap[:5])
        raise InSampleLeakError(
            f"{len(overlap)} link(s) shared with the OTR set "
            f"(e.g. {shown}); refusing in-sample evaluation")


def build_dictionary(trips: Sequence[Trip], links: LinkTable, k: int,
                     percent: int, seed: int,
                     agg: str = "pooled") -> DictionaryBundle:
    """Cluster the unique links seen in the OTR trips and pool their
    speed grids per cluster."""
    for trip in trips:
        validate_trip(trip, links)
    used_ids = links_in_trips(trips)
    used_links = [links[i] for i in used_ids]
    feats = feature_matrix(used_links)
    kmeans = kmeans_fit(feats, k=k, seed=seed)
    assignments = kmeans_assign_many(kmeans, feats)
    cluster_by_link = {i: int(c) for i, c in zip(used_ids, assignments)}
    grids = build_link_grids(trips, links, percent)
    grids = {i: grids[i] for i in sorted(grids)}
    dset = build_cluster_dictionary(grids, cluster_by_link, k, agg=agg)
    return DictionaryBundle(kmeans=kmeans, dset=dset,
                            otr_link_ids=frozenset(used_ids))


def split_trips(trips: Sequence[Trip], val_frac: float,
                seed: int) -> tuple[list[Trip], list[Trip]]:
    """Deterministic per-trip train/validation split."""
    ordered = sorted(trips, key=lambda t: t.trip_id)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 915]))
    perm = rng.permutation(len(ordered))
    n_val = int(round(val_frac * len(ordered)))
    val_idx = set(int(i) for i in perm[:n_val])
    train_split = [t for i, t in enumerate(ordered) if i not in val_idx]
    val_split = [ordered[int(i)] for i in sorted(val_idx)]
    return train_split, val_split


def _assemble(trips: Sequence[Trip], links: LinkTable,
              bundle: DictionaryBundle, kind: FeatureKind, with_cds: bool,
              car_class_by_trip: Mapping[str, int] | None,
              cluster_cache: dict[str, int]):
    out: list[tuple[str, list[FeatureVector], list[float]]] = []
    for trip in trips:
        cc = car_class_by_trip.get(trip.trip_id, 0) if car_class_by_trip else 0
        vectors, speeds = assemble_trip_features(
            trip, links, bundle.kmeans, bundle.dset, kind, car_class=cc,
            with_cds=with_cds, cluster_cache=cluster_cache)
        out.append((trip.trip_id, vectors, speeds))
    return out


def train_model(kind: str, trips: Sequence[Trip], links: LinkTable,
                bundle: DictionaryBundle, feature_kind: FeatureKind,
                with_cds: bool, cfg: TrainConfig, max_skip: int = 3,
                val_frac: float = 0.2,
                car_class_by_trip: Mapping[str, int] | None = None,
                enforce_guard: bool = True) -> TrainedModel:
    """Train one predictor ("rnn", "mlp", or "mean") on a trip set."""
    for trip in trips:
        validate_trip(trip, links)
    if enforce_guard:
        check_no_otr_overlap(bundle.otr_link_ids, trips)
    train_split, val_split = split_trips(trips, val_frac, cfg.seed)

    if kind == "mean":
        speeds = [p.speed for t in train_split for p in t.points]
        return fit_mean_baseline(speeds, feature_kind, cfg, cfg.seed)

    cache: dict[str, int] = {}
    per_train = _assemble(train_split, links, bundle, feature_kind, with_cds,
                          car_class_by_trip, cache)
    per_val = _assemble(val_split, links, bundle, feature_kind, with_cds,
                        car_class_by_trip, cache)

    point_rows = np.vstack([v.values for _, vecs, _ in per_train for v in vecs])
    fstd = standardizer_fit(point_rows, passthrough_dims(feature_kind, with_cds))
    lstd = scalar_standardizer_fit(
        [s for _, _, speeds in per_train for s in speeds])

    if kind == "rnn":
        ds_train = build_roppa_dataset(per_train, cfg.sz, max_skip, cfg.seed)
        ds_val = build_roppa_dataset(per_val, cfg.sz, max_skip, cfg.seed) if per_val else None
    else:
        ds_train = build_point_dataset(per_train)
        ds_val = build_point_dataset(per_val) if per_val else None

    x_train = fstd.apply(ds_train.x)
    y_train = lstd.apply(ds_train.speeds)
    val = None
    if ds_val is not None:
        val = (fstd.apply(ds_val.x), lstd.apply(ds_val.speeds))
    params, history = train(x_train, y_train, ds_train.clusters, cfg,
                            kind=kind, n_classes=bundle.dset.k, val=val)
    return TrainedModel(
        kind=kind, feature_kind=feature_kind, with_cds=with_cds,
        sz=cfg.sz, max_skip=max_skip, seed=cfg.seed, cfg=cfg, params=params,
        n_classes=bundle.dset.k if kind == "rnn" else None,
        feature_std=fstd, label_std=lstd, history=history)


def predict_trips(model: TrainedModel, trips: Sequence[Trip],
                  links: LinkTable, bundle: DictionaryBundle, seed: int,
                  car_class_by_trip: Mapping[str, int] | None = None
                  ) -> np.ndarray:
    """Concatenated per-point predictions over trips, in input order."""
    cache: dict[str, int] = {}
    chunks = []
    for trip in trips:
        cc = car_class_by_trip.get(trip.trip_id, 0) if car_class_by_trip else 0
        chunks.append(predict_trip(model, bundle.dset, bundle.kmeans, trip,
                                   links, seed, car_class=cc,
                                   cluster_cache=cache))
    return np.concatenate(chunks)


def evaluate_models(named_models: Sequence[tuple[str, TrainedModel]],
                    trips: Sequence[Trip], links: LinkTable,
                    bundle: DictionaryBundle, seed: int,
                    car_class_by_trip: Mapping[str, int] | None = None,
                    enforce_guard: bool = True) -> list[ReportRow]:
    """Metric rows for each model over the same labeled trips."""
    for trip in trips:
        validate_trip(trip, links)
    if enforce_guard:
        check_no_otr_overlap(bundle.otr_link_ids, trips)
    labels = np.array([p.speed for t in trips for p in t.points])
    preds = [(name, predict_trips(model, trips, links, bundle, seed,
                                  car_class_by_trip))
             for name, model in named_models]
    return evaluate(preds, labels)


def desk_scale_train_cfg() -> TrainConfig:
    """Training defaults sized to the synthetic desk-scale dataset.

    The stock TrainConfig keeps the reference batch size of 1000, which
    was tuned for million-point corpora; at a few thousand sequences it
    yields six optimizer steps per epoch, so experiment runs shrink the
    batch and epoch count proportionally.
    """
    return TrainConfig(epochs=60, batch_size=64)


@dataclass
class ExperimentConfig:
    """One full comparison run: dictionary, four methods, evaluation."""

    k: int = 120
    percent: int = 10
    feature_kind: FeatureKind = FeatureKind.INFRA
    sz: int = 5
    max_skip: int = 3
    agg: str = "pooled"
    val_frac: float = 0.2
    seed: int = 0
    train_cfg: TrainConfig = field(default_factory=desk_scale_train_cfg)

    def cfg_for(self, seed_offset: int = 0) -> TrainConfig:
        return replace(self.train_cfg, sz=self.sz, seed=self.seed + seed_offset)


def run_experiment(otr_trips: Sequence[Trip], train_trips: Sequence[Trip],
                   test_trips: Sequence[Trip], links: LinkTable,
                   xcfg: ExperimentConfig,
                   car_class_by_trip: Mapping[str, int] | None = None,
                   methods: Sequence[str] = ("mean", "MLP", "MLP_f", "ROPPA_RNN"),
                   ) -> tuple[list[ReportRow], DictionaryBundle]:
    """Dictionary from OTR trips, train the requested methods, evaluate on
    the held-out trips. Method names follow the comparison table."""
    bundle = build_dictionary(otr_trips, links, xcfg.k, xcfg.percent,
                              xcfg.seed, agg=xcfg.agg)
    spec = {
        "mean": ("mean", False),
        "MLP": ("mlp", False),
        "MLP_f": ("mlp", True),
        "ROPPA_RNN": ("rnn", True),
    }
    named: list[tuple[str, TrainedModel]] = []
    for name in methods:
        kind, with_cds = spec[name]
        model = train_model(kind, train_trips, links, bundle,
                            xcfg.feature_kind, with_cds, xcfg.cfg_for(),
                            max_skip=xcfg.max_skip, val_frac=xcfg.val_frac,
                            car_class_by_trip=car_class_by_trip)
        named.append((name, model))
    rows = evaluate_models(named, test_trips, links, bundle, xcfg.seed,
                           car_class_by_trip)
    return rows, bundle
