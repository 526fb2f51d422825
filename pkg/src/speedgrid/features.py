"""Per-point model feature vectors and their z-score standardization.

Two vector layouts exist: topographical (point curvature/yaw/elevation/
pitch) and infrastructural (link length, position, sign flags, car
class). Both end with day, hour, and the dictionary speed (CDS); the CDS
dimension is dropped when a model is trained without it.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .clustering import KMeansModel, kmeans_assign, link_features
from .dictionary import CdsValue, ClusterDictionarySet, cds_lookup
from .domain import Link, LinkTable, TrajectoryPoint, Trip, position_percent
from .ilstm import slot_index


class EmptyInputError(ValueError):
    pass


class FeatureKind(enum.Enum):
    TOPO = "topo"
    INFRA = "infra"


_TOPO_NAMES = ("curv", "yaw", "elv", "ptc", "day", "hour", "cds")
_INFRA_NAMES = ("len", "pos", "sign_start", "sign_stop", "cc", "day", "hour", "cds")


def feature_names(kind: FeatureKind, with_cds: bool = True) -> tuple[str, ...]:
    names = _TOPO_NAMES if kind is FeatureKind.TOPO else _INFRA_NAMES
    return names if with_cds else names[:-1]


def passthrough_dims(kind: FeatureKind, with_cds: bool = True) -> tuple[int, ...]:
    """Dimensions that stay raw under standardization (0/1 sign flags)."""
    names = feature_names(kind, with_cds)
    return tuple(i for i, n in enumerate(names) if n in ("sign_start", "sign_stop"))


@dataclass(frozen=True)
class FeatureVector:
    """Fixed-order per-point feature values plus the classification target."""

    kind: FeatureKind
    values: np.ndarray
    cluster_label: int

    def __post_init__(self) -> None:
        expected = (len(_TOPO_NAMES) if self.kind is FeatureKind.TOPO
                    else len(_INFRA_NAMES))
        if len(self.values) not in (expected, expected - 1):
            raise ValueError(
                f"{self.kind.value} vector must have {expected} dims "
                f"({expected - 1} without CDS), got {len(self.values)}")
        if not np.isfinite(self.values).all():
            raise ValueError("feature values must be finite")
        self.values.flags.writeable = False


def build_feature_vector(point: TrajectoryPoint, link: Link,
                         cds: CdsValue | None, kind: FeatureKind,
                         car_class: int, cluster: int) -> FeatureVector:
    """Assemble one point's vector; cds=None omits the CDS dimension."""
    if kind is FeatureKind.TOPO:
        values = [point.curv, point.yaw, point.elv, point.ptc,
                  float(point.day), float(point.hour)]
    else:
        pos = position_percent(point.dist_along_link, link.length)
        values = [link.length, pos, float(link.sign_start), float(link.sign_stop),
                  float(car_class), float(point.day), float(point.hour)]
    if cds is not None:
        values.append(cds.speed)
    return FeatureVector(kind=kind, values=np.array(values, dtype=float),
                         cluster_label=cluster)


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension z-score transform; passthrough dims are left raw and
    zero-variance dims keep stddev 1, so apply/invert are exact inverses."""

    means: np.ndarray
    stds: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.means) / self.stds

    def invert(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.stds + self.means

    def to_json_dict(self) -> dict:
        return {"means": [float(v) for v in self.means],
                "stds": [float(v) for v in self.stds]}

    @classmethod
    def from_json_dict(cls, data: dict) -> "Standardizer":
        return cls(means=np.array(data["means"], dtype=float),
                   stds=np.array(data["stds"], dtype=float))


def standardizer_fit(vectors: np.ndarray,
                     passthrough: Sequence[int] = ()) -> Standardizer:
    vectors = np.asarray(vectors, dtype=float)
    if vectors.ndim != 2 or len(vectors) == 0:
        raise EmptyInputError("need a non-empty 2-d array of feature rows")
    means = vectors.mean(axis=0)
    stds = vectors.std(axis=0)
    stds = np.where(stds == 0.0, 1.0, stds)
    for dim in passthrough:
        means[dim] = 0.0
        stds[dim] = 1.0
    return Standardizer(means=means, stds=stds)


@dataclass(frozen=True)
class ScalarStandardizer:
    """z-score for a single scalar stream (the speed labels)."""

    mean: float
    std: float

    def apply(self, y):
        return (np.asarray(y, dtype=float) - self.mean) / self.std

    def invert(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean

    def to_json_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std}

    @classmethod
    def from_json_dict(cls, data: dict) -> "ScalarStandardizer":
        return cls(mean=float(data["mean"]), std=float(data["std"]))


def scalar_standardizer_fit(values) -> ScalarStandardizer:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise EmptyInputError("need at least one value")
    std = float(values.std())
    return ScalarStandardizer(mean=float(values.mean()),
                              std=std if std > 0 else 1.0)


def cluster_of_link(kmeans: KMeansModel, link: Link,
                    cache: dict[str, int] | None = None) -> int:
    if cache is not None and link.link_id in cache:
        return cache[link.link_id]
    cluster = kmeans_assign(kmeans, link_features(link))
    if cache is not None:
        cache[link.link_id] = cluster
    return cluster


def assemble_trip_features(trip: Trip, links: LinkTable, kmeans: KMeansModel,
                           dset: ClusterDictionarySet | None,
                           kind: FeatureKind, car_class: int = 0,
                           with_cds: bool = True,
                           cluster_cache: dict[str, int] | None = None
                           ) -> tuple[list[FeatureVector], list[float]]:
    """Feature vectors and speed labels for every point of a trip.

    The CDS of a point comes from its own (cluster, day, hour, slot) key;
    with_cds=False skips the lookup and the dimension.
    """
    if with_cds and dset is None:
        raise ValueError("with_cds=True requires a cluster dictionary")
    vectors: list[FeatureVector] = []
    speeds: list[float] = []
    for p in trip.points:
        link = links[p.link_id]
        cluster = cluster_of_link(kmeans, link, cluster_cache)
        cds = None
        if with_cds:
            slot = slot_index(position_percent(p.dist_along_link, link.length),
                              dset.percent)
            cds = cds_lookup(dset, cluster, p.day, p.hour, slot)
        vectors.append(build_feature_vector(p, link, cds, kind, car_class, cluster))
        speeds.append(p.speed)
    return vectors, speeds


def write_feature_csv(path: str | Path, kind: FeatureKind,
                      vectors: Iterable[FeatureVector],
                      speed_labels: Sequence[float],
                      with_cds: bool = True) -> None:
    names = feature_names(kind, with_cds)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(list(names) + ["cluster_label", "speed_label"])
        for vec, speed in zip(vectors, speed_labels):
            w.writerow([repr(float(v)) for v in vec.values]
                       + [vec.cluster_label, repr(float(speed))])


def read_feature_csv(path: str | Path, kind: FeatureKind,
                     with_cds: bool = True):
    names = feature_names(kind, with_cds)
    vectors: list[FeatureVector] = []
    speeds: list[float] = []
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.reader(f)
        header = next(r)
        if tuple(header) != tuple(names) + ("cluster_label", "speed_label"):
            raise ValueError(f"{path}: unexpected feature header {header}")
        for row in r:
            values = np.array([float(v) for v in row[:len(names)]])
            vectors.append(FeatureVector(kind=kind, values=values,
                                         cluster_label=int(row[len(names)])))
            speeds.append(float(row[len(names) + 1]))
    return vectors, speeds
