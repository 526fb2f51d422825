"""Per-cluster speed grids and the CDS lookup used as a model feature.

Link grids belonging to the same cluster are pooled cell by cell, so an
aggregated cell equals the mean of all underlying speed records. Lookups
never fail: an empty cell falls back through nearby hours, then the
cluster-wide mean, then the global mean, and the provenance of the value
is recorded.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .ilstm import DAYS, HOURS, SpeedGrid, empty_grid

DEFAULT_MAX_HOUR_DIST = 3


class DimensionMismatchError(ValueError):
    pass


class ClusterIdOutOfRangeError(ValueError):
    pass


class IndexOutOfRangeError(ValueError):
    pass


class Provenance(enum.Enum):
    EXACT = "exact"
    HOUR_NEIGHBOR = "hour_neighbor"
    CLUSTER_MEAN = "cluster_mean"
    GLOBAL_MEAN = "global_mean"


@dataclass(frozen=True)
class CdsValue:
    speed: float
    provenance: Provenance


@dataclass
class ClusterDictionarySet:
    """One aggregated grid per cluster plus the pooled global mean speed."""

    k: int
    percent: int
    grids: list[SpeedGrid]
    global_mean: float

    def to_json_dict(self) -> dict:
        return {
            "k": self.k,
            "percent": self.percent,
            "global_mean": float(self.global_mean),
            "grids": [g.to_json_dict() for g in self.grids],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ClusterDictionarySet":
        return cls(
            k=int(data["k"]),
            percent=int(data["percent"]),
            grids=[SpeedGrid.from_json_dict(g) for g in data["grids"]],
            global_mean=float(data["global_mean"]),
        )


def _pooled_mean(counts: np.ndarray, means: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    weighted = np.where(counts > 0, counts * means, 0.0)
    return float(weighted.sum() / total)


def build_cluster_dictionary(grids_by_link: Mapping[str, SpeedGrid],
                             cluster_by_link: Mapping[str, int],
                             k: int,
                             agg: str = "pooled") -> ClusterDictionarySet:
    """Aggregate link grids per cluster.

    agg="pooled" weights each member cell by its count, reproducing the
    mean of the pooled records; agg="unweighted" averages member means.
    Clusters with no links get an all-empty grid.
    """
    if agg not in ("pooled", "unweighted"):
        raise ValueError(f"agg must be 'pooled' or 'unweighted', got {agg!r}")
    grids = list(grids_by_link.values())
    if grids:
        percent = grids[0].percent
        for g in grids:
            if g.percent != percent or g.counts.shape != grids[0].counts.shape:
                raise DimensionMismatchError("all link grids must share percent and shape")
    else:
        percent = 10
    members: dict[int, list[SpeedGrid]] = {}
    for link_id, grid in grids_by_link.items():
        cluster = cluster_by_link[link_id]
        if not 0 <= cluster < k:
            raise ClusterIdOutOfRangeError(
                f"link {link_id!r} has cluster {cluster}, expected 0..{k - 1}")
        members.setdefault(cluster, []).append(grid)

    out: list[SpeedGrid] = []
    for cluster in range(k):
        group = members.get(cluster)
        if not group:
            out.append(empty_grid(percent))
            continue
        counts = np.stack([g.counts for g in group])
        means = np.stack([g.means for g in group])
        total = counts.sum(axis=0)
        if agg == "pooled":
            weighted = np.where(counts > 0, counts * means, 0.0).sum(axis=0)
            with np.errstate(invalid="ignore"):
                cell_mean = np.where(total > 0, weighted / np.maximum(total, 1), np.nan)
        else:
            filled = (counts > 0).sum(axis=0)
            sums = np.where(counts > 0, means, 0.0).sum(axis=0)
            with np.errstate(invalid="ignore"):
                cell_mean = np.where(filled > 0, sums / np.maximum(filled, 1), np.nan)
        out.append(SpeedGrid(percent=percent, counts=total, means=cell_mean))

    # global mean is always the pooled mean of every recorded speed
    total_count = sum(int(g.counts.sum()) for g in grids)
    if total_count:
        weighted = sum(
            float(np.where(g.counts > 0, g.counts * g.means, 0.0).sum())
            for g in grids)
        global_mean = weighted / total_count
    else:
        global_mean = 0.0
    return ClusterDictionarySet(k=k, percent=percent, grids=out,
                                global_mean=global_mean)


def cds_lookup(dset: ClusterDictionarySet, cluster: int, day: int, hour: int,
               slot: int, max_hour_dist: int = DEFAULT_MAX_HOUR_DIST) -> CdsValue:
    """Dictionary speed for a (cluster, day, hour, slot) key.

    Fallback ladder: exact cell; nearest non-empty hour neighbors at the
    same day/slot (both sides pooled at equal distance, hours wrap);
    cluster-wide pooled mean; global mean.
    """
    if not 0 <= cluster < dset.k:
        raise IndexOutOfRangeError(f"cluster {cluster} outside 0..{dset.k - 1}")
    grid = dset.grids[cluster]
    if not (0 <= day < DAYS and 0 <= hour < HOURS and 0 <= slot < grid.slots):
        raise IndexOutOfRangeError(
            f"(day={day}, hour={hour}, slot={slot}) outside grid bounds")

    if grid.counts[day, hour, slot] > 0:
        return CdsValue(float(grid.means[day, hour, slot]), Provenance.EXACT)

    for d in range(1, max_hour_dist + 1):
        count = 0
        weighted = 0.0
        for h in ((hour - d) % HOURS, (hour + d) % HOURS):
            c = int(grid.counts[day, h, slot])
            if c > 0:
                count += c
                weighted += c * float(grid.means[day, h, slot])
        if count > 0:
            return CdsValue(weighted / count, Provenance.HOUR_NEIGHBOR)

    if grid.counts.sum() > 0:
        return CdsValue(_pooled_mean(grid.counts, grid.means),
                        Provenance.CLUSTER_MEAN)
    return CdsValue(dset.global_mean, Provenance.GLOBAL_MEAN)
