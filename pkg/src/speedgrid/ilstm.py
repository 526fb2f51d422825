"""Per-link day x hour x slot accumulation of speed observations.

A link is subdivided into S = 100/percent positional slots; every GPS
sample lands in exactly one (day, hour, slot) cell. Finalizing replaces
each cell's sample list with its count and arithmetic mean speed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .domain import LinkTable, Trip, position_percent

DAYS = 7
HOURS = 24
VALID_PERCENTS = (1, 2, 4, 5, 10, 20, 25, 50)
DEFAULT_PERCENT = 10


class InvalidPercentError(ValueError):
    pass


class LengthMismatchError(ValueError):
    pass


def slot_count(percent: int) -> int:
    if percent not in VALID_PERCENTS:
        raise InvalidPercentError(
            f"percent must divide 100 (one of {VALID_PERCENTS}), got {percent}")
    return 100 // percent


def slot_index(pos_percent: float, percent: int) -> int:
    """Slot holding a position given in percent; the end of the link
    (100%) folds into the last slot so its range is inclusive."""
    slots = slot_count(percent)
    return min(int(pos_percent // percent), slots - 1)


class Ilstm:
    """Growable day x hour x slot matrix of raw speed samples."""

    def __init__(self, percent: int = DEFAULT_PERCENT):
        self.percent = percent
        self.slots = slot_count(percent)
        # each cell is [count, list-of-speeds]; count always equals len(list)
        self.cells: list[list[list[list]]] = [
            [[[0, []] for _ in range(self.slots)] for _ in range(HOURS)]
            for _ in range(DAYS)
        ]

    def fill(self, day: int, hour: int, dist_list: Sequence[float],
             speeds: Sequence[float], link_length: float) -> "Ilstm":
        """Record each (dist, speed) pair in its (day, hour, slot) cell."""
        if len(dist_list) != len(speeds):
            raise LengthMismatchError(
                f"{len(dist_list)} distances vs {len(speeds)} speeds")
        if not 0 <= day < DAYS:
            raise ValueError(f"day must be in 0..6, got {day}")
        if not 0 <= hour < HOURS:
            raise ValueError(f"hour must be in 0..23, got {hour}")
        for dist, speed in zip(dist_list, speeds):
            slot = slot_index(position_percent(dist, link_length), self.percent)
            cell = self.cells[day][hour][slot]
            cell[0] += 1
            cell[1].append(speed)
        return self

    def total_count(self) -> int:
        return sum(cell[0] for day in self.cells for hour in day for cell in hour)

    def finalize(self) -> "SpeedGrid":
        """Collapse each cell to (count, mean speed); empty cells stay empty."""
        counts = np.zeros((DAYS, HOURS, self.slots), dtype=np.int64)
        means = np.full((DAYS, HOURS, self.slots), np.nan)
        for d in range(DAYS):
            for h in range(HOURS):
                for s in range(self.slots):
                    count, speeds = self.cells[d][h][s]
                    counts[d, h, s] = count
                    if count:
                        means[d, h, s] = sum(speeds) / count
        return SpeedGrid(percent=self.percent, counts=counts, means=means)


@dataclass(frozen=True, eq=False)
class SpeedGrid:
    """Finalized matrix: per-cell sample count and mean speed (NaN = empty)."""

    percent: int
    counts: np.ndarray  # (7, 24, S) int64
    means: np.ndarray   # (7, 24, S) float64, NaN exactly where count == 0

    def __post_init__(self) -> None:
        slots = slot_count(self.percent)
        if self.counts.shape != (DAYS, HOURS, slots) or self.means.shape != self.counts.shape:
            raise ValueError(f"grid shape must be {(DAYS, HOURS, slots)}")
        if not ((self.counts == 0) == np.isnan(self.means)).all():
            raise ValueError("mean must be NaN exactly where count is 0")
        self.counts.flags.writeable = False
        self.means.flags.writeable = False

    @property
    def slots(self) -> int:
        return self.counts.shape[2]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SpeedGrid):
            return NotImplemented
        return (self.percent == other.percent
                and np.array_equal(self.counts, other.counts)
                and np.array_equal(self.means, other.means, equal_nan=True))

    def to_json_dict(self) -> dict:
        cells = []
        for d in range(DAYS):
            for h in range(HOURS):
                for s in range(self.slots):
                    c = int(self.counts[d, h, s])
                    m = None if c == 0 else float(self.means[d, h, s])
                    cells.append([c, m])
        return {"percent": self.percent, "cells": cells}

    @classmethod
    def from_json_dict(cls, data: dict) -> "SpeedGrid":
        percent = int(data["percent"])
        slots = slot_count(percent)
        counts = np.zeros((DAYS, HOURS, slots), dtype=np.int64)
        means = np.full((DAYS, HOURS, slots), np.nan)
        it = iter(data["cells"])
        for d in range(DAYS):
            for h in range(HOURS):
                for s in range(slots):
                    c, m = next(it)
                    counts[d, h, s] = c
                    if c:
                        means[d, h, s] = m
        return cls(percent=percent, counts=counts, means=means)


def empty_grid(percent: int) -> SpeedGrid:
    slots = slot_count(percent)
    return SpeedGrid(
        percent=percent,
        counts=np.zeros((DAYS, HOURS, slots), dtype=np.int64),
        means=np.full((DAYS, HOURS, slots), np.nan),
    )


def build_link_grids(trips: Iterable[Trip], links: LinkTable,
                     percent: int = DEFAULT_PERCENT) -> dict[str, SpeedGrid]:
    """One finalized grid per link appearing in the trips."""
    matrices: dict[str, Ilstm] = {}
    for trip in trips:
        for p in trip.points:
            m = matrices.get(p.link_id)
            if m is None:
                m = matrices[p.link_id] = Ilstm(percent)
            m.fill(p.day, p.hour, [p.dist_along_link], [p.speed],
                   links[p.link_id].length)
    return {link_id: m.finalize() for link_id, m in matrices.items()}
