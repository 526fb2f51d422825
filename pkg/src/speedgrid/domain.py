"""Trajectory, trip, and road-link data model shared by the whole pipeline.

Conventions: speeds are km/h, distances are meters, day 0 is Monday,
hours are 0..23. Latitude/longitude are optional pass-through metadata;
no operation consumes them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

TRIP_CSV_COLUMNS = (
    "trip_id", "step_index", "timestamp", "day", "hour", "link_id",
    "dist_along_link_m", "speed_kmh", "curv", "yaw", "elv", "ptc",
)
LINK_CSV_COLUMNS = (
    "link_id", "length_m", "curv_avg", "curv_max", "curv_min",
    "pitch_avg", "pitch_max", "pitch_min", "functional_class",
    "speed_limit_kmh", "sign_start", "sign_stop",
)


class DomainError(ValueError):
    """Base class for data-model violations."""


class NonPositiveLengthError(DomainError):
    pass


class DistOutOfRangeError(DomainError):
    pass


class CsvFormatError(DomainError):
    pass


def position_percent(dist: float, length: float) -> float:
    """Position along a link as a percentage of its length, in [0, 100]."""
    if length <= 0:
        raise NonPositiveLengthError(f"link length must be > 0, got {length}")
    if not 0 <= dist <= length:
        raise DistOutOfRangeError(f"dist {dist} outside [0, {length}]")
    return dist * 100.0 / length


@dataclass(frozen=True)
class TrajectoryPoint:
    """One timestamped GPS sample, already matched to a road link."""

    trip_id: str
    step_index: int
    timestamp: int
    day: int
    hour: int
    link_id: str
    dist_along_link: float
    speed: float
    curv: float
    yaw: float
    elv: float
    ptc: float
    lat: float | None = None  # retained for plotting only
    lon: float | None = None

    def __post_init__(self) -> None:
        if self.step_index < 0:
            raise DomainError(f"step_index must be >= 0, got {self.step_index}")
        if not 0 <= self.day <= 6:
            raise DomainError(f"day must be in 0..6, got {self.day}")
        if not 0 <= self.hour <= 23:
            raise DomainError(f"hour must be in 0..23, got {self.hour}")
        if self.speed < 0:
            raise DomainError(f"speed must be >= 0, got {self.speed}")
        if self.dist_along_link < 0:
            raise DomainError(
                f"dist_along_link must be >= 0, got {self.dist_along_link}")


@dataclass(frozen=True)
class Trip:
    """Ordered sequence of GPS samples from one journey."""

    trip_id: str
    points: tuple[TrajectoryPoint, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", tuple(self.points))
        for p in self.points:
            if p.trip_id != self.trip_id:
                raise DomainError(
                    f"point trip_id {p.trip_id!r} != trip {self.trip_id!r}")

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class Link:
    """A road section with fixed attributes."""

    link_id: str
    length: float
    curv_avg: float
    curv_max: float
    curv_min: float
    pitch_avg: float
    pitch_max: float
    pitch_min: float
    functional_class: int
    speed_limit: float
    sign_start: int
    sign_stop: int

    def __post_init__(self) -> None:
        if self.length <= 0:
            raise DomainError(f"link {self.link_id}: length must be > 0")
        if self.speed_limit <= 0:
            raise DomainError(f"link {self.link_id}: speed_limit must be > 0")
        if not self.curv_min <= self.curv_avg <= self.curv_max:
            raise DomainError(f"link {self.link_id}: curvature min/avg/max out of order")
        if not self.pitch_min <= self.pitch_avg <= self.pitch_max:
            raise DomainError(f"link {self.link_id}: pitch min/avg/max out of order")
        if not 1 <= self.functional_class <= 5:
            raise DomainError(f"link {self.link_id}: functional_class must be 1..5")
        if self.sign_start not in (0, 1) or self.sign_stop not in (0, 1):
            raise DomainError(f"link {self.link_id}: sign flags must be 0 or 1")


LinkTable = Mapping[str, Link]


@dataclass(frozen=True)
class UnknownLink:
    step_index: int
    link_id: str

    def __str__(self) -> str:
        return f"step {self.step_index}: unknown link {self.link_id!r}"


@dataclass(frozen=True)
class DistanceExceedsLength:
    step_index: int
    link_id: str
    dist: float
    length: float

    def __str__(self) -> str:
        return (f"step {self.step_index}: dist {self.dist} exceeds "
                f"length {self.length} of link {self.link_id!r}")


@dataclass(frozen=True)
class NonContiguousSteps:
    step_index: int
    expected: int

    def __str__(self) -> str:
        return f"step_index {self.step_index} where {self.expected} was expected"


TripViolation = Union[UnknownLink, DistanceExceedsLength, NonContiguousSteps]


class TripValidationError(DomainError):
    """Raised by validate_trip; carries every violation found."""

    def __init__(self, trip_id: str, violations: Sequence[TripViolation]):
        self.trip_id = trip_id
        self.violations = tuple(violations)
        lines = "; ".join(str(v) for v in violations)
        super().__init__(f"trip {trip_id!r}: {lines}")


def trip_violations(trip: Trip, links: LinkTable) -> list[TripViolation]:
    """Collect every invariant violation in a trip against a link table."""
    out: list[TripViolation] = []
    for pos, p in enumerate(trip.points):
        if p.step_index != pos:
            out.append(NonContiguousSteps(step_index=p.step_index, expected=pos))
        link = links.get(p.link_id)
        if link is None:
            out.append(UnknownLink(step_index=p.step_index, link_id=p.link_id))
        elif p.dist_along_link > link.length:
            out.append(DistanceExceedsLength(
                step_index=p.step_index, link_id=p.link_id,
                dist=p.dist_along_link, length=link.length))
    return out


def validate_trip(trip: Trip, links: LinkTable) -> Trip:
    """Return the trip unchanged if valid, else raise with all violations."""
    violations = trip_violations(trip, links)
    if violations:
        raise TripValidationError(trip.trip_id, violations)
    return trip


def _fmt(v: float) -> str:
    # repr round-trips exactly, which keeps rewritten files byte-identical
    return repr(float(v))


def write_links_csv(path: str | Path, links: Iterable[Link]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(LINK_CSV_COLUMNS)
        for ln in links:
            w.writerow([
                ln.link_id, _fmt(ln.length),
                _fmt(ln.curv_avg), _fmt(ln.curv_max), _fmt(ln.curv_min),
                _fmt(ln.pitch_avg), _fmt(ln.pitch_max), _fmt(ln.pitch_min),
                ln.functional_class, _fmt(ln.speed_limit),
                ln.sign_start, ln.sign_stop,
            ])


def read_links_csv(path: str | Path) -> dict[str, Link]:
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header is None or tuple(header[:len(LINK_CSV_COLUMNS)]) != LINK_CSV_COLUMNS:
            raise CsvFormatError(f"{path}: expected link header {LINK_CSV_COLUMNS}")
        out: dict[str, Link] = {}
        for row in r:
            link = Link(
                link_id=row[0], length=float(row[1]),
                curv_avg=float(row[2]), curv_max=float(row[3]), curv_min=float(row[4]),
                pitch_avg=float(row[5]), pitch_max=float(row[6]), pitch_min=float(row[7]),
                functional_class=int(row[8]), speed_limit=float(row[9]),
                sign_start=int(row[10]), sign_stop=int(row[11]),
            )
            out[link.link_id] = link
    return out


def write_trips_csv(path: str | Path, trips: Iterable[Trip]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(TRIP_CSV_COLUMNS)
        for trip in trips:
            for p in trip.points:
                w.writerow([
                    p.trip_id, p.step_index, p.timestamp, p.day, p.hour,
                    p.link_id, _fmt(p.dist_along_link), _fmt(p.speed),
                    _fmt(p.curv), _fmt(p.yaw), _fmt(p.elv), _fmt(p.ptc),
                ])


def read_trips_csv(path: str | Path) -> list[Trip]:
    """Read trips grouped by trip_id; rows of one trip must be consecutive."""
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header is None or tuple(header[:len(TRIP_CSV_COLUMNS)]) != TRIP_CSV_COLUMNS:
            raise CsvFormatError(f"{path}: expected trip header {TRIP_CSV_COLUMNS}")
        trips: list[Trip] = []
        cur_id: str | None = None
        cur_points: list[TrajectoryPoint] = []
        for row in r:
            p = TrajectoryPoint(
                trip_id=row[0], step_index=int(row[1]), timestamp=int(row[2]),
                day=int(row[3]), hour=int(row[4]), link_id=row[5],
                dist_along_link=float(row[6]), speed=float(row[7]),
                curv=float(row[8]), yaw=float(row[9]),
                elv=float(row[10]), ptc=float(row[11]),
            )
            if p.trip_id != cur_id:
                if cur_points:
                    trips.append(Trip(trip_id=cur_id, points=tuple(cur_points)))
                cur_id = p.trip_id
                cur_points = []
            cur_points.append(p)
        if cur_points:
            trips.append(Trip(trip_id=cur_id, points=tuple(cur_points)))
    return trips
