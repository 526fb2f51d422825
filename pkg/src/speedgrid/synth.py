"""Deterministic synthetic world and trip generator with a known speed oracle.

Links are drawn from archetype distributions (highway, arterial,
residential, hill, ...) whose feature clouds are well separated, so
clustering can recover them. The speed oracle is a product of the
link's expected free-flow speed (a per-archetype fraction of its speed
limit), a diurnal factor with rush-hour dips, a slowdown near signed
link ends, and a per-car-class factor, plus Gaussian noise. Speed limit
is visible to the clustering features but not to the infrastructural
model inputs, so dictionary lookups carry real signal.

Regions are disjoint link sets; trips walk corridor-coherent link
sequences (they tend to stay on the same archetype and speed-limit
band, like real routes stay on one road class).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .clustering import feature_matrix, scaler_fit
from .domain import Link, Trip, TrajectoryPoint

# Monday 2021-01-04 00:00:00 UTC; day/hour offsets are added to this
_EPOCH_MONDAY = 1609718400
_POINT_INTERVAL_S = 4

# trips concentrate on weekdays and daytime hours, peaking at the rush
# hours, so the dictionary's temporal cells actually accumulate samples
_DAY_WEIGHTS = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 0.45, 0.45])
_HOUR_WEIGHTS = np.array([
    0.15, 0.1, 0.1, 0.1, 0.15, 0.3,   # 0-5
    0.6, 1.2, 1.6, 1.2, 0.8, 0.8,     # 6-11
    0.8, 0.8, 0.8, 0.9, 1.2, 1.5,     # 12-17
    1.6, 1.2, 0.8, 0.5, 0.4, 0.25,    # 18-23
])


class InvalidConfigError(ValueError):
    pass


class UnknownRegionError(ValueError):
    pass


@dataclass(frozen=True)
class ArchetypeSpec:
    """Latent link category controlling feature and speed distributions."""

    name: str
    functional_class: int
    length_mean: float
    length_std: float
    curv_mean: float
    curv_std: float
    curv_spread: float      # distance from avg to max/min curvature
    pitch_mean: float
    pitch_std: float
    pitch_spread: float
    speed_limits: tuple[float, ...]  # discrete bands links draw from
    flow_ratio: float       # expected speed as a fraction of the limit
    sign_prob: float
    elevation: float


DEFAULT_ARCHETYPES: tuple[ArchetypeSpec, ...] = (
    ArchetypeSpec("highway", functional_class=1,
                  length_mean=1800.0, length_std=350.0,
                  curv_mean=0.0012, curv_std=0.0004, curv_spread=0.0008,
                  pitch_mean=0.3, pitch_std=0.3, pitch_spread=1.0,
                  speed_limits=(90.0, 110.0, 130.0),
                  flow_ratio=0.85, sign_prob=0.05, elevation=120.0),
    ArchetypeSpec("arterial", functional_class=2,
                  length_mean=700.0, length_std=150.0,
                  curv_mean=0.006, curv_std=0.0015, curv_spread=0.003,
                  pitch_mean=0.8, pitch_std=0.5, pitch_spread=2.0,
                  speed_limits=(50.0, 70.0, 90.0),
                  flow_ratio=0.72, sign_prob=0.35, elevation=90.0),
    ArchetypeSpec("residential", functional_class=4,
                  length_mean=220.0, length_std=50.0,
                  curv_mean=0.015, curv_std=0.004, curv_spread=0.008,
                  pitch_mean=0.5, pitch_std=0.4, pitch_spread=1.5,
                  speed_limits=(30.0, 50.0),
                  flow_ratio=0.58, sign_prob=0.6, elevation=60.0),
    ArchetypeSpec("hill", functional_class=3,
                  length_mean=450.0, length_std=100.0,
                  curv_mean=0.03, curv_std=0.006, curv_spread=0.012,
                  pitch_mean=6.0, pitch_std=1.0, pitch_spread=4.0,
                  speed_limits=(50.0, 70.0),
                  flow_ratio=0.62, sign_prob=0.4, elevation=400.0),
    ArchetypeSpec("boulevard", functional_class=5,
                  length_mean=320.0, length_std=70.0,
                  curv_mean=0.002, curv_std=0.0008, curv_spread=0.0015,
                  pitch_mean=0.2, pitch_std=0.2, pitch_spread=0.8,
                  speed_limits=(30.0,),
                  flow_ratio=0.5, sign_prob=0.7, elevation=30.0),
    ArchetypeSpec("mountain_pass", functional_class=3,
                  length_mean=900.0, length_std=200.0,
                  curv_mean=0.05, curv_std=0.01, curv_spread=0.02,
                  pitch_mean=-6.0, pitch_std=1.2, pitch_spread=5.0,
                  speed_limits=(70.0,),
                  flow_ratio=0.55, sign_prob=0.1, elevation=900.0),
)


@dataclass(frozen=True)
class OracleConfig:
    """All speed-oracle constants in one place."""

    rush_hours: tuple[int, ...] = (8, 18)
    rush_dip: float = 0.3        # factor at the dip bottom is 1 - rush_dip
    rush_width: float = 2.0      # hours from dip center back to baseline
    sign_slowdown: float = 0.25
    sign_zone: float = 0.15      # fraction of the link affected near an end
    car_class_factors: tuple[float, ...] = (1.0, 0.85, 1.15, 0.7)
    min_speed: float = 1.0


DEFAULT_ORACLE = OracleConfig()


@dataclass(frozen=True)
class WorldConfig:
    n_regions: int = 5
    links_per_region: int = 400
    n_archetypes: int = 4
    trips_per_region: int = 500
    mean_trip_links: float = 5.0
    points_per_link: float = 3.0
    noise_std: float = 3.0
    stay_prob: float = 1.0      # chance the next link keeps the corridor
    seed: int = 7
    oracle: OracleConfig = field(default_factory=OracleConfig)

    def __post_init__(self) -> None:
        positive = ("n_regions", "links_per_region", "n_archetypes",
                    "trips_per_region", "mean_trip_links", "points_per_link")
        for name in positive:
            if getattr(self, name) <= 0:
                raise InvalidConfigError(f"{name} must be positive")
        if self.noise_std < 0:
            raise InvalidConfigError("noise_std must be >= 0")
        if not 0 <= self.stay_prob <= 1:
            raise InvalidConfigError("stay_prob must be in [0, 1]")
        if self.n_archetypes > len(DEFAULT_ARCHETYPES):
            raise InvalidConfigError(
                f"at most {len(DEFAULT_ARCHETYPES)} archetypes are defined")


def region_names(n_regions: int) -> list[str]:
    """First n-2 regions feed the dictionary, then one train, one test."""
    if n_regions >= 3:
        return [f"otr{i}" for i in range(n_regions - 2)] + ["train", "test"]
    return [f"region{i}" for i in range(n_regions)]


@dataclass
class World:
    cfg: WorldConfig
    regions: dict[str, dict[str, Link]]
    archetype_by_link: dict[str, int]

    @property
    def archetypes(self) -> tuple[ArchetypeSpec, ...]:
        return DEFAULT_ARCHETYPES[:self.cfg.n_archetypes]


def _region_rng(seed: int, region: str, stream: int) -> np.random.Generator:
    digest = hashlib.blake2b(region.encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng(
        np.random.SeedSequence([seed, int.from_bytes(digest, "big"), stream]))


def _draw_link(link_id: str, arch: ArchetypeSpec,
               rng: np.random.Generator) -> Link:
    length = max(30.0, rng.normal(arch.length_mean, arch.length_std))
    curv_avg = max(1e-5, rng.normal(arch.curv_mean, arch.curv_std))
    spread_hi = abs(rng.normal(arch.curv_spread, arch.curv_spread / 4))
    spread_lo = abs(rng.normal(arch.curv_spread, arch.curv_spread / 4))
    pitch_avg = rng.normal(arch.pitch_mean, arch.pitch_std)
    p_hi = abs(rng.normal(arch.pitch_spread, arch.pitch_spread / 4))
    p_lo = abs(rng.normal(arch.pitch_spread, arch.pitch_spread / 4))
    speed_limit = float(rng.choice(np.array(arch.speed_limits)))
    return Link(
        link_id=link_id,
        length=float(length),
        curv_avg=float(curv_avg),
        curv_max=float(curv_avg + spread_hi),
        curv_min=float(max(0.0, curv_avg - spread_lo)),
        pitch_avg=float(pitch_avg),
        pitch_max=float(pitch_avg + p_hi),
        pitch_min=float(pitch_avg - p_lo),
        functional_class=arch.functional_class,
        speed_limit=speed_limit,
        sign_start=int(rng.random() < arch.sign_prob),
        sign_stop=int(rng.random() < arch.sign_prob),
    )


def gen_world(cfg: WorldConfig) -> World:
    """Links for every region plus the hidden archetype assignment."""
    regions: dict[str, dict[str, Link]] = {}
    archetype_by_link: dict[str, int] = {}
    archetypes = DEFAULT_ARCHETYPES[:cfg.n_archetypes]
    for region in region_names(cfg.n_regions):
        rng = _region_rng(cfg.seed, region, stream=0)
        table: dict[str, Link] = {}
        for i in range(cfg.links_per_region):
            arch_idx = int(rng.integers(cfg.n_archetypes))
            link_id = f"{region}-L{i:05d}"
            table[link_id] = _draw_link(link_id, archetypes[arch_idx], rng)
            archetype_by_link[link_id] = arch_idx
        regions[region] = table
    return World(cfg=cfg, regions=regions, archetype_by_link=archetype_by_link)


def archetype_separation(world: World) -> float:
    """Min pairwise archetype-centroid distance over max within-archetype
    spread, in globally standardized feature space."""
    links = [ln for table in world.regions.values() for ln in table.values()]
    feats = feature_matrix(links)
    z = scaler_fit(feats).transform(feats)
    arch = np.array([world.archetype_by_link[ln.link_id] for ln in links])
    centroids = []
    spreads = []
    for a in range(world.cfg.n_archetypes):
        za = z[arch == a]
        centroids.append(za.mean(axis=0))
        spreads.append(math.sqrt(float(za.var(axis=0).mean())))
    worst = math.inf
    for i in range(len(centroids)):
        for j in range(i + 1, len(centroids)):
            dist = float(np.linalg.norm(centroids[i] - centroids[j]))
            worst = min(worst, dist / max(spreads[i], spreads[j]))
    return worst


def diurnal_factor(hour: int, ocfg: OracleConfig = DEFAULT_ORACLE) -> float:
    """1.0 baseline with cosine-shaped dips centered on the rush hours."""
    factor = 1.0
    for rush in ocfg.rush_hours:
        delta = abs(hour - rush)
        delta = min(delta, 24 - delta)
        if delta < ocfg.rush_width:
            dip = 1.0 - ocfg.rush_dip * 0.5 * (
                1.0 + math.cos(math.pi * delta / ocfg.rush_width))
            factor = min(factor, dip)
    return factor


def position_factor(rel_pos: float, sign_start: int, sign_stop: int,
                    ocfg: OracleConfig = DEFAULT_ORACLE) -> float:
    """Slowdown near a link end that carries a traffic sign."""
    factor = 1.0
    if sign_start and rel_pos < ocfg.sign_zone:
        factor *= 1.0 - ocfg.sign_slowdown * (1.0 - rel_pos / ocfg.sign_zone)
    if sign_stop and rel_pos > 1.0 - ocfg.sign_zone:
        factor *= 1.0 - ocfg.sign_slowdown * (
            (rel_pos - (1.0 - ocfg.sign_zone)) / ocfg.sign_zone)
    return factor


def oracle_mean_speed(link: Link, arch: ArchetypeSpec, hour: int,
                      rel_pos: float, car_class: int,
                      ocfg: OracleConfig = DEFAULT_ORACLE) -> float:
    """Noise-free oracle speed at a position on a link."""
    base = arch.flow_ratio * link.speed_limit
    return (base * diurnal_factor(hour, ocfg)
            * position_factor(rel_pos, link.sign_start, link.sign_stop, ocfg)
            * ocfg.car_class_factors[car_class % len(ocfg.car_class_factors)])


@dataclass
class RegionTrips:
    trips: list[Trip]
    car_class_by_trip: dict[str, int]


def gen_trips(world: World, region: str, n_trips: int, seed: int) -> RegionTrips:
    """Trips over a region's links with oracle-labeled speeds."""
    if region not in world.regions:
        raise UnknownRegionError(f"region {region!r} not in world")
    cfg = world.cfg
    ocfg = cfg.oracle
    table = world.regions[region]
    link_list = sorted(table.values(), key=lambda ln: ln.link_id)
    by_group: dict[tuple[int, float], list[Link]] = {}
    for ln in link_list:
        key = (world.archetype_by_link[ln.link_id], ln.speed_limit)
        by_group.setdefault(key, []).append(ln)

    rng = _region_rng(seed, region, stream=1)
    trips: list[Trip] = []
    car_class_by_trip: dict[str, int] = {}
    n_classes = len(ocfg.car_class_factors)
    day_p = _DAY_WEIGHTS / _DAY_WEIGHTS.sum()
    hour_p = _HOUR_WEIGHTS / _HOUR_WEIGHTS.sum()
    for t in range(n_trips):
        trip_id = f"{region}-T{t:05d}"
        cc = int(rng.integers(n_classes))
        day = int(rng.choice(7, p=day_p))
        hour = int(rng.choice(24, p=hour_p))
        n_links = 1 + int(rng.poisson(max(cfg.mean_trip_links - 1.0, 0.0)))
        link = link_list[int(rng.integers(len(link_list)))]
        yaw = float(rng.uniform(0.0, 360.0))
        elv = DEFAULT_ARCHETYPES[world.archetype_by_link[link.link_id]].elevation
        points: list[TrajectoryPoint] = []
        step = 0
        base_ts = _EPOCH_MONDAY + day * 86400 + hour * 3600
        for _ in range(n_links):
            arch_idx = world.archetype_by_link[link.link_id]
            arch = world.archetypes[arch_idx]
            n_pts = 1 + int(rng.poisson(max(cfg.points_per_link - 1.0, 0.0)))
            dists = np.sort(rng.uniform(0.0, link.length, size=n_pts))
            for dist in dists:
                rel = float(dist) / link.length
                mean = oracle_mean_speed(link, arch, hour, rel, cc, ocfg)
                speed = max(ocfg.min_speed,
                            mean + rng.normal(0.0, cfg.noise_std))
                ptc = float(np.clip(rng.normal(link.pitch_avg,
                                               arch.pitch_spread / 2),
                                    link.pitch_min, link.pitch_max))
                curv = float(rng.uniform(link.curv_min, link.curv_max))
                yaw = (yaw + float(rng.normal(0.0, 8.0))) % 360.0
                elv += ptc * 0.5 + float(rng.normal(0.0, 0.5))
                points.append(TrajectoryPoint(
                    trip_id=trip_id, step_index=step,
                    timestamp=base_ts + step * _POINT_INTERVAL_S,
                    day=day, hour=hour, link_id=link.link_id,
                    dist_along_link=float(dist), speed=float(speed),
                    curv=curv, yaw=yaw, elv=float(elv), ptc=ptc,
                ))
                step += 1
            # corridor walk: usually stay on the same archetype and band
            key = (arch_idx, link.speed_limit)
            if rng.random() < cfg.stay_prob and len(by_group[key]) > 1:
                group = by_group[key]
                link = group[int(rng.integers(len(group)))]
            else:
                link = link_list[int(rng.integers(len(link_list)))]
        trips.append(Trip(trip_id=trip_id, points=tuple(points)))
        car_class_by_trip[trip_id] = cc
    return RegionTrips(trips=trips, car_class_by_trip=car_class_by_trip)
