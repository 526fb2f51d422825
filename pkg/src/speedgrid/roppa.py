"""Randomly ordered past point association: micro-time-series assembly.

Each model input is the feature sequence of sz past points plus the
target point, where the gap between consecutive chosen points is drawn
uniformly from 1..max_skip. Gaps vary per input so the model never sees
a fixed time-interval pattern; indices that would fall before the trip
start clamp to 0.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .features import FeatureVector

DEFAULT_SZ = 5
DEFAULT_MAX_SKIP = 3


class InvalidParamsError(ValueError):
    pass


class EmptyTripError(ValueError):
    pass


def generate_rsa(sz: int, max_skip: int, rng: np.random.Generator) -> np.ndarray:
    """sz independent uniform draws from {1..max_skip}."""
    if sz < 1 or max_skip < 1:
        raise InvalidParamsError(f"sz and max_skip must be >= 1, got {sz}, {max_skip}")
    return rng.integers(1, max_skip + 1, size=sz)


def roppa_indices(n: int, rsa: Sequence[int]) -> list[int]:
    """Walk backward from n subtracting each skip; clamp at 0; return the
    indices ascending with the target last."""
    if n < 0:
        raise InvalidParamsError(f"n must be >= 0, got {n}")
    indices = [n]
    pos = n
    for skip in rsa:
        pos = max(0, pos - int(skip))
        indices.append(pos)
    indices.reverse()
    return indices


def derive_rng(master_seed: int, trip_id: str, n: int) -> np.random.Generator:
    """Independent stream per (trip, point), reproducible across runs and
    identical whether inputs are built serially or in parallel."""
    digest = hashlib.blake2b(trip_id.encode("utf-8"), digest_size=8).digest()
    key = int.from_bytes(digest, "big")
    return np.random.default_rng(np.random.SeedSequence([master_seed, key, n]))


@dataclass(frozen=True)
class RoppaInput:
    """One training sample: feature sequence ending at the target point."""

    indices: tuple[int, ...]
    sequence: np.ndarray  # (sz + 1, dim), row i = features of indices[i]
    speed_label: float
    cluster_label: int


def build_roppa_input(vectors: Sequence[FeatureVector],
                      speeds: Sequence[float], n: int,
                      sz: int, max_skip: int,
                      rng: np.random.Generator) -> RoppaInput:
    """Assemble the input for target step n with a fresh random skip array."""
    if len(vectors) == 0:
        raise EmptyTripError("trip has no points")
    if len(vectors) != len(speeds):
        raise ValueError(f"{len(vectors)} vectors vs {len(speeds)} speeds")
    rsa = generate_rsa(sz, max_skip, rng)
    indices = roppa_indices(n, rsa)
    sequence = np.stack([vectors[i].values for i in indices])
    return RoppaInput(
        indices=tuple(indices),
        sequence=sequence,
        speed_label=float(speeds[n]),
        cluster_label=vectors[n].cluster_label,
    )


@dataclass
class SequenceDataset:
    """Stacked model inputs: X is (N, sz+1, dim) for the recurrent model or
    (N, dim) for single-point models; labels are unstandardized km/h."""

    x: np.ndarray
    speeds: np.ndarray
    clusters: np.ndarray
    keys: list[tuple[str, int]]  # (trip_id, step_index) per row

    def __len__(self) -> int:
        return len(self.x)


def build_roppa_dataset(per_trip: Sequence[tuple[str, Sequence[FeatureVector], Sequence[float]]],
                        sz: int, max_skip: int, master_seed: int) -> SequenceDataset:
    """One ROPPA input per point of every trip, with per-(trip, point)
    derived rng streams."""
    xs, ys, cs, keys = [], [], [], []
    for trip_id, vectors, speeds in per_trip:
        for n in range(len(vectors)):
            rng = derive_rng(master_seed, trip_id, n)
            inp = build_roppa_input(vectors, speeds, n, sz, max_skip, rng)
            xs.append(inp.sequence)
            ys.append(inp.speed_label)
            cs.append(inp.cluster_label)
            keys.append((trip_id, n))
    if not xs:
        raise EmptyTripError("no points in any trip")
    return SequenceDataset(x=np.stack(xs), speeds=np.array(ys),
                           clusters=np.array(cs, dtype=np.int64), keys=keys)


def build_point_dataset(per_trip: Sequence[tuple[str, Sequence[FeatureVector], Sequence[float]]]) -> SequenceDataset:
    """Single-point inputs for the feedforward baselines."""
    xs, ys, cs, keys = [], [], [], []
    for trip_id, vectors, speeds in per_trip:
        for n, (vec, speed) in enumerate(zip(vectors, speeds)):
            xs.append(vec.values)
            ys.append(float(speed))
            cs.append(vec.cluster_label)
            keys.append((trip_id, n))
    if not xs:
        raise EmptyTripError("no points in any trip")
    return SequenceDataset(x=np.stack(xs), speeds=np.array(ys),
                           clusters=np.array(cs, dtype=np.int64), keys=keys)
