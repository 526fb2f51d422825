"""K-means over the nine per-link features, with a frozen z-score scaler.

Features mix meters, degrees, and ordinal class, so links are clustered
in standardized space; the scaler is stored with the model so unseen
links are assigned in the identical space.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .domain import Link

FEATURE_NAMES = (
    "curv_avg", "curv_max", "curv_min",
    "pitch_avg", "pitch_max", "pitch_min",
    "length", "functional_class", "speed_limit",
)
N_FEATURES = len(FEATURE_NAMES)

DEFAULT_K = 120
DEFAULT_MAX_ITER = 300
DEFAULT_TOL = 1e-6
DEFAULT_N_INIT = 10


class EmptyInputError(ValueError):
    pass


class TooFewDistinctPointsError(ValueError):
    pass


def link_features(link: Link) -> np.ndarray:
    """The nine clustering features of a link, in FEATURE_NAMES order."""
    return np.array([
        link.curv_avg, link.curv_max, link.curv_min,
        link.pitch_avg, link.pitch_max, link.pitch_min,
        link.length, float(link.functional_class), link.speed_limit,
    ])


def feature_matrix(links: Iterable[Link]) -> np.ndarray:
    rows = [link_features(ln) for ln in links]
    if not rows:
        raise EmptyInputError("no links")
    return np.stack(rows)


@dataclass(frozen=True)
class FeatureScaler:
    """Per-feature mean/stddev; zero-variance features keep stddev 1."""

    means: np.ndarray
    stds: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.means) / self.stds


def scaler_fit(features: np.ndarray) -> FeatureScaler:
    if len(features) == 0:
        raise EmptyInputError("cannot fit scaler on empty input")
    features = np.asarray(features, dtype=float)
    means = features.mean(axis=0)
    stds = features.std(axis=0)
    stds = np.where(stds == 0.0, 1.0, stds)
    return FeatureScaler(means=means, stds=stds)


@dataclass
class KMeansModel:
    k: int
    seed: int
    scaler: FeatureScaler
    centroids: np.ndarray  # (k, n_features) in standardized space
    inertia: float

    def to_json_dict(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "scaler": {
                "means": [float(v) for v in self.scaler.means],
                "stds": [float(v) for v in self.scaler.stds],
            },
            "centroids": [[float(v) for v in row] for row in self.centroids],
            "inertia": float(self.inertia),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "KMeansModel":
        return cls(
            k=int(data["k"]),
            seed=int(data["seed"]),
            scaler=FeatureScaler(
                means=np.array(data["scaler"]["means"], dtype=float),
                stds=np.array(data["scaler"]["stds"], dtype=float),
            ),
            centroids=np.array(data["centroids"], dtype=float),
            inertia=float(data["inertia"]),
        )


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # (n, k) squared Euclidean distances
    return ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """D^2-weighted seeding: each new centroid is drawn with probability
    proportional to its squared distance to the nearest chosen one."""
    n = len(x)
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        probs = d2 / d2.sum()
        idx = rng.choice(n, p=probs)
        centroids[j] = x[idx]
        d2 = np.minimum(d2, ((x - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _lloyd(x: np.ndarray, k: int, rng: np.random.Generator,
           max_iter: int, tol: float) -> tuple[np.ndarray, float]:
    centroids = kmeans_pp_init(x, k, rng)
    for _ in range(max_iter):
        d2 = _sq_dists(x, centroids)
        labels = d2.argmin(axis=1)
        new_centroids = centroids.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new_centroids[j] = x[members].mean(axis=0)
        # re-seed empties from the worst-assigned points, one per cluster
        empties = [j for j in range(k) if not (labels == j).any()]
        if empties:
            worst = np.argsort(-d2[np.arange(len(x)), labels])
            for j, idx in zip(empties, worst):
                new_centroids[j] = x[idx]
        shift = np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max()
        centroids = new_centroids
        if shift < tol:
            break
    inertia = float(_sq_dists(x, centroids).min(axis=1).sum())
    return centroids, inertia


def kmeans_fit(features: np.ndarray, k: int, seed: int,
               max_iter: int = DEFAULT_MAX_ITER,
               tol: float = DEFAULT_TOL,
               n_init: int = DEFAULT_N_INIT) -> KMeansModel:
    """Lloyd's algorithm with k-means++ seeding on standardized features.

    Runs n_init seedings and keeps the lowest-inertia result; everything
    is deterministic for fixed (features, k, seed, max_iter, tol, n_init).
    Empty clusters are re-seeded at the point currently farthest from its
    centroid, so inertia never increases across iterations.
    """
    features = np.asarray(features, dtype=float)
    if features.ndim != 2:
        raise ValueError("features must be a 2-d array of link feature rows")
    scaler = scaler_fit(features)
    x = scaler.transform(features)
    n_distinct = len(np.unique(x, axis=0))
    if n_distinct < k:
        raise TooFewDistinctPointsError(
            f"k={k} but only {n_distinct} distinct feature vectors")

    rng = np.random.default_rng(seed)
    best: tuple[np.ndarray, float] | None = None
    for _ in range(max(1, n_init)):
        centroids, inertia = _lloyd(x, k, rng, max_iter, tol)
        if best is None or inertia < best[1]:
            best = (centroids, inertia)
    return KMeansModel(k=k, seed=seed, scaler=scaler,
                       centroids=best[0], inertia=best[1])


def kmeans_assign(model: KMeansModel, feature: np.ndarray) -> int:
    """Index of the nearest centroid; ties break toward the lowest index."""
    z = model.scaler.transform(np.asarray(feature, dtype=float))
    d2 = ((model.centroids - z) ** 2).sum(axis=1)
    return int(d2.argmin())


def kmeans_assign_many(model: KMeansModel, features: np.ndarray) -> np.ndarray:
    z = model.scaler.transform(np.asarray(features, dtype=float))
    return _sq_dists(z, model.centroids).argmin(axis=1)
