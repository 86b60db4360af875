"""Partitioning a sampled gain map into subregions.

Samples are clustered with K-means on the min-max normalized 5-feature
rows (BS location, measurement location, gain), so geography and gain
level jointly define the subregions. Map locations are later routed to a
subregion by the geographic part of the metric alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .seeding import derive_seed
from ._validation import as_locations, as_samples


class EmptyInputError(ValueError):
    pass


class BadClusterCountError(ValueError):
    pass


@dataclass
class FeatureScaler:
    """Per-feature min-max normalization to [0, 1].

    Features that are constant over the fit data (the BS coordinates,
    typically) map to 0 rather than dividing by a zero range.
    """

    min_: np.ndarray
    max_: np.ndarray

    @classmethod
    def fit(cls, samples: np.ndarray) -> "FeatureScaler":
        samples = as_samples(samples)
        return cls(min_=samples.min(axis=0), max_=samples.max(axis=0))

    @property
    def range_(self) -> np.ndarray:
        span = self.max_ - self.min_
        return np.where(span > 0, span, 1.0)

    def transform(self, samples: np.ndarray) -> np.ndarray:
        samples = np.asarray(samples, dtype=np.float64)
        return (samples - self.min_) / self.range_

    def transform_xy(self, locations: np.ndarray) -> np.ndarray:
        """Normalize bare (x, y) locations with the location feature ranges."""
        locations = as_locations(locations)
        return (locations - self.min_[2:4]) / self.range_[2:4]


def fit_scaler(samples: np.ndarray) -> FeatureScaler:
    return FeatureScaler.fit(samples)


@dataclass
class Partition:
    """Result of clustering one sampled gain map."""

    k: int
    centers: np.ndarray          # (k, 5), normalized feature space
    membership: np.ndarray       # (M,) cluster id per sample
    scaler: FeatureScaler
    sizes: np.ndarray            # (k,) member counts
    objective: float = float("nan")
    n_iter: int = 0
    objective_trace: np.ndarray = field(default_factory=lambda: np.empty(0))

    def members(self, k: int) -> np.ndarray:
        return np.nonzero(self.membership == k)[0]


def _assign(points: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # squared distances to every center; argmin takes the lowest id on ties
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(len(points)), labels]


def _lloyd(points: np.ndarray, centers: np.ndarray, tol: float, max_iter: int):
    trace = []
    labels = np.zeros(len(points), dtype=np.int64)
    for it in range(max_iter):
        labels, d2 = _assign(points, centers)
        trace.append(float(d2.sum()))
        new_centers = centers.copy()
        for k in range(len(centers)):
            mask = labels == k
            if mask.any():
                new_centers[k] = points[mask].mean(axis=0)
        empty = np.nonzero(np.bincount(labels, minlength=len(centers)) == 0)[0]
        if len(empty):
            # reseat each empty center at the sample farthest from it,
            # skipping samples already used for a reseat this round
            used: set[int] = set()
            for k in empty:
                dist = ((points - new_centers[k]) ** 2).sum(axis=1)
                for j in np.argsort(-dist, kind="stable"):
                    if int(j) not in used:
                        new_centers[k] = points[int(j)]
                        used.add(int(j))
                        break
        shift = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if shift < tol and not len(empty):
            break
    labels, d2 = _assign(points, centers)
    trace.append(float(d2.sum()))
    return centers, labels, float(d2.sum()), it + 1, np.asarray(trace)


def kmeans_partition(
    samples: np.ndarray,
    k: int,
    seed: int,
    tol: float = 1e-6,
    max_iter: int = 300,
    n_restarts: int = 10,
) -> Partition:
    """Cluster normalized sample rows with restarted Lloyd iterations.

    Each restart initializes centers at ``k`` distinct samples drawn
    uniformly. The restart with the lowest final objective wins; exact
    objective ties go to the earlier restart. Deterministic given ``seed``.
    """
    samples = as_samples(samples)
    m = len(samples)
    if not 1 <= k <= m:
        raise BadClusterCountError(
            f"cluster count must be in [1, {m}], got {k}"
        )
    if n_restarts < 1:
        raise ValueError("need at least one restart")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    if tol < 0:
        raise ValueError("tol must be non-negative")
    scaler = FeatureScaler.fit(samples)
    points = scaler.transform(samples)

    best = None
    for r in range(n_restarts):
        rng = np.random.default_rng(derive_seed(seed, "kmeans-restart", r))
        init = points[rng.choice(m, size=k, replace=False)].copy()
        centers, labels, obj, n_iter, trace = _lloyd(points, init, tol, max_iter)
        if best is None or obj < best[0]:
            best = (obj, r, centers, labels, n_iter, trace)
    obj, _, centers, labels, n_iter, trace = best
    return Partition(
        k=k,
        centers=centers,
        membership=labels,
        scaler=scaler,
        sizes=np.bincount(labels, minlength=k),
        objective=obj,
        n_iter=n_iter,
        objective_trace=trace,
    )


def assign_geographic(locations: np.ndarray, partition: Partition) -> np.ndarray:
    """Route locations to subregions by normalized (x, y) distance only.

    The gain and BS components of the centers are ignored, so points can
    be routed before their gain is known. Ties take the lowest cluster id.
    """
    pts = partition.scaler.transform_xy(locations)
    centers_xy = partition.centers[:, 2:4]
    d2 = ((pts[:, None, :] - centers_xy[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


class SubregionClusterer(ClusterMixin, BaseEstimator):
    """Estimator wrapper around :func:`kmeans_partition`.

    ``fit`` takes (M, 5) sample rows; ``predict`` routes (N, 2) map
    locations to subregions geographically.
    """

    def __init__(self, n_clusters=7, n_restarts=10, tol=1e-6, max_iter=300,
                 random_state=0):
        self.n_clusters = n_clusters
        self.n_restarts = n_restarts
        self.tol = tol
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        self.partition_ = kmeans_partition(
            X,
            self.n_clusters,
            seed=self.random_state,
            tol=self.tol,
            max_iter=self.max_iter,
            n_restarts=self.n_restarts,
        )
        self.labels_ = self.partition_.membership
        return self

    def predict(self, X):
        if not hasattr(self, "partition_"):
            raise RuntimeError("SubregionClusterer is not fitted yet")
        return assign_geographic(X, self.partition_)
