"""Boundary-sample reuse between neighbouring subregions.

A sample that belongs to one subregion but sits close to another
subregion's center (closer than that cluster's mean member distance plus
a tolerance band) carries information about both. Such samples are added
to the neighbour's training set without ever changing the clustering
itself, so training sets may overlap while memberships stay disjoint.
"""

from __future__ import annotations

import numpy as np

from .clustering import Partition
from ._validation import as_samples


def average_center_distance(cluster_rows: np.ndarray, center: np.ndarray,
                            scaler) -> float:
    """Mean normalized euclidean distance of cluster members to a center."""
    rows = as_samples(cluster_rows)
    pts = scaler.transform(rows)
    center = np.asarray(center, dtype=np.float64)
    if center.shape != (pts.shape[1],):
        raise ValueError(f"center must have shape ({pts.shape[1]},)")
    return float(np.sqrt(((pts - center) ** 2).sum(axis=1)).mean())


def reuse_boundary_points(
    samples: np.ndarray,
    partition: Partition,
    sigma_factor: float = 0.5,
) -> list[np.ndarray]:
    """Per-subregion training index sets augmented with boundary samples.

    Sample b (member of some other subregion) joins subregion k's training
    set when dist(b, center_k) - d_k < sigma_factor * d_k, with d_k the mean
    member distance to center_k, all in the normalized feature space. The
    inequality is strict, so sigma_factor = 0 adds nothing. Returns sorted
    index arrays into ``samples``; entry k always contains the members of k.

    The result is a pure function of its arguments (no randomness), and
    because the condition only looks at the original memberships and
    centers, re-running it can never grow the sets further.
    """
    samples = as_samples(samples)
    if sigma_factor < 0:
        raise ValueError(f"sigma_factor must be non-negative, got {sigma_factor}")
    if len(partition.membership) != len(samples):
        raise ValueError(
            "partition membership does not match the sample count"
        )
    pts = partition.scaler.transform(samples)
    # distances of every sample to every center, (M, K)
    dist = np.sqrt(
        ((pts[:, None, :] - partition.centers[None, :, :]) ** 2).sum(axis=2)
    )
    out: list[np.ndarray] = []
    for k in range(partition.k):
        members = partition.membership == k
        if not members.any():
            out.append(np.empty(0, dtype=np.int64))
            continue
        d_k = float(dist[members, k].mean())
        band = dist[:, k] - d_k < sigma_factor * d_k
        keep = members | (band & ~members)
        out.append(np.nonzero(keep)[0].astype(np.int64))
    return out
