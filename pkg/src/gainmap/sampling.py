"""Drawing measurement locations from a scene.

Covers the initial uniform survey, the variance/error-weighted allocation
of a further sampling budget across subregions, and drawing those extra
points inside each subregion's geographic footprint.
"""

from __future__ import annotations

import numpy as np

from .seeding import derive_seed
from ._validation import as_samples


class OversampleError(ValueError):
    """More points requested than there are usable cells."""


class DegenerateRatesError(ValueError):
    """Every allocation weight is zero, so rates are undefined."""


class SubregionExhaustedError(ValueError):
    """A subregion has fewer free cells than its allocated count."""

    def __init__(self, cluster: int, requested: int, available: int):
        self.cluster = cluster
        self.requested = requested
        self.available = available
        super().__init__(
            f"subregion {cluster} has {available} free cell(s) "
            f"but {requested} were requested"
        )


def random_sample(gt_map, m: int, seed: int) -> np.ndarray:
    """Sample ``m`` distinct unblocked cells uniformly at random.

    Returns (m, 5) rows of (bs_x, bs_y, x, y, gain_db) at cell centers.
    """
    ix, iy = gt_map.unblocked_cells()
    total = len(ix)
    if m < 0:
        raise ValueError(f"sample count must be non-negative, got {m}")
    if m > total:
        raise OversampleError(
            f"requested {m} samples but only {total} unblocked cells exist"
        )
    rng = np.random.default_rng(seed)
    pick = rng.choice(total, size=m, replace=False)
    return gt_map.sample_array(ix[pick], iy[pick])


def compute_sampling_rates(
    sizes: np.ndarray, variances: np.ndarray, rmses: np.ndarray
) -> np.ndarray:
    """Per-subregion sampling rates from size share, gain variance, and error.

    rate_k is proportional to theta_k * delta_k * R_k where theta_k is the
    subregion's share of all samples, delta_k the population variance of
    its gains, and R_k its current test error. Rates sum to one. If every
    product is zero the allocation is undefined and an error is raised so
    the caller can fall back to an even split.
    """
    sizes = np.asarray(sizes, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    rmses = np.asarray(rmses, dtype=np.float64)
    if not (sizes.shape == variances.shape == rmses.shape) or sizes.ndim != 1:
        raise ValueError("sizes, variances and rmses must be 1-D and equal length")
    if len(sizes) == 0:
        raise ValueError("need at least one subregion")
    if (sizes < 0).any() or (variances < 0).any() or (rmses < 0).any():
        raise ValueError("allocation inputs must be non-negative")
    theta = sizes / sizes.sum() if sizes.sum() > 0 else sizes
    weights = theta * variances * rmses
    total = weights.sum()
    if total <= 0:
        raise DegenerateRatesError(
            "all subregion weights are zero; use an even allocation instead"
        )
    return weights / total


def population_variance(values: np.ndarray) -> float:
    """Variance with the 1/M normalization (not the sample estimator)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("variance of an empty set is undefined")
    return float(np.mean((values - values.mean()) ** 2))


def allocate_counts(n: int, rates: np.ndarray) -> np.ndarray:
    """Split an integer budget by rates using largest-remainder rounding.

    Counts sum to ``n`` exactly. Remainder ties go to the lower index.
    """
    rates = np.asarray(rates, dtype=np.float64)
    if n < 0:
        raise ValueError(f"budget must be non-negative, got {n}")
    if rates.ndim != 1 or len(rates) == 0:
        raise ValueError("rates must be a non-empty 1-D array")
    if not np.isclose(rates.sum(), 1.0, atol=1e-9):
        raise ValueError(f"rates must sum to 1, got {rates.sum()!r}")
    exact = n * rates
    counts = np.floor(exact).astype(np.int64)
    short = n - int(counts.sum())
    if short > 0:
        remainders = exact - counts
        # stable sort keeps ties in index order
        order = np.argsort(-remainders, kind="stable")
        counts[order[:short]] += 1
    return counts


def even_rates(k: int) -> np.ndarray:
    if k <= 0:
        raise ValueError(f"need a positive subregion count, got {k}")
    return np.full(k, 1.0 / k)


def resample_subregions(
    gt_map,
    partition,
    counts: np.ndarray,
    existing: np.ndarray,
    seed: int,
) -> np.ndarray:
    """Draw new measurements inside each subregion's geographic footprint.

    Candidate cells for subregion k are the unblocked cells whose centers
    assign to k, minus any cell already present in ``existing``. Each
    subregion draws uniformly without replacement with its own derived
    seed. Raises SubregionExhaustedError when a subregion cannot cover its
    count.
    """
    from .clustering import assign_geographic

    counts = np.asarray(counts, dtype=np.int64)
    if len(counts) != partition.k:
        raise ValueError(
            f"expected {partition.k} counts, got {len(counts)}"
        )
    if (counts < 0).any():
        raise ValueError("counts must be non-negative")
    env = gt_map.env
    ix, iy = gt_map.unblocked_cells()
    locs = np.column_stack((env.cell_x[ix], env.cell_y[iy]))
    assignment = assign_geographic(locs, partition)

    taken = np.zeros(env.grid_shape, dtype=bool)
    if len(existing):
        existing = as_samples(existing)
        ex_ix, ex_iy = env.cell_of(existing[:, 2], existing[:, 3])
        taken[ex_ix, ex_iy] = True
    free = ~taken[ix, iy]

    chunks = []
    for k in range(partition.k):
        need = int(counts[k])
        pool = np.nonzero((assignment == k) & free)[0]
        if need > len(pool):
            raise SubregionExhaustedError(k, need, len(pool))
        if need == 0:
            continue
        rng = np.random.default_rng(derive_seed(seed, "resample", k))
        pick = pool[rng.choice(len(pool), size=need, replace=False)]
        chunks.append(gt_map.sample_array(ix[pick], iy[pick]))
    if not chunks:
        return np.empty((0, 5))
    return np.vstack(chunks)
