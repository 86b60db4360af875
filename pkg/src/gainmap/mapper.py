"""The composite gain-map regressor: one small CNN per subregion.

A fitted model is a partition plus one trained network per cluster; map
locations route to their geographically nearest subregion center and are
scored by that subregion's network. Targets are standardized per
subregion during training and de-standardized on the way out.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, RegressorMixin

from .clustering import Partition, assign_geographic, kmeans_partition
from .network import (
    Architecture,
    Hyperparameters,
    NetworkParams,
    forward,
    init_network,
    train,
)
from .reuse import reuse_boundary_points
from .seeding import derive_seed
from ._validation import as_locations, as_samples


class EmptyClusterError(ValueError):
    """A subregion has no training samples."""


class InsufficientDataError(ValueError):
    """No candidate cluster count had enough samples per cluster to train."""


class OutOfBoundsError(ValueError):
    pass


#: Smallest cluster a sweep will train on. Below this the per-subregion
#: standardization and the network fit are meaningless.
MIN_TRAINABLE_CLUSTER = 8


@dataclass
class Subnet:
    """One subregion's network plus its target standardization."""

    params: NetworkParams
    target_mean: float
    target_std: float          # stored as 1.0 when targets were constant
    target_constant: bool = False


@dataclass
class McnnModel:
    partition: Partition
    subnets: list[Subnet]
    arch: Architecture
    hyper: Hyperparameters
    master_seed: int
    bs_xy: tuple[float, float] = (0.0, 0.0)
    bounds: tuple[float, float] | None = None   # (width, height) if known
    loss_histories: list[np.ndarray] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.partition.k


def standardize_targets(gains: np.ndarray) -> tuple[np.ndarray, float, float, bool]:
    """Zero-mean unit-variance targets; constant targets flag and pass through."""
    gains = np.asarray(gains, dtype=np.float64)
    mean = float(gains.mean())
    std = float(gains.std())
    if std < 1e-12:
        return np.zeros_like(gains), mean, 1.0, True
    return (gains - mean) / std, mean, std, False


def _fit_one(samples, partition, idx, arch, hyper, master_seed, k):
    if len(idx) == 0:
        raise EmptyClusterError(f"subregion {k} has no training samples")
    feats = partition.scaler.transform(samples[idx])[:, :4]
    y, mean, std, const = standardize_targets(samples[idx, 4])
    params = init_network(arch, derive_seed(master_seed, "subnet-init", k))
    hy = replace(hyper, seed=derive_seed(master_seed, "subnet-train", k))
    trained, history = train(params, feats, y, hy)
    return Subnet(trained, mean, std, const), history


def train_subnetworks(
    samples: np.ndarray,
    partition: Partition,
    arch: Architecture,
    hyper: Hyperparameters,
    master_seed: int,
    training_sets: list[np.ndarray] | None = None,
    bounds: tuple[float, float] | None = None,
    n_jobs: int = 1,
) -> McnnModel:
    """Fit one network per subregion.

    ``training_sets`` overrides the per-cluster sample index sets (used for
    boundary reuse and further-sampling augmentation); by default each
    subregion trains on exactly its members. Subnet seeds derive from the
    master seed and the cluster id, so results do not depend on ``n_jobs``.
    """
    samples = as_samples(samples)
    if training_sets is None:
        training_sets = [partition.members(k) for k in range(partition.k)]
    if len(training_sets) != partition.k:
        raise ValueError(
            f"expected {partition.k} training sets, got {len(training_sets)}"
        )
    args = [
        (samples, partition, np.asarray(training_sets[k], dtype=np.int64),
         arch, hyper, master_seed, k)
        for k in range(partition.k)
    ]
    if n_jobs == 1:
        results = [_fit_one(*a) for a in args]
    else:
        # each subnet is seeded independently, so the worker count cannot
        # change the result, only the wall time
        results = Parallel(n_jobs=n_jobs)(delayed(_fit_one)(*a) for a in args)
    subnets = [r[0] for r in results]
    histories = [r[1] for r in results]
    return McnnModel(
        partition=partition,
        subnets=subnets,
        arch=arch,
        hyper=hyper,
        master_seed=master_seed,
        bs_xy=(float(samples[0, 0]), float(samples[0, 1])),
        bounds=bounds,
        loss_histories=histories,
    )


def predict_points(model: McnnModel, locations: np.ndarray) -> np.ndarray:
    """Gains at arbitrary map locations, shape (N,)."""
    locations = as_locations(locations)
    if model.bounds is not None:
        w, h = model.bounds
        bad = ~(
            (locations[:, 0] >= 0) & (locations[:, 0] <= w)
            & (locations[:, 1] >= 0) & (locations[:, 1] <= h)
        )
        if bad.any():
            i = int(np.nonzero(bad)[0][0])
            raise OutOfBoundsError(
                f"location {tuple(locations[i])} lies outside the {w}x{h} map"
            )
    assignment = assign_geographic(locations, model.partition)
    scaler = model.partition.scaler
    feats = np.empty((len(locations), 4))
    feats[:, 0:2] = (np.asarray(model.bs_xy) - scaler.min_[0:2]) / scaler.range_[0:2]
    feats[:, 2:4] = scaler.transform_xy(locations)
    out = np.empty(len(locations))
    for k in range(model.k):
        mask = assignment == k
        if not mask.any():
            continue
        net = model.subnets[k]
        pred = forward(net.params, feats[mask])
        out[mask] = pred * net.target_std + net.target_mean
    return out


def predict_point(model: McnnModel, x: float, y: float) -> float:
    return float(predict_points(model, np.array([[x, y]]))[0])


def predict_grid(model: McnnModel, env) -> np.ndarray:
    """Gains for every unblocked cell center; blocked cells are NaN."""
    grid = np.full(env.grid_shape, np.nan)
    ix, iy = np.nonzero(~env.blocked)
    locs = np.column_stack((env.cell_x[ix], env.cell_y[iy]))
    grid[ix, iy] = predict_points(model, locs)
    return grid


@dataclass
class EvalReport:
    rmse: float
    per_group: dict[int, float]
    group_sizes: dict[int, int]


def evaluate_rmse(
    predictions: np.ndarray,
    truths: np.ndarray,
    groups: np.ndarray | None = None,
) -> EvalReport:
    """Overall RMSE, optionally split by group (subregion) ids.

    Groups with no points simply do not appear. The groupwise values
    satisfy rmse^2 * N = sum_k rmse_k^2 * N_k by construction.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if predictions.shape != truths.shape or predictions.ndim != 1:
        raise ValueError("predictions and truths must be equal-length vectors")
    if predictions.size == 0:
        raise ValueError("cannot evaluate an empty set")
    sq = (predictions - truths) ** 2
    overall = float(np.sqrt(sq.mean()))
    per_group: dict[int, float] = {}
    sizes: dict[int, int] = {}
    if groups is not None:
        groups = np.asarray(groups)
        if groups.shape != predictions.shape:
            raise ValueError("groups must match predictions in length")
        for g in np.unique(groups):
            mask = groups == g
            per_group[int(g)] = float(np.sqrt(sq[mask].mean()))
            sizes[int(g)] = int(mask.sum())
    return EvalReport(rmse=overall, per_group=per_group, group_sizes=sizes)


def pick_best_k(ks: list[int], rmses: list[float | None]) -> int:
    """Lowest-RMSE cluster count; exact ties resolve to the smaller count."""
    best_k = None
    best_r = None
    for k, r in sorted(zip(ks, rmses)):
        if r is None:
            continue
        if best_r is None or r < best_r:
            best_k, best_r = k, r
    if best_k is None:
        raise InsufficientDataError(
            "no cluster count produced trainable subregions"
        )
    return best_k


@dataclass
class KSweepEntry:
    k: int
    rmse: float | None
    status: str                      # "ok" or "insufficient-data"
    per_cluster: dict[int, float] = field(default_factory=dict)
    cluster_sizes: list[int] = field(default_factory=list)


@dataclass
class KSelection:
    best_k: int
    entries: list[KSweepEntry]
    test_samples: np.ndarray         # (M_te, 5) held-out truth rows


def draw_test_set(gt_map, scgm: np.ndarray, test_fraction: float,
                  seed: int) -> np.ndarray:
    """Held-out truth cells, disjoint from the sampled set.

    The size is ``test_fraction`` of all unblocked cells; cells already in
    the SCGM are excluded from the draw.
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    env = gt_map.env
    ix, iy = gt_map.unblocked_cells()
    taken = np.zeros(env.grid_shape, dtype=bool)
    scgm = as_samples(scgm)
    sx, sy = env.cell_of(scgm[:, 2], scgm[:, 3])
    taken[sx, sy] = True
    free = np.nonzero(~taken[ix, iy])[0]
    n_te = int(round(test_fraction * len(ix)))
    if n_te > len(free):
        raise ValueError(
            f"test fraction {test_fraction} needs {n_te} cells but only "
            f"{len(free)} remain outside the sampled set"
        )
    rng = np.random.default_rng(derive_seed(seed, "test-set"))
    pick = free[rng.choice(len(free), size=n_te, replace=False)]
    return gt_map.sample_array(ix[pick], iy[pick])


def select_k(
    gt_map,
    scgm: np.ndarray,
    k_range,
    arch: Architecture,
    hyper: Hyperparameters,
    seed: int,
    test_fraction: float = 0.2,
    n_restarts: int = 10,
    min_cluster: int = MIN_TRAINABLE_CLUSTER,
    n_jobs: int = 1,
) -> KSelection:
    """Train the composite at each candidate K and pick the test-RMSE argmin.

    One fixed test set (seeded, disjoint from the SCGM) is shared by all
    candidates so their errors are comparable. Candidates where some
    cluster falls below ``min_cluster`` members are recorded as
    insufficient-data and skipped. Exact RMSE ties resolve to the smaller
    K.
    """
    scgm = as_samples(scgm)
    k_list = sorted(set(int(k) for k in k_range))
    if not k_list:
        raise ValueError("k_range is empty")
    test = draw_test_set(gt_map, scgm, test_fraction, seed)
    test_locs = test[:, 2:4]
    entries: list[KSweepEntry] = []
    for k in k_list:
        partition = kmeans_partition(
            scgm, k, seed=derive_seed(seed, "kmeans", k), n_restarts=n_restarts
        )
        sizes = partition.sizes.tolist()
        if partition.sizes.min() < min_cluster:
            entries.append(KSweepEntry(k, None, "insufficient-data",
                                       cluster_sizes=sizes))
            continue
        model = train_subnetworks(
            scgm, partition, arch, hyper,
            master_seed=derive_seed(seed, "train", k), n_jobs=n_jobs,
        )
        preds = predict_points(model, test_locs)
        groups = assign_geographic(test_locs, partition)
        report = evaluate_rmse(preds, test[:, 4], groups)
        entries.append(KSweepEntry(k, report.rmse, "ok", report.per_group, sizes))
    best = pick_best_k([e.k for e in entries], [e.rmse for e in entries])
    return KSelection(best_k=best, entries=entries, test_samples=test)


class SubregionalGainMapper(RegressorMixin, BaseEstimator):
    """Scikit-learn style front end for the subregional CNN gain mapper.

    ``fit`` expects X as (M, 4) rows of (bs_x, bs_y, x, y) and y as the
    measured gains in dB; ``predict`` takes (N, 2) map locations. Set
    ``reuse_sigma`` to enable boundary-sample reuse between subregions.
    """

    def __init__(
        self,
        n_subregions: int = 7,
        learning_rate: float = 1e-3,
        epochs: int = 1000,
        batch_size: int | None = None,
        n_restarts: int = 10,
        reuse_sigma: float | None = None,
        bounds: tuple[float, float] | None = None,
        random_state: int = 0,
        n_jobs: int = 1,
    ):
        self.n_subregions = n_subregions
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.n_restarts = n_restarts
        self.reuse_sigma = reuse_sigma
        self.bounds = bounds
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != 4:
            raise ValueError(f"expected X of shape (M, 4), got {X.shape}")
        samples = as_samples(np.column_stack((X, y)))
        partition = kmeans_partition(
            samples,
            self.n_subregions,
            seed=derive_seed(self.random_state, "partition"),
            n_restarts=self.n_restarts,
        )
        training_sets = None
        if self.reuse_sigma is not None:
            training_sets = reuse_boundary_points(
                samples, partition, self.reuse_sigma
            )
        hyper = Hyperparameters(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
        )
        self.model_ = train_subnetworks(
            samples,
            partition,
            Architecture(),
            hyper,
            master_seed=self.random_state,
            training_sets=training_sets,
            bounds=self.bounds,
            n_jobs=self.n_jobs,
        )
        return self

    def predict(self, X):
        if not hasattr(self, "model_"):
            raise RuntimeError("SubregionalGainMapper is not fitted yet")
        return predict_points(self.model_, X)
