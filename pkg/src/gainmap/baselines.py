"""Classical spatial interpolation baselines: IDW and ordinary kriging.

Both predict gains at map locations directly from the sampled map with no
training phase, which makes them the natural reference points for the
learned subregional model.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from sklearn.base import BaseEstimator, RegressorMixin

from ._validation import as_locations, as_samples

#: Distances below this are treated as "query sits on a sample".
EXACT_DISTANCE = 1e-9


class DegenerateRangeError(ValueError):
    """The truth values span zero range, so NRMSE is undefined."""


def idw_predict(samples: np.ndarray, locations: np.ndarray,
                power: float = 2.0) -> np.ndarray:
    """Inverse-distance-weighted interpolation of the sampled gains.

    A query within EXACT_DISTANCE of a sample returns that sample's gain
    (the first such sample on ties). Otherwise the prediction is the
    d^-power weighted mean, which is always a convex combination of the
    sample gains.
    """
    samples = as_samples(samples)
    locations = as_locations(locations)
    if power <= 0:
        raise ValueError(f"power must be positive, got {power}")
    xy = samples[:, 2:4]
    gains = samples[:, 4]
    out = np.empty(len(locations))
    # chunk queries to bound the (chunk, M) distance matrix
    chunk = max(1, int(4_000_000 // max(len(samples), 1)))
    for lo in range(0, len(locations), chunk):
        q = locations[lo : lo + chunk]
        d = np.sqrt(
            (q[:, 0, None] - xy[None, :, 0]) ** 2
            + (q[:, 1, None] - xy[None, :, 1]) ** 2
        )
        hit_row, hit_col = np.nonzero(d < EXACT_DISTANCE)
        with np.errstate(divide="ignore"):
            w = d ** (-power)
        np.nan_to_num(w, copy=False, posinf=0.0)
        # a query sitting on every sample zeroes the whole weight row; the
        # 0/0 result is overwritten by the exact-hit pass below
        with np.errstate(invalid="ignore"):
            pred = (w @ gains) / w.sum(axis=1)
        if len(hit_row):
            # keep the first matching sample per query
            first = {}
            for r, c in zip(hit_row, hit_col):
                first.setdefault(int(r), int(c))
            for r, c in first.items():
                pred[r] = gains[c]
        out[lo : lo + chunk] = pred
    return out


@dataclass
class VariogramModel:
    """Exponential semivariogram g(h) = nugget + sill * (1 - exp(-3h/range)).

    ``range_`` is the practical range: g reaches ~95% of nugget+sill there.
    ``degenerate`` marks a constant-gain fit where only the (zero) nugget
    is meaningful.
    """

    nugget: float
    sill: float
    range_: float
    degenerate: bool = False

    def __call__(self, h: np.ndarray) -> np.ndarray:
        h = np.asarray(h, dtype=np.float64)
        return self.nugget + self.sill * (1.0 - np.exp(-3.0 * h / self.range_))


def empirical_semivariogram(
    samples: np.ndarray, n_bins: int = 15, max_lag: float | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Binned semivariances: (lag centers, mean semivariance, pair counts).

    Pairs beyond ``max_lag`` (default: half the diagonal of the samples'
    bounding box) are ignored; empty bins are dropped.
    """
    samples = as_samples(samples, min_rows=2)
    if n_bins < 1:
        raise ValueError("need at least one lag bin")
    xy = samples[:, 2:4]
    gains = samples[:, 4]
    if max_lag is None:
        span = xy.max(axis=0) - xy.min(axis=0)
        max_lag = 0.5 * float(np.hypot(span[0], span[1]))
    if max_lag <= 0:
        raise ValueError("samples are co-located; no lags to bin")
    d = pdist(xy)
    gamma = 0.5 * pdist(gains[:, None], metric="sqeuclidean")
    edges = np.linspace(0.0, max_lag, n_bins + 1)
    which = np.digitize(d, edges[1:-1])
    keep = d <= max_lag
    centers, means, counts = [], [], []
    for b in range(n_bins):
        mask = keep & (which == b)
        n = int(mask.sum())
        if n == 0:
            continue
        centers.append(0.5 * (edges[b] + edges[b + 1]))
        means.append(float(gamma[mask].mean()))
        counts.append(n)
    return np.asarray(centers), np.asarray(means), np.asarray(counts)


_SILL_FLOOR = 1e-12


def _ls_nugget_sill(f: np.ndarray, g: np.ndarray) -> tuple[float, float, float]:
    """Least-squares (nugget, sill) for fixed basis f(h); returns SSE too."""
    a = np.column_stack((np.ones_like(f), f))
    coef, *_ = np.linalg.lstsq(a, g, rcond=None)
    nugget, sill = float(coef[0]), float(coef[1])
    if nugget < 0.0:
        # refit through the origin when the free fit wants a negative nugget
        nugget = 0.0
        denom = float(f @ f)
        sill = float(f @ g) / denom if denom > 0 else 0.0
    sill = max(sill, _SILL_FLOOR)
    resid = g - (nugget + sill * f)
    return nugget, sill, float(resid @ resid)


def fit_variogram(
    samples: np.ndarray, n_bins: int = 15, max_lag: float | None = None
) -> VariogramModel:
    """Fit the exponential model to the binned semivariogram.

    The range is found by scanning a coarse geometric grid and then
    refining around the best candidate; nugget and sill come from linear
    least squares at each range (clamped non-negative). A constant-gain
    sample set has no spatial structure to fit: the result is flagged
    ``degenerate`` with zero nugget.
    """
    samples = as_samples(samples, min_rows=2)
    lags, gammas, _ = empirical_semivariogram(samples, n_bins, max_lag)
    top = float(lags.max())
    if float(samples[:, 4].std()) < 1e-12 or float(gammas.max()) <= 0.0:
        warnings.warn("constant gains: variogram fit is degenerate")
        return VariogramModel(0.0, _SILL_FLOOR, max(top, 1.0), degenerate=True)

    def scan(candidates):
        best = None
        for r in candidates:
            f = 1.0 - np.exp(-3.0 * lags / r)
            nugget, sill, sse = _ls_nugget_sill(f, gammas)
            if best is None or sse < best[0]:
                best = (sse, float(r), nugget, sill)
        return best

    coarse = np.geomspace(top / 50.0, top * 2.0, 25)
    _, r0, _, _ = scan(coarse)
    fine = np.geomspace(r0 / 1.6, r0 * 1.6, 21)
    _, r1, nugget, sill = scan(fine)
    return VariogramModel(nugget, sill, r1)


def _kriging_systems(variogram, nbr_xy, nbr_gain, q_xy):
    """Assemble the ordinary-kriging systems for a block of queries.

    Shapes: nbr_xy (Q, n, 2), nbr_gain (Q, n), q_xy (Q, 2). Returns the
    (Q, n+1, n+1) matrices and (Q, n+1) right-hand sides. The matrix
    diagonal is zero (a sample is exact at itself); the last row/column
    carry the unbiasedness constraint and Lagrange multiplier.
    """
    q, n, _ = nbr_xy.shape
    diff = nbr_xy[:, :, None, :] - nbr_xy[:, None, :, :]
    dmat = np.sqrt((diff ** 2).sum(axis=3))
    a = np.zeros((q, n + 1, n + 1))
    gam = variogram(dmat)
    idx = np.arange(n)
    gam[:, idx, idx] = 0.0
    a[:, :n, :n] = gam
    a[:, n, :n] = 1.0
    a[:, :n, n] = 1.0
    dq = np.sqrt(((nbr_xy - q_xy[:, None, :]) ** 2).sum(axis=2))
    b = np.empty((q, n + 1))
    b[:, :n] = variogram(dq)
    b[:, n] = 1.0
    return a, b


def kriging_predict(
    samples: np.ndarray,
    variogram: VariogramModel,
    locations: np.ndarray,
    neighborhood: int = 32,
    return_details: bool = False,
):
    """Ordinary kriging over the nearest ``neighborhood`` samples per query.

    Weights solve the semivariance system with a Lagrange multiplier
    enforcing sum(w) = 1. A query on top of a sample returns that sample's
    gain directly when the nugget is zero. Singular neighbourhoods (for
    example duplicated sample locations) fall back to IDW and are flagged.

    With ``return_details`` the result is (predictions, weights, fallback
    mask) where weights has one row per query over its neighbours.
    """
    samples = as_samples(samples)
    locations = as_locations(locations)
    if neighborhood < 1:
        raise ValueError("neighborhood must be at least 1")
    xy = samples[:, 2:4]
    gains = samples[:, 4]
    n = min(neighborhood, len(samples))
    tree = cKDTree(xy)
    dist, idx = tree.query(locations, k=n)
    if n == 1:
        dist = dist[:, None]
        idx = idx[:, None]
    nbr_xy = xy[idx]
    nbr_gain = gains[idx]
    preds = np.empty(len(locations))
    weights = np.zeros((len(locations), n))
    fallback = np.zeros(len(locations), dtype=bool)

    exact = (dist[:, 0] < EXACT_DISTANCE) & (variogram.nugget == 0.0)
    solve_mask = ~exact
    if exact.any():
        preds[exact] = nbr_gain[exact, 0]
        weights[exact, 0] = 1.0

    todo = np.nonzero(solve_mask)[0]
    if len(todo):
        a, b = _kriging_systems(
            variogram, nbr_xy[todo], nbr_gain[todo], locations[todo]
        )
        try:
            sol = np.linalg.solve(a, b[:, :, None])[:, :, 0]
            ok = np.isfinite(sol).all(axis=1)
        except np.linalg.LinAlgError:
            sol = np.full((len(todo), n + 1), np.nan)
            ok = np.zeros(len(todo), dtype=bool)
            for j in range(len(todo)):
                try:
                    sol[j] = np.linalg.solve(a[j], b[j])
                    ok[j] = np.isfinite(sol[j]).all()
                except np.linalg.LinAlgError:
                    ok[j] = False
        w = sol[:, :n]
        preds[todo] = (w * nbr_gain[todo]).sum(axis=1)
        weights[todo] = w
        bad = np.nonzero(~ok)[0]
        if len(bad):
            rows = todo[bad]
            preds[rows] = idw_predict(samples, locations[rows])
            weights[rows] = np.nan
            fallback[rows] = True
    if return_details:
        return preds, weights, fallback
    return preds


def nrmse(predictions: np.ndarray, truths: np.ndarray) -> float:
    """RMSE normalized by the truth value range (max - min)."""
    predictions = np.asarray(predictions, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if predictions.shape != truths.shape or predictions.ndim != 1:
        raise ValueError("predictions and truths must be equal-length vectors")
    if predictions.size == 0:
        raise ValueError("cannot evaluate an empty set")
    span = float(truths.max() - truths.min())
    if span <= 0.0:
        raise DegenerateRangeError("truth values span zero range")
    rmse = float(np.sqrt(((predictions - truths) ** 2).mean()))
    return rmse / span


class IdwInterpolator(RegressorMixin, BaseEstimator):
    """fit((M,2) locations, gains) / predict((N,2) locations) wrapper."""

    def __init__(self, power: float = 2.0):
        self.power = power

    def fit(self, X, y):
        X = as_locations(X)
        y = np.asarray(y, dtype=np.float64)
        self.samples_ = np.column_stack(
            (np.zeros((len(X), 2)), X, y)
        )
        return self

    def predict(self, X):
        if not hasattr(self, "samples_"):
            raise RuntimeError("IdwInterpolator is not fitted yet")
        return idw_predict(self.samples_, X, power=self.power)


class KrigingInterpolator(RegressorMixin, BaseEstimator):
    """Ordinary kriging with a variogram fitted at fit() time."""

    def __init__(self, n_bins: int = 15, neighborhood: int = 32,
                 max_lag: float | None = None):
        self.n_bins = n_bins
        self.neighborhood = neighborhood
        self.max_lag = max_lag

    def fit(self, X, y):
        X = as_locations(X)
        y = np.asarray(y, dtype=np.float64)
        self.samples_ = np.column_stack((np.zeros((len(X), 2)), X, y))
        self.variogram_ = fit_variogram(self.samples_, self.n_bins, self.max_lag)
        return self

    def predict(self, X):
        if not hasattr(self, "variogram_"):
            raise RuntimeError("KrigingInterpolator is not fitted yet")
        return kriging_predict(
            self.samples_, self.variogram_, X, neighborhood=self.neighborhood
        )
