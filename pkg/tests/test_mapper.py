import numpy as np
import pytest
from sklearn.base import clone

from gainmap.clustering import assign_geographic, kmeans_partition
from gainmap.mapper import (
    EmptyClusterError,
    InsufficientDataError,
    OutOfBoundsError,
    SubregionalGainMapper,
    draw_test_set,
    evaluate_rmse,
    pick_best_k,
    predict_grid,
    predict_point,
    predict_points,
    select_k,
    standardize_targets,
    train_subnetworks,
)
from gainmap.network import Architecture, Hyperparameters
from gainmap.sampling import random_sample
from tests.conftest import make_samples

FAST = Hyperparameters(epochs=40)
SMALL_ARCH = Architecture(conv_channels=8, fc_neurons=8)


# --- target standardization --------------------------------------------------

def test_standardize_targets():
    z, mean, std, const = standardize_targets(np.array([2.0, 4.0, 6.0]))
    assert (mean, const) == (4.0, False)
    assert std == pytest.approx(np.sqrt(8.0 / 3.0))
    assert z.mean() == pytest.approx(0.0, abs=1e-15)
    assert z.std() == pytest.approx(1.0)

    z, mean, std, const = standardize_targets(np.full(5, -70.0))
    assert (mean, std, const) == (-70.0, 1.0, True)
    assert (z == 0.0).all()


# --- composite training ------------------------------------------------------

@pytest.fixture(scope="module")
def fitted(small_truth):
    rows = random_sample(small_truth, 160, seed=30)
    part = kmeans_partition(rows, 3, seed=31)
    model = train_subnetworks(rows, part, SMALL_ARCH, FAST, master_seed=32)
    return rows, part, model


def test_training_is_bit_reproducible(small_truth, fitted):
    rows, part, model = fitted
    again = train_subnetworks(rows, part, SMALL_ARCH, FAST, master_seed=32)
    for a, b in zip(model.subnets, again.subnets):
        assert np.array_equal(a.params.flat, b.params.flat)
        assert (a.target_mean, a.target_std) == (b.target_mean, b.target_std)


def test_worker_count_does_not_change_the_model(small_truth, fitted):
    rows, part, model = fitted
    par = train_subnetworks(rows, part, SMALL_ARCH, FAST, master_seed=32,
                            n_jobs=2)
    for a, b in zip(model.subnets, par.subnets):
        assert np.array_equal(a.params.flat, b.params.flat)


def test_training_set_overrides(small_truth, fitted):
    rows, part, _ = fitted
    with pytest.raises(ValueError):
        train_subnetworks(rows, part, SMALL_ARCH, FAST, master_seed=0,
                          training_sets=[np.arange(5)])
    sets = [part.members(k) for k in range(3)]
    sets[1] = np.empty(0, dtype=np.int64)
    with pytest.raises(EmptyClusterError):
        train_subnetworks(rows, part, SMALL_ARCH, FAST, master_seed=0,
                          training_sets=sets)


# --- routing and prediction ---------------------------------------------------

def test_predictions_route_to_the_nearest_subregion():
    # constant gains per spatial clump: each subnet's output sits near its own
    # cluster mean, so a query's prediction reveals which subregion scored it.
    # (Constant targets standardize to zeros; the trained net still adds a tiny
    # residual on top of the de-standardized mean, so we check routing, not
    # bit-exact means.)
    rows = np.vstack(
        [
            make_samples(np.full(12, -40.0),
                         xs=np.linspace(0, 4, 12), ys=np.zeros(12)),
            make_samples(np.full(12, -80.0),
                         xs=np.linspace(36, 40, 12), ys=np.zeros(12)),
        ]
    )
    part = kmeans_partition(rows, 2, seed=1)
    model = train_subnetworks(rows, part, SMALL_ARCH, FAST, master_seed=2)
    preds = predict_points(model, np.array([[1.0, 0.0], [39.0, 0.0]]))
    assert abs(preds[0] - (-40.0)) < abs(preds[0] - (-80.0))
    assert abs(preds[1] - (-80.0)) < abs(preds[1] - (-40.0))
    assert preds[0] == pytest.approx(-40.0, abs=1.0)
    assert preds[1] == pytest.approx(-80.0, abs=1.0)
    assert predict_point(model, 39.0, 0.0) == preds[1]


def test_prediction_matches_manual_composition(fitted):
    rows, part, model = fitted
    locs = rows[:20, 2:4]
    got = predict_points(model, locs)
    groups = assign_geographic(locs, part)
    from gainmap.network import forward

    for i in range(20):
        net = model.subnets[groups[i]]
        feats = np.empty(4)
        feats[0:2] = (model.bs_xy - part.scaler.min_[0:2]) / part.scaler.range_[0:2]
        feats[2:4] = part.scaler.transform_xy(locs[i : i + 1])[0]
        raw = forward(net.params, feats)[0]
        assert got[i] == raw * net.target_std + net.target_mean


def test_bounds_checking(fitted, small_truth):
    rows, part, _ = fitted
    model = train_subnetworks(rows, part, SMALL_ARCH, FAST, master_seed=33,
                              bounds=(60.0, 60.0))
    with pytest.raises(OutOfBoundsError):
        predict_points(model, np.array([[61.0, 5.0]]))
    preds = predict_points(model, np.array([[60.0, 0.0]]))  # edges included
    assert np.isfinite(preds).all()


def test_predict_grid_masks_blocked_cells(small_truth, fitted):
    _, _, model = fitted
    grid = predict_grid(model, small_truth.env)
    assert grid.shape == small_truth.env.grid_shape
    assert np.isnan(grid[small_truth.env.blocked]).all()
    assert np.isfinite(grid[~small_truth.env.blocked]).all()


# --- evaluation ----------------------------------------------------------------

def test_rmse_composition_identity():
    preds = np.array([1.0, 3.0, 0.0, 4.0])
    truths = np.array([0.0, 4.0, 3.0, 1.0])
    groups = np.array([0, 0, 1, 1])
    rep = evaluate_rmse(preds, truths, groups)
    assert rep.per_group[0] == pytest.approx(1.0)
    assert rep.per_group[1] == pytest.approx(3.0)
    assert rep.group_sizes == {0: 2, 1: 2}
    # rmse^2 * N = sum_k rmse_k^2 * N_k
    assert rep.rmse == pytest.approx(np.sqrt(5.0))
    lhs = rep.rmse**2 * 4
    rhs = sum(rep.per_group[g] ** 2 * rep.group_sizes[g] for g in (0, 1))
    assert lhs == pytest.approx(rhs)


def test_rmse_validation():
    with pytest.raises(ValueError):
        evaluate_rmse(np.zeros(3), np.zeros(2))
    with pytest.raises(ValueError):
        evaluate_rmse(np.empty(0), np.empty(0))
    with pytest.raises(ValueError):
        evaluate_rmse(np.zeros(3), np.zeros(3), np.zeros(2))


# --- model selection -------------------------------------------------------------

def test_pick_best_k_worked_table():
    rmses = [3.159, 3.049, 2.982, 2.801, 2.722, 2.770, 2.641, 2.715, 2.799]
    assert pick_best_k(list(range(1, 10)), rmses) == 7


def test_pick_best_k_ties_and_gaps():
    assert pick_best_k([1, 2, 3], [2.0, 2.0, 3.0]) == 1     # tie: smaller k
    assert pick_best_k([1, 2, 3], [None, 2.0, None]) == 2   # gaps skipped
    with pytest.raises(InsufficientDataError):
        pick_best_k([1, 2], [None, None])


def test_draw_test_set_is_disjoint_and_sized(small_truth):
    scgm = random_sample(small_truth, 100, seed=40)
    test = draw_test_set(small_truth, scgm, 0.2, seed=41)
    n_unblocked = len(small_truth.unblocked_cells()[0])
    assert len(test) == round(0.2 * n_unblocked)
    env = small_truth.env
    used = set(zip(*env.cell_of(scgm[:, 2], scgm[:, 3])))
    drawn = set(zip(*env.cell_of(test[:, 2], test[:, 3])))
    assert not used & drawn
    assert np.array_equal(
        draw_test_set(small_truth, scgm, 0.2, seed=41), test
    )
    with pytest.raises(ValueError):
        draw_test_set(small_truth, scgm, 0.999, seed=0)
    with pytest.raises(ValueError):
        draw_test_set(small_truth, scgm, 0.0, seed=0)


def test_select_k_scores_all_candidates(small_truth):
    scgm = random_sample(small_truth, 90, seed=42)
    sel = select_k(small_truth, scgm, range(1, 5), SMALL_ARCH, FAST, seed=43,
                   n_restarts=3)
    assert [e.k for e in sel.entries] == [1, 2, 3, 4]
    oks = [e for e in sel.entries if e.status == "ok"]
    assert oks and all(e.rmse is not None for e in oks)
    best = min(oks, key=lambda e: (e.rmse, e.k))
    assert sel.best_k == best.k
    for e in oks:
        assert sum(e.cluster_sizes) == 90


def test_select_k_flags_too_small_clusters(small_truth):
    # 20 samples cannot give 12 clusters of 8; those entries must be skipped
    scgm = random_sample(small_truth, 20, seed=44)
    sel = select_k(small_truth, scgm, [1, 12], SMALL_ARCH, FAST, seed=45,
                   n_restarts=2)
    by_k = {e.k: e for e in sel.entries}
    assert by_k[12].status == "insufficient-data"
    assert by_k[12].rmse is None
    assert sel.best_k == 1
    with pytest.raises(InsufficientDataError):
        select_k(small_truth, scgm, [9, 12], SMALL_ARCH, FAST, seed=45,
                 n_restarts=2)


# --- estimator front end -----------------------------------------------------------

def test_estimator_fit_predict_roundtrip(small_truth):
    rows = random_sample(small_truth, 120, seed=50)
    est = SubregionalGainMapper(n_subregions=3, epochs=40, random_state=7)
    est.fit(rows[:, :4], rows[:, 4])
    preds = est.predict(rows[:, 2:4])
    assert preds.shape == (120,)
    assert np.isfinite(preds).all()
    # deterministic refit
    again = SubregionalGainMapper(n_subregions=3, epochs=40, random_state=7)
    again.fit(rows[:, :4], rows[:, 4])
    assert np.array_equal(preds, again.predict(rows[:, 2:4]))


def test_estimator_sklearn_contract(small_truth):
    est = SubregionalGainMapper(n_subregions=2, epochs=5)
    params = est.get_params()
    assert params["n_subregions"] == 2
    est.set_params(epochs=9)
    assert est.epochs == 9
    clone(est)
    with pytest.raises(RuntimeError):
        est.predict(np.zeros((1, 2)))
    rows = random_sample(small_truth, 40, seed=51)
    with pytest.raises(ValueError):
        est.fit(rows[:, :3], rows[:, 4])


def test_estimator_reuse_option_changes_training(small_truth):
    rows = random_sample(small_truth, 120, seed=52)
    plain = SubregionalGainMapper(n_subregions=4, epochs=30, random_state=3)
    reuse = SubregionalGainMapper(n_subregions=4, epochs=30, random_state=3,
                                  reuse_sigma=2.0)
    plain.fit(rows[:, :4], rows[:, 4])
    reuse.fit(rows[:, :4], rows[:, 4])
    same_parts = np.array_equal(
        plain.model_.partition.membership, reuse.model_.partition.membership
    )
    assert same_parts  # reuse must not alter the clustering itself
    diff = any(
        not np.array_equal(a.params.flat, b.params.flat)
        for a, b in zip(plain.model_.subnets, reuse.model_.subnets)
    )
    assert diff  # but it must alter what the subnets saw
