import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from jointface.errors import InvalidInputError, RankDeficiencyError
from jointface.regression import (
    LandmarkRegressor,
    VisibilityRegressor,
    default_lambda,
    landmark_design,
    predict_landmark_update,
    predict_visibility,
    solve_weighted_ridge_ls,
    train_landmark,
    train_visibility,
    visibility_weighted,
)


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-300)


# ---- solve_weighted_ridge_ls

def test_square_full_rank_matches_dense_solve(rng):
    for _ in range(20):
        p = rng.integers(1, 30)
        F = rng.normal(size=(p, p))
        Y = rng.normal(size=(p, 3))
        W = solve_weighted_ridge_ls(F, Y, None, 0.0)
        assert rel_err(W, np.linalg.solve(F, Y).T) <= 1e-9


def test_matches_both_oracles(rng):
    for _ in range(50):
        n, p, m = rng.integers(1, 50, size=3)
        F = rng.normal(size=(n, p))
        Y = rng.normal(size=(n, m))
        w = rng.uniform(0, 2, size=(n, m)) * (rng.random((n, m)) > 0.2)
        lam = rng.uniform(1e-3, 2)
        W = solve_weighted_ridge_ls(F, Y, w, lam)
        assert rel_err(W, oracles.weighted_ridge(F, Y, w, lam)) <= 1e-9
        assert rel_err(W, oracles.weighted_ridge_lstsq(F, Y, w, lam)) <= 1e-8


def test_equal_row_weights_equal_unweighted(rng):
    F = rng.normal(size=(30, 5))
    Y = rng.normal(size=(30, 2))
    a = solve_weighted_ridge_ls(F, Y, np.full(30, 3.0), 0.0)
    b = solve_weighted_ridge_ls(F, Y, None, 0.0)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_zero_weight_row_equals_deletion(rng):
    F = rng.normal(size=(20, 6))
    Y = rng.normal(size=(20, 3))
    w = np.ones(20)
    w[7] = 0
    Y[7] = 1e6
    a = solve_weighted_ridge_ls(F, Y, w, 0.1)
    b = solve_weighted_ridge_ls(np.delete(F, 7, 0), np.delete(Y, 7, 0), None, 0.1)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_singular_without_ridge_raises(rng):
    F = rng.normal(size=(3, 8))
    with pytest.raises(RankDeficiencyError):
        solve_weighted_ridge_ls(F, rng.normal(size=(3, 2)), None, 0.0)
    # The same system is fine once a ridge is added.
    assert np.all(np.isfinite(solve_weighted_ridge_ls(F, rng.normal(size=(3, 2)), None, 1e-6)))


@given(st.integers(0, 2**32 - 1), st.floats(1e-6, 10.0))
def test_normal_equation_residual(seed, lam):
    rng = np.random.default_rng(seed)
    n, p, m = rng.integers(1, 40, size=3)
    F = rng.normal(size=(n, p))
    Y = rng.normal(size=(n, m))
    w = rng.uniform(0, 1, size=n)
    W = solve_weighted_ridge_ls(F, Y, w, lam)
    rhs = F.T @ (w[:, None] * Y)
    lhs = (F.T @ (w[:, None] * F) + lam * np.eye(p)) @ W.T
    assert np.linalg.norm(lhs - rhs) <= 1e-8 * max(np.linalg.norm(rhs), 1e-300) + 1e-14


def test_solver_input_validation(rng):
    with pytest.raises(InvalidInputError):
        solve_weighted_ridge_ls(np.zeros((3, 2)), np.zeros((4, 1)))
    with pytest.raises(InvalidInputError):
        solve_weighted_ridge_ls(np.zeros((3, 2)), np.zeros((3, 1)), -np.ones(3))
    with pytest.raises(InvalidInputError):
        solve_weighted_ridge_ls(np.zeros((3, 2)), np.zeros((3, 1)), lam=-1)


def test_default_lambda():
    assert default_lambda(2560) == pytest.approx(2.56)


# ---- visibility

D, L, K = 5, 3, 2


def random_vis(rng, scale=1.0):
    return VisibilityRegressor(rng.normal(size=(D, D * L)) * scale, rng.normal(size=(D, 3)) * scale)


def test_zero_visibility_regressor_is_identity(rng):
    c = rng.uniform(0, 1, D)
    out = predict_visibility(VisibilityRegressor.zeros(D, D * L), rng.normal(size=D * L), rng.normal(size=3), c)
    np.testing.assert_array_equal(out, c)


def test_visibility_clamped_at_one():
    reg = VisibilityRegressor(np.zeros((D, D * L)), np.zeros((D, 3)))
    reg.T_h[2, 0] = 0.5
    out = predict_visibility(reg, np.zeros(D * L), [1.0, 0, 0], np.ones(D))
    assert out[2] == 1.0


@given(st.integers(0, 2**32 - 1))
def test_visibility_always_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    out = predict_visibility(random_vis(rng, 5), rng.normal(size=(10, D * L)), rng.normal(size=(10, 3)),
                             rng.uniform(0, 1, (10, D)))
    assert out.shape == (10, D) and out.min() >= 0 and out.max() <= 1


def test_visibility_zero_targets_learn_nothing(rng):
    n = 30
    c = rng.integers(0, 2, size=(n, D)).astype(float)
    reg = train_visibility(rng.normal(size=(n, D * L)), rng.normal(size=(n, 3)), c, c, lam=0.1)
    assert np.linalg.norm(reg.T_a) <= 1e-6 and np.linalg.norm(reg.T_h) <= 1e-6


def test_visibility_single_sample_ridge_oracle(rng):
    phi = rng.normal(size=(1, D * L))
    h = rng.normal(size=(1, 3))
    c_prev = np.ones((1, D))
    c_true = rng.integers(0, 2, size=(1, D)).astype(float)
    with pytest.raises(RankDeficiencyError):
        train_visibility(phi, h, c_prev, c_true, lam=0.0)
    reg = train_visibility(phi, h, c_prev, c_true, lam=1e-4)
    ref = oracles.weighted_ridge(np.hstack([phi, h]), c_true - c_prev, None, 1e-4)
    got = np.hstack([reg.T_a, reg.T_h])
    assert rel_err(got, ref) <= 1e-9


def vis_loss(T, X, Y, lam):
    return np.sum((Y - X @ T.T) ** 2) + lam * np.sum(T**2)


def test_visibility_solution_is_local_optimum(rng):
    n = 40
    phi, h = rng.normal(size=(n, D * L)), rng.normal(size=(n, 3))
    c_prev = rng.uniform(0, 1, (n, D))
    c_true = rng.integers(0, 2, (n, D)).astype(float)
    lam = 0.05
    reg = train_visibility(phi, h, c_prev, c_true, lam=lam)
    T = np.hstack([reg.T_a, reg.T_h])
    X, Y = np.hstack([phi, h]), c_true - c_prev
    best = vis_loss(T, X, Y, lam)
    for _ in range(100):
        assert best <= vis_loss(T + 1e-3 * rng.normal(size=T.shape), X, Y, lam)


def test_visibility_without_pose_has_zero_pose_block(rng):
    n = 20
    reg = train_visibility(rng.normal(size=(n, D * L)), rng.normal(size=(n, 3)), np.ones((n, D)),
                           rng.integers(0, 2, (n, D)).astype(float), use_pose=False)
    np.testing.assert_array_equal(reg.T_h, 0)


# ---- landmark

def random_lmk(rng):
    return LandmarkRegressor(rng.normal(size=(2 * D, D * L)), rng.normal(size=(2 * D, 3)),
                             rng.normal(size=(2 * D, K)))


def test_zero_visibility_removes_appearance(rng):
    reg = random_lmk(rng)
    h, a, x = rng.normal(size=3), rng.normal(size=K), rng.normal(size=(D, 2))
    out = predict_landmark_update(reg, rng.normal(size=D * L), np.zeros(D), h, a, x)
    np.testing.assert_allclose(out, x + (reg.R_h @ h + reg.R_d @ a).reshape(D, 2), atol=1e-14)


def test_quarter_visibility_halves_block(rng):
    reg = random_lmk(rng)
    phi = np.zeros(D * L)
    phi[L:2 * L] = rng.normal(size=L)  # only landmark 1 has appearance
    zeros = (np.zeros(3), np.zeros(K), np.zeros((D, 2)))
    c = np.ones(D)
    full = predict_landmark_update(reg, phi, c, *zeros)
    c[1] = 0.25
    quarter = predict_landmark_update(reg, phi, c, *zeros)
    np.testing.assert_allclose(quarter, 0.5 * full, atol=1e-14)


def test_zero_landmark_regressor_is_identity(rng):
    x = rng.normal(size=(D, 2))
    out = predict_landmark_update(LandmarkRegressor.zeros(D, D * L, K), rng.normal(size=D * L),
                                  rng.uniform(0, 1, D), rng.normal(size=3), rng.normal(size=K), x)
    np.testing.assert_array_equal(out, x)


@given(st.integers(0, 2**32 - 1))
def test_landmark_update_is_jointly_linear(seed):
    rng = np.random.default_rng(seed)
    reg = random_lmk(rng)
    c = np.ones(D)
    x0 = np.zeros((D, 2))
    pa = (rng.normal(size=D * L), rng.normal(size=3), rng.normal(size=K))
    pb = (rng.normal(size=D * L), rng.normal(size=3), rng.normal(size=K))
    zero = (np.zeros(D * L), np.zeros(3), np.zeros(K))

    def f(args):
        return predict_landmark_update(reg, args[0], c, args[1], args[2], x0)

    both = tuple(a + b for a, b in zip(pa, pb))
    np.testing.assert_allclose(f(both), f(pa) + f(pb) - f(zero), atol=1e-11)


def planted_world(rng, n=400):
    phi = rng.normal(size=(n, D * L))
    c = rng.uniform(0.1, 1, (n, D))
    h = rng.normal(size=(n, 3))
    a = rng.normal(size=(n, K))
    return phi, c, h, a


def test_planted_model_recovered(rng):
    phi, c, h, a = planted_world(rng)
    R = random_lmk(rng)
    x_prev = rng.normal(size=(len(phi), 2 * D))
    design = landmark_design(phi, c, h, a)
    x_true = x_prev + design @ np.hstack([R.R_a, R.R_h, R.R_d]).T
    mask = np.ones((len(phi), D))
    est = train_landmark(phi, c, h, a, x_prev, x_true, mask, lam=1e-8)
    for got, want in ((est.R_a, R.R_a), (est.R_h, R.R_h), (est.R_d, R.R_d)):
        np.testing.assert_allclose(got, want, atol=1e-6)


def test_masked_garbage_equals_deleted_rows(rng):
    phi, c, h, a = planted_world(rng, n=60)
    x_prev = rng.normal(size=(60, 2 * D))
    x_true = x_prev + rng.normal(size=(60, 2 * D))
    mask = (rng.random((60, D)) > 0.3).astype(float)
    garbage = x_true.copy()
    garbage[np.repeat(mask, 2, axis=1) == 0] = 1e8
    lam = 0.3
    est = train_landmark(phi, c, h, a, x_prev, garbage, mask, lam=lam)
    W = np.hstack([est.R_a, est.R_h, est.R_d])
    design = landmark_design(phi, c, h, a)
    targets = x_true - x_prev
    for j in range(2 * D):
        keep = mask[:, j // 2] > 0
        ref = oracles.weighted_ridge(design[keep], targets[keep, j], None, lam)[0]
        np.testing.assert_allclose(W[j], ref, rtol=1e-9, atol=1e-9 * np.abs(ref).max())


def test_training_objective_beats_zero(rng):
    phi, c, h, a = planted_world(rng, n=50)
    x_prev = rng.normal(size=(50, 2 * D))
    x_true = x_prev + rng.normal(size=(50, 2 * D))
    mask = (rng.random((50, D)) > 0.2).astype(float)
    lam = 1.0
    est = train_landmark(phi, c, h, a, x_prev, x_true, mask, lam=lam)
    W = np.hstack([est.R_a, est.R_h, est.R_d])
    design = landmark_design(phi, c, h, a)
    Cw = np.repeat(mask, 2, axis=1)
    resid = x_true - x_prev - design @ W.T
    obj = np.sum(Cw * resid**2) + lam * np.sum(W**2)
    assert obj <= np.sum(Cw * (x_true - x_prev) ** 2)


def test_mask_must_be_binary(rng):
    phi, c, h, a = planted_world(rng, n=10)
    with pytest.raises(InvalidInputError):
        train_landmark(phi, c, h, a, np.zeros((10, 2 * D)), np.zeros((10, 2 * D)), np.full((10, D), 0.5))


def test_visibility_weighting_scales_blocks(rng):
    phi = rng.normal(size=D * L)
    c = rng.uniform(0, 1, D)
    out = visibility_weighted(phi, c).reshape(D, L)
    np.testing.assert_allclose(out, phi.reshape(D, L) * np.sqrt(c)[:, None])
