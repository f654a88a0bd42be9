import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from jointface.deformable import (
    DeformableModel,
    clamp_coeffs,
    fit_pca,
    project_coeffs,
    retained_energy,
    select_components,
    synthesize_shape,
)
from jointface.errors import InvalidInputError


def shapes_with_spectrum(spectrum, n=40, D=6, seed=0):
    """Shapes whose sample covariance has exactly the given nonzero eigenvalues."""
    rng = np.random.default_rng(seed)
    k = len(spectrum)
    Q, _ = np.linalg.qr(rng.normal(size=(n, k + 1)))
    # Drop the direction parallel to the ones vector so columns stay centered.
    ones = np.ones(n) / np.sqrt(n)
    Z = Q - np.outer(ones, ones @ Q)
    Z, _ = np.linalg.qr(Z)
    Z = Z[:, :k] * np.sqrt((n - 1) * np.asarray(spectrum, dtype=float))
    V, _ = np.linalg.qr(rng.normal(size=(3 * D, k)))
    mean = rng.normal(size=3 * D)
    return mean + Z @ V.T, V


def random_shapes(rng, n=30, D=8):
    return rng.normal(size=(n, D, 3)) * rng.uniform(0.1, 2, size=(1, D, 3))


# ---- fit_pca

def test_identical_shapes_have_no_modes(rng):
    s = rng.normal(size=(5, 3))
    m = fit_pca([s] * 7)
    np.testing.assert_allclose(m.mean_shape, s, atol=1e-15)
    assert m.n_modes == 0


def test_single_shape_has_no_modes(rng):
    assert fit_pca([rng.normal(size=(4, 3))], energy=1.0).n_modes == 0


def test_two_shapes_give_one_mode_along_difference(rng):
    s1, s2 = rng.normal(size=(2, 5, 3))
    m = fit_pca([s1, s2], energy=0.9)
    assert m.n_modes == 1
    d = (s2 - s1).ravel()
    cos = abs(m.basis[:, 0] @ d) / np.linalg.norm(d)
    assert cos == pytest.approx(1.0, abs=1e-12)
    total = np.var(np.stack([s1.ravel(), s2.ravel()]), axis=0, ddof=1).sum()
    assert retained_energy(m, total) == pytest.approx(1.0)


def test_spectrum_5_3_1_1_keeps_three():
    assert select_components([5, 3, 1, 1], 0.9) == 3
    shapes, _ = shapes_with_spectrum([5, 3, 1, 1])
    m = fit_pca(shapes, energy=0.9)
    assert m.n_modes == 3
    np.testing.assert_allclose(m.variances, [5, 3, 1], rtol=1e-10)


def test_component_count_matches_eigen_oracle(rng):
    for trial in range(30):
        shapes = random_shapes(rng)
        eig, _ = oracles.pca_eig(shapes)
        for energy in (0.5, 0.8, 0.9, 0.95, 0.99):
            assert fit_pca(shapes, energy).n_modes == oracles.components_for_energy(eig, energy)


def test_basis_matches_eigenvectors(rng):
    shapes = random_shapes(rng, n=25, D=5)
    eig, vecs = oracles.pca_eig(shapes)
    m = fit_pca(shapes, energy=0.99)
    np.testing.assert_allclose(m.variances, eig[:m.n_modes], rtol=1e-9)
    for j in range(m.n_modes):
        assert abs(m.basis[:, j] @ vecs[:, j]) == pytest.approx(1.0, abs=1e-8)


@given(st.integers(0, 2**32 - 1), st.integers(2, 25), st.floats(0.05, 1.0))
def test_model_invariants(seed, n, energy):
    rng = np.random.default_rng(seed)
    shapes = random_shapes(rng, n=n, D=4)
    m = fit_pca(shapes, energy)
    K = m.n_modes
    np.testing.assert_allclose(m.basis.T @ m.basis, np.eye(K), atol=1e-8)
    assert np.all(np.diff(m.variances) <= 1e-12) and np.all(m.variances >= 0)
    total = np.var(shapes.reshape(n, -1), axis=0, ddof=1).sum()
    kept = retained_energy(m, total)
    assert kept >= energy - 1e-9
    if K > 0:
        assert (m.variances[:-1].sum() / total) < energy + 1e-9


@given(st.integers(0, 2**32 - 1))
def test_full_energy_reconstructs_training_shapes(seed):
    rng = np.random.default_rng(seed)
    shapes = random_shapes(rng, n=12, D=5)
    m = fit_pca(shapes, energy=1.0)
    for s in shapes:
        rec = synthesize_shape(m, project_coeffs(m, s))
        assert np.linalg.norm(rec - s) <= 1e-6 * np.linalg.norm(s)


def test_fit_pca_rejects_bad_input(rng):
    with pytest.raises(InvalidInputError):
        fit_pca([rng.normal(size=(3, 3)), rng.normal(size=(4, 3))])
    with pytest.raises(InvalidInputError):
        fit_pca([])
    for e in (0.0, 1.5):
        with pytest.raises(InvalidInputError):
            fit_pca([rng.normal(size=(3, 3))] * 2, energy=e)


def test_fit_is_deterministic(rng):
    shapes = random_shapes(rng)
    a, b = fit_pca(shapes), fit_pca(shapes)
    assert np.array_equal(a.basis, b.basis) and np.array_equal(a.variances, b.variances)


# ---- synthesize / project / clamp

@pytest.fixture
def model(rng):
    return fit_pca(random_shapes(rng, n=20, D=6), energy=0.95)


def test_zero_coefficients_give_mean(model):
    np.testing.assert_array_equal(synthesize_shape(model, np.zeros(model.n_modes)), model.mean_shape)


def test_unit_coefficient_adds_column(model):
    for j in range(model.n_modes):
        e = np.zeros(model.n_modes)
        e[j] = 1
        np.testing.assert_allclose(synthesize_shape(model, e).ravel(),
                                   model.mean_shape.ravel() + model.basis[:, j], atol=1e-15)


def test_synthesize_rejects_wrong_length(model):
    with pytest.raises(InvalidInputError):
        synthesize_shape(model, np.zeros(model.n_modes + 1))
    with pytest.raises(InvalidInputError):
        project_coeffs(model, np.zeros(5))


@given(st.integers(0, 2**32 - 1))
def test_project_inverts_synthesize(seed):
    rng = np.random.default_rng(seed)
    m = fit_pca(random_shapes(rng, n=15, D=5), energy=0.9)
    alpha = rng.normal(size=m.n_modes) * 3
    np.testing.assert_allclose(project_coeffs(m, synthesize_shape(m, alpha)), alpha, atol=1e-10)


def test_project_mean_and_scaled_column(model):
    np.testing.assert_allclose(project_coeffs(model, model.mean_shape), 0, atol=1e-12)
    s = model.mean_shape.ravel() + 2 * model.basis[:, 0]
    expected = np.zeros(model.n_modes)
    expected[0] = 2
    np.testing.assert_allclose(project_coeffs(model, s), expected, atol=1e-12)


def test_projection_residual_orthogonal_to_basis(model, rng):
    s = model.mean_shape.ravel() + rng.normal(size=model.mean_shape.size)
    r = s - synthesize_shape(model, project_coeffs(model, s)).ravel()
    np.testing.assert_allclose(model.basis.T @ r, 0, atol=1e-10)


def test_clamp_examples():
    m = DeformableModel(np.zeros((2, 3)), np.eye(6)[:, :3], np.array([1.0, 4.0, 0.0]))
    np.testing.assert_array_equal(clamp_coeffs(m, [0.5, -1.0, 0.0]), [0.5, -1.0, 0.0])
    np.testing.assert_array_equal(clamp_coeffs(m, [5.0, -7.0, 2.0]), [3.0, -6.0, 0.0])


@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3))
def test_clamp_bounds(alpha):
    m = DeformableModel(np.zeros((2, 3)), np.eye(6)[:, :3], np.array([2.0, 0.5, 0.0]))
    out = clamp_coeffs(m, alpha)
    assert np.all(np.abs(out) <= 3 * np.sqrt(m.variances) + 1e-15)
    inside = np.abs(alpha) <= 3 * np.sqrt(m.variances)
    np.testing.assert_array_equal(out[inside], np.asarray(alpha)[inside])
