"""Linear 3D deformable shape model ``s = mean + B @ alpha`` learned by PCA."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

# Eigenvalues below this fraction of the largest are treated as exact zeros.
_EIG_RTOL = 1e-10


@dataclass(frozen=True)
class DeformableModel:
    """PCA shape model.

    Attributes
    ----------
    mean_shape : ndarray, shape (D, 3)
        Average 3D shape.
    basis : ndarray, shape (3 * D, K)
        Orthonormal deformation modes acting on the flattened shape.
    variances : ndarray, shape (K,)
        Variance captured by each mode, non-increasing.
    """

    mean_shape: np.ndarray
    basis: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean_shape, dtype=float).reshape(-1, 3)
        basis = np.asarray(self.basis, dtype=float).reshape(mean.size, -1)
        var = np.asarray(self.variances, dtype=float).reshape(-1)
        if basis.shape[1] != var.size:
            raise InvalidInputError("basis column count must match the number of variances")
        object.__setattr__(self, "mean_shape", mean)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "variances", var)

    @property
    def n_points(self) -> int:
        return self.mean_shape.shape[0]

    @property
    def n_modes(self) -> int:
        return self.basis.shape[1]

    def point_basis(self) -> np.ndarray:
        """Basis reshaped to ``(D, 3, K)`` so ``point_basis()[k]`` moves point k."""
        return self.basis.reshape(self.n_points, 3, self.n_modes)


def fit_pca(shapes, energy: float = 0.9) -> DeformableModel:
    """Fit a deformable model to 3D training shapes.

    Keeps the smallest number of components whose cumulative variance reaches
    ``energy`` of the total.  The sample covariance uses the ``N - 1`` divisor;
    a single shape, or identical shapes, yield a model with no modes.

    Parameters
    ----------
    shapes : sequence of array_like
        Each shape is ``(D, 3)`` or flat of length ``3 * D``.
    energy : float
        Fraction of variance to retain, in ``(0, 1]``.
    """
    if not 0.0 < energy <= 1.0:
        raise InvalidInputError(f"energy must be in (0, 1], got {energy}")
    data = [np.asarray(s, dtype=float).ravel() for s in shapes]
    if not data:
        raise InvalidInputError("need at least one shape")
    if len({d.size for d in data}) != 1 or data[0].size % 3:
        raise InvalidInputError("all shapes must share the same landmark count")
    X = np.stack(data)
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("shapes must be finite")
    n, p = X.shape
    mean = X.mean(axis=0)
    if n < 2:
        return DeformableModel(mean, np.zeros((p, 0)), np.zeros(0))

    centered = X - mean
    # SVD of the centered data is the numerically stable route to the covariance eigenpairs.
    _, sv, Vt = np.linalg.svd(centered, full_matrices=False)
    eig = sv**2 / (n - 1)
    total = eig.sum()
    # Rounding in the mean leaves centered data of order eps * |X| even for identical shapes.
    noise_floor = 1e3 * np.finfo(float).eps * np.abs(X).max() * np.sqrt(n * p)
    if total <= 0 or sv[0] <= noise_floor:
        return DeformableModel(mean, np.zeros((p, 0)), np.zeros(0))
    eig = np.where(eig < _EIG_RTOL * eig[0], 0.0, eig)
    total = eig.sum()
    k = select_components(eig, energy)

    basis = Vt[:k].T.copy()
    # Sign convention: largest-magnitude entry of each mode is positive.
    for j in range(k):
        if basis[np.argmax(np.abs(basis[:, j])), j] < 0:
            basis[:, j] *= -1
    return DeformableModel(mean, basis, eig[:k].copy())


def select_components(eigenvalues, energy: float) -> int:
    """Smallest K whose leading ``eigenvalues`` (sorted descending) reach ``energy`` of the sum."""
    eig = np.asarray(eigenvalues, dtype=float)
    total = eig.sum()
    if total <= 0:
        return 0
    frac = np.cumsum(eig) / total
    # Rounding in the cumulative sum must not push the count past the true minimum.
    k = int(np.searchsorted(frac, energy - 1e-12) + 1)
    k = min(k, int(np.count_nonzero(eig > 0)))
    return k


def retained_energy(model: DeformableModel, total_variance: float) -> float:
    return float(model.variances.sum() / total_variance) if total_variance > 0 else 1.0


def _check_alpha(model: DeformableModel, alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    if alpha.size != model.n_modes:
        raise InvalidInputError(f"expected {model.n_modes} coefficients, got {alpha.size}")
    return alpha


def synthesize_shape(model: DeformableModel, alpha) -> np.ndarray:
    """Shape ``mean + B @ alpha`` as a ``(D, 3)`` array."""
    alpha = _check_alpha(model, alpha)
    return (model.mean_shape.ravel() + model.basis @ alpha).reshape(-1, 3)


def project_coeffs(model: DeformableModel, shape) -> np.ndarray:
    """Least-squares coefficients of ``shape``: ``B.T @ (s - mean)``."""
    s = np.asarray(shape, dtype=float).ravel()
    if s.size != model.mean_shape.size:
        raise InvalidInputError(f"expected {model.mean_shape.size} coordinates, got {s.size}")
    return model.basis.T @ (s - model.mean_shape.ravel())


def coeff_bounds(model: DeformableModel, n_sigma: float = 3.0) -> np.ndarray:
    return n_sigma * np.sqrt(np.maximum(model.variances, 0.0))


def clamp_coeffs(model: DeformableModel, alpha, n_sigma: float = 3.0) -> np.ndarray:
    """Clip each coefficient to ``+-n_sigma`` standard deviations of its mode."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape[-1] != model.n_modes:
        raise InvalidInputError(f"expected {model.n_modes} coefficients, got {alpha.shape[-1]}")
    bound = coeff_bounds(model, n_sigma)
    return np.clip(alpha, -bound, bound)
