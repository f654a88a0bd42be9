"""Weighted ridge least squares and the two per-stage linear regressors.

Visibility stage::

    dc = T_a @ phi + T_h @ h_prev,        c = clip(c_prev + dc, 0, 1)

Landmark stage::

    dx = R_a @ (sqrt(c) o phi) + R_h @ h_prev + R_d @ alpha_prev,   x = x_prev + dx

where ``sqrt(c) o phi`` scales every entry of landmark k's descriptor block by
``sqrt(c_k)``.  Both are trained in closed form; the landmark stage weights
each output coordinate by the annotation mask.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InvalidInputError, RankDeficiencyError


def solve_weighted_ridge_ls(features, targets, weights=None, lam: float = 0.0) -> np.ndarray:
    """Minimize ``sum_i w_i ||y_i - W f_i||^2 + lam ||W||_F^2`` in closed form.

    Parameters
    ----------
    features : ndarray, shape (n, p)
    targets : ndarray, shape (n, m)
    weights : ndarray, shape (n,) or (n, m), optional
        Row weights, or per-row per-output weights.  Outputs sharing an
        identical weight column share one factorization.
    lam : float
        Ridge strength, ``>= 0``.

    Returns
    -------
    W : ndarray, shape (m, p)
    """
    F = np.asarray(features, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if F.ndim != 2 or Y.ndim != 2 or F.shape[0] != Y.shape[0] or F.shape[0] < 1:
        raise InvalidInputError(f"incompatible design {F.shape} and targets {Y.shape}")
    if lam < 0:
        raise InvalidInputError("lam must be non-negative")
    n, p = F.shape
    m = Y.shape[1]
    if weights is None:
        weights = np.ones(n)
    w = np.asarray(weights, dtype=float)
    if w.ndim == 1:
        w = np.broadcast_to(w[:, None], (n, m))
    if w.shape != (n, m) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidInputError("weights must be finite, non-negative and match the targets")

    out = np.empty((m, p))
    groups, inverse = np.unique(w.T, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    for g, wcol in enumerate(groups):
        cols = np.flatnonzero(inverse == g)
        keep = wcol > 0
        Fk = F[keep]
        Fw = Fk * wcol[keep, None]
        A = Fk.T @ Fw
        A[np.diag_indices_from(A)] += lam
        rhs = Fw.T @ Y[np.ix_(keep, cols)]
        out[cols] = _solve_spd(A, rhs, lam).T
    return out


def _solve_spd(A, rhs, lam):
    if A.shape[0] == 0:
        return np.zeros((0, rhs.shape[1]))
    if lam > 0:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            return scipy.linalg.solve(A, rhs, assume_a="pos")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            return scipy.linalg.solve(A, rhs, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
        raise RankDeficiencyError("normal matrix is singular; use lam > 0") from exc


def default_lambda(n_features: int) -> float:
    return 1e-3 * n_features


@dataclass(frozen=True)
class VisibilityRegressor:
    T_a: np.ndarray  # (D, D*L)
    T_h: np.ndarray  # (D, 3)

    @classmethod
    def zeros(cls, n_points: int, n_appearance: int):
        return cls(np.zeros((n_points, n_appearance)), np.zeros((n_points, 3)))


@dataclass(frozen=True)
class LandmarkRegressor:
    R_a: np.ndarray  # (2D, D*L)
    R_h: np.ndarray  # (2D, 3)
    R_d: np.ndarray  # (2D, K)

    @classmethod
    def zeros(cls, n_points: int, n_appearance: int, n_modes: int):
        return cls(np.zeros((2 * n_points, n_appearance)), np.zeros((2 * n_points, 3)),
                   np.zeros((2 * n_points, n_modes)))


def _rows(a, width=None):
    a = np.asarray(a, dtype=float)
    a = a.reshape(1, -1) if a.ndim == 1 else a.reshape(a.shape[0], -1)
    if width is not None and a.shape[1] != width:
        raise InvalidInputError(f"expected rows of length {width}, got {a.shape[1]}")
    return a


def visibility_weighted(features, c) -> np.ndarray:
    """Scale each landmark's descriptor block by ``sqrt(c_k)``; works on a batch of rows."""
    phi = _rows(features)
    c = _rows(c)
    D = c.shape[1]
    if phi.shape[1] % D:
        raise InvalidInputError("feature length is not a multiple of the landmark count")
    L = phi.shape[1] // D
    scale = np.sqrt(np.clip(c, 0.0, None))
    return (phi.reshape(len(phi), D, L) * scale[:, :, None]).reshape(len(phi), D * L)


def predict_visibility(reg: VisibilityRegressor, features, h_prev, c_prev) -> np.ndarray:
    """Updated visibility probabilities, clipped to [0, 1].  Accepts single rows or batches."""
    single = np.asarray(c_prev).ndim == 1
    phi = _rows(features, reg.T_a.shape[1])
    h = _rows(h_prev, 3)
    c = _rows(c_prev, reg.T_a.shape[0])
    out = np.clip(c + phi @ reg.T_a.T + h @ reg.T_h.T, 0.0, 1.0)
    return out[0] if single else out


def train_visibility(features, h_prev, c_prev, c_true, lam: float | None = None,
                     use_pose: bool = True) -> VisibilityRegressor:
    """Closed-form fit of ``[T_a | T_h]`` to the targets ``c_true - c_prev``.

    With ``use_pose=False`` the pose columns are left out and ``T_h`` is zero.
    """
    phi = _rows(features)
    n, p = phi.shape
    h = _rows(h_prev, 3)
    c_prev = _rows(c_prev)
    c_true = _rows(c_true, c_prev.shape[1])
    if not (len(h) == len(c_prev) == len(c_true) == n):
        raise InvalidInputError("all training inputs need the same number of samples")
    design = np.hstack([phi, h]) if use_pose else phi
    lam = default_lambda(design.shape[1]) if lam is None else lam
    W = solve_weighted_ridge_ls(design, c_true - c_prev, None, lam)
    T_h = W[:, p:] if use_pose else np.zeros((W.shape[0], 3))
    return VisibilityRegressor(W[:, :p].copy(), T_h.copy())


def landmark_design(features, c_now, h_prev, alpha_prev, use_pose: bool = True) -> np.ndarray:
    parts = [visibility_weighted(features, c_now)]
    if use_pose:
        parts += [_rows(h_prev, 3), _rows(alpha_prev)]
    return np.hstack(parts)


def predict_landmark_update(reg: LandmarkRegressor, features, c_now, h_prev, alpha_prev, x_prev) -> np.ndarray:
    """New landmark positions ``x_prev + dx``; returns ``(D, 2)`` or ``(n, D, 2)``."""
    x_prev = np.asarray(x_prev, dtype=float)
    single = x_prev.ndim == 2
    X = x_prev.reshape(1 if single else x_prev.shape[0], -1)
    phi_w = visibility_weighted(_rows(features, reg.R_a.shape[1]), c_now)
    K = reg.R_d.shape[1]
    alpha = _rows(alpha_prev, K) if K else np.zeros((len(X), 0))
    dx = phi_w @ reg.R_a.T + _rows(h_prev, 3) @ reg.R_h.T + alpha @ reg.R_d.T
    out = (X + dx).reshape(len(X), -1, 2)
    return out[0] if single else out


def train_landmark(features, c_now, h_prev, alpha_prev, x_prev, x_true, mask, lam: float | None = None,
                   use_pose: bool = True) -> LandmarkRegressor:
    """Mask-weighted ridge fit of ``[R_a | R_h | R_d]`` to ``x_true - x_prev``.

    ``mask`` is ``(n, D)`` with 1 for annotated points; both coordinates of a
    point share its flag.  With ``use_pose=False`` only ``R_a`` is learned.
    """
    phi = _rows(features)
    n, p = phi.shape
    c_now = _rows(c_now)
    D = c_now.shape[1]
    alpha = _rows(alpha_prev) if np.asarray(alpha_prev).size else np.zeros((n, 0))
    K = alpha.shape[1]
    targets = _rows(x_true, 2 * D) - _rows(x_prev, 2 * D)
    mask = _rows(mask, D)
    if np.any((mask != 0) & (mask != 1)):
        raise InvalidInputError("annotation mask entries must be 0 or 1")
    # Unannotated targets carry arbitrary values; zero them so they cannot leak as NaN.
    targets = np.where(np.repeat(mask, 2, axis=1) > 0, targets, 0.0)
    design = landmark_design(phi, c_now, h_prev, alpha, use_pose)
    lam = default_lambda(design.shape[1]) if lam is None else lam
    W = solve_weighted_ridge_ls(design, targets, np.repeat(mask, 2, axis=1), lam)
    if use_pose:
        return LandmarkRegressor(W[:, :p].copy(), W[:, p:p + 3].copy(), W[:, p + 3:].copy())
    return LandmarkRegressor(W.copy(), np.zeros((2 * D, 3)), np.zeros((2 * D, K)))
