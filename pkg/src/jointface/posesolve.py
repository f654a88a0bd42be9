"""Weighted joint recovery of weak-perspective pose and deformation coefficients.

Given 2D landmarks ``x_k``, per-point weights ``w_k`` and a deformable model, the
solver minimizes

    sum_k w_k * || x_k - M (mean_k + B_k alpha) - t ||^2

(plus a small ridge on ``alpha``, with ``alpha`` clamped to +-3 standard
deviations) by alternating two closed-form weighted least-squares steps: the affine
camera ``(M, t)`` with ``alpha`` fixed, then ``alpha`` with the camera fixed.
After each camera step ``M`` is projected onto the scaled rotations and ``t``
is re-solved for the projected ``M``.

Everything is vectorized over a leading batch axis; the single-instance
functions are thin wrappers that raise on failure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .deformable import DeformableModel, clamp_coeffs
from .errors import (
    DegenerateGeometryError,
    InsufficientConstraintsError,
    InvalidInputError,
    NumericError,
)
from .geometry import WeakPerspectivePose, angles_from_rotation, as_points, nearest_rotation

EFFECTIVE_WEIGHT = 1e-6
_COND_LIMIT = 1e-12

# Status codes of the batched solver.
OK, INSUFFICIENT, DEGENERATE, NUMERIC = 0, 1, 2, 3
_ERRORS = {
    INSUFFICIENT: InsufficientConstraintsError,
    DEGENERATE: DegenerateGeometryError,
    NUMERIC: NumericError,
}


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rule and regularization of the alternating solver.

    ``deform_ridge`` multiplies the mean model variance to give the ridge weight
    on ``alpha``; ``clamp`` limits ``alpha`` to +-3 standard deviations.
    """

    max_iters: int = 50
    rel_tol: float = 1e-6
    min_effective_points: int = 4
    deform_ridge: float = 1e-3
    clamp: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise InvalidInputError("rel_tol must be positive")
        if self.deform_ridge < 0:
            raise InvalidInputError("deform_ridge must be non-negative")


class PoseDeformResult(NamedTuple):
    pose: WeakPerspectivePose
    alpha: np.ndarray
    residual: float


class BatchResult(NamedTuple):
    M: np.ndarray  # (B, 2, 3)
    t: np.ndarray  # (B, 2)
    alpha: np.ndarray  # (B, K)
    angles: np.ndarray  # (B, 3)
    residual: np.ndarray  # (B,)
    status: np.ndarray  # (B,) int


def weighted_residual(X, W, P, M, t):
    """``sum_k w_k ||x_k - M p_k - t||^2`` over a batch; shapes (B,D,2), (B,D), (B,D,3)."""
    proj = np.einsum("bij,bdj->bdi", M, P) + t[:, None, :]
    return np.einsum("bd,bdi->b", W, (X - proj) ** 2)


def _effective(W, min_points):
    return np.count_nonzero(W > EFFECTIVE_WEIGHT, axis=1) >= min_points


def _pose_step(X, W, P):
    """Unconstrained affine camera fit.  Returns ``(M, t, ok)``."""
    wsum = W.sum(axis=1)
    safe = np.where(wsum > 0, wsum, 1.0)
    pbar = np.einsum("bd,bdj->bj", W, P) / safe[:, None]
    xbar = np.einsum("bd,bdi->bi", W, X) / safe[:, None]
    Pc = P - pbar[:, None, :]
    Xc = X - xbar[:, None, :]
    A = np.einsum("bd,bdj,bdk->bjk", W, Pc, Pc)
    rhs = np.einsum("bd,bdj,bdi->bji", W, Pc, Xc)
    eig = np.linalg.eigvalsh(A)
    ok = (wsum > 0) & (eig[:, 0] > _COND_LIMIT * np.maximum(eig[:, -1], 1e-300))
    A = np.where(ok[:, None, None], A, np.eye(3))
    M = np.linalg.solve(A, rhs).transpose(0, 2, 1)
    t = xbar - np.einsum("bij,bj->bi", M, pbar)
    return M, t, ok


def _canonicalize(M):
    """Project each ``M`` onto scaled rotations.  Returns ``(M, R, ok)``."""
    norms = np.linalg.norm(M, axis=2)
    ok = np.all(norms > 1e-12, axis=1)
    scale = np.where(ok, norms.mean(axis=1), 1.0)
    r1 = np.where(ok[:, None], M[:, 0] / scale[:, None], [1.0, 0.0, 0.0])
    r2 = np.where(ok[:, None], M[:, 1] / scale[:, None], [0.0, 1.0, 0.0])
    R = nearest_rotation(np.stack([r1, r2, np.cross(r1, r2)], axis=1))
    return scale[:, None, None] * R[:, :2], R, ok


def _best_translation(X, W, P, M):
    wsum = W.sum(axis=1)
    safe = np.where(wsum > 0, wsum, 1.0)
    resid = X - np.einsum("bij,bdj->bdi", M, P)
    return np.einsum("bd,bdi->bi", W, resid) / safe[:, None]


def _camera_step(X, W, P):
    M, _, ok = _pose_step(X, W, P)
    M, R, ok_rot = _canonicalize(M)
    t = _best_translation(X, W, P, M)
    return M, t, R, ok & ok_rot


def _deform_step(X, W, M, t, model: DeformableModel, lam: float):
    """Weighted ridge solve for ``alpha`` with the camera fixed.  Returns ``(alpha, ok)``.

    Minimizes ``sum_k w_k ||x_k - M (mean_k + B_k alpha) - t||^2 + lam * mean(w) * ||alpha||^2``.
    """
    B = X.shape[0]
    K = model.n_modes
    if K == 0:
        return np.zeros((B, 0)), np.ones(B, dtype=bool)
    Bpt = model.point_basis()  # (D, 3, K)
    J = np.einsum("bij,djk->bdik", M, Bpt)  # (B, D, 2, K)
    r = X - (np.einsum("bij,dj->bdi", M, model.mean_shape) + t[:, None, :])
    # The ridge follows the mean weight so rescaling all weights leaves alpha unchanged.
    lam_b = lam * W.mean(axis=1)
    H = np.einsum("bd,bdik,bdil->bkl", W, J, J) + lam_b[:, None, None] * np.eye(K)
    g = np.einsum("bd,bdik,bdi->bk", W, J, r)
    ok = np.ones(B, dtype=bool)
    if lam <= 0:
        eig = np.linalg.eigvalsh(H)
        ok = eig[:, 0] > _COND_LIMIT * np.maximum(eig[:, -1], 1e-300)
        H = np.where(ok[:, None, None], H, np.eye(K))
    alpha = np.linalg.solve(H, g[..., None])[..., 0]
    return alpha, ok


def _shapes(model: DeformableModel, alpha):
    flat = model.mean_shape.ravel()[None, :] + alpha @ model.basis.T
    return flat.reshape(alpha.shape[0], -1, 3)


def deform_ridge_weight(model: DeformableModel, cfg: SolverConfig) -> float:
    if model.n_modes == 0:
        return 0.0
    return cfg.deform_ridge * float(model.variances.mean())


def solve_batch(X, W, model: DeformableModel, cfg: SolverConfig | None = None,
                trace: list | None = None) -> BatchResult:
    """Alternating pose/deformation solve for a batch of instances.

    Parameters
    ----------
    X : ndarray, shape (B, D, 2)
        Observed landmarks in pixels.
    W : ndarray, shape (B, D)
        Non-negative per-point weights (visibility probabilities).
    trace : list, optional
        If given, receives the ``(B,)`` weighted residual after every half step.

    Failed instances get a non-zero ``status`` and NaN outputs.
    """
    cfg = cfg or SolverConfig()
    X = np.asarray(X, dtype=float)
    W = np.asarray(W, dtype=float)
    nb, D = W.shape
    if X.shape != (nb, D, 2) or D != model.n_points:
        raise InvalidInputError(f"landmarks {X.shape} / weights {W.shape} do not match a {model.n_points}-point model")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(W))) or np.any(W < 0):
        raise InvalidInputError("landmarks must be finite and weights non-negative")
    K = model.n_modes
    lam = deform_ridge_weight(model, cfg)

    status = np.zeros(nb, dtype=int)
    n_eff = np.count_nonzero(W > EFFECTIVE_WEIGHT, axis=1)
    status[n_eff < cfg.min_effective_points] = INSUFFICIENT
    status[(status == OK) & (K > 2 * n_eff)] = INSUFFICIENT

    alpha = np.zeros((nb, K))
    P = _shapes(model, alpha)
    M, t, R, ok = _camera_step(X, W, P)
    status[(status == OK) & ~ok] = DEGENERATE
    res = weighted_residual(X, W, P, M, t)
    if trace is not None:
        trace.append(res.copy())
    scale_sq = np.linalg.norm(M, axis=2).mean(axis=1) ** 2
    abs_tol = 1e-20 * np.maximum(W.sum(axis=1) * scale_sq, 1.0)
    active = (status == OK) & (K > 0)

    for _ in range(cfg.max_iters):
        if not active.any():
            break
        new_alpha, ok_a = _deform_step(X, W, M, t, model, lam)
        status[active & ~ok_a] = NUMERIC
        if cfg.clamp:
            new_alpha = clamp_coeffs(model, new_alpha)
        upd = active & ok_a
        alpha = np.where(upd[:, None], new_alpha, alpha)
        P = _shapes(model, alpha)
        res_half = weighted_residual(X, W, P, M, t)
        if trace is not None:
            trace.append(res_half.copy())

        M_new, t_new, R_new, ok_c = _camera_step(X, W, P)
        res_new = weighted_residual(X, W, P, M_new, t_new)
        # The rotation projection can cost accuracy; keep the old camera when it does.
        take = upd & ok_c & (res_new <= res_half)
        M = np.where(take[:, None, None], M_new, M)
        t = np.where(take[:, None], t_new, t)
        R = np.where(take[:, None, None], R_new, R)
        res_cur = np.where(take, res_new, res_half)
        if trace is not None:
            trace.append(res_cur.copy())

        change = np.abs(res - res_cur)
        done = (change <= cfg.rel_tol * np.maximum(res, 1e-300)) | (res_cur <= abs_tol)
        res = np.where(upd, res_cur, res)
        active = upd & ~done

    angles, _ = angles_from_rotation(R)
    bad = status != OK
    if bad.any():
        M = np.where(bad[:, None, None], np.nan, M)
        t = np.where(bad[:, None], np.nan, t)
        alpha = np.where(bad[:, None], np.nan, alpha)
        angles = np.where(bad[:, None], np.nan, angles)
        res = np.where(bad, np.nan, res)
    return BatchResult(M, t, alpha, angles, res, status)


def _single_inputs(x2d, weights, n_points):
    X = as_points(x2d, 2)
    W = np.asarray(weights, dtype=float).reshape(-1)
    if X.shape[0] != W.size or (n_points is not None and W.size != n_points):
        raise InvalidInputError("landmark, weight and model point counts differ")
    if not np.all(np.isfinite(W)) or np.any(W < 0):
        raise InvalidInputError("weights must be finite and non-negative")
    return X, W


def _raise_for(status: int, what: str):
    if status != OK:
        raise _ERRORS[status](f"{what} failed: {_ERRORS[status].__doc__.strip()}")


def solve_pose_given_deform(x2d, weights, shape3d, cfg: SolverConfig | None = None) -> WeakPerspectivePose:
    """Weighted least-squares camera for a fixed 3D shape, canonicalized to a scaled rotation."""
    cfg = cfg or SolverConfig()
    P = as_points(shape3d, 3)
    X, W = _single_inputs(x2d, weights, P.shape[0])
    if np.count_nonzero(W > EFFECTIVE_WEIGHT) < cfg.min_effective_points:
        _raise_for(INSUFFICIENT, "pose solve")
    M, t, _, ok = _camera_step(X[None], W[None], P[None])
    if not ok[0]:
        _raise_for(DEGENERATE, "pose solve")
    return WeakPerspectivePose(M[0], t[0])


def solve_deform_given_pose(x2d, weights, pose: WeakPerspectivePose, model: DeformableModel,
                            cfg: SolverConfig | None = None) -> np.ndarray:
    """Weighted ridge estimate of the deformation coefficients for a fixed camera, then clamped."""
    cfg = cfg or SolverConfig()
    X, W = _single_inputs(x2d, weights, model.n_points)
    n_eff = np.count_nonzero(W > EFFECTIVE_WEIGHT)
    if n_eff < cfg.min_effective_points or model.n_modes > 2 * n_eff:
        _raise_for(INSUFFICIENT, "deformation solve")
    alpha, ok = _deform_step(X[None], W[None], pose.M[None], pose.t[None], model,
                             deform_ridge_weight(model, cfg))
    if not ok[0]:
        _raise_for(NUMERIC, "deformation solve")
    return clamp_coeffs(model, alpha[0]) if cfg.clamp else alpha[0]


def solve_pose_deform(x2d, weights, model: DeformableModel, cfg: SolverConfig | None = None) -> PoseDeformResult:
    """Jointly fit camera and deformation to one 2D shape; see :func:`solve_batch`."""
    X, W = _single_inputs(x2d, weights, model.n_points)
    out = solve_batch(X[None], W[None], model, cfg)
    _raise_for(int(out.status[0]), "pose/deformation solve")
    return PoseDeformResult(WeakPerspectivePose(out.M[0], out.t[0]), out.alpha[0], float(out.residual[0]))
