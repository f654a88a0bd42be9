"""Shape and pose primitives: weak-perspective projection and Euler-angle conversions.

Conventions
-----------
* 2D shapes are ``(D, 2)`` arrays of ``(u, v)`` pixel coordinates.  Flattening
  with ``ravel()`` gives the interleaved ``u1, v1, u2, v2, ...`` layout used by
  the regressors.
* 3D shapes are ``(D, 3)`` arrays; ``ravel()`` gives ``x1, y1, z1, ...``.
* Model axes: x right, y down, z pointing away from the camera (right handed,
  camera looking down +z), so image ``v`` grows with model ``y``.
* Pose angles are ``[pitch, yaw, roll]`` in radians with
  ``R = Rz(roll) @ Ry(yaw) @ Rx(pitch)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegeneratePoseError, InvalidInputError

logger = logging.getLogger(__name__)

GIMBAL_TOL = 1e-6


def wrap_angle(a):
    """Map angles (radians) into the half-open interval ``(-pi, pi]``."""
    a = np.asarray(a, dtype=float)
    return np.pi - np.mod(np.pi - a, 2.0 * np.pi)


def as_points(shape, dim: int) -> np.ndarray:
    """View a flat or ``(D, dim)`` coordinate array as ``(D, dim)`` floats."""
    arr = np.asarray(shape, dtype=float)
    if arr.ndim == 1:
        if arr.size % dim:
            raise InvalidInputError(f"flat shape length {arr.size} is not a multiple of {dim}")
        arr = arr.reshape(-1, dim)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise InvalidInputError(f"expected (D, {dim}) coordinates, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("coordinates must be finite")
    return arr


@dataclass(frozen=True)
class WeakPerspectivePose:
    """Scaled orthographic camera ``[u; v] = M @ [x; y; z] + t``.

    ``M`` holds the first two rows of a rotation matrix multiplied by a common
    scale.  Poses returned by the solvers are always canonical (rows exactly
    orthogonal and of equal norm); hand-built poses are only checked for
    finiteness.
    """

    M: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float).reshape(2, 3)
        t = np.asarray(self.t, dtype=float).reshape(2)
        if not (np.all(np.isfinite(M)) and np.all(np.isfinite(t))):
            raise InvalidInputError("pose entries must be finite")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "t", t)

    @property
    def scale(self) -> float:
        return float(np.linalg.norm(self.M, axis=1).mean())

    @property
    def angles(self) -> np.ndarray:
        return angles_from_pose(self.M).angles


def project_weak_perspective(pose: WeakPerspectivePose, shape) -> np.ndarray:
    """Project a 3D shape to ``(D, 2)`` image coordinates."""
    pts = as_points(shape, 3)
    return pts @ pose.M.T + pose.t


def rotation_from_angles(angles) -> np.ndarray:
    """Rotation matrix ``Rz(roll) Ry(yaw) Rx(pitch)``; broadcasts over leading axes."""
    angles = np.asarray(angles, dtype=float)
    pitch, yaw, roll = angles[..., 0], angles[..., 1], angles[..., 2]
    ca, sa = np.cos(pitch), np.sin(pitch)
    cb, sb = np.cos(yaw), np.sin(yaw)
    cg, sg = np.cos(roll), np.sin(roll)
    R = np.empty(angles.shape[:-1] + (3, 3))
    R[..., 0, 0] = cg * cb
    R[..., 0, 1] = cg * sb * sa - sg * ca
    R[..., 0, 2] = cg * sb * ca + sg * sa
    R[..., 1, 0] = sg * cb
    R[..., 1, 1] = sg * sb * sa + cg * ca
    R[..., 1, 2] = sg * sb * ca - cg * sa
    R[..., 2, 0] = -sb
    R[..., 2, 1] = cb * sa
    R[..., 2, 2] = cb * ca
    return R


def pose_from_angles(angles, scale: float, t=(0.0, 0.0)) -> WeakPerspectivePose:
    """Build a weak-perspective pose from ``[pitch, yaw, roll]``, a scale and a translation."""
    angles = np.asarray(angles, dtype=float).reshape(3)
    if not np.all(np.isfinite(angles)):
        raise InvalidInputError("angles must be finite")
    if not scale > 0:
        raise InvalidInputError(f"scale must be positive, got {scale}")
    R = rotation_from_angles(angles)
    return WeakPerspectivePose(scale * R[:2], np.asarray(t, dtype=float))


def nearest_rotation(A: np.ndarray) -> np.ndarray:
    """Closest proper rotation to each 3x3 matrix in Frobenius norm (SVD with det fix)."""
    U, _, Vt = np.linalg.svd(A)
    d = np.sign(np.linalg.det(U @ Vt))
    d = np.where(d == 0, 1.0, d)
    U = U.copy()
    U[..., :, -1] *= d[..., None]
    return U @ Vt


def angles_from_rotation(R: np.ndarray):
    """Euler angles of rotation matrices.

    Returns ``(angles, gimbal)`` where ``gimbal`` flags ``|cos(yaw)| < 1e-6``;
    for those the roll is pinned to zero and the pitch absorbs the rest.
    """
    R = np.asarray(R, dtype=float)
    cos_yaw = np.hypot(R[..., 0, 0], R[..., 1, 0])
    yaw = np.arctan2(-R[..., 2, 0], cos_yaw)
    gimbal = cos_yaw < GIMBAL_TOL
    pitch = np.where(gimbal,
                     np.arctan2(-R[..., 1, 2], R[..., 1, 1]),
                     np.arctan2(R[..., 2, 1], R[..., 2, 2]))
    roll = np.where(gimbal, 0.0, np.arctan2(R[..., 1, 0], R[..., 0, 0]))
    angles = wrap_angle(np.stack([pitch, yaw, roll], axis=-1))
    return angles, gimbal


class PoseDecomposition(NamedTuple):
    angles: np.ndarray
    scale: float
    matrix: np.ndarray
    gimbal: bool


def decompose_projection(M: np.ndarray):
    """Vectorized core of :func:`angles_from_pose` over a stack of ``(..., 2, 3)`` matrices.

    Returns ``(angles, scale, canonical_M, rotation, gimbal)`` as arrays.
    """
    M = np.asarray(M, dtype=float)
    norms = np.linalg.norm(M, axis=-1)
    if np.any(norms < 1e-12):
        raise DegeneratePoseError("projection matrix has a vanishing row")
    scale = norms.mean(axis=-1)
    r1 = M[..., 0, :] / scale[..., None]
    r2 = M[..., 1, :] / scale[..., None]
    r3 = np.cross(r1, r2)
    R = nearest_rotation(np.stack([r1, r2, r3], axis=-2))
    angles, gimbal = angles_from_rotation(R)
    canonical = scale[..., None, None] * R[..., :2, :]
    return angles, scale, canonical, R, gimbal


def angles_from_pose(M) -> PoseDecomposition:
    """Recover pose angles, scale and the canonical projection matrix from a 2x3 ``M``.

    The scale is the mean row norm.  The normalized rows and their cross
    product are projected onto the nearest rotation before the Euler angles are
    read off.
    """
    M = np.asarray(M, dtype=float).reshape(2, 3)
    if not np.all(np.isfinite(M)):
        raise InvalidInputError("projection matrix must be finite")
    angles, scale, canonical, _, gimbal = decompose_projection(M)
    if gimbal:
        logger.warning("pose is at gimbal lock (|cos yaw| < %g); roll pinned to 0", GIMBAL_TOL)
    return PoseDecomposition(angles, float(scale), canonical, bool(gimbal))
