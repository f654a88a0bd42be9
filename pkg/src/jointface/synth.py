"""Seeded synthetic faces with exact ground truth.

A face is ``D`` points on the front of an ellipsoid (model axes: x right,
y down, z away from the camera, so the face bulges toward -z).  Non-rigid
variation comes from smooth sinusoidal displacement modes with the rigid and
scaling motions projected out.  Each sample draws a pose and deformation,
projects the shape, and renders a raster where every visible landmark carries
an oriented Gaussian-derivative stamp whose orientation is keyed to the
landmark index.

Occlusion modes
---------------
``none``
    Every point visible and annotated.
``random``
    Each point is occluded with probability ``occlusion_rate``; a flat gray
    square is painted over it at a random placement that still covers the
    point (``occluder_jitter`` sets how far off-center it may sit).  Occluded
    points stay annotated.
``self``
    A point is occluded when its rotated surface normal faces away from the
    camera by more than ``self_threshold``; such points are also unannotated.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .deformable import DeformableModel, fit_pca, synthesize_shape
from .errors import InvalidInputError, OracleUnavailableError
from .geometry import WeakPerspectivePose, pose_from_angles, project_weak_perspective, rotation_from_angles

OCCLUSION_MODES = ("none", "random", "self")
ORACLE_NOISE = 1e-3
BACKGROUND = 0.5

# Ellipsoid semi-axes (x, y, z) and the grid extent covered by landmarks.
_AXES = np.array([1.0, 1.3, 1.0])
_GRID_X = 0.8
_GRID_Y = 0.9

# SeedSequence stream ids.
_FAMILY_STREAM = 1
_SAMPLE_STREAM = 2


@dataclass(frozen=True)
class GenConfig:
    """Generator settings.  Angles are in degrees, lengths in pixels."""

    seed: int = 0
    n_samples: int = 100
    n_points: int = 20
    n_modes: int = 4
    image_size: int = 128
    yaw_range: tuple = (-30.0, 30.0)
    pitch_range: tuple = (-15.0, 15.0)
    roll_range: tuple = (-15.0, 15.0)
    occlusion_mode: str = "none"
    occlusion_rate: float = 0.0
    self_threshold: float = 0.0
    noise_sigma: float = 0.5
    n_shapes: int = 100
    mode_amplitude: float = 0.15
    face_scale: float = 0.3
    scale_jitter: float = 0.1
    shift_jitter: float = 0.04
    stamp_sigma: float = 4.0
    stamp_contrast: float = 0.35
    occluder_jitter: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "yaw_range", tuple(float(a) for a in self.yaw_range))
        object.__setattr__(self, "pitch_range", tuple(float(a) for a in self.pitch_range))
        object.__setattr__(self, "roll_range", tuple(float(a) for a in self.roll_range))
        for name in ("yaw_range", "pitch_range", "roll_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise InvalidInputError(f"{name} must be (low, high)")
        if max(abs(a) for a in self.yaw_range + self.pitch_range) >= 85.0:
            raise InvalidInputError("yaw and pitch must stay within +-85 degrees")
        if self.occlusion_mode not in OCCLUSION_MODES:
            raise InvalidInputError(f"occlusion_mode must be one of {OCCLUSION_MODES}")
        if not 0.0 <= self.occlusion_rate <= 1.0:
            raise InvalidInputError("occlusion_rate must be in [0, 1]")
        if not 0.0 <= self.occluder_jitter < 1.0:
            raise InvalidInputError("occluder_jitter must be in [0, 1) so the square still covers its point")
        if self.n_points < 1 or self.n_modes < 0 or self.n_samples < 0 or self.n_shapes < 1:
            raise InvalidInputError("counts must be non-negative (n_points, n_shapes >= 1)")
        if self.image_size < 8:
            raise InvalidInputError("image_size must be at least 8")


@dataclass
class TrainingSample:
    """One image with landmark, occlusion and (evaluation-only) pose truth."""

    index: int
    image: np.ndarray
    face_box: np.ndarray
    x_true: np.ndarray
    c_true: np.ndarray
    mask: np.ndarray
    h_true: np.ndarray
    alpha_true: np.ndarray
    pose_true: WeakPerspectivePose | None = field(default=None, repr=False)
    noise: np.ndarray | None = field(default=None, repr=False)


def _grid_shape(D):
    cols = int(np.ceil(np.sqrt(D)))
    rows = int(np.ceil(D / cols))
    return rows, cols


def face_layout(n_points: int):
    """Base 3D landmark layout and outward unit normals, both ``(D, 3)``."""
    rows, cols = _grid_shape(n_points)
    xs = np.linspace(-_GRID_X, _GRID_X, cols) if cols > 1 else np.zeros(1)
    ys = np.linspace(-_GRID_Y, _GRID_Y, rows) if rows > 1 else np.zeros(1)
    gx, gy = np.meshgrid(xs, ys)
    xy = np.column_stack([gx.ravel(), gy.ravel()])[:n_points]
    a, b, c = _AXES
    inside = 1.0 - (xy[:, 0] / a) ** 2 - (xy[:, 1] / b) ** 2
    z = -c * np.sqrt(np.clip(inside, 0.0, None))
    pts = np.column_stack([xy, z])
    normals = pts / _AXES**2
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return pts, normals


def eye_indices(n_points: int):
    """Indices of the two landmarks playing the role of the eye centers."""
    pts, _ = face_layout(n_points)
    left = int(np.argmin(np.abs(pts[:, 0] + 0.4) + np.abs(pts[:, 1] + 0.35)))
    right = int(np.argmin(np.abs(pts[:, 0] - 0.4) + np.abs(pts[:, 1] + 0.35)))
    if left == right:
        raise InvalidInputError(f"a {n_points}-point layout has no distinct eye landmarks")
    return left, right


def _similarity_basis(pts):
    """Orthonormal basis of translations, infinitesimal rotations and scaling of ``pts``."""
    D = len(pts)
    cols = []
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = 1.0
        cols.append(np.tile(e, D))
        cols.append(np.cross(e, pts).ravel())
    cols.append(pts.ravel())
    Q, _ = np.linalg.qr(np.column_stack(cols))
    return Q


def deformation_modes(cfg: GenConfig, rng) -> np.ndarray:
    """``(K_true, 3D)`` orthonormal smooth modes orthogonal to similarity motions."""
    pts, _ = face_layout(cfg.n_points)
    if cfg.n_modes == 0:
        return np.zeros((0, pts.size))
    rigid = _similarity_basis(pts)
    modes = []
    for _ in range(cfg.n_modes):
        freq = rng.uniform(1.5, 3.0, size=(3, 2)) * rng.choice([-1.0, 1.0], size=(3, 2))
        phase = rng.uniform(0.0, 2.0 * np.pi, size=3)
        disp = np.sin(pts[:, :2] @ freq.T + phase)
        v = disp.ravel()
        v -= rigid @ (rigid.T @ v)
        for m in modes:
            v -= m * (m @ v)
        modes.append(v / np.linalg.norm(v))
    return np.array(modes)


def make_shape_family(cfg: GenConfig, energy: float = 1.0):
    """Generate ``cfg.n_shapes`` 3D training shapes and fit a deformable model to them."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _FAMILY_STREAM]))
    base, _ = face_layout(cfg.n_points)
    modes = deformation_modes(cfg, rng)
    amps = cfg.mode_amplitude * np.sqrt(cfg.n_points) / (1.0 + np.arange(cfg.n_modes))
    z = rng.standard_normal((cfg.n_shapes, cfg.n_modes)) * amps
    flat = base.ravel()[None, :] + z @ modes
    shapes = [s.reshape(-1, 3) for s in flat]
    return shapes, fit_pca(shapes, energy)


def visible_by_normals(normals, angles, threshold: float) -> np.ndarray:
    """Points whose rotated normal points toward the camera by at least ``threshold``."""
    R = rotation_from_angles(angles)
    facing = -(normals @ R.T)[:, 2]
    return facing >= threshold


def face_box_from_points(x, margin: float = 0.1) -> np.ndarray:
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    size = np.maximum(hi - lo, 1.0)
    lo = lo - margin * size
    size = size * (1.0 + 2.0 * margin)
    return np.array([lo[0], lo[1], size[0], size[1]])


def _stamp(img, center, theta, cfg: GenConfig):
    s = cfg.stamp_sigma
    h, w = img.shape
    rad = int(np.ceil(4 * s))
    cu, cv = center
    u0, u1 = max(int(np.floor(cu)) - rad, 0), min(int(np.floor(cu)) + rad + 2, w)
    v0, v1 = max(int(np.floor(cv)) - rad, 0), min(int(np.floor(cv)) + rad + 2, h)
    if u0 >= u1 or v0 >= v1:
        return
    uu, vv = np.meshgrid(np.arange(u0, u1) - cu, np.arange(v0, v1) - cv)
    proj = (uu * np.cos(theta) + vv * np.sin(theta)) / s
    amp = cfg.stamp_contrast * np.exp(0.5)
    img[v0:v1, u0:u1] += amp * proj * np.exp(-(uu**2 + vv**2) / (2 * s * s))


def _occluder(img, center, gray, offset, cfg: GenConfig):
    half = 2.5 * cfg.stamp_sigma
    center = np.asarray(center) + offset * cfg.occluder_jitter * half
    h, w = img.shape
    u0, u1 = int(np.clip(np.round(center[0] - half), 0, w)), int(np.clip(np.round(center[0] + half) + 1, 0, w))
    v0, v1 = int(np.clip(np.round(center[1] - half), 0, h)), int(np.clip(np.round(center[1] + half) + 1, 0, h))
    img[v0:v1, u0:u1] = gray


def render(x, c, occluded_by_object, cfg: GenConfig, rng) -> np.ndarray:
    """Raster with stamps at visible landmarks and gray squares over object-occluded ones."""
    n = cfg.image_size
    img = np.full((n, n), BACKGROUND)
    D = len(x)
    for k in range(D):
        if c[k] > 0:
            _stamp(img, x[k], 2.0 * np.pi * k / D, cfg)
    for k in np.flatnonzero(occluded_by_object):
        # The square covers the point but its placement is random, so its
        # edges say nothing precise about where the hidden landmark lies.
        gray = rng.uniform(0.3, 0.7)
        _occluder(img, x[k], gray, rng.uniform(-1.0, 1.0, size=2), cfg)
    # Quantize to the 8-bit grid so the PGM round trip is exact.
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def generate(cfg: GenConfig, model: DeformableModel) -> list[TrainingSample]:
    """Draw ``cfg.n_samples`` samples; sample ``i`` uses its own seeded stream."""
    if model.n_points != cfg.n_points:
        raise InvalidInputError("model landmark count differs from the generator config")
    _, normals = face_layout(cfg.n_points)
    sigma = np.sqrt(np.maximum(model.variances, 0.0))
    base_scale = cfg.face_scale * cfg.image_size
    samples = []
    for i in range(cfg.n_samples):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _SAMPLE_STREAM, i]))
        alpha = rng.uniform(-2.0, 2.0, size=model.n_modes) * sigma
        deg = np.array([rng.uniform(*cfg.pitch_range), rng.uniform(*cfg.yaw_range), rng.uniform(*cfg.roll_range)])
        angles = np.deg2rad(deg)
        scale = base_scale * rng.uniform(1.0 - cfg.scale_jitter, 1.0 + cfg.scale_jitter)
        t = cfg.image_size / 2.0 + rng.uniform(-1.0, 1.0, size=2) * cfg.shift_jitter * cfg.image_size
        pose = pose_from_angles(angles, scale, t)
        clean = project_weak_perspective(pose, synthesize_shape(model, alpha))
        noise = rng.standard_normal(clean.shape) * cfg.noise_sigma
        x = clean + noise

        c = np.ones(cfg.n_points)
        mask = np.ones(cfg.n_points)
        by_object = np.zeros(cfg.n_points, dtype=bool)
        if cfg.occlusion_mode == "random":
            by_object = rng.random(cfg.n_points) < cfg.occlusion_rate
            c[by_object] = 0.0
        elif cfg.occlusion_mode == "self":
            hidden = ~visible_by_normals(normals, angles, cfg.self_threshold)
            c[hidden] = 0.0
            mask[hidden] = 0.0
        image = render(x, c, by_object, cfg, rng)
        samples.append(TrainingSample(
            index=i, image=image, face_box=face_box_from_points(x), x_true=x, c_true=c, mask=mask,
            h_true=angles, alpha_true=alpha, pose_true=pose, noise=noise,
        ))
    return samples


def oracle_descriptor(sample: TrainingSample, x_current, spec=None) -> np.ndarray:
    """Ground-truth-aware features ``[du, dv, c_true, 1]`` per landmark.

    ``du, dv`` is the offset from ``x_current`` to the true landmark divided by
    the face-box width and height, plus seeded noise of scale 1e-3.  Only for
    validating the learning machinery; it cannot run without ground truth.
    """
    if spec is not None and spec.kind != "oracle":
        raise InvalidInputError("oracle_descriptor called with a non-oracle spec")
    if not isinstance(sample, TrainingSample) or sample.x_true is None or sample.c_true is None:
        raise OracleUnavailableError("oracle features need a ground-truth TrainingSample")
    x_current = np.asarray(x_current, dtype=float).reshape(-1, 2)
    box = np.asarray(sample.face_box, dtype=float)
    offset = (sample.x_true - x_current) / box[2:4]
    D = len(x_current)
    feats = np.column_stack([offset, sample.c_true, np.ones(D)])
    seed = zlib.crc32(np.ascontiguousarray(x_current).tobytes())
    rng = np.random.default_rng([sample.index, seed])
    return (feats + ORACLE_NOISE * rng.standard_normal(feats.shape)).ravel()
