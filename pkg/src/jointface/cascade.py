"""Staged training and inference over landmarks, visibility, pose and deformation.

Each stage runs three updates in order:

1. visibility ``c`` from appearance at the previous landmarks and the previous pose;
2. landmarks ``x`` from visibility-weighted appearance, previous pose and deformation;
3. pose and deformation from a visibility-weighted fit of the 3D model to ``x``.

Landmark increments are regressed in face-box units (``du / box_w``,
``dv / box_h``) so one regressor serves faces of any pixel size.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .deformable import DeformableModel, fit_pca
from .errors import InvalidInputError, OracleUnavailableError
from .features import DescriptorSpec, check_image, describe_points
from .geometry import WeakPerspectivePose
from .posesolve import OK, SolverConfig, solve_batch
from .regression import (
    LandmarkRegressor,
    VisibilityRegressor,
    predict_landmark_update,
    predict_visibility,
    train_landmark,
    train_visibility,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = "cjm-1"


@dataclass(frozen=True)
class TrainConfig:
    n_stages: int = 4
    descriptor: DescriptorSpec = field(default_factory=DescriptorSpec)
    energy: float = 0.9
    lam: float | None = None
    seed: int = 0
    n_augment: int = 8
    scale_jitter: float = 0.1
    shift_jitter: float = 0.05
    use_occlusion: bool = True
    use_pose_deform: bool = True
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.n_stages < 0:
            raise InvalidInputError("n_stages must be >= 0")
        if self.n_augment < 1:
            raise InvalidInputError("n_augment must be >= 1")


@dataclass
class CascadeModel:
    stages: list
    deformable: DeformableModel
    mean_face_2d: np.ndarray
    descriptor: DescriptorSpec
    solver_cfg: SolverConfig = field(default_factory=SolverConfig)
    use_occlusion: bool = True
    use_pose_deform: bool = True
    train_errors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_train_states: int = 0
    version: str = FORMAT_VERSION

    @property
    def n_points(self) -> int:
        return self.mean_face_2d.shape[0]

    @property
    def n_stages(self) -> int:
        return len(self.stages)


@dataclass
class InstanceState:
    x: np.ndarray
    c: np.ndarray
    h: np.ndarray
    alpha: np.ndarray
    pose: WeakPerspectivePose


@dataclass
class _Batch:
    """Stacked cascade states; ``src`` maps each state to its image/sample."""

    X: np.ndarray
    C: np.ndarray
    H: np.ndarray
    A: np.ndarray
    M: np.ndarray
    T: np.ndarray
    boxes: np.ndarray
    src: np.ndarray

    def state(self, i: int) -> InstanceState:
        return InstanceState(self.X[i].copy(), self.C[i].copy(), self.H[i].copy(), self.A[i].copy(),
                             WeakPerspectivePose(self.M[i], self.T[i]))


def _check_boxes(boxes):
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    if not np.all(np.isfinite(boxes)) or np.any(boxes[:, 2:] <= 0):
        raise InvalidInputError("face boxes need finite entries and positive width/height")
    return boxes


def to_box_units(X, boxes):
    return (X - boxes[:, None, :2]) / boxes[:, None, 2:]


def from_box_units(Xn, boxes):
    return Xn * boxes[:, None, 2:] + boxes[:, None, :2]


def _frontal_fit(X, model: DeformableModel):
    """Scale and translation of the frontal (h = 0) mean shape that best match ``X``."""
    p = model.mean_shape[:, :2]
    pc = p - p.mean(axis=0)
    xc = X - X.mean(axis=1, keepdims=True)
    s = np.einsum("dj,bdj->b", pc, xc) / max(np.sum(pc**2), 1e-300)
    s = np.where(s > 0, s, 1.0)
    M = s[:, None, None] * np.eye(2, 3)[None]
    T = X.mean(axis=1) - s[:, None] * p.mean(axis=0)
    return M, T


def _init_batch(mean_face, deformable, boxes, src) -> _Batch:
    n = len(boxes)
    D = mean_face.shape[0]
    X = from_box_units(np.broadcast_to(mean_face, (n, D, 2)), boxes)
    M, T = _frontal_fit(X, deformable)
    return _Batch(X=X, C=np.ones((n, D)), H=np.zeros((n, 3)), A=np.zeros((n, deformable.n_modes)),
                  M=M, T=T, boxes=boxes, src=np.asarray(src))


def initialize(face_box, model: CascadeModel) -> InstanceState:
    """Mean face placed in ``face_box``, all visible, frontal, no deformation."""
    boxes = _check_boxes(face_box)
    return _init_batch(model.mean_face_2d, model.deformable, boxes, [0]).state(0)


def _feature_fn(spec: DescriptorSpec, images=None, samples=None):
    if spec.kind == "oracle":
        if samples is None:
            raise OracleUnavailableError("an oracle-descriptor cascade needs ground-truth samples")
        from .synth import oracle_descriptor

        def oracle(X, src):
            return np.stack([oracle_descriptor(samples[s], x) for x, s in zip(X, src)])
        return oracle

    if images is None:
        images = [s.image for s in samples]
    images = [check_image(im) for im in images]

    def appearance(X, src):
        n, D, _ = X.shape
        out = np.empty((n, D * spec.length))
        for s in np.unique(src):
            rows = np.flatnonzero(src == s)
            out[rows] = describe_points(images[s], X[rows].reshape(-1, 2), spec).reshape(len(rows), -1)
        return out
    return appearance


def _pose_update(b: _Batch, deformable, solver_cfg, use_weights: bool):
    W = b.C if use_weights else np.ones_like(b.C)
    res = solve_batch(b.X, W, deformable, solver_cfg)
    ok = res.status == OK
    if not ok.all():
        logger.info("pose/deformation solve failed for %d of %d instances; keeping previous estimates",
                    int((~ok).sum()), len(ok))
    b.H = np.where(ok[:, None], res.angles, b.H)
    b.A = np.where(ok[:, None], res.alpha, b.A)
    b.M = np.where(ok[:, None, None], res.M, b.M)
    b.T = np.where(ok[:, None], res.t, b.T)


def _apply_stage(b: _Batch, stage, phi, model: CascadeModel):
    vis, lmk = stage
    if model.use_occlusion:
        b.C = predict_visibility(vis, phi, b.H, b.C)
    Xn = to_box_units(b.X, b.boxes)
    Xn = predict_landmark_update(lmk, phi, b.C, b.H, b.A, Xn)
    b.X = from_box_units(Xn, b.boxes)
    _pose_update(b, model.deformable, model.solver_cfg, model.use_occlusion)


def predict_batch(model: CascadeModel, face_boxes, images=None, samples=None, return_history: bool = False):
    """Run the cascade on many faces.

    ``images`` is a sequence of rasters aligned with ``face_boxes``; oracle
    models take ``samples`` instead.  With ``return_history`` the result is
    ``(states, history)`` where ``history[t]`` holds the stacked ``x, c, h,
    alpha`` after stage ``t`` (``t = 0`` is the initialization).
    """
    boxes = _check_boxes(face_boxes)
    n = len(boxes)
    if images is not None and len(images) != n or samples is not None and len(samples) != n:
        raise InvalidInputError("need one image or sample per face box")
    features = _feature_fn(model.descriptor, images, samples)
    b = _init_batch(model.mean_face_2d, model.deformable, boxes, np.arange(n))
    history = [_snapshot(b)]
    for stage in model.stages:
        phi = features(b.X, b.src)
        _apply_stage(b, stage, phi, model)
        history.append(_snapshot(b))
    states = [b.state(i) for i in range(n)]
    return (states, history) if return_history else states


def predict(model: CascadeModel, img, face_box, sample=None) -> InstanceState:
    """Run every stage on one image and return the final state."""
    images = None if img is None else [img]
    samples = None if sample is None else [sample]
    return predict_batch(model, np.asarray(face_box, dtype=float)[None], images, samples)[0]


def _snapshot(b: _Batch):
    return {"x": b.X.copy(), "c": b.C.copy(), "h": b.H.copy(), "alpha": b.A.copy()}


def masked_mean_error(X, X_true, mask) -> float:
    """Mean Euclidean landmark error over annotated points of a batch."""
    err = np.linalg.norm(X - X_true, axis=-1)
    return float((err * mask).sum() / max(mask.sum(), 1))


def mean_face(samples) -> np.ndarray:
    """Box-normalized mean of the annotated ground-truth landmarks."""
    boxes = np.stack([s.face_box for s in samples])
    Xn = to_box_units(np.stack([s.x_true for s in samples]), boxes)
    m = np.stack([s.mask for s in samples])[:, :, None]
    count = m.sum(axis=0)
    annotated = (Xn * m).sum(axis=0) / np.where(count > 0, count, 1.0)
    # Points never annotated fall back to the unmasked mean.
    return np.where(count > 0, annotated, Xn.mean(axis=0))


def _augmented_boxes(boxes, cfg: TrainConfig, rng):
    n = len(boxes)
    s = rng.uniform(1.0 - cfg.scale_jitter, 1.0 + cfg.scale_jitter, size=n)
    shift = rng.uniform(-cfg.shift_jitter, cfg.shift_jitter, size=(n, 2)) * boxes[:, 2:]
    center = boxes[:, :2] + boxes[:, 2:] / 2.0 + shift
    size = boxes[:, 2:] * s[:, None]
    return np.column_stack([center - size / 2.0, size])


def train(samples, cfg: TrainConfig | None = None, *, shapes3d=None, deformable: DeformableModel | None = None
          ) -> CascadeModel:
    """Learn a cascade from annotated samples.

    Only landmark coordinates, visibility labels and annotation masks are
    read; pose and deformation truth is never used.  The 3D model is either
    given or fitted to ``shapes3d`` keeping ``cfg.energy`` of the variance.
    Every sample is expanded into ``cfg.n_augment`` initial states with
    jittered face boxes.
    """
    cfg = cfg or TrainConfig()
    samples = list(samples)
    if not samples:
        raise InvalidInputError("training set is empty")
    D = samples[0].x_true.shape[0]
    if any(s.x_true.shape != (D, 2) or s.c_true.shape != (D,) or s.mask.shape != (D,) for s in samples):
        raise InvalidInputError("all samples must share the landmark count")
    if deformable is None:
        if shapes3d is None:
            raise InvalidInputError("train needs either shapes3d or a deformable model")
        deformable = fit_pca(shapes3d, cfg.energy)
    if deformable.n_points != D:
        raise InvalidInputError("deformable model and samples have different landmark counts")

    rng = np.random.default_rng(cfg.seed)
    mf = mean_face(samples)
    src = np.repeat(np.arange(len(samples)), cfg.n_augment)
    boxes = _augmented_boxes(np.stack([s.face_box for s in samples])[src], cfg, rng)
    model = CascadeModel(stages=[], deformable=deformable, mean_face_2d=mf, descriptor=cfg.descriptor,
                         solver_cfg=cfg.solver, use_occlusion=cfg.use_occlusion,
                         use_pose_deform=cfg.use_pose_deform)
    b = _init_batch(mf, deformable, boxes, src)
    features = _feature_fn(cfg.descriptor, samples=samples)

    X_true = np.stack([s.x_true for s in samples])[src]
    C_true = np.stack([s.c_true for s in samples])[src]
    mask = np.stack([s.mask for s in samples])[src]
    errors = [masked_mean_error(b.X, X_true, mask)]
    logger.info("training on %d states; initial mean error %.3f px", len(src), errors[0])

    for t in range(cfg.n_stages):
        phi = features(b.X, b.src)
        if cfg.use_occlusion:
            vis = train_visibility(phi, b.H, b.C, C_true, cfg.lam, use_pose=cfg.use_pose_deform)
        else:
            vis = VisibilityRegressor.zeros(D, phi.shape[1])
        C_next = predict_visibility(vis, phi, b.H, b.C) if cfg.use_occlusion else b.C
        lmk = train_landmark(phi, C_next, b.H, b.A, to_box_units(b.X, b.boxes), to_box_units(X_true, b.boxes),
                             mask, cfg.lam, use_pose=cfg.use_pose_deform)
        model.stages.append((vis, lmk))
        _apply_stage(b, (vis, lmk), phi, model)
        errors.append(masked_mean_error(b.X, X_true, mask))
        logger.info("stage %d: mean error %.3f px", t + 1, errors[-1])

    model.train_errors = np.array(errors)
    model.n_train_states = len(src)
    return model


def with_stages(model: CascadeModel, n: int) -> CascadeModel:
    """Copy of ``model`` truncated to its first ``n`` stages."""
    return replace(model, stages=list(model.stages[:n]))
