"""Joint facial landmark detection, occlusion estimation and head-pose estimation.

A cascade of linear regressors refines, stage by stage, the 2D landmarks,
their visibility probabilities, and the head pose and 3D deformation
coefficients of a PCA shape model fitted under weak perspective.
"""

from .cascade import CascadeModel, InstanceState, TrainConfig, initialize, predict, predict_batch, train
from .deformable import DeformableModel, clamp_coeffs, fit_pca, project_coeffs, synthesize_shape
from .errors import (
    DegenerateGeometryError,
    DegeneratePoseError,
    InsufficientConstraintsError,
    InvalidInputError,
    JointFaceError,
    ModelFormatError,
    NumericError,
    OracleUnavailableError,
    RankDeficiencyError,
    UndefinedMetricError,
    UnsupportedVersionError,
)
from .features import DescriptorSpec, extract_patch_descriptor, extract_shape_features
from .fileio import load_dataset, load_model, read_pgm, save_dataset, save_model, write_pgm
from .geometry import (
    WeakPerspectivePose,
    angles_from_pose,
    pose_from_angles,
    project_weak_perspective,
    rotation_from_angles,
)
from .metrics import normalized_error, pixel_error, pose_metrics, recall_at_precision
from .posesolve import SolverConfig, solve_deform_given_pose, solve_pose_deform, solve_pose_given_deform
from .regression import (
    LandmarkRegressor,
    VisibilityRegressor,
    predict_landmark_update,
    predict_visibility,
    solve_weighted_ridge_ls,
    train_landmark,
    train_visibility,
)
from .synth import GenConfig, TrainingSample, generate, make_shape_family, oracle_descriptor

__version__ = "0.1.0"
