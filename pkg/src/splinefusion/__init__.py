"""splinefusion: batch trajectory estimation with continuous-time
(cumulative B-spline) and discrete-time representations, fusing camera,
IMU, and GPS measurements with camera-IMU and GPS-IMU time-offset
estimation.
"""

from .errors import (
    BehindCameraError,
    BootstrapUnavailableError,
    DataError,
    DegenerateConfigurationError,
    InvalidArgumentError,
    NumericalFailureError,
    OutOfDomainError,
    SplineFusionError,
)
from .rotations import Pose, slerp, so3_exp, so3_log
from .bsplines import KnotGrid, SplineR3, SplineSO3, grid_covering
from .camera import CameraModel
from .dataset import (
    Frame,
    MeasurementSet,
    NoiseSpec,
    SensorRig,
    read_dataset,
    write_dataset,
)
from .simulate import (
    GroundTruth,
    ProfileParams,
    SimulationResult,
    default_rig,
    make_ground_truth,
    synthesize,
)
from .residuals import GRAVITY, CtState, DtState, FactorWeight
from .preintegration import PreintegratedImu, integrate, preint_residual
from .initialization import (
    Sim3Transform,
    align_to_world,
    fit_spline_to_poses,
    imu_scale_bootstrap,
    pnp_dlt,
    umeyama,
)
from .solver import Problem, SolveOptions, SolveReport, solve
from .estimators import (
    CtConfig,
    DtConfig,
    RunResult,
    build_ct_problem,
    build_dt_problem,
    initialize_ct,
    initialize_dt,
    run,
    shift_feature,
)
from .metrics import AlignedPairs, align_pairs, associate, ate_p, ate_r, make_pairs
from .config import RunConfig, load_config, save_config

__version__ = "1.0.0"

__all__ = [
    "AlignedPairs",
    "BehindCameraError",
    "BootstrapUnavailableError",
    "CameraModel",
    "CtConfig",
    "CtState",
    "DataError",
    "DegenerateConfigurationError",
    "DtConfig",
    "DtState",
    "FactorWeight",
    "Frame",
    "GRAVITY",
    "GroundTruth",
    "InvalidArgumentError",
    "KnotGrid",
    "MeasurementSet",
    "NoiseSpec",
    "NumericalFailureError",
    "OutOfDomainError",
    "Pose",
    "PreintegratedImu",
    "Problem",
    "ProfileParams",
    "RunConfig",
    "RunResult",
    "SensorRig",
    "Sim3Transform",
    "SimulationResult",
    "SolveOptions",
    "SolveReport",
    "SplineFusionError",
    "SplineR3",
    "SplineSO3",
    "align_pairs",
    "align_to_world",
    "associate",
    "ate_p",
    "ate_r",
    "build_ct_problem",
    "build_dt_problem",
    "default_rig",
    "fit_spline_to_poses",
    "grid_covering",
    "imu_scale_bootstrap",
    "initialize_ct",
    "initialize_dt",
    "integrate",
    "load_config",
    "make_ground_truth",
    "make_pairs",
    "pnp_dlt",
    "preint_residual",
    "read_dataset",
    "run",
    "save_config",
    "shift_feature",
    "slerp",
    "so3_exp",
    "so3_log",
    "solve",
    "synthesize",
    "umeyama",
    "write_dataset",
]
