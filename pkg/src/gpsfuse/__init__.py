"""GPS fusion for odometry/IMU factor graphs with global-frame initialisation
and dropout alignment."""

from .align import (AlignmentCorrection, GlobalFrameManager, ObservabilityReport, Stage,
                    assess_observability, detect_dropout, full_align, position_align, svd_init)
from .evaluation import AteResult, ScenarioConfig, compute_ate, run_scenario, sweep
from .factors import (BiasPriorFactor, ExtrinsicsGW, GpsFactor, GpsMeasurement, ImuFactor,
                      RelPoseFactor, SingularCovarianceError, gps_jacobians, gps_residual)
from .geodetic import EnuConverter, EnuOrigin, GeodeticPoint, from_enu, to_enu
from .geom import Pose3, Rot3, exp_so3, log_so3
from .graph import GraphError, GraphProblem, SolveReport, SolverSettings
from .imu import ImuNoise, ImuSample, NavState, PreintegratedImu, correct_bias, predict, preintegrate
from .pipeline import EstimatorConfig, run_estimator
from .simkit import DropoutPattern, TrajectorySpec, make_gps, make_odometry, synthesize

__version__ = "0.1.0"
