"""Occlusion-free image-based visual servoing.

A planner-plus-filter control stack for eye-in-hand visual servoing:
a finite-horizon planner regulates the image feature error while
barrier-certificate safety filters (exact or chance-constrained)
minimally modify the commanded camera twist so that feature points are
never occluded by a moving spherical obstacle, plus a deterministic
closed-loop simulator reproducing the accompanying experiments.
"""

from .barrier import (
    HalfspaceConstraint,
    NoiseModel,
    QuadraticConstraint,
    barrier_rate_row,
    barrier_value,
    cbc_halfspaces,
    noise_box_halfwidth,
    noise_box_halfwidth_numeric,
    prcbc_quadratics,
)
from .geometry import (
    CameraIntrinsics,
    CameraPose,
    Obstacle3,
    ObstacleImageState,
    integrate_twist,
    normalize,
    obstacle_image_state,
    pixel_from_normalized,
    project_point,
    project_to_pixel,
    world_to_camera,
)
from .ibvs import clip_twist, feature_error, gradient_controller, pseudo_inverse
from .jacobians import (
    feature_interaction,
    obstacle_center_interaction,
    obstacle_radius_interaction,
    stack_interaction,
)
from .mpc import MpcConfig, plan, predict_errors, rollout_cost
from .observation import FeatureObservation
from .scenario import (
    Scenario,
    load,
    reference_scenario,
    reference_sweep_locations,
    validate_scenario,
)
from .sim import TrajectoryLog, observe, pixel_clearance, run, step, sweep
from .solvers import (
    FilterProblem,
    FilterSolution,
    certify,
    solve_filter_qcqp,
    solve_filter_qp,
)

__version__ = "0.1.0"
