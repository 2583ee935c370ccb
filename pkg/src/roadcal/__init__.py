"""Geo-referenced extrinsic calibration of static roadside cameras.

The toolkit estimates the rigid transform between a UTM-anchored world
frame and a fixed camera from two recordings: tracked 2D vehicle
bounding boxes and the GNSS/RTK+IMU pose log of one calibration
vehicle. Candidate image tracks are paired with the pose log, fitted
robustly, filtered, grouped by camera-pose agreement, and refined on
the PCA ground plane using the known vehicle footprint. A deterministic
scenario generator provides synthetic recordings with ground truth.
"""

from .errors import (
    BehindCameraError,
    CalibrationError,
    DegenerateGeometryError,
    GenerationError,
    InputError,
    InsufficientDataError,
    InsufficientTraversalsError,
    NoConsensusError,
    NoIntersectionError,
    NoOverlapError,
    NoRefinablePairsError,
)
from .geometry import (
    ExtrinsicCalibration,
    FixedAnchor,
    GroundPlane,
    Intrinsics,
    MeanAnchor,
    apply_anchor,
    backproject_to_plane,
    camera_center,
    in_frustum,
    look_at_extrinsic,
    project,
    quaternion_from_rotation,
    rotation_from_euler,
    rotation_from_quaternion,
)
from .grouping import (
    GroupingParams,
    HypothesisGroup,
    cluster_groups,
    dbscan,
    outlier_ratio,
    overlap_ratio,
    rotational_similarity,
    similarity_graph,
)
from .hypothesis import (
    Hypothesis,
    LocalizationSample,
    PrefilterParams,
    RejectionReason,
    build_hypothesis,
    prefilter_camera_pose,
    synchronize,
)
from .pipeline import (
    TOOL_VERSION,
    PipelineConfig,
    RunReport,
    build_config,
    emit_calibration,
    emit_plot_data,
    ingest_detections,
    ingest_localization,
    load_calibration,
    load_config,
    load_intrinsics,
    run_calibration,
)
from .pnp import Correspondence, RansacParams, epnp, ransac_pnp, reprojection_errors
from .refinement import (
    CalibrationResult,
    EvaluationMetrics,
    RefinedPair,
    RegistrationParams,
    VehicleDims,
    delta_p,
    evaluate,
    fit_ground_plane,
    merge_and_select,
    refine_correspondences,
    register,
    vehicle_footprint,
)
from .synthgen import (
    NoiseConfig,
    ObstacleRegion,
    ScenarioConfig,
    ScenarioTruth,
    TrajectorySpec,
    curved_road_scenario,
    generate,
    occlude,
)
from .tracking import (
    BoundingBox,
    Detection,
    ObjectTrack,
    TrackerParams,
    assign,
    association_cost,
    diou,
    iou,
    run_tracker,
)

__version__ = TOOL_VERSION
