"""Prompt-driven uncalibrated image-based visual servoing benchmark.

A probability map from any segmentation source is thresholded and reduced
by PCA to geometric constraints; a Broyden-estimated visuo-motor Jacobian
turns the stacked residuals into joint commands; a deterministic simulator
closes the loop and grades the result. Mask-quality metrics, a TCP seam for
external segmenters, a batch harness, and an HTTP service round it out.
"""

from .composer import (
    CandidateSet,
    ComposerError,
    IllDefinedLine,
    IsotropicDistribution,
    PrincipalDecomposition,
    TooFewCandidates,
    compose_constraint,
    compose_from_map,
    effector_center_line,
    effector_point,
    pca_analyze,
    threshold_candidates,
)
from .controller import (
    ControllerConfig,
    InvalidStatus,
    JacobianEstimate,
    NumericalFailure,
    ServoState,
    ServoStatus,
    SingularInitialization,
    TraceStep,
    ZeroStep,
    broyden_update,
    compute_command,
    initialize_jacobian,
    servo_step,
    trace_to_jsonl,
)
from .geometry import (
    ArityMismatch,
    CoincidentPoints,
    ConstraintKind,
    DegeneratePoint,
    EmptyConstraintList,
    GeometricConstraint,
    GeometryError,
    ImageLine,
    ImagePoint,
    evaluate_constraint,
    line_from_points,
    stack_residuals,
)
from .harness import (
    BatchReport,
    ManifestParseError,
    PerceptionTimeout,
    SessionConfig,
    SessionOutcome,
    SessionResult,
    TaskRecord,
    TaskSpec,
    parse_manifest,
    run_batch,
    run_session,
)
from .metrics import (
    DimensionMismatch,
    EmptyGroundTruthWarning,
    HybridLossConfig,
    MetricReport,
    evaluate_pair,
    hybrid_loss_terms,
    mae,
    max_f,
    s_measure,
    score_corpus,
    ssim_index,
    total_loss,
    weighted_f,
)
from .probmap import (
    MapFormatError,
    ProbabilityMap,
    decode_pfm,
    decode_pgm,
    encode_pfm,
    encode_pgm,
    read_map,
    write_map,
)
from .providers import (
    DEFAULT_CORRUPTION,
    CorruptedProvider,
    CorruptionConfig,
    OracleProvider,
    ProtocolError,
    ProviderError,
    ProviderServer,
    ProviderUnavailable,
    RemoteProvider,
    SegmentationProvider,
    corrupt_map,
)
from .service import ServoService
from .simworld import (
    Box,
    Cylinder,
    EyeInHandCamera,
    Joint,
    JointLimitViolation,
    KinematicChain,
    PartRegion,
    PromptTag,
    SceneFormatError,
    ScenePrimitive,
    SimWorld,
    Sphere,
    apply_joint_command,
    forward_kinematics,
    load_scene,
    load_scene_dict,
    render_oracle_mask,
    render_view,
    save_scene,
    scene_to_dict,
)

__version__ = "0.1.0"
