"""Epipolar line-pair search and line-constrained feature aggregation.

For a calibrated reference/source view pair, every reference pixel traces a
line in the source view as its depth varies. This package derives those lines
in closed form, clusters pixels that share a line, gathers feature maps into
per-line token sequences, augments them with line-restricted attention, and
provides an analytic plus wall-clock cost model comparing that strategy with
per-pixel and whole-image aggregation.
"""

from .attention import (
    AttentionConfig,
    AttentionWeights,
    augment_pipeline,
    et_forward,
    identity_local_weights,
    local_augment,
    mhca,
    mhsa,
    read_weights,
    seeded_weights,
    sine_pe,
    write_weights,
    zero_weights,
)
from .cam_io import load_camera_pair, parse_cam_file, write_cam_file
from .complexity import (
    ComplexityParams,
    CostReport,
    Strategy,
    gmacs,
    linear_attention_macs,
    run_benchmark,
    strategy_macs,
    vanilla_attention_macs,
)
from .errors import (
    AllDegenerateError,
    CamParseError,
    DegenerateLineError,
    DimensionMismatchError,
    EpilineError,
    IndexMisalignmentError,
    NonOrthonormalRotationError,
    OddChannelsError,
    RepeatsTooFewError,
    ShapeMismatchError,
    SingularIntrinsicsError,
    UnknownStrategyError,
    ZeroBaselineError,
)
from .geometry import (
    CameraExtrinsics,
    CameraIntrinsics,
    CameraPair,
    EpipolarLine,
    Orientation,
    PixelProjectionCoeffs,
    ProjectionConstants,
    epipolar_line,
    fundamental_matrix,
    pixel_coeffs,
    project_pixel,
    project_pixel_sweep,
    projection_constants,
)
from .pair_search import (
    EpipolarPair,
    EpipolarPairSet,
    QuantizedLineKey,
    SearchConfig,
    SweepEntry,
    assign_source_pixels,
    pair_set_from_dict,
    pair_set_to_dict,
    precision_sweep,
    quantize_line,
    search_pairs,
)
from .sequences import (
    FeatureMap,
    LineSequence,
    gather,
    read_feature_map,
    scatter,
    write_feature_map,
)

__version__ = "0.1.0"
