"""keytrack: marker tracking for see-through-skin tactile sensors.

A library plus CLI that detects keyline markers in camera frames, tracks
each marker with a small Kalman filter through background clutter, and
emits per-marker deviation vectors. A bundled simulator renders synthetic
sensor frames with exact ground truth for testing and benchmarking.
"""

from .bench import BenchReport, bench_latency
from .errors import (
    DimensionMismatch,
    GridOutOfBounds,
    InvalidGeometry,
    KeytrackError,
    LayoutInvalid,
    ScenarioInvalid,
    StreamFormatError,
)
from .layout import (
    DeviationField,
    LayoutReport,
    MarkerGeometry,
    MarkerLayout,
    MarkerStyle,
    Provenance,
    canonical_layout,
    default_layout,
    load_layout,
    save_layout,
    validate_layout,
)
from .pipeline import (
    BinaryMask,
    Blob,
    BlobSet,
    GrayFrame,
    PipelineConfig,
    acquire_measurements,
    detect_blobs,
    threshold,
    to_gray,
)
from .runner import Mode, VariantRunner
from .simulate import (
    BlobClutter,
    Checkerboard,
    NoDeformation,
    RadialIndent,
    Scenario,
    Scripted,
    TextLike,
    Uniform,
    UniformShear,
    render_frame,
    scenario_fig4,
    scenario_idle,
    scenario_radial_indent,
    scenario_uniform_shear,
    write_sequence,
)
from .tracker import (
    DeviationRecord,
    MarkerTrack,
    NoiseParams,
    TrackStatus,
    TrackerState,
    associate,
    init_tracker,
    match_nearest_initial,
    predict,
    raw_detection_count,
    track_frame,
    update,
)

__version__ = "0.1.0"

__all__ = [
    "BenchReport", "bench_latency",
    "KeytrackError", "InvalidGeometry", "GridOutOfBounds", "LayoutInvalid",
    "DimensionMismatch", "ScenarioInvalid", "StreamFormatError",
    "MarkerGeometry", "MarkerLayout", "MarkerStyle", "DeviationField", "Provenance",
    "LayoutReport", "canonical_layout", "default_layout", "validate_layout",
    "load_layout", "save_layout",
    "GrayFrame", "BinaryMask", "Blob", "BlobSet", "PipelineConfig",
    "to_gray", "threshold", "detect_blobs", "acquire_measurements",
    "Mode", "VariantRunner",
    "Scenario", "Uniform", "Checkerboard", "TextLike", "BlobClutter",
    "NoDeformation", "UniformShear", "RadialIndent", "Scripted",
    "render_frame", "write_sequence", "scenario_fig4", "scenario_idle",
    "scenario_radial_indent", "scenario_uniform_shear",
    "NoiseParams", "MarkerTrack", "TrackerState", "TrackStatus", "DeviationRecord",
    "init_tracker", "predict", "associate", "update", "track_frame",
    "raw_detection_count", "match_nearest_initial",
    "__version__",
]
