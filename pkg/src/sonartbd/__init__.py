"""Active-sonar track-before-detect: simulation, beamforming, CFAR
detection and multitarget tracking, with a Monte Carlo evaluation
harness."""

__version__ = "0.1.0"

from .beamform import (
    AngleDistanceMatrix,
    BeamformPlan,
    beam_pattern,
    delay_and_sum,
    load_matrix,
    matched_filter,
    save_matrix,
)
from .detect import (
    Blob,
    CfarConfig,
    PolarMeasurement,
    cfar_binary_map,
    cfar_threshold,
    extract_measurements,
    label_blobs,
    merge_blobs,
)
from .errors import (
    ConfigError,
    FileFormatError,
    InvalidParameterError,
    NumericalDegeneracyError,
)
from .evaluate import (
    EvalParams,
    RunMetrics,
    SweepSpec,
    aggregate,
    compute_metrics,
    run_sweep,
)
from .pipeline import (
    DetectParams,
    RunResult,
    TrackRecord,
    calibrate_amplitudes,
    emission_matrices,
    run_many,
    run_pipeline,
    run_tracking,
)
from .scenario import (
    ArrayGeometry,
    ClutterModel,
    Scenario,
    TargetTruth,
    Waveform,
    chirp_waveform,
)
from .track import (
    ConvertedMeasurement,
    MeasurementNoise,
    Track,
    Tracker,
    TrackerConfig,
    convert_measurement,
    solve_assignment,
)

__all__ = [
    "AngleDistanceMatrix",
    "ArrayGeometry",
    "BeamformPlan",
    "Blob",
    "CfarConfig",
    "ClutterModel",
    "ConfigError",
    "ConvertedMeasurement",
    "DetectParams",
    "EvalParams",
    "FileFormatError",
    "InvalidParameterError",
    "MeasurementNoise",
    "NumericalDegeneracyError",
    "PolarMeasurement",
    "RunMetrics",
    "RunResult",
    "Scenario",
    "SweepSpec",
    "TargetTruth",
    "Track",
    "TrackRecord",
    "Tracker",
    "TrackerConfig",
    "Waveform",
    "aggregate",
    "beam_pattern",
    "calibrate_amplitudes",
    "cfar_binary_map",
    "cfar_threshold",
    "chirp_waveform",
    "compute_metrics",
    "convert_measurement",
    "delay_and_sum",
    "emission_matrices",
    "extract_measurements",
    "label_blobs",
    "load_matrix",
    "matched_filter",
    "merge_blobs",
    "run_many",
    "run_pipeline",
    "run_sweep",
    "run_tracking",
    "save_matrix",
    "solve_assignment",
    "__version__",
]
