"""Tissue feature engine for cell-classified whole-slide images.

Turns cell classification output (JSON point records) plus a tumor mask
into a deterministic feature vector, runs cross-validated feature
selection on cohorts of such vectors, scores segmentation output against
ground truth, and generates synthetic slides with closed-form expected
features for end-to-end verification.
"""

from .boosting import StumpModel, predict_scores, train_stump_booster
from .distance import (
    DistanceResult,
    DistanceSpec,
    brute_force_mean_closest_distance,
    compute_distance_results,
    default_distance_specs,
    estimate_overestimation_probability,
    mean_closest_distance,
    nearest_in_rectangle,
    nearest_in_rectangle_bruteforce,
    true_nn_mean_distance,
)
from .errors import (
    AssemblyError,
    DistanceUndefined,
    GenerationError,
    HistomapError,
    MetricError,
    MorphologyError,
    NoTargetError,
    ParameterError,
    ParseError,
    SchemaError,
    SelectionError,
    SerializationError,
    StratificationError,
    TaggingError,
    TrainError,
)
from .estimators import (
    MannWhitneySelector,
    MrmrSelector,
    StumpBoostingClassifier,
    TissueFeatureExtractor,
)
from .features import (
    FeatureDef,
    FeatureRegistry,
    FeatureVector,
    class_densities,
    class_percentages,
    class_ratio,
    extract_features,
    morphology_stats,
    parse_feature_name,
)
from .io import (
    canonical_json_bytes,
    format_number,
    parse_cells,
    parse_feature_vector,
    parse_mask,
    parse_pgm,
    read_meta,
    serialize_cells,
    write_feature_vector,
    write_mask,
    write_meta,
    write_pgm,
)
from .model import (
    DISTANCE_CLASSES,
    INGESTIBLE_CLASSES,
    AlignedSlide,
    CellClass,
    CellRecord,
    RegionTag,
    SlideMeta,
    TumorInstance,
    TumorMask,
    morphology,
)
from .parallel import extract_features_parallel, resolve_workers
from .regions import (
    DEFAULT_VICINITY_UM,
    align_slide,
    label_tumor_instances,
    refine_classes,
    region_areas_um2,
    vicinity_bitmap,
)
from .segmetrics import (
    F1Result,
    InstanceLabelMap,
    MatchResult,
    PQResult,
    aggregate_f1,
    aggregate_panoptic,
    classification_f1,
    match_instances,
    panoptic_quality,
    semantic_iou,
)
from .selection import (
    Cohort,
    FeatureScore,
    SweepResult,
    aggregate_scores,
    cv_sweep,
    mann_whitney_u,
    mannwhitney_rank,
    mrmr_rank,
    read_cohort_csv,
    stratified_folds,
    write_cohort_csv,
)
from .synth import SynthConfig, generate, parse_config, write_fixture

__version__ = "0.1.0"

__all__ = [
    "AlignedSlide",
    "AssemblyError",
    "CellClass",
    "CellRecord",
    "Cohort",
    "DEFAULT_VICINITY_UM",
    "DISTANCE_CLASSES",
    "DistanceResult",
    "DistanceSpec",
    "DistanceUndefined",
    "F1Result",
    "FeatureDef",
    "FeatureRegistry",
    "FeatureScore",
    "FeatureVector",
    "GenerationError",
    "HistomapError",
    "INGESTIBLE_CLASSES",
    "InstanceLabelMap",
    "MannWhitneySelector",
    "MatchResult",
    "MetricError",
    "MorphologyError",
    "MrmrSelector",
    "NoTargetError",
    "PQResult",
    "ParameterError",
    "ParseError",
    "RegionTag",
    "SchemaError",
    "SelectionError",
    "SerializationError",
    "SlideMeta",
    "StratificationError",
    "StumpBoostingClassifier",
    "StumpModel",
    "SweepResult",
    "SynthConfig",
    "TaggingError",
    "TissueFeatureExtractor",
    "TrainError",
    "TumorInstance",
    "TumorMask",
    "aggregate_f1",
    "aggregate_panoptic",
    "aggregate_scores",
    "align_slide",
    "brute_force_mean_closest_distance",
    "canonical_json_bytes",
    "class_densities",
    "class_percentages",
    "class_ratio",
    "classification_f1",
    "compute_distance_results",
    "cv_sweep",
    "default_distance_specs",
    "estimate_overestimation_probability",
    "extract_features",
    "extract_features_parallel",
    "format_number",
    "generate",
    "label_tumor_instances",
    "mann_whitney_u",
    "mannwhitney_rank",
    "match_instances",
    "mean_closest_distance",
    "morphology",
    "morphology_stats",
    "mrmr_rank",
    "nearest_in_rectangle",
    "nearest_in_rectangle_bruteforce",
    "panoptic_quality",
    "parse_cells",
    "parse_config",
    "parse_feature_name",
    "parse_feature_vector",
    "parse_mask",
    "parse_pgm",
    "predict_scores",
    "read_cohort_csv",
    "read_meta",
    "refine_classes",
    "region_areas_um2",
    "resolve_workers",
    "semantic_iou",
    "serialize_cells",
    "stratified_folds",
    "train_stump_booster",
    "true_nn_mean_distance",
    "vicinity_bitmap",
    "write_cohort_csv",
    "write_feature_vector",
    "write_fixture",
    "write_mask",
    "write_meta",
    "write_pgm",
]
