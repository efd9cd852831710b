from .evaluation import (
    DEFAULT_TOLERANCE_FLOOR,
    FrocCurve,
    FrocPoint,
    MatchResult,
    NoLesionsInCohort,
    afp_at_sensitivity,
    froc,
    match_detections,
)
from .training import (
    BadK,
    CrossValidationResult,
    DEFAULT_GRID,
    DetectorCache,
    EmptyTrainingSet,
    LabeledVolume,
    SENSITIVITY_GRID,
    TooFewPatients,
    cross_validate,
    evaluate,
    fit,
    partition_patients,
)
from .registry import ModelRegistry, ModelVersion, RegistryNode
from .trainer import DependencyUnreachable, TrainingServer
