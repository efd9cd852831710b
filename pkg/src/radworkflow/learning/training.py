"""Detector parameter fitting and patient-level cross-validation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..detector import ComponentStats, ModelParams, component_stats, detections_from_stats
from ..dicom import Detection, Volume
from .evaluation import (
    FrocCurve,
    Lesion,
    NoLesionsInCohort,
    afp_at_sensitivity,
    froc_from_marks,
    match_detections,
)

DEFAULT_GRID = tuple(
    ModelParams(z_threshold=z, min_component_vox=m, max_component_vox=4000, confidence_scale=1.0)
    for z in (2.0, 2.5, 3.0, 3.5, 4.0)
    for m in (2, 4, 8, 16)
)

SENSITIVITY_GRID = tuple(round(0.50 + 0.05 * i, 2) for i in range(11))  # 0.50 .. 1.00


class EmptyTrainingSet(ValueError):
    pass


class BadK(ValueError):
    pass


class TooFewPatients(ValueError):
    pass


@dataclass
class LabeledVolume:
    series_uid: str
    patient_id: str
    volume: Volume
    lesions: list[Lesion]


class DetectorCache:
    """Memoizes connected-component statistics per (series, z threshold) so
    grid sweeps and repeated folds re-run the labelling pass only once; the
    derived detections and TP/FP marks per (series, params, labels) are
    cached too, since every fold re-evaluates the same pairs."""

    def __init__(self):
        self._stats: dict[tuple[str, float], list[ComponentStats]] = {}
        self._dets: dict[tuple[str, ModelParams], list[Detection]] = {}
        self._marks: dict[tuple, list[tuple[float, bool]]] = {}

    def stats(self, lv: LabeledVolume, z_threshold: float) -> list[ComponentStats]:
        key = (lv.series_uid, z_threshold)
        if key not in self._stats:
            self._stats[key] = component_stats(lv.volume.voxels, z_threshold)
        return self._stats[key]

    def detections(self, lv: LabeledVolume, params: ModelParams) -> list[Detection]:
        key = (lv.series_uid, params)
        if key not in self._dets:
            self._dets[key] = detections_from_stats(self.stats(lv, params.z_threshold), params)
        return self._dets[key]

    def case_marks(self, lv: LabeledVolume, params: ModelParams) -> list[tuple[float, bool]]:
        """(confidence, is-true-positive) marks of one series under params."""
        key = (lv.series_uid, params, tuple(lv.lesions))
        if key not in self._marks:
            dets = self.detections(lv, params)
            result = match_detections(dets, lv.lesions)
            tp = {di for di, _ in result.pairs}
            self._marks[key] = [(d.confidence, i in tp) for i, d in enumerate(dets)]
        return self._marks[key]


def evaluate(
    volumes: Sequence[LabeledVolume],
    params: ModelParams,
    cache: Optional[DetectorCache] = None,
) -> FrocCurve:
    cache = cache or DetectorCache()
    total_lesions = sum(len(lv.lesions) for lv in volumes)
    if total_lesions == 0:
        raise NoLesionsInCohort("cohort has no lesions")
    n_patients = max(len({lv.patient_id for lv in volumes}), 1)
    marks: list[tuple[float, bool]] = []
    for lv in volumes:
        marks.extend(cache.case_marks(lv, params))
    return froc_from_marks(marks, total_lesions, n_patients)


def fit(
    train: Sequence[LabeledVolume],
    grid: Sequence[ModelParams] = DEFAULT_GRID,
    cache: Optional[DetectorCache] = None,
) -> ModelParams:
    """Exhaustive grid search minimizing AFP at 90% sensitivity on the
    training set; ties broken by AFP at 85%, then by lower z threshold,
    then by lower minimum component size. Deterministic."""
    if not train:
        raise EmptyTrainingSet("no training volumes")
    if not grid:
        raise EmptyTrainingSet("empty parameter grid")
    cache = cache or DetectorCache()

    def key(params: ModelParams):
        curve = evaluate(train, params, cache)
        afp90 = afp_at_sensitivity(curve, 0.90)
        afp85 = afp_at_sensitivity(curve, 0.85)
        return (
            afp90 if afp90 is not None else float("inf"),
            afp85 if afp85 is not None else float("inf"),
            params.z_threshold,
            params.min_component_vox,
        )

    return min(grid, key=key)


@dataclass
class CrossValidationResult:
    fold_curves: list[FrocCurve]
    fold_test_patients: list[list[str]]
    fold_params: list[ModelParams]
    # mean AFP per sensitivity-grid value; None where no fold attains it
    mean_afp: dict[float, Optional[float]] = field(default_factory=dict)


def partition_patients(patients: Sequence[str], k: int, seed: int) -> list[list[str]]:
    if k < 2:
        raise BadK(f"k must be >= 2, got {k}")
    unique = sorted(set(patients))
    if len(unique) < k:
        raise TooFewPatients(f"{len(unique)} patients < {k} folds")
    rng = np.random.default_rng((seed, 42))
    order = [unique[i] for i in rng.permutation(len(unique))]
    folds: list[list[str]] = [[] for _ in range(k)]
    for i, p in enumerate(order):
        folds[i % k].append(p)
    return folds


def cross_validate(
    cohort: Sequence[LabeledVolume],
    k: int,
    seed: int = 0,
    grid: Sequence[ModelParams] = DEFAULT_GRID,
    cache: Optional[DetectorCache] = None,
) -> CrossValidationResult:
    """Patients (not series) are partitioned into k folds deterministically;
    each fold fits on the other k-1 folds and evaluates FROC on its own."""
    cache = cache or DetectorCache()
    folds = partition_patients([lv.patient_id for lv in cohort], k, seed)
    result = CrossValidationResult(fold_curves=[], fold_test_patients=[], fold_params=[])
    for fold in folds:
        fold_set = set(fold)
        test = [lv for lv in cohort if lv.patient_id in fold_set]
        train = [lv for lv in cohort if lv.patient_id not in fold_set]
        params = fit(train, grid, cache)
        curve = evaluate(test, params, cache)
        result.fold_params.append(params)
        result.fold_curves.append(curve)
        result.fold_test_patients.append(fold)
    for s in SENSITIVITY_GRID:
        vals = [afp_at_sensitivity(c, s) for c in result.fold_curves]
        reached = [v for v in vals if v is not None]
        result.mean_afp[s] = sum(reached) / len(reached) if reached else None
    return result
