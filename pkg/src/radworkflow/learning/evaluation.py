"""Detection matching and FROC/AFP evaluation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from ..dicom import Detection

DEFAULT_TOLERANCE_FLOOR = 2.0

Lesion = tuple[tuple[float, float, float], float]  # (center, radius_vox)


class NoLesionsInCohort(ValueError):
    pass


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int], ...]  # (detection index, lesion index)
    fp_indices: tuple[int, ...]
    fn_indices: tuple[int, ...]

    @property
    def tp(self) -> int:
        return len(self.pairs)


def _distance(a: Sequence[float], b: Sequence[float]) -> float:
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def match_detections(
    detections: Sequence[Detection],
    lesions: Sequence[Lesion],
    tolerance_floor: float = DEFAULT_TOLERANCE_FLOOR,
) -> MatchResult:
    """Greedy one-to-one matching by descending confidence.

    Each detection takes the nearest unmatched lesion within
    max(lesion radius, tolerance_floor) voxels; ties in confidence are
    broken by original detection index (stable sort).
    """
    order = sorted(range(len(detections)), key=lambda i: -detections[i].confidence)
    matched_lesions: set[int] = set()
    pairs = []
    fps = []
    for di in order:
        det = detections[di]
        best: Optional[tuple[float, int]] = None
        for li, (center, radius) in enumerate(lesions):
            if li in matched_lesions:
                continue
            d = _distance(det.center, center)
            if d <= max(radius, tolerance_floor):
                if best is None or d < best[0]:
                    best = (d, li)
        if best is None:
            fps.append(di)
        else:
            matched_lesions.add(best[1])
            pairs.append((di, best[1]))
    fns = tuple(li for li in range(len(lesions)) if li not in matched_lesions)
    return MatchResult(
        pairs=tuple(sorted(pairs)), fp_indices=tuple(sorted(fps)), fn_indices=fns
    )


@dataclass(frozen=True)
class FrocPoint:
    threshold: float
    sensitivity: float
    afp: float


@dataclass(frozen=True)
class FrocCurve:
    points: tuple[FrocPoint, ...]  # thresholds strictly decreasing

    def __post_init__(self):
        ts = [p.threshold for p in self.points]
        if ts != sorted(ts, reverse=True) or len(set(ts)) != len(ts):
            raise ValueError("thresholds must be strictly decreasing")

    @property
    def max_sensitivity(self) -> float:
        return max((p.sensitivity for p in self.points), default=0.0)


# One evaluation unit: the detections of one series and its lesions,
# grouped per patient so AFP is per patient.
PatientCase = tuple[str, Sequence[Detection], Sequence[Lesion]]  # (patient_id, dets, lesions)


def froc(cases: Sequence[PatientCase], tolerance_floor: float = DEFAULT_TOLERANCE_FLOOR) -> FrocCurve:
    """Sweep the confidence threshold over all detection confidences
    (plus +inf) and pool sensitivity over the cohort's lesions; AFP is
    total FP over the number of distinct patients.

    Greedy matching is prefix-stable in confidence order: the match result
    for the detections above any threshold equals the corresponding prefix
    of one full greedy pass. One pass per case therefore yields the whole
    curve as cumulative TP/FP counts.
    """
    total_lesions = sum(len(lesions) for _, _, lesions in cases)
    if total_lesions == 0:
        raise NoLesionsInCohort("cohort has no lesions")
    patients = {pid for pid, _, _ in cases}
    n_patients = max(len(patients), 1)

    marks: list[tuple[float, bool]] = []  # (confidence, is_tp)
    for _, dets, lesions in cases:
        result = match_detections(dets, lesions, tolerance_floor)
        tp_set = {di for di, _ in result.pairs}
        marks.extend((d.confidence, i in tp_set) for i, d in enumerate(dets))
    return froc_from_marks(marks, total_lesions, n_patients)


def froc_from_marks(
    marks: list[tuple[float, bool]], total_lesions: int, n_patients: int
) -> FrocCurve:
    """Curve from pooled per-detection (confidence, is-TP) marks."""
    marks = sorted(marks, key=lambda m: -m[0])
    points = [FrocPoint(threshold=math.inf, sensitivity=0.0, afp=0.0)]
    tp = fp = 0
    i = 0
    while i < len(marks):
        t = marks[i][0]
        while i < len(marks) and marks[i][0] == t:
            if marks[i][1]:
                tp += 1
            else:
                fp += 1
            i += 1
        points.append(
            FrocPoint(threshold=t, sensitivity=tp / total_lesions, afp=fp / n_patients)
        )
    return FrocCurve(points=tuple(points))


def afp_at_sensitivity(curve: FrocCurve, s: float) -> Optional[float]:
    """Minimum AFP over points attaining sensitivity >= s, or None when the
    curve never reaches s."""
    if not (0.0 < s <= 1.0):
        raise ValueError("target sensitivity must be in (0, 1]")
    eligible = [p.afp for p in curve.points if p.sensitivity >= s - 1e-12]
    return min(eligible) if eligible else None
