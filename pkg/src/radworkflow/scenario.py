"""End-to-end feedback scenario: cohort generation, routing, inference,
simulated adjudication, retraining and FROC reporting."""
from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import requests

from .dicom import Dataset, Detection, T, serialize_part10
from .learning import SENSITIVITY_GRID, afp_at_sensitivity, cross_validate, match_detections
from .phantom import CohortManifest, GroundTruth, PhantomSpec, cohort_series, extend_cohort, generate_cohort
from .reporting import render_figures, write_detail_csv, write_summary_csv
from .topology import AdjudicationNoise, SystemHandle, TopologyConfig, run_topology
from .transfer import Endpoint, StoreStatus, associate


class ScenarioAssertionError(AssertionError):
    pass


def send_series(slices: Sequence[Dataset], endpoint: Endpoint, calling_ae: str = "MODALITY") -> list[StoreStatus]:
    """Store one series over a single association."""
    assoc = associate(endpoint, calling_ae)
    statuses = []
    try:
        for ds in slices:
            blob = serialize_part10(
                ds, str(ds.value(T.SOPClassUID)), str(ds.value(T.SOPInstanceUID))
            )
            statuses.append(assoc.store(blob, str(ds.value(T.SOPInstanceUID))).status)
    finally:
        assoc.release()
    return statuses


def simulate_adjudication(
    proposals: list[dict],
    gt: GroundTruth,
    noise: AdjudicationNoise,
    seed: int,
) -> list[dict]:
    """Turn AI proposals plus ground truth into an adjudication action list.

    Matched proposals are confirmed and unmatched ones rejected, each
    decision flipped with probability p_wrong_decision; ground-truth lesions
    with no matching proposal are added (center jittered within jitter_vox),
    except each add is skipped with probability p_miss_add. Deterministic in
    the seed. A series with no proposals and no lesions is marked reviewed so
    negative exams still count as adjudicated.
    """
    rng = np.random.default_rng(seed)
    dets = [
        Detection(
            center=(p["center"]["slice"], p["center"]["row"], p["center"]["col"]),
            radius_vox=max(p["radiusVox"], 1e-6),
            confidence=p.get("confidence") or 0.5,
        )
        for p in proposals
    ]
    lesions = [(l.center, l.radius_vox) for l in gt.lesions]
    result = match_detections(dets, lesions)
    matched_props = {di for di, _ in result.pairs}

    actions: list[dict] = []
    for i, p in enumerate(proposals):
        correct = "confirm" if i in matched_props else "reject"
        if rng.random() < noise.p_wrong_decision:
            correct = "reject" if correct == "confirm" else "confirm"
        actions.append({"type": correct, "id": p["id"]})
    for li in result.fn_indices:
        if rng.random() < noise.p_miss_add:
            continue
        center, radius = lesions[li]
        jitter = rng.uniform(-noise.jitter_vox, noise.jitter_vox, size=3)
        actions.append(
            {
                "type": "add",
                "center": {
                    "slice": float(center[0] + jitter[0]),
                    "row": float(center[1] + jitter[1]),
                    "col": float(center[2] + jitter[2]),
                },
                "radiusVox": float(radius),
            }
        )
    if not actions:
        actions.append({"type": "markReviewed"})
    return actions


@dataclass
class ScenarioResult:
    detail_rows: list[tuple]  # (seed, increment, fold, sensitivity, afp or None)
    summary_rows: list[tuple]  # (seed, increment, afp80, afp85, afp90)
    out_dir: Path


def _adjudicate_series(system: SystemHandle, series_uid: str, gt: GroundTruth, noise, seed: int) -> None:
    base = system.annotations.http_url
    rsp = requests.get(f"{base}/series/{series_uid}/annotations", timeout=10)
    rsp.raise_for_status()
    obj = rsp.json()
    actions = simulate_adjudication(obj["annotations"], gt, noise, seed)
    rsp = requests.post(
        f"{base}/series/{series_uid}/annotations:adjudicate",
        json={"expectedVersion": obj["version"], "actions": actions, "actor": "sim"},
        timeout=10,
    )
    rsp.raise_for_status()


def run_feedback_scenario(
    cfg: TopologyConfig,
    out_dir: Path,
    log=print,
) -> ScenarioResult:
    sc = cfg.scenario
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    detail_rows: list[tuple] = []
    summary_rows: list[tuple] = []

    for seed in sc.seeds:
        seed_rows = _run_single_seed(cfg, seed, log)
        detail_rows.extend(seed_rows[0])
        summary_rows.extend(seed_rows[1])

    # median across seeds per increment
    for idx, (n_series, _) in enumerate(sc.increments):
        per_s = {}
        for s in (0.80, 0.85, 0.90):
            vals = [
                row[2 + [0.80, 0.85, 0.90].index(s)]
                for row in summary_rows
                if row[1] == n_series and isinstance(row[0], int)
            ]
            vals = [v for v in vals if v is not None]
            per_s[s] = float(np.median(vals)) if vals else None
        summary_rows.append(("median", n_series, per_s[0.80], per_s[0.85], per_s[0.90]))

    write_detail_csv(out_dir / "froc_detail.csv", detail_rows)
    write_summary_csv(out_dir / "afp_summary.csv", summary_rows)
    render_figures(out_dir)
    return ScenarioResult(detail_rows=detail_rows, summary_rows=summary_rows, out_dir=out_dir)


def _run_single_seed(cfg: TopologyConfig, seed: int, log) -> tuple[list[tuple], list[tuple]]:
    sc = cfg.scenario
    detail_rows: list[tuple] = []
    summary_rows: list[tuple] = []
    storage = Path(cfg.storage_root) / f"seed_{seed}"
    system = run_topology(cfg, mode="feedback", storage_root=storage)
    try:
        spec = PhantomSpec(dims=sc.dims)
        manifest: Optional[CohortManifest] = None
        pushed = 0
        for n_series, n_patients in sc.increments:
            t0 = time.time()
            if manifest is None:
                manifest = generate_cohort(n_series, n_patients, spec, seed=seed)
                new_range = range(0, n_series)
            else:
                start = manifest.n_series
                extend_cohort(manifest, n_series, n_patients)
                new_range = range(start, n_series)

            # push the new series through the router
            truths = {}
            for i in new_range:
                slices, gt = cohort_series(manifest, i)
                truths[gt.series_uid] = gt
                send_series(slices, system.router.endpoint)
                pushed += 1
            if not system.ai_node.wait_idle(pushed, timeout=sc.stage_timeout_s * 3):
                raise ScenarioAssertionError(
                    f"AI node incomplete: {len(system.ai_node.processed)}/{pushed}; "
                    f"errors={system.ai_node.errors[:3]}"
                )

            # simulated radiologist adjudication of the new series
            for j, (uid, gt) in enumerate(sorted(truths.items())):
                _adjudicate_series(system, uid, gt, sc.noise, seed=(seed * 100003 + j))

            # retraining on all accumulated adjudicated data
            mv = system.trainer.retrain_cycle(force=True)
            if mv is not None:
                system.ai_node.try_reload_model()
            log(
                f"seed {seed} increment {n_series}: pushed={pushed} "
                f"model_v={system.ai_node.model_version} ({time.time() - t0:.1f}s)"
            )

            # stage accounting: pushed == stored in PACS == inferred
            stored = len(system.pacs.store.list_new_since(0))
            inferred = len(system.ai_node.processed)
            if not (pushed == stored == inferred):
                raise ScenarioAssertionError(
                    f"stage accounting pushed={pushed} stored={stored} inferred={inferred}"
                )

            # evaluation: 5-fold patient-level CV on this increment's labeled data
            cohort = system.trainer.labeled_volumes
            cv = cross_validate(cohort, k=5, seed=seed, cache=system.trainer.cache)
            for fold_idx, curve in enumerate(cv.fold_curves):
                for s in SENSITIVITY_GRID:
                    detail_rows.append(
                        (seed, n_series, fold_idx, s, afp_at_sensitivity(curve, s))
                    )
            for s in SENSITIVITY_GRID:
                detail_rows.append((seed, n_series, "mean", s, cv.mean_afp[s]))
            summary_rows.append(
                (
                    seed,
                    n_series,
                    cv.mean_afp.get(0.80),
                    cv.mean_afp.get(0.85),
                    cv.mean_afp.get(0.90),
                )
            )
    finally:
        system.shutdown()
    return detail_rows, summary_rows
