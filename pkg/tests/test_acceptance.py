"""End-to-end acceptance gate.

Each test exercises one release criterion and prints an ACCEPTANCE line on
success so a full run reads as a checklist. The UI check (criterion 10)
lives in frontend/ as a vitest suite against a live annotation node; this
module proves the primary system stands alone without it.
"""
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from radworkflow.detector import ModelParams
from radworkflow.dicom import T, parse_part10, serialize_part10
from radworkflow.learning import froc, match_detections
from radworkflow.annotations import AnnotationStore, VersionConflict
from radworkflow.phantom import PhantomSpec, generate_cohort, generate_phantom, cohort_series
from radworkflow.scenario import run_feedback_scenario, send_series
from radworkflow.topology import default_config, run_topology
from radworkflow.transfer import (
    AssociationRejected,
    Endpoint,
    associate,
    decode_assoc_rq,
    encode_assoc_rq,
    encode_assoc_rsp,
    encode_release_rq,
    encode_release_rsp,
    encode_store_rq,
    encode_store_rsp,
    serve,
)
from tests.conftest import make_series
from tests.test_annotations import _random_mutation, snapshot_state
from tests.test_dicom_codec import _gen_dataset
from tests.test_learning import naive_froc, naive_match, random_instance

SMALL = PhantomSpec(dims=(16, 24, 24))


def ok(n, name):
    print(f"\nACCEPTANCE {n} {name}: PASS")


def test_01_codec_roundtrip_thousand_datasets():
    rng = np.random.default_rng(8001)
    start = time.monotonic()
    for _ in range(1000):
        ds = _gen_dataset(rng)
        blob = serialize_part10(ds, "1.2.840.10008.5.1.4.1.1.4", "9.9.9")
        again = parse_part10(blob)
        assert again == ds
        assert serialize_part10(again, "1.2.840.10008.5.1.4.1.1.4", "9.9.9") == blob
    elapsed = time.monotonic() - start
    assert elapsed < 30.0, f"codec suite took {elapsed:.1f}s"
    ok(1, "codec round-trip")


def test_02_wire_protocol_golden_vectors_and_failure_modes():
    assert encode_assoc_rq("MODALITY", "ARCHIVE") == (
        b"RDW1\x01\x01\x00" + b"MODALITY".ljust(16) + b"ARCHIVE".ljust(16)
    )
    assert decode_assoc_rq(encode_assoc_rq("A", "B")) == (1, "A", "B")
    assert encode_assoc_rsp(0) == b"\x02\x00"
    assert encode_store_rq(b"\xab\xcd") == b"\x03\x02\x00\x00\x00\x00\x00\x00\x00\xab\xcd"
    assert encode_store_rsp(3) == b"\x04\x03\x00"
    assert encode_release_rq() == b"\x05"
    assert encode_release_rsp() == b"\x06"

    stored = []
    srv = serve(Endpoint(host="127.0.0.1", port=0, called_ae="ARCHIVE"),
                lambda ds, raw: stored.append(raw) or 0)
    try:
        with pytest.raises(AssociationRejected) as exc:
            associate(replace(srv.endpoint, called_ae="WRONG"), "TEST")
        assert exc.value.reason == 1

        # a peer that dies mid-frame gets no reply and stores nothing
        import socket
        sock = socket.create_connection((srv.endpoint.host, srv.endpoint.port))
        sock.sendall(encode_assoc_rq("TEST", "ARCHIVE"))
        assert sock.recv(2) == b"\x02\x00"
        sock.sendall(encode_store_rq(b"x" * 100)[: 30])  # truncated payload
        sock.close()
        time.sleep(0.2)
        assert stored == []
    finally:
        srv.stop()
    ok(2, "wire protocol conformance")


def push_cohort(system, manifest):
    truths = {}
    for i in range(manifest.n_series):
        slices, gt = cohort_series(manifest, i)
        send_series(slices, system.router.endpoint)
        truths[gt.series_uid] = gt
    return truths


def test_03_research_isolation(tmp_path):
    cfg = default_config("research", tmp_path)
    cfg.quiescence_s = 0.3
    system = run_topology(cfg)
    try:
        manifest = generate_cohort(5, 5, SMALL, seed=31)
        push_cohort(system, manifest)
        pushed = system.pacs.store.sop_instance_set()
        assert len(pushed) == 5 * 16
        assert system.ai_node.wait_idle(5, timeout=60)
        # clinical archive is untouched by the investigational results
        assert system.pacs.store.sop_instance_set() == pushed
        gsps = [s for s in system.research_pacs.store.query()
                if s["seriesDescription"] == "AI_RESULTS"]
        assert len(gsps) == 5
        assert len({g["studyUid"] for g in gsps}) == 5
    finally:
        system.shutdown()
    ok(3, "research isolation")


def test_04_production_flow_and_worklist(tmp_path):
    cfg = default_config("production", tmp_path)
    cfg.quiescence_s = 0.3
    cfg.detector = ModelParams(z_threshold=3.5, min_component_vox=4)
    system = run_topology(cfg)
    try:
        hot = replace(SMALL, lesion_count_range=(5, 5), lesion_radius_range=(2.5, 3.5),
                      lesion_contrast_range=(600.0, 800.0), distractor_count_range=(0, 0),
                      noise_sd=20.0, seed=77)
        cold = replace(hot, lesion_count_range=(0, 0), seed=78)
        hot_slices, hot_gt = generate_phantom(hot, patient_id="P0001")
        cold_slices, _ = generate_phantom(cold, patient_id="P0002")
        hot_study = str(hot_slices[0].value(T.StudyInstanceUID))
        cold_study = str(cold_slices[0].value(T.StudyInstanceUID))
        send_series(hot_slices, system.router.endpoint)
        send_series(cold_slices, system.router.endpoint)
        assert system.ai_node.wait_idle(2, timeout=60)

        gsps = [s for s in system.pacs.store.query()
                if s["seriesDescription"] == "AI_RESULTS"]
        assert {g["studyUid"] for g in gsps} == {hot_study, cold_study}

        worklist = system.pacs.store.worklist()
        order = [w.study_uid for w in worklist]
        assert order.index(hot_study) < order.index(cold_study)
        counts = {w.study_uid: w.finding_count for w in worklist}
        assert counts[hot_study] == 5 and counts[cold_study] == 0
    finally:
        system.shutdown()
    ok(4, "production flow and worklist triage")


def test_05_router_selectivity(tmp_path):
    cfg = default_config("research", tmp_path)
    cfg.quiescence_s = 0.3
    system = run_topology(cfg)
    try:
        matching, others, pushed_sops = set(), set(), set()
        specs = [
            ("8.1.1", "MR", "AX T1 3D POST", True),
            ("8.1.2", "MR", "SAG T1", True),
            ("8.1.3", "MR", "AX T2 FLAIR", False),
            ("8.1.4", "CT", "AX T1 3D POST", False),
            ("8.1.5", "MR", "AX T1", True),
        ]
        for uid, modality, desc, matches in specs:
            slices = make_series(series_uid=uid, study_uid=f"8.0.{uid[-1]}", n_slices=8,
                                 rows=24, cols=24, modality=modality, description=desc)
            send_series(slices, system.router.endpoint)
            pushed_sops |= {str(ds.value(T.SOPInstanceUID)) for ds in slices}
            (matching if matches else others).add(uid)
        assert system.ai_node.wait_idle(len(matching), timeout=60)
        assert set(system.ai_node.processed) == matching
        # base destinations got every instance exactly once
        for archive in (system.pacs, system.vna):
            assert archive.store.sop_instance_set() == pushed_sops
            assert all(archive.store.instance_count(s) == 1 for s in pushed_sops)
    finally:
        system.shutdown()
    ok(5, "router selectivity")


def test_06_froc_matches_bruteforce_oracles():
    rng = np.random.default_rng(8006)
    for _ in range(200):
        dets, lesions = random_instance(rng)
        result = match_detections(dets, lesions)
        assert (result.pairs, result.fp_indices, result.fn_indices) == naive_match(dets, lesions)
        if lesions:
            curve = froc([("P0", dets, lesions)])
            got = [(p.threshold, p.sensitivity, p.afp) for p in curve.points]
            assert got == pytest.approx(naive_froc([("P0", dets, lesions)]))
    for _ in range(1000):
        while True:
            dets, lesions = random_instance(rng, max_dets=12, max_lesions=6)
            if lesions:
                break
        curve = froc([("P0", dets, lesions)])
        sens = [p.sensitivity for p in curve.points]
        afp = [p.afp for p in curve.points]
        assert sens == sorted(sens) and afp == sorted(afp)
    ok(6, "FROC oracle equivalence")


def median_afp90_by_increment(result):
    out = {}
    for seed, increment, _a80, _a85, a90 in result.summary_rows:
        if seed == "median":
            out[increment] = a90
    return out


def test_07_feedback_trend(tmp_path):
    cfg = default_config("feedback", tmp_path / "run")
    cfg.quiescence_s = 0.3
    start = time.monotonic()
    result = run_feedback_scenario(cfg, out_dir=tmp_path / "report")
    elapsed = time.monotonic() - start
    assert elapsed < 600.0, f"scenario took {elapsed:.0f}s"

    medians = median_afp90_by_increment(result)
    increments = sorted(medians)
    assert len(increments) == 3
    values = [medians[i] for i in increments]
    assert all(v is not None for v in values)
    for earlier, later in zip(values, values[1:]):
        assert later <= earlier + 1e-9, f"median AFP@0.90 rose: {values}"
    reduction = (values[0] - values[-1]) / values[0]
    assert reduction >= 0.15, f"only {reduction:.0%} total reduction: {values}"
    print(f"\nfeedback trend medians AFP@0.90: "
          f"{' -> '.join(f'{v:.3f}' for v in values)} "
          f"({reduction:.0%} reduction, {elapsed:.0f}s)")
    ok(7, "feedback trend")


def test_08_annotation_replay_and_invariants(tmp_path):
    rng = np.random.default_rng(8008)
    for trial in range(25):  # 25 stores x 20 mutations = 500 sequences
        root = tmp_path / f"t{trial}"
        store = AnnotationStore(root)
        uid = f"8.8.{trial}"
        for _ in range(20):
            _random_mutation(rng, store, uid)
        want = snapshot_state(store, uid)
        assert snapshot_state(AnnotationStore(root), uid) == want
        snap = root / uid / "snapshot.json"
        if snap.exists():
            snap.unlink()
        assert snapshot_state(AnnotationStore(root), uid) == want

        before = snapshot_state(store, uid)
        with pytest.raises(VersionConflict):
            store.adjudicate(uid, before[0] + 17, [{"type": "markReviewed"}])
        assert snapshot_state(store, uid) == before

        _, _, anns = store.get_annotations(uid, include_rejected=True)
        labels = store.labeled_lesions(uid)
        keep = [a for a in anns if a.status in ("confirmed", "added")]
        assert len(labels) == len(keep)
        for a in keep:
            assert (a.center, a.radius_vox) in labels
    ok(8, "annotation replay")


def test_09_deterministic_reports(tmp_path):
    def one_run(name):
        cfg = default_config("feedback", tmp_path / name)
        cfg.quiescence_s = 0.3
        cfg.scenario.dims = (16, 24, 24)
        cfg.scenario.increments = [(12, 10), (20, 16)]
        cfg.scenario.seeds = [1]
        out = tmp_path / f"{name}-report"
        run_feedback_scenario(cfg, out_dir=out)
        return {f.name: f.read_bytes() for f in sorted(out.glob("*.csv"))}

    first = one_run("a")
    second = one_run("b")
    assert set(first) == set(second) == {"froc_detail.csv", "afp_summary.csv"}
    assert first == second
    ok(9, "deterministic reports")


def test_10_primary_system_stands_alone():
    src = Path(__file__).resolve().parents[1] / "src" / "radworkflow"
    for f in src.rglob("*.py"):
        assert "frontend" not in f.read_text(), f"{f} depends on the viewer"
    ok(10, "viewer decoupled (its own checks run under frontend/)")
