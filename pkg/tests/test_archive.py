import json

import numpy as np
import pytest
import requests

from radworkflow.archive import ArchiveNode, ArchiveStore, NotFound
from radworkflow.dicom import (
    Dataset,
    Detection,
    MissingMandatoryTag,
    SeriesGeometry,
    SeriesRef,
    T,
    UidFactory,
    build_gsps,
    build_mask,
    serialize_part10,
)
from radworkflow.transfer import Endpoint, StoreStatus, associate
from tests.conftest import make_series, make_slice


def store_series(store: ArchiveStore, slices):
    for ds in slices:
        assert store.store_instance(ds) == StoreStatus.SUCCESS


def series_ref(series_uid="1.2.3.4", study_uid="1.2.3", slices=8):
    geo = SeriesGeometry(
        rows=8, columns=8, slices=slices, pixel_spacing=(1.0, 1.0), slice_thickness=1.0,
        instance_order=tuple(f"{series_uid}.{i + 1}" for i in range(slices)),
    )
    return SeriesRef(patient_id="P0001", study_uid=study_uid, series_uid=series_uid, geometry=geo)


def test_store_duplicate_and_missing_tags(tmp_path):
    store = ArchiveStore(tmp_path, "pacs")
    ds = make_slice("1.1.1")
    assert store.store_instance(ds) == StoreStatus.SUCCESS
    assert store.store_instance(ds) == StoreStatus.DUPLICATE
    assert store.instance_count("1.1.1") == 1
    incomplete = Dataset()
    incomplete.set(T.SOPInstanceUID, "UI", "1.1.2")
    with pytest.raises(MissingMandatoryTag):
        store.store_instance(incomplete)
    assert store.handle_store(incomplete, b"") == int(StoreStatus.MALFORMED)


def test_query_filters(tmp_path):
    store = ArchiveStore(tmp_path, "pacs")
    for k in range(3):
        store_series(store, make_series(series_uid=f"1.2.3.{k}", study_uid="1.2.3",
                                        patient_id="P0001", n_slices=2))
    store_series(store, make_series(series_uid="9.9.9.1", study_uid="9.9.9",
                                    patient_id="P0002", n_slices=2, modality="CT"))
    assert len(store.query(study_uid="1.2.3")) == 3
    assert len(store.query(patient_id="P0002")) == 1
    assert len(store.query(modality="MR")) == 3
    assert store.query(series_uid="9.9.9.1")[0]["instanceCount"] == 2
    later = store.query(received_after=6)
    assert {s["seriesUid"] for s in later} == {"9.9.9.1"}


def test_retrieve_order_and_not_found(tmp_path):
    store = ArchiveStore(tmp_path, "pacs")
    slices = make_series(n_slices=8)
    for ds in reversed(slices):  # arrive out of order
        store.store_instance(ds)
    got = store.retrieve_series("1.2.3.4")
    assert [int(d.value(T.InstanceNumber)) for d in got] == list(range(1, 9))
    with pytest.raises(NotFound):
        store.retrieve_series("no.such.series")


def test_gsps_flags_worklist_ranking(tmp_path):
    store = ArchiveStore(tmp_path, "pacs")
    uids = UidFactory(5)

    def study(n_findings: int, study_uid: str, series_uid: str):
        store_series(store, make_series(series_uid=series_uid, study_uid=study_uid,
                                        patient_id=f"P{study_uid[-1]}", n_slices=2))
        dets = [
            Detection(center=(1.0, 2.0 + i, 2.0), radius_vox=1.0, confidence=0.9 - i * 0.1)
            for i in range(n_findings)
        ]
        gsps = build_gsps(dets, series_ref(series_uid=series_uid, study_uid=study_uid, slices=2), uids)
        store.store_instance(gsps)

    study(5, "1.2.5", "1.2.5.1")
    study(0, "1.2.6", "1.2.6.1")
    study(2, "1.2.7", "1.2.7.1")
    store_series(store, make_series(series_uid="1.2.8.1", study_uid="1.2.8",
                                    patient_id="P8", n_slices=2))  # never analyzed

    wl = store.worklist()
    assert [e.study_uid for e in wl] == ["1.2.5", "1.2.7", "1.2.6", "1.2.8"]
    assert [e.finding_count for e in wl] == [5, 2, 0, 0]
    assert wl[0].flag == "ai_findings"
    assert wl[3].flag == "none"


def test_mask_series_accumulates_flag_count(tmp_path):
    store = ArchiveStore(tmp_path, "pacs")
    store_series(store, make_series(n_slices=8))
    dets = [
        Detection(center=(2.0, 3.0, 3.0), radius_vox=1.0, confidence=0.9),
        Detection(center=(6.0, 5.0, 5.0), radius_vox=1.0, confidence=0.5),
    ]
    for ds in build_mask(dets, series_ref(), UidFactory(3)):
        store.store_instance(ds)
    wl = store.worklist()
    assert wl[0].finding_count == 2


def test_restart_rescan_durability(tmp_path):
    store = ArchiveStore(tmp_path, "pacs")
    store_series(store, make_series(series_uid="1.4.1", n_slices=4))
    store_series(store, make_series(series_uid="1.4.2", study_uid="1.9", n_slices=4))
    before_sops = store.sop_instance_set()
    before_query = store.query()
    reopened = ArchiveStore(tmp_path, "pacs")
    assert reopened.sop_instance_set() == before_sops
    assert reopened.query() == before_query
    # arrival order survives: list_new_since ordering identical
    assert reopened.list_new_since(0) == store.list_new_since(0)
    # stores after restart continue the sequence
    assert reopened.store_instance(make_slice("1.4.9", series_uid="1.4.1")) == StoreStatus.SUCCESS
    assert reopened.query(series_uid="1.4.1")[0]["instanceCount"] == 5


def test_list_new_since_excludes_derived_objects(tmp_path):
    store = ArchiveStore(tmp_path, "pacs")
    store_series(store, make_series(series_uid="1.5.1", n_slices=2))
    uids = UidFactory(9)
    gsps = build_gsps([], series_ref(series_uid="1.5.1", slices=2), uids)
    store.store_instance(gsps)
    for ds in build_mask([], series_ref(series_uid="1.5.1", slices=2), uids):
        store.store_instance(ds)
    assert store.list_new_since(0) == ["1.5.1"]
    assert store.list_new_since(2) == []


def test_http_api(tmp_path):
    node = ArchiveNode(
        ArchiveStore(tmp_path, "pacs"), Endpoint(host="127.0.0.1", port=0, called_ae="PACS")
    ).start()
    try:
        vox = np.arange(4 * 8 * 8, dtype=np.uint16).reshape(4, 8, 8)
        slices = make_series(n_slices=4, voxels=vox)
        assoc = associate(node.endpoint, "MODALITY")
        for ds in slices:
            blob = serialize_part10(ds, str(ds.value(T.SOPClassUID)), str(ds.value(T.SOPInstanceUID)))
            assert assoc.store(blob).status == StoreStatus.SUCCESS
        assoc.release()

        base = node.http_url
        series = requests.get(f"{base}/series", params={"study": "1.2.3"}).json()
        assert len(series) == 1 and series[0]["instanceCount"] == 4
        one = requests.get(f"{base}/series/1.2.3.4").json()
        assert one["patientId"] == "P0001"
        rsp = requests.get(f"{base}/series/1.2.3.4/instances/2/pixels")
        meta = json.loads(rsp.headers["X-Image-Meta"])
        assert meta == {"rows": 8, "cols": 8, "slices": 4}
        assert np.array_equal(np.frombuffer(rsp.content, dtype="<u2").reshape(8, 8), vox[2])
        assert requests.get(f"{base}/series/nope").status_code == 404
        assert requests.get(f"{base}/series/1.2.3.4/instances/9/pixels").status_code == 404
        wl = requests.get(f"{base}/worklist").json()
        assert wl[0]["studyUid"] == "1.2.3"
    finally:
        node.stop()


def test_vna_has_no_worklist(tmp_path):
    node = ArchiveNode(
        ArchiveStore(tmp_path, "vna"), Endpoint(host="127.0.0.1", port=0, called_ae="VNA")
    ).start()
    try:
        assert requests.get(f"{node.http_url}/worklist").status_code == 404
    finally:
        node.stop()


def test_unknown_role_rejected(tmp_path):
    with pytest.raises(ValueError):
        ArchiveStore(tmp_path, "cloud")
