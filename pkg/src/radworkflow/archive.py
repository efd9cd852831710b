"""Storage node: plays PACS, Research-PACS or VNA by configuration.

Blob layout is one file per SOP instance under a series-UID directory,
named ``{seq:010d}_{sop_uid}.dcm`` so the arrival order survives restarts;
the index is rebuilt by a directory scan on startup.
"""
from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .dicom import (
    AI_MASK_DESCRIPTION,
    Dataset,
    GSPS_STORAGE,
    MANDATORY_IDENTIFIER_TAGS,
    MR_IMAGE_STORAGE,
    MissingMandatoryTag,
    T,
    parse_part10,
    serialize_part10,
)
from .httpd import HttpError, JsonHttpServer, Response
from .transfer import Endpoint, RdwServer, StoreStatus

ROLES = ("pacs", "research_pacs", "vna")


class NotFound(KeyError):
    pass


class StorageFailure(Exception):
    pass


@dataclass
class ArchiveRecord:
    sop_instance_uid: str
    patient_id: str
    study_uid: str
    series_uid: str
    series_description: str
    modality: str
    sop_class_uid: str
    instance_number: int
    received_at: int
    path: Path


@dataclass
class WorklistEntry:
    study_uid: str
    patient_id: str
    flag: str  # "none" | "ai_findings"
    finding_count: int


class ArchiveStore:
    def __init__(self, root: Path, role: str = "pacs"):
        if role not in ROLES:
            raise ValueError(f"unknown archive role {role!r}")
        self.root = Path(root)
        self.role = role
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._records: dict[str, ArchiveRecord] = {}
        self._series: dict[str, list[str]] = {}
        # study -> (finding_count, received_at, source series of the AI result)
        self._flags: dict[str, tuple[int, int, str]] = {}
        self._seq = 0
        self._rescan()

    def _rescan(self) -> None:
        files = []
        for series_dir in self.root.iterdir():
            if not series_dir.is_dir():
                continue
            for f in series_dir.glob("*.dcm"):
                seq = int(f.name.split("_", 1)[0])
                files.append((seq, f))
        for seq, f in sorted(files):
            ds = parse_part10(f.read_bytes())
            self._index(ds, seq, f)
            self._seq = max(self._seq, seq)

    def _index(self, ds: Dataset, seq: int, path: Path) -> None:
        sop_uid = str(ds.value(T.SOPInstanceUID))
        rec = ArchiveRecord(
            sop_instance_uid=sop_uid,
            patient_id=str(ds.value(T.PatientID, "")),
            study_uid=str(ds.value(T.StudyInstanceUID, "")),
            series_uid=str(ds.value(T.SeriesInstanceUID, "")),
            series_description=str(ds.value(T.SeriesDescription, "")),
            modality=str(ds.value(T.Modality, "")),
            sop_class_uid=str(ds.value(T.SOPClassUID, "")),
            instance_number=int(ds.value(T.InstanceNumber, 0) or 0),
            received_at=seq,
            path=path,
        )
        self._records[sop_uid] = rec
        self._series.setdefault(rec.series_uid, []).append(sop_uid)
        self._maybe_flag(ds, rec)

    def _maybe_flag(self, ds: Dataset, rec: ArchiveRecord) -> None:
        """Flag derives from the latest AI result object per study.

        GSPS: finding count = graphic annotation items. Mask: slices arrive
        one by one, so the count accumulates as the max label within the
        same mask series.
        """
        if rec.sop_class_uid == GSPS_STORAGE:
            items = ds.value(T.GraphicAnnotationSequence) or []
            self._flags[rec.study_uid] = (len(items), rec.received_at, rec.series_uid)
        elif rec.series_description == AI_MASK_DESCRIPTION:
            pd = ds.value(T.PixelData) or b""
            labels = np.frombuffer(pd, dtype="<u2")
            count = int(labels.max()) if labels.size else 0
            prev = self._flags.get(rec.study_uid)
            if prev is not None and prev[2] == rec.series_uid:
                count = max(count, prev[0])
            self._flags[rec.study_uid] = (count, rec.received_at, rec.series_uid)

    def store_instance(self, ds: Dataset, raw: Optional[bytes] = None) -> StoreStatus:
        for tag in MANDATORY_IDENTIFIER_TAGS:
            if tag not in ds:
                raise MissingMandatoryTag(str(tag))
        sop_uid = str(ds.value(T.SOPInstanceUID))
        if raw is None:
            raw = serialize_part10(ds, str(ds.value(T.SOPClassUID)), sop_uid)
        with self._lock:
            if sop_uid in self._records:
                return StoreStatus.DUPLICATE
            self._seq += 1
            seq = self._seq
            series_uid = str(ds.value(T.SeriesInstanceUID))
            series_dir = self.root / series_uid
            series_dir.mkdir(parents=True, exist_ok=True)
            final = series_dir / f"{seq:010d}_{sop_uid}.dcm"
            tmp = series_dir / f".tmp_{sop_uid}"
            try:
                tmp.write_bytes(raw)
                os.replace(tmp, final)
            except OSError as exc:
                raise StorageFailure(str(exc)) from exc
            self._index(ds, seq, final)
            return StoreStatus.SUCCESS

    def handle_store(self, ds: Dataset, raw: bytes) -> int:
        try:
            return int(self.store_instance(ds, raw))
        except MissingMandatoryTag:
            return int(StoreStatus.MALFORMED)
        except StorageFailure:
            return int(StoreStatus.STORAGE_ERROR)

    def _series_summary(self, series_uid: str) -> dict:
        uids = self._series[series_uid]
        recs = [self._records[u] for u in uids]
        first = min(recs, key=lambda r: r.received_at)
        return {
            "seriesUid": series_uid,
            "studyUid": first.study_uid,
            "patientId": first.patient_id,
            "seriesDescription": first.series_description,
            "modality": first.modality,
            "instanceCount": len(recs),
            "receivedAt": first.received_at,
        }

    def query(
        self,
        patient_id: Optional[str] = None,
        study_uid: Optional[str] = None,
        series_uid: Optional[str] = None,
        modality: Optional[str] = None,
        received_after: Optional[int] = None,
    ) -> list[dict]:
        with self._lock:
            out = []
            for uid in self._series:
                s = self._series_summary(uid)
                if patient_id is not None and s["patientId"] != patient_id:
                    continue
                if study_uid is not None and s["studyUid"] != study_uid:
                    continue
                if series_uid is not None and s["seriesUid"] != series_uid:
                    continue
                if modality is not None and s["modality"] != modality:
                    continue
                if received_after is not None and s["receivedAt"] <= received_after:
                    continue
                out.append(s)
            out.sort(key=lambda s: s["receivedAt"])
            return out

    def retrieve_series(self, series_uid: str) -> list[Dataset]:
        with self._lock:
            if series_uid not in self._series:
                raise NotFound(series_uid)
            recs = [self._records[u] for u in self._series[series_uid]]
        recs.sort(key=lambda r: r.instance_number)
        return [parse_part10(r.path.read_bytes()) for r in recs]

    def list_new_since(self, timestamp: int) -> list[str]:
        """Image series whose first instance arrived after the timestamp,
        oldest first; presentation states and derived masks are excluded."""
        with self._lock:
            out = []
            for uid in self._series:
                recs = [self._records[u] for u in self._series[uid]]
                first = min(recs, key=lambda r: r.received_at)
                if first.sop_class_uid != MR_IMAGE_STORAGE:
                    continue
                if first.received_at > timestamp:
                    out.append((first.received_at, uid))
            return [uid for _, uid in sorted(out)]

    def worklist(self) -> list[WorklistEntry]:
        with self._lock:
            studies: dict[str, tuple[str, int]] = {}
            for rec in self._records.values():
                if rec.study_uid not in studies or rec.received_at < studies[rec.study_uid][1]:
                    studies[rec.study_uid] = (rec.patient_id, rec.received_at)
            entries = []
            for study_uid, (patient_id, first_at) in studies.items():
                count = self._flags[study_uid][0] if study_uid in self._flags else 0
                flagged = study_uid in self._flags and count > 0
                entries.append(
                    (
                        (0 if flagged else 1, -count, first_at),
                        WorklistEntry(
                            study_uid=study_uid,
                            patient_id=patient_id,
                            flag="ai_findings" if study_uid in self._flags else "none",
                            finding_count=count,
                        ),
                    )
                )
            entries.sort(key=lambda pair: pair[0])
            return [e for _, e in entries]

    def sop_instance_set(self) -> frozenset[str]:
        with self._lock:
            return frozenset(self._records)

    def instance_count(self, sop_uid: str) -> int:
        with self._lock:
            return 1 if sop_uid in self._records else 0

    def read_pixels(self, series_uid: str, index: int) -> tuple[bytes, dict]:
        """Raw little-endian u16 pixel block of one slice plus a geometry header."""
        series = self.retrieve_series(series_uid)
        if not (0 <= index < len(series)):
            raise NotFound(f"{series_uid}[{index}]")
        ds = series[index]
        pd = ds.value(T.PixelData)
        meta = {
            "rows": int(ds.value(T.Rows, 0) or 0),
            "cols": int(ds.value(T.Columns, 0) or 0),
            "slices": len(series),
        }
        return bytes(pd or b""), meta


class ArchiveNode:
    """One archive: RDW1 inbound for stores plus the HTTP/JSON read API."""

    def __init__(self, store: ArchiveStore, listen: Endpoint, http_host: str = "127.0.0.1", http_port: int = 0):
        self.store = store
        self._rdw = RdwServer(listen, store.handle_store)
        self.http = JsonHttpServer(http_host, http_port)
        self._register_routes()

    @property
    def endpoint(self) -> Endpoint:
        return self._rdw.endpoint

    @property
    def http_url(self) -> str:
        return self.http.base_url

    def _register_routes(self) -> None:
        store = self.store

        def series_list(groups, query, body):
            received_after = query.get("received_after")
            return Response.json(
                store.query(
                    patient_id=query.get("patient"),
                    study_uid=query.get("study"),
                    modality=query.get("modality"),
                    received_after=int(received_after) if received_after else None,
                )
            )

        def series_summary(groups, query, body):
            (uid,) = groups
            found = store.query(series_uid=uid)
            if not found:
                raise HttpError(404, "series not found")
            return Response.json(found[0])

        def pixels(groups, query, body):
            uid, n = groups
            try:
                raw, meta = store.read_pixels(uid, int(n))
            except NotFound as exc:
                raise HttpError(404, str(exc)) from exc
            return Response(
                raw,
                content_type="application/octet-stream",
                headers={"X-Image-Meta": json.dumps(meta)},
            )

        def worklist(groups, query, body):
            if store.role == "vna":
                raise HttpError(404, "VNA exposes no worklist")
            return Response.json(
                [
                    {
                        "studyUid": e.study_uid,
                        "patientId": e.patient_id,
                        "flag": e.flag,
                        "findingCount": e.finding_count,
                    }
                    for e in store.worklist()
                ]
            )

        self.http.route("GET", r"/series", series_list)
        self.http.route("GET", r"/series/([^/]+)", series_summary)
        self.http.route("GET", r"/series/([^/]+)/instances/(\d+)/pixels", pixels)
        self.http.route("GET", r"/worklist", worklist)

    def start(self) -> "ArchiveNode":
        self._rdw.start()
        self.http.start()
        return self

    def stop(self) -> None:
        self._rdw.stop()
        self.http.stop()
