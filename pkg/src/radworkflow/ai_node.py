"""AI inference node: buffers routed instances per series, runs the current
detector once a series goes quiescent, and publishes GSPS (and optionally
mask) results to the archive dictated by the maturity mode."""
from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import requests

from .detector import DetectionSet, ModelParams, infer
from .dicom import (
    Dataset,
    SeriesRef,
    T,
    UidFactory,
    assemble_volume,
    build_gsps,
    build_mask,
    serialize_part10,
)
from .transfer import Endpoint, RdwServer, StoreStatus, TransferError, associate

MODES = ("research", "production", "feedback")


class RegistryUnreachable(Exception):
    pass


@dataclass
class _SeriesBuffer:
    instances: list[tuple[Dataset, bytes]] = field(default_factory=list)
    last_arrival: float = 0.0


def publish_role_for_mode(mode: str) -> str:
    """Research results stay out of the clinical archive."""
    return "research_pacs" if mode == "research" else "pacs"


class AiNode:
    def __init__(
        self,
        listen: Endpoint,
        mode: str,
        destinations: dict[str, Endpoint],
        registry_url: Optional[str] = None,
        annotation_url: Optional[str] = None,
        bootstrap_params: Optional[ModelParams] = None,
        bootstrap_version: int = 0,
        emit_mask: bool = False,
        quiescence_s: float = 2.0,
        min_slices: int = 8,
        uid_seed: int = 99,
        workers: int = 2,
    ):
        if mode not in MODES:
            raise ValueError(f"unknown maturity mode {mode!r}")
        self.mode = mode
        self.destinations = destinations
        self.registry_url = registry_url
        self.annotation_url = annotation_url
        self.emit_mask = emit_mask
        self.quiescence_s = quiescence_s
        self.min_slices = min_slices

        self._model_lock = threading.Lock()
        self._params = bootstrap_params or ModelParams()
        self._model_version = bootstrap_version

        self._uid_factory = UidFactory(uid_seed)
        self._uid_lock = threading.Lock()

        self._buffers: dict[str, _SeriesBuffer] = {}
        self._buffer_lock = threading.Lock()
        self._inflight: set[str] = set()
        self._pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="ai-infer")
        self._server = RdwServer(listen, self._ingest)
        self._completer = threading.Thread(target=self._completion_loop, daemon=True)
        self._stop = threading.Event()

        self.processed: dict[str, DetectionSet] = {}
        self.errors: list[str] = []

    @property
    def endpoint(self) -> Endpoint:
        return self._server.endpoint

    @property
    def model_version(self) -> int:
        with self._model_lock:
            return self._model_version

    @property
    def params(self) -> ModelParams:
        with self._model_lock:
            return self._params

    def start(self) -> "AiNode":
        self._server.start()
        self._completer.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        self._server.stop()
        self._pool.shutdown(wait=True)

    # -- ingest and series completion ------------------------------------

    def _ingest(self, ds: Dataset, raw: bytes) -> int:
        series_uid = str(ds.value(T.SeriesInstanceUID, ""))
        if not series_uid:
            return int(StoreStatus.MALFORMED)
        with self._buffer_lock:
            buf = self._buffers.setdefault(series_uid, _SeriesBuffer())
            buf.instances.append((ds, raw))
            buf.last_arrival = time.monotonic()
        return int(StoreStatus.SUCCESS)

    def _completion_loop(self) -> None:
        poll = max(self.quiescence_s / 4.0, 0.02)
        while not self._stop.wait(poll):
            now = time.monotonic()
            ready: list[tuple[str, list[tuple[Dataset, bytes]]]] = []
            with self._buffer_lock:
                for uid, buf in list(self._buffers.items()):
                    if now - buf.last_arrival < self.quiescence_s:
                        continue
                    if len(buf.instances) < self.min_slices:
                        continue  # leave buffered; more slices may still come
                    if uid in self._inflight:
                        continue
                    self._inflight.add(uid)
                    ready.append((uid, buf.instances))
                    del self._buffers[uid]
            for uid, instances in ready:
                self._pool.submit(self._run_job, uid, instances)

    def _run_job(self, series_uid: str, instances: list[tuple[Dataset, bytes]]) -> None:
        try:
            with self._model_lock:  # model swap is atomic w.r.t. job start
                params, version = self._params, self._model_version
            datasets = [ds for ds, _ in instances]
            vol = assemble_volume(datasets)
            dets = infer(vol, params, series_uid=series_uid, model_version=version)
            first = datasets[0]
            ref = SeriesRef(
                patient_id=str(first.value(T.PatientID, "")),
                study_uid=str(first.value(T.StudyInstanceUID, "")),
                series_uid=series_uid,
                geometry=vol.geometry,
            )
            self.publish_results(dets, ref)
            self.processed[series_uid] = dets
        except Exception as exc:  # noqa: BLE001
            self.errors.append(f"{series_uid}: {exc!r}")
        finally:
            with self._buffer_lock:
                self._inflight.discard(series_uid)

    # -- publication ------------------------------------------------------

    def publish_results(self, dets: DetectionSet, ref: SeriesRef) -> None:
        dest = self.destinations[publish_role_for_mode(self.mode)]
        with self._uid_lock:
            gsps = build_gsps(dets.detections, ref, self._uid_factory)
            mask = build_mask(dets.detections, ref, self._uid_factory) if self.emit_mask else []
        objects = [gsps] + mask
        payloads = [
            serialize_part10(
                ds,
                str(ds.value(T.SOPClassUID)),
                str(ds.value(T.SOPInstanceUID)),
                require_identifiers=True,
            )
            for ds in objects
        ]
        self._store_all(dest, payloads)
        if self.mode == "feedback" and self.annotation_url:
            self._post_proposals(dets)

    def _store_all(self, dest: Endpoint, payloads: list[bytes]) -> None:
        for attempt in range(2):  # job retried once on delivery failure
            try:
                assoc = associate(dest, "AINODE", timeout=5.0)
                try:
                    for p in payloads:
                        assoc.store(p)
                finally:
                    try:
                        assoc.release()
                    except TransferError:
                        pass
                return
            except TransferError as exc:
                if attempt == 1:
                    raise
                time.sleep(0.1)

    def _post_proposals(self, dets: DetectionSet) -> None:
        body = {
            "modelVersion": dets.model_version,
            "detections": [
                {
                    "center": {"slice": d.center[0], "row": d.center[1], "col": d.center[2]},
                    "radiusVox": d.radius_vox,
                    "confidence": d.confidence,
                }
                for d in dets.detections
            ],
        }
        url = f"{self.annotation_url}/series/{dets.series_uid}/annotations:proposals"
        requests.post(url, json=body, timeout=10).raise_for_status()

    # -- model management --------------------------------------------------

    def reload_model(self) -> int:
        """Poll the registry; newer versions apply to subsequent jobs."""
        if not self.registry_url:
            return self.model_version
        try:
            rsp = requests.get(f"{self.registry_url}/models/current", timeout=5)
            rsp.raise_for_status()
            obj = rsp.json()
        except requests.RequestException as exc:
            raise RegistryUnreachable(str(exc)) from exc
        version = int(obj["version"])
        with self._model_lock:
            if version > self._model_version:
                self._model_version = version
                self._params = ModelParams.from_json(obj)
        return self.model_version

    def try_reload_model(self) -> int:
        """reload_model, degrading to the current version when unreachable."""
        try:
            return self.reload_model()
        except RegistryUnreachable:
            return self.model_version

    # -- test/orchestration helpers ---------------------------------------

    def pending_series(self) -> int:
        with self._buffer_lock:
            return len(self._buffers) + len(self._inflight)

    def wait_idle(self, expected_processed: int, timeout: float = 60.0) -> bool:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if len(self.processed) >= expected_processed and self.pending_series() == 0:
                return True
            time.sleep(0.05)
        return False
