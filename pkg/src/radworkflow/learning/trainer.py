"""Training server: periodically pulls new series from the archive and their
adjudicated annotations from the annotation store, then re-fits and
publishes detector parameters."""
from __future__ import annotations

import json
import threading
from typing import Optional, Sequence

import numpy as np
import requests

from ..dicom import SeriesGeometry, Volume
from .registry import ModelRegistry, ModelVersion
from .training import DEFAULT_GRID, DetectorCache, LabeledVolume, fit


class DependencyUnreachable(Exception):
    pass


class TrainingServer:
    def __init__(
        self,
        archive_url: str,
        annotation_url: str,
        registry: ModelRegistry,
        min_new_series: int = 10,
        grid=DEFAULT_GRID,
    ):
        self.archive_url = archive_url.rstrip("/")
        self.annotation_url = annotation_url.rstrip("/")
        self.registry = registry
        self.min_new_series = min_new_series
        self.grid = grid
        self.cache = DetectorCache()
        self._session = requests.Session()
        self._job_lock = threading.Lock()
        self._last_pulled = 0
        self._labeled: dict[str, LabeledVolume] = {}
        self._new_since_fit = 0

    @property
    def labeled_volumes(self) -> list[LabeledVolume]:
        return [self._labeled[k] for k in sorted(self._labeled)]

    def _get(self, url: str, **kw) -> requests.Response:
        try:
            rsp = self._session.get(url, timeout=30, **kw)
            rsp.raise_for_status()
            return rsp
        except requests.RequestException as exc:
            raise DependencyUnreachable(f"GET {url}: {exc}") from exc

    def fetch_volume(self, series_uid: str) -> Volume:
        """Rebuild a volume slice by slice through the archive pixel API."""
        rsp = self._get(f"{self.archive_url}/series/{series_uid}/instances/0/pixels")
        meta = json.loads(rsp.headers["X-Image-Meta"])
        rows, cols, slices = meta["rows"], meta["cols"], meta["slices"]
        planes = [np.frombuffer(rsp.content, dtype="<u2").reshape(rows, cols)]
        for n in range(1, slices):
            r = self._get(f"{self.archive_url}/series/{series_uid}/instances/{n}/pixels")
            planes.append(np.frombuffer(r.content, dtype="<u2").reshape(rows, cols))
        geometry = SeriesGeometry(
            rows=rows,
            columns=cols,
            slices=slices,
            pixel_spacing=(1.0, 1.0),
            slice_thickness=1.0,
            instance_order=tuple(f"{series_uid}#{i}" for i in range(slices)),
        )
        return Volume(voxels=np.stack(planes), geometry=geometry)

    def fetch_labels(self, series_uid: str) -> tuple[bool, list]:
        """(reviewed-or-adjudicated, labels) for one series; labels are the
        confirmed and human-added annotations."""
        rsp = self._get(
            f"{self.annotation_url}/series/{series_uid}/annotations",
            params={"includeRejected": "true"},
        )
        obj = rsp.json()
        labels = []
        adjudicated = bool(obj.get("reviewed"))
        for ann in obj["annotations"]:
            if ann["status"] in ("confirmed", "rejected", "added"):
                adjudicated = True
            if ann["status"] in ("confirmed", "added"):
                c = ann["center"]
                labels.append(
                    ((c["slice"], c["row"], c["col"]), float(ann["radiusVox"]))
                )
        return adjudicated, labels

    def pull_new_labeled_series(self) -> int:
        """Gather newly arrived, adjudicated series; returns how many were added."""
        summaries = self._get(
            f"{self.archive_url}/series",
            params={"modality": "MR", "received_after": str(self._last_pulled)},
        ).json()
        added = 0
        for s in summaries:
            uid = s["seriesUid"]
            self._last_pulled = max(self._last_pulled, s["receivedAt"])
            if uid in self._labeled:
                continue
            adjudicated, labels = self.fetch_labels(uid)
            if not adjudicated:
                continue  # unadjudicated series never train the model
            vol = self.fetch_volume(uid)
            self._labeled[uid] = LabeledVolume(
                series_uid=uid,
                patient_id=s["patientId"],
                volume=vol,
                lesions=labels,
            )
            added += 1
        return added

    def retrain_cycle(self, force: bool = False) -> Optional[ModelVersion]:
        """One periodic cycle; returns the published model or None (no-op).
        Concurrent triggers coalesce into a single run."""
        if not self._job_lock.acquire(blocking=False):
            return None
        try:
            self._new_since_fit += self.pull_new_labeled_series()
            if not self._labeled:
                return None
            if not force and self._new_since_fit < self.min_new_series:
                return None
            params = fit(self.labeled_volumes, self.grid, self.cache)
            self._new_since_fit = 0
            return self.registry.publish(params, trained_on=len(self._labeled))
        finally:
            self._job_lock.release()
