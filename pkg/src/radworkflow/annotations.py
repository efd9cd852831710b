"""Versioned lesion-annotation store with adjudication semantics.

Per series: a monotone version counter, an append-only audit log (JSONL
file) and a periodic snapshot. Replaying the audit log from seq 0
reconstructs the current state exactly.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .httpd import HttpError, JsonHttpServer, Response

ACTIVE_STATUSES = ("proposed", "confirmed", "added")


class VersionConflict(Exception):
    def __init__(self, expected: int, current: int):
        super().__init__(f"expected version {expected}, store at {current}")
        self.expected = expected
        self.current = current


class UnknownAnnotationId(KeyError):
    pass


class IllegalTransition(ValueError):
    pass


@dataclass(frozen=True)
class Annotation:
    id: str
    series_uid: str
    center: tuple[float, float, float]  # (slice, row, col), voxel indices
    radius_vox: float
    status: str  # proposed | confirmed | rejected | added
    provenance: dict  # {"kind": "ai", "modelVersion": n} | {"kind": "human", "userId": u}
    confidence: Optional[float] = None
    created_at: int = 0
    updated_at: int = 0

    def to_json(self) -> dict:
        obj = {
            "id": self.id,
            "center": {"slice": self.center[0], "row": self.center[1], "col": self.center[2]},
            "radiusVox": self.radius_vox,
            "status": self.status,
            "provenance": self.provenance,
        }
        if self.confidence is not None:
            obj["confidence"] = self.confidence
        return obj

    @classmethod
    def from_json(cls, series_uid: str, obj: dict) -> "Annotation":
        c = obj["center"]
        return cls(
            id=obj["id"],
            series_uid=series_uid,
            center=(float(c["slice"]), float(c["row"]), float(c["col"])),
            radius_vox=float(obj["radiusVox"]),
            status=obj["status"],
            provenance=obj["provenance"],
            confidence=obj.get("confidence"),
        )


@dataclass
class _SeriesState:
    version: int = 0
    seq: int = 0
    reviewed: bool = False
    annotations: dict[str, Annotation] = field(default_factory=dict)
    next_id: int = 1


class AnnotationStore:
    SNAPSHOT_EVERY = 20

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._series: dict[str, _SeriesState] = {}
        self._load()

    # -- persistence -------------------------------------------------------

    def _series_dir(self, series_uid: str) -> Path:
        return self.root / series_uid

    def _load(self) -> None:
        for d in sorted(self.root.iterdir()) if self.root.exists() else []:
            if not d.is_dir():
                continue
            state = _SeriesState()
            snap_path = d / "snapshot.json"
            if snap_path.exists():
                snap = json.loads(snap_path.read_text())
                state.version = snap["version"]
                state.seq = snap["seq"]
                state.reviewed = snap["reviewed"]
                state.next_id = snap["nextId"]
                state.annotations = {
                    a["id"]: Annotation.from_json(d.name, a) for a in snap["annotations"]
                }
            log_path = d / "audit.jsonl"
            if log_path.exists():
                for line in log_path.read_text().splitlines():
                    ev = json.loads(line)
                    if ev["seq"] > state.seq:
                        self._apply_event(d.name, state, ev)
            self._series[d.name] = state

    def _append_events(self, series_uid: str, events: list[dict], state: _SeriesState) -> None:
        d = self._series_dir(series_uid)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "audit.jsonl", "a") as f:
            for ev in events:
                f.write(json.dumps(ev) + "\n")
        if state.seq % self.SNAPSHOT_EVERY == 0:
            snap = {
                "version": state.version,
                "seq": state.seq,
                "reviewed": state.reviewed,
                "nextId": state.next_id,
                "annotations": [a.to_json() for a in state.annotations.values()],
            }
            tmp = d / ".snapshot.tmp"
            tmp.write_text(json.dumps(snap))
            tmp.replace(d / "snapshot.json")

    @staticmethod
    def _apply_event(series_uid: str, state: _SeriesState, ev: dict) -> None:
        """Replay one audit event onto the state (used by load and tests)."""
        state.seq = ev["seq"]
        state.version = ev["versionAfter"]
        action = ev["action"]
        after = ev.get("after")
        before = ev.get("before")
        if action == "mark_reviewed":
            state.reviewed = True
        elif action == "delete_human":
            state.annotations.pop(before["id"], None)
        elif after is not None:
            ann = Annotation.from_json(series_uid, after)
            state.annotations[ann.id] = ann
        elif before is not None:
            state.annotations.pop(before["id"], None)
        if after is not None:
            num = int(after["id"].rsplit("-", 1)[-1])
            state.next_id = max(state.next_id, num + 1)

    # -- core operations ---------------------------------------------------

    def put_ai_detections(self, series_uid: str, model_version: int, detections: list[dict]) -> int:
        """One proposed annotation per detection; unadjudicated proposals
        from older model versions are replaced. Returns the new version."""
        with self._lock:
            state = self._series.setdefault(series_uid, _SeriesState())
            events = []
            state.version += 1
            for ann in list(state.annotations.values()):
                if ann.status == "proposed" and ann.provenance.get("kind") == "ai":
                    state.seq += 1
                    events.append(
                        {
                            "seq": state.seq,
                            "seriesUid": series_uid,
                            "actor": "ai",
                            "action": "create",  # replacement removes the old proposal
                            "before": ann.to_json(),
                            "after": None,
                            "versionAfter": state.version,
                        }
                    )
                    del state.annotations[ann.id]
            for det in detections:
                ann = Annotation(
                    id=f"{series_uid[-8:]}-{state.next_id}",
                    series_uid=series_uid,
                    center=(
                        float(det["center"]["slice"]),
                        float(det["center"]["row"]),
                        float(det["center"]["col"]),
                    ),
                    radius_vox=float(det["radiusVox"]),
                    status="proposed",
                    provenance={"kind": "ai", "modelVersion": int(model_version)},
                    confidence=det.get("confidence"),
                )
                state.next_id += 1
                state.seq += 1
                state.annotations[ann.id] = ann
                events.append(
                    {
                        "seq": state.seq,
                        "seriesUid": series_uid,
                        "actor": "ai",
                        "action": "create",
                        "before": None,
                        "after": ann.to_json(),
                        "versionAfter": state.version,
                    }
                )
            if not events:  # zero detections replacing nothing still audits
                state.seq += 1
                events.append(
                    {
                        "seq": state.seq,
                        "seriesUid": series_uid,
                        "actor": "ai",
                        "action": "create",
                        "before": None,
                        "after": None,
                        "versionAfter": state.version,
                    }
                )
            self._append_events(series_uid, events, state)
            return state.version

    def adjudicate(
        self, series_uid: str, expected_version: int, actions: list[dict], actor: str = "human"
    ) -> int:
        """Apply a batch of confirm/reject/add/move/delete/markReviewed actions
        atomically under optimistic concurrency. Empty batches are a no-op."""
        with self._lock:
            state = self._series.setdefault(series_uid, _SeriesState())
            if expected_version != state.version:
                raise VersionConflict(expected_version, state.version)
            if not actions:
                return state.version

            # validate and stage against a copy; commit only if all apply
            staged = dict(state.annotations)
            staged_reviewed = state.reviewed
            next_id = state.next_id
            events: list[dict] = []
            version_after = state.version + 1
            seq = state.seq

            def stage(action: str, before: Optional[Annotation], after: Optional[Annotation]):
                nonlocal seq
                seq += 1
                events.append(
                    {
                        "seq": seq,
                        "seriesUid": series_uid,
                        "actor": actor,
                        "action": action,
                        "before": before.to_json() if before else None,
                        "after": after.to_json() if after else None,
                        "versionAfter": version_after,
                    }
                )

            for act in actions:
                kind = act["type"]
                if kind in ("confirm", "reject", "move", "delete"):
                    ann = staged.get(act.get("id"))
                    if ann is None:
                        raise UnknownAnnotationId(str(act.get("id")))
                if kind == "confirm":
                    if ann.status != "proposed":
                        raise IllegalTransition(f"confirm on status {ann.status}")
                    new = replace(ann, status="confirmed")
                    staged[new.id] = new
                    stage("confirm", ann, new)
                elif kind == "reject":
                    if ann.status not in ("proposed", "confirmed"):
                        raise IllegalTransition(f"reject on status {ann.status}")
                    new = replace(ann, status="rejected")
                    staged[new.id] = new
                    stage("reject", ann, new)
                elif kind == "move":
                    if ann.status not in ACTIVE_STATUSES:
                        raise IllegalTransition(f"move on status {ann.status}")
                    c = act["center"]
                    new = replace(
                        ann, center=(float(c["slice"]), float(c["row"]), float(c["col"]))
                    )
                    staged[new.id] = new
                    stage("move", ann, new)
                elif kind == "delete":
                    if ann.status != "added":
                        raise IllegalTransition("only human-added annotations can be deleted")
                    del staged[ann.id]
                    stage("delete_human", ann, None)
                elif kind == "add":
                    c = act["center"]
                    new = Annotation(
                        id=f"{series_uid[-8:]}-{next_id}",
                        series_uid=series_uid,
                        center=(float(c["slice"]), float(c["row"]), float(c["col"])),
                        radius_vox=float(act.get("radiusVox", 2.0)),
                        status="added",
                        provenance={"kind": "human", "userId": actor},
                    )
                    next_id += 1
                    staged[new.id] = new
                    stage("add", None, new)
                elif kind == "markReviewed":
                    staged_reviewed = True
                    stage("mark_reviewed", None, None)
                else:
                    raise IllegalTransition(f"unknown action type {kind!r}")

            state.annotations = staged
            state.reviewed = staged_reviewed
            state.next_id = next_id
            state.seq = seq
            state.version = version_after
            self._append_events(series_uid, events, state)
            return state.version

    def get_annotations(
        self, series_uid: str, include_rejected: bool = False
    ) -> tuple[int, bool, list[Annotation]]:
        with self._lock:
            state = self._series.get(series_uid)
            if state is None:
                return 0, False, []
            anns = [
                a
                for a in state.annotations.values()
                if include_rejected or a.status in ACTIVE_STATUSES
            ]
            anns.sort(key=lambda a: a.id)
            return state.version, state.reviewed, anns

    def labeled_lesions(self, series_uid: str) -> list[tuple[tuple[float, float, float], float]]:
        """Training labels: confirmed and added annotations only."""
        _, _, anns = self.get_annotations(series_uid, include_rejected=True)
        return [
            (a.center, a.radius_vox)
            for a in anns
            if a.status in ("confirmed", "added")
        ]

    def is_reviewed(self, series_uid: str) -> bool:
        with self._lock:
            state = self._series.get(series_uid)
            return bool(state and state.reviewed)

    def series_with_data(self) -> list[str]:
        with self._lock:
            return sorted(self._series)


class AnnotationNode:
    """HTTP/JSON surface over an AnnotationStore."""

    def __init__(self, store: AnnotationStore, host: str = "127.0.0.1", port: int = 0):
        self.store = store
        self.http = JsonHttpServer(host, port)
        self._register()

    @property
    def http_url(self) -> str:
        return self.http.base_url

    def _register(self) -> None:
        store = self.store

        def get_annotations(groups, query, body):
            (uid,) = groups
            include = query.get("includeRejected", "false").lower() == "true"
            version, reviewed, anns = store.get_annotations(uid, include)
            return Response.json(
                {
                    "version": version,
                    "reviewed": reviewed,
                    "annotations": [a.to_json() for a in anns],
                }
            )

        def post_proposals(groups, query, body):
            (uid,) = groups
            version = store.put_ai_detections(
                uid, int(body.get("modelVersion", 0)), body.get("detections", [])
            )
            return Response.json({"version": version})

        def post_adjudicate(groups, query, body):
            (uid,) = groups
            try:
                version = store.adjudicate(
                    uid,
                    int(body["expectedVersion"]),
                    body.get("actions", []),
                    actor=body.get("actor", "human"),
                )
            except VersionConflict as exc:
                raise HttpError(
                    409, "VersionConflict", {"currentVersion": exc.current}
                ) from exc
            except UnknownAnnotationId as exc:
                raise HttpError(404, f"unknown annotation id {exc}") from exc
            except IllegalTransition as exc:
                raise HttpError(422, str(exc)) from exc
            return Response.json({"version": version})

        self.http.route("GET", r"/series/([^/]+)/annotations", get_annotations)
        self.http.route("POST", r"/series/([^/]+)/annotations:proposals", post_proposals)
        self.http.route("POST", r"/series/([^/]+)/annotations:adjudicate", post_adjudicate)

    def start(self) -> "AnnotationNode":
        self.http.start()
        return self

    def stop(self) -> None:
        self.http.stop()
