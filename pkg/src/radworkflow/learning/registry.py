"""File-backed model registry with an HTTP read/publish surface."""
from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from ..detector import ModelParams
from ..httpd import HttpError, JsonHttpServer, Response


@dataclass(frozen=True)
class ModelVersion:
    version: int
    params: ModelParams
    trained_on: int  # series count
    created_at: float

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "trainedOn": self.trained_on,
            "createdAt": self.created_at,
            **self.params.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelVersion":
        return cls(
            version=int(obj["version"]),
            params=ModelParams.from_json(obj),
            trained_on=int(obj.get("trainedOn", 0)),
            created_at=float(obj.get("createdAt", 0.0)),
        )


class ModelRegistry:
    def __init__(self, path: Optional[Path] = None, bootstrap: Optional[ModelParams] = None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._versions: dict[int, ModelVersion] = {}
        if self.path and self.path.exists():
            for obj in json.loads(self.path.read_text()):
                mv = ModelVersion.from_json(obj)
                self._versions[mv.version] = mv
        if not self._versions:
            boot = ModelVersion(
                version=0,
                params=bootstrap or ModelParams(),
                trained_on=0,
                created_at=time.time(),
            )
            self._versions[0] = boot
            self._flush()

    def _flush(self) -> None:
        if self.path is None:
            return
        data = [self._versions[v].to_json() for v in sorted(self._versions)]
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(data))
        tmp.replace(self.path)

    def current(self) -> ModelVersion:
        with self._lock:
            return self._versions[max(self._versions)]

    def get(self, version: int) -> ModelVersion:
        with self._lock:
            if version not in self._versions:
                raise KeyError(version)
            return self._versions[version]

    def publish(self, params: ModelParams, trained_on: int) -> ModelVersion:
        with self._lock:
            version = max(self._versions) + 1
            mv = ModelVersion(
                version=version,
                params=params,
                trained_on=trained_on,
                created_at=time.time(),
            )
            self._versions[version] = mv
            self._flush()
            return mv


class RegistryNode:
    def __init__(self, registry: ModelRegistry, host: str = "127.0.0.1", port: int = 0):
        self.registry = registry
        self.http = JsonHttpServer(host, port)

        def current(groups, query, body):
            return Response.json(self.registry.current().to_json())

        def get_version(groups, query, body):
            try:
                return Response.json(self.registry.get(int(groups[0])).to_json())
            except KeyError as exc:
                raise HttpError(404, f"no model version {groups[0]}") from exc

        def publish(groups, query, body):
            mv = self.registry.publish(
                ModelParams.from_json(body), int(body.get("trainedOn", 0))
            )
            return Response.json(mv.to_json())

        self.http.route("GET", r"/models/current", current)
        self.http.route("GET", r"/models/(\d+)", get_version)
        self.http.route("POST", r"/models", publish)

    @property
    def http_url(self) -> str:
        return self.http.base_url

    def start(self) -> "RegistryNode":
        self.http.start()
        return self

    def stop(self) -> None:
        self.http.stop()
