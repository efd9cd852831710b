"""Topology configuration (INI-style sections) and node lifecycle."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .ai_node import AiNode, MODES
from .annotations import AnnotationNode, AnnotationStore
from .archive import ArchiveNode, ArchiveStore
from .detector import ModelParams
from .learning import ModelRegistry, RegistryNode, TrainingServer
from .router import Router, load_rules
from .transfer import BindFailure, Endpoint

ARCHIVE_ROLES = ("pacs", "research_pacs", "vna")


class ConfigInvalid(ValueError):
    pass


class PortConflict(RuntimeError):
    pass


@dataclass(frozen=True)
class NodeConfig:
    ae: str
    host: str = "127.0.0.1"
    port: int = 0
    http_port: int = 0


@dataclass(frozen=True)
class AdjudicationNoise:
    p_wrong_decision: float = 0.05
    p_miss_add: float = 0.05
    jitter_vox: float = 1.0

    def __post_init__(self):
        for p in (self.p_wrong_decision, self.p_miss_add):
            if not (0.0 <= p <= 1.0):
                raise ConfigInvalid(f"probability {p} outside [0, 1]")


@dataclass
class ScenarioConfig:
    increments: list[tuple[int, int]] = field(
        default_factory=lambda: [(93, 85), (155, 120), (217, 158)]
    )
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    noise: AdjudicationNoise = field(default_factory=AdjudicationNoise)
    dims: tuple[int, int, int] = (32, 48, 48)
    stage_timeout_s: float = 60.0


@dataclass
class TopologyConfig:
    mode: str = "feedback"
    storage_root: Path = Path("rdw-data")
    nodes: dict[str, NodeConfig] = field(default_factory=dict)
    rules: list[tuple[str, str, str]] = field(default_factory=list)  # (name, predicates, dest node)
    detector: ModelParams = field(default_factory=ModelParams)
    bootstrap_version: int = 0
    quiescence_s: float = 2.0
    min_slices: int = 8
    emit_mask: bool = False
    retry_limit: int = 3
    backoff_s: float = 0.2
    min_new_series: int = 10
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)

    def validate(self, mode: Optional[str] = None) -> None:
        mode = mode or self.mode
        if mode not in MODES:
            raise ConfigInvalid(f"unknown mode {mode!r}")
        required = {"router", "pacs", "vna", "ai_node"}
        if mode == "research":
            required.add("research_pacs")
        if mode == "feedback":
            required |= {"annotations", "learning"}
        missing = required - set(self.nodes)
        if missing:
            raise ConfigInvalid(f"mode {mode!r} requires nodes: {sorted(missing)}")
        aes = [n.ae for n in self.nodes.values()]
        if len(aes) != len(set(aes)):
            raise ConfigInvalid("AE titles must be unique")
        for name, _, dest in self.rules:
            if dest not in self.nodes:
                raise ConfigInvalid(f"rule {name!r} routes to unknown node {dest!r}")


def _parse_pair_list(raw: str) -> list[tuple[int, int]]:
    out = []
    for item in raw.split(","):
        a, b = item.strip().split(":")
        out.append((int(a), int(b)))
    return out


def load_config(path: Path) -> TopologyConfig:
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigInvalid(f"cannot read config {path}")
    try:
        cfg = TopologyConfig()
        if cp.has_section("topology"):
            sec = cp["topology"]
            cfg.mode = sec.get("mode", cfg.mode)
            cfg.storage_root = Path(sec.get("storage_root", str(cfg.storage_root)))
        for node in ("router", "pacs", "research_pacs", "vna", "ai_node", "annotations", "learning"):
            if cp.has_section(node):
                sec = cp[node]
                cfg.nodes[node] = NodeConfig(
                    ae=sec.get("ae", node.upper()),
                    host=sec.get("host", "127.0.0.1"),
                    port=sec.getint("port", 0),
                    http_port=sec.getint("http_port", 0),
                )
        if cp.has_section("router"):
            sec = cp["router"]
            cfg.retry_limit = sec.getint("retry_limit", cfg.retry_limit)
            cfg.backoff_s = sec.getfloat("backoff_s", cfg.backoff_s)
        if cp.has_section("ai_node"):
            sec = cp["ai_node"]
            cfg.quiescence_s = sec.getfloat("quiescence_s", cfg.quiescence_s)
            cfg.min_slices = sec.getint("min_slices", cfg.min_slices)
            cfg.emit_mask = sec.getboolean("emit_mask", cfg.emit_mask)
        if cp.has_section("learning"):
            cfg.min_new_series = cp["learning"].getint("min_new_series", cfg.min_new_series)
        if cp.has_section("detector"):
            sec = cp["detector"]
            cfg.detector = ModelParams(
                z_threshold=sec.getfloat("z_threshold", 2.0),
                min_component_vox=sec.getint("min_component_vox", 2),
                max_component_vox=sec.getint("max_component_vox", 4000),
                confidence_scale=sec.getfloat("confidence_scale", 1.0),
            )
        if cp.has_section("rules"):
            for name, line in cp["rules"].items():
                predicates, _, dest = line.rpartition("->")
                if not predicates:
                    raise ConfigInvalid(f"rule {name!r} needs 'predicates -> destination'")
                cfg.rules.append((name, predicates.strip(), dest.strip()))
        if cp.has_section("scenario"):
            sec = cp["scenario"]
            sc = cfg.scenario
            if sec.get("increments"):
                sc.increments = _parse_pair_list(sec["increments"])
            if sec.get("seeds"):
                sc.seeds = [int(s) for s in sec["seeds"].split(",")]
            if sec.get("dims"):
                s, r, c = (int(x) for x in sec["dims"].split(","))
                sc.dims = (s, r, c)
            sc.noise = AdjudicationNoise(
                p_wrong_decision=sec.getfloat("p_wrong_decision", 0.05),
                p_miss_add=sec.getfloat("p_miss_add", 0.05),
                jitter_vox=sec.getfloat("jitter_vox", 1.0),
            )
            sc.stage_timeout_s = sec.getfloat("stage_timeout_s", 60.0)
        return cfg
    except (ValueError, KeyError, configparser.Error) as exc:
        if isinstance(exc, ConfigInvalid):
            raise
        raise ConfigInvalid(str(exc)) from exc


@dataclass
class SystemHandle:
    mode: str
    router: Router
    pacs: ArchiveNode
    vna: ArchiveNode
    ai_node: AiNode
    research_pacs: Optional[ArchiveNode] = None
    annotations: Optional[AnnotationNode] = None
    registry: Optional[RegistryNode] = None
    trainer: Optional[TrainingServer] = None

    def shutdown(self) -> None:
        self.router.stop()
        self.ai_node.stop()
        for node in (self.pacs, self.vna, self.research_pacs):
            if node:
                node.stop()
        if self.annotations:
            self.annotations.stop()
        if self.registry:
            self.registry.stop()


def run_topology(cfg: TopologyConfig, mode: Optional[str] = None, storage_root: Optional[Path] = None) -> SystemHandle:
    """Start every node the mode requires, health-check, return a handle."""
    mode = mode or cfg.mode
    cfg.validate(mode)
    root = Path(storage_root or cfg.storage_root)
    root.mkdir(parents=True, exist_ok=True)

    def ep(name: str) -> Endpoint:
        n = cfg.nodes[name]
        return Endpoint(host=n.host, port=n.port, called_ae=n.ae)

    started = []
    try:
        archives: dict[str, ArchiveNode] = {}
        for role in ARCHIVE_ROLES:
            if role not in cfg.nodes:
                continue
            if role == "research_pacs" and mode != "research":
                continue
            n = cfg.nodes[role]
            store = ArchiveStore(root / role, role=role)
            node = ArchiveNode(store, ep(role), http_host=n.host, http_port=n.http_port)
            node.start()
            started.append(node)
            archives[role] = node

        annotations = None
        registry = None
        trainer = None
        if mode == "feedback":
            ann_cfg = cfg.nodes["annotations"]
            annotations = AnnotationNode(
                AnnotationStore(root / "annotations"),
                host=ann_cfg.host,
                port=ann_cfg.http_port,
            ).start()
            started.append(annotations)
            reg = ModelRegistry(root / "registry.json", bootstrap=cfg.detector)
            lrn_cfg = cfg.nodes["learning"]
            registry = RegistryNode(reg, host=lrn_cfg.host, port=lrn_cfg.http_port).start()
            started.append(registry)
            trainer = TrainingServer(
                archive_url=archives["pacs"].http_url,
                annotation_url=annotations.http_url,
                registry=reg,
                min_new_series=cfg.min_new_series,
            )

        destinations = {
            role: node.endpoint for role, node in archives.items()
        }
        ai = AiNode(
            listen=ep("ai_node"),
            mode=mode,
            destinations=destinations,
            registry_url=registry.http_url if registry else None,
            annotation_url=annotations.http_url if annotations else None,
            bootstrap_params=cfg.detector,
            bootstrap_version=cfg.bootstrap_version,
            emit_mask=cfg.emit_mask,
            quiescence_s=cfg.quiescence_s,
            min_slices=cfg.min_slices,
        ).start()
        started.append(ai)

        base = [archives["pacs"].endpoint, archives["vna"].endpoint]
        node_eps = {name: arch.endpoint for name, arch in archives.items()}
        node_eps["ai_node"] = ai.endpoint
        ruleset = load_rules(
            base, [(name, line, node_eps[dest]) for name, line, dest in cfg.rules]
        )
        router = Router(
            listen=ep("router"),
            ruleset=ruleset,
            retry_limit=cfg.retry_limit,
            backoff_s=cfg.backoff_s,
            dead_letter_path=root / "dead_letter.log",
        ).start()
        started.append(router)
    except BindFailure as exc:
        for node in started:
            node.stop()
        raise PortConflict(str(exc)) from exc
    except Exception:
        for node in started:
            node.stop()
        raise

    return SystemHandle(
        mode=mode,
        router=router,
        pacs=archives["pacs"],
        vna=archives["vna"],
        research_pacs=archives.get("research_pacs"),
        ai_node=ai,
        annotations=annotations,
        registry=registry,
        trainer=trainer,
    )


def default_config(mode: str = "feedback", storage_root: Path = Path("rdw-data")) -> TopologyConfig:
    """In-memory equivalent of the sample config file (ephemeral ports)."""
    cfg = TopologyConfig(mode=mode, storage_root=storage_root)
    for name in ("router", "pacs", "research_pacs", "vna", "ai_node", "annotations", "learning"):
        cfg.nodes[name] = NodeConfig(ae=name.upper())
    cfg.rules = [("ai", 'Modality equals "MR" && SeriesDescription contains "T1"', "ai_node")]
    return cfg
