"""Attribute-predicate router: every instance goes to the base destinations,
and additionally to each rule's destination when all its predicates match."""
from __future__ import annotations

import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .dicom import Dataset, T, Tag
from .transfer import (
    Endpoint,
    RdwServer,
    StoreStatus,
    TransferError,
    associate,
)

# Tags that may appear in routing predicates, by keyword.
KNOWN_TAGS: dict[str, Tag] = {
    "Modality": T.Modality,
    "SeriesDescription": T.SeriesDescription,
    "PatientID": T.PatientID,
    "StudyInstanceUID": T.StudyInstanceUID,
    "SeriesInstanceUID": T.SeriesInstanceUID,
    "SOPClassUID": T.SOPClassUID,
}
_TAG_BY_NUMBER = {f"{t.group:04X}{t.element:04X}": t for t in KNOWN_TAGS.values()}


class BadPredicate(ValueError):
    pass


class UnknownTag(ValueError):
    pass


@dataclass(frozen=True)
class Predicate:
    tag: Tag
    kind: str  # equals | contains | regex
    arg: str
    _regex: Optional[re.Pattern] = field(default=None, compare=False)

    def matches(self, ds: Dataset) -> bool:
        el = ds.get(self.tag)
        if el is None:
            return False  # missing tag fails the predicate, not an error
        value = str(el.value)
        if self.kind == "equals":
            return value == self.arg
        if self.kind == "contains":
            return self.arg in value
        return bool(self._regex.search(value))  # type: ignore[union-attr]


def make_predicate(tag_name: str, kind: str, arg: str) -> Predicate:
    tag = KNOWN_TAGS.get(tag_name) or _TAG_BY_NUMBER.get(tag_name.upper().replace(",", "").strip("()"))
    if tag is None:
        raise UnknownTag(tag_name)
    if kind not in ("equals", "contains", "regex"):
        raise BadPredicate(f"unknown matcher {kind!r}")
    compiled = None
    if kind == "regex":
        try:
            compiled = re.compile(arg)
        except re.error as exc:
            raise BadPredicate(f"bad regex {arg!r}: {exc}") from exc
    return Predicate(tag=tag, kind=kind, arg=arg, _regex=compiled)


@dataclass(frozen=True)
class Rule:
    name: str
    predicates: tuple[Predicate, ...]
    destination: Endpoint

    def __post_init__(self):
        if not self.predicates:
            raise BadPredicate(f"rule {self.name!r} has no predicates")

    def matches(self, ds: Dataset) -> bool:
        return all(p.matches(ds) for p in self.predicates)


@dataclass(frozen=True)
class RuleSet:
    base_destinations: tuple[Endpoint, ...]
    rules: tuple[Rule, ...]


def parse_rule_line(name: str, line: str) -> tuple[tuple[str, str, str], ...]:
    """Parse ``Tag matcher "arg" && Tag matcher "arg"`` predicate syntax."""
    parts = [p.strip() for p in line.split("&&")]
    out = []
    for part in parts:
        m = re.fullmatch(r"(\S+)\s+(equals|contains|regex)\s+\"([^\"]*)\"", part)
        if not m:
            raise BadPredicate(f"rule {name!r}: cannot parse predicate {part!r}")
        out.append((m.group(1), m.group(2), m.group(3)))
    return tuple(out)


def load_rules(
    base_destinations: list[Endpoint],
    rule_specs: list[tuple[str, str, Endpoint]],
) -> RuleSet:
    """Build a validated RuleSet from (name, predicate line, destination)
    triples; tags must be known and regexes must compile. Order preserved."""
    rules = []
    for name, line, dest in rule_specs:
        preds = tuple(make_predicate(*spec) for spec in parse_rule_line(name, line))
        rules.append(Rule(name=name, predicates=preds, destination=dest))
    return RuleSet(base_destinations=tuple(base_destinations), rules=tuple(rules))


def match_rules(ds: Dataset, rs: RuleSet) -> list[Endpoint]:
    """Base destinations plus destinations of fully matching rules,
    deduplicated, base order then rule order."""
    out = list(rs.base_destinations)
    for rule in rs.rules:
        if rule.matches(ds) and rule.destination not in out:
            out.append(rule.destination)
    return out


@dataclass
class DeliveryOutcome:
    status: str  # delivered | failed
    attempts: int
    reason: Optional[str] = None


@dataclass
class DeliveryReport:
    sop_instance_uid: str
    outcomes: dict[Endpoint, DeliveryOutcome]

    @property
    def all_delivered(self) -> bool:
        return all(o.status == "delivered" for o in self.outcomes.values())


class Router:
    """RDW1 inbound server fanning every instance out per the rule set."""

    def __init__(
        self,
        listen: Endpoint,
        ruleset: RuleSet,
        calling_ae: str = "ROUTER",
        retry_limit: int = 3,
        backoff_s: float = 0.2,
        dead_letter_path: Optional[Path] = None,
    ):
        self.ruleset = ruleset
        self.calling_ae = calling_ae
        self.retry_limit = retry_limit
        self.backoff_s = backoff_s
        self.dead_letter_path = Path(dead_letter_path) if dead_letter_path else None
        self.reports: list[DeliveryReport] = []
        self._report_lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=8, thread_name_prefix="router-out")
        self._server = RdwServer(listen, self._handle)

    @property
    def endpoint(self) -> Endpoint:
        return self._server.endpoint

    def start(self) -> "Router":
        self._server.start()
        return self

    def stop(self) -> None:
        self._server.stop()
        self._pool.shutdown(wait=False)

    def _deliver(self, dest: Endpoint, payload: bytes, sop_uid: str) -> DeliveryOutcome:
        last_reason = "unknown"
        for attempt in range(1, self.retry_limit + 1):
            try:
                assoc = associate(dest, self.calling_ae, timeout=5.0)
                try:
                    result = assoc.store(payload, sop_uid)
                finally:
                    try:
                        assoc.release()
                    except TransferError:
                        pass
                if result.status in (StoreStatus.SUCCESS, StoreStatus.DUPLICATE):
                    return DeliveryOutcome(status="delivered", attempts=attempt)
                last_reason = f"store status {result.status.name}"
            except TransferError as exc:
                last_reason = str(exc)
            if attempt < self.retry_limit:
                time.sleep(self.backoff_s)
        self._dead_letter(sop_uid, dest, last_reason)
        return DeliveryOutcome(status="failed", attempts=self.retry_limit, reason=last_reason)

    def _dead_letter(self, sop_uid: str, dest: Endpoint, reason: str) -> None:
        if self.dead_letter_path is None:
            return
        line = f"{time.time():.3f} {sop_uid} {dest.called_ae} {reason}\n"
        with self._report_lock:
            with open(self.dead_letter_path, "a") as f:
                f.write(line)

    def route(self, ds: Dataset, raw: bytes) -> DeliveryReport:
        sop_uid = str(ds.value(T.SOPInstanceUID, ""))
        targets = match_rules(ds, self.ruleset)
        futures = {
            dest: self._pool.submit(self._deliver, dest, raw, sop_uid)
            for dest in targets
        }
        report = DeliveryReport(
            sop_instance_uid=sop_uid,
            outcomes={dest: f.result() for dest, f in futures.items()},
        )
        with self._report_lock:
            self.reports.append(report)
        return report

    def _handle(self, ds: Dataset, raw: bytes) -> int:
        report = self.route(ds, raw)
        delivered_base = all(
            report.outcomes[d].status == "delivered"
            for d in self.ruleset.base_destinations
            if d in report.outcomes
        )
        return int(StoreStatus.SUCCESS if delivered_base else StoreStatus.STORAGE_ERROR)
