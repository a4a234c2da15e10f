"""Monitoring agent, audit trail, threshold flow analyzer and countermeasures."""
from __future__ import annotations

import enum
import logging
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from .errors import ConfigError
from .southbound import DROP, FlowMatch, FlowMod, FlowModOp, MsgType

log = logging.getLogger(__name__)

FlowKey = tuple[int, int, int]
DROP_PRIORITY_BASE = 50_000


@dataclass(frozen=True)
class DetectorConfig:
    window: int = 100
    dos_rate_multiplier: float = 5.0
    scan_fanout_limit: int = 8
    auth_failure_limit: int = 3
    integrity_failure_limit: int = 3
    baseline_learning_windows: int = 5

    def __post_init__(self):
        for name in ("window", "dos_rate_multiplier", "scan_fanout_limit", "auth_failure_limit",
                     "integrity_failure_limit", "baseline_learning_windows"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"detector {name} must be > 0", field=name)


class AlertKind(enum.Enum):
    SCAN = "scan"
    SPOOFING = "spoofing"
    INJECTION = "injection"
    IMPERSONATION = "impersonation"
    DOS = "dos"
    DDOS = "ddos"


@dataclass(frozen=True)
class Alert:
    kind: AlertKind
    subject: Union[int, FlowKey]
    window: tuple[int, int]
    evidence: tuple[tuple[str, object], ...]
    threshold: float

    @property
    def count(self) -> float:
        return dict(self.evidence)["count"]

    def nodes(self) -> tuple[int, ...]:
        """Source nodes the alert attributes the behaviour to."""
        if self.kind is AlertKind.DDOS:
            return tuple(s for s, _ in dict(self.evidence)["sources"])
        if isinstance(self.subject, tuple):
            return (self.subject[0],)
        return (self.subject,)


class CmAction(enum.Enum):
    DROP = "install_drop_rule"
    REVOKE = "revoke_keys"
    QUARANTINE = "quarantine"


@dataclass(frozen=True)
class Countermeasure:
    action: CmAction
    target: Union[int, FlowKey]
    cause: Alert
    flow_mod: Optional[FlowMod] = None
    nodes: tuple[int, ...] = ()


@dataclass(frozen=True)
class FlowEvent:
    tick: int
    src: int
    dst: int
    msg_type: int
    size: int
    verdict: str = "ok"
    auth_failure: bool = False
    integrity_failure: bool = False
    spoofed: bool = False

    @property
    def key(self) -> FlowKey:
        return (self.src, self.dst, self.msg_type)


@dataclass
class WindowStats:
    start: int
    end: int
    flows: Counter = field(default_factory=Counter)
    fanout: dict[int, set] = field(default_factory=dict)
    spoofed: Counter = field(default_factory=Counter)
    integrity: Counter = field(default_factory=Counter)
    auth: Counter = field(default_factory=Counter)

    def add(self, ev: FlowEvent) -> None:
        self.flows[ev.key] += 1
        self.fanout.setdefault(ev.src, set()).add(ev.dst)
        if ev.spoofed:
            self.spoofed[ev.src] += 1
        if ev.integrity_failure:
            self.integrity[ev.src] += 1
        if ev.auth_failure:
            self.auth[ev.src] += 1


def _type_name(t: int) -> str:
    try:
        return MsgType(t).name.lower()
    except ValueError:
        return str(t)


def analyze(stats: WindowStats, cfg: DetectorConfig, baseline: float) -> list[Alert]:
    """Threshold rules over one window; evidence always strictly exceeds threshold."""
    win = (stats.start, stats.end)
    alerts: list[Alert] = []
    dos_limit = cfg.dos_rate_multiplier * baseline
    hot = sorted(k for k, c in stats.flows.items() if c > dos_limit)
    by_dst: dict[int, list[FlowKey]] = {}
    for key in hot:
        by_dst.setdefault(key[1], []).append(key)
    for dst in sorted(by_dst):
        keys = by_dst[dst]
        sources = sorted({k[0] for k in keys})
        if len(sources) >= 2:
            per_src = Counter()
            for k in keys:
                per_src[k[0]] += stats.flows[k]
            alerts.append(Alert(AlertKind.DDOS, dst, win,
                                (("count", min(per_src.values())),
                                 ("sources", tuple(sorted(per_src.items()))),
                                 ("flows", tuple(keys))), dos_limit))
        else:
            for k in keys:
                alerts.append(Alert(AlertKind.DOS, k, win, (("count", stats.flows[k]),), dos_limit))
    for src in sorted(stats.fanout):
        n = len(stats.fanout[src])
        if n > cfg.scan_fanout_limit:
            alerts.append(Alert(AlertKind.SCAN, src, win,
                                (("count", n), ("dsts", tuple(sorted(stats.fanout[src])))),
                                cfg.scan_fanout_limit))
    for src in sorted(stats.spoofed):
        if stats.spoofed[src] > 0:
            alerts.append(Alert(AlertKind.SPOOFING, src, win, (("count", stats.spoofed[src]),), 0))
    for src in sorted(stats.integrity):
        if stats.integrity[src] > cfg.integrity_failure_limit:
            alerts.append(Alert(AlertKind.INJECTION, src, win, (("count", stats.integrity[src]),),
                                cfg.integrity_failure_limit))
    for src in sorted(stats.auth):
        if stats.auth[src] > cfg.auth_failure_limit:
            alerts.append(Alert(AlertKind.IMPERSONATION, src, win, (("count", stats.auth[src]),),
                                cfg.auth_failure_limit))
    return alerts


AuditFn = Callable[..., None]


class MitigationAgent:
    """Monitoring agent plus flow analyzer.

    ``audit(tick, comp, ev, **kv)`` receives one record per ingested event,
    alert and countermeasure.
    """

    def __init__(self, cfg: DetectorConfig = DetectorConfig(), audit: Optional[AuditFn] = None,
                 start: int = 0):
        self.cfg = cfg
        self.audit = audit or (lambda *a, **k: None)
        self.start = start
        self.events: deque[FlowEvent] = deque()
        self.learning: list[int] = []  # per active (flow, window) cell counts
        self.windows_seen = 0
        self.baseline: Optional[float] = None
        self.alerts: list[Alert] = []
        self.issued: dict[tuple[CmAction, object], Countermeasure] = {}
        self.suppressed = 0
        self.ingested = 0
        self._next_priority = DROP_PRIORITY_BASE
        self._open: tuple[int, Counter] = (start, Counter())

    @property
    def enforcing(self) -> bool:
        return self.baseline is not None

    def ingest(self, ev: FlowEvent) -> int:
        """Record one accounted packet; returns its flow's count in the open window."""
        self.ingested += 1
        self.events.append(ev)
        horizon = ev.tick - 2 * self.cfg.window
        while self.events and self.events[0].tick < horizon:
            self.events.popleft()
        self.audit(ev.tick, "mitigation", "flow", src=ev.src, dst=ev.dst, type=_type_name(ev.msg_type),
                   bytes=ev.size, verdict=ev.verdict)
        lo = self.window_start(ev.tick)
        if self._open[0] != lo:
            self._open = (lo, Counter())
        self._open[1][ev.key] += 1
        return self._open[1][ev.key]

    def window_start(self, tick: int) -> int:
        w = self.cfg.window
        return self.start + ((tick - self.start) // w) * w

    def stats(self, start: int, end: int) -> WindowStats:
        st = WindowStats(start, end)
        for ev in self.events:
            if start <= ev.tick < end:
                st.add(ev)
        return st

    def close_window(self, end: int) -> list[Alert]:
        """Analyzer entry point at a window boundary ``end``."""
        st = self.stats(end - self.cfg.window, end)
        self.windows_seen += 1
        if self.baseline is None:
            self.learning.extend(st.flows.values())
            if self.windows_seen >= self.cfg.baseline_learning_windows:
                mean = sum(self.learning) / len(self.learning) if self.learning else 0.0
                self.baseline = max(1.0, mean)
                self.audit(end, "mitigation", "baseline", value=f"{self.baseline:.4f}",
                           cells=len(self.learning))
            return []
        alerts = analyze(st, self.cfg, self.baseline)
        for a in alerts:
            self.alerts.append(a)
            self.audit(end, "mitigation", "alert", kind=a.kind.value, subject=_fmt_subject(a.subject),
                       count=a.count, threshold=_fmt_num(a.threshold))
        return alerts

    def _drop_mod(self, match: FlowMatch) -> FlowMod:
        prio = self._next_priority
        self._next_priority += 1
        return FlowMod(FlowModOp.ADD, prio, match, DROP)

    def countermeasures(self, alerts: list[Alert], tick: int = 0) -> list[Countermeasure]:
        out: list[Countermeasure] = []
        for a in alerts:
            for cm in self._plan(a):
                key = (cm.action, cm.target)
                if key in self.issued:
                    self.suppressed += 1
                    continue
                if cm.action in (CmAction.DROP, CmAction.QUARANTINE):
                    cm = Countermeasure(cm.action, cm.target, a, self._drop_mod(_match_for(cm.target)), cm.nodes)
                self.issued[key] = cm
                out.append(cm)
                self.audit(tick, "mitigation", "countermeasure", action=cm.action.value,
                           target=_fmt_subject(cm.target), cause=a.kind.value)
        return out

    def _plan(self, a: Alert) -> list[Countermeasure]:
        if a.kind is AlertKind.DOS:
            return [Countermeasure(CmAction.DROP, a.subject, a, nodes=a.nodes())]
        if a.kind is AlertKind.DDOS:
            return [Countermeasure(CmAction.DROP, k, a, nodes=(k[0],)) for k in dict(a.evidence)["flows"]]
        if a.kind is AlertKind.SCAN:
            return [Countermeasure(CmAction.DROP, ("src", a.subject), a, nodes=(a.subject,))]
        if a.kind in (AlertKind.SPOOFING, AlertKind.INJECTION):
            return [Countermeasure(CmAction.REVOKE, a.subject, a, nodes=(a.subject,))]
        return [Countermeasure(CmAction.QUARANTINE, a.subject, a, nodes=(a.subject,))]


def _match_for(target) -> FlowMatch:
    if isinstance(target, int):
        return FlowMatch(src=target)
    if target[0] == "src":
        return FlowMatch(src=target[1])
    src, dst, t = target
    try:
        t = MsgType(t)
    except ValueError:
        pass
    return FlowMatch(src, dst, t)


def _fmt_subject(s) -> str:
    if isinstance(s, tuple):
        return ":".join(str(x) for x in s)
    return str(s)


def _fmt_num(v) -> str:
    return f"{v:.4f}" if isinstance(v, float) else str(v)
