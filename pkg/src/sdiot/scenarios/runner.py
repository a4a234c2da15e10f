"""Wire a scenario into a network, run it, judge each attack, write outputs."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .. import ecc
from ..agents import DeviceAgent, DeviceConfig, SensorSwitch
from ..errors import InvariantError
from ..gateway import GATEWAY, AuditLog, ControllerConfig, SecurityController
from ..mitigation import CmAction
from ..simnet import attach_adversary, build_topology, derive_seed
from .attacks import AttackRuntime, build_attack
from .spec import ScenarioSpec, render_scenario

log = logging.getLogger(__name__)

PREVENTED, DETECTED, MISSED = "prevented", "detected", "missed"


@dataclass(frozen=True)
class AttackOutcome:
    index: int
    kind: str
    outcome: str
    latency: Optional[int]
    goal_met: bool
    detail: str
    post_countermeasure_delivered: Optional[int] = None

    def label(self) -> str:
        return f"detected({self.latency})" if self.outcome == DETECTED else self.outcome


@dataclass
class RunReport:
    name: str
    seed: int
    modules: tuple[str, ...]
    duration: int
    outcomes: list[AttackOutcome]
    trust: list[tuple[int, int, float, int]]
    node_trust: list[tuple[int, float]]
    alerts: list[str]
    countermeasures: list[str]
    aggregate_correct: bool
    aggregates: int
    counters: dict[str, int]
    invariants: list[tuple[str, bool]]
    config: str
    audit: str = field(repr=False, default="")
    context: object = field(repr=False, default=None, compare=False)

    @property
    def ok(self) -> bool:
        return all(ok for _, ok in self.invariants)

    def outcome_of(self, kind: str) -> AttackOutcome:
        return next(o for o in self.outcomes if o.kind == kind)

    def to_text(self) -> str:
        out = [f"scenario {self.name}", f"seed {self.seed}", f"duration {self.duration}",
               f"modules {','.join(self.modules) or '-'}", "", "attacks"]
        if not self.outcomes:
            out.append("  (none)")
        for o in self.outcomes:
            out.append(f"  {o.index}. {o.kind}: {o.label()}  [{o.detail}]")
        out += ["", f"aggregates {self.aggregates}, all correct: {'yes' if self.aggregate_correct else 'no'}",
                "", "alerts"]
        out += [f"  {a}" for a in self.alerts] or ["  (none)"]
        out += ["", "countermeasures"]
        out += [f"  {c}" for c in self.countermeasures] or ["  (none)"]
        out += ["", "trust (observer -> node: reputation, encounters)"]
        out += [f"  {a} -> {b}: {r:.6f} ({n})" for a, b, r, n in self.trust] or ["  (trust module off)"]
        if self.node_trust:
            out += ["", "node trust"]
            out += [f"  {n}: {v:.6f}" for n, v in self.node_trust]
        out += ["", "counters"]
        out += [f"  {k} {v}" for k, v in self.counters.items()]
        out += ["", "invariants"]
        out += [f"  {name}: {'ok' if ok else 'FAILED'}" for name, ok in self.invariants]
        out += ["", "config", *("  " + ln if ln else "" for ln in self.config.splitlines())]
        return "\n".join(out).rstrip() + "\n"

    def to_kv(self) -> str:
        kv = [("scenario", self.name), ("seed", self.seed), ("duration", self.duration),
              ("modules", ",".join(self.modules)), ("attacks", len(self.outcomes))]
        for o in self.outcomes:
            p = f"attack.{o.index}"
            kv += [(f"{p}.kind", o.kind), (f"{p}.outcome", o.outcome),
                   (f"{p}.latency", "" if o.latency is None else o.latency),
                   (f"{p}.goal_met", int(o.goal_met))]
            if o.post_countermeasure_delivered is not None:
                kv.append((f"{p}.post_countermeasure_delivered", o.post_countermeasure_delivered))
        kv += [("aggregates", self.aggregates), ("aggregate_correct", int(self.aggregate_correct)),
               ("alerts", len(self.alerts))]
        kv += [(f"alert.{i}", a) for i, a in enumerate(self.alerts, 1)]
        kv += [(f"trust.{a}.{b}", f"{r:.6f}") for a, b, r, _ in self.trust]
        kv += [(f"node_trust.{n}", f"{v:.6f}") for n, v in self.node_trust]
        kv += [(f"counter.{k}", v) for k, v in self.counters.items()]
        kv += [(f"invariant.{k}", int(ok)) for k, ok in self.invariants]
        return "".join(f"{k}={v}\n" for k, v in kv)


class RunContext:
    """Everything attack builders and evaluators need to see."""

    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        self.net = build_topology(spec.topology)
        self.curve = ecc.get_curve(spec.curve)
        self.audit = AuditLog()
        self.gateway_keys = ecc.generate_keypair(self.curve, self.net.rng(GATEWAY, "gateway-keys"))
        self.gateway_pub = self.gateway_keys.public
        self.bootstraps = {d: ecc.generate_keypair(self.curve, self.net.rng(d, "bootstrap"))
                           for d in spec.device_ids}
        self.provisioning = {d: ecc.encode_point(self.curve, kp.public) for d, kp in self.bootstraps.items()}
        self.agents: dict[int, DeviceAgent] = {}
        self.heads: dict[int, SensorSwitch] = {}
        self.controller: Optional[SecurityController] = None
        self.attacks: list[AttackRuntime] = []
        self.adversaries: dict[str, object] = {}

    def seed_for(self, *labels) -> int:
        return derive_seed(self.spec.seed, "attack", *labels)

    def adversary(self, name: str):
        return self.adversaries[name]

    def wrong_rounds(self) -> list[int]:
        bad = []
        for r, result, contributors in self.controller.sink.aggregates:
            truth = [self.agents[n].truth.get(r) if n in self.agents else None for n in contributors]
            if any(v is None for v in truth):
                bad.append(r)
                continue
            total = sum(truth)
            expect = {"sum": total, "count": len(truth), "mean": total / len(truth)}[result.mode]
            if result.value != expect:
                bad.append(r)
        return bad


def build(spec: ScenarioSpec) -> RunContext:
    spec.validate()
    ctx = RunContext(spec)
    net = ctx.net
    mods = spec.modules
    cfg = ControllerConfig(modules=mods, curve=ctx.curve, reading_period=spec.reading_period,
                           aggregate=spec.aggregate, key_lifetime=spec.key_lifetime,
                           auth_timeout=spec.auth_timeout, alpha=spec.alpha, tau=spec.tau,
                           service_period=spec.service_period, detector=spec.detector,
                           templates=spec.templates())
    ctx.controller = SecurityController(net, cfg, ctx.gateway_keys, ctx.provisioning,
                                        net.rng(GATEWAY, "controller"), ctx.audit)
    net.attach(GATEWAY, ctx.controller)
    for h in net.heads:
        sw = ctx.heads[h] = SensorSwitch(h, stats_period=spec.detector.window)
        net.attach(h, sw)
        sw.start(net, 0)
    late = dict(spec.late_join)
    for i, d in enumerate(spec.device_ids):
        dcfg = DeviceConfig(ctx.curve, ctx.gateway_pub, spec.reading_period, privacy="privacy" in mods,
                            keyed="keymgmt" in mods, authn="authn" in mods)
        agent = ctx.agents[d] = DeviceAgent(d, net.head_of(d), dcfg, ctx.bootstraps[d], net.rng(d, "device"))
        net.attach(d, agent)
        agent.start(net, late.get(d, 1 + i % 5))
    P, W = spec.reading_period, spec.detector.window
    for r in range(spec.duration // P + 1):
        at = (r + 1) * P + 2
        if at > spec.duration:
            break
        net.schedule(at, GATEWAY, f"close:{r}", lambda r=r: ctx.controller.close_round(r))
    for k in range(1, spec.duration // W + 1):
        net.schedule(k * W, GATEWAY, f"analyze:{k}", lambda t=k * W: ctx.controller.analyzer_tick(t))
    for i, att in enumerate(spec.attacks, 1):
        rt = build_attack(i, att, ctx)
        ctx.attacks.append(rt)
        if rt.script is not None:
            ctx.adversaries[rt.script.name] = attach_adversary(net, rt.script)
    return ctx


def _alerts(ctx):
    mit = ctx.controller.mitigation
    return mit.alerts if mit is not None else []


def _judge(ctx: RunContext, rt: AttackRuntime) -> AttackOutcome:
    goal, detail = rt.evaluate(ctx)
    post = _post_cm_deliveries(ctx, rt) if rt.spec.kind in ("flood", "ddos") else None
    if not goal and not rt.detection_only:
        return AttackOutcome(rt.index, rt.spec.kind, PREVENTED, None, goal, detail, post)
    hits = [a for a in _alerts(ctx)
            if a.kind in rt.kinds and a.window[1] > rt.start and rt.subjects & set(a.nodes())]
    if hits:
        first = min(a.window[1] for a in hits)
        return AttackOutcome(rt.index, rt.spec.kind, DETECTED, first - rt.start, goal, detail, post)
    return AttackOutcome(rt.index, rt.spec.kind, MISSED, None, goal, detail, post)


def _post_cm_deliveries(ctx: RunContext, rt: AttackRuntime) -> Optional[int]:
    """Sink deliveries of blocked traffic once the drop rule had time to land.

    Only flows covered by a drop or quarantine rule against the attack's
    subjects count; the attacker's other, legitimate flows keep flowing.
    """
    srcs = set(rt.subjects)
    rules = [(t + 2 * ctx.spec.link_delay + 1, cm.flow_mod.match) for t, cm in ctx.controller.countermeasures
             if cm.action in (CmAction.DROP, CmAction.QUARANTINE) and srcs & set(cm.nodes)]
    if not rules:
        return None
    n = 0
    for key, when in ctx.controller.sink.delivered_ticks.items():
        for x in when:
            n += any(x >= settle and match.matches(*key) for settle, match in rules)
    return n


def _invariants(ctx: RunContext, outcomes, check_secrets: bool) -> list[tuple[str, bool]]:
    c = ctx.controller
    inv = [("outcome_per_attack", len(outcomes) == len(ctx.spec.attacks)),
           ("flow_accounting", sum(f.packets for f in c.flows.values()) == c.observed)]
    if c.mitigation is not None:
        inv.append(("audit_complete", c.audit.count("mitigation", "flow") == c.observed == c.mitigation.ingested))
    reg = c.registered()
    if c.km is not None:
        inv.append(("live_key_per_device", all(c.km.is_live(n) for n in reg)))
    if c.creds is not None:
        inv.append(("one_credential_per_device", all(c.creds.get(n) is not None for n in reg)))
    if c.policies is not None:
        inv.append(("one_policy_per_device", all(c.policies.get(n) is not None for n in reg)))
    if check_secrets:
        inv.append(("no_secret_on_wire", not _leaked_secrets(ctx)))
    return inv


def _leaked_secrets(ctx: RunContext) -> list[int]:
    """Devices whose operational or bootstrap secret scalar appears on a link or in the audit trail."""
    size = ctx.curve.scalar_len
    audit = ctx.audit.text().encode()
    leaked = []
    for n, agent in sorted(ctx.agents.items()):
        secrets = [agent.bootstrap.secret.to_bytes(size, "big")]
        if agent.keypair is not None:
            secrets.append(agent.keypair.secret.to_bytes(size, "big"))
        hexes = [s.hex().encode() for s in secrets]
        if any(s in ev.payload for ev in ctx.net.log for s in secrets) or any(h in audit for h in hexes):
            leaked.append(n)
    return leaked


def run_scenario(spec: ScenarioSpec, *, check_secrets: bool = False, strict: bool = False) -> RunReport:
    """Run one scenario to its duration and judge every scripted attack."""
    ctx = build(spec)
    ctx.net.run_until(spec.duration)
    c = ctx.controller
    outcomes = [_judge(ctx, rt) for rt in ctx.attacks]
    trust = [(s.a, s.b, s.reputation, s.n) for s in c.trust.table()] if c.trust else []
    node_trust = [(n, c.trust.node_trust(n)) for n in c.registered()] if c.trust else []
    alerts = [f"window={a.window[0]}-{a.window[1]} kind={a.kind.value} subject={_subject(a.subject)} "
              f"count={a.count} threshold={a.threshold:g}" for a in _alerts(ctx)]
    cms = [f"tick={t} action={cm.action.value} target={_subject(cm.target)} cause={cm.cause.kind.value}"
           for t, cm in c.countermeasures]
    counters = {
        "observed_packets": c.observed,
        "flows": len(c.flows),
        "audit_lines": len(c.audit.lines),
        "audit_flow_lines": c.audit.count("mitigation", "flow"),
        "registered": len(c.registered()),
        "aggregates": len(c.sink.aggregates),
        "aggregate_aborts": len(c.sink.incidents),
        "delivered": sum(c.sink.delivered.values()),
        "head_drops": sum(sw.dropped for sw in ctx.heads.values()),
        "flowmod_rejects": c.flowmod_rejects + sum(sw.rejected_mods for sw in ctx.heads.values()),
        "readings_sent": sum(len(a.sent) for a in ctx.agents.values()),
        "readings_withheld": sum(len(a.withheld) for a in ctx.agents.values()),
        "adversary_frames": sum(a.injected for a in ctx.net.adversaries),
        "tampered_frames": sum(a.tampered for a in ctx.net.adversaries),
        "link_drops": sum(s.drops for s in ctx.net.links.values()),
    }
    report = RunReport(spec.name, spec.seed, tuple(m for m in sorted(spec.modules)), spec.duration, outcomes,
                       trust, node_trust, alerts, cms, not ctx.wrong_rounds(), len(c.sink.aggregates),
                       counters, _invariants(ctx, outcomes, check_secrets), render_scenario(spec),
                       audit=ctx.audit.text(), context=ctx)
    if strict and not report.ok:
        bad = [n for n, ok in report.invariants if not ok]
        raise InvariantError(f"scenario {spec.name}: invariant(s) violated: {', '.join(bad)}")
    return report


def _subject(s) -> str:
    return ":".join(str(x) for x in s) if isinstance(s, tuple) else str(s)


def write_outputs(report: RunReport, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.to_text())
    (out / "report.kv").write_text(report.to_kv())
    (out / "audit.log").write_text(report.audit)
    return out
