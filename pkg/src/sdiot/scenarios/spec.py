"""Scenario file grammar, parser, validator and renderer.

Line-oriented ``key = value`` pairs under ``[section]`` headers; ``#``
starts a comment line.  Sections::

    [scenario]   name, seed, duration
    [topology]   clusters, devices_per_cluster, link_loss_rate, link_delay, late_join
    [modules]    enabled
    [traffic]    reading_period, aggregate
    [crypto]     curve, key_lifetime
    [auth]       timeout
    [trust]      alpha, tau, service_period
    [detector]   window, dos_rate_multiplier, scan_fanout_limit, auth_failure_limit,
                 integrity_failure_limit, baseline_learning_windows
    [attacks.N]  kind, then the parameters listed in ATTACK_PARAMS[kind]
    [policy.N]   role, effect, tree

Lists are comma separated; ``late_join`` entries are ``node@tick``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .. import abac, ecc
from ..errors import ConfigError, ScenarioError
from ..gateway import MODULES, check_modules
from ..mitigation import DetectorConfig
from ..simnet import MAX_NODE_ID, TopologySpec

INT, FLOAT, STR, NODES = "int", "float", "str", "nodes"
REQ = object()

ATTACK_PARAMS: dict[str, dict[str, tuple[str, object]]] = {
    "eavesdrop": {"victim": (INT, REQ), "link": (STR, "uplink"), "start": (INT, 0)},
    "harvest": {"attacker": (INT, REQ), "victims": (NODES, REQ), "start": (INT, REQ),
                "interval": (INT, 2), "sweeps": (INT, 1)},
    "unauthorized": {"attacker": (INT, REQ), "target": (INT, 0), "start": (INT, REQ),
                     "count": (INT, 3), "interval": (INT, 10)},
    "flood": {"attacker": (INT, REQ), "start": (INT, REQ), "end": (INT, REQ),
              "rate": (FLOAT, 0.0), "multiplier": (FLOAT, 50.0)},
    "ddos": {"attackers": (NODES, REQ), "start": (INT, REQ), "end": (INT, REQ),
             "rate": (FLOAT, 0.0), "multiplier": (FLOAT, 50.0)},
    "scan": {"attacker": (INT, REQ), "start": (INT, REQ), "targets": (INT, 20),
             "interval": (INT, 1), "msg_type": (STR, "service")},
    "spoof": {"victim": (INT, REQ), "rogue": (INT, REQ), "start": (INT, REQ),
              "count": (INT, 5), "interval": (INT, 20)},
    "impersonate": {"victim": (INT, REQ), "rogue": (INT, REQ), "start": (INT, REQ),
                    "count": (INT, 8), "interval": (INT, 10)},
    "unauth_access": {"victim": (INT, REQ), "rogue": (INT, REQ), "start": (INT, REQ),
                      "count": (INT, 1), "interval": (INT, 10)},
    "inject": {"victim": (INT, REQ), "at": (INT, REQ), "copies": (INT, 6), "index": (INT, 0)},
    "tamper": {"victim": (INT, REQ), "start": (INT, REQ), "end": (INT, REQ)},
    "modify": {"victim": (INT, REQ), "start": (INT, REQ), "end": (INT, REQ), "delta": (INT, 500)},
    "rogue_join": {"rogue": (INT, REQ), "head": (INT, REQ), "claim": (INT, REQ), "at": (INT, REQ),
                   "copy_pubkey": (INT, 0)},
    "defect": {"node": (INT, REQ), "cooperation": (FLOAT, 0.2)},
}

AGGREGATES = ("sum", "mean", "count")


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    params: tuple[tuple[str, object], ...]
    line: Optional[int] = field(default=None, compare=False)

    def __getitem__(self, name: str):
        return dict(self.params)[name]

    def get(self, name: str, default=None):
        return dict(self.params).get(name, default)

    @classmethod
    def make(cls, kind: str, **params) -> "AttackSpec":
        schema = ATTACK_PARAMS.get(kind)
        if schema is None:
            raise ScenarioError(f"unknown attack kind {kind!r}", field="kind")
        out = []
        for name, (typ, default) in schema.items():
            if name in params:
                out.append((name, _coerce_param(typ, params.pop(name))))
            elif default is REQ:
                raise ScenarioError(f"attack {kind} needs {name}", field=name)
            else:
                out.append((name, default))
        if params:
            raise ScenarioError(f"attack {kind} has no parameter {sorted(params)[0]!r}", field=sorted(params)[0])
        return cls(kind, tuple(out))


def _coerce_param(typ: str, v):
    if typ == NODES:
        return tuple(int(x) for x in v)
    if typ == FLOAT:
        return float(v)
    if typ == INT:
        return int(v)
    return str(v)


@dataclass(frozen=True)
class PolicySpec:
    role: str
    effect: str
    tree: str
    line: Optional[int] = field(default=None, compare=False)

    def template(self, name: str) -> abac.PolicyTemplate:
        return abac.PolicyTemplate(name, abac.parse_tree(self.tree), abac.Effect(self.effect), self.role)


@dataclass(frozen=True)
class ScenarioSpec:
    name: str = "scenario"
    seed: int = 0
    duration: int = 1000
    clusters: int = 2
    devices_per_cluster: int = 3
    link_loss_rate: float = 0.0
    link_delay: int = 1
    late_join: tuple[tuple[int, int], ...] = ()
    modules: frozenset = frozenset(MODULES)
    reading_period: int = 20
    aggregate: str = "sum"
    curve: str = "p192"
    key_lifetime: int = 10_000
    auth_timeout: int = 50
    alpha: float = 0.1
    tau: float = 0.7
    service_period: int = 5
    detector: DetectorConfig = DetectorConfig()
    attacks: tuple[AttackSpec, ...] = ()
    policies: tuple[PolicySpec, ...] = ()

    @property
    def topology(self) -> TopologySpec:
        return TopologySpec(self.clusters, self.devices_per_cluster, self.link_loss_rate,
                            self.seed, self.link_delay)

    @property
    def heads(self) -> range:
        return range(1, self.clusters + 1)

    @property
    def device_ids(self) -> range:
        first = self.clusters + 1
        return range(first, first + self.clusters * self.devices_per_cluster)

    def templates(self) -> tuple[abac.PolicyTemplate, ...]:
        if not self.policies:
            return (abac.DEFAULT_SENSOR_TEMPLATE,)
        return tuple(p.template(f"policy.{i + 1}") for i, p in enumerate(self.policies))

    def with_modules(self, modules) -> "ScenarioSpec":
        return replace(self, modules=frozenset(modules))

    def validate(self) -> "ScenarioSpec":
        validate(self)
        return self


# ---------------------------------------------------------------- validation

def validate(spec: ScenarioSpec, lines: Optional[dict] = None) -> None:
    lines = lines or {}

    def fail(msg, fld):
        raise ScenarioError(msg, lines.get(fld), fld)

    if spec.duration <= 0:
        fail("duration must be > 0", "duration")
    if not 0 <= spec.seed < 2 ** 64:
        fail("seed must be a 64-bit unsigned integer", "seed")
    try:
        spec.topology.validate()
    except ConfigError as exc:
        fail(str(exc), "topology")
    try:
        check_modules(spec.modules)
    except ConfigError as exc:
        fail(str(exc), "enabled")
    if spec.reading_period < 5:
        fail("reading_period must be >= 5 ticks", "reading_period")
    if spec.aggregate not in AGGREGATES:
        fail(f"aggregate must be one of {', '.join(AGGREGATES)}", "aggregate")
    if spec.curve not in ecc.CURVES:
        fail(f"unknown curve {spec.curve!r}", "curve")
    if spec.key_lifetime <= 0:
        fail("key_lifetime must be > 0", "key_lifetime")
    if spec.auth_timeout <= 0:
        fail("timeout must be > 0", "timeout")
    if not 0.0 < spec.alpha <= 1.0:
        fail("alpha must be in (0, 1]", "alpha")
    if not 0.0 <= spec.tau <= 1.0:
        fail("tau must be in [0, 1]", "tau")
    if spec.service_period < 0:
        fail("service_period must be >= 0", "service_period")
    devices = set(spec.device_ids)
    for node, tick in spec.late_join:
        if node not in devices:
            fail(f"late_join references unknown device {node}", "late_join")
        if tick < 0:
            fail("late_join tick must be >= 0", "late_join")
    rogues: set[int] = set()
    for att in spec.attacks:
        _validate_attack(spec, att, devices, rogues)
    for pol in spec.policies:
        if pol.effect not in ("permit", "deny"):
            raise ScenarioError(f"policy effect must be permit or deny, got {pol.effect!r}", pol.line, "effect")
        try:
            abac.parse_tree(pol.tree)
        except ConfigError as exc:
            raise ScenarioError(str(exc), pol.line, "tree") from None


def _validate_attack(spec: ScenarioSpec, att: AttackSpec, devices: set, rogues: set) -> None:
    p = dict(att.params)

    def fail(msg, fld):
        raise ScenarioError(f"attack {att.kind}: {msg}", att.line, fld)

    for name in ("victim", "attacker", "node"):
        if name in p and p[name] not in devices:
            fail(f"{name} {p[name]} is not a device", name)
    for name in ("victims", "attackers"):
        if name in p:
            if not p[name]:
                fail(f"{name} is empty", name)
            for n in p[name]:
                if n not in devices:
                    fail(f"{name} entry {n} is not a device", name)
    if att.kind == "unauthorized" and p["target"] != 0 and p["target"] not in devices:
        fail(f"target {p['target']} is neither the gateway nor a device", "target")
    if "rogue" in p:
        r = p["rogue"]
        if r <= max(devices) or r > 0xFFFF or r in rogues:
            fail(f"rogue id {r} must be unique, above every device id and at most 65535", "rogue")
        rogues.add(r)
    if "head" in p and p["head"] not in spec.heads:
        fail(f"head {p['head']} does not exist", "head")
    if att.kind == "rogue_join" and not 0 < p["claim"] <= MAX_NODE_ID:
        fail("claim must be a valid node id", "claim")
    if att.kind == "eavesdrop" and p["link"] not in ("uplink", "backbone"):
        fail("link must be uplink or backbone", "link")
    if att.kind == "scan" and p["msg_type"] not in ("service", "control"):
        fail("msg_type must be service or control", "msg_type")
    for a, b in (("start", "end"),):
        if a in p and b in p and p[b] <= p[a]:
            fail("end must be after start", b)
    for name in ("count", "copies", "interval", "sweeps", "targets"):
        if name in p and p[name] < 1:
            fail(f"{name} must be >= 1", name)
    if att.kind == "defect" and not 0.0 <= p["cooperation"] <= 1.0:
        fail("cooperation must be in [0, 1]", "cooperation")
    if att.kind in ("flood", "ddos") and p["rate"] < 0:
        fail("rate must be >= 0", "rate")


# ---------------------------------------------------------------- parsing

_SECTION = re.compile(r"^\[([a-z_]+)(?:\.(\d+))?\]$")
_KV = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")

_FIELDS = {
    "scenario": {"name": STR, "seed": INT, "duration": INT},
    "topology": {"clusters": INT, "devices_per_cluster": INT, "link_loss_rate": FLOAT,
                 "link_delay": INT, "late_join": "late"},
    "modules": {"enabled": "modules"},
    "traffic": {"reading_period": INT, "aggregate": STR},
    "crypto": {"curve": STR, "key_lifetime": INT},
    "auth": {"timeout": INT},
    "trust": {"alpha": FLOAT, "tau": FLOAT, "service_period": INT},
    "detector": {"window": INT, "dos_rate_multiplier": FLOAT, "scan_fanout_limit": INT,
                 "auth_failure_limit": INT, "integrity_failure_limit": INT,
                 "baseline_learning_windows": INT},
}
_RENAME = {("auth", "timeout"): "auth_timeout"}


def _value(typ: str, raw: str, line: int, name: str):
    try:
        if typ == INT:
            if not re.fullmatch(r"-?\d+", raw):
                raise ValueError
            return int(raw)
        if typ == FLOAT:
            v = float(raw)
            if v != v:
                raise ValueError
            return v
        if typ == STR:
            if not raw:
                raise ValueError
            return raw
        if typ == NODES:
            return tuple(int(x) for x in _split(raw)) if raw else ()
        if typ == "modules":
            mods = _split(raw)
            unknown = [m for m in mods if m not in MODULES]
            if unknown:
                raise ScenarioError(f"unknown module {unknown[0]!r}", line, name)
            return frozenset(mods)
        if typ == "late":
            out = []
            for item in _split(raw):
                node, _, tick = item.partition("@")
                out.append((int(node), int(tick)))
            return tuple(out)
    except ScenarioError:
        raise
    except ValueError:
        pass
    raise ScenarioError(f"malformed {typ} value {raw!r}", line, name)


def _split(raw: str) -> list[str]:
    return [x.strip() for x in raw.split(",") if x.strip()]


def parse_scenario(text: str) -> ScenarioSpec:
    """Parse and validate; errors name the offending line and field."""
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    attacks: dict[int, dict] = {}
    policies: dict[int, dict] = {}
    section = None
    index = None
    seen_sections: set = set()
    for no, raw in enumerate(text.splitlines(), 1):
        ln = raw.strip()
        if not ln or ln.startswith("#"):
            continue
        m = _SECTION.match(ln)
        if m:
            section, idx = m.group(1), m.group(2)
            index = int(idx) if idx is not None else None
            if section in ("attacks", "policy"):
                if index is None:
                    raise ScenarioError(f"section [{section}] needs an index, e.g. [{section}.1]", no, section)
                bucket = attacks if section == "attacks" else policies
                if index in bucket:
                    raise ScenarioError(f"duplicate section [{section}.{index}]", no, section)
                bucket[index] = {"__line__": no}
            elif section not in _FIELDS or index is not None:
                raise ScenarioError(f"unknown section [{ln[1:-1]}]", no, ln[1:-1])
            elif section in seen_sections:
                raise ScenarioError(f"duplicate section [{section}]", no, section)
            seen_sections.add(section)
            continue
        m = _KV.match(ln)
        if not m:
            raise ScenarioError(f"expected 'key = value', got {ln!r}", no)
        key, raw_value = m.group(1), m.group(2).strip()
        if section is None:
            raise ScenarioError("key outside of any section", no, key)
        if section in ("attacks", "policy"):
            bucket = (attacks if section == "attacks" else policies)[index]
            if key in bucket:
                raise ScenarioError(f"duplicate key {key!r}", no, key)
            bucket[key] = (raw_value, no)
            continue
        typ = _FIELDS[section].get(key)
        if typ is None:
            raise ScenarioError(f"unknown key {key!r} in [{section}]", no, key)
        name = _RENAME.get((section, key), key)
        if name in values:
            raise ScenarioError(f"duplicate key {key!r}", no, key)
        values[name] = _value(typ, raw_value, no, key)
        lines[key] = no

    det_names = {f.name for f in fields(DetectorConfig)}
    det = {k: values.pop(k) for k in list(values) if k in det_names}
    if "enabled" in values:
        values["modules"] = values.pop("enabled")
    try:
        detector = DetectorConfig(**det)
    except ConfigError as exc:
        raise ScenarioError(str(exc), lines.get(exc.field), exc.field) from None
    spec = ScenarioSpec(**values, detector=detector,
                        attacks=tuple(_attack(attacks[i]) for i in sorted(attacks)),
                        policies=tuple(_policy(policies[i]) for i in sorted(policies)))
    validate(spec, lines)
    return spec


def _attack(raw: dict) -> AttackSpec:
    line = raw.pop("__line__")
    if "kind" not in raw:
        raise ScenarioError("attack section without kind", line, "kind")
    kind, kline = raw.pop("kind")
    schema = ATTACK_PARAMS.get(kind)
    if schema is None:
        raise ScenarioError(f"unknown attack kind {kind!r}", kline, "kind")
    params = []
    for name, (typ, default) in schema.items():
        if name in raw:
            v, no = raw.pop(name)
            params.append((name, _value(typ, v, no, name)))
        elif default is REQ:
            raise ScenarioError(f"attack {kind} needs {name}", line, name)
        else:
            params.append((name, default))
    if raw:
        name = sorted(raw)[0]
        raise ScenarioError(f"attack {kind} has no parameter {name!r}", raw[name][1], name)
    return AttackSpec(kind, tuple(params), line)


def _policy(raw: dict) -> PolicySpec:
    line = raw.pop("__line__")
    for need in ("tree",):
        if need not in raw:
            raise ScenarioError(f"policy section without {need}", line, need)
    role = raw.pop("role", ("sensor", line))[0]
    effect = raw.pop("effect", ("permit", line))[0]
    tree, tline = raw.pop("tree")
    if raw:
        name = sorted(raw)[0]
        raise ScenarioError(f"unknown key {name!r} in policy", raw[name][1], name)
    try:
        tree = abac.render_tree(abac.parse_tree(tree))
    except ConfigError as exc:
        raise ScenarioError(str(exc), tline, "tree") from None
    return PolicySpec(role, effect, tree, line)


def load_scenario(path) -> ScenarioSpec:
    return parse_scenario(Path(path).read_text())


# ---------------------------------------------------------------- rendering

def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ", ".join(str(x) for x in v)
    return str(v)


def render_scenario(spec: ScenarioSpec) -> str:
    d = spec.detector
    out = [
        "[scenario]", f"name = {spec.name}", f"seed = {spec.seed}", f"duration = {spec.duration}", "",
        "[topology]", f"clusters = {spec.clusters}", f"devices_per_cluster = {spec.devices_per_cluster}",
        f"link_loss_rate = {spec.link_loss_rate!r}", f"link_delay = {spec.link_delay}",
    ]
    if spec.late_join:
        out.append("late_join = " + ", ".join(f"{n}@{t}" for n, t in spec.late_join))
    out += ["", "[modules]", "enabled = " + ", ".join(m for m in MODULES if m in spec.modules), "",
            "[traffic]", f"reading_period = {spec.reading_period}", f"aggregate = {spec.aggregate}", "",
            "[crypto]", f"curve = {spec.curve}", f"key_lifetime = {spec.key_lifetime}", "",
            "[auth]", f"timeout = {spec.auth_timeout}", "",
            "[trust]", f"alpha = {spec.alpha!r}", f"tau = {spec.tau!r}", f"service_period = {spec.service_period}", "",
            "[detector]"]
    out += [f"{f.name} = {_fmt(getattr(d, f.name))}" for f in fields(DetectorConfig)]
    for i, att in enumerate(spec.attacks, 1):
        out += ["", f"[attacks.{i}]", f"kind = {att.kind}"]
        out += [f"{k} = {_fmt(v)}" for k, v in att.params]
    for i, pol in enumerate(spec.policies, 1):
        out += ["", f"[policy.{i}]", f"role = {pol.role}", f"effect = {pol.effect}", f"tree = {pol.tree}"]
    return "\n".join(out) + "\n"
