"""Attribute-based access control with boolean access trees.

Trees combine attribute predicates with AND, OR and k-of-m threshold gates.
Evaluation is total: a missing attribute, or a comparison between values of
incompatible types, makes the leaf false instead of raising.

Templates may refer to registration-time attributes through ``$name``
placeholders; :func:`derive_policy` binds them to a concrete device.

Text form (used by scenario files)::

    AND(msg_type in [reading, service], dst = 0, cluster = $cluster)
    ATLEAST(2, role = sensor, epoch >= 1, trust_band != low)
"""
from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

from .errors import ConfigError

log = logging.getLogger(__name__)

Scalar = Union[str, int]
AttributeSet = Mapping[str, Scalar]

OPS = ("=", "!=", "<", ">=", "in")


@dataclass(frozen=True)
class Placeholder:
    name: str

    def __str__(self) -> str:
        return f"${self.name}"


@dataclass(frozen=True)
class Leaf:
    name: str
    op: str
    value: object  # Scalar, tuple of Scalar for "in", or Placeholder

    def __post_init__(self):
        if self.op not in OPS:
            raise ConfigError(f"unknown predicate operator {self.op!r}")
        if self.op == "in" and not isinstance(self.value, tuple):
            raise ConfigError("'in' needs a list of values")


class GateKind(enum.Enum):
    AND = "AND"
    OR = "OR"
    THRESHOLD = "ATLEAST"


@dataclass(frozen=True)
class Gate:
    kind: GateKind
    children: tuple["AccessTree", ...]
    k: int = 0

    def __post_init__(self):
        if not self.children:
            raise ConfigError(f"{self.kind.value} gate without children")
        if self.kind == GateKind.THRESHOLD and not 1 <= self.k <= len(self.children):
            raise ConfigError(f"threshold k={self.k} outside 1..{len(self.children)}")


AccessTree = Union[Gate, Leaf]


def AND(*children) -> Gate:
    return Gate(GateKind.AND, tuple(children))


def OR(*children) -> Gate:
    return Gate(GateKind.OR, tuple(children))


def ATLEAST(k: int, *children) -> Gate:
    return Gate(GateKind.THRESHOLD, tuple(children), k)


def _leaf_true(leaf: Leaf, attrs: AttributeSet) -> bool:
    if leaf.name not in attrs:
        return False
    have = attrs[leaf.name]
    want = leaf.value
    if isinstance(want, Placeholder):
        return False  # unbound template
    if leaf.op == "=":
        return have == want
    if leaf.op == "!=":
        return have != want
    if leaf.op == "in":
        return have in want
    if isinstance(have, bool) or isinstance(want, bool):
        return False
    if type(have) is not type(want):
        return False
    return have < want if leaf.op == "<" else have >= want


def evaluate(tree: AccessTree, attrs: AttributeSet) -> bool:
    if isinstance(tree, Leaf):
        return _leaf_true(tree, attrs)
    results = (evaluate(c, attrs) for c in tree.children)
    if tree.kind == GateKind.AND:
        return all(results)
    if tree.kind == GateKind.OR:
        return any(results)
    hits = 0
    for r in results:
        hits += r
        if hits >= tree.k:
            return True
    return False


def placeholders(tree: AccessTree) -> set[str]:
    if isinstance(tree, Leaf):
        vals = tree.value if isinstance(tree.value, tuple) else (tree.value,)
        return {v.name for v in vals if isinstance(v, Placeholder)}
    out: set[str] = set()
    for c in tree.children:
        out |= placeholders(c)
    return out


def bind(tree: AccessTree, binding: Mapping[str, Scalar]) -> AccessTree:
    if isinstance(tree, Leaf):
        def sub(v):
            if isinstance(v, Placeholder):
                if v.name not in binding:
                    raise ConfigError(f"template references unknown attribute ${v.name}")
                return binding[v.name]
            return v
        value = tuple(sub(v) for v in tree.value) if isinstance(tree.value, tuple) else sub(tree.value)
        return Leaf(tree.name, tree.op, value)
    return Gate(tree.kind, tuple(bind(c, binding) for c in tree.children), tree.k)


# ---------------------------------------------------------------- text form

_TOKEN = re.compile(r"\s*(?:(\$?[A-Za-z_][A-Za-z0-9_\-]*)|(-?\d+)|(\"[^\"]*\")|(!=|>=|<|=|\(|\)|\[|\]|,))")


def _tokenize(text: str) -> list[str]:
    pos, out = 0, []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ConfigError(f"cannot parse access tree near {text[pos:pos + 12]!r}")
        out.append(m.group(0).strip())
        pos = m.end()
    return out


def _scalar(tok: str):
    if tok.startswith("$"):
        return Placeholder(tok[1:])
    if tok.startswith('"'):
        return tok[1:-1]
    if re.fullmatch(r"-?\d+", tok):
        return int(tok)
    return tok


def parse_tree(text: str) -> AccessTree:
    toks = _tokenize(text)
    pos = 0

    def peek():
        return toks[pos] if pos < len(toks) else None

    def take(expected=None):
        nonlocal pos
        if pos >= len(toks):
            raise ConfigError("access tree ends unexpectedly")
        tok = toks[pos]
        if expected is not None and tok != expected:
            raise ConfigError(f"expected {expected!r} in access tree, got {tok!r}")
        pos += 1
        return tok

    def node():
        head = take()
        upper = head.upper()
        if upper in ("AND", "OR", "ATLEAST") and peek() == "(":
            take("(")
            k = 0
            if upper == "ATLEAST":
                k = int(take())
                take(",")
            kids = [node()]
            while peek() == ",":
                take(",")
                kids.append(node())
            take(")")
            if upper == "AND":
                return AND(*kids)
            if upper == "OR":
                return OR(*kids)
            return ATLEAST(k, *kids)
        op = take()
        if op not in OPS:
            raise ConfigError(f"unknown predicate operator {op!r}")
        if op == "in":
            take("[")
            vals = [_scalar(take())]
            while peek() == ",":
                take(",")
                vals.append(_scalar(take()))
            take("]")
            return Leaf(head, op, tuple(vals))
        return Leaf(head, op, _scalar(take()))

    tree = node()
    if pos != len(toks):
        raise ConfigError(f"trailing tokens in access tree: {' '.join(toks[pos:])}")
    return tree


def _fmt_scalar(v) -> str:
    if isinstance(v, Placeholder):
        return str(v)
    if isinstance(v, int):
        return str(v)
    if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_\-]*", v) and v.upper() not in ("AND", "OR", "ATLEAST", "IN"):
        return v
    return f'"{v}"'


def render_tree(tree: AccessTree) -> str:
    if isinstance(tree, Leaf):
        if tree.op == "in":
            return f"{tree.name} in [{', '.join(_fmt_scalar(v) for v in tree.value)}]"
        return f"{tree.name} {tree.op} {_fmt_scalar(tree.value)}"
    inner = ", ".join(render_tree(c) for c in tree.children)
    if tree.kind == GateKind.THRESHOLD:
        return f"ATLEAST({tree.k}, {inner})"
    return f"{tree.kind.value}({inner})"


# ---------------------------------------------------------------- policies

class Effect(enum.Enum):
    PERMIT = "permit"
    DENY = "deny"


@dataclass(frozen=True)
class PolicyTemplate:
    """Tree with ``$attr`` placeholders, applied to devices whose role matches."""

    name: str
    tree: AccessTree
    effect: Effect = Effect.PERMIT
    role: Optional[str] = "sensor"


@dataclass(frozen=True)
class Policy:
    subject: int
    tree: AccessTree
    effect: Effect
    stored_at: int
    template: str = ""
    binding: tuple[tuple[str, Scalar], ...] = ()


@dataclass(frozen=True)
class Decision:
    permit: bool
    reason: str = ""
    policy: Optional[Policy] = None

    def __bool__(self) -> bool:
        return self.permit


DEFAULT_SENSOR_TEMPLATE = PolicyTemplate(
    "sensor-uplink",
    parse_tree("AND(role = sensor, cluster = $cluster, dst = 0, "
               "msg_type in [reading, join, auth, service])"),
)


def derive_policy(record_attrs: Mapping[str, Scalar], template: PolicyTemplate,
                  subject: int, tick: int = 0) -> Policy:
    """Instantiate ``template`` for one device's registration attributes."""
    needed = sorted(placeholders(template.tree))
    missing = [n for n in needed if n not in record_attrs]
    if missing:
        raise ConfigError(f"template {template.name!r} references unknown attribute(s) "
                          + ", ".join("$" + m for m in missing))
    binding = tuple((n, record_attrs[n]) for n in needed)
    return Policy(subject, bind(template.tree, dict(binding)), template.effect, tick,
                  template.name, binding)


class PolicyStore:
    """One live policy per subject; first match wins, default deny."""

    def __init__(self):
        self.policies: dict[int, Policy] = {}
        self.superseded: list[Policy] = []
        self.denials = 0

    def put(self, policy: Policy) -> None:
        old = self.policies.pop(policy.subject, None)
        if old is not None:
            self.superseded.append(old)
        self.policies[policy.subject] = policy

    def remove(self, subject: int) -> None:
        old = self.policies.pop(subject, None)
        if old is not None:
            self.superseded.append(old)

    def get(self, subject: int) -> Optional[Policy]:
        return self.policies.get(subject)

    def __len__(self) -> int:
        return len(self.policies)


def flow_attributes(flow) -> dict[str, Scalar]:
    """Attributes of a flow key ``(src, dst, msg_type)`` or a record with ``.key``."""
    src, dst, msg_type = flow if isinstance(flow, tuple) else flow.key
    name = msg_type.name.lower() if hasattr(msg_type, "name") else str(msg_type)
    return {"src": src, "dst": dst, "msg_type": name}


def authorize_flow(store: PolicyStore, flow, attrs: AttributeSet) -> Decision:
    """Evaluate the source's live policy on subject + flow attributes.

    ``attrs`` are the subject's current attributes; flow attributes
    (src, dst, msg_type) are layered on top.  No policy, or a tree that
    does not hold, means deny.
    """
    full = {**attrs, **flow_attributes(flow)}
    policy = store.get(full["src"])
    if policy is not None and evaluate(policy.tree, full):
        if policy.effect == Effect.PERMIT:
            return Decision(True, "permit", policy)
        store.denials += 1
        return Decision(False, "explicit-deny", policy)
    store.denials += 1
    return Decision(False, "no-matching-permit", policy)
