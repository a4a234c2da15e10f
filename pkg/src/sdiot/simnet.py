"""Deterministic discrete-event simulation of a clustered IoT network.

Layout is a static star per cluster: every device hangs off its cluster
head, every cluster head off the gateway (node 0).  Time is an integer tick
counter.  All randomness comes from one run seed, split into independent
``random.Random`` streams per (node, purpose) so that adding a node or a
consumer never perturbs the streams of the others.
"""
from __future__ import annotations

import enum
import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Protocol, Sequence

from .errors import ConfigError

GATEWAY_ID = 0
MAX_NODE_ID = 0xFFFFFFFE  # 0xFFFFFFFF is the wire wildcard


def derive_seed(seed: int, *labels) -> int:
    text = "|".join([str(seed), *map(str, labels)])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


@dataclass(frozen=True)
class TopologySpec:
    clusters: int
    devices_per_cluster: int
    link_loss_rate: float = 0.0
    seed: int = 0
    link_delay: int = 1

    def validate(self) -> None:
        if self.clusters < 1:
            raise ConfigError("topology needs at least one cluster")
        if self.devices_per_cluster < 1:
            raise ConfigError("topology needs at least one device per cluster")
        if not 0.0 <= self.link_loss_rate <= 1.0:
            raise ConfigError(f"link_loss_rate {self.link_loss_rate} not in [0, 1]")
        if self.link_delay < 1:
            raise ConfigError("link_delay must be >= 1 tick")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")


class Role(enum.Enum):
    GATEWAY = "gateway"
    HEAD = "head"
    DEVICE = "device"
    ROGUE = "rogue"


@dataclass
class NodeInfo:
    id: int
    role: Role
    cluster: Optional[int] = None
    head: Optional[int] = None
    status: str = "pending"


class EventKind(str, enum.Enum):
    DELIVER = "deliver"
    DROP = "drop"
    TIMER = "timer"
    ADVERSARY = "adversary"


@dataclass(frozen=True)
class SimEvent:
    tick: int
    kind: EventKind
    src: int
    dst: int
    payload: bytes = b""

    def line(self) -> str:
        return f"{self.tick} {self.kind.value} {self.src} {self.dst} {self.payload.hex()}"


class EventLog(list):
    """Append-only list of processed :class:`SimEvent`."""

    def to_bytes(self) -> bytes:
        return "".join(e.line() + "\n" for e in self).encode()


class FrameHandler(Protocol):
    def on_frame(self, net: "Network", frame: bytes, sender: int) -> None: ...


@dataclass
class LinkStats:
    sends: int = 0
    delivers: int = 0
    drops: int = 0


@dataclass(order=True)
class _Queued:
    tick: int
    seq: int
    kind: EventKind = field(compare=False)
    src: int = field(compare=False)
    dst: int = field(compare=False)
    payload: bytes = field(compare=False, default=b"")
    callback: Optional[Callable[[], None]] = field(compare=False, default=None)


class Network:
    def __init__(self, spec: TopologySpec):
        self.spec = spec
        self.nodes: dict[int, NodeInfo] = {}
        self.links: dict[tuple[int, int], LinkStats] = {}
        self.clusters: dict[int, list[int]] = {}
        self.handlers: dict[int, FrameHandler] = {}
        self.tick = 0
        self.log = EventLog()
        self._queue: list[_Queued] = []
        self._seq = 0
        self._rngs: dict[tuple, random.Random] = {}
        self._taps: dict[tuple[int, int], list[Callable[[bytes, int], None]]] = {}
        self._interceptors: dict[tuple[int, int], list[Callable[[bytes, int], bytes]]] = {}
        self.adversaries: list["Adversary"] = []

    # ------------------------------------------------------------ structure

    def add_node(self, info: NodeInfo) -> None:
        if info.id in self.nodes:
            raise ConfigError(f"duplicate node id {info.id}")
        if not 0 <= info.id <= MAX_NODE_ID:
            raise ConfigError(f"node id {info.id} out of range")
        self.nodes[info.id] = info

    def connect(self, a: int, b: int) -> None:
        for x in (a, b):
            if x not in self.nodes:
                raise ConfigError(f"unknown node {x}")
        self.links.setdefault((a, b), LinkStats())
        self.links.setdefault((b, a), LinkStats())

    def add_rogue(self, node_id: int, head: int) -> NodeInfo:
        if self.nodes.get(head, NodeInfo(-1, Role.DEVICE)).role != Role.HEAD:
            raise ConfigError(f"rogue node {node_id} must attach to a cluster head, got {head}")
        info = NodeInfo(node_id, Role.ROGUE, cluster=self.nodes[head].cluster, head=head)
        self.add_node(info)
        self.connect(node_id, head)
        return info

    def attach(self, node_id: int, handler: FrameHandler) -> None:
        if node_id not in self.nodes:
            raise ConfigError(f"unknown node {node_id}")
        self.handlers[node_id] = handler

    @property
    def heads(self) -> list[int]:
        return [n.id for n in self.nodes.values() if n.role == Role.HEAD]

    @property
    def devices(self) -> list[int]:
        return [n.id for n in self.nodes.values() if n.role == Role.DEVICE]

    def head_of(self, node_id: int) -> Optional[int]:
        return self.nodes[node_id].head if node_id in self.nodes else None

    def has_link(self, a: int, b: int) -> bool:
        return (a, b) in self.links

    # ------------------------------------------------------------ randomness

    def rng(self, node: int, purpose: str) -> random.Random:
        key = (node, purpose)
        r = self._rngs.get(key)
        if r is None:
            r = self._rngs[key] = random.Random(derive_seed(self.spec.seed, node, purpose))
        return r

    # ------------------------------------------------------------ events

    def _push(self, tick: int, kind: EventKind, src: int, dst: int,
              payload: bytes = b"", callback=None) -> None:
        if tick < self.tick:
            raise ValueError(f"cannot schedule at tick {tick} < now {self.tick}")
        heapq.heappush(self._queue, _Queued(tick, self._seq, kind, src, dst, payload, callback))
        self._seq += 1

    def send(self, src: int, dst: int, frame: bytes) -> None:
        """Put a frame on the (src, dst) link; arrives after the link delay."""
        stats = self.links.get((src, dst))
        if stats is None:
            raise ConfigError(f"no link {src}->{dst}")
        for tap in self._taps.get((src, dst), ()):
            tap(frame, self.tick)
        for mutate in self._interceptors.get((src, dst), ()):
            frame = mutate(frame, self.tick)
        stats.sends += 1
        lost = self.rng(src, f"link:{dst}").random() < self.spec.link_loss_rate
        kind = EventKind.DROP if lost else EventKind.DELIVER
        self._push(self.tick + self.spec.link_delay, kind, src, dst, frame)

    def schedule(self, at: int, node: int, tag: str, callback: Callable[[], None],
                 kind: EventKind = EventKind.TIMER) -> None:
        self._push(at, kind, node, node, tag.encode(), callback)

    def add_tap(self, link: tuple[int, int], fn: Callable[[bytes, int], None]) -> None:
        if link not in self.links:
            raise ConfigError(f"no link {link[0]}->{link[1]}")
        self._taps.setdefault(link, []).append(fn)

    def add_interceptor(self, link: tuple[int, int], fn: Callable[[bytes, int], bytes]) -> None:
        if link not in self.links:
            raise ConfigError(f"no link {link[0]}->{link[1]}")
        self._interceptors.setdefault(link, []).append(fn)

    def run_until(self, tick: int) -> list[SimEvent]:
        """Process every queued event with timestamp <= tick, return the delta."""
        if tick < self.tick:
            raise ValueError(f"run_until({tick}) is before current tick {self.tick}")
        start = len(self.log)
        while self._queue and self._queue[0].tick <= tick:
            q = heapq.heappop(self._queue)
            self.tick = q.tick
            self.log.append(SimEvent(q.tick, q.kind, q.src, q.dst, q.payload))
            if q.kind == EventKind.DELIVER:
                self.links[(q.src, q.dst)].delivers += 1
                handler = self.handlers.get(q.dst)
                if handler is not None:
                    handler.on_frame(self, q.payload, q.src)
            elif q.kind == EventKind.DROP:
                self.links[(q.src, q.dst)].drops += 1
            elif q.callback is not None:
                q.callback()
        self.tick = tick
        return self.log[start:]

    @property
    def pending(self) -> int:
        return len(self._queue)


def build_topology(spec: TopologySpec) -> Network:
    """Gateway 0, heads 1..C, devices numbered cluster by cluster after the heads."""
    spec.validate()
    net = Network(spec)
    net.add_node(NodeInfo(GATEWAY_ID, Role.GATEWAY, status="registered"))
    next_id = spec.clusters + 1
    for c in range(spec.clusters):
        head = c + 1
        net.add_node(NodeInfo(head, Role.HEAD, cluster=c))
        net.connect(head, GATEWAY_ID)
        members = []
        for _ in range(spec.devices_per_cluster):
            net.add_node(NodeInfo(next_id, Role.DEVICE, cluster=c, head=head))
            net.connect(next_id, head)
            members.append(next_id)
            next_id += 1
        net.clusters[c] = members
    return net


def run_until(network: Network, tick: int) -> list[SimEvent]:
    return network.run_until(tick)


# ---------------------------------------------------------------- adversary

@dataclass
class Tap:
    """Record every frame sent on ``link``; ``on_frame`` may react to it."""

    link: tuple[int, int]
    on_frame: Optional[Callable[["Adversary", bytes, int], None]] = None


@dataclass
class Tamper:
    """Rewrite frames on ``link`` during [start, end).

    ``mutate(frame, rng)`` returns the replacement frame or ``None`` to
    leave the frame untouched.
    """

    link: tuple[int, int]
    start: int
    end: int
    mutate: Callable[[bytes, random.Random], Optional[bytes]]


@dataclass
class Replay:
    """Re-send the ``index``-th frame seen on ``link`` (after ``select``) at ``at``."""

    link: tuple[int, int]
    at: int
    index: int = 0
    copies: int = 1
    select: Optional[Callable[[bytes], bool]] = None


@dataclass
class Flood:
    """Inject ``rate`` frames per tick on ``link`` during [start, end)."""

    link: tuple[int, int]
    rate: float
    start: int
    end: int
    make_frame: Callable[[int, int], bytes]  # (sequence number, tick) -> frame


@dataclass
class FakeIdSend:
    """Send frames claiming another identity, ``count`` times every ``interval`` ticks."""

    link: tuple[int, int]
    at: int
    claimed: int
    make_frame: Callable[[int, int], bytes]
    count: int = 1
    interval: int = 1


AdversaryAction = Tap | Tamper | Replay | Flood | FakeIdSend


@dataclass
class AdversaryScript:
    actions: list = field(default_factory=list)
    rogue_nodes: list[tuple[int, int]] = field(default_factory=list)  # (node, head)
    name: str = "adversary"


class Adversary:
    """Runtime side of an attached script: transcripts plus an injection API."""

    def __init__(self, net: Network, script: AdversaryScript, ident: int):
        self.net = net
        self.script = script
        self.ident = ident
        self.transcripts: dict[tuple[int, int], list[tuple[int, bytes]]] = {}
        self.injected = 0
        self.tampered = 0
        self.rng = random.Random(derive_seed(net.spec.seed, "adversary", ident, script.name))

    def transcript(self, link: tuple[int, int]) -> list[bytes]:
        return [f for _, f in self.transcripts.get(link, [])]

    def inject(self, link: tuple[int, int], frame: bytes, at: Optional[int] = None) -> None:
        when = self.net.tick if at is None else at

        def fire():
            self.injected += 1
            self.net.send(link[0], link[1], frame)

        self.net.schedule(when, link[0], f"inject>{link[1]}", fire, kind=EventKind.ADVERSARY)


def _check_link(net: Network, link) -> None:
    a, b = link
    for n in (a, b):
        if n not in net.nodes:
            raise ConfigError(f"adversary script references unknown node {n}")
    if not net.has_link(a, b):
        raise ConfigError(f"adversary script references missing link {a}->{b}")


def attach_adversary(net: Network, script: AdversaryScript) -> Adversary:
    """Validate ``script`` against ``net`` and schedule its actions."""
    for node, head in script.rogue_nodes:
        if node not in net.nodes:
            net.add_rogue(node, head)
    for action in script.actions:
        _check_link(net, action.link)
    adv = Adversary(net, script, ident=len(net.adversaries))
    net.adversaries.append(adv)
    for action in script.actions:
        _install(net, adv, action)
    return adv


def _record(adv: Adversary, link):
    log = adv.transcripts.setdefault(link, [])

    def tap(frame: bytes, tick: int) -> None:
        log.append((tick, frame))
    return tap


def _install(net: Network, adv: Adversary, action) -> None:
    link = action.link
    if isinstance(action, Tap):
        record = _record(adv, link)

        def tap(frame, tick, _a=action):
            record(frame, tick)
            if _a.on_frame is not None:
                _a.on_frame(adv, frame, tick)
        net.add_tap(link, tap)
    elif isinstance(action, Tamper):
        def mutate(frame, tick, _a=action):
            if not _a.start <= tick < _a.end:
                return frame
            out = _a.mutate(frame, adv.rng)
            if out is None or out == frame:
                return frame
            adv.tampered += 1
            net.log.append(SimEvent(tick, EventKind.ADVERSARY, link[0], link[1], b"tamper"))
            return out
        net.add_interceptor(link, mutate)
    elif isinstance(action, Replay):
        seen: list[bytes] = []

        def capture(frame, tick, _a=action):
            if _a.select is None or _a.select(frame):
                seen.append(frame)
        net.add_tap(link, capture)

        def fire(_a=action):
            if _a.index < len(seen):
                for _ in range(_a.copies):
                    adv.injected += 1
                    net.send(link[0], link[1], seen[_a.index])
        net.schedule(action.at, link[0], f"replay>{link[1]}", fire, kind=EventKind.ADVERSARY)
    elif isinstance(action, Flood):
        if action.rate <= 0 or action.end <= action.start:
            return
        counter = [0]

        def burst(t, _a=action):
            n = int((t - _a.start + 1) * _a.rate) - int((t - _a.start) * _a.rate)
            for _ in range(n):
                adv.injected += 1
                net.send(link[0], link[1], _a.make_frame(counter[0], t))
                counter[0] += 1
            if t + 1 < _a.end:
                net.schedule(t + 1, link[0], f"flood>{link[1]}", lambda: burst(t + 1),
                             kind=EventKind.ADVERSARY)
        net.schedule(action.start, link[0], f"flood>{link[1]}", lambda: burst(action.start),
                     kind=EventKind.ADVERSARY)
    elif isinstance(action, FakeIdSend):
        for i in range(action.count):
            t = action.at + i * action.interval

            def fire(i=i, t=t, _a=action):
                adv.injected += 1
                net.send(link[0], link[1], _a.make_frame(i, t))
            net.schedule(t, link[0], f"fake:{action.claimed}>{link[1]}", fire,
                         kind=EventKind.ADVERSARY)
    else:
        raise ConfigError(f"unknown adversary action {type(action).__name__}")
