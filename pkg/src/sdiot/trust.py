"""Encounter histories, EWMA reputation and neighbour-weighted trust.

Reputation of ``b`` as seen by ``a`` is an exponentially weighted moving
average of binary encounter outcomes (1 = cooperate, 0 = defect), started
at 0.5.  The EWMA is the estimator used for the expected reputation given
the history.  Trust of a node is the weighted sum of its neighbours'
trust values towards it.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .errors import TrustError

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.1
DEFAULT_TAU = 0.7
PRIOR = 0.5


@dataclass(frozen=True)
class Encounter:
    a: int
    b: int
    index: int
    outcome: int
    tick: int = 0

    def __post_init__(self):
        if self.outcome not in (0, 1):
            raise TrustError(f"encounter outcome must be 0 or 1, got {self.outcome!r}")


@dataclass(frozen=True)
class TrustState:
    a: int
    b: int
    reputation: float = PRIOR
    n: int = 0


def record_encounter(state: TrustState, outcome: int, alpha: float = DEFAULT_ALPHA) -> TrustState:
    if outcome not in (0, 1):
        raise TrustError(f"encounter outcome must be 0 or 1, got {outcome!r}")
    if not 0.0 < alpha <= 1.0:
        raise TrustError(f"alpha must be in (0, 1], got {alpha}")
    r = (1.0 - alpha) * state.reputation + alpha * outcome
    # convex combination of values in [0, 1]; clamp only guards rounding
    r = min(1.0, max(0.0, r))
    return replace(state, reputation=r, n=state.n + 1)


def trust_value(state: TrustState) -> float:
    return state.reputation


@dataclass(frozen=True)
class NeighborWeights:
    weights: tuple[tuple[int, float], ...]

    @classmethod
    def uniform(cls, nodes: Iterable[int]) -> "NeighborWeights":
        nodes = list(nodes)
        return cls(tuple((n, 1.0) for n in nodes)).normalized()

    def normalized(self) -> "NeighborWeights":
        if any(w < 0 or math.isnan(w) for _, w in self.weights):
            raise TrustError("neighbour weights must be non-negative")
        total = math.fsum(w for _, w in self.weights)
        if total <= 0:
            raise TrustError("neighbour weights sum to zero")
        return NeighborWeights(tuple((n, w / total) for n, w in self.weights))


def weighted_trust(target: int, neighbors: NeighborWeights,
                   pair_states: Mapping[int, TrustState]) -> float:
    """Sum over neighbours r of w_r * T(r -> target)."""
    if not neighbors.weights:
        raise TrustError(f"trust of node {target} undefined without neighbours")
    nw = neighbors.normalized()
    terms = []
    for node, w in nw.weights:
        state = pair_states.get(node)
        if state is None:
            raise TrustError(f"neighbour {node} has no trust state towards {target}")
        if state.b != target:
            raise TrustError(f"state {state.a}->{state.b} is not about node {target}")
        terms.append(w * trust_value(state))
    return min(1.0, max(0.0, math.fsum(terms)))


@dataclass
class Assessment:
    allow: bool
    trust: dict[int, float]
    offending: list[int] = field(default_factory=list)
    reason: str = ""


class TrustStore:
    """Per-ordered-pair trust states plus the request assessment logic.

    ``neighbors_of(node)`` supplies the observers whose opinion about
    ``node`` counts; uniform weights unless ``weights_of`` overrides.
    """

    def __init__(self, alpha: float = DEFAULT_ALPHA, tau: float = DEFAULT_TAU,
                 neighbors_of: Optional[Callable[[int], Sequence[int]]] = None,
                 is_registered: Optional[Callable[[int], bool]] = None):
        self.alpha = alpha
        self.tau = tau
        self.states: dict[tuple[int, int], TrustState] = {}
        self.history: dict[tuple[int, int], list[Encounter]] = {}
        self.neighbors_of = neighbors_of or (lambda node: [])
        self.is_registered = is_registered or (lambda node: True)
        self.weights_override: dict[int, NeighborWeights] = {}

    def state(self, a: int, b: int) -> TrustState:
        return self.states.get((a, b)) or TrustState(a, b)

    def record(self, a: int, b: int, outcome: int, tick: int = 0) -> TrustState:
        prev = self.state(a, b)
        new = record_encounter(prev, outcome, self.alpha)
        self.states[(a, b)] = new
        self.history.setdefault((a, b), []).append(Encounter(a, b, new.n, outcome, tick))
        return new

    def node_trust(self, node: int) -> float:
        weights = self.weights_override.get(node)
        if weights is None:
            weights = NeighborWeights.uniform(self.neighbors_of(node))
        states = {r: self.state(r, node) for r, _ in weights.weights}
        return weighted_trust(node, weights, states)

    def assess_request(self, requester, serving_nodes: Sequence[int]) -> Assessment:
        """Allow iff every serving node's trust reaches the threshold."""
        values: dict[int, float] = {}
        offending = []
        for node in serving_nodes:
            if not self.is_registered(node):
                log.info("trust: deny %s, node %d not registered", requester, node)
                return Assessment(False, values, [node], f"node {node} not registered")
            try:
                values[node] = self.node_trust(node)
            except TrustError as exc:
                return Assessment(False, values, [node], str(exc))
            if values[node] < self.tau:
                offending.append(node)
        if offending:
            reason = "below threshold: " + ",".join(str(n) for n in offending)
            return Assessment(False, values, offending, reason)
        return Assessment(True, values)

    def table(self) -> list[TrustState]:
        return [self.states[k] for k in sorted(self.states)]
