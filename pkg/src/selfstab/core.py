"""Agent states, configurations, the local predicates and the gain function."""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from enum import IntEnum
from typing import FrozenSet, Iterable, Iterator, List, Optional, Sequence, Set, Tuple

from selfstab.graph import Graph


class State(IntEnum):
    OUT = 0
    IN = 1


IN = State.IN
OUT = State.OUT


@dataclass(frozen=True)
class AgentState:
    state: State = OUT
    parent: Optional[int] = None
    parents: FrozenSet[int] = field(default_factory=frozenset)

    def with_(self, **changes) -> "AgentState":
        return AgentState(
            changes.get("state", self.state),
            changes.get("parent", self.parent),
            frozenset(changes.get("parents", self.parents)),
        )


# A configuration is an immutable tuple with one AgentState per node.
Configuration = Tuple[AgentState, ...]


@dataclass(frozen=True)
class GainParams:
    theta: float = 10.0
    zeta: float = 1.0

    def __post_init__(self):
        if not 0 < self.zeta < self.theta:
            raise ValueError("gain parameters need 0 < zeta < theta")


def config_from_states(states: Iterable[int]) -> Configuration:
    return tuple(AgentState(State(s)) for s in states)


def config_from_in_set(n: int, in_set: Iterable[int]) -> Configuration:
    members = set(in_set)
    return tuple(AgentState(IN if v in members else OUT) for v in range(n))


def all_out(n: int) -> Configuration:
    return tuple(AgentState() for _ in range(n))


def in_set(c: Configuration) -> Set[int]:
    return {v for v, a in enumerate(c) if a.state == IN}


def pending(g: Graph, c: Configuration, v: int) -> bool:
    return c[v].state == OUT and all(c[w].state == OUT for w in g.adjacency[v])


def conflict(g: Graph, c: Configuration, v: int) -> bool:
    return c[v].state == IN and any(c[w].state == IN for w in g.adjacency[v])


def is_mis(g: Graph, c: Configuration) -> bool:
    for v in range(g.n):
        nbr_in = any(c[w].state == IN for w in g.adjacency[v])
        if c[v].state == IN and nbr_in:
            return False
        if c[v].state == OUT and not nbr_in:
            return False
    return True


def system_property(g: Graph, c: Configuration) -> bool:
    return not any(pending(g, c, v) or conflict(g, c, v) for v in range(g.n))


def gain(g: Graph, c: Configuration, v: int, params: GainParams = GainParams()) -> float:
    if c[v].state == IN:
        return params.theta - params.zeta
    if pending(g, c, v):
        return 0.0
    return params.theta


def state_configs(n: int) -> Iterator[Configuration]:
    """Every IN/OUT assignment with secondary variables cleared."""
    for bits in itertools.product((OUT, IN), repeat=n):
        yield tuple(AgentState(b) for b in bits)


def maximal_independent_sets(g: Graph) -> List[FrozenSet[int]]:
    """Brute force; intended for small graphs."""
    return [frozenset(in_set(c)) for c in state_configs(g.n) if is_mis(g, c)]


def serialize(c: Configuration, declared: Sequence[str] = ("state",)) -> str:
    """'I'/'O' per node, then any declared secondary variables in node order."""
    out = "".join("I" if a.state == IN else "O" for a in c)
    if "parent" in declared:
        out += ";parent=" + ",".join("-" if a.parent is None else str(a.parent) for a in c)
    if "parents" in declared:
        out += ";parents=" + ",".join("+".join(map(str, sorted(a.parents))) or "-" for a in c)
    return out


def deserialize(text: str) -> Configuration:
    head, *rest = text.split(";")
    states = [IN if ch == "I" else OUT for ch in head]
    parent: List[Optional[int]] = [None] * len(states)
    parents: List[FrozenSet[int]] = [frozenset()] * len(states)
    for part in rest:
        key, _, val = part.partition("=")
        items = val.split(",")
        if key == "parent":
            parent = [None if x == "-" else int(x) for x in items]
        elif key == "parents":
            parents = [frozenset() if x == "-" else frozenset(int(y) for y in x.split("+")) for x in items]
        else:
            raise ValueError(f"unknown variable {key!r}")
    return tuple(AgentState(s, p, ps) for s, p, ps in zip(states, parent, parents))


def digest(c: Configuration, declared: Sequence[str] = ("state",)) -> str:
    return hashlib.sha256(serialize(c, declared).encode()).hexdigest()[:16]
