"""Selfish deviations: violations, perturbations (1-faults) and deflections."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import FrozenSet, Iterable, List, Optional, Tuple

from selfstab.algorithms import Algorithm, ProbContext, ProbSource, Rule, rule_probability
from selfstab.core import IN, OUT, Configuration, conflict, is_mis
from selfstab.graph import Graph

KINDS = ("none", "violation", "perturbation", "deflection")
POLICIES = ("always", "prob", "utility")


class DeviationError(ValueError):
    pass


@dataclass(frozen=True)
class DeviationModel:
    """Which deviations agents commit and how they decide.

    ``kinds`` may hold several of violation/perturbation/deflection at once.
    ``policy`` is ``always``, ``prob`` (deviate with probability ``w``) or
    ``utility`` (deviate only when a local look-ahead shows a gain).
    """

    kinds: FrozenSet[str] = frozenset()
    policy: str = "utility"
    w: float = 0.0

    def __post_init__(self):
        bad = set(self.kinds) - set(KINDS[1:])
        if bad:
            raise DeviationError(f"unknown deviation kind(s): {sorted(bad)}")
        if self.policy not in POLICIES:
            raise DeviationError(f"unknown deviation policy {self.policy!r}")
        if not 0.0 <= self.w <= 1.0:
            raise DeviationError("deviation probability w must lie in [0, 1]")

    @classmethod
    def parse(cls, kind: str, policy: str = "utility", w: float = 0.0) -> "DeviationModel":
        parts = {k.strip() for k in kind.replace(",", "+").split("+") if k.strip()}
        parts.discard("none")
        return cls(frozenset(parts), policy, w)

    def has(self, kind: str) -> bool:
        return kind in self.kinds


@dataclass(frozen=True)
class FaultEvent:
    agent: int
    variable: str
    before: object
    after: object
    round: int = 0

    def __post_init__(self):
        if self.before == self.after:
            raise DeviationError("a fault must change the variable")


# --- local look-ahead --------------------------------------------------------

def _honest_rules(alg: Algorithm) -> List[Rule]:
    # agents simulated in the look-ahead follow the rules, minus selfish exits
    return [r for r in alg.rules if not (r.leaves and r.prob_source in (ProbSource.PARAM_Q, ProbSource.GAME))]


def _could_fire(alg: Algorithm, rule: Rule, g: Graph, c: Configuration, v: int, ctx: Optional[ProbContext]) -> bool:
    if rule.prob_source in (ProbSource.ALWAYS, ProbSource.GAME):
        return True
    if ctx is None:
        return True
    return rule_probability(alg, rule, g, c, v, ctx) > 0


def covered_by_others(alg: Algorithm, g: Graph, c: Configuration, v: int,
                      ctx: Optional[ProbContext] = None, max_steps: Optional[int] = None) -> bool:
    """Can v's neighborhood settle with some neighbor as head while v stays OUT?

    ``c`` already holds v's deviating state. Only v's neighbors move; v and
    the two-hop boundary stay frozen. For each neighbor we try a sequential
    schedule that always favors that neighbor, then the lowest index.
    """
    if c[v].state != OUT:
        raise DeviationError("look-ahead expects the deviating agent to be OUT")
    movers = list(g.adjacency[v])
    if any(c[w].state == IN and not conflict(g, c, w) for w in movers):
        return True
    rules = _honest_rules(alg)
    bound = max_steps if max_steps is not None else 4 * (len(movers) + 1)
    for favored in movers:
        cur = list(c)
        order = [favored] + [w for w in movers if w != favored]
        for _ in range(bound):
            frozen = tuple(cur)
            step = None
            for w in order:
                for r in rules:
                    if r.guard(g, frozen, w) and _could_fire(alg, r, g, frozen, w, ctx):
                        step = (w, r)
                        break
                if step:
                    break
            if step is None:
                break
            w, r = step
            cur[w] = r.action(g, frozen, w)
        final = tuple(cur)
        if any(final[w].state == IN and not conflict(g, final, w) for w in movers):
            return True
    return False


def _without(c: Configuration, v: int) -> Configuration:
    out = list(c)
    out[v] = c[v].with_(state=OUT)
    return tuple(out)


def violation_profitable(alg: Algorithm, g: Graph, c: Configuration, v: int,
                         ctx: Optional[ProbContext] = None) -> bool:
    """Would abstaining from joining still leave v covered by a neighbor?"""
    return covered_by_others(alg, g, _without(c, v), v, ctx)


def leaving_profitable(alg: Algorithm, g: Graph, c: Configuration, v: int,
                       ctx: Optional[ProbContext] = None) -> bool:
    """Would a head that walks out end up covered by a neighbor?"""
    if c[v].state != IN:
        return False
    return covered_by_others(alg, g, _without(c, v), v, ctx)


def apply_violation(model: DeviationModel, alg: Algorithm, g: Graph, c: Configuration, v: int,
                    rule: Rule, draw: float, ctx: Optional[ProbContext] = None) -> bool:
    """Return True when v executes ``rule`` honestly, False when it skips it."""
    if not model.has("violation") or not rule.enters:
        return True
    if model.policy == "always":
        return False
    if model.policy == "prob":
        return not draw < model.w
    return not violation_profitable(alg, g, c, v, ctx)


def inject_perturbation(g: Graph, c: Configuration, v: int, round_: int = 0) -> Tuple[Configuration, FaultEvent]:
    if not is_mis(g, c):
        raise DeviationError("perturbations are injected into legitimate configurations only")
    if c[v].state != IN:
        raise DeviationError(f"node {v} is not a cluster-head")
    return _without(c, v), FaultEvent(v, "state", "IN", "OUT", round_)


def deflection_condition(g: Graph, c: Configuration, v: int) -> bool:
    """Some neighbor of the head v has v as its only IN neighbor."""
    if c[v].state != IN:
        return False
    for w in g.adjacency[v]:
        heads = [x for x in g.adjacency[w] if c[x].state == IN]
        if heads == [v]:
            return True
    return False


def detect_dead_end(alg: Algorithm, g: Graph, c: Configuration, v: int,
                    ctx: Optional[ProbContext] = None) -> bool:
    def enabled(x):
        return any(r.guard(g, c, x) for r in alg.rules)

    return enabled(v) and not any(enabled(w) for w in g.adjacency[v])


def write_fault_log(events: Iterable[FaultEvent]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["round", "agent", "variable", "before", "after"])
    for e in events:
        w.writerow([e.round, e.agent, e.variable, e.before, e.after])
    return buf.getvalue()
