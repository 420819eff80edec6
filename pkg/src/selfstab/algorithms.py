"""The six MIS rule sets and the id-peeling reference construction.

Each algorithm is a list of guarded rules. A rule's guard is a pure
predicate over ``(graph, configuration, node)``; its action returns the
node's new AgentState. Where a rule fires only with some probability the
rule names the source of that probability (a parameter or the game).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, FrozenSet, List, Optional, Set, Tuple

from selfstab.core import IN, OUT, AgentState, Configuration, conflict, pending
from selfstab.graph import Graph


class AlgorithmError(ValueError):
    pass


class ContractViolation(RuntimeError):
    """A rule was executed while its guard was false."""


class ProbSource(Enum):
    ALWAYS = "always"
    PARAM_P = "p"
    PARAM_Q = "q"
    PARAM_PC = "pc"
    GAME = "game"


Guard = Callable[[Graph, Configuration, int], bool]
Action = Callable[[Graph, Configuration, int], AgentState]


@dataclass(frozen=True)
class Rule:
    index: int
    guard: Guard
    action: Action
    prob_source: ProbSource
    touches: FrozenSet[str]
    # rules that write state := IN are the ones a selfish agent may refuse
    enters: bool = False
    leaves: bool = False

    @property
    def name(self) -> str:
        return f"R{self.index}"


@dataclass(frozen=True)
class Algorithm:
    name: str
    rules: Tuple[Rule, ...]
    declared_vars: Tuple[str, ...]
    required_scheduler: str
    uses_ids: bool = False

    def rule(self, index: int) -> Rule:
        return self.rules[index - 1]


NAMES = ("bMIS", "vtMIS", "pfMIS", "dtMIS", "vpMIS", "dpMIS")


# --- shared actions -------------------------------------------------------

def _set_in(g, c, v):
    return c[v].with_(state=IN)


def _set_out(g, c, v):
    return c[v].with_(state=OUT)


# --- pfMIS -----------------------------------------------------------------

def hesitate_pf(g: Graph, c: Configuration, v: int) -> bool:
    me = c[v]
    if me.parent is None:
        return False
    for w in g.adjacency[v]:
        if me.parent != w:
            continue
        if any(c[z].parent == v for z in g.adjacency[v] if z != w):
            continue
        if not all(c[u].state == OUT and c[u].parent in (w, None) for u in g.adjacency[w] if u != v):
            continue
        cw = c[w]
        if (
            cw.parent is None
            or cw.parent != v
            or g.ids[w] < g.ids[v]
            or any(c[y].parent == w for y in g.adjacency[w] if y != v)
        ):
            return True
    return False


def _in_neighbors(g, c, v):
    return [w for w in g.adjacency[v] if c[w].state == IN]


def _pf_r3_target(g, c, v) -> Optional[int]:
    if c[v].state != OUT or any(pending(g, c, u) for u in g.adjacency[v]):
        return None
    heads = _in_neighbors(g, c, v)
    if len(heads) == 1 and c[v].parent != heads[0]:
        return heads[0]
    return None


def _pf_rules() -> Tuple[Rule, ...]:
    return (
        Rule(1, lambda g, c, v: pending(g, c, v) and not hesitate_pf(g, c, v), _set_in,
             ProbSource.ALWAYS, frozenset({"state"}), enters=True),
        Rule(2, conflict, _set_out, ProbSource.ALWAYS, frozenset({"state"}), leaves=True),
        Rule(3, lambda g, c, v: _pf_r3_target(g, c, v) is not None,
             lambda g, c, v: c[v].with_(parent=_pf_r3_target(g, c, v)),
             ProbSource.ALWAYS, frozenset({"parent"})),
        Rule(4, lambda g, c, v: c[v].state == OUT and len(_in_neighbors(g, c, v)) >= 2 and c[v].parent is not None,
             lambda g, c, v: c[v].with_(parent=None), ProbSource.ALWAYS, frozenset({"parent"})),
        Rule(5, lambda g, c, v: c[v].state == IN and not conflict(g, c, v) and c[v].parent is not None,
             lambda g, c, v: c[v].with_(parent=None), ProbSource.ALWAYS, frozenset({"parent"})),
    )


# --- dtMIS -----------------------------------------------------------------

def hesitate_dt(g: Graph, c: Configuration, v: int) -> bool:
    mine = c[v].parents
    if not mine:
        return False
    for w in g.adjacency[v]:
        if w not in mine:
            continue
        if any(v in c[z].parents for z in g.adjacency[v] if z != w):
            continue
        if not all(c[z].state == OUT and w in c[z].parents for z in g.adjacency[w] if z != v):
            continue
        if (
            v not in c[w].parents
            or g.ids[w] < g.ids[v]
            or any(w in c[z].parents for z in g.adjacency[w] if z != v)
        ):
            return True
    return False


def _dt_r3_target(g, c, v) -> Optional[int]:
    if c[v].state != OUT:
        return None
    for w in g.adjacency[v]:
        if w in c[v].parents and c[w].state == OUT and not pending(g, c, w):
            return w
    return None


def _dt_r4_target(g, c, v) -> Optional[int]:
    if c[v].state != OUT:
        return None
    for w in g.adjacency[v]:
        if w not in c[v].parents and c[w].state == IN:
            return w
    return None


def _dt_stray(g, c, v) -> FrozenSet[int]:
    return c[v].parents - frozenset(g.adjacency[v])


def _dt_rules(mode: str) -> Tuple[Rule, ...]:
    p_src = ProbSource.GAME if mode == "game" else ProbSource.PARAM_P
    q_src = ProbSource.GAME if mode == "game" else ProbSource.PARAM_Q
    return (
        Rule(1, lambda g, c, v: pending(g, c, v) and not hesitate_dt(g, c, v), _set_in,
             p_src, frozenset({"state"}), enters=True),
        Rule(2, conflict, _set_out, ProbSource.ALWAYS, frozenset({"state"}), leaves=True),
        Rule(3, lambda g, c, v: _dt_r3_target(g, c, v) is not None,
             lambda g, c, v: c[v].with_(parents=c[v].parents - {_dt_r3_target(g, c, v)}),
             ProbSource.ALWAYS, frozenset({"parents"})),
        Rule(4, lambda g, c, v: _dt_r4_target(g, c, v) is not None,
             lambda g, c, v: c[v].with_(parents=c[v].parents | {_dt_r4_target(g, c, v)}),
             ProbSource.ALWAYS, frozenset({"parents"})),
        Rule(5, lambda g, c, v: c[v].state == IN and not conflict(g, c, v) and bool(c[v].parents),
             lambda g, c, v: c[v].with_(parents=frozenset()), ProbSource.ALWAYS, frozenset({"parents"})),
        Rule(6, lambda g, c, v: bool(_dt_stray(g, c, v)),
             lambda g, c, v: c[v].with_(parents=c[v].parents & frozenset(g.adjacency[v])),
             ProbSource.ALWAYS, frozenset({"parents"})),
        Rule(7, lambda g, c, v: c[v].state == IN and not conflict(g, c, v), _set_out,
             q_src, frozenset({"state"}), leaves=True),
    )


def dt_leave_profitable(g: Graph, c: Configuration, v: int) -> bool:
    """Would some neighbor be free to take over if v left the set right now?"""
    after = list(c)
    after[v] = c[v].with_(state=OUT)
    after = tuple(after)
    return any(pending(g, after, w) and not hesitate_dt(g, after, w) for w in g.adjacency[v])


# --- vpMIS -----------------------------------------------------------------

def cmp(g: Graph, v: int, w: int) -> bool:
    dv, dw = g.degree(v), g.degree(w)
    return dv > dw or (dv == dw and g.ids[v] < g.ids[w])


def conflict_star(g: Graph, c: Configuration, v: int) -> bool:
    return c[v].state == IN and any(c[w].state == IN and not cmp(g, v, w) for w in g.adjacency[v])


def _vp_r1(g, c, v):
    return pending(g, c, v) and all(not pending(g, c, w) or cmp(g, v, w) for w in g.adjacency[v])


# --- dpMIS -----------------------------------------------------------------

def liberated(g: Graph, c: Configuration, v: int) -> bool:
    return any(c[w].state == IN and g.ids[w] < g.ids[v] for w in g.adjacency[v])


def _dp_r1(g, c, v):
    return c[v].state == OUT and all(g.ids[v] < g.ids[w] or liberated(g, c, w) for w in g.adjacency[v])


def _dp_r2(g, c, v):
    return c[v].state == IN and any(not liberated(g, c, w) for w in g.adjacency[v])


# --- construction ----------------------------------------------------------

def build(name: str, mode: str = "game") -> Algorithm:
    """Rule set for one of the six algorithms.

    ``mode`` decides where the probabilities of the selfish-prone rules of
    vtMIS and dtMIS come from: ``"game"`` or fixed parameters (``"fixed"``).
    """
    if mode not in ("game", "fixed"):
        raise AlgorithmError(f"unknown probability mode {mode!r}")
    state_only = ("state",)
    if name == "bMIS":
        rules = (
            Rule(1, pending, _set_in, ProbSource.ALWAYS, frozenset({"state"}), enters=True),
            Rule(2, conflict, _set_out, ProbSource.ALWAYS, frozenset({"state"}), leaves=True),
        )
        return Algorithm(name, rules, state_only, "distributed")
    if name == "vtMIS":
        src = ProbSource.GAME if mode == "game" else ProbSource.PARAM_P
        rules = (
            Rule(1, pending, _set_in, src, frozenset({"state"}), enters=True),
            Rule(2, conflict, _set_out, ProbSource.ALWAYS, frozenset({"state"}), leaves=True),
        )
        return Algorithm(name, rules, state_only, "distributed")
    if name == "pfMIS":
        return Algorithm(name, _pf_rules(), ("state", "parent"), "distributed", uses_ids=True)
    if name == "dtMIS":
        return Algorithm(name, _dt_rules(mode), ("state", "parents"), "distributed", uses_ids=True)
    if name == "vpMIS":
        rules = (
            Rule(1, _vp_r1, _set_in, ProbSource.PARAM_PC, frozenset({"state"}), enters=True),
            Rule(2, conflict_star, _set_out, ProbSource.ALWAYS, frozenset({"state"}), leaves=True),
        )
        return Algorithm(name, rules, state_only, "unfair", uses_ids=True)
    if name == "dpMIS":
        rules = (
            Rule(1, _dp_r1, _set_in, ProbSource.ALWAYS, frozenset({"state"}), enters=True),
            Rule(2, _dp_r2, _set_out, ProbSource.ALWAYS, frozenset({"state"}), leaves=True),
        )
        return Algorithm(name, rules, state_only, "unfair", uses_ids=True)
    raise AlgorithmError(f"unknown algorithm {name!r}")


def enabled_rules(alg: Algorithm, g: Graph, c: Configuration, v: int) -> List[int]:
    return [r.index for r in alg.rules if r.guard(g, c, v)]


@dataclass
class ProbContext:
    """Where rule probabilities come from when a rule is not ALWAYS.

    ``game`` is a callable ``(alg, g, c, v, rule_index) -> probability``
    consulted for GAME rules.
    """

    p: float = 0.5
    q: Optional[float] = None
    pc: float = 1.0
    epsilon: float = 0.1
    game: Optional[Callable[[Algorithm, Graph, Configuration, int, int], float]] = None


def rule_probability(alg: Algorithm, rule: Rule, g: Graph, c: Configuration, v: int, ctx: ProbContext) -> float:
    src = rule.prob_source
    if src is ProbSource.ALWAYS:
        return 1.0
    if src is ProbSource.PARAM_P:
        return ctx.p
    if src is ProbSource.PARAM_PC:
        return ctx.pc
    if src is ProbSource.PARAM_Q:
        eps = ctx.epsilon if ctx.q is None else ctx.q
        return eps if dt_leave_profitable(g, c, v) else 0.0
    if ctx.game is None:
        raise AlgorithmError(f"{alg.name} {rule.name} needs a game solver")
    return ctx.game(alg, g, c, v, rule.index)


def execute(alg: Algorithm, g: Graph, c: Configuration, v: int, rule_index: int,
            ctx: ProbContext, rng) -> Tuple[AgentState, bool]:
    """Run one rule at ``v``; ``rng.random()`` supplies the execution draw."""
    rule = alg.rule(rule_index)
    if not rule.guard(g, c, v):
        raise ContractViolation(f"{alg.name} {rule.name} is not enabled at node {v}")
    prob = rule_probability(alg, rule, g, c, v, ctx)
    if prob >= 1.0 or (prob > 0.0 and rng.random() < prob):
        return rule.action(g, c, v), True
    return c[v], False


def log_line(t: int, v: int, rule_index: int, executed: bool) -> str:
    return f"t={t} v={v} rule=R{rule_index} executed={int(executed)}"


def reference_unique_mis(g: Graph) -> Set[int]:
    """Repeatedly take every local id-minimum and delete it with its neighbors."""
    alive = set(range(g.n))
    chosen: Set[int] = set()
    while alive:
        picks = {
            v for v in alive
            if all(g.ids[v] < g.ids[w] for w in g.adjacency[v] if w in alive)
        }
        chosen |= picks
        removed = set(picks)
        for v in picks:
            removed.update(w for w in g.adjacency[v] if w in alive)
        alive -= removed
    return chosen
