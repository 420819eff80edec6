"""Brute-force checks of the algorithms' guarantees on small graphs.

Probabilistic rules are explored as "may fire" whenever their probability
can be positive, so every search here is over the nondeterministic
transition graph rather than a sampled run.
"""

from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Set, Tuple

import networkx as nx

from selfstab._rng import derive_seed
from selfstab.algorithms import Algorithm, ProbContext, ProbSource, Rule, build, dt_leave_profitable, rule_probability
from selfstab.core import (
    IN,
    OUT,
    AgentState,
    Configuration,
    GainParams,
    digest,
    gain,
    in_set,
    is_mis,
    state_configs,
)
from selfstab.graph import Graph, from_edges
from selfstab.scheduler import SchedulerPolicy
from selfstab.selfish import inject_perturbation


class SizeBoundError(ValueError):
    pass


class VerificationError(AssertionError):
    """An oracle found a state the algorithm's guarantees rule out."""


LEGITIMACY_BOUND = 12
NASH_BOUND = 6
NASH_DEPTH_BOUND = 8
CONTAINMENT_BOUND = 10
WEAKSTAB_BOUND = 6
# full-variable enumeration for weak stabilization stops here
WEAKSTAB_CONFIG_LIMIT = 1 << 16


# --- small-graph catalog ---------------------------------------------------------

def small_graph_catalog(max_n: int) -> List[Graph]:
    """One connected graph per isomorphism class, 1 to ``max_n`` nodes (max 7)."""
    if max_n > 7:
        raise SizeBoundError("the graph atlas stops at 7 nodes")
    out = []
    for h in nx.graph_atlas_g():
        n = h.number_of_nodes()
        if 1 <= n <= max_n and nx.is_connected(h):
            out.append(from_edges(n, h.edges()))
    return out


def graph_label(g: Graph) -> str:
    return f"n={g.n} edges={sorted(g.edges())}"


# --- transition structure -------------------------------------------------------

def _may_fire(alg: Algorithm, rule: Rule, g: Graph, c: Configuration, v: int, ctx: ProbContext) -> bool:
    if rule.prob_source is ProbSource.GAME:
        # the game never lets a head leave when nobody could take over
        if rule.leaves:
            return dt_leave_profitable(g, c, v)
        return True
    return rule_probability(alg, rule, g, c, v, ctx) > 0


def live_rule(alg: Algorithm, g: Graph, c: Configuration, v: int,
              ctx: Optional[ProbContext] = None) -> Optional[Rule]:
    """First rule that is enabled at v and can fire with positive probability."""
    ctx = ctx or ProbContext()
    for r in alg.rules:
        if r.guard(g, c, v) and _may_fire(alg, r, g, c, v, ctx):
            return r
    return None


def quiescent(alg: Algorithm, g: Graph, c: Configuration, ctx: Optional[ProbContext] = None) -> bool:
    return all(live_rule(alg, g, c, v, ctx) is None for v in range(g.n))


def successors(alg: Algorithm, g: Graph, c: Configuration,
               ctx: Optional[ProbContext] = None) -> Iterator[Configuration]:
    """Every configuration one round away, over all non-empty sets of movers."""
    moves = {}
    for v in range(g.n):
        r = live_rule(alg, g, c, v, ctx)
        if r is not None:
            moves[v] = r.action(g, c, v)
    movers = sorted(moves)
    seen = set()
    for k in range(1, len(movers) + 1):
        for chosen in itertools.combinations(movers, k):
            nxt = list(c)
            for v in chosen:
                nxt[v] = moves[v]
            nxt = tuple(nxt)
            if nxt not in seen:
                seen.add(nxt)
                yield nxt


def settle_secondary(alg: Algorithm, g: Graph, c: Configuration) -> Configuration:
    """Run the bookkeeping rules (index 3 and up) to a fixpoint, lowest node first."""
    book = [r for r in alg.rules if r.index >= 3 and "state" not in r.touches]
    cur = tuple(c)
    for _ in range(10 * g.n * (g.n + 1)):
        for v in range(g.n):
            r = next((r for r in book if r.guard(g, cur, v)), None)
            if r is not None:
                nxt = list(cur)
                nxt[v] = r.action(g, cur, v)
                cur = tuple(nxt)
                break
        else:
            return cur
    raise VerificationError(f"{alg.name} bookkeeping rules did not settle")


# --- legitimacy -----------------------------------------------------------------------

def legitimate_configurations(alg: Algorithm, g: Graph, bound: int = LEGITIMACY_BOUND) -> List[Configuration]:
    if g.n > bound:
        raise SizeBoundError(f"legitimacy enumeration is limited to n <= {bound}")
    found = []
    for c in state_configs(g.n):
        c = settle_secondary(alg, g, c)
        if quiescent(alg, g, c):
            if not is_mis(g, c):
                raise VerificationError(f"{alg.name} is quiescent outside an MIS: {sorted(in_set(c))}")
            found.append(c)
    return found


def enumerate_legitimate(alg: Algorithm, g: Graph, bound: int = LEGITIMACY_BOUND) -> Set[str]:
    """Digests of all quiescent configurations (each one checked to be an MIS)."""
    return {digest(c, alg.declared_vars) for c in legitimate_configurations(alg, g, bound)}


# --- Nash check ----------------------------------------------------------------------

def improving_deviation(alg: Algorithm, g: Graph, c: Configuration, params: GainParams = GainParams(),
                        depth_bound: int = NASH_DEPTH_BOUND) -> Optional[Tuple[int, int]]:
    """(agent, depth) of the first unilateral state flip that can pay off, else None.

    After the flip every agent follows the rules; the search looks for any
    computation of at most ``depth_bound`` rounds in which the deviator ends
    up strictly better off than in ``c``.
    """
    if g.n > NASH_BOUND:
        raise SizeBoundError(f"Nash checks are limited to n <= {NASH_BOUND}")
    if depth_bound > NASH_DEPTH_BOUND:
        raise SizeBoundError(f"Nash depth is limited to {NASH_DEPTH_BOUND}")
    # all agents are searched one layer at a time so shallow improvements turn up first
    searches = []
    for v in range(g.n):
        flipped = list(c)
        flipped[v] = c[v].with_(state=OUT if c[v].state == IN else IN)
        start = tuple(flipped)
        searches.append((v, gain(g, c, v, params), {start}, [start]))
    for d in range(depth_bound + 1):
        for v, base, _, layer in searches:
            if any(gain(g, x, v, params) > base for x in layer):
                return v, d
        if d == depth_bound:
            break
        for k, (v, base, seen, layer) in enumerate(searches):
            nxt = []
            for x in layer:
                for y in successors(alg, g, x):
                    if y not in seen:
                        seen.add(y)
                        nxt.append(y)
            searches[k] = (v, base, seen, nxt)
    return None


def nash_check(alg: Algorithm, g: Graph, c: Configuration, params: GainParams = GainParams(),
               depth_bound: int = NASH_DEPTH_BOUND) -> bool:
    """True when no unilateral flip pays off within ``depth_bound`` rounds.

    A True verdict is only as strong as the bound: longer computations are
    not explored.
    """
    return improving_deviation(alg, g, c, params, depth_bound) is None


# --- fault containment ---------------------------------------------------------------

@dataclass
class ContainmentCase:
    legitimate: str
    agent: int
    sample: int
    depth: int
    restored: bool
    moves: int
    rounds: int


@dataclass
class ContainmentReport:
    algorithm: str
    cases: List[ContainmentCase] = field(default_factory=list)

    @property
    def max_depth(self) -> int:
        return max((c.depth for c in self.cases), default=0)

    @property
    def depth_zero_fraction(self) -> float:
        return sum(c.depth == 0 for c in self.cases) / len(self.cases) if self.cases else 1.0

    @property
    def restored_fraction(self) -> float:
        return sum(c.restored for c in self.cases) / len(self.cases) if self.cases else 1.0


def fault_containment_audit(alg: Algorithm, g: Graph, samples: int = 20, p_s: float = 0.8,
                            seed: int = 0, bound: int = CONTAINMENT_BOUND) -> ContainmentReport:
    """Knock out every head of every legitimate configuration and watch the repair.

    Each case is replayed under ``samples`` randomized scheduler runs.
    """
    # imported here: the simulator depends on most of the package
    from selfstab.sim import ExperimentConfig, contamination_depth, make_engine

    if g.n > bound:
        raise SizeBoundError(f"containment audits are limited to n <= {bound}")
    mode = "game" if any(r.prob_source is ProbSource.GAME for r in alg.rules) else "fixed"
    cfg = ExperimentConfig(algorithm=alg.name, scheduler=SchedulerPolicy("distributed", p_s), seed=seed)
    report = ContainmentReport(alg.name)
    share = None
    for legit in legitimate_configurations(alg, g):
        tag = digest(legit, alg.declared_vars)
        for v in sorted(in_set(legit)):
            faulty, event = inject_perturbation(g, legit, v)
            for s in range(samples):
                eng = make_engine(cfg, build(alg.name, mode), g, derive_seed(seed, "audit", tag, v, s), share=share)
                share = share or eng
                res = eng.run(faulty)
                if not res.converged:
                    raise VerificationError(f"{alg.name} did not recover from a fault at node {v}")
                report.cases.append(ContainmentCase(
                    tag, v, s, contamination_depth(g, event, res.movers),
                    res.final == legit, res.moves, res.rounds,
                ))
    return report


# --- weak stabilization ----------------------------------------------------------------

def _secondary_domains(alg: Algorithm, g: Graph, v: int) -> List[AgentState]:
    nbrs = g.adjacency[v]
    if "parent" in alg.declared_vars:
        return [AgentState(s, p) for s in (OUT, IN) for p in (None,) + tuple(nbrs)]
    if "parents" in alg.declared_vars:
        subsets = [frozenset(x) for k in range(len(nbrs) + 1) for x in itertools.combinations(nbrs, k)]
        return [AgentState(s, None, ps) for s in (OUT, IN) for ps in subsets]
    return [AgentState(OUT), AgentState(IN)]


def all_configurations(alg: Algorithm, g: Graph) -> Iterator[Configuration]:
    domains = [_secondary_domains(alg, g, v) for v in range(g.n)]
    total = 1
    for d in domains:
        total *= len(d)
    if total > WEAKSTAB_CONFIG_LIMIT:
        raise SizeBoundError(f"{total} configurations exceed the enumeration limit")
    return itertools.product(*domains)


def weak_stabilization_check(alg: Algorithm, g: Graph, bound: int = WEAKSTAB_BOUND) -> bool:
    """From every configuration, can some computation reach a quiescent one?"""
    if g.n > bound:
        raise SizeBoundError(f"weak-stabilization checks are limited to n <= {bound}")
    configs = [tuple(c) for c in all_configurations(alg, g)]
    preds: Dict[Configuration, List[Configuration]] = {c: [] for c in configs}
    good = deque()
    reach: Set[Configuration] = set()
    for c in configs:
        if quiescent(alg, g, c):
            reach.add(c)
            good.append(c)
            continue
        for y in successors(alg, g, c):
            preds.setdefault(y, []).append(c)
    while good:
        y = good.popleft()
        for x in preds.get(y, ()):
            if x not in reach:
                reach.add(x)
                good.append(x)
    return all(c in reach for c in configs)


# --- reports ----------------------------------------------------------------------------

@dataclass
class VerificationRecord:
    name: str
    instance: str
    verdict: str  # pass | fail
    bounds: Dict[str, int]
    detail: Dict[str, object] = field(default_factory=dict)


def report_json(records: Sequence[VerificationRecord]) -> str:
    return json.dumps([asdict(r) for r in records], indent=2, sort_keys=True) + "\n"


def legitimacy_suite(alg_name: str, max_n: int) -> List[VerificationRecord]:
    alg = build(alg_name, "game")
    out = []
    for g in small_graph_catalog(max_n):
        found = enumerate_legitimate(alg, g)
        ok = len(found) == 1 if alg_name == "dpMIS" else len(found) >= 1
        out.append(VerificationRecord("legitimacy", f"{alg_name} {graph_label(g)}", "pass" if ok else "fail",
                                      {"max_n": max_n}, {"count": len(found)}))
    return out


def nash_suite(alg_name: str, max_n: int, depth: int = NASH_DEPTH_BOUND) -> List[VerificationRecord]:
    """Every non-MIS configuration should admit an improving flip."""
    alg = build(alg_name, "game")
    out = []
    for g in small_graph_catalog(max_n):
        stuck = [sorted(in_set(c)) for c in state_configs(g.n)
                 if not is_mis(g, c) and nash_check(alg, g, c, depth_bound=depth)]
        out.append(VerificationRecord("nash", f"{alg_name} {graph_label(g)}", "fail" if stuck else "pass",
                                      {"max_n": max_n, "depth": depth}, {"counterexamples": stuck}))
    return out


def containment_suite(alg_name: str, max_n: int, samples: int = 5) -> List[VerificationRecord]:
    alg = build(alg_name, "game")
    out = []
    for g in small_graph_catalog(min(max_n, 7)):
        rep = fault_containment_audit(alg, g, samples=samples)
        out.append(VerificationRecord(
            "containment", f"{alg_name} {graph_label(g)}",
            "pass" if rep.max_depth == 0 and rep.restored_fraction == 1.0 else "fail",
            {"max_n": max_n, "samples": samples},
            {"max_depth": rep.max_depth, "depth_zero_fraction": rep.depth_zero_fraction,
             "restored_fraction": rep.restored_fraction, "cases": len(rep.cases)},
        ))
    return out


def weakstab_suite(alg_name: str, max_n: int) -> List[VerificationRecord]:
    alg = build(alg_name, "game")
    out = []
    for g in small_graph_catalog(max_n):
        try:
            ok = weak_stabilization_check(alg, g)
        except SizeBoundError:
            continue
        out.append(VerificationRecord("weakstab", f"{alg_name} {graph_label(g)}", "pass" if ok else "fail",
                                      {"max_n": max_n}))
    return out


SUITES = {
    "legitimacy": legitimacy_suite,
    "nash": nash_suite,
    "containment": containment_suite,
    "weakstab": weakstab_suite,
}
