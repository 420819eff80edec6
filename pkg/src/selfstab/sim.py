"""Round engine, experiment runner and metrics."""

from __future__ import annotations

import csv
import io
import json
import math
import random
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

from selfstab import graph as graphs
from selfstab._rng import derive_seed, uniform
from selfstab.algorithms import (
    Algorithm,
    ProbContext,
    ProbSource,
    Rule,
    build,
    log_line,
    rule_probability,
)
from selfstab.core import (
    IN,
    OUT,
    AgentState,
    Configuration,
    GainParams,
    all_out,
    conflict,
    digest,
    gain,
    in_set,
    is_mis,
)
from selfstab.game import GameConfig, GameOracle
from selfstab.graph import Graph
from selfstab.scheduler import Hints, SchedulerPolicy, draw
from selfstab.selfish import (
    DeviationModel,
    FaultEvent,
    apply_violation,
    deflection_condition,
    inject_perturbation,
    leaving_profitable,
)

RESULT_COLUMNS = (
    "run_id", "algorithm", "n", "avg_degree", "synchrony", "seed", "rounds", "moves",
    "state_transitions", "converged", "deviations", "jain_index", "availability_mean",
    "cluster_count", "final_digest",
)


class MetricError(ValueError):
    pass


# --- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class GraphSpec:
    kind: str = "ba"  # ba | er | path | complete | star | file
    n: int = 40
    avg_degree: float = 6.0
    p: float = 0.1
    seed: Optional[int] = None  # fixed topology seed; None derives one per repetition
    path: Optional[str] = None

    def build(self, seed: int) -> Graph:
        s = self.seed if self.seed is not None else derive_seed(seed, "graph")
        if self.kind == "ba":
            return graphs.generate_ba(self.n, graphs.ba_attachment_for_degree(self.avg_degree), s)
        if self.kind == "er":
            return graphs.generate_er(self.n, self.p, s)
        if self.kind == "path":
            return graphs.path(self.n)
        if self.kind == "complete":
            return graphs.complete(self.n)
        if self.kind == "star":
            return graphs.star(self.n - 1)
        if self.kind == "file":
            with open(self.path) as fh:
                return graphs.read_edgelist(fh.read())
        raise graphs.GraphError(f"unknown graph kind {self.kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: str = "bMIS"
    graph: GraphSpec = GraphSpec()
    scheduler: SchedulerPolicy = SchedulerPolicy()
    gain: GainParams = GainParams()
    game: GameConfig = GameConfig()
    deviation: DeviationModel = DeviationModel()
    repetitions: int = 1
    round_limit: Optional[int] = None  # default 50 * n
    seed: int = 0
    init: str = "random"  # random | all-out | random-full (secondary variables too)
    pc: str = "synchrony"  # vpMIS entry probability: synchrony | inverse-diameter | <number>
    faults: int = 0  # IN->OUT faults injected after convergence, each recovered separately
    idle_rounds: bool = True  # empty randomized draws still cost a round
    baseline_rounds: Optional[float] = None  # reliability limit = 10x this

    def limit_for(self, n: int) -> int:
        return self.round_limit if self.round_limit is not None else 50 * n


# --- results -------------------------------------------------------------------

@dataclass
class FaultOutcome:
    event: FaultEvent
    rounds: int
    moves: int
    state_transitions: int
    converged: bool
    success: bool
    contamination_depth: int
    restored: bool


@dataclass
class RunResult:
    rounds: int
    moves: int
    state_transitions: int
    converged: bool
    final_digest: str
    profits: List[float]
    deviations: int
    availability_trace: List[float]
    cluster_count: int
    final: Configuration = ()
    attempts: List[Tuple[int, int, str]] = field(default_factory=list)
    faults: List[FaultOutcome] = field(default_factory=list)
    movers: Set[int] = field(default_factory=set)
    log: List[str] = field(default_factory=list)

    @property
    def jain(self) -> float:
        return jain_index(self.profits) if any(self.profits) else 0.0

    @property
    def availability_mean(self) -> float:
        tr = self.availability_trace
        return sum(tr) / len(tr) if tr else 1.0


# --- metrics --------------------------------------------------------------------

def jain_index(profits: Sequence[float]) -> float:
    xs = list(profits)
    if not xs or any(x < 0 for x in xs):
        raise MetricError("Jain's index needs non-negative values")
    total = sum(xs)
    if total == 0:
        raise MetricError("Jain's index is undefined when every value is zero")
    return total * total / (len(xs) * sum(x * x for x in xs))


def availability(g: Graph, c: Configuration) -> float:
    heads = {v for v in range(g.n) if c[v].state == IN and not conflict(g, c, v)}
    served = sum(1 for v in range(g.n) if v in heads or any(w in heads for w in g.adjacency[v]))
    return served / g.n


def reliability(results: Sequence[RunResult], baseline_rounds: float) -> float:
    if not results:
        return 0.0
    limit = 10 * baseline_rounds
    ok = sum(1 for r in results if r.converged and r.rounds <= limit)
    return ok / len(results)


def contamination_depth(g: Graph, fault: FaultEvent, movers: Set[int]) -> int:
    if not movers:
        return 0
    dist = graphs.bfs_distances(g, fault.agent)
    return max(dist[v] for v in movers)


def fault_success(fault: FaultEvent, final: Configuration) -> bool:
    return final[fault.agent].state == OUT


# --- engine ---------------------------------------------------------------------

class _Fixed:
    """A stand-in rng whose next draw is known in advance."""

    __slots__ = ("value",)

    def __init__(self, value: float):
        self.value = value

    def random(self) -> float:
        return self.value


@dataclass
class Engine:
    alg: Algorithm
    g: Graph
    policy: SchedulerPolicy
    ctx: ProbContext
    seed: int
    round_limit: int
    deviation: DeviationModel = DeviationModel()
    gain_params: GainParams = GainParams()
    idle_rounds: bool = True
    keep_log: bool = False
    observer: Optional[Callable[[int, Configuration], None]] = None
    balls: Optional[List[Tuple[int, ...]]] = None  # radius-3 neighbourhoods, shareable across engines

    def __post_init__(self):
        if self.balls is None:
            self.balls = [tuple(graphs.bfs_distances(self.g, v, limit=3)) for v in range(self.g.n)]
        self._ball = self.balls
        # authorized exits (dtMIS R7) make unauthorized deflection moot
        self._exit_rule = any(r.leaves and r.prob_source in (ProbSource.PARAM_Q, ProbSource.GAME)
                              for r in self.alg.rules)

    def _choose(self, c: Configuration, v: int) -> Optional[Tuple[Rule, float]]:
        for r in self.alg.rules:
            if r.guard(self.g, c, v):
                p = rule_probability(self.alg, r, self.g, c, v, self.ctx)
                if p > 0:
                    return r, p
        return None

    def _activated(self, v: int, t: int) -> bool:
        if self.policy.kind != "distributed":
            return True
        return uniform(self.seed, "act", v, t) < self.policy.p_s

    def _selfish_exit(self, c: Configuration, v: int, t: int, legit: bool) -> bool:
        dev = self.deviation
        if self._exit_rule or c[v].state != IN or conflict(self.g, c, v):
            return False
        if legit:
            if not dev.has("perturbation"):
                return False
        else:
            if not dev.has("deflection") or not deflection_condition(self.g, c, v):
                return False
        if dev.policy == "always":
            return True
        if dev.policy == "prob":
            return uniform(self.seed, "dev", v, t) < dev.w
        return leaving_profitable(self.alg, self.g, c, v, self.ctx)

    def run(self, c0: Configuration, start_round: int = 0) -> RunResult:
        g, alg = self.g, self.alg
        c = tuple(c0)
        n = g.n
        game_rules = any(r.prob_source is ProbSource.GAME for r in alg.rules)
        choice: Dict[int, Optional[Tuple[Rule, float]]] = {v: self._choose(c, v) for v in range(n)}
        t = start_round
        moves = transitions = deviations = 0
        attempts: List[Tuple[int, int, str]] = []
        trace: List[float] = []
        movers: Set[int] = set()
        log: List[str] = []
        converged = False
        limit = start_round + self.round_limit
        while True:
            if game_rules and t > start_round:
                choice = {v: self._choose(c, v) for v in range(n)}
            enabled = [v for v in range(n) if choice[v] is not None]
            legit = not enabled
            exits = []
            if self.deviation.kinds - {"violation"}:
                heads = [v for v in range(n) if c[v].state == IN]
                candidates = [v for v in heads if self._selfish_exit(c, v, t + 1, legit)]
            else:
                candidates = []
            if not enabled and not candidates:
                converged = True
                break
            if t >= limit:
                break
            if enabled:
                hints = None
                if self.policy.kind == "unfair":
                    hints = Hints(g.ids, {v for v in enabled if choice[v][0].enters}, g.adjacency)
                chosen, idle = draw(self.policy, enabled, t + 1, self.seed, hints)
            else:
                chosen, idle = [], 0
            if self.idle_rounds and idle:
                span = min(idle, limit - t)
                trace.extend([availability(g, c)] * span)
                t += span
                if t >= limit:
                    break
            t += 1
            exits = [v for v in candidates if self._activated(v, t)]
            writes: Dict[int, AgentState] = {}
            for v in chosen:
                rule, prob = choice[v]
                if self.deviation.has("violation") and rule.prob_source is not ProbSource.GAME:
                    honest = apply_violation(self.deviation, alg, g, c, v, rule,
                                             uniform(self.seed, "dev", v, t), self.ctx)
                    if not honest:
                        deviations += 1
                        attempts.append((v, t, "violation"))
                        continue
                executed = prob >= 1.0 or uniform(self.seed, "rule", v, t) < prob
                if self.keep_log:
                    log.append(log_line(t, v, rule.index, executed))
                if executed:
                    writes[v] = rule.action(g, c, v)
            for v in exits:
                if v not in writes:
                    writes[v] = c[v].with_(state=OUT)
                    deviations += 1
                    attempts.append((v, t, "perturbation" if legit else "deflection"))
            if writes:
                nxt = list(c)
                for v, st in writes.items():
                    moves += 1
                    movers.add(v)
                    if st.state != c[v].state:
                        transitions += 1
                    nxt[v] = st
                c = tuple(nxt)
                if not game_rules:
                    dirty = set()
                    for v in writes:
                        dirty.update(self._ball[v])
                    for v in dirty:
                        choice[v] = self._choose(c, v)
            trace.append(availability(g, c))
            if self.observer is not None:
                self.observer(t, c)
        return RunResult(
            rounds=t - start_round,
            moves=moves,
            state_transitions=transitions,
            converged=converged,
            final_digest=digest(c, alg.declared_vars),
            profits=[gain(g, c, v, self.gain_params) for v in range(n)],
            deviations=deviations,
            availability_trace=trace,
            cluster_count=len(in_set(c)),
            final=c,
            attempts=attempts,
            movers=movers,
            log=log,
        )


def detect_converged(alg: Algorithm, g: Graph, c: Configuration, ctx: ProbContext) -> bool:
    for v in range(g.n):
        for r in alg.rules:
            if r.guard(g, c, v) and rule_probability(alg, r, g, c, v, ctx) > 0:
                return False
    return True


# --- experiment assembly -------------------------------------------------------

def random_configuration(alg: Algorithm, g: Graph, seed: int, full: bool = False) -> Configuration:
    rng = random.Random(derive_seed(seed, "init"))
    states = [IN if rng.random() < 0.5 else OUT for _ in range(g.n)]
    out = []
    for v in range(g.n):
        parent, parents = None, frozenset()
        if full and "parent" in alg.declared_vars:
            options = [None] + list(g.adjacency[v])
            parent = options[rng.randrange(len(options))]
        if full and "parents" in alg.declared_vars:
            parents = frozenset(w for w in g.adjacency[v] if rng.random() < 0.5)
        out.append(AgentState(states[v], parent, parents))
    return tuple(out)


def initial_configuration(cfg: ExperimentConfig, alg: Algorithm, g: Graph, seed: int) -> Configuration:
    if cfg.init == "all-out":
        return all_out(g.n)
    if cfg.init in ("random", "random-full"):
        return random_configuration(alg, g, seed, full=cfg.init == "random-full")
    raise ValueError(f"unknown init {cfg.init!r}")


def entry_probability_pc(cfg: ExperimentConfig, n: int) -> float:
    if cfg.pc == "synchrony":
        return cfg.scheduler.p_s if cfg.scheduler.kind == "distributed" else 1.0
    if cfg.pc == "inverse-diameter":
        return min(1.0, 1.0 / graphs.estimate_diameter(n))
    return float(cfg.pc)


def make_context(cfg: ExperimentConfig, alg: Algorithm, g: Graph, seed: int,
                 shared: Optional[dict] = None) -> ProbContext:
    ctx = ProbContext(
        p=cfg.game.fixed_p,
        q=cfg.game.fixed_q,
        pc=entry_probability_pc(cfg, g.n),
        epsilon=cfg.game.epsilon,
    )
    if any(r.prob_source is ProbSource.GAME for r in alg.rules):
        ctx.game = GameOracle(g, cfg.gain, cfg.game, cfg.scheduler.p_s if cfg.scheduler.kind == "distributed" else 1.0,
                              derive_seed(seed, "game"), shared)
    return ctx


def make_engine(cfg: ExperimentConfig, alg: Algorithm, g: Graph, seed: int,
                deviation: Optional[DeviationModel] = None, round_limit: Optional[int] = None,
                share: Optional[Engine] = None) -> Engine:
    """``share`` lends its precomputed neighbourhoods to the new engine."""
    shared = share.ctx.game.shared if share is not None and share.ctx.game is not None else None
    return Engine(
        alg=alg,
        g=g,
        policy=cfg.scheduler,
        ctx=make_context(cfg, alg, g, seed, shared),
        seed=seed,
        round_limit=round_limit if round_limit is not None else cfg.limit_for(g.n),
        deviation=cfg.deviation if deviation is None else deviation,
        gain_params=cfg.gain,
        idle_rounds=cfg.idle_rounds,
        balls=share.balls if share is not None else None,
    )


def recover_from_fault(cfg: ExperimentConfig, alg: Algorithm, g: Graph, legit: Configuration,
                       seed: int, index: int, start_round: int, share: Optional[Engine] = None) -> FaultOutcome:
    heads = sorted(in_set(legit))
    rng = random.Random(derive_seed(seed, "fault", index))
    v = heads[rng.randrange(len(heads))]
    inject_round = start_round + 1  # one quiet round after convergence
    faulty, event = inject_perturbation(g, legit, v, inject_round)
    sub = derive_seed(seed, "recovery", index)
    eng = make_engine(cfg, alg, g, sub, deviation=DeviationModel(), share=share)
    res = eng.run(faulty, start_round=inject_round)
    return FaultOutcome(
        event=event,
        rounds=res.rounds,
        moves=res.moves,
        state_transitions=res.state_transitions,
        converged=res.converged,
        success=fault_success(event, res.final),
        contamination_depth=contamination_depth(g, event, res.movers),
        restored=res.final == legit,
    )


def run(cfg: ExperimentConfig, seed: int, g: Optional[Graph] = None) -> RunResult:
    """One repetition: build the topology, start somewhere, run to quiescence."""
    alg = build(cfg.algorithm, cfg.game.mode)
    g = g if g is not None else cfg.graph.build(seed)
    c0 = initial_configuration(cfg, alg, g, seed)
    limit = cfg.limit_for(g.n)
    if cfg.baseline_rounds is not None:
        limit = int(math.floor(10 * cfg.baseline_rounds))
    eng = make_engine(cfg, alg, g, seed, round_limit=limit)
    res = eng.run(c0)
    if cfg.faults and res.converged and is_mis(g, res.final):
        res.faults = [recover_from_fault(cfg, alg, g, res.final, seed, i, res.rounds, eng)
                      for i in range(cfg.faults)]
    return res


def repetition_seed(master: int, rep: int) -> int:
    return derive_seed(master, "rep", rep) & 0x7FFFFFFFFFFFFFFF


def run_many(cfg: ExperimentConfig, workers: int = 1) -> List[Tuple[int, int, RunResult]]:
    seeds = [(i, repetition_seed(cfg.seed, i)) for i in range(cfg.repetitions)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_run_star, [(cfg, s) for _, s in seeds]))
    else:
        outs = [run(cfg, s) for _, s in seeds]
    return [(i, s, r) for (i, s), r in zip(seeds, outs)]


def _run_star(args):
    return run(*args)


def honest_counterpart(cfg: ExperimentConfig) -> ExperimentConfig:
    return replace(cfg, deviation=DeviationModel(), baseline_rounds=None, faults=0)


def run_experiment(cfg: ExperimentConfig, workers: int = 1
                   ) -> Tuple[ExperimentConfig, List[Tuple[int, int, RunResult]], Dict[str, object]]:
    """Run every repetition and aggregate.

    With deviations switched on, the honest runs from the same seeds come
    first: their mean length sets the reliability limit and their final
    configurations tell which deviations paid off.
    """
    if not cfg.deviation.kinds:
        rows = run_many(cfg, workers)
        return cfg, rows, aggregate(cfg, rows)
    honest = [r for _, _, r in run_many(honest_counterpart(cfg), workers)]
    baseline = _mean([r.rounds for r in honest])
    dev_cfg = replace(cfg, baseline_rounds=baseline)
    rows = run_many(dev_cfg, workers)
    return dev_cfg, rows, aggregate(dev_cfg, rows, honest)


def deviation_success(res: RunResult, honest: RunResult) -> Tuple[int, int]:
    """(attempts, successes): an attempt succeeds when the agent ends OUT
    although the honest run from the same start leaves it IN."""
    wins = 0
    for v, _, _ in res.attempts:
        if res.final[v].state == OUT and honest.final[v].state == IN:
            wins += 1
    return len(res.attempts), wins


# --- output -------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


def result_row(cfg: ExperimentConfig, run_id: int, seed: int, res: RunResult) -> List[str]:
    synchrony = cfg.scheduler.p_s if cfg.scheduler.kind == "distributed" else 1.0
    row = [
        run_id, cfg.algorithm, cfg.graph.n, float(cfg.graph.avg_degree), float(synchrony), seed,
        res.rounds, res.moves, res.state_transitions, res.converged, res.deviations,
        res.jain, res.availability_mean, res.cluster_count, res.final_digest,
    ]
    return [_fmt(x) for x in row]


def results_csv(cfg: ExperimentConfig, rows: Sequence[Tuple[int, int, RunResult]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for run_id, seed, res in rows:
        w.writerow(result_row(cfg, run_id, seed, res))
    return buf.getvalue()


def _mean(xs: Sequence[float]) -> float:
    return sum(xs) / len(xs) if xs else 0.0


def aggregate(cfg: ExperimentConfig, rows: Sequence[Tuple[int, int, RunResult]],
              honest: Optional[Sequence[RunResult]] = None) -> Dict[str, object]:
    results = [r for _, _, r in rows]
    out: Dict[str, object] = {
        "algorithm": cfg.algorithm,
        "repetitions": len(results),
        "avg_rounds": _mean([r.rounds for r in results]),
        "avg_moves": _mean([r.moves for r in results]),
        "avg_state_transitions": _mean([r.state_transitions for r in results]),
        "converged_rate": _mean([1.0 if r.converged else 0.0 for r in results]),
        "avg_deviations": _mean([r.deviations for r in results]),
        "jain_index": _mean([r.jain for r in results]),
        "availability": _mean([r.availability_mean for r in results]),
        "avg_clusters": _mean([r.cluster_count for r in results]),
        "distinct_configurations": len({r.final_digest for r in results if r.converged}),
    }
    faults = [f for r in results for f in r.faults]
    if faults:
        out["faults"] = len(faults)
        out["avg_moves"] = _mean([f.moves for f in faults])
        out["avg_rounds"] = _mean([f.rounds for f in faults])
        out["success_rate"] = _mean([1.0 if f.success else 0.0 for f in faults])
        out["max_contamination_depth"] = max(f.contamination_depth for f in faults)
    else:
        out["success_rate"] = 0.0
    if cfg.baseline_rounds is not None:
        out["reliability"] = reliability(results, cfg.baseline_rounds)
    if honest is not None:
        tried = won = 0
        for r, h in zip(results, honest):
            a, s = deviation_success(r, h)
            tried += a
            won += s
        out["deviation_attempts"] = tried
        out["deviation_success_rate"] = won / tried if tried else 0.0
    return {k: (round(v, 6) if isinstance(v, float) else v) for k, v in out.items()}


def aggregate_json(agg: Dict[str, object]) -> str:
    return json.dumps(agg, indent=2, sort_keys=True) + "\n"
