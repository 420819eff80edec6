"""Stochastic Bayesian game that sets the probabilities of the selfish-prone rules.

A focal agent looks at its two-hop neighborhood. Agents on the rim of that
view have a hidden *type*: whether some neighbor it cannot see is IN. The
focal agent keeps a belief over those types, updates it from observed moves,
and solves a small stage game whose look-ahead combines type averaging with
a discounted Bellman recursion. The equilibrium probability of Switch is the
probability with which the rule fires.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from selfstab._rng import derive_seed
from selfstab.algorithms import dt_leave_profitable, hesitate_dt
from selfstab.core import IN, OUT, Configuration, GainParams, State
from selfstab.graph import Graph, Locality, bfs_distances, locality

SWITCH = "Switch"
PRESERVE = "Preserve"
BOTH = (SWITCH, PRESERVE)

BR_TOLERANCE = 1e-6
STABILIZED_GATE = 0.5
EXACT_ENUMERATION_LIMIT = 12


class BeliefError(ValueError):
    """A Bayes update where every type explains the observation with probability zero."""


@dataclass(frozen=True)
class GameConfig:
    mode: str = "game"  # game | fixed
    delta: float = 0.88
    horizon: int = 3
    fixed_p: float = 0.5
    fixed_q: Optional[float] = None
    epsilon: float = 0.1
    oracle: str = "myopic"  # policy inside the type-transition estimator: myopic | fixed-p
    samples: int = 2000
    max_players: int = 5
    # least entry probability of a pending agent; keeps neighbourhoods where
    # everyone expects someone else to enter from waiting forever
    entry_floor: float = 0.1

    def __post_init__(self):
        if self.mode not in ("game", "fixed"):
            raise ValueError(f"unknown game mode {self.mode!r}")
        if not 0 < self.delta <= 1:
            raise ValueError("discount factor must lie in (0, 1]")
        if self.horizon < 0:
            raise ValueError("horizon must be non-negative")
        if self.oracle not in ("myopic", "fixed-p"):
            raise ValueError(f"unknown policy oracle {self.oracle!r}")
        if self.max_players < 1:
            raise ValueError("max_players must be at least 1")
        if not 0 <= self.entry_floor <= 1:
            raise ValueError("entry_floor must lie in [0, 1]")


# --- the local game ------------------------------------------------------------

@dataclass(frozen=True)
class LocalGame:
    """One agent's two-hop view, frozen at the start of a stage.

    ``state`` maps every member to IN/OUT. Only ``players`` move in the
    look-ahead; other members keep their state. ``hesitating`` lists members
    whose entry rule is blocked by their secondary variables.
    """

    alg: str
    locality: Locality
    adjacency: Mapping[int, Tuple[int, ...]]
    state: Mapping[int, State]
    players: Tuple[int, ...]
    hesitating: FrozenSet[int] = frozenset()
    # heads whose departure would leave no neighbour free to enter; leaving cannot pay off for them
    settled: FrozenSet[int] = frozenset()
    gain: GainParams = GainParams()
    p_s: float = 0.8
    delta: float = 0.88
    horizon: int = 3

    @property
    def focal(self) -> int:
        return self.locality.focal

    @property
    def boundary_players(self) -> Tuple[int, ...]:
        return tuple(v for v in self.players if v in self.locality.boundary)


def _has_in(game: LocalGame, lam: Mapping[int, State], theta: Mapping[int, State], v: int) -> bool:
    if any(lam[w] == IN for w in game.adjacency[v]):
        return True
    return v in game.locality.boundary and theta.get(v) == IN


def available_actions(game: LocalGame, lam: Mapping[int, State], theta: Mapping[int, State], v: int) -> Tuple[str, ...]:
    inside = lam[v] == IN
    covered = _has_in(game, lam, theta, v)
    if not inside and not covered:
        return (PRESERVE,) if v in game.hesitating else BOTH
    if inside and covered:
        return (SWITCH,)
    if inside and game.alg == "dtMIS" and v not in game.settled:
        return BOTH
    return (PRESERVE,)


def local_gain(game: LocalGame, lam: Mapping[int, State], theta: Mapping[int, State], v: int) -> float:
    if lam[v] == IN:
        return game.gain.theta - game.gain.zeta
    if _has_in(game, lam, theta, v):
        return game.gain.theta
    return 0.0


def payoff(game: LocalGame, lam: Mapping[int, State], lam_next: Mapping[int, State],
           theta: Mapping[int, State], v: int) -> float:
    return local_gain(game, lam_next, theta, v) - local_gain(game, lam, theta, v)


def transition_prob(lam: Mapping[int, State], joint_action: Mapping[int, str],
                    lam_next: Mapping[int, State], p_s: float) -> float:
    """Each agent that plays Switch is picked by the scheduler with probability p_s."""
    changed = {v for v in lam if lam[v] != lam_next[v]}
    movers = {v for v, a in joint_action.items() if a == SWITCH}
    if not changed <= movers:
        return 0.0
    return p_s ** len(changed) * (1.0 - p_s) ** (len(movers) - len(changed))


# --- beliefs --------------------------------------------------------------------

@dataclass(frozen=True)
class BeliefState:
    """Per rim agent, the probability that its type is OUT."""

    out: Mapping[int, float]
    stabilized: Mapping[int, bool] = field(default_factory=dict)

    def prob(self, u: int, t: State) -> float:
        p = self.out[u]
        return p if t == OUT else 1.0 - p

    def with_out(self, u: int, p_out: float, stable: Optional[bool] = None) -> "BeliefState":
        out = dict(self.out)
        out[u] = min(1.0, max(0.0, p_out))
        flags = dict(self.stabilized)
        if stable is not None:
            flags[u] = stable
        return BeliefState(out, flags)


def mean_degree_ceiling(g: Graph, loc: Locality) -> int:
    return math.ceil(sum(g.degree(w) for w in loc.members) / len(loc.members))


def initial_type_belief(g: Graph, loc: Locality, c: Configuration) -> BeliefState:
    """Assume everyone is OUT with the share p0 seen in the view, independently."""
    p0 = sum(1 for w in loc.members if c[w].state == OUT) / len(loc.members)
    dbar = mean_degree_ceiling(g, loc)
    inner = set(g.adjacency[loc.focal]) | {loc.focal}
    out = {}
    for u in loc.boundary:
        shared = sum(1 for w in inner if u in g.adjacency[w])
        out[u] = p0 ** max(0, dbar - shared)
    return BeliefState(out)


def belief_posterior(belief: BeliefState, u: int, observed_action: str,
                     action_model: Mapping[State, Mapping[str, float]]) -> BeliefState:
    """Bayes' rule for one rim agent given the action it was seen to take."""
    weights = {t: belief.prob(u, t) * action_model[t][observed_action] for t in (IN, OUT)}
    total = weights[IN] + weights[OUT]
    if total <= 0.0:
        raise BeliefError(f"no type of agent {u} explains action {observed_action}")
    return belief.with_out(u, weights[OUT] / total)


def stability_score(belief: BeliefState, u: int, rows: Mapping[State, Mapping[State, float]]) -> float:
    return sum(rows[t][t] * belief.prob(u, t) for t in (IN, OUT))


def belief_predict(belief: BeliefState, u: int, rows: Mapping[State, Mapping[State, float]],
                   gated: bool = True) -> BeliefState:
    """Push the belief one stage forward through the type-transition rows.

    With ``gated`` the push happens only while the agent still looks
    unsettled (stability score below one half).
    """
    if gated and stability_score(belief, u, rows) >= STABILIZED_GATE:
        return belief.with_out(u, belief.out[u], stable=True)
    p_out = sum(belief.prob(u, t) * rows[t][OUT] for t in (IN, OUT))
    return belief.with_out(u, p_out, stable=False)


def joint_type_prob(belief: BeliefState, theta: Mapping[int, State]) -> float:
    p = 1.0
    for u, t in theta.items():
        p *= belief.prob(u, t)
    return p


def joint_types(belief: BeliefState, agents: Sequence[int]):
    """Every joint type over ``agents`` with its probability."""
    for combo in itertools.product((OUT, IN), repeat=len(agents)):
        theta = dict(zip(agents, combo))
        yield theta, joint_type_prob(belief, theta)


# --- type-transition estimate on a regular surrogate ----------------------------

def regular_surrogate(size: int, degree: int) -> Tuple[List[Tuple[int, ...]], int]:
    """Circulant graph on ``size`` nodes; returns (adjacency, degree actually used)."""
    if size < 2:
        return [()] * size, 0
    d = min(max(degree, 1), size - 1)
    if d % 2 and size % 2:
        d -= 1
    adj = []
    for i in range(size):
        nb = set()
        for s in range(1, d // 2 + 1):
            nb.add((i + s) % size)
            nb.add((i - s) % size)
        if d % 2:
            nb.add((i + size // 2) % size)
        adj.append(tuple(sorted(nb)))
    return adj, d


def _switch_probs(states: np.ndarray, covered: np.ndarray, pending_nbrs: np.ndarray, policy: str,
                  p_s: float, fixed_p: float, gain: GainParams) -> np.ndarray:
    """Probability that each agent plays Switch in the surrogate round."""
    inside = states == IN
    if policy == "fixed-p":
        entering = np.full(states.shape, fixed_p)
    else:
        # one-step comparison against pending neighbours that all try to enter
        someone_enters = gain.theta * (1.0 - (1.0 - p_s) ** pending_nbrs)
        diff = (gain.theta - gain.zeta) - someone_enters
        entering = np.where(diff > 0, 1.0, np.where(diff == 0, 0.5, 0.0))
    return np.where(inside, covered.astype(float), np.where(covered, 0.0, entering))


@dataclass(frozen=True)
class TypeTransition:
    """Pr(type at t+1 | type at t, own state at t, own state at t+1)."""

    table: Mapping[Tuple[int, int], Mapping[State, Mapping[State, float]]]
    degree_used: int
    exact: bool

    def rows(self, st0: State, st1: State) -> Mapping[State, Mapping[State, float]]:
        return self.table[(int(st0), int(st1))]


def type_transition_estimate(size: int, degree: int, p0: float, p_s: float, policy: str = "myopic",
                             fixed_p: float = 0.5, samples: int = 2000, seed: int = 0,
                             gain: GainParams = GainParams()) -> TypeTransition:
    """Ratio-of-indicators estimate on a ``degree``-regular graph of ``size`` agents.

    Initial states are independent with Pr(IN) = 1 - p0; one round is played
    under ``policy`` and the randomized scheduler. The surrogate is vertex
    transitive, so counting at a single agent gives the same ratio as summing
    over all of them. Up to 12 agents every initial configuration is
    enumerated, otherwise ``samples`` are drawn.
    """
    # p0 is kept to two decimals so nearby neighbourhoods share one estimate
    return _type_transition_cached(size, degree, round(p0, 2), p_s, policy, fixed_p, samples, seed,
                                   gain.theta, gain.zeta)


@lru_cache(maxsize=4096)
def _surrogate_ball(size: int, degree: int):
    """Adjacency of the radius-3 ball around agent 0 of the surrogate, as a hashable key."""
    adj, d = regular_surrogate(size, degree)
    # states within three hops of agent 0 decide its move and its neighbours' moves
    dist = {0: 0}
    frontier = [0]
    for r in range(1, 4):
        frontier = [x for w in frontier for x in adj[w] if x not in dist]
        for x in frontier:
            dist.setdefault(x, r)
    ball = sorted(dist, key=lambda v: (dist[v], v))
    pos = {v: i for i, v in enumerate(ball)}
    edges = tuple(sorted((pos[v], pos[x]) for v in ball for x in adj[v] if x in pos))
    ring1 = tuple(sorted(pos[x] for x in adj[0]))
    return len(ball), edges, ring1, d


def _type_transition_cached(size, degree, p0, p_s, policy, fixed_p, samples, seed, theta, zeta) -> TypeTransition:
    b, edges, ring1, d = _surrogate_ball(size, degree)
    exact = size <= EXACT_ENUMERATION_LIMIT
    # large surrogates share their ball, and with it the estimate
    return _estimate_on_ball(b, edges, ring1, d, exact, p0, p_s, policy, fixed_p, samples, seed, theta, zeta)


@lru_cache(maxsize=4096)
def _estimate_on_ball(b, edges, ring1, d, exact, p0, p_s, policy, fixed_p, samples, seed, theta, zeta) -> TypeTransition:
    gain = GainParams(theta, zeta)
    A = np.zeros((b, b))
    for i, j in edges:
        A[i, j] = 1.0
    ring1 = list(ring1)

    if exact:
        S = np.array(list(itertools.product((OUT, IN), repeat=b)), dtype=float).reshape(-1, b)
        ins = S.sum(axis=1)
        weight = (1.0 - p0) ** ins * p0 ** (b - ins)
    else:
        rng = np.random.default_rng(derive_seed(seed, "type-transition", b, len(edges), d, repr(p0), repr(p_s), policy))
        S = (rng.random((samples, b)) >= p0).astype(float)
        weight = np.ones(samples)

    covered = (S @ A.T) > 0
    pending = (S == OUT) & ~covered
    pend_nbrs = pending.astype(float) @ A.T
    flips = p_s * _switch_probs(S, covered, pend_nbrs, policy, p_s, fixed_p, gain)

    st0 = S[:, 0].astype(int)
    tp0 = covered[:, 0].astype(int)
    f = flips[:, 0]
    p_st1_in = np.where(st0 == IN, 1.0 - f, f)
    stay_out = np.ones(len(S))
    for j in ring1:
        stay_out *= np.where(S[:, j] == IN, flips[:, j], 1.0 - flips[:, j])

    table = {}
    for s0 in (0, 1):
        for s1 in (0, 1):
            p_st1 = p_st1_in if s1 == IN else 1.0 - p_st1_in
            rows = {}
            for t0 in (IN, OUT):
                w = weight * ((st0 == s0) & (tp0 == t0)) * p_st1
                den = w.sum()
                if den > 0:
                    out = float((w * stay_out).sum() / den)
                    rows[t0] = {OUT: out, IN: 1.0 - out}
                else:
                    # never observed: keep the type
                    rows[t0] = {tp1: 1.0 if tp1 == t0 else 0.0 for tp1 in (IN, OUT)}
            table[(s0, s1)] = rows
    return TypeTransition(table, d, exact)


# --- fast look-ahead ---------------------------------------------------------------

_P_ONLY, _S_ONLY, _BOTH = 0, 1, 2


class _Lookahead:
    """Bitmask view of a LocalGame with a fixed joint type.

    Non-player members are frozen, so only player bits change. Instances
    depend on the game only through a small signature, which lets games on
    similar neighbourhoods share one memo (see :func:`_lookahead`).
    """

    def __init__(self, fixed_in, nmask, hes, settled, mask0, dt, p, delta, g_in, g_cov):
        self.k = len(fixed_in)
        self.fixed_in = fixed_in
        self.nmask = nmask
        self.hes = hes
        self.settled = settled
        self.mask0 = mask0
        self.dt = dt
        self.p = p
        self.delta = delta
        self.g_in, self.g_cov = g_in, g_cov
        self.pw = [[p ** a * (1 - p) ** b for b in range(self.k + 1)] for a in range(self.k + 1)]
        self._act = {}
        self._value = {}
        self.tables = {}

    def covered(self, i, m):
        return self.fixed_in[i] or bool(m & self.nmask[i])

    def actions(self, m):
        hit = self._act.get(m)
        if hit is None:
            out = []
            for i in range(self.k):
                inside = (m >> i) & 1
                cov = self.covered(i, m)
                if not inside and not cov:
                    out.append(_P_ONLY if self.hes[i] else _BOTH)
                elif inside and cov:
                    out.append(_S_ONLY)
                elif inside and self.dt and not self.settled[i]:
                    out.append(_BOTH)
                else:
                    out.append(_P_ONLY)
            hit = self._act[m] = tuple(out)
        return hit

    def gain(self, i, m):
        if (m >> i) & 1:
            return self.g_in
        return self.g_cov if self.covered(i, m) else 0.0

    def honest_mask(self, m, skip):
        """Switchers when everyone but ``skip`` follows the rules."""
        s = 0
        for j, a in enumerate(self.actions(m)):
            if j == skip:
                continue
            if a == _S_ONLY or (a == _BOTH and not (m >> j) & 1):
                s |= 1 << j
        return s

    def q(self, i, m, switchers, depth):
        """Expected discounted payoff of player i when ``switchers`` try to move."""
        base = self.gain(i, m)
        n_sw = bin(switchers).count("1")
        total = 0.0
        sub = switchers
        while True:
            moved = bin(sub).count("1")
            prob = self.pw[moved][n_sw - moved]
            if prob > 0:
                nxt = m ^ sub
                val = self.gain(i, nxt) - base
                if depth > 0:
                    val += self.delta * self.value(i, nxt, depth - 1)
                total += prob * val
            if sub == 0:
                break
            sub = (sub - 1) & switchers
        return total

    def value(self, i, m, depth):
        """Best continuation for i while the others follow the rules."""
        key = (i, m, depth)
        hit = self._value.get(key)
        if hit is not None:
            return hit
        acts = self.actions(m)
        if all(a == _P_ONLY for a in acts):
            best = 0.0
        else:
            others = self.honest_mask(m, i)
            options = []
            if acts[i] != _P_ONLY:
                options.append(others | (1 << i))
            if acts[i] != _S_ONLY:
                options.append(others)
            best = max(self.q(i, m, s, depth) for s in options)
        self._value[key] = best
        return best


_LOOKAHEADS: Dict[tuple, _Lookahead] = {}
_LOOKAHEAD_CACHE_LIMIT = 50_000


def _lookahead(game: LocalGame, theta: Mapping[int, State]) -> _Lookahead:
    players = game.players
    idx = {v: i for i, v in enumerate(players)}
    fixed_in = []
    nmask = []
    for v in players:
        frozen_in = any(game.state[w] == IN for w in game.adjacency[v] if w not in idx)
        if v in game.locality.boundary and theta.get(v) == IN:
            frozen_in = True
        fixed_in.append(frozen_in)
        m = 0
        for w in game.adjacency[v]:
            if w in idx:
                m |= 1 << idx[w]
        nmask.append(m)
    g = game.gain
    sig = (
        tuple(fixed_in), tuple(nmask),
        tuple(v in game.hesitating for v in players),
        tuple(v in game.settled for v in players),
        sum(1 << i for i, v in enumerate(players) if game.state[v] == IN),
        game.alg == "dtMIS", game.p_s, game.delta, g.theta - g.zeta, g.theta,
    )
    hit = _LOOKAHEADS.get(sig)
    if hit is None:
        if len(_LOOKAHEADS) >= _LOOKAHEAD_CACHE_LIMIT:
            _LOOKAHEADS.clear()
        hit = _LOOKAHEADS[sig] = _Lookahead(*sig)
    return hit


# --- stage equilibrium ----------------------------------------------------------------

Agent = Tuple[int, Optional[State]]  # (player, own type when the player sits on the rim)


@dataclass
class StrategyProfile:
    """Probability of Switch per agent, plus the forced choices."""

    switch: Dict[Agent, float]
    forced: Dict[Agent, float] = field(default_factory=dict)
    converged: bool = True
    gap: float = 0.0

    def prob(self, v: int, t: Optional[State] = None) -> float:
        for key in ((v, t), (v, None)):
            if key in self.switch:
                return self.switch[key]
            if key in self.forced:
                return self.forced[key]
        return 0.0


class _StageGame:
    """Normal form of the first stage: payoff tables per joint type and action profile."""

    def __init__(self, game: LocalGame, belief: BeliefState, depth: Optional[int] = None):
        self.game = game
        self.depth = game.horizon if depth is None else depth
        self.rim = game.boundary_players
        self.types = [(theta, w) for theta, w in joint_types(belief, self.rim) if w > 0]
        self.looks = []
        self.agents: List[Agent] = []
        self.forced: Dict[Agent, float] = {}
        seen = set()
        for theta, _ in self.types:
            look = _lookahead(game, theta)
            self.looks.append(look)
            acts = look.actions(look.mask0)
            for i, v in enumerate(game.players):
                key = (v, theta[v] if v in theta else None)
                if key in seen:
                    continue
                seen.add(key)
                if acts[i] == _BOTH:
                    self.agents.append(key)
                else:
                    self.forced[key] = 1.0 if acts[i] == _S_ONLY else 0.0
        self.index = {a: j for j, a in enumerate(self.agents)}

    def _agent_of(self, v, theta):
        return (v, theta[v] if v in theta else None)

    def table(self, t_idx: int, i: int):
        """Payoffs of player i under joint type t_idx for every pure profile of the free players."""
        look = self.looks[t_idx]
        key = (i, self.depth)
        if key in look.tables:
            return look.tables[key]
        acts = look.actions(look.mask0)
        free = [j for j in range(look.k) if acts[j] == _BOTH]
        forced = sum(1 << j for j in range(look.k) if acts[j] == _S_ONLY)
        out = {}
        for bits in itertools.product((1, 0), repeat=len(free)):
            s = forced
            for j, b in zip(free, bits):
                if b:
                    s |= 1 << j
            out[bits] = look.q(i, look.mask0, s, self.depth)
        look.tables[key] = (free, out)
        return look.tables[key]

    def expected(self, player: int, action: Optional[str], sigma: Sequence[float],
                 own_type: Optional[State] = None) -> float:
        """Expected payoff for ``player``; ``action`` None means follow sigma too."""
        game = self.game
        i = game.players.index(player)
        total = 0.0
        mass = 0.0
        for t_idx, (theta, w) in enumerate(self.types):
            if own_type is not None and theta.get(player) != own_type:
                continue
            free, tab = self.table(t_idx, i)
            probs = []
            for j in free:
                a = self._agent_of(game.players[j], theta)
                sw = sigma[self.index[a]]
                if j == i and action is not None:
                    sw = 1.0 if action == SWITCH else 0.0
                probs.append(sw)
            val = 0.0
            for bits, q in tab.items():
                pr = 1.0
                for b, sw in zip(bits, probs):
                    pr *= sw if b else 1.0 - sw
                    if pr == 0.0:
                        break
                if pr:
                    val += pr * q
            total += w * val
            mass += w
        return total / mass if mass > 0 else 0.0

    def advantage(self, agent: Agent, sigma: Sequence[float]) -> float:
        v, t = agent
        return self.expected(v, SWITCH, sigma, t) - self.expected(v, PRESERVE, sigma, t)

    def gap(self, sigma: Sequence[float]) -> float:
        worst = 0.0
        for j, (v, t) in enumerate(self.agents):
            es = self.expected(v, SWITCH, sigma, t)
            ep = self.expected(v, PRESERVE, sigma, t)
            mixed = sigma[j] * es + (1 - sigma[j]) * ep
            worst = max(worst, max(es, ep) - mixed)
        return worst


def _best_reply(adv: float) -> float:
    if adv > BR_TOLERANCE * 1e-3:
        return 1.0
    if adv < -BR_TOLERANCE * 1e-3:
        return 0.0
    return 0.5


def _refine(stage: _StageGame, sigma: List[float], mixed: List[int]) -> Optional[List[float]]:
    """Solve the indifference conditions of ``mixed`` agents, others at best reply."""
    if not mixed:
        return None
    base = list(sigma)

    def residual(x):
        s = list(base)
        for j, val in zip(mixed, x):
            s[j] = min(1.0, max(0.0, val))
        return [stage.advantage(stage.agents[j], s) for j in mixed]

    x0 = np.array([0.5] * len(mixed))
    for solve in (
        lambda: optimize.root(residual, x0, method="hybr", tol=1e-12).x,
        # bounded least squares copes where the clamped residual is flat
        lambda: optimize.least_squares(residual, x0, bounds=(0.0, 1.0), xtol=1e-15, ftol=1e-15, gtol=1e-15).x,
    ):
        try:
            x = solve()
        except (ValueError, FloatingPointError):
            continue
        cand = _settle_others(stage, base, mixed, x)
        if stage.gap(cand) <= BR_TOLERANCE:
            return cand
    return None


def _settle_others(stage: _StageGame, base: List[float], mixed: List[int], x) -> List[float]:
    cand = list(base)
    for j, val in zip(mixed, x):
        cand[j] = min(1.0, max(0.0, float(val)))
    for _ in range(4):
        # others settle to a best reply against the mixed agents
        changed = False
        for j, a in enumerate(stage.agents):
            if j in mixed:
                continue
            br = _best_reply(stage.advantage(a, cand))
            if br != cand[j]:
                cand[j] = br
                changed = True
        if not changed:
            break
    return cand


def _sequential_reply(stage: _StageGame, sigma: List[float], max_iter: int) -> Optional[List[float]]:
    """Agents reply one at a time; this settles many games where simultaneous replies cycle."""
    cur = [s if s in (0.0, 1.0) else 1.0 for s in sigma]
    for _ in range(max_iter):
        changed = False
        for j, a in enumerate(stage.agents):
            br = _best_reply(stage.advantage(a, cur))
            if br != cur[j]:
                cur[j] = br
                changed = True
        if not changed:
            return cur if stage.gap(cur) <= BR_TOLERANCE else None
    return None


def _pure_search(stage: _StageGame, limit: int = 12) -> Optional[List[float]]:
    if len(stage.agents) > limit:
        return None
    for bits in itertools.product((1.0, 0.0), repeat=len(stage.agents)):
        if stage.gap(list(bits)) <= BR_TOLERANCE:
            return list(bits)
    return None


def solve_stage_bne(game: LocalGame, belief: BeliefState, max_iter: int = 50) -> StrategyProfile:
    """Iterated best reply from the uniform profile; mixed equilibria by root finding.

    Each reply puts uniform mass on the argmax set. When replies cycle, the
    agents that keep flipping are made indifferent. Failing that, agents
    reply one at a time, and small games are searched for a pure
    equilibrium. If nothing works the average of the visited profiles is
    returned with ``converged=False``.
    """
    stage = _StageGame(game, belief)
    n = len(stage.agents)
    sigma = [0.5] * n
    if n == 0:
        return StrategyProfile({}, dict(stage.forced))
    visited = [list(sigma)]
    for _ in range(max_iter):
        nxt = [_best_reply(stage.advantage(a, sigma)) for a in stage.agents]
        if max(abs(x - y) for x, y in zip(nxt, sigma)) < BR_TOLERANCE:
            return _profile(stage, nxt, True)
        sigma = nxt
        if sigma in visited:
            break
        visited.append(list(sigma))
    cycle = visited[visited.index(sigma):] if sigma in visited else visited[-2:]
    flipping = [j for j in range(n) if len({s[j] for s in cycle}) > 1]
    for mixed in (flipping, list(range(n))):
        cand = _refine(stage, sigma, mixed)
        if cand is not None:
            return _profile(stage, cand, True)
    cand = _sequential_reply(stage, sigma, max_iter)
    if cand is None:
        cand = _pure_search(stage)
    if cand is not None:
        return _profile(stage, cand, True)
    avg = [sum(s[j] for s in visited) / len(visited) for j in range(n)]
    return _profile(stage, avg, False)


def _profile(stage: _StageGame, sigma: Sequence[float], converged: bool) -> StrategyProfile:
    return StrategyProfile(
        {a: float(s) for a, s in zip(stage.agents, sigma)},
        dict(stage.forced),
        converged,
        stage.gap(list(sigma)) if stage.agents else 0.0,
    )


def hba_expected_payoff(game: LocalGame, z: int, a_z: str, belief: BeliefState,
                        strategies: StrategyProfile, depth: Optional[int] = None,
                        own_type: Optional[State] = None) -> float:
    """Type-averaged expected payoff of ``z`` playing ``a_z`` now.

    Others play ``strategies`` in this stage and follow the rules afterwards;
    ``z`` keeps choosing its best continuation.
    """
    stage = _StageGame(game, belief, depth)
    sigma = [strategies.prob(v, t) for v, t in stage.agents]
    return stage.expected(z, a_z, sigma, own_type)


def best_response_gap(game: LocalGame, belief: BeliefState, profile: StrategyProfile) -> float:
    stage = _StageGame(game, belief)
    return stage.gap([profile.prob(v, t) for v, t in stage.agents]) if stage.agents else 0.0


def rule_probability(alg: str, rule_index: int, profile: StrategyProfile, v: int) -> float:
    if (alg, rule_index) not in (("vtMIS", 1), ("dtMIS", 1), ("dtMIS", 7)):
        raise ValueError(f"{alg} R{rule_index} is not driven by the game")
    return min(1.0, max(0.0, profile.prob(v)))


# --- building a game from a configuration ----------------------------------------

@dataclass(frozen=True)
class _View:
    loc: Locality
    order: Tuple[int, ...]
    dist: Mapping[int, int]
    adjacency: Mapping[int, Tuple[int, ...]]


def make_view(g: Graph, v: int) -> _View:
    loc = locality(g, v, 2)
    dist = bfs_distances(g, v, limit=2)
    order = tuple(sorted(loc.members, key=lambda w: (dist[w], w)))
    adjacency = {w: tuple(x for x in g.adjacency[w] if x in loc.members) for w in loc.members}
    return _View(loc, order, dist, adjacency)


def _may_move(view: _View, alg: str, c: Configuration, w: int, settled: FrozenSet[int]) -> bool:
    inside = c[w].state == IN
    seen_in = [x for x in view.adjacency[w] if c[x].state == IN]
    if inside:
        return bool(seen_in) or w in view.loc.boundary or (alg == "dtMIS" and w not in settled)
    return not seen_in


def select_players(view: _View, alg: str, c: Configuration, limit: int,
                   settled: FrozenSet[int] = frozenset()) -> Tuple[int, ...]:
    """Focal agent first, then agents that may move now, then agents one move away from it."""
    movers = {w for w in view.order if _may_move(view, alg, c, w, settled)}
    exposed = {
        w for w in view.order
        if w not in movers and c[w].state == OUT
        and all(x in movers for x in view.adjacency[w] if c[x].state == IN)
    }
    focal = view.loc.focal
    ranked = sorted(
        (w for w in view.order if w != focal and (w in movers or w in exposed)),
        key=lambda w: (view.dist[w], w not in movers, w),
    )
    return (focal, *ranked[: limit - 1])


def build_local_game(alg: str, g: Graph, c: Configuration, v: int, cfg: GameConfig, p_s: float,
                     gain: GainParams = GainParams(), view: Optional[_View] = None) -> LocalGame:
    view = view or make_view(g, v)
    hes = settled = frozenset()
    if alg == "dtMIS":
        settled = frozenset(
            w for w in view.order
            if w != v and c[w].state == IN and not dt_leave_profitable(g, c, w)
        )
    players = select_players(view, alg, c, cfg.max_players, settled)
    if alg == "dtMIS":
        hes = frozenset(w for w in players if hesitate_dt(g, c, w))
        settled = settled & frozenset(players)
    return LocalGame(
        alg=alg,
        locality=view.loc,
        adjacency=view.adjacency,
        state={w: c[w].state for w in view.loc.members},
        players=players,
        hesitating=hes,
        settled=settled,
        gain=gain,
        p_s=p_s,
        delta=cfg.delta,
        horizon=cfg.horizon,
    )


# --- per-agent oracle used by the round engine ---------------------------------------

@dataclass
class _Memory:
    belief: BeliefState
    snapshot: Tuple[int, ...]
    game: Optional[LocalGame] = None
    profile: Optional[StrategyProfile] = None
    prob: Dict[int, float] = field(default_factory=dict)


class GameOracle:
    """Rule probabilities for vtMIS/dtMIS, one belief state per agent.

    Called as ``oracle(alg, g, c, v, rule_index)``. Repeated calls on an
    unchanged view return the cached answer, so extra queries do not
    distort the belief dynamics.
    """

    def __init__(self, g: Graph, gain: GainParams, cfg: GameConfig, p_s: float, seed: int,
                 shared: Optional[dict] = None):
        self.g = g
        self.gain = gain
        self.cfg = cfg
        self.p_s = p_s
        self.seed = seed
        # neighbourhood views and solved stage games; several oracles on one graph may share them
        self.shared = shared if shared is not None else {"views": {}, "solves": {}}
        self.views: Dict[int, _View] = self.shared["views"]
        self._solves: Dict[tuple, Tuple[LocalGame, StrategyProfile]] = self.shared["solves"]
        self._memory: Dict[int, _Memory] = {}
        self.unconverged = 0
        self.solves = 0

    def view(self, v: int) -> _View:
        if v not in self.views:
            self.views[v] = make_view(self.g, v)
        return self.views[v]

    def __call__(self, alg, g, c, v, rule_index) -> float:
        name = alg.name
        if name == "dtMIS" and rule_index == 7:
            # leaving can only pay off if some neighbour would be free to take over
            if not dt_leave_profitable(g, c, v):
                return 0.0
        view = self.view(v)
        snap = tuple(int(c[w].state) for w in view.order)
        mem = self._memory.get(v)
        if mem is None:
            mem = _Memory(initial_type_belief(g, view.loc, c), snap)
            self._memory[v] = mem
        elif mem.snapshot != snap:
            mem.belief = self._update(view, mem, c, snap)
            mem.snapshot = snap
            mem.prob = {}
        if rule_index in mem.prob:
            return mem.prob[rule_index]
        game = build_local_game(name, g, c, v, self.cfg, self.p_s, self.gain, view)
        belief = BeliefState({u: mem.belief.out[u] for u in game.boundary_players})
        key = (name, v, snap, game.players, game.hesitating, game.settled, tuple(sorted(belief.out.items())))
        hit = self._solves.get(key)
        if hit is None:
            profile = solve_stage_bne(game, belief)
            self.solves += 1
            if not profile.converged:
                self.unconverged += 1
            self._solves[key] = (game, profile)
        else:
            game, profile = hit
        mem.game, mem.profile = game, profile
        p = rule_probability(name, rule_index, profile, v)
        if rule_index == 1 and c[v].state == OUT:
            p = max(p, self.cfg.entry_floor)
        mem.prob[rule_index] = p
        return p

    def _update(self, view: _View, mem: _Memory, c: Configuration, snap: Tuple[int, ...]) -> BeliefState:
        belief = mem.belief
        before = dict(zip(view.order, mem.snapshot))
        after = dict(zip(view.order, snap))
        members = len(view.order)
        p0 = sum(1 for s in snap if s == OUT) / members
        dbar = mean_degree_ceiling(self.g, view.loc)
        # the estimate depends only on its arguments, so it is shared across runs
        trans = type_transition_estimate(members, dbar, p0, self.p_s, self.cfg.oracle, self.cfg.fixed_p,
                                         self.cfg.samples, 0, self.gain)
        probe = LocalGame(
            alg=mem.game.alg if mem.game else "vtMIS",
            locality=view.loc,
            adjacency=view.adjacency,
            state={w: State(s) for w, s in before.items()},
            players=(),
            hesitating=mem.game.hesitating if mem.game else frozenset(),
        )
        out = dict(belief.out)
        flags = dict(belief.stabilized)
        fresh = None
        for u in view.loc.boundary:
            moved = before[u] != after[u]
            model = self._action_model(probe, mem, u)
            # one agent at a time, so the update stays linear in the rim size
            single = BeliefState({u: out[u]})
            try:
                single = belief_posterior(single, u, SWITCH if moved else PRESERVE, model)
            except BeliefError:
                if fresh is None:
                    fresh = initial_type_belief(self.g, view.loc, c)
                single = BeliefState({u: fresh.out[u]})
            single = belief_predict(single, u, trans.rows(State(before[u]), State(after[u])))
            out[u] = single.out[u]
            flags[u] = single.stabilized[u]
        return BeliefState(out, flags)

    def _action_model(self, probe: LocalGame, mem: _Memory, u: int):
        """Pr(seen to move | type): the last stage's strategy, else the rules."""
        model = {}
        for t in (IN, OUT):
            acts = available_actions(probe, probe.state, {u: t}, u)
            if acts == (SWITCH,):
                s = 1.0
            elif acts == (PRESERVE,):
                s = 0.0
            elif mem.profile is not None and ((u, t) in mem.profile.switch or (u, None) in mem.profile.switch):
                s = mem.profile.prob(u, t)
            else:
                s = 1.0 if probe.state[u] == OUT else 0.0
            move = self.p_s * s
            model[t] = {SWITCH: move, PRESERVE: 1.0 - move}
        return model
