"""Schedulers deciding which enabled agents act in a round."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Set, Tuple

from selfstab._rng import derive_seed, uniform

KINDS = ("central", "synchronous", "distributed", "unfair")
ADVERSARIES = ("max-id-first", "min-progress", "worst-chain")

# rejection sampling of an empty randomized draw gives up after this many tries
_MAX_REDRAWS = 10_000


class SchedulerError(ValueError):
    pass


@dataclass(frozen=True)
class SchedulerPolicy:
    kind: str = "distributed"
    p_s: float = 0.8
    adversary: str = "max-id-first"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchedulerError(f"unknown scheduler kind {self.kind!r}")
        if self.kind == "distributed" and not 0 < self.p_s <= 1:
            raise SchedulerError("p_s must lie in (0, 1]")
        if self.kind == "unfair" and self.adversary not in ADVERSARIES:
            raise SchedulerError(f"unknown adversary {self.adversary!r}")


@dataclass
class Hints:
    """What an adversary may look at besides the enabled set."""

    ids: Sequence[int] = ()
    # agents whose chosen rule would write state := IN
    entering: Set[int] = None
    adjacency: Sequence[Sequence[int]] = ()


def select(policy: SchedulerPolicy, enabled: Sequence[int], round_: int, seed: int,
           hints: Optional[Hints] = None) -> List[int]:
    """Pick the agents that act in ``round_``.

    Draws are keyed by (seed, agent, round) so the outcome does not depend on
    the order in which ``enabled`` is listed.
    """
    return draw(policy, enabled, round_, seed, hints)[0]


def draw(policy: SchedulerPolicy, enabled: Sequence[int], round_: int, seed: int,
         hints: Optional[Hints] = None) -> Tuple[List[int], int]:
    """Like :func:`select`, also returning how many empty draws were rejected."""
    pool = sorted(enabled)
    if not pool:
        return [], 0
    kind = policy.kind
    if kind == "synchronous":
        return pool, 0
    if kind == "central":
        k = derive_seed(seed, "central", round_) % len(pool)
        return [pool[k]], 0
    if kind == "distributed":
        if policy.p_s >= 1.0:
            return pool, 0
        for attempt in range(_MAX_REDRAWS):
            chosen = [v for v in pool if uniform(seed, "sched", v, round_, attempt) < policy.p_s]
            if chosen:
                return chosen, attempt
        return [pool[derive_seed(seed, "sched-fallback", round_) % len(pool)]], _MAX_REDRAWS
    return _adversary(policy.adversary, pool, hints or Hints()), 0


def _adversary(name: str, pool: List[int], hints: Hints) -> List[int]:
    ids = hints.ids or list(range(1, max(pool) + 2))
    by_id = lambda v: ids[v]
    if name == "max-id-first":
        return [max(pool, key=by_id)]
    entering = hints.entering or set()
    if name == "min-progress":
        # release simultaneous entries next to each other so they collide
        clash = [
            v for v in pool
            if v in entering and any(w in entering and w in pool for w in hints.adjacency[v])
        ] if hints.adjacency else []
        return clash or [max(pool, key=by_id)]
    # worst-chain: one agent at a time, entering moves first, largest id first
    movers = [v for v in pool if v in entering]
    return [max(movers or pool, key=by_id)]
