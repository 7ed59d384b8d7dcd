"""Baseline assignment policies and the shared episode runner.

Agents implement a tiny protocol: ``begin_episode(instance, seed)`` then
``act(env, obs) -> action``.  Baselines are state-based (they may inspect the
env's routing); learning agents only read the observation vector.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (
    ACCEPT,
    HUB,
    QUOTA_EPS,
    REJECT,
    Assignment,
    Decision,
    Instance,
    Routing,
    Scenario,
    accepted_count,
)
from .env import ACTION_ACCEPT, ACTION_REJECT, DqvrpEnv, OfflineFailure
from .generate import sample_suffixes
from .routing import RoutingState, SAConfig, _UniformBlock


class FafsAgent:
    """First arrived, first served: accept everything; rejections only
    happen when the routing layer cannot integrate the demand."""

    name = "fafs"

    def begin_episode(self, instance: Instance, seed: int) -> None:
        pass

    def act(self, env: DqvrpEnv, obs: np.ndarray) -> int:
        return ACTION_ACCEPT


class RandomAgent:
    """Uniform random action over {reject} and the fleet; a floor for sanity
    checks and environment fuzzing."""

    name = "random"

    def __init__(self) -> None:
        self._rng: Optional[np.random.Generator] = None

    def begin_episode(self, instance: Instance, seed: int) -> None:
        self._rng = np.random.default_rng(np.random.SeedSequence((seed, 0xA11)))

    def act(self, env: DqvrpEnv, obs: np.ndarray) -> int:
        return int(self._rng.integers(0, env.num_actions))


@dataclass(frozen=True)
class MSAConfig:
    """Sampling-consensus settings; the vote needs an odd sample count."""

    num_scenarios: int = 101
    memoize: bool = True

    def __post_init__(self) -> None:
        if self.num_scenarios < 1 or self.num_scenarios % 2 == 0:
            raise ValueError("num_scenarios must be odd so the majority vote is well-defined")


def _simulate_completion(
    state: RoutingState,
    target: int,
    future: Sequence[int],
    quota: float,
) -> bool:
    """Cheapest-insertion completion: repeatedly insert whichever remaining
    demand costs the least emission (capacity-respecting), stopping when all
    are placed or the cheapest insertion would break the quota.

    Returns whether ``target`` made it into the completed routing.  Insertion
    is set-based, so the outcome depends on the sampled futures only through
    the set of destinations.
    """
    work = state.copy()
    emission = work.emission
    remaining = [target, *future]
    while remaining:
        best_delta = math.inf
        best = None
        drop = []
        for d in remaining:
            cand = work.cheapest_insertion(d)
            if cand is None:
                drop.append(d)  # capacity can only shrink; d is out for good
                continue
            if cand[0] < best_delta:
                best_delta = cand[0]
                best = (d, cand[1], cand[2])
        for d in drop:
            if d == target:
                return False
            remaining.remove(d)
        if best is None:
            return False
        if emission + best_delta > quota + QUOTA_EPS:
            return False
        d, vi, pos = best
        work.insert(d, vi, pos)
        emission += best_delta
        if d == target:
            return True
        remaining.remove(d)
    return False


class MsaAgent:
    """Scenario-sampling consensus: complete the revealed prefix n times,
    solve each completion by cheapest insertion, accept on majority vote.

    Per-decision RNG streams derive from (episode seed, t), so decisions are
    reproducible and independent across steps.
    """

    name = "msa"

    def __init__(self, config: Optional[MSAConfig] = None):
        self.config = config or MSAConfig()
        self._seed = 0
        self._memo: dict = {}

    def begin_episode(self, instance: Instance, seed: int) -> None:
        self._seed = seed

    def act(self, env: DqvrpEnv, obs: np.ndarray) -> int:
        instance = env.instance
        t = env.t
        d = env.current_demand
        n = self.config.num_scenarios
        rng = np.random.default_rng(np.random.SeedSequence((self._seed, t)))
        suffix_len = instance.horizon - t
        suffixes = sample_suffixes(instance, sorted(env.seen), suffix_len, n, rng)
        state = env.state
        quota = instance.quota
        memo = self._memo if self.config.memoize else None
        if memo is not None:
            state_key = tuple(tuple(r) for r in state.routes)
        votes = 0
        for row in suffixes:
            future = row.tolist()
            if memo is not None:
                key = (state_key, d, frozenset(future))
                hit = memo.get(key)
                if hit is None:
                    hit = _simulate_completion(state, d, future, quota)
                    memo[key] = hit
                accepted = hit
            else:
                accepted = _simulate_completion(state, d, future, quota)
            votes += accepted
        return ACTION_ACCEPT if 2 * votes > n else ACTION_REJECT


# ---------------------------------------------------------------------------
# Offline agent: permutation annealing decoded by greedy split
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OfflineConfig:
    sa: SAConfig = field(default_factory=SAConfig)
    #: maximize L*Ad + emission literally instead of L*Ad - emission
    literal_h_sign: bool = False


def tie_break_scale(instance: Instance) -> float:
    """Twice the largest single-edge emission over all vehicle/edge pairs
    (hub edges included)."""
    max_ef = max(v.emission_factor for v in instance.vehicles)
    return 2.0 * max_ef * float(instance.distances.max())


def greedy_split(
    permutation: Sequence[int],
    instance: Instance,
    quantities: Optional[dict[int, int]] = None,
) -> tuple[list[list[int]], set[int], int, float]:
    """Decode a demand permutation into routes by filling vehicles in
    increasing emission-factor order.

    Destinations are appended to the current vehicle's route end; one that
    would exceed its capacity advances the vehicle pointer (permanently); one
    whose appended leg would push total emission past the quota is rejected;
    everything left once the fleet is exhausted is rejected.

    Returns (routes in fleet order, accepted set, accepted count/quantity,
    emission).
    """
    vehicles = instance.vehicles
    dist = instance.dist_rows
    order = sorted(range(len(vehicles)), key=lambda i: (vehicles[i].emission_factor, i))
    routes: list[list[int]] = [[] for _ in vehicles]
    loads = [0] * len(vehicles)
    lasts = [HUB] * len(vehicles)
    emission = 0.0
    quota = instance.quota + QUOTA_EPS
    accepted: set[int] = set()
    ad = 0
    cur = 0
    for d in permutation:
        q = 1 if quantities is None else quantities[d]
        while cur < len(order) and loads[order[cur]] + q > vehicles[order[cur]].capacity:
            cur += 1
        if cur >= len(order):
            break  # no vehicle can take this or any later destination (unit mode)
        vi = order[cur]
        last = lasts[vi]
        delta = vehicles[vi].emission_factor * (
            dist[last][d] + dist[d][HUB] - dist[last][HUB]
        )
        if emission + delta > quota:
            continue  # quota-violating destination is rejected; try later ones
        routes[vi].append(d)
        loads[vi] += q
        lasts[vi] = d
        emission += delta
        accepted.add(d)
        ad += q
    return routes, accepted, ad, emission


@dataclass
class OfflineResult:
    assignment: Assignment
    routing: Routing
    ad: int
    emission: float
    objective: float


def offline_solve(
    instance: Instance,
    scenario: Scenario,
    config: Optional[OfflineConfig] = None,
    rng: Optional[np.random.Generator] = None,
) -> OfflineResult:
    """Full-information baseline: anneal over demand permutations, decoding
    each with greedy_split and scoring h = L*Ad - emission (sign per config).

    Neighborhood mix and cooling schedule are shared with the routing layer.
    """
    config = config or OfflineConfig()
    rng = rng if rng is not None else np.random.default_rng()
    quantities = scenario.quantity_map() if scenario.quantities is not None else None
    big_l = tie_break_scale(instance)
    sign = 1.0 if config.literal_h_sign else -1.0

    def score(perm: list[int]) -> float:
        _, _, ad, emission = greedy_split(perm, instance, quantities)
        return big_l * ad + sign * emission

    perm = list(scenario.demands)
    h = len(perm)
    current = score(perm)
    best = current
    best_perm = list(perm)

    if h >= 2 and config.sa.max_iterations > 0:
        u = _UniformBlock(rng)
        p_ins, p_swap, _ = config.sa.op_probs
        p_ins_swap = p_ins + p_swap
        tau = config.sa.tau_init
        cool = config.sa.cooling_rate
        tau_limit = config.sa.tau_limit
        exp = math.exp
        for _ in range(config.sa.max_iterations):
            uop = u.next()
            if uop < p_ins:
                i = int(u.next() * h)
                j = int(u.next() * h)
                d = perm.pop(i)
                perm.insert(j, d)
                undo = ("ins", i, j)
            elif uop < p_ins_swap:
                i = int(u.next() * h)
                j = int(u.next() * (h - 1))
                if j >= i:
                    j += 1
                perm[i], perm[j] = perm[j], perm[i]
                undo = ("swap", i, j)
            else:
                i = int(u.next() * h)
                j = int(u.next() * (h - 1))
                if j >= i:
                    j += 1
                if i > j:
                    i, j = j, i
                perm[i : j + 1] = reversed(perm[i : j + 1])
                undo = ("rev", i, j)
            cand = score(perm)
            delta = cand - current  # maximizing h
            if delta >= 0 or u.next() < exp(delta / tau):
                current = cand
                if cand > best:
                    best = cand
                    best_perm = list(perm)
            else:
                kind, i, j = undo
                if kind == "ins":
                    d = perm.pop(j)
                    perm.insert(i, d)
                elif kind == "swap":
                    perm[i], perm[j] = perm[j], perm[i]
                else:
                    perm[i : j + 1] = reversed(perm[i : j + 1])
            tau *= cool
            if tau < tau_limit:
                tau = tau_limit

    routes, accepted, ad, emission = greedy_split(best_perm, instance, quantities)
    routing = RoutingState(instance, routes, quantities).to_routing()
    decisions = tuple(ACCEPT if d in accepted else REJECT for d in scenario.demands)
    return OfflineResult(Assignment(decisions), routing, ad, emission, best)


class OfflineAgent:
    """Full-information baseline; solved per scenario, not stepped through
    the environment."""

    name = "offline"
    uses_env = False

    def __init__(self, config: Optional[OfflineConfig] = None):
        self.config = config or OfflineConfig()

    def solve(self, instance: Instance, scenario: Scenario, seed: int) -> OfflineResult:
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x0FF)))
        return offline_solve(instance, scenario, self.config, rng)


# ---------------------------------------------------------------------------
# Episode runner
# ---------------------------------------------------------------------------

@dataclass
class EpisodeResult:
    agent: str
    ad: int
    reward_total: float
    emission: float
    rejections: int
    invalidated: int
    offline_failure: bool
    decide_seconds: float
    steps: int
    assignment: Optional[Assignment] = None


def episode_rngs(episode_seed: int) -> tuple[np.random.Generator, int]:
    """(environment rng, agent seed) derived deterministically from one seed."""
    ss = np.random.SeedSequence(episode_seed)
    env_child, agent_child = ss.spawn(2)
    agent_seed = int(agent_child.generate_state(1)[0])
    return np.random.default_rng(env_child), agent_seed


def run_episode(
    env: DqvrpEnv,
    scenario: Scenario,
    agent,
    episode_seed: int,
    timed: bool = False,
    keep_assignment: bool = False,
) -> EpisodeResult:
    """Play one episode; on offline failure returns a zeroed result with the
    failure flag set."""
    if not getattr(agent, "uses_env", True):
        t0 = time.perf_counter()
        res = agent.solve(env.instance, scenario, episode_seed)
        dt = time.perf_counter() - t0
        return EpisodeResult(
            agent=agent.name,
            ad=res.ad,
            reward_total=float(res.ad),
            emission=res.emission,
            rejections=len(scenario) - sum(d.accepted for d in res.assignment.decisions),
            invalidated=0,
            offline_failure=False,
            decide_seconds=dt if timed else 0.0,
            steps=len(scenario),
            assignment=res.assignment if keep_assignment else None,
        )

    env_rng, agent_seed = episode_rngs(episode_seed)
    agent.begin_episode(env.instance, agent_seed)
    try:
        obs = env.reset(scenario, env_rng)
    except OfflineFailure:
        return EpisodeResult(agent.name, 0, 0.0, 0.0, 0, 0, True, 0.0, 0)
    seconds = 0.0
    steps = 0
    done = obs is None
    while not done:
        if timed:
            t0 = time.perf_counter()
            action = agent.act(env, obs)
            obs, _, done, _ = env.step(action)
            seconds += time.perf_counter() - t0
        else:
            action = agent.act(env, obs)
            obs, _, done, _ = env.step(action)
        steps += 1
    assignment = env.assignment()
    return EpisodeResult(
        agent=agent.name,
        ad=accepted_count(assignment, scenario),
        reward_total=env.reward_total,
        emission=env.emission,
        rejections=sum(1 for d in assignment.decisions if not d.accepted),
        invalidated=env.invalidated,
        offline_failure=False,
        decide_seconds=seconds,
        steps=steps,
        assignment=assignment if keep_assignment else None,
    )
