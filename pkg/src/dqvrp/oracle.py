"""Exact desk-scale oracles used to verify the heuristic stack.

Everything here is exponential-time and guarded by size bounds; these
functions exist so tests can compare annealed or learned behavior against
ground truth on tiny inputs.
"""
from __future__ import annotations

import itertools
import math
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import HUB, QUOTA_EPS, Instance, Route, Routing, Scenario

_HELD_KARP_MAX = 16


def held_karp(points: Sequence[int], distances: np.ndarray) -> tuple[float, tuple[int, ...]]:
    """Exact minimum-length hub-anchored tour through ``points``.

    Dynamic program over subsets; O(2^n n^2).  Returns (length, visiting
    order).  An empty set of points has length 0.
    """
    pts = list(points)
    n = len(pts)
    if n == 0:
        return 0.0, ()
    if n == 1:
        return 2.0 * float(distances[HUB, pts[0]]), (pts[0],)
    if n > _HELD_KARP_MAX:
        raise ValueError(f"held_karp limited to {_HELD_KARP_MAX} points, got {n}")
    d = [[float(distances[a, b]) for b in pts] for a in pts]
    d_hub = [float(distances[HUB, p]) for p in pts]

    size = 1 << n
    inf = math.inf
    cost = [[inf] * n for _ in range(size)]
    parent = [[-1] * n for _ in range(size)]
    for j in range(n):
        cost[1 << j][j] = d_hub[j]
    for mask in range(size):
        row = cost[mask]
        for j in range(n):
            cj = row[j]
            if cj == inf or not (mask >> j) & 1:
                continue
            dj = d[j]
            for k in range(n):
                if (mask >> k) & 1:
                    continue
                nm = mask | (1 << k)
                nc = cj + dj[k]
                if nc < cost[nm][k]:
                    cost[nm][k] = nc
                    parent[nm][k] = j
    full = size - 1
    best = inf
    best_j = -1
    for j in range(n):
        total = cost[full][j] + d_hub[j]
        if total < best:
            best = total
            best_j = j
    order_rev = []
    mask, j = full, best_j
    while j != -1:
        order_rev.append(pts[j])
        pj = parent[mask][j]
        mask ^= 1 << j
        j = pj
    return best, tuple(reversed(order_rev))


def _min_emission_routing(
    instance: Instance,
    accepted: Iterable[int],
    quantities: Optional[Mapping[int, int]] = None,
    _tsp_cache: Optional[dict] = None,
) -> tuple[float, Optional[Routing]]:
    """Exact minimum total emission over all capacity-feasible ways to split
    ``accepted`` across the fleet, with each route solved to optimality.

    Returns (emission, routing); (inf, None) when capacity cannot host the set.
    """
    dests = sorted(accepted)
    vehicles = instance.vehicles
    m = len(vehicles)
    cache = _tsp_cache if _tsp_cache is not None else {}

    def tsp(subset: tuple[int, ...]) -> tuple[float, tuple[int, ...]]:
        hit = cache.get(subset)
        if hit is None:
            hit = held_karp(subset, instance.distances)
            cache[subset] = hit
        return hit

    def qsum(sub: Sequence[int]) -> int:
        if quantities is None:
            return len(sub)
        return sum(quantities[d] for d in sub)

    best = math.inf
    best_split: Optional[tuple[tuple[int, ...], ...]] = None
    for labels in itertools.product(range(m), repeat=len(dests)):
        groups: list[list[int]] = [[] for _ in range(m)]
        for d, lab in zip(dests, labels):
            groups[lab].append(d)
        if any(qsum(g) > vehicles[i].capacity for i, g in enumerate(groups)):
            continue
        emission = 0.0
        orders = []
        for i, g in enumerate(groups):
            length, order = tsp(tuple(g))
            emission += vehicles[i].emission_factor * length
            orders.append(order)
        if emission < best:
            best = emission
            best_split = tuple(orders)
    if best_split is None:
        return math.inf, None
    routing = Routing(
        tuple(Route(v.id, stops) for v, stops in zip(vehicles, best_split))
    )
    return best, routing


def brute_force_offline(
    instance: Instance,
    scenario: Scenario,
    max_horizon: int = 7,
    max_vehicles: int = 2,
) -> tuple[int, float, Routing]:
    """Optimal accepted-demand count with full scenario knowledge.

    Exhausts every subset of the scenario, every split across vehicles, and
    the exact tour per route; maximizes accepted count (quantity in
    heterogeneous mode), breaking ties toward lower emission.  Returns
    (accepted, emission, witness routing).
    """
    h = len(scenario)
    m = len(instance.vehicles)
    if h > max_horizon or m > max_vehicles:
        raise ValueError(f"brute_force_offline bounded to H<={max_horizon}, |V|<={max_vehicles}")
    quantities = scenario.quantity_map() if scenario.quantities is not None else None
    tsp_cache: dict = {}
    dests = list(scenario.demands)

    best_ad = -1
    best_emis = math.inf
    best_routing: Optional[Routing] = None
    for bits in range(1 << h):
        subset = [dests[i] for i in range(h) if (bits >> i) & 1]
        if quantities is None:
            ad = len(subset)
        else:
            ad = sum(quantities[d] for d in subset)
        if ad < best_ad:
            continue
        emission, routing = _min_emission_routing(instance, subset, quantities, tsp_cache)
        if routing is None or emission > instance.quota + QUOTA_EPS:
            continue
        if ad > best_ad or (ad == best_ad and emission < best_emis):
            best_ad = ad
            best_emis = emission
            best_routing = routing
    assert best_routing is not None  # the empty subset is always feasible
    return best_ad, best_emis, best_routing


def brute_force_policy_value(
    instance: Instance,
    max_destinations: int = 6,
    max_horizon: int = 5,
    max_vehicles: int = 2,
) -> float:
    """Exact expected accepted-demand count of the optimal online policy.

    Backward induction over (revealed set, accepted set) states, with set
    feasibility decided by exact minimum-emission routing.  Fully dynamic
    instances only (every demand is a free decision).
    """
    k = instance.num_destinations
    h = instance.horizon
    if k > max_destinations or h > max_horizon or len(instance.vehicles) > max_vehicles:
        raise ValueError(
            f"brute_force_policy_value bounded to K<={max_destinations}, "
            f"H<={max_horizon}, |V|<={max_vehicles}"
        )
    if instance.dod != 1.0:
        raise ValueError("policy-value oracle supports fully dynamic instances (dod=1)")

    probs = [0.0] + [instance.prob_of(d) for d in range(1, k + 1)]
    all_dests = frozenset(range(1, k + 1))
    tsp_cache: dict = {}
    feas_cache: dict[frozenset, bool] = {frozenset(): True}

    def feasible(accepted: frozenset) -> bool:
        hit = feas_cache.get(accepted)
        if hit is None:
            emission, routing = _min_emission_routing(instance, accepted, None, tsp_cache)
            hit = routing is not None and emission <= instance.quota + QUOTA_EPS
            feas_cache[accepted] = hit
        return hit

    value_cache: dict[tuple[frozenset, frozenset], float] = {}

    def value(seen: frozenset, accepted: frozenset) -> float:
        if len(seen) == h:
            return 0.0
        key = (seen, accepted)
        hit = value_cache.get(key)
        if hit is not None:
            return hit
        unseen = all_dests - seen
        total_p = sum(probs[d] for d in unseen)
        ev = 0.0
        for d in unseen:
            seen2 = seen | {d}
            best = value(seen2, accepted)
            acc2 = accepted | {d}
            if feasible(acc2):
                take = 1.0 + value(seen2, acc2)
                if take > best:
                    best = take
            ev += probs[d] / total_p * best
        value_cache[key] = ev
        return ev

    return value(frozenset(), frozenset())
