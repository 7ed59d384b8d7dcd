"""Routing layer: construct and incrementally maintain low-emission routings.

Two entry modes mirror the assignment layer's two decision kinds: with a
plain accept the new destination goes wherever it is cheapest and the whole
routing is re-annealed; with a vehicle-bound accept it goes into that
vehicle's route and only that route is re-annealed.

Capacity is a hard constraint throughout the search; the emission quota is
only checked when accepting a final routing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import HUB, QUOTA_EPS, Instance, Route, Routing

OP_INSERTION = 0
OP_SWAP = 1
OP_TWO_OPT = 2


@dataclass(frozen=True)
class SAConfig:
    """Simulated-annealing schedule and neighborhood mix.

    Defaults are the reference schedule used for offline optimization;
    per-step dynamic budgets (DYNAMIC_GLOBAL_SA / DYNAMIC_ROUTE_SA) are far
    smaller and are reported in experiment artifacts.
    """

    tau_init: float = 1000.0
    tau_limit: float = 1.0
    cooling_rate: float = 0.995
    max_iterations: int = 50_000
    op_probs: tuple[float, float, float] = (0.30, 0.60, 0.10)  # insertion, swap, 2-opt

    def __post_init__(self) -> None:
        if not (self.tau_init > self.tau_limit > 0):
            raise ValueError("need tau_init > tau_limit > 0")
        if not 0 < self.cooling_rate < 1:
            raise ValueError("cooling_rate must be in (0, 1)")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if abs(sum(self.op_probs) - 1.0) > 1e-9 or any(p < 0 for p in self.op_probs):
            raise ValueError("op_probs must be non-negative and sum to 1")


#: Per-step budgets for the dynamic phase.  Scaled-down schedules: a single
#: incremental insertion perturbs the routing far less than offline
#: construction does, so a short reheat suffices.
DYNAMIC_GLOBAL_SA = SAConfig(tau_init=20.0, tau_limit=0.05, cooling_rate=0.99, max_iterations=800)
DYNAMIC_ROUTE_SA = SAConfig(tau_init=10.0, tau_limit=0.05, cooling_rate=0.99, max_iterations=400)


class RoutingState:
    """Mutable routing with cached per-route lengths and loads.

    The caches equal recomputed values at every observable point (method
    entry/exit); incremental float drift is squashed by ``refresh_caches``
    before results are handed back to callers.
    """

    __slots__ = ("instance", "routes", "lengths", "loads", "quantities", "_dist", "_efs", "_caps")

    def __init__(
        self,
        instance: Instance,
        routes: Optional[list[list[int]]] = None,
        quantities: Optional[Mapping[int, int]] = None,
    ):
        self.instance = instance
        self._dist = instance.dist_rows
        self._efs = [v.emission_factor for v in instance.vehicles]
        self._caps = [v.capacity for v in instance.vehicles]
        self.quantities = dict(quantities) if quantities is not None else None
        self.routes = [list(r) for r in routes] if routes is not None else [
            [] for _ in instance.vehicles
        ]
        if len(self.routes) != len(instance.vehicles):
            raise ValueError("one route per vehicle required")
        self.lengths = [self._path_length(r) for r in self.routes]
        self.loads = [self._route_load(r) for r in self.routes]

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_routing(
        cls,
        routing: Routing,
        instance: Instance,
        quantities: Optional[Mapping[int, int]] = None,
    ) -> "RoutingState":
        return cls(instance, [list(r.stops) for r in routing.routes], quantities)

    def copy(self) -> "RoutingState":
        new = object.__new__(RoutingState)
        new.instance = self.instance
        new._dist = self._dist
        new._efs = self._efs
        new._caps = self._caps
        new.quantities = None if self.quantities is None else dict(self.quantities)
        new.routes = [list(r) for r in self.routes]
        new.lengths = list(self.lengths)
        new.loads = list(self.loads)
        return new

    def to_routing(self) -> Routing:
        return Routing(
            tuple(
                Route(v.id, tuple(stops))
                for v, stops in zip(self.instance.vehicles, self.routes)
            )
        )

    # -- cached quantities ----------------------------------------------------

    def _qty(self, d: int) -> int:
        return 1 if self.quantities is None else self.quantities[d]

    def _route_load(self, stops: Sequence[int]) -> int:
        if self.quantities is None:
            return len(stops)
        return sum(self.quantities[d] for d in stops)

    def _path_length(self, stops: Sequence[int]) -> float:
        if not stops:
            return 0.0
        dist = self._dist
        total = dist[HUB][stops[0]]
        prev = stops[0]
        for d in stops[1:]:
            total += dist[prev][d]
            prev = d
        return total + dist[prev][HUB]

    @property
    def emission(self) -> float:
        return sum(ef * ln for ef, ln in zip(self._efs, self.lengths))

    def refresh_caches(self) -> None:
        self.lengths = [self._path_length(r) for r in self.routes]
        self.loads = [self._route_load(r) for r in self.routes]

    def destinations(self) -> set[int]:
        out: set[int] = set()
        for r in self.routes:
            out.update(r)
        return out

    def num_stops(self) -> int:
        return sum(len(r) for r in self.routes)

    # -- incremental edits ----------------------------------------------------

    def cheapest_insertion(
        self, d: int, vehicles: Optional[Iterable[int]] = None
    ) -> Optional[tuple[float, int, int]]:
        """Minimum emission increase over all capacity-feasible (vehicle,
        position) pairs; ties go to the lower vehicle index, then the earlier
        position.  Returns (delta_emission, vehicle_index, position) or None
        when no vehicle has residual capacity."""
        dist = self._dist
        drow = dist[d]
        q = self._qty(d)
        best: Optional[tuple[float, int, int]] = None
        best_delta = math.inf
        for vi in vehicles if vehicles is not None else range(len(self.routes)):
            if self.loads[vi] + q > self._caps[vi]:
                continue
            ef = self._efs[vi]
            stops = self.routes[vi]
            prev = HUB
            row_prev = dist[HUB]
            n = len(stops)
            for pos in range(n + 1):
                nxt = stops[pos] if pos < n else HUB
                delta = ef * (drow[prev] + drow[nxt] - row_prev[nxt])
                if delta < best_delta:
                    best_delta = delta
                    best = (delta, vi, pos)
                if pos < n:
                    prev = nxt
                    row_prev = dist[nxt]
        return best

    def insert(self, d: int, vi: int, pos: int) -> None:
        stops = self.routes[vi]
        dist = self._dist
        prev = stops[pos - 1] if pos > 0 else HUB
        nxt = stops[pos] if pos < len(stops) else HUB
        self.lengths[vi] += dist[prev][d] + dist[d][nxt] - dist[prev][nxt]
        self.loads[vi] += self._qty(d)
        stops.insert(pos, d)

    def remove(self, vi: int, pos: int) -> int:
        stops = self.routes[vi]
        dist = self._dist
        d = stops[pos]
        prev = stops[pos - 1] if pos > 0 else HUB
        nxt = stops[pos + 1] if pos + 1 < len(stops) else HUB
        self.lengths[vi] += dist[prev][nxt] - dist[prev][d] - dist[d][nxt]
        self.loads[vi] -= self._qty(d)
        stops.pop(pos)
        return d


class _UniformBlock:
    """Blocked scalar uniforms drawn from a numpy Generator (fast and
    deterministic)."""

    __slots__ = ("rng", "size", "buf", "i")

    def __init__(self, rng: np.random.Generator, block: int = 4096):
        self.rng = rng
        self.size = block
        self.buf = rng.random(block).tolist()
        self.i = 0

    def next(self) -> float:
        i = self.i
        if i >= self.size:
            self.buf = self.rng.random(self.size).tolist()
            self.i = i = 0
        self.i = i + 1
        return self.buf[i]


def construct_initial(
    instance: Instance,
    destinations: Iterable[int],
    quantities: Optional[Mapping[int, int]] = None,
) -> Optional[RoutingState]:
    """Greedy construction: repeatedly apply the globally cheapest
    capacity-feasible insertion until every destination is placed.

    The quota is not enforced here (annealing follows).  Returns None when
    capacity runs out before all destinations are placed.
    """
    state = RoutingState(instance, quantities=quantities)
    remaining = sorted(set(destinations))
    while remaining:
        best_delta = math.inf
        best = None
        for d in remaining:
            cand = state.cheapest_insertion(d)
            if cand is None:
                return None  # capacity can only shrink; d will never fit
            if cand[0] < best_delta:
                best_delta = cand[0]
                best = (d, cand[1], cand[2])
        assert best is not None
        d, vi, pos = best
        state.insert(d, vi, pos)
        remaining.remove(d)
    return state


def anneal_state(
    state: RoutingState,
    config: SAConfig,
    rng: np.random.Generator,
    scope_vehicle: Optional[int] = None,
    best_trace: Optional[list[float]] = None,
) -> RoutingState:
    """Metropolis simulated annealing minimizing total emission.

    Neighborhood operators: relocate a random destination to a random
    position (cross-route when the scope is global), swap two random
    destinations, and 2-opt segment reversal inside one route.  Moves that
    would break a capacity are discarded.  Exponential cooling with a
    temperature floor; the best capacity-feasible routing visited is
    returned, so the result never emits more than the input.

    ``scope_vehicle`` restricts every operator to that vehicle's route.
    ``best_trace``, when given, records the best emission after every
    iteration (monotone non-increasing).
    """
    dist = state.instance.dist_rows
    efs = state._efs
    caps = state._caps
    work = state.copy()
    routes = work.routes
    lengths = work.lengths
    loads = work.loads
    qty = work.quantities
    m = len(routes)
    scope = list(range(m)) if scope_vehicle is None else [scope_vehicle]

    current = work.emission
    best_emission = current
    best_routes = [list(r) for r in routes]
    if best_trace is not None:
        best_trace.append(best_emission)

    def scope_size() -> int:
        return sum(len(routes[vi]) for vi in scope)

    n_total = scope_size()
    if n_total == 0 or config.max_iterations == 0:
        return state.copy()

    u = _UniformBlock(rng)
    p_ins, p_swap, _ = config.op_probs
    p_ins_swap = p_ins + p_swap
    tau = config.tau_init
    tau_limit = config.tau_limit
    cool = config.cooling_rate
    exp = math.exp

    def flat_pick(idx: int) -> tuple[int, int]:
        for vi in scope:
            k = len(routes[vi])
            if idx < k:
                return vi, idx
            idx -= k
        raise AssertionError("flat index out of range")

    for _ in range(config.max_iterations):
        uop = u.next()
        delta = None
        undo = None

        if uop < p_ins:
            # relocate: remove a random destination, reinsert at a random spot
            if n_total >= 1:
                vs, ps = flat_pick(int(u.next() * n_total))
                ef_s = efs[vs]
                stops_s = routes[vs]
                d = stops_s[ps]
                prev = stops_s[ps - 1] if ps > 0 else HUB
                nxt = stops_s[ps + 1] if ps + 1 < len(stops_s) else HUB
                rem_dlen = dist[prev][nxt] - dist[prev][d] - dist[d][nxt]
                vt = scope[int(u.next() * len(scope))]
                q = 1 if qty is None else qty[d]
                if vt == vs or loads[vt] + q <= caps[vt]:
                    stops_t = routes[vt]
                    nt = len(stops_t) - (1 if vt == vs else 0)
                    pos = int(u.next() * (nt + 1))
                    if vt == vs:
                        # evaluate the insertion on the route without d
                        stops_s.pop(ps)
                        prev_t = stops_t[pos - 1] if pos > 0 else HUB
                        nxt_t = stops_t[pos] if pos < nt else HUB
                        drow = dist[d]
                        ins_dlen = drow[prev_t] + drow[nxt_t] - dist[prev_t][nxt_t]
                        delta = ef_s * (rem_dlen + ins_dlen)
                        undo = ("reloc_same", vs, ps, pos, d, rem_dlen + ins_dlen)
                    else:
                        prev_t = stops_t[pos - 1] if pos > 0 else HUB
                        nxt_t = stops_t[pos] if pos < nt else HUB
                        drow = dist[d]
                        ins_dlen = drow[prev_t] + drow[nxt_t] - dist[prev_t][nxt_t]
                        delta = ef_s * rem_dlen + efs[vt] * ins_dlen
                        undo = ("reloc_cross", vs, ps, vt, pos, d, q, rem_dlen, ins_dlen)
        elif uop < p_ins_swap:
            # swap two destinations (cross-route allowed in global scope)
            if n_total >= 2:
                i = int(u.next() * n_total)
                j = int(u.next() * (n_total - 1))
                if j >= i:
                    j += 1
                if i > j:
                    i, j = j, i
                vs, ps = flat_pick(i)
                vt, pt = flat_pick(j)
                a = routes[vs][ps]
                b = routes[vt][pt]
                if vs == vt:
                    s = routes[vs]
                    ef = efs[vs]
                    if pt == ps + 1:
                        p = s[ps - 1] if ps > 0 else HUB
                        n2 = s[pt + 1] if pt + 1 < len(s) else HUB
                        dlen = dist[p][b] + dist[a][n2] - dist[p][a] - dist[b][n2]
                    else:
                        pa = s[ps - 1] if ps > 0 else HUB
                        na = s[ps + 1]
                        pb = s[pt - 1]
                        nb = s[pt + 1] if pt + 1 < len(s) else HUB
                        dlen = (
                            dist[pa][b] + dist[b][na] - dist[pa][a] - dist[a][na]
                            + dist[pb][a] + dist[a][nb] - dist[pb][b] - dist[b][nb]
                        )
                    delta = ef * dlen
                    undo = ("swap_same", vs, ps, pt, dlen)
                else:
                    qa = 1 if qty is None else qty[a]
                    qb = 1 if qty is None else qty[b]
                    if (
                        loads[vs] - qa + qb <= caps[vs]
                        and loads[vt] - qb + qa <= caps[vt]
                    ):
                        s1 = routes[vs]
                        s2 = routes[vt]
                        pa = s1[ps - 1] if ps > 0 else HUB
                        na = s1[ps + 1] if ps + 1 < len(s1) else HUB
                        pb = s2[pt - 1] if pt > 0 else HUB
                        nb = s2[pt + 1] if pt + 1 < len(s2) else HUB
                        dl1 = dist[pa][b] + dist[b][na] - dist[pa][a] - dist[a][na]
                        dl2 = dist[pb][a] + dist[a][nb] - dist[pb][b] - dist[b][nb]
                        delta = efs[vs] * dl1 + efs[vt] * dl2
                        undo = ("swap_cross", vs, ps, vt, pt, qa, qb, dl1, dl2)
        else:
            # 2-opt: reverse a segment within one route
            eligible = [vi for vi in scope if len(routes[vi]) >= 2]
            if eligible:
                vr = eligible[int(u.next() * len(eligible))]
                s = routes[vr]
                k = len(s)
                i = int(u.next() * k)
                j = int(u.next() * (k - 1))
                if j >= i:
                    j += 1
                if i > j:
                    i, j = j, i
                p = s[i - 1] if i > 0 else HUB
                n2 = s[j + 1] if j + 1 < k else HUB
                dlen = dist[p][s[j]] + dist[s[i]][n2] - dist[p][s[i]] - dist[s[j]][n2]
                delta = efs[vr] * dlen
                undo = ("two_opt", vr, i, j, dlen)

        if delta is not None:
            accept = delta <= 0 or u.next() < exp(-delta / tau)
            kind = undo[0]
            if kind == "reloc_same":
                _, vs, ps, pos, d, dlen = undo
                if accept:
                    routes[vs].insert(pos, d)
                    lengths[vs] += dlen
                    current += delta
                else:
                    routes[vs].insert(ps, d)
            elif kind == "reloc_cross":
                _, vs, ps, vt, pos, d, q, rem_dlen, ins_dlen = undo
                if accept:
                    routes[vs].pop(ps)
                    routes[vt].insert(pos, d)
                    lengths[vs] += rem_dlen
                    lengths[vt] += ins_dlen
                    loads[vs] -= q
                    loads[vt] += q
                    current += delta
            elif kind == "swap_same":
                if accept:
                    _, vs, ps, pt, dlen = undo
                    s = routes[vs]
                    s[ps], s[pt] = s[pt], s[ps]
                    lengths[vs] += dlen
                    current += delta
            elif kind == "swap_cross":
                if accept:
                    _, vs, ps, vt, pt, qa, qb, dl1, dl2 = undo
                    routes[vs][ps], routes[vt][pt] = routes[vt][pt], routes[vs][ps]
                    lengths[vs] += dl1
                    lengths[vt] += dl2
                    loads[vs] += qb - qa
                    loads[vt] += qa - qb
                    current += delta
            else:  # two_opt
                if accept:
                    _, vr, i, j, dlen = undo
                    s = routes[vr]
                    s[i : j + 1] = reversed(s[i : j + 1])
                    lengths[vr] += dlen
                    current += delta
            if accept and current < best_emission - 1e-12:
                best_emission = current
                best_routes = [list(r) for r in routes]

        if best_trace is not None:
            best_trace.append(best_emission)
        tau *= cool
        if tau < tau_limit:
            tau = tau_limit

    result = RoutingState(state.instance, best_routes, state.quantities)
    # exact recompute protects the <=-input contract from incremental drift
    if result.emission > state.emission:
        return state.copy()
    return result


def anneal(
    routing: Routing,
    instance: Instance,
    config: SAConfig,
    rng: np.random.Generator,
    scope_vehicle: Optional[int] = None,
    quantities: Optional[Mapping[int, int]] = None,
    best_trace: Optional[list[float]] = None,
) -> Routing:
    """Routing-level wrapper around :func:`anneal_state`."""
    state = RoutingState.from_routing(routing, instance, quantities)
    return anneal_state(state, config, rng, scope_vehicle, best_trace).to_routing()


def route_offline_state(
    instance: Instance,
    accepted: Iterable[int],
    config: SAConfig,
    rng: np.random.Generator,
    quantities: Optional[Mapping[int, int]] = None,
) -> tuple[Optional[RoutingState], float]:
    """Offline phase: construct, anneal globally, then enforce the quota.

    Returns (state, emission); state is None when construction runs out of
    capacity or the annealed routing still exceeds the quota (the reported
    emission is the best one reached).
    """
    accepted = list(accepted)
    if not accepted:
        return RoutingState(instance, quantities=quantities), 0.0
    state = construct_initial(instance, accepted, quantities)
    if state is None:
        return None, math.inf
    state = anneal_state(state, config, rng)
    emission = state.emission
    if emission > instance.quota + QUOTA_EPS:
        return None, emission
    return state, emission


def route_offline(
    instance: Instance,
    accepted: Iterable[int],
    config: SAConfig,
    rng: np.random.Generator,
    quantities: Optional[Mapping[int, int]] = None,
) -> tuple[Optional[Routing], float]:
    state, emission = route_offline_state(instance, accepted, config, rng, quantities)
    return (state.to_routing() if state is not None else None), emission


def insert_omission_state(
    state: RoutingState,
    d: int,
    config: SAConfig,
    rng: np.random.Generator,
) -> tuple[RoutingState, bool]:
    """Insert ``d`` at the cheapest feasible position anywhere in the fleet,
    anneal the whole routing, and accept iff the quota still holds.

    On rejection the input state is returned unchanged.
    """
    cand = state.cheapest_insertion(d)
    if cand is None:
        return state, False
    work = state.copy()
    work.insert(d, cand[1], cand[2])
    work = anneal_state(work, config, rng)
    if work.emission > state.instance.quota + QUOTA_EPS:
        return state, False
    return work, True


def insert_vehicle_state(
    state: RoutingState,
    d: int,
    vehicle_index: int,
    config: SAConfig,
    rng: np.random.Generator,
) -> tuple[RoutingState, bool]:
    """Insert ``d`` at the best position of one vehicle's route, anneal that
    route only, and accept iff capacity and quota hold.  Other routes are
    untouched."""
    cand = state.cheapest_insertion(d, vehicles=(vehicle_index,))
    if cand is None:
        return state, False
    work = state.copy()
    work.insert(d, vehicle_index, cand[2])
    work = anneal_state(work, config, rng, scope_vehicle=vehicle_index)
    if work.emission > state.instance.quota + QUOTA_EPS:
        return state, False
    return work, True


def insert_omission(
    prev: Routing,
    d: int,
    instance: Instance,
    config: SAConfig,
    rng: np.random.Generator,
    quantities: Optional[Mapping[int, int]] = None,
) -> tuple[Routing, bool]:
    state, ok = insert_omission_state(
        RoutingState.from_routing(prev, instance, quantities), d, config, rng
    )
    return (state.to_routing() if ok else prev), ok


def insert_vehicle(
    prev: Routing,
    d: int,
    vehicle_index: int,
    instance: Instance,
    config: SAConfig,
    rng: np.random.Generator,
    quantities: Optional[Mapping[int, int]] = None,
) -> tuple[Routing, bool]:
    state, ok = insert_vehicle_state(
        RoutingState.from_routing(prev, instance, quantities), d, vehicle_index, config, rng
    )
    return (state.to_routing() if ok else prev), ok
