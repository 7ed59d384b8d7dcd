"""Episode environment: offline prefix routing, dynamic accept/reject steps,
rewards, and the engineered observation vector.

Action encoding for :meth:`DqvrpEnv.step`:

* ``ACTION_REJECT`` (0) — reject the revealed demand;
* ``1..m`` — accept and bind it to vehicle ``action - 1`` (fleet index);
* ``ACTION_ACCEPT`` (-1) — accept and let the routing layer place it.

The observation vector, in order: remaining steps (unless hidden), residual
capacity per vehicle, quota slack, per-vehicle proximity of the demand to
already assigned stops (emission-scaled), probability-weighted proximity to
potential future demands, and (heterogeneous mode) the demanded quantity.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (
    ACCEPT,
    HETEROGENEOUS,
    REJECT,
    Assignment,
    Decision,
    Instance,
    Routing,
    Scenario,
    accept_to,
)
from .routing import (
    DYNAMIC_GLOBAL_SA,
    DYNAMIC_ROUTE_SA,
    RoutingState,
    SAConfig,
    insert_omission_state,
    insert_vehicle_state,
    route_offline_state,
)

ACTION_REJECT = 0
ACTION_ACCEPT = -1

FUTURE_UNSEEN = "unseen"
FUTURE_OUTSIDE_SCENARIO = "outside-scenario"


@dataclass(frozen=True)
class ObsConfig:
    """Observation feature parameters.

    ``horizon_noise_std_frac`` perturbs the horizon estimate once per episode
    (a forecast, not per-step jitter); ``horizon_hidden`` removes the
    remaining-steps slot entirely.  ``future_mode`` selects which
    destinations count as potential future demands: those not yet revealed
    (default) or those outside the whole scenario.
    """

    k_ad: int = 3
    k_fd: int = 7
    horizon_noise_std_frac: float = 0.0
    horizon_hidden: bool = False
    future_mode: str = FUTURE_UNSEEN

    def __post_init__(self) -> None:
        if self.k_ad < 1 or self.k_fd < 1:
            raise ValueError("k_ad and k_fd must be >= 1")
        if self.horizon_noise_std_frac < 0:
            raise ValueError("horizon_noise_std_frac must be >= 0")
        if self.future_mode not in (FUTURE_UNSEEN, FUTURE_OUTSIDE_SCENARIO):
            raise ValueError(f"unknown future_mode {self.future_mode!r}")


def obs_size(num_vehicles: int, config: ObsConfig, quantity_mode: str = "unit") -> int:
    size = 2 * num_vehicles + 3
    if config.horizon_hidden:
        size -= 1
    if quantity_mode == HETEROGENEOUS:
        size += 1
    return size


def dad(
    k_ad: int,
    destination: int,
    stops: Sequence[int],
    emission_factor: float,
    distances: np.ndarray,
) -> float:
    """Emission-scaled proximity of ``destination`` to a route's stops.

    Sums the distances to the min(k_ad, len(stops)) nearest stops and divides
    by k_ad (not by the count), scaled by the vehicle's emission factor.  An
    empty route falls back to the hub as the vehicle's only location.
    """
    if not stops:
        return emission_factor * float(distances[0, destination])
    dists = distances[destination, np.fromiter(stops, dtype=np.int64)]
    if dists.shape[0] > k_ad:
        dists = np.sort(dists)[:k_ad]
    return emission_factor * float(dists.sum()) / k_ad


def dfd(
    k_fd: int,
    destination: int,
    unseen: np.ndarray,
    request_probs: np.ndarray,
    distances: np.ndarray,
) -> float:
    """Probability-weighted proximity of ``destination`` to potential future
    demands: the median of p_u * D[u, destination] over the min(k_fd,
    |unseen|) nearest unseen destinations; 0 when none remain."""
    if unseen.shape[0] == 0:
        return 0.0
    dists = distances[destination, unseen]
    if dists.shape[0] > k_fd:
        idx = np.argsort(dists, kind="stable")[:k_fd]
        dists = dists[idx]
        ids = unseen[idx]
    else:
        ids = unseen
    weighted = request_probs[ids - 1] * dists
    return float(np.median(weighted))


class OfflineFailure(RuntimeError):
    """The known demand prefix cannot be routed within the quota."""

    def __init__(self, emission: float):
        super().__init__(f"offline phase failed: best prefix emission {emission:.6g}")
        self.emission = emission


@dataclass
class StepRecord:
    t: int
    demand: int
    action: int
    inserted: bool
    reward: float
    emission: float


class DqvrpEnv:
    """One episode at a time; create one env per concurrent worker."""

    def __init__(
        self,
        instance: Instance,
        obs_config: Optional[ObsConfig] = None,
        offline_sa: Optional[SAConfig] = None,
        dynamic_sa: Optional[SAConfig] = None,
        route_sa: Optional[SAConfig] = None,
    ):
        self.instance = instance
        self.obs_config = obs_config or ObsConfig()
        self.offline_sa = offline_sa or SAConfig()
        self.dynamic_sa = dynamic_sa or DYNAMIC_GLOBAL_SA
        self.route_sa = route_sa or DYNAMIC_ROUTE_SA
        self.num_actions = len(instance.vehicles) + 1
        self.obs_dim = obs_size(len(instance.vehicles), self.obs_config, instance.quantity_mode)
        self.scenario: Optional[Scenario] = None
        self.state: Optional[RoutingState] = None
        self.t = 0
        self.done = True

    # -- lifecycle -------------------------------------------------------------

    def reset(self, scenario: Scenario, rng: np.random.Generator) -> Optional[np.ndarray]:
        """Route the known prefix and position at the first dynamic step.

        Returns the first observation, or None when the episode has no
        dynamic step (fully offline).  Raises OfflineFailure when the prefix
        cannot be routed within the quota.
        """
        instance = self.instance
        if len(scenario) != instance.horizon:
            raise ValueError(f"scenario length {len(scenario)} != horizon {instance.horizon}")
        if instance.quantity_mode == HETEROGENEOUS and scenario.quantities is None:
            raise ValueError("heterogeneous instances need scenarios with quantities")
        self.scenario = scenario
        self.rng = rng
        self.quantities = scenario.quantity_map() if scenario.quantities is not None else None

        prefix = instance.known_prefix_length
        demands = scenario.demands
        state, emission = route_offline_state(
            instance, demands[:prefix], self.offline_sa, rng, self.quantities
        )
        if state is None:
            raise OfflineFailure(emission)
        self.state = state

        self.decisions: list[Decision] = [ACCEPT] * prefix
        if self.quantities is None:
            self.prefix_reward = float(prefix)
        else:
            self.prefix_reward = float(sum(self.quantities[d] for d in demands[:prefix]))
        self.reward_total = self.prefix_reward
        self.invalidated = 0
        self.trace: list[StepRecord] = []

        self.t = prefix + 1
        self.seen = set(demands[:prefix])
        if self.obs_config.future_mode == FUTURE_OUTSIDE_SCENARIO:
            self._future_pool = self._unseen_array(set(demands))
        self._horizon_est = float(instance.horizon)
        if self.obs_config.horizon_noise_std_frac > 0:
            noise = rng.normal(0.0, self.obs_config.horizon_noise_std_frac)
            self._horizon_est = instance.horizon * (1.0 + noise)

        self.done = self.t > instance.horizon
        if self.done:
            return None
        self.seen.add(demands[self.t - 1])
        return self.observe()

    def _unseen_array(self, seen: set[int]) -> np.ndarray:
        mask = np.ones(self.instance.num_destinations + 1, dtype=bool)
        mask[0] = False
        mask[list(seen)] = False
        return np.flatnonzero(mask)

    @property
    def current_demand(self) -> int:
        if self.done:
            raise RuntimeError("episode is over")
        return self.scenario.demands[self.t - 1]

    @property
    def current_quantity(self) -> int:
        return 1 if self.quantities is None else self.quantities[self.current_demand]

    def observe(self) -> np.ndarray:
        """Observation for the currently revealed demand."""
        if self.done:
            raise RuntimeError("no observation in a terminal state")
        instance = self.instance
        cfg = self.obs_config
        d = self.current_demand
        state = self.state
        parts: list[float] = []
        if not cfg.horizon_hidden:
            parts.append(max(self._horizon_est - self.t, 0.0))
        caps = [v.capacity for v in instance.vehicles]
        parts.extend(c - load for c, load in zip(caps, state.loads))
        parts.append(instance.quota - state.emission)
        dists = instance.distances
        for vehicle, stops in zip(instance.vehicles, state.routes):
            parts.append(dad(cfg.k_ad, d, stops, vehicle.emission_factor, dists))
        if cfg.future_mode == FUTURE_OUTSIDE_SCENARIO:
            future = self._future_pool
        else:
            future = self._unseen_array(self.seen)
        parts.append(dfd(cfg.k_fd, d, future, instance.request_probs, dists))
        if instance.quantity_mode == HETEROGENEOUS:
            parts.append(float(self.current_quantity))
        return np.asarray(parts, dtype=np.float64)

    def step(self, action: int) -> tuple[Optional[np.ndarray], float, bool, dict]:
        """Apply a decision to the revealed demand and advance one step."""
        if self.done:
            raise RuntimeError("step() called on a finished episode")
        m = len(self.instance.vehicles)
        if not (action == ACTION_ACCEPT or 0 <= action <= m):
            raise ValueError(f"action must be -1 (accept), 0 (reject) or 1..{m}")
        d = self.current_demand
        t_now = self.t
        inserted = False
        invalidated = False

        if action == ACTION_REJECT:
            self.decisions.append(REJECT)
        elif action == ACTION_ACCEPT:
            self.state, inserted = insert_omission_state(self.state, d, self.dynamic_sa, self.rng)
            if inserted:
                self.decisions.append(ACCEPT)
            else:
                self.decisions.append(REJECT)
                invalidated = True
        else:
            vi = action - 1
            self.state, inserted = insert_vehicle_state(
                self.state, d, vi, self.route_sa, self.rng
            )
            if inserted:
                self.decisions.append(accept_to(self.instance.vehicles[vi].id))
            else:
                self.decisions.append(REJECT)
                invalidated = True

        reward = float(self.current_quantity) if inserted else 0.0
        self.reward_total += reward
        if invalidated:
            self.invalidated += 1
        emission = self.state.emission
        self.trace.append(StepRecord(t_now, d, action, inserted, reward, emission))

        self.t += 1
        self.done = self.t > self.instance.horizon
        if not self.done:
            self.seen.add(self.scenario.demands[self.t - 1])
            obs = self.observe()
        else:
            obs = None
        info = {
            "t": t_now,
            "demand": d,
            "inserted": inserted,
            "invalidated": invalidated,
            "emission": emission,
            "loads": tuple(self.state.loads),
        }
        return obs, reward, self.done, info

    # -- results ---------------------------------------------------------------

    def assignment(self) -> Assignment:
        if not self.done:
            raise RuntimeError("assignment available once the episode is over")
        return Assignment(tuple(self.decisions))

    def current_routing(self) -> Routing:
        return self.state.to_routing()

    @property
    def emission(self) -> float:
        return self.state.emission

    def trace_to_json(self) -> str:
        """Per-step (t, demand, action, inserted, reward, emission) records."""
        return json.dumps(
            [
                {
                    "t": r.t,
                    "demand": r.demand,
                    "action": r.action,
                    "inserted": r.inserted,
                    "reward": r.reward,
                    "emission": r.emission,
                }
                for r in self.trace
            ]
        )
