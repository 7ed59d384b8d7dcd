"""Core domain types and exact arithmetic for routes, emissions and feasibility.

Destinations are integers in 1..K; the hub is vertex 0 and is implicit at both
ends of every route.  All types are immutable values after construction and all
operations here are pure, so they can be shared freely between workers.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

HUB = 0

#: Quota comparisons treat ``emission <= quota + QUOTA_EPS`` as feasible so
#: that float summation order cannot flip feasibility.
QUOTA_EPS = 1e-9

UNIT = "unit"
HETEROGENEOUS = "heterogeneous"


@dataclass(frozen=True)
class Vehicle:
    """A vehicle with an emission factor (emission per distance unit) and a capacity."""

    id: int
    emission_factor: float
    capacity: int

    def __post_init__(self) -> None:
        if self.emission_factor <= 0:
            raise ValueError(f"vehicle {self.id}: emission_factor must be > 0")
        if self.capacity < 1:
            raise ValueError(f"vehicle {self.id}: capacity must be >= 1")


@dataclass(frozen=True, eq=False)
class Instance:
    """Static problem description.

    Attributes:
        distances: (K+1) x (K+1) symmetric matrix, row/column 0 is the hub.
        request_probs: length-K vector, probability that destination i+1 requests.
        vehicles: the fleet, in fleet order.
        quota: hard cap on total fleet emission.
        horizon: number of demands per scenario (sampled without replacement).
        dod: degree of dynamism, the share of demands revealed online.
        quantity_mode: "unit" (one unit per demand) or "heterogeneous".
        coords: optional (K+1) x 2 coordinates (hub first), kept for serialization.
    """

    distances: np.ndarray
    request_probs: np.ndarray
    vehicles: tuple[Vehicle, ...]
    quota: float
    horizon: int
    dod: float
    quantity_mode: str = UNIT
    coords: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self) -> None:
        d = np.asarray(self.distances, dtype=float)
        p = np.asarray(self.request_probs, dtype=float)
        object.__setattr__(self, "distances", d)
        object.__setattr__(self, "request_probs", p)
        if self.coords is not None:
            object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))
        k = p.shape[0]
        if d.shape != (k + 1, k + 1):
            raise ValueError(f"distance matrix shape {d.shape} does not match K={k}")
        if np.any(d < 0):
            raise ValueError("distances must be non-negative")
        if np.any(np.abs(np.diagonal(d)) > 0):
            raise ValueError("distance matrix diagonal must be zero")
        if not np.allclose(d, d.T, atol=1e-12, rtol=0.0):
            raise ValueError("distance matrix must be symmetric")
        if np.any(p <= 0):
            raise ValueError("all request probabilities must be > 0")
        if abs(float(p.sum()) - 1.0) > 1e-9:
            raise ValueError(f"request probabilities sum to {p.sum()}, expected 1")
        if not self.vehicles:
            raise ValueError("fleet must contain at least one vehicle")
        if self.quota < 0:
            raise ValueError("quota must be non-negative")
        if not 1 <= self.horizon <= k:
            raise ValueError(f"horizon must be in 1..K={k} (sampling is without replacement)")
        if not 0.0 <= self.dod <= 1.0:
            raise ValueError("dod must lie in [0, 1]")
        if self.quantity_mode not in (UNIT, HETEROGENEOUS):
            raise ValueError(f"unknown quantity_mode {self.quantity_mode!r}")
        # Hot loops index distances far faster through nested lists than
        # through numpy scalars; cache the converted matrix once.
        object.__setattr__(self, "_dist_rows", d.tolist())

    @property
    def num_destinations(self) -> int:
        return self.request_probs.shape[0]

    @property
    def dist_rows(self) -> list[list[float]]:
        """Distance matrix as nested lists (fast scalar access)."""
        return self._dist_rows  # type: ignore[attr-defined]

    def prob_of(self, destination: int) -> float:
        return float(self.request_probs[destination - 1])

    @property
    def known_prefix_length(self) -> int:
        """Number of demands known in advance: ceil((1 - dod) * H).

        The small slack keeps e.g. (1 - 0.3) * 50 from ceiling to 36.
        """
        return math.ceil((1.0 - self.dod) * self.horizon - 1e-9)

    def total_capacity(self) -> int:
        return sum(v.capacity for v in self.vehicles)


@dataclass(frozen=True)
class Route:
    """One vehicle's interior stops, hub implicit at both ends."""

    vehicle_id: int
    stops: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "stops", tuple(self.stops))
        if len(set(self.stops)) != len(self.stops):
            raise ValueError(f"route of vehicle {self.vehicle_id} repeats a destination")


@dataclass(frozen=True)
class Routing:
    """One route per vehicle, in fleet order."""

    routes: tuple[Route, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "routes", tuple(self.routes))

    def destinations(self) -> set[int]:
        out: set[int] = set()
        for r in self.routes:
            out.update(r.stops)
        return out


def empty_routing(instance: Instance) -> Routing:
    return Routing(tuple(Route(v.id) for v in instance.vehicles))


@dataclass(frozen=True)
class Scenario:
    """An ordered sequence of H distinct requested destinations."""

    demands: tuple[int, ...]
    quantities: Optional[tuple[int, ...]] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "demands", tuple(int(d) for d in self.demands))
        if len(set(self.demands)) != len(self.demands):
            raise ValueError("scenario demands must be distinct")
        if self.quantities is not None:
            q = tuple(int(x) for x in self.quantities)
            object.__setattr__(self, "quantities", q)
            if len(q) != len(self.demands):
                raise ValueError("quantities must align with demands")
            if any(x < 1 for x in q):
                raise ValueError("quantities must be positive")

    def __len__(self) -> int:
        return len(self.demands)

    def quantity_map(self) -> dict[int, int]:
        """demand -> quantity; every demand counts 1 when quantities are absent."""
        if self.quantities is None:
            return {d: 1 for d in self.demands}
        return dict(zip(self.demands, self.quantities))


@dataclass(frozen=True)
class Decision:
    """A per-timestep decision: reject, accept, or accept bound to a vehicle."""

    accepted: bool
    vehicle_id: Optional[int] = None


REJECT = Decision(False)
ACCEPT = Decision(True)


def accept_to(vehicle_id: int) -> Decision:
    return Decision(True, vehicle_id)


@dataclass(frozen=True)
class Assignment:
    """Per-timestep decision record for a full scenario."""

    decisions: tuple[Decision, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "decisions", tuple(self.decisions))

    def __len__(self) -> int:
        return len(self.decisions)


def route_length(route: Route | Sequence[int], distances: np.ndarray) -> float:
    """Length of the hub -> stops -> hub tour; an empty route has length 0."""
    stops = route.stops if isinstance(route, Route) else tuple(route)
    if not stops:
        return 0.0
    total = float(distances[HUB, stops[0]])
    for a, b in zip(stops, stops[1:]):
        total += float(distances[a, b])
    total += float(distances[stops[-1], HUB])
    return total


def route_emission(vehicle: Vehicle, route: Route | Sequence[int], distances: np.ndarray) -> float:
    """Emission is linear in distance: emission_factor * route_length."""
    return vehicle.emission_factor * route_length(route, distances)


def routing_emission(routing: Routing, instance: Instance) -> float:
    return sum(
        route_emission(v, r, instance.distances)
        for v, r in zip(instance.vehicles, routing.routes)
    )


def route_load(route: Route | Sequence[int], quantities: Optional[Mapping[int, int]] = None) -> int:
    """Units carried on a route; unit mode counts one per stop."""
    stops = route.stops if isinstance(route, Route) else tuple(route)
    if quantities is None:
        return len(stops)
    return sum(quantities[d] for d in stops)


def accepted_count(assignment: Assignment, scenario: Scenario) -> int:
    """Number of accepted demands, or total accepted quantity when the
    scenario carries heterogeneous quantities."""
    if len(assignment) != len(scenario):
        raise ValueError("assignment does not cover the scenario")
    if scenario.quantities is None:
        return sum(1 for d in assignment.decisions if d.accepted)
    return sum(q for d, q in zip(assignment.decisions, scenario.quantities) if d.accepted)


@dataclass(frozen=True)
class Violation:
    """First failed feasibility check; checks run capacity -> quota -> duplication."""

    kind: str  # "capacity" | "quota" | "duplicate"
    vehicle_id: Optional[int] = None
    destination: Optional[int] = None
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.kind} violation: {self.detail}"


def check_feasible(
    routing: Routing,
    instance: Instance,
    quantities: Optional[Mapping[int, int]] = None,
) -> Optional[Violation]:
    """Return None when feasible, else the first violation found.

    Checks, in order: per-vehicle capacity, the emission quota (with
    QUOTA_EPS slack), and destination uniqueness across routes.
    ``quantities`` maps destination -> demanded units in heterogeneous mode.
    """
    if len(routing.routes) != len(instance.vehicles):
        raise ValueError("routing must contain one route per vehicle")
    for vehicle, route in zip(instance.vehicles, routing.routes):
        load = route_load(route, quantities)
        if load > vehicle.capacity:
            return Violation(
                "capacity",
                vehicle_id=vehicle.id,
                detail=f"vehicle {vehicle.id} carries {load} > capacity {vehicle.capacity}",
            )
    emission = routing_emission(routing, instance)
    if emission > instance.quota + QUOTA_EPS:
        return Violation(
            "quota", detail=f"emission {emission:.12g} exceeds quota {instance.quota:.12g}"
        )
    seen: set[int] = set()
    for route in routing.routes:
        for d in route.stops:
            if d in seen:
                return Violation(
                    "duplicate", destination=d, detail=f"destination {d} appears in two routes"
                )
            seen.add(d)
    return None


def is_feasible(
    routing: Routing,
    instance: Instance,
    quantities: Optional[Mapping[int, int]] = None,
) -> bool:
    return check_feasible(routing, instance, quantities) is None


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def euclidean_distances(coords: np.ndarray) -> np.ndarray:
    """Pairwise Euclidean distance matrix for (N, 2) coordinates."""
    coords = np.asarray(coords, dtype=float)
    diff = coords[:, None, :] - coords[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def instance_to_dict(instance: Instance) -> dict:
    doc: dict = {
        "schema": "dqvrp-instance/1",
        "name": instance.name,
        "vehicles": [
            {"id": v.id, "ef": v.emission_factor, "capacity": v.capacity}
            for v in instance.vehicles
        ],
        "quota": instance.quota,
        "horizon": instance.horizon,
        "dod": instance.dod,
        "quantity_mode": instance.quantity_mode,
    }
    if instance.coords is not None:
        hub = instance.coords[0]
        doc["hub"] = {"x": float(hub[0]), "y": float(hub[1])}
        doc["destinations"] = [
            {
                "id": i + 1,
                "x": float(instance.coords[i + 1, 0]),
                "y": float(instance.coords[i + 1, 1]),
                "prob": float(instance.request_probs[i]),
            }
            for i in range(instance.num_destinations)
        ]
    else:
        doc["destinations"] = [
            {"id": i + 1, "prob": float(instance.request_probs[i])}
            for i in range(instance.num_destinations)
        ]
        doc["distances"] = instance.distances.tolist()
    return doc


def instance_from_dict(doc: dict, normalize_probs: bool = False) -> Instance:
    """Build an Instance from its serialized form.

    Distances come either from an explicit ``distances`` matrix or from
    Euclidean coordinates.  With ``normalize_probs`` the ``prob`` fields may
    be unnormalized frequencies; they are rescaled to sum to 1.
    """
    try:
        dests = sorted(doc["destinations"], key=lambda e: e["id"])
        vehicles = tuple(
            Vehicle(int(v["id"]), float(v["ef"]), int(v["capacity"])) for v in doc["vehicles"]
        )
        quota = float(doc["quota"])
        horizon = int(doc["horizon"])
        dod = float(doc["dod"])
        quantity_mode = doc.get("quantity_mode", UNIT)
    except KeyError as exc:
        raise ValueError(f"instance document is missing field {exc}") from exc

    ids = [int(e["id"]) for e in dests]
    if ids != list(range(1, len(ids) + 1)):
        raise ValueError("destination ids must be exactly 1..K")
    freqs = np.array([float(e["prob"]) for e in dests])
    if np.any(freqs <= 0):
        bad = ids[int(np.argmin(freqs))]
        raise ValueError(f"destination {bad}: prob/frequency must be > 0")
    probs = freqs / freqs.sum() if normalize_probs else freqs

    coords = None
    if "distances" in doc:
        distances = np.asarray(doc["distances"], dtype=float)
    else:
        if "hub" not in doc:
            raise ValueError("instance document needs either 'distances' or a 'hub' with coordinates")
        pts = [[float(doc["hub"]["x"]), float(doc["hub"]["y"])]]
        for e in dests:
            if "x" not in e or "y" not in e:
                raise ValueError(f"destination {e['id']}: missing coordinates")
            pts.append([float(e["x"]), float(e["y"])])
        coords = np.asarray(pts)
        distances = euclidean_distances(coords)

    return Instance(
        distances=distances,
        request_probs=probs,
        vehicles=vehicles,
        quota=quota,
        horizon=horizon,
        dod=dod,
        quantity_mode=quantity_mode,
        coords=coords,
        name=str(doc.get("name", "")),
    )


def save_instance(instance: Instance, path) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_dict(instance), fh, indent=2)


def load_instance(path, normalize_probs: bool = False) -> Instance:
    with open(path) as fh:
        doc = json.load(fh)
    return instance_from_dict(doc, normalize_probs=normalize_probs)


def routing_to_dict(routing: Routing, instance: Instance) -> dict:
    """Serialized routing: per-vehicle stop order plus emission, for
    inspection and regression tests."""
    return {
        "routes": [
            {
                "vehicle_id": r.vehicle_id,
                "stops": list(r.stops),
                "emission": route_emission(v, r, instance.distances),
            }
            for v, r in zip(instance.vehicles, routing.routes)
        ],
        "emission": routing_emission(routing, instance),
    }
