"""District-energy design problem: encoding, constraints, and evaluation.

A candidate district is a vector of ten integers:

* four node-use codes, one per grid node (0 = empty, 1..4 = building type,
  5 = central plant),
* a CHP engine type (1..6) and a chiller type (1..3),
* hot-water supply temperature (50..95 degC) and its summer reset (0..10 K),
* cold-water supply temperature (1..8 degC) and its winter reset (0..3 K).

A vector is feasible when every field is in range, exactly one node hosts
the plant, and one to three nodes host buildings.

Feasible vectors are scored on three objectives:

* ``lcc``   life-cycle cost in $/m^2 (minimise; electricity export revenue
  can push it negative),
* ``ghg``   life-cycle emissions in T-CO2eq/m^2 (minimise; always > 0),
* ``walkscore``   mix-diversity score in [0, 15] (maximise).

The evaluation model is synthetic but structurally faithful: a baseload CHP
sized by catalog capacity runs year round, surplus electricity is exported
(hence negative cost is reachable), a peak shortfall is covered by an
auxiliary boiler, thermal efficiency degrades with supply temperature, the
chiller COP improves with warmer cold-water supply, and the pipe network
connecting the plant to each building is cost-optimised exactly over the
five pipe types.  All numeric constants live in ``data/catalog.json``.

WalkScore is ``15 * (distinct building types - 1) / 3`` clamped to [0, 15]:
a single-type district scores 0, two types 5, three types 10.

``pipe_loss_price_per_w`` converts a steady heat-loss wattage into a
lifecycle cost: 8.76 kWh/(W*yr) * fuel-side price * horizon, rounded to a
catalog constant.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, NamedTuple, Sequence

FIELD_NAMES: tuple[str, ...] = (
    "node1",
    "node2",
    "node3",
    "node4",
    "chp_type",
    "chiller_type",
    "hot_water_temp",
    "hot_water_summer_reset",
    "cold_water_temp",
    "cold_water_winter_reset",
)

FIELD_BOUNDS: tuple[tuple[int, int], ...] = (
    (0, 5),
    (0, 5),
    (0, 5),
    (0, 5),
    (1, 6),
    (1, 3),
    (50, 95),
    (0, 10),
    (1, 8),
    (0, 3),
)

N_FIELDS = len(FIELD_NAMES)
N_NODES = 4
PLANT_CODE = 5
N_BUILDING_TYPES = 4
N_PIPE_TYPES = 5

OBJECTIVE_NAMES: tuple[str, ...] = ("lcc", "ghg", "walkscore")
#: optimisation sense per objective, aligned with OBJECTIVE_NAMES
OBJECTIVE_SENSES: tuple[str, ...] = ("min", "min", "max")


class ObjectiveTriple(NamedTuple):
    lcc: float
    ghg: float
    walkscore: float


class Feasibility(NamedTuple):
    feasible: bool
    violations: tuple[str, ...]


@dataclass(frozen=True)
class GridGeometry:
    """Fixed four-node district layout, coordinates in meters."""

    node_coords: tuple[tuple[float, float], ...] = (
        (0.0, 0.0),
        (0.0, 100.0),
        (100.0, 0.0),
        (200.0, 100.0),
    )

    def distance(self, a: int, b: int) -> float:
        (xa, ya), (xb, yb) = self.node_coords[a], self.node_coords[b]
        return math.hypot(xa - xb, ya - yb)


GRID = GridGeometry()


@dataclass(frozen=True)
class BuildingType:
    name: str
    floor_area_m2: float
    heat_kwh_m2: float
    cool_kwh_m2: float
    elec_kwh_m2: float


@dataclass(frozen=True)
class ChpEngine:
    name: str
    elec_eff: float
    thermal_eff: float
    thermal_capacity_kw: float
    cost_per_kw: float
    fuel_emission_kg_kwh: float


@dataclass(frozen=True)
class Chiller:
    name: str
    cop: float
    cost_per_kw: float


@dataclass(frozen=True)
class PipeType:
    name: str
    unit_cost_per_m: float
    heat_loss_w_mk: float


@dataclass(frozen=True)
class Catalog:
    """Equipment and site constants backing the evaluation model."""

    buildings: tuple[BuildingType, ...]
    chp_engines: tuple[ChpEngine, ...]
    chillers: tuple[Chiller, ...]
    pipes: tuple[PipeType, ...]
    constants: dict

    def __post_init__(self) -> None:
        if len(self.buildings) != N_BUILDING_TYPES:
            raise ValueError("catalog must define 4 building types")
        if len(self.chp_engines) != 6:
            raise ValueError("catalog must define 6 CHP engines")
        if len(self.chillers) != 3:
            raise ValueError("catalog must define 3 chillers")
        if len(self.pipes) != N_PIPE_TYPES:
            raise ValueError("catalog must define 5 pipe types")


def load_catalog(path: str | None = None) -> Catalog:
    """Load equipment catalog from JSON; defaults to the packaged file."""
    if path is None:
        text = resources.files("districtgan.data").joinpath("catalog.json").read_text()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    raw = json.loads(text)
    return Catalog(
        buildings=tuple(BuildingType(**b) for b in raw["buildings"]),
        chp_engines=tuple(ChpEngine(**c) for c in raw["chp_engines"]),
        chillers=tuple(Chiller(**c) for c in raw["chillers"]),
        pipes=tuple(PipeType(**p) for p in raw["pipes"]),
        constants=dict(raw["constants"]),
    )


@lru_cache(maxsize=1)
def default_catalog() -> Catalog:
    return load_catalog()


#: fixed vector whose evaluation is pinned as a golden value in the tests
REFERENCE_VECTOR: tuple[int, ...] = (1, 5, 2, 3, 2, 1, 70, 5, 4, 2)


def as_vector(d: Sequence[int]) -> tuple[int, ...]:
    """Coerce any length-10 integer sequence to a plain tuple of ints."""
    vec = tuple(int(v) for v in d)
    if len(vec) != N_FIELDS:
        raise ValueError(f"decision vector must have {N_FIELDS} fields, got {len(vec)}")
    return vec


def validate(d: Sequence[int]) -> Feasibility:
    """Check a decision vector against the three constraint groups.

    Infeasibility is reported as a verdict with the violated constraints
    listed, never as an exception.
    """
    vec = as_vector(d)
    violations: list[str] = []
    for name, (lo, hi), value in zip(FIELD_NAMES, FIELD_BOUNDS, vec):
        if not lo <= value <= hi:
            violations.append(f"{name}={value} outside [{lo},{hi}]")
    nodes = vec[:N_NODES]
    n_plants = sum(1 for v in nodes if v == PLANT_CODE)
    n_buildings = sum(1 for v in nodes if 1 <= v <= N_BUILDING_TYPES)
    if n_plants != 1:
        violations.append(f"exactly one plant node required, found {n_plants}")
    if n_buildings < 1:
        violations.append("at least one node must be occupied by a building")
    if n_buildings > 3:
        violations.append(f"at most three nodes may hold buildings, found {n_buildings}")
    return Feasibility(not violations, tuple(violations))


def _building_nodes(vec: tuple[int, ...]) -> list[tuple[int, int]]:
    """(node index, building type 1-based) for each occupied node."""
    return [(i, v) for i, v in enumerate(vec[:N_NODES]) if 1 <= v <= N_BUILDING_TYPES]


def _effective_supply_temp(vec: tuple[int, ...], constants: dict) -> float:
    """Annual-mean hot-water supply temperature after the summer reset."""
    hot = float(vec[6])
    reset = float(vec[7])
    return hot - constants["summer_fraction"] * reset


def solve_pipe_network(
    d: Sequence[int],
    geom: GridGeometry = GRID,
    catalog: Catalog | None = None,
) -> tuple[tuple[int, ...], float]:
    """Exact cost-minimal pipe-type assignment for the plant-to-building star.

    Every edge runs from the plant node to one building node; its cost is
    capital (unit cost x length) plus an operational heat-loss penalty
    (loss coefficient x length x (effective supply temp - ground temp) x
    lifecycle price factor).  The optimum is found by enumerating all
    assignments (at most 5^3 = 125).

    Returns (pipe index per building edge, total network cost in $).
    Raises ValueError for infeasible vectors.
    """
    catalog = catalog or default_catalog()
    vec = as_vector(d)
    verdict = validate(vec)
    if not verdict.feasible:
        raise ValueError(f"infeasible decision vector: {'; '.join(verdict.violations)}")

    constants = catalog.constants
    plant = vec[:N_NODES].index(PLANT_CODE)
    buildings = _building_nodes(vec)
    delta_t = _effective_supply_temp(vec, constants) - constants["ground_temp_c"]
    price = constants["pipe_loss_price_per_w"]

    # cost of laying pipe p on the edge to each building, in building order
    edge_costs: list[list[float]] = []
    for node, _ in buildings:
        length = geom.distance(plant, node)
        edge_costs.append(
            [
                p.unit_cost_per_m * length + p.heat_loss_w_mk * length * delta_t * price
                for p in catalog.pipes
            ]
        )

    best_cost = math.inf
    best_assignment: tuple[int, ...] = ()
    for assignment in itertools.product(range(N_PIPE_TYPES), repeat=len(buildings)):
        cost = sum(edge_costs[e][p] for e, p in enumerate(assignment))
        if cost < best_cost:
            best_cost = cost
            best_assignment = assignment
    return best_assignment, best_cost


def pipe_loss_annual_kwh(
    d: Sequence[int],
    assignment: Sequence[int],
    geom: GridGeometry = GRID,
    catalog: Catalog | None = None,
) -> float:
    """Annual thermal loss of a given pipe assignment, in kWh."""
    catalog = catalog or default_catalog()
    vec = as_vector(d)
    constants = catalog.constants
    plant = vec[:N_NODES].index(PLANT_CODE)
    delta_t = _effective_supply_temp(vec, constants) - constants["ground_temp_c"]
    watts = 0.0
    for (node, _), p in zip(_building_nodes(vec), assignment):
        pipe = catalog.pipes[p]
        watts += pipe.heat_loss_w_mk * geom.distance(plant, node) * delta_t
    return watts * constants["hours_per_year"] / 1000.0


def evaluate(d: Sequence[int], catalog: Catalog | None = None) -> ObjectiveTriple | None:
    """Score a decision vector; returns None for infeasible vectors.

    Pure and deterministic: identical inputs produce bit-identical triples.
    """
    catalog = catalog or default_catalog()
    vec = as_vector(d)
    if not validate(vec).feasible:
        return None

    constants = catalog.constants
    buildings = _building_nodes(vec)
    chp = catalog.chp_engines[vec[4] - 1]
    chiller = catalog.chillers[vec[5] - 1]

    area = 0.0
    heat_demand = 0.0
    cool_demand = 0.0
    elec_demand = 0.0
    for _, btype in buildings:
        b = catalog.buildings[btype - 1]
        area += b.floor_area_m2
        heat_demand += b.heat_kwh_m2 * b.floor_area_m2
        cool_demand += b.cool_kwh_m2 * b.floor_area_m2
        elec_demand += b.elec_kwh_m2 * b.floor_area_m2

    assignment, pipe_cost = solve_pipe_network(vec, GRID, catalog)
    loss_kwh = pipe_loss_annual_kwh(vec, assignment, GRID, catalog)
    heat_required = heat_demand + loss_kwh

    # thermal efficiency degrades with hotter supply water
    hot = float(vec[6])
    th_eff = chp.thermal_eff * (1.0 - constants["thermal_eff_temp_slope"] * (hot - 50.0))

    # baseload CHP: runs at capacity year round, surplus heat is dumped,
    # a shortfall against demand is covered by the auxiliary boiler
    hours = constants["hours_per_year"] * constants["chp_utilization"]
    chp_heat = chp.thermal_capacity_kw * hours
    chp_fuel = chp_heat / th_eff
    shortfall = max(0.0, heat_required - chp_heat)
    boiler_fuel = shortfall / constants["boiler_eff"]
    fuel_annual = chp_fuel + boiler_fuel
    elec_generated = chp_fuel * chp.elec_eff

    # cold-water supply: warmer supply (and the winter reset) improves COP
    cold_eff_temp = float(vec[8]) + constants["winter_fraction"] * float(vec[9])
    cop = chiller.cop * (constants["cop_base_factor"] + constants["cop_temp_slope"] * cold_eff_temp)
    cooling_elec = cool_demand / cop

    net_elec = elec_generated - elec_demand - cooling_elec
    exported = max(0.0, net_elec)
    purchased = max(0.0, -net_elec)

    peak_heat_kw = heat_required / constants["peak_full_load_hours"]
    peak_cool_kw = cool_demand / constants["peak_full_load_hours"]
    capital = (
        chp.cost_per_kw * chp.thermal_capacity_kw
        + constants["boiler_cost_per_kw"] * max(0.0, peak_heat_kw - chp.thermal_capacity_kw)
        + chiller.cost_per_kw * peak_cool_kw
    )

    op_annual = (
        fuel_annual * constants["fuel_price_per_kwh"]
        + purchased * constants["elec_buy_price_per_kwh"]
        + capital * constants["maintenance_fraction"]
    )
    revenue_annual = exported * constants["elec_sell_price_per_kwh"]
    years = constants["horizon_years"]

    lcc = (capital + pipe_cost + years * (op_annual - revenue_annual)) / area
    ghg = fuel_annual * chp.fuel_emission_kg_kwh * years / area / 1000.0

    distinct_types = len({btype for _, btype in buildings})
    walkscore = min(15.0, max(0.0, 15.0 * (distinct_types - 1) / 3.0))
    return ObjectiveTriple(lcc=lcc, ghg=ghg, walkscore=walkscore)


def is_duplicate(d: Sequence[int], archive: Iterable[Sequence[int]]) -> bool:
    """True iff the archive holds an identical ten-integer vector."""
    vec = as_vector(d)
    return any(vec == as_vector(other) for other in archive)
