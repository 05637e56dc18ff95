"""Static case data model: power, heat and transport grids plus their couplings.

A case is stored on disk as a directory of five UTF-8 JSON files
(``power.json``, ``heat.json``, ``transport.json``, ``coupling.json``,
``time.json``), each carrying a ``schema_version`` field.  Loading fully
resolves and validates the bundle; the resulting :class:`CaseData` is frozen
and safe to share read-only across parallel scenario workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import networkx as nx

from .util import dump_json, load_json

SCHEMA_VERSION = 1

CASE_FILES = ("power.json", "heat.json", "transport.json", "coupling.json", "time.json")


class CaseError(Exception):
    """Structured case validation failure listing every violation found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid case:\n" + "\n".join(f"  - {p}" for p in self.problems))


def _tup(seq):
    return tuple(seq) if seq is not None else None


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    delta_t: float            # hours per period
    t_max: int                # number of simulation periods
    landfall_period: int      # period index at which the storm reaches the system


@dataclass(frozen=True)
class RepairDist:
    """Repair duration in periods: deterministic or discrete uniform."""
    kind: str = "fixed"       # "fixed" or "uniform_int"
    lo: int = 1
    hi: int = 1

    def sample(self, u: float) -> int:
        if self.kind == "fixed":
            return self.lo
        span = self.hi - self.lo + 1
        return self.lo + min(span - 1, int(u * span))


@dataclass(frozen=True)
class Bus:
    id: str
    importance: float = 0.0       # value per MWh served
    peak_load: float = 0.0        # MW
    load_profile: tuple | None = None   # per-period multiplier of peak, None = flat
    x: float = 0.0                # km coordinates for the hazard field
    y: float = 0.0
    location: str | None = None   # transport location hosting this bus, if any


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    resistance: float             # per-unit on the system base
    reactance: float
    capacity: float               # MW
    repair_need: float = 1.0      # resource units that must be on site
    repair_time: RepairDist = RepairDist()
    normally_closed: bool = True  # False marks a tie switch


@dataclass(frozen=True)
class Generator:
    id: str
    bus: str
    p_max: float                  # MW
    fuel_rate: float | None = None       # fuel units per MWh, None = no fuel needed
    fuel_stock: float = 0.0              # on-site units when supplies are ample
    fuel_stock_scarce: float | None = None   # on-site units under scarcity


@dataclass(frozen=True)
class PowerGrid:
    buses: tuple
    branches: tuple
    generators: tuple
    substation: str
    voltage_bounds: tuple = (0.95, 1.05)  # per-unit magnitude
    s_base: float = 10.0                  # MVA base for the per-unit impedances
    reactive_ratio: float = 0.3           # Q/P ratio of every load

    def bus_map(self):
        return {b.id: b for b in self.buses}

    def branch_map(self):
        return {b.id: b for b in self.branches}


@dataclass(frozen=True)
class HeatNode:
    id: str
    kind: str = "junction"        # "source", "load" or "junction"
    importance: float = 0.0       # value per MWh-th served
    peak_load: float = 0.0        # MW-th
    load_profile: tuple | None = None


@dataclass(frozen=True)
class Pipe:
    id: str
    from_node: str
    to_node: str
    capacity: float               # MW-th
    loss_fraction: float = 0.0    # per unit length
    length: float = 1.0


@dataclass(frozen=True)
class HeatSource:
    id: str
    node: str
    h_max: float                  # MW-th
    driver: str = "fuel"          # "fuel", "electric_boiler" or "chp"
    fuel_rate: float | None = None      # units per MWh-th for fuel-driven sources
    fuel_stock: float = 0.0
    fuel_stock_scarce: float | None = None


@dataclass(frozen=True)
class HeatGrid:
    nodes: tuple
    pipes: tuple
    sources: tuple

    def node_map(self):
        return {n.id: n for n in self.nodes}


@dataclass(frozen=True)
class Location:
    id: str
    x: float = 0.0
    y: float = 0.0


@dataclass(frozen=True)
class Road:
    id: str
    a: str
    b: str
    travel_time: int              # periods under normal conditions
    length: float                 # km
    flood_exposure: float = 1.0   # unitless sensitivity to accumulated rain


@dataclass(frozen=True)
class ChargingStation:
    id: str
    location: str
    power_bus: str
    station_cap: float            # MW limit of the whole station


@dataclass(frozen=True)
class FuelNode:
    """Drop-off point for fuel deliveries, wired to a consumer via coupling."""
    id: str
    location: str


@dataclass(frozen=True)
class FuelDepot:
    id: str
    location: str
    stock: float                  # fuel units available when supplies are ample
    stock_scarce: float | None = None


@dataclass(frozen=True)
class RepairDepot:
    id: str
    location: str
    crews: int                    # vehicles starting here at full charge


@dataclass(frozen=True)
class FleetInit:
    location: str
    soc_level: int
    count: int


@dataclass(frozen=True)
class DemandEntry:
    origin: str
    destination: str
    period: int
    count: float                  # requested trips o
    value_fixed: float            # value per served trip
    value_per_km: float           # extra value per km of the locked path
    delay_cost: float             # value lost per hour of delay per trip


@dataclass(frozen=True)
class TransportGrid:
    locations: tuple
    roads: tuple
    charging_stations: tuple
    fuel_nodes: tuple
    fuel_depots: tuple
    repair_depots: tuple
    fleet_size: int
    fleet_init: tuple
    demand: tuple
    charge_power: float = 0.5      # MW drawn per charging vehicle
    discharge_power: float = 0.5   # MW injected per discharging vehicle
    fuel_capacity: float = 10.0    # fuel units carried per delivery trip
    km_per_soc_level: float = 10.0  # driving range of one SOC level

    def location_map(self):
        return {l.id: l for l in self.locations}


@dataclass(frozen=True)
class ElectricHeating:
    power_bus: str
    heat_node: str
    conversion: float = 1.0        # MW-th produced per MW drawn


@dataclass(frozen=True)
class ChpLink:
    generator: str
    heat_source: str
    heat_per_mw: float = 1.0       # MW-th produced per MW of electric output


@dataclass(frozen=True)
class FuelLink:
    fuel_node: str
    consumer: str                  # "generator:<id>" or "heat_source:<id>"


@dataclass(frozen=True)
class Coupling:
    electric_heating: tuple = ()
    chp: tuple = ()
    fuel_links: tuple = ()


@dataclass(frozen=True)
class CaseConfig:
    """Per-run emergency decision toggles (the case matrix dimensions)."""
    repair_crew: str = "real"             # "off", "ideal" or "real"
    preventive_reinforce: tuple = ()      # component ids made immune
    topology_reconfig: bool = False
    ev_power_supply: bool = False
    fuel_transport: bool = False
    initial_fuel_sufficient: bool = True
    soc_levels: int = 5
    soc_min_final: int = 1                # minimum SOC level at horizon exit
    path_k: int = 2                       # candidate paths per OD pair
    delay_max: int = 4                    # delay variants per movement edge

    def __post_init__(self):
        object.__setattr__(self, "preventive_reinforce",
                           tuple(sorted(self.preventive_reinforce)))
        problems = []
        if self.repair_crew not in ("off", "ideal", "real"):
            problems.append(f"unknown repair_crew mode {self.repair_crew!r}")
        if self.soc_levels < 2:
            problems.append("soc_levels must be at least 2")
        if not (0 <= self.soc_min_final < self.soc_levels):
            problems.append("soc_min_final must lie in [0, soc_levels)")
        if self.path_k < 1:
            problems.append("path_k must be at least 1")
        if self.delay_max < 0:
            problems.append("delay_max must be non-negative")
        if problems:
            raise CaseError(problems)


@dataclass(frozen=True)
class CaseData:
    power: PowerGrid
    heat: HeatGrid
    transport: TransportGrid
    time: TimeGrid
    coupling: Coupling

    # -- per-period demand helpers -----------------------------------------

    def power_load(self, bus: Bus, t: int) -> float:
        mult = bus.load_profile[t] if bus.load_profile else 1.0
        return bus.peak_load * mult

    def heat_load(self, node: HeatNode, t: int) -> float:
        mult = node.load_profile[t] if node.load_profile else 1.0
        return node.peak_load * mult


# ---------------------------------------------------------------------------
# JSON (de)serialization
# ---------------------------------------------------------------------------

def _build(cls, data: dict, path: str, problems: list, **nested):
    """Construct a dataclass from a JSON dict, reporting unknown/missing keys."""
    names = {f for f in cls.__dataclass_fields__}
    out = {}
    for key, value in data.items():
        if key == "schema_version":
            continue
        if key not in names:
            problems.append(f"{path}: unknown field {key!r}")
            continue
        out[key] = nested[key](value) if key in nested else value
    try:
        obj = cls(**out)
    except TypeError as exc:
        problems.append(f"{path}: {exc}")
        return None
    return obj


def _repair_dist(d) -> RepairDist:
    if d is None:
        return RepairDist()
    return RepairDist(d.get("kind", "fixed"), int(d.get("lo", 1)), int(d.get("hi", d.get("lo", 1))))


def case_from_dicts(power_d, heat_d, transport_d, coupling_d, time_d) -> CaseData:
    problems: list[str] = []

    time_grid = _build(TimeGrid, time_d, "time.json", problems)

    def buses(rows):
        return _tup(_build(Bus, r, "power.json buses", problems,
                           load_profile=_tup) for r in rows)

    def branches(rows):
        return _tup(_build(Branch, r, "power.json branches", problems,
                           repair_time=_repair_dist) for r in rows)

    def gens(rows):
        return _tup(_build(Generator, r, "power.json generators", problems) for r in rows)

    power = _build(PowerGrid, power_d, "power.json", problems,
                   buses=buses, branches=branches, generators=gens,
                   voltage_bounds=_tup)

    heat = _build(HeatGrid, heat_d, "heat.json", problems,
                  nodes=lambda rows: _tup(_build(HeatNode, r, "heat.json nodes", problems,
                                                 load_profile=_tup) for r in rows),
                  pipes=lambda rows: _tup(_build(Pipe, r, "heat.json pipes", problems)
                                          for r in rows),
                  sources=lambda rows: _tup(_build(HeatSource, r, "heat.json sources",
                                                   problems) for r in rows))

    transport = _build(
        TransportGrid, transport_d, "transport.json", problems,
        locations=lambda rows: _tup(_build(Location, r, "transport.json locations",
                                           problems) for r in rows),
        roads=lambda rows: _tup(_build(Road, r, "transport.json roads", problems)
                                for r in rows),
        charging_stations=lambda rows: _tup(_build(ChargingStation, r,
                                                   "transport.json charging_stations",
                                                   problems) for r in rows),
        fuel_nodes=lambda rows: _tup(_build(FuelNode, r, "transport.json fuel_nodes",
                                            problems) for r in rows),
        fuel_depots=lambda rows: _tup(_build(FuelDepot, r, "transport.json fuel_depots",
                                             problems) for r in rows),
        repair_depots=lambda rows: _tup(_build(RepairDepot, r,
                                               "transport.json repair_depots",
                                               problems) for r in rows),
        fleet_init=lambda rows: _tup(_build(FleetInit, r, "transport.json fleet_init",
                                            problems) for r in rows),
        demand=lambda rows: _tup(_build(DemandEntry, r, "transport.json demand",
                                        problems) for r in rows))

    coupling = _build(
        Coupling, coupling_d, "coupling.json", problems,
        electric_heating=lambda rows: _tup(_build(ElectricHeating, r,
                                                  "coupling.json electric_heating",
                                                  problems) for r in rows),
        chp=lambda rows: _tup(_build(ChpLink, r, "coupling.json chp", problems)
                              for r in rows),
        fuel_links=lambda rows: _tup(_build(FuelLink, r, "coupling.json fuel_links",
                                            problems) for r in rows))

    if problems:
        raise CaseError(problems)
    case = CaseData(power, heat, transport, time_grid, coupling)
    validate_case(case)
    return case


def load_case(path) -> CaseData:
    """Load and validate a case bundle directory."""
    path = Path(path)
    if not path.is_dir():
        raise CaseError([f"case directory {path} does not exist"])
    dicts = []
    problems = []
    for fname in CASE_FILES:
        fpath = path / fname
        if not fpath.exists():
            problems.append(f"missing file {fname}")
            dicts.append({})
            continue
        try:
            d = load_json(fpath)
        except ValueError as exc:
            problems.append(f"{fname}: invalid JSON ({exc})")
            dicts.append({})
            continue
        if d.get("schema_version") != SCHEMA_VERSION:
            problems.append(f"{fname}: schema_version must be {SCHEMA_VERSION}")
        dicts.append(d)
    if problems:
        raise CaseError(problems)
    return case_from_dicts(*dicts)


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def save_case(case: CaseData, path) -> None:
    """Write all five bundle files; ``load_case(save_case(x)) == x``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    parts = {
        "power.json": asdict(case.power),
        "heat.json": asdict(case.heat),
        "transport.json": asdict(case.transport),
        "coupling.json": asdict(case.coupling),
        "time.json": asdict(case.time),
    }
    for fname, d in parts.items():
        d = _clean(d)
        d["schema_version"] = SCHEMA_VERSION
        dump_json(d, path / fname)


def config_from_dict(d: dict) -> CaseConfig:
    problems = []
    cfg = _build(CaseConfig, d, "config", problems, preventive_reinforce=_tup)
    if problems:
        raise CaseError(problems)
    return cfg


def config_to_dict(cfg: CaseConfig) -> dict:
    return _clean(asdict(cfg))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_case(case: CaseData) -> None:
    """Raise :class:`CaseError` listing every structural violation."""
    p: list[str] = []
    t = case.time
    if t.t_max < 1:
        p.append("time: t_max must be at least 1")
    if t.delta_t <= 0:
        p.append("time: delta_t must be positive")
    if not (0 <= t.landfall_period < max(t.t_max, 1)):
        p.append("time: landfall_period outside [0, t_max)")

    # power ------------------------------------------------------------
    pg = case.power
    bus_ids = [b.id for b in pg.buses]
    if len(set(bus_ids)) != len(bus_ids):
        p.append("power: duplicate bus ids")
    bus_set = set(bus_ids)
    branch_ids = [b.id for b in pg.branches]
    if len(set(branch_ids)) != len(branch_ids):
        p.append("power: duplicate branch ids")
    for b in pg.buses:
        if b.importance < 0:
            p.append(f"power bus {b.id}: importance must be non-negative")
        if b.load_profile is not None and len(b.load_profile) != t.t_max:
            p.append(f"power bus {b.id}: load_profile length != t_max")
    for br in pg.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in bus_set:
                p.append(f"power branch {br.id}: unknown bus {end!r}")
        if br.capacity <= 0:
            p.append(f"power branch {br.id}: capacity must be positive")
        if br.repair_time.lo < 1 or br.repair_time.hi < br.repair_time.lo:
            p.append(f"power branch {br.id}: invalid repair time range")
    if pg.substation not in bus_set:
        p.append(f"power: substation {pg.substation!r} is not a bus")
    for g in pg.generators:
        if g.bus not in bus_set:
            p.append(f"generator {g.id}: unknown bus {g.bus!r}")
        if g.p_max < 0:
            p.append(f"generator {g.id}: p_max must be non-negative")
    lo, hi = pg.voltage_bounds
    if not (0 < lo < hi):
        p.append("power: voltage bounds must satisfy 0 < lo < hi")

    closed = [br for br in pg.branches if br.normally_closed
              and br.from_bus in bus_set and br.to_bus in bus_set]
    if bus_set:
        g = nx.Graph()
        g.add_nodes_from(bus_set)
        g.add_edges_from((br.from_bus, br.to_bus) for br in closed)
        if len(closed) != len(bus_set) - 1 or not nx.is_connected(g):
            p.append("power: normally-closed branches must form a spanning tree "
                     f"({len(closed)} closed over {len(bus_set)} buses)")

    # heat ---------------------------------------------------------------
    hg = case.heat
    node_ids = [n.id for n in hg.nodes]
    if len(set(node_ids)) != len(node_ids):
        p.append("heat: duplicate node ids")
    node_set = set(node_ids)
    for n in hg.nodes:
        if n.kind not in ("source", "load", "junction"):
            p.append(f"heat node {n.id}: unknown kind {n.kind!r}")
        if n.load_profile is not None and len(n.load_profile) != t.t_max:
            p.append(f"heat node {n.id}: load_profile length != t_max")
    for pipe in hg.pipes:
        for end in (pipe.from_node, pipe.to_node):
            if end not in node_set:
                p.append(f"heat pipe {pipe.id}: unknown node {end!r}")
        if not (0 <= pipe.loss_fraction * pipe.length < 1):
            p.append(f"heat pipe {pipe.id}: total loss must lie in [0, 1)")
        if pipe.capacity <= 0:
            p.append(f"heat pipe {pipe.id}: capacity must be positive")
    source_nodes = set()
    for s in hg.sources:
        if s.node not in node_set:
            p.append(f"heat source {s.id}: unknown node {s.node!r}")
        if s.driver not in ("fuel", "electric_boiler", "chp"):
            p.append(f"heat source {s.id}: unknown driver {s.driver!r}")
        source_nodes.add(s.node)
    if node_set:
        hgraph = nx.Graph()
        hgraph.add_nodes_from(node_set)
        hgraph.add_edges_from((pp.from_node, pp.to_node) for pp in hg.pipes
                              if pp.from_node in node_set and pp.to_node in node_set)
        reachable = set()
        for sn in source_nodes:
            if sn in hgraph:
                reachable |= nx.node_connected_component(hgraph, sn)
        for n in hg.nodes:
            if n.peak_load > 0 and n.id not in reachable:
                p.append(f"heat node {n.id}: load not reachable from any source")

    # transport ------------------------------------------------------------
    tg = case.transport
    loc_ids = [l.id for l in tg.locations]
    if len(set(loc_ids)) != len(loc_ids):
        p.append("transport: duplicate location ids")
    loc_set = set(loc_ids)
    road_ids = [r.id for r in tg.roads]
    if len(set(road_ids)) != len(road_ids):
        p.append("transport: duplicate road ids")
    seen_pairs = set()
    for r in tg.roads:
        for end in (r.a, r.b):
            if end not in loc_set:
                p.append(f"road {r.id}: unknown location {end!r}")
        if r.travel_time < 1:
            p.append(f"road {r.id}: travel_time must be at least one period")
        if r.length <= 0:
            p.append(f"road {r.id}: length must be positive")
        pair = frozenset((r.a, r.b))
        if len(pair) < 2:
            p.append(f"road {r.id}: endpoints must differ")
        elif pair in seen_pairs:
            p.append(f"road {r.id}: parallel road between {r.a} and {r.b}")
        seen_pairs.add(pair)
    for st in tg.charging_stations:
        if st.location not in loc_set:
            p.append(f"charging station {st.id}: unknown location {st.location!r}")
        if st.power_bus not in bus_set:
            p.append(f"charging station {st.id}: unknown power bus {st.power_bus!r}")
    for fn in tg.fuel_nodes:
        if fn.location not in loc_set:
            p.append(f"fuel node {fn.id}: unknown location {fn.location!r}")
    for fd in tg.fuel_depots:
        if fd.location not in loc_set:
            p.append(f"fuel depot {fd.id}: unknown location {fd.location!r}")
    for rd in tg.repair_depots:
        if rd.location not in loc_set:
            p.append(f"repair depot {rd.id}: unknown location {rd.location!r}")
    if tg.fleet_size < 1:
        p.append("transport: fleet_size must be at least 1")
    placed = sum(fi.count for fi in tg.fleet_init) + sum(rd.crews for rd in tg.repair_depots)
    if placed != tg.fleet_size:
        p.append(f"transport: fleet_init + depot crews place {placed} vehicles, "
                 f"fleet_size is {tg.fleet_size}")
    for fi in tg.fleet_init:
        if fi.location not in loc_set:
            p.append(f"fleet_init: unknown location {fi.location!r}")
        if fi.soc_level < 0:
            p.append("fleet_init: soc_level must be non-negative")
    seen_od = set()
    for d in tg.demand:
        for end in (d.origin, d.destination):
            if end not in loc_set:
                p.append(f"demand {d.origin}->{d.destination}: unknown location {end!r}")
        if not (0 <= d.period < t.t_max):
            p.append(f"demand {d.origin}->{d.destination}: period outside horizon")
        key = (d.origin, d.destination, d.period)
        if key in seen_od:
            p.append(f"demand: duplicate entry for {key}")
        seen_od.add(key)
    for b in pg.buses:
        if b.location is not None and b.location not in loc_set:
            p.append(f"power bus {b.id}: unknown location {b.location!r}")

    # coupling ---------------------------------------------------------------
    gen_ids = {g.id for g in pg.generators}
    src_by_id = {s.id: s for s in hg.sources}
    boiler_nodes = {s.node for s in hg.sources if s.driver == "electric_boiler"}
    for eh in case.coupling.electric_heating:
        if eh.power_bus not in bus_set:
            p.append(f"electric heating: unknown bus {eh.power_bus!r}")
        if eh.heat_node not in node_set:
            p.append(f"electric heating: unknown heat node {eh.heat_node!r}")
        elif eh.heat_node not in boiler_nodes:
            p.append(f"electric heating: heat node {eh.heat_node} has no "
                     "electric_boiler source")
        if eh.conversion <= 0:
            p.append("electric heating: conversion must be positive")
    for link in case.coupling.chp:
        if link.generator not in gen_ids:
            p.append(f"chp link: unknown generator {link.generator!r}")
        src = src_by_id.get(link.heat_source)
        if src is None:
            p.append(f"chp link: unknown heat source {link.heat_source!r}")
        elif src.driver != "chp":
            p.append(f"chp link: source {src.id} driver is {src.driver!r}, not chp")
    fuel_node_ids = {f.id for f in tg.fuel_nodes}
    for link in case.coupling.fuel_links:
        if link.fuel_node not in fuel_node_ids:
            p.append(f"fuel link: unknown fuel node {link.fuel_node!r}")
        kind, _, ref = link.consumer.partition(":")
        if kind == "generator":
            if ref not in gen_ids:
                p.append(f"fuel link: unknown generator {ref!r}")
        elif kind == "heat_source":
            if ref not in src_by_id:
                p.append(f"fuel link: unknown heat source {ref!r}")
        else:
            p.append(f"fuel link: consumer must be 'generator:<id>' or "
                     f"'heat_source:<id>', got {link.consumer!r}")

    if p:
        raise CaseError(p)


# ---------------------------------------------------------------------------
# Baseline objectives
# ---------------------------------------------------------------------------

def baseline_objectives(case: CaseData, config: CaseConfig | None = None,
                        solver_cfg=None) -> dict:
    """Disaster-free objective values used to normalize scenario indicators.

    Solves the emergency model with no hazard (every component intact, all
    road performance at 1).  Infeasibility signals inconsistent case data.
    """
    from . import emergency
    from .hazard import null_scenario

    config = config or CaseConfig()
    result = emergency.simulate(case, config, null_scenario(case), solver_cfg,
                                _skip_normalization=True)
    return {"F_PN0": result.objective_power,
            "F_HN0": result.objective_heat,
            "F_TN0": result.objective_transport}
