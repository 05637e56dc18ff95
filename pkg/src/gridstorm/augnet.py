"""Time-space-energy expanded transport network.

Nodes are (location, period, SOC-level) triples.  Edges encode the eight
vehicle behaviors: ser (serving a trip demand), re (empty movement), cha
(charging), dis (discharging), stop (staying put), GR (moving to a repair
site), IR (actively repairing) and FT (fuel delivery).  Every edge advances
time; movement edges lower SOC in proportion to driven distance and exist in
one copy per delay variant 0..delay_max, of which the hazard realization later
selects exactly one.

Movement conventions: re and GR edges are single-road hops (longer trips
compose from consecutive hops), while ser and FT edges lock a whole
origin-destination path because the demand value and the delivery yield are
attached to the complete trip.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import networkx as nx

from .core import CaseConfig, CaseData, TransportGrid
from .util import round_half_even

EDGE_TYPES = ("ser", "re", "cha", "dis", "stop", "GR", "IR", "FT")

MOVEMENT_TYPES = ("ser", "re", "GR", "FT")


class AugmentError(Exception):
    pass


@dataclass(frozen=True)
class AugNode:
    loc: str
    time: int
    soc: int


@dataclass(frozen=True)
class AugEdge:
    id: int
    type: str
    ori: AugNode
    des: AugNode
    dist: float            # km driven
    delay: int             # delay variant in periods (movement edges only)
    path: tuple            # road ids in travel order, () for stationary edges
    path_nodes: tuple      # location sequence, len(path) + 1 entries
    arrivals: tuple        # nominal period of reaching each road head
    demand_key: tuple | None = None   # (origin, destination, period) for ser edges


@dataclass(frozen=True)
class PathInfo:
    nodes: tuple           # location sequence
    roads: tuple           # road ids
    travel: int            # nominal periods
    km: float


def arrival_time(edge: AugEdge, road_head: str) -> int:
    """Nominal period at which flow on ``edge`` reaches ``road_head``.

    ``road_head`` must be the entry location of one of the edge's path roads;
    the destination itself is not a road head.
    """
    for k, loc in enumerate(edge.path_nodes[:-1]):
        if loc == road_head:
            return edge.arrivals[k]
    raise AugmentError(f"location {road_head!r} is not a road head of edge {edge.id}")


def required_delay(edge: AugEdge, scenario) -> int:
    """Delay variant selected by the hazard realization (rounded half-to-even).

    Sums the per-road slowdown (1-v)/v * T at each road's nominal entry period.
    """
    total = 0.0
    for k, road_id in enumerate(edge.path):
        v = scenario.v(road_id, edge.arrivals[k])
        t_road = edge.arrivals[k + 1] - edge.arrivals[k]
        total += (1.0 - v) / v * t_road
    return round_half_even(total)


def path_blocked(edge: AugEdge, scenario) -> bool:
    """True when any road on the path is interrupted at its nominal entry period."""
    return any(scenario.u(road_id, edge.arrivals[k]) == 0
               for k, road_id in enumerate(edge.path))


# ---------------------------------------------------------------------------
# Path enumeration
# ---------------------------------------------------------------------------

def _road_graph(grid: TransportGrid) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(l.id for l in grid.locations)
    for road in grid.roads:
        g.add_edge(road.a, road.b, weight=road.travel_time, km=road.length,
                   road=road.id)
    return g


def enumerate_paths(grid: TransportGrid, k: int) -> dict:
    """Up to k loop-free shortest paths (by nominal travel time) per ordered OD pair.

    Ties are broken by lexicographic node sequence; disconnected pairs map to
    an empty tuple.
    """
    g = _road_graph(grid)
    out = {}
    locs = sorted(l.id for l in grid.locations)
    for o in locs:
        for d in locs:
            if o == d:
                continue
            if not nx.has_path(g, o, d):
                out[(o, d)] = ()
                continue
            collected = []
            for nodes in nx.shortest_simple_paths(g, o, d, weight="weight"):
                w = sum(g[a][b]["weight"] for a, b in zip(nodes, nodes[1:]))
                if len(collected) >= k and w > collected[k - 1][0]:
                    break
                collected.append((w, tuple(nodes)))
            collected.sort(key=lambda t: (t[0], t[1]))
            paths = []
            for w, nodes in collected[:k]:
                roads = tuple(g[a][b]["road"] for a, b in zip(nodes, nodes[1:]))
                km = sum(g[a][b]["km"] for a, b in zip(nodes, nodes[1:]))
                paths.append(PathInfo(nodes, roads, int(w), km))
            out[(o, d)] = tuple(paths)
    return out


# ---------------------------------------------------------------------------
# Expansion
# ---------------------------------------------------------------------------

class AugmentedNetwork:
    """Immutable expanded graph; shareable across scenario workers."""

    def __init__(self, case: CaseData, config: CaseConfig, nodes, edges, paths,
                 sources, repair_locations):
        self.case = case
        self.config = config
        self.nodes = nodes                  # set[AugNode], the full grid product
        self.edges = edges                  # list[AugEdge], index == id
        self.paths = paths                  # (o, d) -> tuple[PathInfo]
        self.sources = sources              # AugNode -> vehicle count at t=0
        self.repair_locations = repair_locations
        self.by_type = {t: [] for t in EDGE_TYPES}
        self.by_ori = {}
        self.by_des = {}
        self.by_od_time = {}
        for e in edges:
            self.by_type[e.type].append(e.id)
            self.by_ori.setdefault(e.ori, []).append(e.id)
            self.by_des.setdefault(e.des, []).append(e.id)
            if e.type in MOVEMENT_TYPES:
                key = (e.ori.loc, e.des.loc, e.ori.time)
                self.by_od_time.setdefault(key, []).append(e.id)

    @property
    def soc_levels(self) -> int:
        return self.config.soc_levels

    @property
    def t_max(self) -> int:
        return self.case.time.t_max

    def exit_nodes(self):
        """Nodes allowed to carry exit flow: final period, SOC >= soc_min_final."""
        return [n for n in sorted(self.nodes, key=lambda n: (n.loc, n.soc))
                if n.time == self.t_max and n.soc >= self.config.soc_min_final]


def _soc_cost(km: float, grid: TransportGrid) -> int:
    return math.ceil(km / grid.km_per_soc_level - 1e-12)


def expand(case: CaseData, config: CaseConfig) -> AugmentedNetwork:
    """Build the full augmented network for a case and configuration."""
    grid = case.transport
    t_max = case.time.t_max
    levels = config.soc_levels
    paths = enumerate_paths(grid, config.path_k)
    road_map = {r.id: r for r in grid.roads}

    nodes = {AugNode(l.id, t, s)
             for l in grid.locations
             for t in range(t_max + 1)
             for s in range(levels)}

    buses = case.power.bus_map()
    repair_locations = sorted({
        buses[end].location
        for br in case.power.branches
        for end in (br.from_bus, br.to_bus)
        if buses[end].location is not None})

    edges: list[AugEdge] = []

    def add(type_, ori, des, dist=0.0, delay=0, path=(), path_nodes=None,
            demand_key=None):
        if path_nodes is None:
            path_nodes = (ori.loc, des.loc) if ori.loc != des.loc else (ori.loc,)
        # arrivals[k] = nominal period of entering road k; last entry is the
        # nominal (delay-free) destination arrival
        arrivals = [ori.time]
        for rid in path:
            arrivals.append(arrivals[-1] + road_map[rid].travel_time)
        if not path:
            arrivals = []
        edges.append(AugEdge(len(edges), type_, ori, des, dist, delay,
                             tuple(path), tuple(path_nodes), tuple(arrivals),
                             demand_key))

    def movement_variants(type_, o, d, path_info, t0, demand_key=None):
        """One edge per delay variant and feasible SOC for a locked path."""
        drop = _soc_cost(path_info.km, grid)
        if drop >= levels:
            raise AugmentError(
                f"soc_levels={levels} cannot traverse path {'-'.join(path_info.nodes)} "
                f"({path_info.km:.1f} km needs {drop} levels)")
        for dv in range(config.delay_max + 1):
            t_arr = t0 + path_info.travel + dv
            if t_arr > t_max:
                break
            for s0 in range(drop, levels):
                add(type_, AugNode(o, t0, s0), AugNode(d, t_arr, s0 - drop),
                    dist=path_info.km, delay=dv, path=path_info.roads,
                    path_nodes=path_info.nodes, demand_key=demand_key)

    # ser: demand-serving edges over the k locked candidate paths
    for dem in sorted(grid.demand, key=lambda d: (d.origin, d.destination, d.period)):
        for pinfo in paths.get((dem.origin, dem.destination), ()):
            movement_variants("ser", dem.origin, dem.destination, pinfo, dem.period,
                              demand_key=(dem.origin, dem.destination, dem.period))

    # re: empty single-road hops in both directions
    hop_paths = {}
    for road in sorted(grid.roads, key=lambda r: r.id):
        for (a, b) in ((road.a, road.b), (road.b, road.a)):
            hop_paths[(a, b, road.id)] = PathInfo((a, b), (road.id,),
                                                  road.travel_time, road.length)
    for (a, b, rid), pinfo in sorted(hop_paths.items()):
        for t0 in range(t_max):
            movement_variants("re", a, b, pinfo, t0)

    # cha / dis: stationary single-period edges at charging stations
    for st in sorted(grid.charging_stations, key=lambda s: s.id):
        for t0 in range(t_max):
            for s0 in range(levels - 1):
                add("cha", AugNode(st.location, t0, s0),
                    AugNode(st.location, t0 + 1, s0 + 1))
            for s0 in range(1, levels):
                add("dis", AugNode(st.location, t0, s0),
                    AugNode(st.location, t0 + 1, s0 - 1))

    # stop: everywhere
    for loc in sorted(l.id for l in grid.locations):
        for t0 in range(t_max):
            for s0 in range(levels):
                add("stop", AugNode(loc, t0, s0), AugNode(loc, t0 + 1, s0))

    # GR: single-road hops ending at branch-endpoint locations
    for (a, b, rid), pinfo in sorted(hop_paths.items()):
        if b not in repair_locations:
            continue
        for t0 in range(t_max):
            movement_variants("GR", a, b, pinfo, t0)

    # IR: stationary repairing at branch-endpoint locations
    for loc in repair_locations:
        for t0 in range(t_max):
            for s0 in range(levels):
                add("IR", AugNode(loc, t0, s0), AugNode(loc, t0 + 1, s0))

    # FT: locked-path deliveries from fuel depots to fuel nodes
    for depot in sorted(grid.fuel_depots, key=lambda d: d.id):
        for fn in sorted(grid.fuel_nodes, key=lambda f: f.id):
            if depot.location == fn.location:
                continue
            for pinfo in paths.get((depot.location, fn.location), ()):
                for t0 in range(t_max):
                    movement_variants("FT", depot.location, fn.location, pinfo, t0)

    # initial fleet placement: explicit entries plus depot crews at full charge
    sources: dict[AugNode, float] = {}
    for fi in grid.fleet_init:
        if fi.soc_level >= levels:
            raise AugmentError(
                f"fleet_init at {fi.location} uses soc_level {fi.soc_level} "
                f">= soc_levels {levels}")
        node = AugNode(fi.location, 0, fi.soc_level)
        sources[node] = sources.get(node, 0) + fi.count
    for rd in grid.repair_depots:
        node = AugNode(rd.location, 0, levels - 1)
        sources[node] = sources.get(node, 0) + rd.crews

    return AugmentedNetwork(case, config, nodes, edges, paths, sources,
                            repair_locations)


def export_augnet_csv(net: AugmentedNetwork, nodes_path, edges_path) -> None:
    """Debug dump of the expanded graph as a node/edge CSV pair."""
    with open(nodes_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["loc", "time", "soc", "source_vehicles"])
        for n in sorted(net.nodes, key=lambda n: (n.loc, n.time, n.soc)):
            w.writerow([n.loc, n.time, n.soc, net.sources.get(n, 0)])
    with open(edges_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "type", "ori_loc", "ori_time", "ori_soc",
                    "des_loc", "des_time", "des_soc", "dist_km", "delay", "path"])
        for e in net.edges:
            w.writerow([e.id, e.type, e.ori.loc, e.ori.time, e.ori.soc,
                        e.des.loc, e.des.time, e.des.soc, e.dist, e.delay,
                        "|".join(e.path)])
