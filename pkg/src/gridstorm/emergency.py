"""Per-scenario emergency-dispatch MILP assembly and simulation.

The model maximizes served value across the three networks: power load value
+ heat load value + transport demand value (net of delay costs).  Hazard
effects (component attack states, road performance, delay selection) are
scenario data, so all conditional structure is pre-processed at build time:
blocked or wrong-delay movement edges are dropped, broken branches get
closure/repair variables, everything else stays a constant.

Binary variables appear only where a discrete decision genuinely remains:
branch re-closure times under real repair crews, and the pre-storm topology
choice when reconfiguration is enabled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import milp
from .augnet import (
    AugmentedNetwork,
    AugNode,
    expand,
    path_blocked,
    required_delay,
)
from .core import CaseConfig, CaseData
from .hazard import HazardScenario, null_scenario


class BuildError(Exception):
    pass


class SimulationError(Exception):
    def __init__(self, scenario_index, message):
        self.scenario_index = scenario_index
        super().__init__(f"scenario {scenario_index}: {message}")


# A linear expression over model variables: (terms, constant)
def _expr(terms=(), const=0.0):
    return (list(terms), float(const))


@dataclass
class EmergencyModel:
    milp: milp.MilpModel
    case: CaseData
    config: CaseConfig
    scenario: HazardScenario
    net: AugmentedNetwork | None
    mode: str                          # "full", "power" or "sp"
    # variable handles -------------------------------------------------------
    x: dict = field(default_factory=dict)            # edge id -> var
    drop: dict = field(default_factory=dict)         # (o, d, t) -> var
    exits: dict = field(default_factory=dict)        # AugNode -> var
    p_served: dict = field(default_factory=dict)     # (bus, t) -> var
    h_served: dict = field(default_factory=dict)     # (heat node, t) -> var
    v_sq: dict = field(default_factory=dict)         # (bus, t) -> var
    flow_p: dict = field(default_factory=dict)       # (branch, t) -> var
    flow_q: dict = field(default_factory=dict)
    gen_p: dict = field(default_factory=dict)        # (gen, t) -> var
    gen_q: dict = field(default_factory=dict)
    pipe_flow: dict = field(default_factory=dict)    # (pipe, dir, t) -> var
    src_h: dict = field(default_factory=dict)        # (source, t) -> var
    boiler_draw: dict = field(default_factory=dict)  # (source, t) -> var (MW)
    src_cap: dict = field(default_factory=dict)      # (source, t) -> var, sp mode
    cha_power: dict = field(default_factory=dict)    # (station, t) -> var (MW)
    dis_power: dict = field(default_factory=dict)
    theta: dict = field(default_factory=dict)        # (loc, t) -> var
    xi: dict = field(default_factory=dict)           # (fuel node, t) -> var
    fuel_stock: dict = field(default_factory=dict)   # (asset, t) -> var
    s_state: dict = field(default_factory=dict)      # (branch, t) -> expr
    closure: dict = field(default_factory=dict)      # (branch, t) -> binary var y
    delta: dict = field(default_factory=dict)        # (branch, t) -> var
    s0: dict = field(default_factory=dict)           # branch -> var (reconfig)
    # objective decomposition handles ---------------------------------------
    power_terms: dict = field(default_factory=dict)      # t -> [(var, coeff)]
    heat_terms: dict = field(default_factory=dict)
    transport_terms: dict = field(default_factory=dict)  # keyed by departure t
    # derived metadata -------------------------------------------------------
    broken: dict = field(default_factory=dict)       # branch id -> (t_break, t_rep)
    earliest_close: dict = field(default_factory=dict)

    def s_value(self, branch_id: str, t: int, assignment) -> float:
        terms, const = self.s_state[(branch_id, t)]
        return const + sum(c * assignment[v] for v, c in terms)


@dataclass
class ScenarioResult:
    scenario_index: int
    seed: int
    status: str
    objective_total: float
    objective_power: float
    objective_heat: float
    objective_transport: float
    period_values: dict                  # network -> list per period
    baseline_values: dict | None         # same shape, disaster-free
    indicators: dict                     # network -> list per period in [0, 1]
    behavior_counts: dict                # edge type -> list per period
    repair_timeline: dict                # branch -> {t_break, t_repair, closed_at}
    mip_gap: float
    nodes: int
    wall_time: float


NETWORKS = ("power", "heat", "transport")


# ---------------------------------------------------------------------------
# build
# ---------------------------------------------------------------------------

def build(case: CaseData, config: CaseConfig, scenario: HazardScenario,
          net: AugmentedNetwork | None = None, mode: str = "full") -> EmergencyModel:
    """Assemble the dispatch MILP for one hazard realization.

    ``mode="full"`` builds the coupled model; ``"power"`` keeps only the power
    block with idealized repair and nominal (zero) coupling draws; ``"sp"``
    keeps the power block physical and exposes the cross-network coupling
    quantities as box-bounded boundary variables for surrogate embedding.
    """
    if mode not in ("full", "power", "sp"):
        raise BuildError(f"unknown build mode {mode!r}")
    scenario = scenario.reinforced(config.preventive_reinforce)
    t_max = case.time.t_max
    dt = case.time.delta_t

    for branch_id in scenario.branch_breaks:
        if branch_id not in case.power.branch_map():
            raise BuildError(f"scenario references unknown branch {branch_id!r}")
    if config.fuel_transport and not case.transport.fuel_depots:
        raise BuildError("fuel_transport enabled but the case has no fuel depots")

    m = milp.MilpModel("emergency")
    em = EmergencyModel(m, case, config, scenario, None, mode)
    em.broken = dict(scenario.branch_breaks)

    _add_branch_states(em)
    _add_power_block(em)
    _add_fuel_and_heat_sources(em)
    if mode == "full":
        em.net = net if net is not None else expand(case, config)
        _add_heat_block(em)
        _add_transport_block(em)
    elif mode == "sp":
        _add_heat_boundary(em)
        _add_transport_boundary(em)
    else:   # power only: coupling draws stay at zero
        _finish_power_balances(em)
    _add_repair_coupling(em)
    _set_objective(em)
    return em


# -- branch switch states ----------------------------------------------------

def _add_branch_states(em: EmergencyModel):
    """Per-(branch, period) closed-state expressions, with closure binaries
    where repair timing is an actual decision."""
    case, config, m = em.case, em.config, em.milp
    t_max = case.time.t_max
    reconfig = config.topology_reconfig and em.mode != "power"
    crew = "ideal" if em.mode == "power" else config.repair_crew

    if reconfig:
        _add_reconfig_tree(em)

    for br in case.power.branches:
        init = 1.0 if br.normally_closed else 0.0
        pre_break = (_expr([(em.s0[br.id], 1.0)]) if reconfig
                     else _expr([], init))
        brk = em.broken.get(br.id)
        if brk is None:
            for t in range(t_max):
                em.s_state[(br.id, t)] = pre_break
            continue

        t_break, t_rep = brk
        earliest = t_break + t_rep
        # closure binaries: only when repair timing is a real decision and the
        # branch can actually come back (normally closed, or reconfigurable)
        closable = (crew == "real" and earliest < t_max
                    and (reconfig or br.normally_closed))
        if closable:
            for tau in range(earliest, t_max):
                em.closure[(br.id, tau)] = m.add_var(
                    0, 1, milp.BINARY, f"close[{br.id},{tau}]")
            m.add_constraint([(em.closure[(br.id, tau)], 1.0)
                              for tau in range(earliest, t_max)],
                             "<=", 1.0, f"close_once[{br.id}]")
            em.earliest_close[br.id] = earliest

        for t in range(t_max):
            key = (br.id, t)
            if t < t_break:
                em.s_state[key] = pre_break
            elif t < earliest or crew == "off":
                em.s_state[key] = _expr([], 0.0)
            elif crew == "ideal":
                em.s_state[key] = pre_break
            elif not closable:
                em.s_state[key] = _expr([], 0.0)
            else:
                rep_terms = [(em.closure[(br.id, tau)], 1.0)
                             for tau in range(earliest, t + 1)]
                if reconfig:
                    # s = AND(s0, repaired): s <= s0, s <= rep, s >= s0 + rep - 1
                    s_var = m.add_var(0, 1, name=f"s[{br.id},{t}]")
                    m.add_constraint([(s_var, 1.0), (em.s0[br.id], -1.0)],
                                     "<=", 0.0, f"s_le_s0[{br.id},{t}]")
                    m.add_constraint([(s_var, 1.0)] + [(v, -c) for v, c in rep_terms],
                                     "<=", 0.0, f"s_le_rep[{br.id},{t}]")
                    m.add_constraint([(s_var, 1.0), (em.s0[br.id], -1.0)]
                                     + [(v, -c) for v, c in rep_terms],
                                     ">=", -1.0, f"s_and[{br.id},{t}]")
                    em.s_state[key] = _expr([(s_var, 1.0)])
                else:
                    em.s_state[key] = _expr(rep_terms)


def _add_reconfig_tree(em: EmergencyModel):
    """Pre-storm spanning-tree choice: parent direction binaries plus an
    order potential per bus rule out cycles exactly."""
    case, m = em.case, em.milp
    buses = list(case.power.buses)
    n = len(buses)
    sub = case.power.substation
    parent_terms = {b.id: [] for b in buses}
    pot = {b.id: m.add_var(0, n, name=f"pot[{b.id}]") for b in buses}
    for br in case.power.branches:
        s0 = m.add_var(0, 1, name=f"s0[{br.id}]")
        em.s0[br.id] = s0
        d_uv = m.add_var(0, 1, milp.BINARY, f"dir[{br.id},{br.from_bus}->{br.to_bus}]")
        d_vu = m.add_var(0, 1, milp.BINARY, f"dir[{br.id},{br.to_bus}->{br.from_bus}]")
        m.add_constraint([(s0, 1.0), (d_uv, -1.0), (d_vu, -1.0)], "=", 0.0,
                         f"s0_dir[{br.id}]")
        parent_terms[br.to_bus].append(d_uv)
        parent_terms[br.from_bus].append(d_vu)
        big = n + 1.0
        m.add_constraint([(pot[br.to_bus], 1.0), (pot[br.from_bus], -1.0),
                          (d_uv, -big)], ">=", 1.0 - big, f"mtz[{br.id},uv]")
        m.add_constraint([(pot[br.from_bus], 1.0), (pot[br.to_bus], -1.0),
                          (d_vu, -big)], ">=", 1.0 - big, f"mtz[{br.id},vu]")
    for b in buses:
        sense_rhs = 0.0 if b.id == sub else 1.0
        m.add_constraint([(v, 1.0) for v in parent_terms[b.id]], "=", sense_rhs,
                         f"parents[{b.id}]")


# -- power block --------------------------------------------------------------

def _add_power_block(em: EmergencyModel):
    case, m = em.case, em.milp
    t_max = case.time.t_max
    pg = case.power
    lo, hi = pg.voltage_bounds
    v_lo, v_hi = lo * lo, hi * hi
    s_base = pg.s_base
    ratio = pg.reactive_ratio

    for t in range(t_max):
        for b in pg.buses:
            em.v_sq[(b.id, t)] = m.add_var(v_lo, v_hi, name=f"v[{b.id},{t}]")
            load = case.power_load(b, t)
            em.p_served[(b.id, t)] = m.add_var(0, load, name=f"Pl[{b.id},{t}]")
            em.power_terms.setdefault(t, []).append(
                (em.p_served[(b.id, t)], b.importance * case.time.delta_t))
        m.add_constraint([(em.v_sq[(pg.substation, t)], 1.0)], "=", 1.0,
                         f"vref[{t}]")
        for g in pg.generators:
            em.gen_p[(g.id, t)] = m.add_var(0, g.p_max, name=f"Pg[{g.id},{t}]")
            em.gen_q[(g.id, t)] = m.add_var(-g.p_max, g.p_max, name=f"Qg[{g.id},{t}]")
        for br in pg.branches:
            cap = br.capacity
            p = m.add_var(-cap, cap, name=f"fp[{br.id},{t}]")
            q = m.add_var(-cap, cap, name=f"fq[{br.id},{t}]")
            em.flow_p[(br.id, t)] = p
            em.flow_q[(br.id, t)] = q
            s_terms, s_const = em.s_state[(br.id, t)]
            # |flow| <= cap * s
            for var, sign in ((p, 1.0), (q, 1.0)):
                m.add_constraint([(var, sign)] + [(v, -cap * c) for v, c in s_terms],
                                 "<=", cap * s_const, f"capp[{br.id},{t},{sign}]")
                m.add_constraint([(var, -sign)] + [(v, -cap * c) for v, c in s_terms],
                                 "<=", cap * s_const, f"capn[{br.id},{t},{sign}]")
            # voltage drop when closed: v_to - v_from + 2(r p + x q)/s_base = 0
            big = (v_hi - v_lo) + 2.0 * (br.resistance + br.reactance) * cap / s_base
            drop_terms = [(em.v_sq[(br.to_bus, t)], 1.0),
                          (em.v_sq[(br.from_bus, t)], -1.0),
                          (p, 2.0 * br.resistance / s_base),
                          (q, 2.0 * br.reactance / s_base)]
            m.add_constraint(drop_terms + [(v, big * c) for v, c in s_terms],
                             "<=", big * (1.0 - s_const), f"vdrop_hi[{br.id},{t}]")
            m.add_constraint(drop_terms + [(v, -big * c) for v, c in s_terms],
                             ">=", -big * (1.0 - s_const), f"vdrop_lo[{br.id},{t}]")


def _finish_power_balances(em: EmergencyModel):
    """Bus balance rows are assembled last so every coupling draw exists."""
    case, m = em.case, em.milp
    pg = case.power
    t_max = case.time.t_max
    stations_at_bus = {}
    for st in case.transport.charging_stations:
        stations_at_bus.setdefault(st.power_bus, []).append(st)
    boilers_at_bus = {}
    for eh in case.coupling.electric_heating:
        src = next(s for s in case.heat.sources
                   if s.node == eh.heat_node and s.driver == "electric_boiler")
        boilers_at_bus.setdefault(eh.power_bus, []).append((src, eh))

    for t in range(t_max):
        for b in pg.buses:
            p_terms = [(em.p_served[(b.id, t)], -1.0)]
            q_terms = [(em.p_served[(b.id, t)], -pg.reactive_ratio)]
            for br in pg.branches:
                if br.to_bus == b.id:
                    p_terms.append((em.flow_p[(br.id, t)], 1.0))
                    q_terms.append((em.flow_q[(br.id, t)], 1.0))
                elif br.from_bus == b.id:
                    p_terms.append((em.flow_p[(br.id, t)], -1.0))
                    q_terms.append((em.flow_q[(br.id, t)], -1.0))
            for g in pg.generators:
                if g.bus == b.id:
                    p_terms.append((em.gen_p[(g.id, t)], 1.0))
                    q_terms.append((em.gen_q[(g.id, t)], 1.0))
            for st in stations_at_bus.get(b.id, []):
                if (st.id, t) in em.cha_power:
                    p_terms.append((em.cha_power[(st.id, t)], -1.0))
                if (st.id, t) in em.dis_power:
                    p_terms.append((em.dis_power[(st.id, t)], 1.0))
            for src, eh in boilers_at_bus.get(b.id, []):
                if (src.id, t) in em.boiler_draw:
                    p_terms.append((em.boiler_draw[(src.id, t)], -1.0))
            m.add_constraint(p_terms, "=", 0.0, f"pbal[{b.id},{t}]")
            m.add_constraint(q_terms, "=", 0.0, f"qbal[{b.id},{t}]")


# -- fuel stocks and heat sources ---------------------------------------------

def _fuel_assets(case: CaseData, mode: str = "full"):
    assets = []
    for g in case.power.generators:
        if g.fuel_rate is not None:
            assets.append(("generator", g.id, g))
    if mode == "power":
        return assets   # heat-side fuel consumers are invisible to the OP view
    for s in case.heat.sources:
        if s.driver == "fuel" and s.fuel_rate is not None:
            assets.append(("heat_source", s.id, s))
    return assets


def _add_fuel_and_heat_sources(em: EmergencyModel):
    """Fuel stock recursions for fuel-burning assets plus heat source caps.

    Heat production itself is wired in the heat block (full mode) or exposed
    as capacity boundary variables (sp mode); here we create the stock
    machinery shared by both.
    """
    case, config, m = em.case, em.config, em.milp
    t_max = case.time.t_max
    dt = case.time.delta_t
    link_by_consumer = {}
    for link in case.coupling.fuel_links:
        link_by_consumer[link.consumer] = link.fuel_node
    fuel_nodes = {f.id: f for f in case.transport.fuel_nodes}

    fuel_on = config.fuel_transport and em.mode != "power"
    if fuel_on:
        for fn in sorted(fuel_nodes):
            for t in range(t_max):
                em.xi[(fn, t)] = m.add_var(0, case.transport.fleet_size,
                                           name=f"xi[{fn},{t}]")

    for kind, aid, asset in _fuel_assets(case, em.mode):
        stock0 = asset.fuel_stock
        if not config.initial_fuel_sufficient:
            stock0 = (asset.fuel_stock_scarce if asset.fuel_stock_scarce is not None
                      else 0.25 * asset.fuel_stock)
        key = f"{kind}:{aid}"
        for t in range(t_max + 1):
            em.fuel_stock[(key, t)] = m.add_var(0, math.inf, name=f"stock[{key},{t}]")
        m.add_constraint([(em.fuel_stock[(key, 0)], 1.0)], "=", stock0,
                         f"stock0[{key}]")
        fn = link_by_consumer.get(key)
        for t in range(t_max):
            terms = [(em.fuel_stock[(key, t + 1)], 1.0),
                     (em.fuel_stock[(key, t)], -1.0)]
            # burn term appended in the block wiring the asset's output
            burn_var = _asset_output_var(em, kind, aid, t)
            terms.append((burn_var, asset.fuel_rate * dt))
            if fuel_on and fn is not None:
                terms.append((em.xi[(fn, t)], -case.transport.fuel_capacity))
            m.add_constraint(terms, "=", 0.0, f"stock_bal[{key},{t}]")


def _asset_output_var(em: EmergencyModel, kind: str, aid: str, t: int) -> int:
    """Variable whose value drives fuel burn: generator output or source heat."""
    if kind == "generator":
        return em.gen_p[(aid, t)]
    # fuel-driven heat source: production variable, created on demand so both
    # the full heat block and the sp boundary can reference it
    if (aid, t) not in em.src_h:
        src = next(s for s in em.case.heat.sources if s.id == aid)
        em.src_h[(aid, t)] = em.milp.add_var(0, src.h_max, name=f"H[{aid},{t}]")
    return em.src_h[(aid, t)]


# -- heat block (full mode) ---------------------------------------------------

def _add_heat_block(em: EmergencyModel):
    case, m = em.case, em.milp
    hg = case.heat
    t_max = case.time.t_max
    chp_by_source = {l.heat_source: l for l in case.coupling.chp}
    eh_by_node = {e.heat_node: e for e in case.coupling.electric_heating}

    for t in range(t_max):
        for pipe in hg.pipes:
            em.pipe_flow[(pipe.id, "fwd", t)] = m.add_var(
                0, pipe.capacity, name=f"hf[{pipe.id},{t}]")
            em.pipe_flow[(pipe.id, "rev", t)] = m.add_var(
                0, pipe.capacity, name=f"hr[{pipe.id},{t}]")
        for src in hg.sources:
            if (src.id, t) not in em.src_h:
                em.src_h[(src.id, t)] = m.add_var(0, src.h_max, name=f"H[{src.id},{t}]")
            if src.driver == "electric_boiler":
                eh = eh_by_node.get(src.node)
                if eh is None:
                    raise BuildError(f"boiler {src.id} lacks an electric heating link")
                draw = m.add_var(0, src.h_max / eh.conversion,
                                 name=f"Peh[{src.id},{t}]")
                em.boiler_draw[(src.id, t)] = draw
                m.add_constraint([(em.src_h[(src.id, t)], 1.0),
                                  (draw, -eh.conversion)], "=", 0.0,
                                 f"boiler[{src.id},{t}]")
            elif src.driver == "chp":
                link = chp_by_source.get(src.id)
                if link is None:
                    raise BuildError(f"chp source {src.id} lacks a generator link")
                m.add_constraint([(em.src_h[(src.id, t)], 1.0),
                                  (em.gen_p[(link.generator, t)], -link.heat_per_mw)],
                                 "<=", 0.0, f"chp[{src.id},{t}]")
        for node in hg.nodes:
            load = case.heat_load(node, t)
            served = m.add_var(0, load, name=f"Hl[{node.id},{t}]")
            em.h_served[(node.id, t)] = served
            em.heat_terms.setdefault(t, []).append(
                (served, node.importance * case.time.delta_t))
            terms = [(served, -1.0)]
            for pipe in hg.pipes:
                eff = 1.0 - pipe.loss_fraction * pipe.length
                if pipe.to_node == node.id:
                    terms.append((em.pipe_flow[(pipe.id, "fwd", t)], eff))
                    terms.append((em.pipe_flow[(pipe.id, "rev", t)], -1.0))
                elif pipe.from_node == node.id:
                    terms.append((em.pipe_flow[(pipe.id, "fwd", t)], -1.0))
                    terms.append((em.pipe_flow[(pipe.id, "rev", t)], eff))
            for src in hg.sources:
                if src.node == node.id:
                    terms.append((em.src_h[(src.id, t)], 1.0))
            m.add_constraint(terms, "=", 0.0, f"hbal[{node.id},{t}]")


# -- transport block (full mode) ----------------------------------------------

def _surviving_edges(em: EmergencyModel):
    """Apply hazard structure and config toggles; returns the usable edge ids."""
    net, config, scenario = em.net, em.config, em.scenario
    crew_on = config.repair_crew == "real"
    # locations with a branch broken by a given period, for GR/IR gating
    break_locs = {}
    buses = em.case.power.bus_map()
    branch_loc = {}
    for br in em.case.power.branches:
        loc = buses[br.to_bus].location
        branch_loc[br.id] = loc
    for br_id, (t_break, _) in em.broken.items():
        loc = branch_loc.get(br_id)
        if loc is not None:
            prev = break_locs.get(loc)
            break_locs[loc] = t_break if prev is None else min(prev, t_break)

    keep = []
    for e in net.edges:
        if e.type == "dis" and not config.ev_power_supply:
            continue
        if e.type == "FT" and not config.fuel_transport:
            continue
        if e.type in ("GR", "IR"):
            if not crew_on:
                continue
            loc = e.des.loc if e.type == "GR" else e.ori.loc
            first_break = break_locs.get(loc)
            if first_break is None or e.ori.time < first_break:
                continue   # no interrupted line there yet: no pre-allocation
        if e.path:
            if path_blocked(e, scenario):
                continue
            if e.type in ("ser", "re", "GR", "FT") and \
                    required_delay(e, scenario) != e.delay:
                continue
        keep.append(e.id)
    return keep


def _reachable_edge_set(em: EmergencyModel, edge_ids):
    """Forward reachability from sources, backward from exits; both on the DAG."""
    net = em.net
    by_ori = {}
    by_des = {}
    for eid in edge_ids:
        e = net.edges[eid]
        by_ori.setdefault(e.ori, []).append(eid)
        by_des.setdefault(e.des, []).append(eid)

    fwd = set(net.sources)
    frontier = sorted(net.sources, key=lambda n: (n.time, n.loc, n.soc))
    while frontier:
        nxt = []
        for node in frontier:
            for eid in by_ori.get(node, ()):
                des = net.edges[eid].des
                if des not in fwd:
                    fwd.add(des)
                    nxt.append(des)
        frontier = nxt

    exits = set(net.exit_nodes())
    bwd = set(exits)
    frontier = list(exits)
    while frontier:
        nxt = []
        for node in frontier:
            for eid in by_des.get(node, ()):
                ori = net.edges[eid].ori
                if ori not in bwd:
                    bwd.add(ori)
                    nxt.append(ori)
        frontier = nxt

    for node, count in net.sources.items():
        if count > 0 and node not in bwd:
            raise BuildError(
                f"vehicles starting at {node} cannot reach any valid exit "
                "(check soc_levels, soc_min_final and road connectivity)")
    kept = [eid for eid in edge_ids
            if net.edges[eid].ori in (fwd & bwd) and net.edges[eid].des in (fwd & bwd)]
    return kept, fwd & bwd


def _add_transport_block(em: EmergencyModel):
    case, config, m, net = em.case, em.config, em.milp, em.net
    grid = case.transport
    t_max = case.time.t_max
    dt = case.time.delta_t

    edge_ids = _surviving_edges(em)
    edge_ids, nodes = _reachable_edge_set(em, edge_ids)

    for eid in edge_ids:
        e = net.edges[eid]
        em.x[eid] = m.add_var(0, grid.fleet_size,
                              name=f"x[{e.type},{eid}]")

    # exits and flow conservation (4b)-(4d)
    exit_nodes = [n for n in net.exit_nodes() if n in nodes]
    for n in exit_nodes:
        em.exits[n] = m.add_var(0, grid.fleet_size, name=f"exit[{n.loc},{n.soc}]")
    m.add_constraint([(v, 1.0) for v in em.exits.values()], "=",
                     float(grid.fleet_size), "total_exit")

    incident_out = {}
    incident_in = {}
    for eid in edge_ids:
        e = net.edges[eid]
        incident_out.setdefault(e.ori, []).append(eid)
        incident_in.setdefault(e.des, []).append(eid)
    balance_nodes = set(incident_out) | set(incident_in) | set(net.sources) \
        | set(exit_nodes)
    for n in sorted(balance_nodes, key=lambda n: (n.time, n.loc, n.soc)):
        terms = [(em.x[eid], 1.0) for eid in incident_out.get(n, ())]
        terms += [(em.x[eid], -1.0) for eid in incident_in.get(n, ())]
        if n in em.exits:
            terms.append((em.exits[n], 1.0))
        m.add_constraint(terms, "=", float(net.sources.get(n, 0)),
                         f"flow[{n.loc},{n.time},{n.soc}]")

    # demand satisfaction (4e) and the transport objective terms
    dem_map = {(d.origin, d.destination, d.period): d for d in grid.demand}
    ser_by_key = {}
    for eid in edge_ids:
        e = net.edges[eid]
        if e.type == "ser":
            ser_by_key.setdefault(e.demand_key, []).append(eid)
    for key, dem in sorted(dem_map.items()):
        drop = m.add_var(0, dem.count, name=f"drop[{key[0]},{key[1]},{key[2]}]")
        em.drop[key] = drop
        terms = [(em.x[eid], 1.0) for eid in ser_by_key.get(key, ())]
        m.add_constraint(terms + [(drop, 1.0)], "=", dem.count,
                         f"demand[{key[0]},{key[1]},{key[2]}]")
        for eid in ser_by_key.get(key, ()):
            e = net.edges[eid]
            value = (dem.value_fixed + dem.value_per_km * e.dist
                     - dem.delay_cost * e.delay * dt)
            em.transport_terms.setdefault(e.ori.time, []).append((em.x[eid], value))

    # charging / discharging aggregation (4f)-(4g)
    cha_by = {}
    dis_by = {}
    for eid in edge_ids:
        e = net.edges[eid]
        if e.type == "cha":
            cha_by.setdefault((e.ori.loc, e.ori.time), []).append(eid)
        elif e.type == "dis":
            dis_by.setdefault((e.ori.loc, e.ori.time), []).append(eid)
    for st in grid.charging_stations:
        for t in range(t_max):
            edges = cha_by.get((st.location, t), ())
            if edges:
                var = m.add_var(0, st.station_cap, name=f"Pcha[{st.id},{t}]")
                em.cha_power[(st.id, t)] = var
                m.add_constraint([(var, 1.0)] + [(em.x[eid], -grid.charge_power)
                                                 for eid in edges],
                                 "=", 0.0, f"cha[{st.id},{t}]")
            edges = dis_by.get((st.location, t), ())
            if edges:
                var = m.add_var(0, st.station_cap, name=f"Pdis[{st.id},{t}]")
                em.dis_power[(st.id, t)] = var
                m.add_constraint([(var, 1.0)] + [(em.x[eid], -grid.discharge_power)
                                                 for eid in edges],
                                 "=", 0.0, f"dis[{st.id},{t}]")

    # fuel deliveries (4h)
    if config.fuel_transport:
        ft_by = {}
        for eid in edge_ids:
            e = net.edges[eid]
            if e.type == "FT":
                ft_by.setdefault((e.des.loc, e.des.time), []).append(eid)
        loc_of_fn = {f.id: f.location for f in grid.fuel_nodes}
        for fn_id, loc in sorted(loc_of_fn.items()):
            for t in range(t_max):
                terms = [(em.xi[(fn_id, t)], 1.0)]
                terms += [(em.x[eid], -1.0) for eid in ft_by.get((loc, t), ())]
                m.add_constraint(terms, "=", 0.0, f"xi[{fn_id},{t}]")
        # depot stocks cap total shipped fuel
        ft_from = {}
        for eid in edge_ids:
            e = net.edges[eid]
            if e.type == "FT":
                ft_from.setdefault(e.ori.loc, []).append(eid)
        for depot in grid.fuel_depots:
            stock = depot.stock
            if not config.initial_fuel_sufficient:
                stock = (depot.stock_scarce if depot.stock_scarce is not None
                         else 0.25 * depot.stock)
            edges = ft_from.get(depot.location, ())
            if edges:
                m.add_constraint([(em.x[eid], grid.fuel_capacity) for eid in edges],
                                 "<=", stock, f"depot[{depot.id}]")

    # repair resource aggregation (4i) and continuity (4j)
    if config.repair_crew == "real":
        ir_by_loc_t = {}
        ir_out = {}
        ir_in = {}
        gr_in = {}
        for eid in edge_ids:
            e = net.edges[eid]
            if e.type == "IR":
                ir_by_loc_t.setdefault((e.ori.loc, e.ori.time), []).append(eid)
                ir_out.setdefault(e.ori, []).append(eid)
                ir_in.setdefault(e.des, []).append(eid)
            elif e.type == "GR":
                gr_in.setdefault(e.des, []).append(eid)
        for loc in net.repair_locations:
            for t in range(t_max):
                edges = ir_by_loc_t.get((loc, t), ())
                if not edges:
                    continue
                var = m.add_var(0, grid.fleet_size, name=f"theta[{loc},{t}]")
                em.theta[(loc, t)] = var
                m.add_constraint([(var, 1.0)] + [(em.x[eid], -1.0) for eid in edges],
                                 "=", 0.0, f"theta[{loc},{t}]")
        for node in sorted(ir_out, key=lambda n: (n.time, n.loc, n.soc)):
            terms = [(em.x[eid], 1.0) for eid in ir_out[node]]
            terms += [(em.x[eid], -1.0) for eid in gr_in.get(node, ())]
            terms += [(em.x[eid], -1.0) for eid in ir_in.get(node, ())]
            m.add_constraint(terms, "<=", 0.0,
                             f"ir_cont[{node.loc},{node.time},{node.soc}]")

    _finish_power_balances(em)


# -- boundary variables (sp mode) ----------------------------------------------

def heat_boundary_layout(case: CaseData):
    """Ordered heat-surrogate features: boiler draws then source capacities."""
    feats = []
    for eh in sorted(case.coupling.electric_heating, key=lambda e: e.heat_node):
        src = next(s for s in case.heat.sources
                   if s.node == eh.heat_node and s.driver == "electric_boiler")
        for t in range(case.time.t_max):
            feats.append(("boiler_draw", src.id, t, 0.0, src.h_max / eh.conversion))
    for src in sorted(case.heat.sources, key=lambda s: s.id):
        if src.driver == "electric_boiler":
            continue
        for t in range(case.time.t_max):
            feats.append(("src_cap", src.id, t, 0.0, src.h_max))
    return feats


def transport_boundary_layout(case: CaseData, config: CaseConfig):
    """Ordered transport-surrogate features: station powers, repair resources,
    fuel deliveries, then per-road performance summaries.

    The layout mirrors the model structure of the configuration: features for
    disabled decisions (EV supply, fuel transport, real repair) are omitted so
    the surrogate and the embedding stay aligned.
    """
    feats = []
    t_max = case.time.t_max
    fleet = float(case.transport.fleet_size)
    for st in sorted(case.transport.charging_stations, key=lambda s: s.id):
        for t in range(t_max):
            feats.append(("cha", st.id, t, 0.0, st.station_cap))
    if config.ev_power_supply:
        for st in sorted(case.transport.charging_stations, key=lambda s: s.id):
            for t in range(t_max):
                feats.append(("dis", st.id, t, 0.0, st.station_cap))
    if config.repair_crew == "real":
        buses = case.power.bus_map()
        repair_locs = sorted({buses[e].location for br in case.power.branches
                              for e in (br.from_bus, br.to_bus)
                              if buses[e].location is not None})
        for loc in repair_locs:
            for t in range(t_max):
                feats.append(("theta", loc, t, 0.0, fleet))
    if config.fuel_transport:
        for fn in sorted(case.transport.fuel_nodes, key=lambda f: f.id):
            for t in range(t_max):
                feats.append(("xi", fn.id, t, 0.0, fleet))
    for road in sorted(case.transport.roads, key=lambda r: r.id):
        feats.append(("road_v", road.id, -1, 0.0, 1.0))
    return feats


def _add_heat_boundary(em: EmergencyModel):
    case, m = em.case, em.milp
    eh_by_node = {e.heat_node: e for e in case.coupling.electric_heating}
    chp_by_source = {l.heat_source: l for l in case.coupling.chp}
    for kind, sid, t, lo, hi in heat_boundary_layout(case):
        if kind == "boiler_draw":
            var = m.add_var(lo, hi, name=f"Peh[{sid},{t}]")
            em.boiler_draw[(sid, t)] = var
        else:
            src = next(s for s in case.heat.sources if s.id == sid)
            if src.driver == "fuel" and src.fuel_rate is not None:
                # capacity var already exists as the fuel-burning output
                var = _asset_output_var(em, "heat_source", sid, t)
            else:
                var = m.add_var(lo, hi, name=f"Hcap[{sid},{t}]")
                if src.driver == "chp":
                    link = chp_by_source.get(src.id)
                    if link is None:
                        raise BuildError(f"chp source {sid} lacks a generator link")
                    m.add_constraint([(var, 1.0),
                                      (em.gen_p[(link.generator, t)],
                                       -link.heat_per_mw)],
                                     "<=", 0.0, f"chp_cap[{sid},{t}]")
                em.src_h[(sid, t)] = var
            em.src_cap[(sid, t)] = var


def _add_transport_boundary(em: EmergencyModel):
    case, m = em.case, em.milp
    for kind, sid, t, lo, hi in transport_boundary_layout(case, em.config):
        if kind == "road_v":
            continue   # scenario constants, injected at embedding time
        if kind == "xi":
            # already created by the fuel stock machinery; just expose it
            continue
        var = m.add_var(lo, hi, name=f"bnd_{kind}[{sid},{t}]")
        if kind == "cha":
            em.cha_power[(sid, t)] = var
        elif kind == "dis":
            em.dis_power[(sid, t)] = var
        elif kind == "theta":
            em.theta[(sid, t)] = var
    _finish_power_balances(em)


# -- repair coupling (5a)-(5c) --------------------------------------------------

def _add_repair_coupling(em: EmergencyModel):
    """Closure permission: t_repair consecutive periods with enough resources."""
    case, config, m = em.case, em.config, em.milp
    if em.mode == "power" or config.repair_crew != "real":
        return
    buses = case.power.bus_map()
    t_max = case.time.t_max
    for br in case.power.branches:
        brk = em.broken.get(br.id)
        if brk is None or br.id not in em.earliest_close:
            continue
        t_break, t_rep = brk
        loc = buses[br.to_bus].location
        if loc is None:
            raise BuildError(f"branch {br.id} needs repair but bus "
                             f"{br.to_bus} has no transport location")
        for w in range(t_break, t_max):
            if (br.id, w) not in em.delta:
                d = m.add_var(0, 1, name=f"delta[{br.id},{w}]")
                em.delta[(br.id, w)] = d
                theta = em.theta.get((loc, w))
                if theta is None:
                    # no repair capacity can ever reach here at w: delta stays 0
                    m.add_constraint([(d, 1.0)], "<=", 0.0,
                                     f"delta_cap[{br.id},{w}]")
                elif br.repair_need > 0:
                    m.add_constraint([(d, br.repair_need), (theta, -1.0)],
                                     "<=", 0.0, f"delta_cap[{br.id},{w}]")
        for tau in range(em.earliest_close[br.id], t_max):
            window = range(tau - t_rep, tau)
            terms = [(em.closure[(br.id, tau)], float(t_rep))]
            terms += [(em.delta[(br.id, w)], -1.0) for w in window]
            m.add_constraint(terms, "<=", 0.0, f"close_window[{br.id},{tau}]")


# -- objective -------------------------------------------------------------------

def _set_objective(em: EmergencyModel):
    terms = []
    for bucket in (em.power_terms, em.heat_terms, em.transport_terms):
        for t_terms in bucket.values():
            terms.extend(t_terms)
    em.milp.set_objective("max", terms)


# ---------------------------------------------------------------------------
# simulate / extract
# ---------------------------------------------------------------------------

def _period_values(em: EmergencyModel, assignment) -> dict:
    t_max = em.case.time.t_max
    out = {}
    for name, bucket in (("power", em.power_terms), ("heat", em.heat_terms),
                         ("transport", em.transport_terms)):
        vals = []
        for t in range(t_max):
            vals.append(float(sum(c * assignment[v] for v, c in bucket.get(t, ()))))
        out[name] = vals
    return out


def _behavior_counts(em: EmergencyModel, assignment) -> dict:
    t_max = em.case.time.t_max
    counts = {k: [0.0] * t_max for k in
              ("ser", "re", "cha", "dis", "stop", "GR", "IR", "FT")}
    if em.net is None:
        return counts
    for eid, var in em.x.items():
        e = em.net.edges[eid]
        val = float(assignment[var])
        if val <= 1e-9:
            continue
        for t in range(e.ori.time, min(e.des.time, t_max)):
            counts[e.type][t] += val
    return counts


def _repair_timeline(em: EmergencyModel, assignment) -> dict:
    out = {}
    t_max = em.case.time.t_max
    for br_id, (t_break, t_rep) in em.broken.items():
        closed_at = None
        if em.config.repair_crew == "ideal" or em.mode == "power":
            closed_at = t_break + t_rep if t_break + t_rep < t_max else None
        elif em.config.repair_crew == "real":
            for tau in range(em.earliest_close.get(br_id, t_max), t_max):
                y = em.closure.get((br_id, tau))
                if y is not None and assignment[y] > 0.5:
                    closed_at = tau
                    break
        out[br_id] = {"t_break": t_break, "t_repair": t_rep, "closed_at": closed_at}
    return out


def solve_model(em: EmergencyModel, solver_cfg: milp.SolverConfig | None = None):
    cfg = solver_cfg or milp.SolverConfig(rel_gap=0.0)
    return milp.solve(em.milp, cfg)


def simulate(case: CaseData, config: CaseConfig, scenario: HazardScenario,
             solver_cfg: milp.SolverConfig | None = None,
             net: AugmentedNetwork | None = None,
             baseline: dict | None = None,
             _skip_normalization: bool = False) -> ScenarioResult:
    """Build and solve one scenario; returns normalized per-period indicators.

    ``baseline`` (per-period disaster-free values, as produced by a null
    scenario run) may be passed to avoid recomputing it per call.
    """
    net = net if net is not None else expand(case, config)
    em = build(case, config, scenario, net)
    sol = solve_model(em, solver_cfg)
    if sol.status not in ("optimal", "gap_limit"):
        raise SimulationError(scenario.index, f"solver returned {sol.status}")

    values = _period_values(em, sol.assignment)
    totals = {k: sum(v) for k, v in values.items()}

    if _skip_normalization:
        baseline = None
        indicators = {k: [1.0] * case.time.t_max for k in NETWORKS}
    else:
        if baseline is None:
            base_res = simulate(case, config, null_scenario(case), solver_cfg,
                                net=net, _skip_normalization=True)
            baseline = base_res.period_values
        indicators = {}
        for k in NETWORKS:
            vals = []
            for t in range(case.time.t_max):
                ref = baseline[k][t]
                vals.append(float(values[k][t] / ref) if ref > 1e-12 else 1.0)
            indicators[k] = vals

    return ScenarioResult(
        scenario_index=scenario.index,
        seed=scenario.seed,
        status=sol.status,
        objective_total=sol.objective_value,
        objective_power=totals["power"],
        objective_heat=totals["heat"],
        objective_transport=totals["transport"],
        period_values=values,
        baseline_values=baseline,
        indicators=indicators,
        behavior_counts=_behavior_counts(em, sol.assignment),
        repair_timeline=_repair_timeline(em, sol.assignment),
        mip_gap=sol.mip_gap,
        nodes=sol.nodes,
        wall_time=sol.wall_time,
    )


def decompose_objective(result: ScenarioResult) -> dict:
    """Per-network objective totals; they sum to the solver objective."""
    return {"F_PN": result.objective_power,
            "F_HN": result.objective_heat,
            "F_TN": result.objective_transport}
