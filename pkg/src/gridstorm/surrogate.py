"""ReLU-network surrogates for the heat and transport sub-networks.

A sub-network trains a small dense ReLU net mapping its boundary quantities
(station charging/discharging power, requested repair resources, fuel
deliveries, boiler draws, source capacities, road-performance summaries) to
its own optimal objective value.  The trained net is then embedded exactly
into a MILP through the standard Big-M linearization of y = max(0, w), with
per-neuron constants from interval propagation, so a power-side model can
price cross-network effects without seeing any sub-network internals.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import emergency, milp
from .augnet import expand, path_blocked, required_delay
from .core import CaseConfig, CaseData
from .hazard import HazardScenario, null_scenario
from .util import canonical_json, dump_json, load_json


class SurrogateError(Exception):
    pass


ROAD_INTERRUPT_V = 0.2        # roads below this performance count as cut
ROAD_V_FLOOR = 0.1            # lower box bound of road-performance features


# ---------------------------------------------------------------------------
# Boundary specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundarySpec:
    subnet: str                     # "heat" or "transport"
    features: tuple                 # (kind, id, t, lo, hi) rows, order persisted

    @property
    def dim(self) -> int:
        return len(self.features)

    def lo(self) -> np.ndarray:
        return np.array([f[3] for f in self.features])

    def hi(self) -> np.ndarray:
        return np.array([f[4] for f in self.features])

    def digest(self) -> str:
        return hashlib.sha256(
            canonical_json([list(f) for f in self.features]).encode()).hexdigest()[:16]


def boundary_spec(subnet: str, case: CaseData, config: CaseConfig) -> BoundarySpec:
    if subnet == "heat":
        feats = emergency.heat_boundary_layout(case)
    elif subnet == "transport":
        feats = [
            (kind, sid, t, (ROAD_V_FLOOR if kind == "road_v" else lo), hi)
            for kind, sid, t, lo, hi in
            emergency.transport_boundary_layout(case, config)]
    else:
        raise SurrogateError(f"unknown subnet {subnet!r}")
    if not feats:
        raise SurrogateError(f"{subnet}: the case exposes no boundary variables")
    return BoundarySpec(subnet, tuple(tuple(f) for f in feats))


@dataclass
class TrainingSet:
    spec: BoundarySpec
    inputs: np.ndarray              # (n, dim) boundary vectors
    labels: np.ndarray              # (n,) sub-network objective values
    infeasible: np.ndarray          # (n,) flags for penalty-labeled rows
    seed: int


# ---------------------------------------------------------------------------
# MLP: forward, training, persistence
# ---------------------------------------------------------------------------

@dataclass
class Mlp:
    layer_sizes: tuple              # (d_in, h1, ..., 1)
    weights: list                   # W[l]: (n_out, n_in) arrays
    biases: list                    # b[l]: (n_out,) arrays
    in_shift: np.ndarray
    in_scale: np.ndarray
    out_shift: float
    out_scale: float
    spec_digest: str = ""
    loss_history: list = field(default_factory=list, repr=False)


def forward(mlp: Mlp, x) -> float:
    """Deterministic forward pass on one physical input vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (mlp.layer_sizes[0],):
        raise SurrogateError(
            f"input dimension {x.shape} does not match {mlp.layer_sizes[0]}")
    z = (x - mlp.in_shift) / mlp.in_scale
    for l in range(len(mlp.weights) - 1):
        z = np.maximum(0.0, mlp.weights[l] @ z + mlp.biases[l])
    y = mlp.weights[-1] @ z + mlp.biases[-1]
    return float(y[0] * mlp.out_scale + mlp.out_shift)


def _forward_batch_normalized(weights, biases, z):
    acts = [z]
    for l in range(len(weights) - 1):
        z = np.maximum(0.0, z @ weights[l].T + biases[l])
        acts.append(z)
    out = z @ weights[-1].T + biases[-1]
    return acts, out[:, 0]


def mse_loss_and_grads(weights, biases, z, y):
    """Full-batch MSE and analytic gradients (normalized space)."""
    n = len(y)
    acts, pred = _forward_batch_normalized(weights, biases, z)
    err = pred - y
    loss = float(np.mean(err ** 2))
    d_out = (2.0 / n) * err[:, None]
    grads_w = [None] * len(weights)
    grads_b = [None] * len(weights)
    delta = d_out                                  # (n, 1)
    grads_w[-1] = delta.T @ acts[-1]
    grads_b[-1] = delta.sum(axis=0)
    back = delta @ weights[-1]
    for l in range(len(weights) - 2, -1, -1):
        pre_positive = acts[l + 1] > 0
        delta = back * pre_positive
        grads_w[l] = delta.T @ acts[l]
        grads_b[l] = delta.sum(axis=0)
        back = delta @ weights[l]
    return loss, grads_w, grads_b


def train(training_set: TrainingSet, arch=(16, 16), epochs: int = 4000,
          step: float = 0.05, seed: int = 0) -> Mlp:
    """Full-batch gradient descent on MSE with deterministic initialization.

    Inputs are normalized to [0, 1] per feature from the boundary bounds;
    labels to [0, 1] from their observed range.  Training diverging to NaN
    aborts with diagnostics rather than returning a broken model.
    """
    X, y = training_set.inputs, training_set.labels
    if len(X) < 2:
        raise SurrogateError("training needs at least 2 rows")
    spec = training_set.spec
    in_shift = spec.lo()
    in_scale = np.where(spec.hi() - spec.lo() > 1e-12, spec.hi() - spec.lo(), 1.0)
    y_lo, y_hi = float(np.min(y)), float(np.max(y))
    out_shift = y_lo
    out_scale = (y_hi - y_lo) if y_hi - y_lo > 1e-12 else 1.0

    z = (X - in_shift) / in_scale
    t = (y - out_shift) / out_scale

    sizes = (spec.dim, *arch, 1)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for l in range(len(sizes) - 1):
        fan_in = sizes[l]
        weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in),
                                  size=(sizes[l + 1], sizes[l])))
        biases.append(np.zeros(sizes[l + 1]))

    history = []
    for epoch in range(epochs):
        loss, gw, gb = mse_loss_and_grads(weights, biases, z, t)
        if not math.isfinite(loss):
            raise SurrogateError(
                f"training diverged to non-finite loss at epoch {epoch} "
                f"(step={step}, arch={arch})")
        history.append(loss)
        for l in range(len(weights)):
            weights[l] -= step * gw[l]
            biases[l] -= step * gb[l]

    return Mlp(sizes, weights, biases, in_shift, in_scale, out_shift, out_scale,
               spec.digest(), history)


def save_mlp(mlp: Mlp, path) -> None:
    dump_json({
        "layer_sizes": list(mlp.layer_sizes),
        "weights": [w.ravel().tolist() for w in mlp.weights],
        "biases": [b.tolist() for b in mlp.biases],
        "in_shift": mlp.in_shift.tolist(),
        "in_scale": mlp.in_scale.tolist(),
        "out_shift": mlp.out_shift,
        "out_scale": mlp.out_scale,
        "spec_digest": mlp.spec_digest,
    }, path)


def load_mlp(path) -> Mlp:
    d = load_json(path)
    sizes = tuple(d["layer_sizes"])
    weights = [np.array(w).reshape(sizes[l + 1], sizes[l])
               for l, w in enumerate(d["weights"])]
    biases = [np.array(b) for b in d["biases"]]
    return Mlp(sizes, weights, biases, np.array(d["in_shift"]),
               np.array(d["in_scale"]), d["out_shift"], d["out_scale"],
               d.get("spec_digest", ""))


# ---------------------------------------------------------------------------
# Interval propagation and Big-M embedding
# ---------------------------------------------------------------------------

@dataclass
class NeuronBounds:
    pre_lo: list                    # per layer: (n,) arrays of pre-activation lows
    pre_hi: list


def neuron_bounds(mlp: Mlp, input_lo, input_hi) -> NeuronBounds:
    """Interval propagation of physical input bounds through the network."""
    lo = (np.asarray(input_lo, dtype=float) - mlp.in_shift) / mlp.in_scale
    hi = (np.asarray(input_hi, dtype=float) - mlp.in_shift) / mlp.in_scale
    if np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)):
        raise SurrogateError("cannot embed a network over unbounded inputs")
    pre_lo, pre_hi = [], []
    for l, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        pos = np.maximum(w, 0.0)
        neg = np.minimum(w, 0.0)
        wl = pos @ lo + neg @ hi + b
        wh = pos @ hi + neg @ lo + b
        pre_lo.append(wl)
        pre_hi.append(wh)
        lo = np.maximum(0.0, wl)
        hi = np.maximum(0.0, wh)
    return NeuronBounds(pre_lo, pre_hi)


def embed(model: milp.MilpModel, mlp: Mlp, input_vars, bounds: NeuronBounds,
          name: str = "mlp") -> int:
    """Add the network to ``model`` over existing input variables.

    Each unstable neuron contributes one continuous output, one binary and the
    Big-M rows of the exact ReLU linearization (M = max(|lo|, |hi|, tiny) from
    interval propagation); stably active neurons become equalities and dead
    neurons fixed zeros.  Returns the de-normalized output variable id.
    """
    if len(input_vars) != mlp.layer_sizes[0]:
        raise SurrogateError("input variable count does not match the network")
    for v in input_vars:
        var = model.variables[v]
        if not (math.isfinite(var.lower) and math.isfinite(var.upper)):
            raise SurrogateError(f"input variable {var.name} is unbounded")

    # normalized inputs
    prev = []
    for j, v in enumerate(input_vars):
        shift, scale = mlp.in_shift[j], mlp.in_scale[j]
        var = model.variables[v]
        z = model.add_var((var.lower - shift) / scale, (var.upper - shift) / scale,
                          name=f"{name}_z{j}")
        model.add_constraint([(v, 1.0), (z, -scale)], "=", shift,
                             f"{name}_norm{j}")
        prev.append(z)

    tiny = 1e-6
    n_layers = len(mlp.weights)
    for l in range(n_layers - 1):
        nxt = []
        for i in range(mlp.layer_sizes[l + 1]):
            lo = float(bounds.pre_lo[l][i])
            hi = float(bounds.pre_hi[l][i])
            w_terms = [(prev[j], float(mlp.weights[l][i, j]))
                       for j in range(len(prev)) if mlp.weights[l][i, j] != 0.0]
            bias = float(mlp.biases[l][i])
            if hi <= 0.0:
                y = model.add_var(0.0, 0.0, name=f"{name}_y{l}_{i}")   # dead
            elif lo >= 0.0:
                y = model.add_var(lo, hi, name=f"{name}_y{l}_{i}")     # active
                model.add_constraint([(y, 1.0)] + [(v, -c) for v, c in w_terms],
                                     "=", bias, f"{name}_act{l}_{i}")
            else:
                big = max(abs(lo), abs(hi), tiny)
                w = model.add_var(lo, hi, name=f"{name}_w{l}_{i}")
                model.add_constraint([(w, 1.0)] + [(v, -c) for v, c in w_terms],
                                     "=", bias, f"{name}_pre{l}_{i}")
                y = model.add_var(0.0, max(hi, 0.0), name=f"{name}_y{l}_{i}")
                u = model.add_var(0, 1, milp.BINARY, name=f"{name}_u{l}_{i}")
                model.add_constraint([(y, 1.0), (w, -1.0)], ">=", 0.0,
                                     f"{name}_relu_ge[{l},{i}]")
                model.add_constraint([(y, 1.0), (u, big)], "<=", big,
                                     f"{name}_relu_off[{l},{i}]")
                model.add_constraint([(y, 1.0), (w, -1.0), (u, -big)], "<=", 0.0,
                                     f"{name}_relu_on[{l},{i}]")
            nxt.append(y)
        prev = nxt

    # linear output neuron + denormalization
    lo = float(bounds.pre_lo[-1][0])
    hi = float(bounds.pre_hi[-1][0])
    y_norm = model.add_var(lo, hi, name=f"{name}_out_norm")
    w_terms = [(prev[j], float(mlp.weights[-1][0, j])) for j in range(len(prev))]
    model.add_constraint([(y_norm, 1.0)] + [(v, -c) for v, c in w_terms], "=",
                         float(mlp.biases[-1][0]), f"{name}_out_pre")
    y_phys = model.add_var(lo * mlp.out_scale + mlp.out_shift,
                           hi * mlp.out_scale + mlp.out_shift,
                           name=f"{name}_out")
    model.add_constraint([(y_phys, 1.0), (y_norm, -mlp.out_scale)], "=",
                         mlp.out_shift, f"{name}_denorm")
    return y_phys


# ---------------------------------------------------------------------------
# Sample generation: standalone sub-network models
# ---------------------------------------------------------------------------

def _heat_objective_for(case: CaseData, caps: dict, draws: dict,
                        solver_cfg=None) -> float | None:
    """Heat-only dispatch value given per-period source caps and boiler draws."""
    m = milp.MilpModel("heat_standalone")
    hg = case.heat
    t_max = case.time.t_max
    eh_by_node = {e.heat_node: e for e in case.coupling.electric_heating}
    obj = []
    for t in range(t_max):
        flows = {}
        for pipe in hg.pipes:
            flows[(pipe.id, "fwd")] = m.add_var(0, pipe.capacity)
            flows[(pipe.id, "rev")] = m.add_var(0, pipe.capacity)
        prod = {}
        for src in hg.sources:
            if src.driver == "electric_boiler":
                conv = eh_by_node[src.node].conversion
                cap = min(src.h_max, conv * draws.get((src.id, t), 0.0))
            else:
                cap = min(src.h_max, caps.get((src.id, t), src.h_max))
            prod[src.id] = m.add_var(0, max(0.0, cap))
        for node in hg.nodes:
            load = case.heat_load(node, t)
            served = m.add_var(0, load)
            obj.append((served, node.importance * case.time.delta_t))
            terms = [(served, -1.0)]
            for pipe in hg.pipes:
                eff = 1.0 - pipe.loss_fraction * pipe.length
                if pipe.to_node == node.id:
                    terms += [(flows[(pipe.id, "fwd")], eff),
                              (flows[(pipe.id, "rev")], -1.0)]
                elif pipe.from_node == node.id:
                    terms += [(flows[(pipe.id, "fwd")], -1.0),
                              (flows[(pipe.id, "rev")], eff)]
            for src in hg.sources:
                if src.node == node.id:
                    terms.append((prod[src.id], 1.0))
            m.add_constraint(terms, "=", 0.0)
    m.set_objective("max", obj)
    sol = milp.solve(m, solver_cfg or milp.SolverConfig())
    return sol.objective_value if sol.status == "optimal" else None


def _transport_objective_for(case: CaseData, config: CaseConfig, features: dict,
                             net, solver_cfg=None) -> float | None:
    """Transport-only dispatch value under boundary caps and requests.

    Charging is capped by the offered station power; discharging, repair
    resources and fuel deliveries must meet the requested levels.  Road
    performance is the scenario-summary value held constant over the horizon.
    """
    t_max = case.time.t_max
    grid = case.transport
    road_v = {}
    road_u = {}
    for road in grid.roads:
        v = features.get(("road_v", road.id, -1), 1.0)
        road_v[road.id] = tuple(v for _ in range(t_max))
        road_u[road.id] = tuple(1 if v >= ROAD_INTERRUPT_V else 0
                                for _ in range(t_max))
    scenario = HazardScenario(-2, -2, t_max, {}, road_v, road_u)

    m = milp.MilpModel("transport_standalone")
    x = {}
    for e in net.edges:
        if e.type == "dis" and not config.ev_power_supply:
            continue
        if e.type == "FT" and not config.fuel_transport:
            continue
        if e.type in ("GR", "IR") and config.repair_crew != "real":
            continue
        if e.path:
            if path_blocked(e, scenario):
                continue
            if e.type in ("ser", "re", "GR", "FT") and \
                    required_delay(e, scenario) != e.delay:
                continue
        x[e.id] = m.add_var(0, grid.fleet_size)

    exits = {}
    for n in net.exit_nodes():
        exits[n] = m.add_var(0, grid.fleet_size)
    m.add_constraint([(v, 1.0) for v in exits.values()], "=",
                     float(grid.fleet_size))
    out_of, into = {}, {}
    for eid in x:
        e = net.edges[eid]
        out_of.setdefault(e.ori, []).append(eid)
        into.setdefault(e.des, []).append(eid)
    nodes = set(out_of) | set(into) | set(net.sources) | set(exits)
    for n in nodes:
        terms = [(x[eid], 1.0) for eid in out_of.get(n, ())]
        terms += [(x[eid], -1.0) for eid in into.get(n, ())]
        if n in exits:
            terms.append((exits[n], 1.0))
        m.add_constraint(terms, "=", float(net.sources.get(n, 0)))

    obj = []
    dem_map = {(d.origin, d.destination, d.period): d for d in grid.demand}
    ser_by_key = {}
    for eid in x:
        e = net.edges[eid]
        if e.type == "ser":
            ser_by_key.setdefault(e.demand_key, []).append(eid)
    for key, dem in dem_map.items():
        terms = [(x[eid], 1.0) for eid in ser_by_key.get(key, ())]
        m.add_constraint(terms, "<=", dem.count)
        for eid in ser_by_key.get(key, ()):
            e = net.edges[eid]
            obj.append((x[eid], dem.value_fixed + dem.value_per_km * e.dist
                        - dem.delay_cost * e.delay * case.time.delta_t))

    cha_by, dis_by, ir_by, ft_by = {}, {}, {}, {}
    ir_out, ir_in, gr_in = {}, {}, {}
    for eid in x:
        e = net.edges[eid]
        if e.type == "cha":
            cha_by.setdefault((e.ori.loc, e.ori.time), []).append(eid)
        elif e.type == "dis":
            dis_by.setdefault((e.ori.loc, e.ori.time), []).append(eid)
        elif e.type == "IR":
            ir_by.setdefault((e.ori.loc, e.ori.time), []).append(eid)
            ir_out.setdefault(e.ori, []).append(eid)
            ir_in.setdefault(e.des, []).append(eid)
        elif e.type == "GR":
            gr_in.setdefault(e.des, []).append(eid)
        elif e.type == "FT":
            ft_by.setdefault((e.des.loc, e.des.time), []).append(eid)

    for st in grid.charging_stations:
        for t in range(t_max):
            cap = features.get(("cha", st.id, t), st.station_cap)
            edges = cha_by.get((st.location, t), ())
            if edges:
                m.add_constraint([(x[eid], grid.charge_power) for eid in edges],
                                 "<=", min(cap, st.station_cap))
            req = features.get(("dis", st.id, t), 0.0)
            if req > 0:
                edges = dis_by.get((st.location, t), ())
                if not edges:
                    return None
                m.add_constraint([(x[eid], grid.discharge_power) for eid in edges],
                                 ">=", req)
    if config.repair_crew == "real":
        for (kind, loc, t), req in features.items():
            if kind != "theta" or req <= 0:
                continue
            edges = ir_by.get((loc, t), ())
            if not edges:
                return None
            m.add_constraint([(x[eid], 1.0) for eid in edges], ">=", req)
        for node in ir_out:
            terms = [(x[eid], 1.0) for eid in ir_out[node]]
            terms += [(x[eid], -1.0) for eid in gr_in.get(node, ())]
            terms += [(x[eid], -1.0) for eid in ir_in.get(node, ())]
            m.add_constraint(terms, "<=", 0.0)
    if config.fuel_transport:
        loc_of_fn = {f.id: f.location for f in grid.fuel_nodes}
        for (kind, fn_id, t), req in features.items():
            if kind != "xi" or req <= 0:
                continue
            edges = ft_by.get((loc_of_fn[fn_id], t), ())
            if not edges:
                return None
            m.add_constraint([(x[eid], 1.0) for eid in edges], ">=", req)

    m.set_objective("max", obj)
    sol = milp.solve(m, solver_cfg or milp.SolverConfig())
    return sol.objective_value if sol.status == "optimal" else None


def _lhs_box(rng, n, lo, hi):
    dim = len(lo)
    out = np.empty((n, dim))
    for d in range(dim):
        perm = rng.permutation(n)
        out[:, d] = lo[d] + (perm + rng.random(n)) / n * (hi[d] - lo[d])
    return out


# request-type features (dis/theta/xi) are demands the transport fleet must
# meet; dense box draws over hundreds of them are almost surely infeasible and
# would label the whole set with penalty zeros, so requests are sampled as a
# handful of task-shaped pulses per row instead
REQUEST_KINDS = ("dis", "theta", "xi")


def _overwrite_request_columns(X, spec, rng, t_max):
    by_kind = {}
    for j, (kind, sid, t, lo, hi) in enumerate(spec.features):
        if kind in REQUEST_KINDS:
            by_kind.setdefault(kind, {}).setdefault(sid, {})[t] = j
    for i in range(len(X)):
        for kind, sites in by_kind.items():
            for sid, cols in sites.items():
                for j in cols.values():
                    X[i, j] = 0.0
            for _ in range(int(rng.integers(0, 3))):
                sid = sorted(sites)[int(rng.integers(0, len(sites)))]
                cols = sites[sid]
                t0 = int(rng.integers(1, max(2, t_max - 2)))
                width = int(rng.integers(1, 5))
                hi = spec.features[next(iter(cols.values()))][4]
                level = float(rng.uniform(0.2, 0.6)) * hi
                for t in range(t0, min(t0 + width, t_max)):
                    if t in cols:
                        X[i, cols[t]] = level
    return X


def generate_samples(subnet: str, case: CaseData, config: CaseConfig, n: int,
                     seed: int, solver_cfg=None) -> TrainingSet:
    """Label LHS-drawn boundary vectors with standalone sub-network optima.

    The fully-nominal and fully-degraded corners are always included so the
    model sees both good and bad operating points.  Samples whose requests are
    infeasible for the sub-network get penalty label 0 and a flag.
    """
    if n < 1:
        raise SurrogateError("need n >= 1 samples")
    spec = boundary_spec(subnet, case, config)
    lo, hi = spec.lo(), spec.hi()
    rng = np.random.default_rng(seed)

    nominal = np.array([_nominal_value(f) for f in spec.features])
    degraded = np.array([_degraded_value(f) for f in spec.features])
    rows = [nominal, degraded]
    if n > 2:
        lhs = _lhs_box(rng, n - 2, lo, hi)
        if subnet == "transport":
            lhs = _overwrite_request_columns(lhs, spec, rng, case.time.t_max)
        rows.append(lhs)
    X = np.vstack([r if r.ndim == 2 else r[None, :] for r in rows])[:n]

    net = expand(case, config) if subnet == "transport" else None
    labels = np.zeros(len(X))
    infeasible = np.zeros(len(X), dtype=bool)
    for i, row in enumerate(X):
        feats = {(k, s, t): row[j] for j, (k, s, t, _, _) in enumerate(spec.features)}
        if subnet == "heat":
            caps = {(s, t): v for (k, s, t), v in feats.items() if k == "src_cap"}
            draws = {(s, t): v for (k, s, t), v in feats.items()
                     if k == "boiler_draw"}
            val = _heat_objective_for(case, caps, draws, solver_cfg)
        else:
            val = _transport_objective_for(case, config, feats, net, solver_cfg)
        if val is None:
            infeasible[i] = True
            labels[i] = 0.0
        else:
            labels[i] = val
    return TrainingSet(spec, X, labels, infeasible, seed)


def _nominal_value(feature) -> float:
    kind, _, _, lo, hi = feature
    # capacities and road performance at their best; requests at zero
    if kind in ("cha", "src_cap", "boiler_draw", "road_v"):
        return hi
    return lo


def _degraded_value(feature) -> float:
    kind, _, _, lo, hi = feature
    if kind in ("cha", "src_cap", "boiler_draw", "road_v"):
        return lo
    return hi


# ---------------------------------------------------------------------------
# Surrogate-plus-power model
# ---------------------------------------------------------------------------

def build_sp_model(case: CaseData, config: CaseConfig, scenario: HazardScenario,
                   heat_mlp: Mlp, transport_mlp: Mlp):
    """Power-network model with the heat and transport blocks replaced by
    embedded surrogates; returns (EmergencyModel, {"heat": var, "transport": var}).
    """
    heat_spec = boundary_spec("heat", case, config)
    trans_spec = boundary_spec("transport", case, config)
    if heat_mlp.spec_digest and heat_mlp.spec_digest != heat_spec.digest():
        raise SurrogateError("heat surrogate was trained on a different boundary")
    if transport_mlp.spec_digest and \
            transport_mlp.spec_digest != trans_spec.digest():
        raise SurrogateError("transport surrogate was trained on a different boundary")

    em = emergency.build(case, config, scenario, mode="sp")
    m = em.milp
    scenario_r = scenario.reinforced(config.preventive_reinforce)

    heat_vars = []
    for kind, sid, t, lo, hi in heat_spec.features:
        if kind == "boiler_draw":
            heat_vars.append(em.boiler_draw[(sid, t)])
        else:
            heat_vars.append(em.src_cap[(sid, t)])

    trans_vars = []
    t_max = case.time.t_max
    for kind, sid, t, lo, hi in trans_spec.features:
        if kind == "cha":
            trans_vars.append(em.cha_power[(sid, t)])
        elif kind == "dis":
            trans_vars.append(em.dis_power[(sid, t)])
        elif kind == "theta":
            trans_vars.append(em.theta[(sid, t)])
        elif kind == "xi":
            trans_vars.append(em.xi[(sid, t)])
        else:   # road_v summary: scenario constant
            mean_v = sum(scenario_r.v(sid, tt) for tt in range(t_max)) / t_max
            mean_v = min(1.0, max(ROAD_V_FLOOR, mean_v))
            trans_vars.append(m.add_var(mean_v, mean_v, name=f"roadv[{sid}]"))

    def bounds_for(mlp, var_ids):
        lo = np.array([m.variables[v].lower for v in var_ids])
        hi = np.array([m.variables[v].upper for v in var_ids])
        return neuron_bounds(mlp, lo, hi)

    y_heat = embed(m, heat_mlp, heat_vars, bounds_for(heat_mlp, heat_vars), "hs")
    y_trans = embed(m, transport_mlp, trans_vars,
                    bounds_for(transport_mlp, trans_vars), "ts")

    # a sub-network objective cannot leave its trained label range (0 at full
    # degradation up to the nominal optimum); forbidding boundary points where
    # the net extrapolates past that keeps the optimizer out of regions the
    # surrogate never saw
    for y_var, mlp_ in ((y_heat, heat_mlp), (y_trans, transport_mlp)):
        m.add_constraint([(y_var, 1.0)], "<=",
                         mlp_.out_shift + 1.05 * mlp_.out_scale, "sp_cap_hi")
        m.add_constraint([(y_var, 1.0)], ">=",
                         mlp_.out_shift - 0.05 * mlp_.out_scale, "sp_cap_lo")

    terms = []
    for t_terms in em.power_terms.values():
        terms.extend(t_terms)
    terms.append((y_heat, 1.0))
    terms.append((y_trans, 1.0))
    m.set_objective("max", terms)
    return em, {"heat": y_heat, "transport": y_trans}


def sp_objective(case: CaseData, config: CaseConfig, scenario: HazardScenario,
                 heat_mlp: Mlp, transport_mlp: Mlp,
                 solver_cfg=None) -> float:
    """Objective value of the surrogate-plus-power model for one scenario."""
    em, _ = build_sp_model(case, config, scenario, heat_mlp, transport_mlp)
    sol = milp.solve(em.milp, solver_cfg or milp.SolverConfig(rel_gap=0.0))
    if sol.status not in ("optimal", "gap_limit"):
        raise SurrogateError(f"sp model solve failed: {sol.status}")
    return sol.objective_value
