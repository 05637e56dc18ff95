"""Typhoon wind and rainstorm fields, fragility curves, and scenario sampling.

The storm is described by a track (eye position, peak wind and rain per
period); component damage probabilities come from logistic fragility curves.
Scenarios are drawn by Latin hypercube sampling: one stratum per scenario per
random dimension (per-branch failure draw, per-branch repair-time draw,
per-road flood draw), mapped through inverse CDFs.  Everything is
deterministic for a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .core import CaseData, CaseError
from .util import dump_json, load_json

SCENARIO_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TyphoonTrack:
    center: tuple               # per-period (x, y) km
    v_max: tuple                # per-period peak wind m/s
    radius_max_wind: float      # km
    decay_exponent: float = 0.7
    rain_peak: tuple = ()       # per-period peak rain mm/h at the eye
    rain_radius: float = 25.0   # km

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(tuple(c) for c in self.center))
        object.__setattr__(self, "v_max", tuple(self.v_max))
        object.__setattr__(self, "rain_peak", tuple(self.rain_peak))
        if self.radius_max_wind <= 0 or self.rain_radius <= 0:
            raise CaseError(["typhoon track: radii must be positive"])
        if any(v < 0 for v in self.v_max):
            raise CaseError(["typhoon track: v_max must be non-negative"])


@dataclass(frozen=True)
class FragilityCurve:
    """Monotone logistic map from hazard intensity to failure probability.

    ``line_wind`` curves take wind speed (m/s); ``road_flood`` curves take
    accumulated water depth (mm) and additionally carry the road-performance
    shape parameters.
    """
    kind: str                    # "line_wind" or "road_flood"
    half: float                  # intensity of 50% failure probability
    steepness: float
    performance_floor: float = 0.25   # minimum road performance v > 0
    drainage_mm_h: float = 8.0        # linear drainage of accumulated water
    interrupt_below: float = 0.2      # road counts as interrupted when v < this

    def __post_init__(self):
        if self.kind not in ("line_wind", "road_flood"):
            raise CaseError([f"fragility curve: unknown kind {self.kind!r}"])
        if not (0 < self.performance_floor <= 1):
            raise CaseError(["fragility curve: performance_floor must be in (0, 1]"])


def failure_prob(curve: FragilityCurve, intensity: float) -> float:
    """Logistic failure probability, clamped to [0, 1]."""
    z = curve.steepness * (intensity - curve.half)
    if z > 60:
        return 1.0
    if z < -60:
        return 0.0
    return min(1.0, max(0.0, 1.0 / (1.0 + math.exp(-z))))


def wind_at(track: TyphoonTrack, loc: tuple, t: int) -> float:
    """Wind speed at (x, y) km: linear ramp inside the eyewall, power-law decay outside."""
    cx, cy = track.center[t]
    d = math.hypot(loc[0] - cx, loc[1] - cy)
    vmax = track.v_max[t]
    r = track.radius_max_wind
    if d <= r:
        return vmax * d / r
    return vmax * (r / d) ** track.decay_exponent


def rain_at(track: TyphoonTrack, loc: tuple, t: int) -> float:
    """Rain rate mm/h at (x, y): radial cone around the eye."""
    if t >= len(track.rain_peak):
        return 0.0
    cx, cy = track.center[t]
    d = math.hypot(loc[0] - cx, loc[1] - cy)
    return track.rain_peak[t] * max(0.0, 1.0 - d / track.rain_radius)


@dataclass(frozen=True)
class HazardScenario:
    """One sampled realization of attack states and road performance."""
    index: int
    seed: int
    t_max: int
    branch_breaks: dict                # branch id -> (t_break, t_repair)
    road_v: dict                       # road id -> per-period performance (0, 1]
    road_u: dict                       # road id -> per-period 0/1 interruption state

    def u(self, component: str, t: int) -> int:
        """Attack state: 0 attacked, 1 intact (branches stay attacked from t_break on)."""
        if component in self.branch_breaks:
            return 0 if t >= self.branch_breaks[component][0] else 1
        if component in self.road_u:
            return self.road_u[component][t]
        return 1

    def v(self, road: str, t: int) -> float:
        vs = self.road_v.get(road)
        return vs[t] if vs is not None else 1.0

    def reinforced(self, component_ids) -> "HazardScenario":
        """Copy with the named components made immune for the whole horizon."""
        ids = set(component_ids)
        return HazardScenario(
            self.index, self.seed, self.t_max,
            {b: br for b, br in self.branch_breaks.items() if b not in ids},
            {r: (tuple(1.0 for _ in vs) if r in ids else vs)
             for r, vs in self.road_v.items()},
            {r: (tuple(1 for _ in us) if r in ids else us)
             for r, us in self.road_u.items()})


def null_scenario(case: CaseData) -> HazardScenario:
    """Disaster-free scenario: everything intact, all road performance 1."""
    t_max = case.time.t_max
    ones_v = tuple(1.0 for _ in range(t_max))
    ones_u = tuple(1 for _ in range(t_max))
    return HazardScenario(-1, -1, t_max, {},
                          {r.id: ones_v for r in case.transport.roads},
                          {r.id: ones_u for r in case.transport.roads})


# ---------------------------------------------------------------------------
# Latin hypercube sampling
# ---------------------------------------------------------------------------

def _lhs_draws(rng: np.random.Generator, n: int, dims: int) -> np.ndarray:
    """One uniform draw per stratum per dimension; shape (n, dims)."""
    out = np.empty((n, dims))
    for d in range(dims):
        perm = rng.permutation(n)
        jitter = rng.random(n)
        out[:, d] = (perm + jitter) / n
    return out


def _branch_midpoint(case: CaseData, branch) -> tuple:
    buses = case.power.bus_map()
    a, b = buses[branch.from_bus], buses[branch.to_bus]
    return ((a.x + b.x) / 2, (a.y + b.y) / 2)


def _road_midpoint(case: CaseData, road) -> tuple:
    locs = case.transport.location_map()
    a, b = locs[road.a], locs[road.b]
    return ((a.x + b.x) / 2, (a.y + b.y) / 2)


def lhs_sample(case: CaseData, track: TyphoonTrack, curves: dict,
               n_scenarios: int, seed: int) -> list[HazardScenario]:
    """Sample ``n_scenarios`` hazard realizations by Latin hypercube sampling.

    ``curves`` maps curve kind to :class:`FragilityCurve`; a missing
    ``road_flood`` curve leaves roads unaffected.
    """
    if n_scenarios < 1:
        raise CaseError(["lhs_sample: n_scenarios must be at least 1"])
    t_max = case.time.t_max
    if len(track.center) < t_max or len(track.v_max) < t_max:
        raise CaseError(["typhoon track shorter than the simulation horizon"])

    branches = sorted(case.power.branches, key=lambda b: b.id)
    roads = sorted(case.transport.roads, key=lambda r: r.id)
    wind_curve = curves.get("line_wind")
    flood_curve = curves.get("road_flood")

    # survival curves are scenario-independent; compute once
    survival = {}
    for br in branches:
        if wind_curve is None:
            survival[br.id] = np.ones(t_max)
            continue
        mid = _branch_midpoint(case, br)
        probs = np.array([failure_prob(wind_curve, wind_at(track, mid, t))
                          for t in range(t_max)])
        survival[br.id] = np.cumprod(1.0 - probs)

    rain_series = {}
    for rd in roads:
        mid = _road_midpoint(case, rd)
        rain_series[rd.id] = np.array([rain_at(track, mid, t) for t in range(t_max)])

    rng = np.random.default_rng(seed)
    dims = 2 * len(branches) + len(roads)
    draws = _lhs_draws(rng, n_scenarios, dims)

    scenarios = []
    dt = case.time.delta_t
    for i in range(n_scenarios):
        breaks = {}
        for j, br in enumerate(branches):
            u_fail = draws[i, j]
            u_rep = draws[i, len(branches) + j]
            surv = survival[br.id]
            below = np.nonzero(surv < u_fail)[0]
            if below.size:
                t_break = int(below[0])
                breaks[br.id] = (t_break, int(br.repair_time.sample(u_rep)))
        road_v = {}
        road_u = {}
        for j, rd in enumerate(roads):
            if flood_curve is None:
                road_v[rd.id] = tuple(1.0 for _ in range(t_max))
                road_u[rd.id] = tuple(1 for _ in range(t_max))
                continue
            wet = 0.5 + draws[i, 2 * len(branches) + j]   # wetness multiplier
            acc = 0.0
            vs, us = [], []
            for t in range(t_max):
                inflow = rain_series[rd.id][t] * rd.flood_exposure * wet
                acc = max(0.0, acc + (inflow - flood_curve.drainage_mm_h) * dt)
                frac = failure_prob(flood_curve, acc) if acc > 0 else 0.0
                v = 1.0 - (1.0 - flood_curve.performance_floor) * frac
                vs.append(v)
                us.append(1 if v >= flood_curve.interrupt_below else 0)
            road_v[rd.id] = tuple(vs)
            road_u[rd.id] = tuple(us)
        scenarios.append(HazardScenario(i, seed, t_max, breaks, road_v, road_u))
    return scenarios


# ---------------------------------------------------------------------------
# Persistence (scenario replay, track files)
# ---------------------------------------------------------------------------

def scenarios_to_dict(scenarios: list[HazardScenario], seed: int) -> dict:
    return {
        "schema_version": SCENARIO_SCHEMA_VERSION,
        "seed": seed,
        "n": len(scenarios),
        "scenarios": [
            {
                "index": s.index,
                "seed": s.seed,
                "t_max": s.t_max,
                "branch_breaks": {k: list(v) for k, v in sorted(s.branch_breaks.items())},
                "road_v": {k: list(v) for k, v in sorted(s.road_v.items())},
                "road_u": {k: list(v) for k, v in sorted(s.road_u.items())},
            }
            for s in scenarios
        ],
    }


def dump_scenarios(scenarios: list[HazardScenario], seed: int, path) -> None:
    dump_json(scenarios_to_dict(scenarios, seed), path)


def load_scenarios(path) -> tuple[list[HazardScenario], int]:
    d = load_json(path)
    if d.get("schema_version") != SCENARIO_SCHEMA_VERSION:
        raise CaseError([f"{path}: unsupported scenario schema"])
    out = []
    for s in d["scenarios"]:
        out.append(HazardScenario(
            s["index"], s["seed"], s["t_max"],
            {k: tuple(v) for k, v in s["branch_breaks"].items()},
            {k: tuple(v) for k, v in s["road_v"].items()},
            {k: tuple(v) for k, v in s["road_u"].items()}))
    return out, d["seed"]


def load_track(path) -> tuple[TyphoonTrack, dict]:
    """Read a track file: the storm description plus its fragility curves."""
    d = load_json(path)
    problems = []
    try:
        track = TyphoonTrack(
            center=d["center"], v_max=d["v_max"],
            radius_max_wind=d["radius_max_wind"],
            decay_exponent=d.get("decay_exponent", 0.7),
            rain_peak=d.get("rain_peak", ()), rain_radius=d.get("rain_radius", 25.0))
    except KeyError as exc:
        raise CaseError([f"track file missing field {exc}"])
    curves = {}
    for kind, cd in d.get("fragility", {}).items():
        curves[kind] = FragilityCurve(
            kind=kind, half=cd["half"], steepness=cd["steepness"],
            performance_floor=cd.get("performance_floor", 0.25),
            drainage_mm_h=cd.get("drainage_mm_h", 8.0),
            interrupt_below=cd.get("interrupt_below", 0.2))
    if problems:
        raise CaseError(problems)
    return track, curves


def dump_track(track: TyphoonTrack, curves: dict, path) -> None:
    d = {
        "center": [list(c) for c in track.center],
        "v_max": list(track.v_max),
        "radius_max_wind": track.radius_max_wind,
        "decay_exponent": track.decay_exponent,
        "rain_peak": list(track.rain_peak),
        "rain_radius": track.rain_radius,
        "fragility": {
            kind: {
                "half": c.half,
                "steepness": c.steepness,
                "performance_floor": c.performance_floor,
                "drainage_mm_h": c.drainage_mm_h,
                "interrupt_below": c.interrupt_below,
            }
            for kind, c in sorted(curves.items())
        },
    }
    dump_json(d, path)
