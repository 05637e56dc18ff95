"""Branch vulnerability ranking: DM, OP, OS, HA and SP methods.

All methods score a power branch by how much reinforcing it (making it immune
for the whole horizon) would improve the expected objective, or by a cheaper
stand-in for that quantity:

- DM re-simulates the full coupled model per branch (the benchmark),
- OP re-simulates a power-only model with idealized repair,
- OS reads the effect off a scenario-to-objective surrogate,
- HA allocates per-period losses equally over concurrently failed branches,
- SP re-simulates the surrogate-plus-power model.

Paired scenario lists (common random numbers) make the comparisons exact; a
branch that never fails re-uses the cached unreinforced solve, which is
mathematically identical and considerably faster.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import emergency, milp, surrogate
from .core import CaseConfig, CaseData
from .hazard import HazardScenario, null_scenario
from .surrogate import BoundarySpec, Mlp, TrainingSet, forward, train


class RankingError(Exception):
    pass


@dataclass
class VulnerabilityRanking:
    method: str
    obj_base: float                    # expected objective without reinforcement
    scores_abs: dict                   # branch id -> U_abs
    scores_rel: dict                   # branch id -> U_rel (None when undefined)
    order: list                        # branch ids, descending U_abs, ties by id
    wall_time: float
    seeds: list

    def top(self, k: int) -> list:
        return self.order[:k]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "obj_base": self.obj_base,
            "scores_abs": self.scores_abs,
            "scores_rel": self.scores_rel,
            "order": self.order,
            "wall_time": self.wall_time,
            "seeds": [list(s) for s in self.seeds],
        }


def utility(obj_b: float, obj_0: float) -> tuple:
    """Reinforcement utility: absolute difference and the ratio to the base."""
    u_abs = obj_b - obj_0
    u_rel = u_abs / obj_0 if abs(obj_0) > 1e-12 else None
    return u_abs, u_rel


def _ranked_order(scores: dict) -> list:
    return [b for b, _ in sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))]


def _finalize(method, obj_base, scores_abs, t0, scenarios) -> VulnerabilityRanking:
    scores_rel = {}
    for b, s in scores_abs.items():
        scores_rel[b] = s / obj_base if abs(obj_base) > 1e-12 else None
    return VulnerabilityRanking(
        method=method,
        obj_base=obj_base,
        scores_abs=scores_abs,
        scores_rel=scores_rel,
        order=_ranked_order(scores_abs),
        wall_time=time.perf_counter() - t0,
        seeds=[(s.seed, s.index) for s in scenarios],
    )


# ---------------------------------------------------------------------------
# objective evaluation backends
# ---------------------------------------------------------------------------

def _objective_job(args) -> float:
    case, config, scenario, reinforce, mode, solver_cfg, mlps = args
    scenario = scenario.reinforced(reinforce) if reinforce else scenario
    if mode == "sp":
        heat_mlp, trans_mlp = mlps
        return surrogate.sp_objective(case, config, scenario, heat_mlp, trans_mlp,
                                      solver_cfg)
    em = emergency.build(case, config, scenario, mode=mode)
    sol = emergency.solve_model(em, solver_cfg)
    if sol.status not in ("optimal", "gap_limit"):
        raise emergency.SimulationError(scenario.index,
                                        f"solver returned {sol.status}")
    return sol.objective_value


def _batch(jobs, workers):
    if workers <= 1:
        return [_objective_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_objective_job, jobs, chunksize=1))


def _reinforcement_scan(method, case, config, scenarios, mode, solver_cfg,
                        mlps=None, workers: int = 1) -> VulnerabilityRanking:
    """Shared DM/OP/SP driver: per-branch re-simulation with result caching."""
    t0 = time.perf_counter()
    base_vals = _batch([(case, config, s, (), mode, solver_cfg, mlps)
                        for s in scenarios], workers)
    obj_0 = sum(base_vals) / len(base_vals)

    scores = {}
    for br in sorted(case.power.branches, key=lambda b: b.id):
        affected = [i for i, s in enumerate(scenarios)
                    if br.id in s.branch_breaks
                    and br.id not in config.preventive_reinforce]
        if not affected:
            scores[br.id] = 0.0
            continue
        jobs = [(case, config, scenarios[i], (br.id,), mode, solver_cfg, mlps)
                for i in affected]
        vals = _batch(jobs, workers)
        total = sum(base_vals)
        for i, v in zip(affected, vals):
            total += v - base_vals[i]
        scores[br.id], _ = utility(total / len(scenarios), obj_0)
    return _finalize(method, obj_0, scores, t0, scenarios)


def rank_dm(case: CaseData, config: CaseConfig, scenarios: list[HazardScenario],
            solver_cfg=None, workers: int = 1) -> VulnerabilityRanking:
    """Direct method: full coupled re-simulation per branch (the benchmark)."""
    if not scenarios:
        raise RankingError("rank_dm needs a non-empty scenario list")
    return _reinforcement_scan("DM", case, config, scenarios, "full",
                               solver_cfg, workers=workers)


def rank_op(case: CaseData, config: CaseConfig, scenarios: list[HazardScenario],
            solver_cfg=None, workers: int = 1) -> VulnerabilityRanking:
    """Power-network-only assessment: heat and transport are invisible."""
    if not scenarios:
        raise RankingError("rank_op needs a non-empty scenario list")
    return _reinforcement_scan("OP", case, config, scenarios, "power",
                               solver_cfg, workers=workers)


def rank_sp(case: CaseData, config: CaseConfig, scenarios: list[HazardScenario],
            heat_mlp: Mlp, transport_mlp: Mlp, solver_cfg=None,
            workers: int = 1) -> VulnerabilityRanking:
    """Surrogates-with-power-model assessment on the embedded MILPs."""
    if not scenarios:
        raise RankingError("rank_sp needs a non-empty scenario list")
    return _reinforcement_scan("SP", case, config, scenarios, "sp", solver_cfg,
                               mlps=(heat_mlp, transport_mlp), workers=workers)


# ---------------------------------------------------------------------------
# OS: scenario-to-objective surrogate
# ---------------------------------------------------------------------------

def scenario_features(case: CaseData, scenario: HazardScenario) -> np.ndarray:
    """Per-branch (broken, break time, repair time) triples plus road summaries."""
    t_max = case.time.t_max
    feats = []
    for br in sorted(case.power.branches, key=lambda b: b.id):
        brk = scenario.branch_breaks.get(br.id)
        if brk is None:
            feats.extend([0.0, 1.0, 0.0])
        else:
            t_break, t_rep = brk
            feats.extend([1.0, t_break / t_max, min(1.0, t_rep / t_max)])
    for road in sorted(case.transport.roads, key=lambda r: r.id):
        feats.append(sum(scenario.v(road.id, t) for t in range(t_max)) / t_max)
    return np.array(feats)


def _os_spec(case: CaseData) -> BoundarySpec:
    rows = []
    for br in sorted(case.power.branches, key=lambda b: b.id):
        rows.append(("broken", br.id, -1, 0.0, 1.0))
        rows.append(("t_break", br.id, -1, 0.0, 1.0))
        rows.append(("t_repair", br.id, -1, 0.0, 1.0))
    for road in sorted(case.transport.roads, key=lambda r: r.id):
        rows.append(("road_v", road.id, -1, 0.0, 1.0))
    return BoundarySpec("os_scenario", tuple(rows))


def rank_os(case: CaseData, config: CaseConfig, scenarios: list[HazardScenario],
            training_results: list | None = None, seed: int = 0,
            solver_cfg=None, workers: int = 1, arch=(16, 16),
            epochs: int = 4000, step: float = 0.05) -> VulnerabilityRanking:
    """Only-surrogate assessment via counterfactual un-breaking.

    ``training_results`` is a list of (scenario, total objective) pairs from
    full-system runs; when omitted, the given scenarios are solved once to
    create it.  Needs at least 10 rows per feature, otherwise refuses.
    """
    if not scenarios:
        raise RankingError("rank_os needs a non-empty scenario list")
    t0 = time.perf_counter()
    if training_results is None:
        vals = _batch([(case, config, s, (), "full", solver_cfg, None)
                       for s in scenarios], workers)
        training_results = list(zip(scenarios, vals))

    spec = _os_spec(case)
    min_rows = 10 * spec.dim
    if len(training_results) < min_rows:
        raise RankingError(
            f"OS needs at least {min_rows} training rows "
            f"(10 x {spec.dim} features), got {len(training_results)}")

    X = np.vstack([scenario_features(case, s) for s, _ in training_results])
    y = np.array([v for _, v in training_results])
    ts = TrainingSet(spec, X, y, np.zeros(len(y), dtype=bool), seed)
    mlp = train(ts, arch=arch, epochs=epochs, step=step, seed=seed)

    base_vals = [v for _, v in training_results[:len(scenarios)]]
    obj_0 = sum(base_vals) / len(base_vals)

    branch_ids = sorted(br.id for br in case.power.branches)
    scores = {}
    for j, br_id in enumerate(branch_ids):
        diffs = []
        for s in scenarios:
            feats = scenario_features(case, s)
            pred_asis = forward(mlp, feats)
            if br_id in s.branch_breaks:
                fixed = feats.copy()
                fixed[3 * j:3 * j + 3] = (0.0, 1.0, 0.0)
                diffs.append(forward(mlp, fixed) - pred_asis)
            else:
                diffs.append(0.0)
        scores[br_id] = sum(diffs) / len(diffs)
    return _finalize("OS", obj_0, scores, t0, scenarios)


# ---------------------------------------------------------------------------
# HA: heuristic loss allocation
# ---------------------------------------------------------------------------

def rank_ha(case: CaseData, config: CaseConfig, scenarios: list[HazardScenario],
            solver_cfg=None, workers: int = 1) -> VulnerabilityRanking:
    """One Monte Carlo pass; each period's loss is split equally among the
    branches in a failed state during that period."""
    if not scenarios:
        raise RankingError("rank_ha needs a non-empty scenario list")
    t0 = time.perf_counter()
    from .montecarlo import run as mc_run
    report = mc_run(case, config, scenarios, solver_cfg, workers=workers)
    t_max = case.time.t_max
    totals = {br.id: 0.0 for br in case.power.branches}
    for res in report.results:
        for t in range(t_max):
            loss = sum(report.baseline[k][t] - res.period_values[k][t]
                       for k in emergency.NETWORKS)
            if loss <= 1e-9:
                continue
            failed = []
            for br_id, tl in res.repair_timeline.items():
                closed_at = tl["closed_at"]
                if tl["t_break"] <= t and (closed_at is None or t < closed_at):
                    failed.append(br_id)
            if not failed:
                continue
            share = loss / len(failed)
            for br_id in failed:
                totals[br_id] += share
    n = len(scenarios)
    scores = {b: v / n for b, v in totals.items()}
    return _finalize("HA", report.expected["total"]["mean"], scores, t0, scenarios)


# ---------------------------------------------------------------------------
# comparison and reinforcement evaluation
# ---------------------------------------------------------------------------

def topk_accuracy(candidate: VulnerabilityRanking,
                  benchmark: VulnerabilityRanking, k: int) -> float:
    """Fraction of the benchmark's k most vulnerable branches found by the candidate."""
    if k > len(benchmark.order) or k > len(candidate.order):
        raise RankingError(f"k={k} exceeds the ranked branch count")
    if k < 1:
        raise RankingError("k must be at least 1")
    return len(set(candidate.top(k)) & set(benchmark.top(k))) / k


def evaluate_reinforcement(case: CaseData, config: CaseConfig,
                           scenarios: list[HazardScenario],
                           ranking: VulnerabilityRanking, k: int,
                           solver_cfg=None, workers: int = 1) -> float:
    """Expected-objective gain from jointly reinforcing the ranking's top k."""
    if k > len(ranking.order):
        raise RankingError(f"k={k} exceeds the ranked branch count")
    if k == 0:
        return 0.0
    chosen = tuple(ranking.top(k))
    base_vals = _batch([(case, config, s, (), "full", solver_cfg, None)
                        for s in scenarios], workers)
    reinf_vals = _batch([(case, config, s, chosen, "full", solver_cfg, None)
                         for s in scenarios], workers)
    return sum(reinf_vals) / len(reinf_vals) - sum(base_vals) / len(base_vals)
