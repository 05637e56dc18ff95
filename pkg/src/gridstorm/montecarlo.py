"""Monte Carlo risk assessment: scenario batches, reports, decision utilities.

Scenario solves are independent and may run in parallel; the reduction is a
deterministic fold in scenario-index order, so reports are identical for any
worker count.  Comparisons across configurations always reuse the same
scenario list (common random numbers), which both reduces variance and makes
the per-scenario dominance properties checkable.
"""

from __future__ import annotations

import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .core import CaseConfig, CaseData
from .emergency import NETWORKS, ScenarioResult, simulate
from .hazard import HazardScenario, null_scenario
from .milp import SolverConfig


@dataclass
class RiskReport:
    n_scenarios: int
    scenario_seeds: list                   # (seed, index) pairs for replay
    expected: dict                         # name -> {"mean": .., "std": ..}
    indicator_curves: dict                 # network -> {"mean"/"q10"/"q90": [..]}
    behavior_means: dict                   # edge type -> per-period mean count
    baseline: dict                         # disaster-free per-period values
    objectives: list                       # per-scenario total objectives
    results: list = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_scenarios": self.n_scenarios,
            "scenario_seeds": [list(s) for s in self.scenario_seeds],
            "expected": self.expected,
            "indicator_curves": self.indicator_curves,
            "behavior_means": self.behavior_means,
            "baseline": self.baseline,
            "objectives": self.objectives,
        }


def _solve_one(args) -> ScenarioResult:
    case, config, scenario, solver_cfg, baseline = args
    return simulate(case, config, scenario, solver_cfg, baseline=baseline)


def _mean_std(xs):
    mean = sum(xs) / len(xs)
    std = math.sqrt(sum((x - mean) ** 2 for x in xs) / len(xs)) if len(xs) > 1 else 0.0
    return {"mean": mean, "std": std}


def _quantile(sorted_xs, q):
    # linear interpolation between order statistics
    if len(sorted_xs) == 1:
        return sorted_xs[0]
    pos = q * (len(sorted_xs) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(sorted_xs) - 1)
    frac = pos - lo
    return sorted_xs[lo] * (1 - frac) + sorted_xs[hi] * frac


def run(case: CaseData, config: CaseConfig, scenarios: list[HazardScenario],
        solver_cfg: SolverConfig | None = None, workers: int = 1,
        keep_results: bool = True) -> RiskReport:
    """Solve every scenario and aggregate means, spreads and curves.

    Any scenario solve failure aborts; partially-computed results are attached
    to the raised error for diagnostics.
    """
    if not scenarios:
        raise ValueError("run() needs a non-empty scenario list")
    baseline = simulate(case, config, null_scenario(case), solver_cfg,
                        _skip_normalization=True).period_values

    jobs = [(case, config, s, solver_cfg, baseline) for s in scenarios]
    results: list[ScenarioResult] = []
    if workers <= 1:
        for job in jobs:
            results.append(_solve_one(job))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_solve_one, jobs, chunksize=1))

    t_max = case.time.t_max
    expected = {}
    for name, getter in (
            ("total", lambda r: r.objective_total),
            ("power", lambda r: r.objective_power),
            ("heat", lambda r: r.objective_heat),
            ("transport", lambda r: r.objective_transport)):
        expected[name] = _mean_std([getter(r) for r in results])

    curves = {}
    for net in NETWORKS:
        mean, q10, q90 = [], [], []
        for t in range(t_max):
            vals = sorted(r.indicators[net][t] for r in results)
            mean.append(sum(vals) / len(vals))
            q10.append(_quantile(vals, 0.10))
            q90.append(_quantile(vals, 0.90))
        curves[net] = {"mean": mean, "q10": q10, "q90": q90}

    behavior = {}
    for kind in results[0].behavior_counts:
        behavior[kind] = [
            sum(r.behavior_counts[kind][t] for r in results) / len(results)
            for t in range(t_max)]

    return RiskReport(
        n_scenarios=len(results),
        scenario_seeds=[(s.seed, s.index) for s in scenarios],
        expected=expected,
        indicator_curves=curves,
        behavior_means=behavior,
        baseline=baseline,
        objectives=[r.objective_total for r in results],
        results=results if keep_results else [],
    )


def disaster_free_objective(case: CaseData, config: CaseConfig,
                            solver_cfg: SolverConfig | None = None) -> float:
    res = simulate(case, config, null_scenario(case), solver_cfg,
                   _skip_normalization=True)
    return res.objective_total


def decision_utility(case: CaseData, base_config: CaseConfig,
                     variant_configs: dict, scenarios: list[HazardScenario],
                     solver_cfg: SolverConfig | None = None,
                     workers: int = 1) -> dict:
    """Loss-reduction table of each decision variant against the base config.

    For each variant: 100 * (E[obj_variant] - E[obj_base]) /
    (obj_disaster_free - E[obj_base]).  A zero extreme-weather loss makes the
    percentage undefined (None), not an error.
    """
    base_report = run(case, base_config, scenarios, solver_cfg, workers,
                      keep_results=False)
    e_base = base_report.expected["total"]["mean"]
    e_free = disaster_free_objective(case, base_config, solver_cfg)
    denom = e_free - e_base
    table = {}
    for name, cfg in variant_configs.items():
        rep = run(case, cfg, scenarios, solver_cfg, workers, keep_results=False)
        e_var = rep.expected["total"]["mean"]
        entry = {
            "expected_objective": e_var,
            "loss_reduction_abs": e_var - e_base,
            "loss_reduction_pct": (100.0 * (e_var - e_base) / denom
                                   if denom > 1e-9 else None),
        }
        table[name] = entry
    return {
        "base_expected": e_base,
        "disaster_free": e_free,
        "extreme_weather_loss": denom,
        "variants": table,
    }


def case_presets(case: CaseData, base: CaseConfig | None = None) -> dict:
    """The eight named emergency-decision combinations used for comparisons.

    Preventive reinforcement (case4) picks the lexicographically first third
    of branches and roads; the selection is deterministic and documented
    rather than random.
    """
    b = base or CaseConfig()
    common = dict(soc_levels=b.soc_levels, soc_min_final=b.soc_min_final,
                  path_k=b.path_k, delay_max=b.delay_max)
    branches = sorted(br.id for br in case.power.branches)
    roads = sorted(r.id for r in case.transport.roads)
    reinforce = tuple(branches[:max(1, len(branches) // 3)]
                      + roads[:max(1, len(roads) // 3)])
    return {
        "case1": CaseConfig(repair_crew="off", **common),
        "case2": CaseConfig(repair_crew="ideal", **common),
        "case3": CaseConfig(repair_crew="real", **common),
        "case4": CaseConfig(repair_crew="real", preventive_reinforce=reinforce,
                            **common),
        "case5": CaseConfig(repair_crew="real", topology_reconfig=True, **common),
        "case6": CaseConfig(repair_crew="real", ev_power_supply=True, **common),
        "case7": CaseConfig(repair_crew="real", initial_fuel_sufficient=False,
                            **common),
        "case8": CaseConfig(repair_crew="real", initial_fuel_sufficient=False,
                            fuel_transport=True, **common),
    }
