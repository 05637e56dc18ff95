"""Monte Carlo aggregation, worker determinism, and decision utilities."""

import pytest

from gridstorm.core import CaseConfig
from gridstorm.hazard import FragilityCurve, TyphoonTrack, lhs_sample, null_scenario
from gridstorm import montecarlo

from conftest import make_toy_case

CFG = CaseConfig(soc_levels=4, soc_min_final=1, delay_max=2)


def toy_scenarios(case, n=6, seed=5):
    track = TyphoonTrack(
        center=tuple((4.0 + 2.0 * t, 0.0) for t in range(case.time.t_max)),
        v_max=tuple(50.0 for _ in range(case.time.t_max)),
        radius_max_wind=8.0,
        rain_peak=tuple(30.0 for _ in range(case.time.t_max)),
        rain_radius=20.0)
    curves = {"line_wind": FragilityCurve("line_wind", half=42.0, steepness=0.2),
              "road_flood": FragilityCurve("road_flood", half=70.0, steepness=0.05)}
    return lhs_sample(case, track, curves, n, seed)


def test_single_disaster_free_scenario_all_ones(toy_case):
    report = montecarlo.run(toy_case, CFG, [null_scenario(toy_case)])
    for net, curve in report.indicator_curves.items():
        assert curve["mean"] == [1.0] * toy_case.time.t_max
        assert curve["q10"] == curve["q90"] == curve["mean"]


def test_duplicated_scenario_zero_std(toy_case):
    scenarios = toy_scenarios(toy_case, n=4)
    sc = scenarios[1]
    report = montecarlo.run(toy_case, CFG, [sc] * 5)
    single = montecarlo.run(toy_case, CFG, [sc])
    assert report.expected["total"]["std"] == pytest.approx(0.0, abs=1e-9)
    assert report.expected["total"]["mean"] == pytest.approx(
        single.expected["total"]["mean"], abs=1e-8)


def test_worker_count_does_not_change_report(toy_case):
    scenarios = toy_scenarios(toy_case, n=6)
    r1 = montecarlo.run(toy_case, CFG, scenarios, workers=1, keep_results=False)
    r4 = montecarlo.run(toy_case, CFG, scenarios, workers=4, keep_results=False)
    assert r1.to_dict() == r4.to_dict()


def test_report_mean_equals_single_runs(toy_case):
    scenarios = toy_scenarios(toy_case, n=5)
    report = montecarlo.run(toy_case, CFG, scenarios)
    singles = [montecarlo.run(toy_case, CFG, [s]).expected["total"]["mean"]
               for s in scenarios]
    assert report.expected["total"]["mean"] == pytest.approx(
        sum(singles) / len(singles), abs=1e-8)


def test_decision_utility_endpoints(toy_case):
    scenarios = toy_scenarios(toy_case, n=5)
    base = CaseConfig(repair_crew="off", soc_levels=4, soc_min_final=1, delay_max=2)
    # variant identical to base -> 0%; reinforcing everything -> 100%
    everything = tuple(br.id for br in toy_case.power.branches) + \
        tuple(r.id for r in toy_case.transport.roads)
    variants = {
        "same": base,
        "all_reinforced": CaseConfig(repair_crew="off", soc_levels=4,
                                     soc_min_final=1, delay_max=2,
                                     preventive_reinforce=everything),
    }
    table = montecarlo.decision_utility(toy_case, base, variants, scenarios)
    assert table["extreme_weather_loss"] > 0
    assert table["variants"]["same"]["loss_reduction_pct"] == pytest.approx(0.0, abs=1e-6)
    assert table["variants"]["all_reinforced"]["loss_reduction_pct"] == pytest.approx(
        100.0, abs=1e-6)


def test_decision_utility_zero_loss_is_undefined(toy_case):
    base = CaseConfig(soc_levels=4, soc_min_final=1, delay_max=2)
    scenarios = [null_scenario(toy_case)]
    table = montecarlo.decision_utility(toy_case, base, {"v": base}, scenarios)
    assert table["variants"]["v"]["loss_reduction_pct"] is None


def test_utility_matches_hand_computation_from_reports(toy_case):
    scenarios = toy_scenarios(toy_case, n=5)
    base = CaseConfig(repair_crew="off", soc_levels=4, soc_min_final=1, delay_max=2)
    variant = CaseConfig(repair_crew="off", topology_reconfig=True, soc_levels=4,
                         soc_min_final=1, delay_max=2)
    rep_base = montecarlo.run(toy_case, base, scenarios)
    rep_var = montecarlo.run(toy_case, variant, scenarios)
    free = montecarlo.disaster_free_objective(toy_case, base)
    expect_pct = 100.0 * (rep_var.expected["total"]["mean"]
                          - rep_base.expected["total"]["mean"]) / \
        (free - rep_base.expected["total"]["mean"])
    table = montecarlo.decision_utility(toy_case, base, {"reconf": variant},
                                        scenarios)
    assert table["variants"]["reconf"]["loss_reduction_pct"] == pytest.approx(
        expect_pct, abs=1e-8)


def test_case_presets_shape(toy_case):
    presets = montecarlo.case_presets(toy_case, CFG)
    assert set(presets) == {f"case{i}" for i in range(1, 9)}
    assert presets["case1"].repair_crew == "off"
    assert presets["case2"].repair_crew == "ideal"
    assert presets["case4"].preventive_reinforce
    assert presets["case5"].topology_reconfig
    assert presets["case6"].ev_power_supply
    assert not presets["case7"].initial_fuel_sufficient
    assert presets["case8"].fuel_transport
