"""Desk-scale tutorial case: 7 buses, 4 heat nodes, 6 locations, 24 hours.

The system is laid out on a ~25 km square.  Bus b7 hosts the electric boiler
that covers the larger share of the heat demand, so its feeder (b6:b7) is
far more valuable to the coupled system than its own electric load suggests;
a normally-open tie (b4:b7) gives reconfiguration something to do, and a
diesel generator at b4 with a fuel drop-off point exercises fuel logistics.
All numbers are invented for this bundle; run ``python -m gridstorm.tutorial
<dir>`` to regenerate the shipped files.
"""

from __future__ import annotations

import sys
from pathlib import Path

from .core import (
    Branch,
    Bus,
    CaseData,
    ChargingStation,
    Coupling,
    DemandEntry,
    ElectricHeating,
    FleetInit,
    FuelDepot,
    FuelLink,
    FuelNode,
    Generator,
    HeatGrid,
    HeatNode,
    HeatSource,
    Location,
    Pipe,
    PowerGrid,
    RepairDepot,
    RepairDist,
    Road,
    TimeGrid,
    TransportGrid,
    save_case,
    validate_case,
)
from .hazard import FragilityCurve, TyphoonTrack, dump_track

T_MAX = 24

# mild morning/evening shoulders around a daytime plateau
DAY_PROFILE = (0.75, 0.72, 0.70, 0.70, 0.72, 0.78, 0.85, 0.92, 0.98, 1.00,
               1.00, 0.98, 0.96, 0.96, 0.97, 1.00, 1.00, 0.98, 0.95, 0.92,
               0.88, 0.84, 0.80, 0.77)

HEAT_PROFILE = (0.95, 0.97, 1.00, 1.00, 0.98, 0.95, 0.90, 0.82, 0.75, 0.70,
                0.68, 0.66, 0.66, 0.68, 0.70, 0.75, 0.80, 0.86, 0.90, 0.94,
                0.96, 0.98, 0.98, 0.96)


def make_tutorial_case() -> CaseData:
    power = PowerGrid(
        buses=(
            Bus("b1", 0.0, 0.0, None, x=2.0, y=2.0, location="g1"),
            Bus("b2", 5.0, 2.0, DAY_PROFILE, x=6.0, y=6.0, location="g2"),
            Bus("b3", 10.0, 8.0, DAY_PROFILE, x=10.0, y=10.0, location="g3"),
            Bus("b4", 14.0, 6.0, DAY_PROFILE, x=14.0, y=14.0, location="g4"),
            Bus("b5", 8.0, 4.0, DAY_PROFILE, x=6.0, y=14.0, location="g5"),
            Bus("b6", 9.0, 5.0, DAY_PROFILE, x=10.0, y=18.0, location="g5"),
            Bus("b7", 6.0, 3.0, DAY_PROFILE, x=14.0, y=22.0, location="g6"),
        ),
        branches=(
            Branch("b1:b2", "b1", "b2", 0.0020, 0.0040, capacity=35.0,
                   repair_need=1.0, repair_time=RepairDist("uniform_int", 1, 2)),
            Branch("b2:b3", "b2", "b3", 0.0025, 0.0050, capacity=24.0,
                   repair_need=1.0, repair_time=RepairDist("uniform_int", 1, 2)),
            Branch("b3:b4", "b3", "b4", 0.0030, 0.0060, capacity=16.0,
                   repair_need=1.0, repair_time=RepairDist("uniform_int", 2, 3)),
            Branch("b2:b5", "b2", "b5", 0.0025, 0.0050, capacity=18.0,
                   repair_need=1.0, repair_time=RepairDist("uniform_int", 1, 2)),
            Branch("b5:b6", "b5", "b6", 0.0030, 0.0060, capacity=14.0,
                   repair_need=1.0, repair_time=RepairDist("uniform_int", 2, 4)),
            Branch("b6:b7", "b6", "b7", 0.0035, 0.0070, capacity=10.0,
                   repair_need=2.0, repair_time=RepairDist("uniform_int", 4, 6)),
            Branch("b4:b7", "b4", "b7", 0.0035, 0.0070, capacity=10.0,
                   repair_need=1.0, repair_time=RepairDist("uniform_int", 2, 3),
                   normally_closed=False),
        ),
        generators=(
            Generator("grid", "b1", p_max=45.0),
            Generator("dg", "b4", p_max=5.0, fuel_rate=1.0, fuel_stock=300.0,
                      fuel_stock_scarce=10.0),
        ),
        substation="b1",
        voltage_bounds=(0.94, 1.06),
        s_base=10.0,
        reactive_ratio=0.3,
    )

    heat = HeatGrid(
        nodes=(
            HeatNode("h1", kind="source"),
            HeatNode("h2", kind="load", importance=16.0, peak_load=6.0,
                     load_profile=HEAT_PROFILE),
            HeatNode("h3", kind="load", importance=12.0, peak_load=4.0,
                     load_profile=HEAT_PROFILE),
            HeatNode("h4", kind="source"),
        ),
        pipes=(
            Pipe("h1:h2", "h1", "h2", capacity=9.0, loss_fraction=0.01, length=2.0),
            Pipe("h4:h3", "h4", "h3", capacity=7.0, loss_fraction=0.01, length=2.0),
            Pipe("h2:h3", "h2", "h3", capacity=5.0, loss_fraction=0.01, length=3.0),
        ),
        sources=(
            HeatSource("hsrc_fuel", "h1", h_max=4.5, driver="fuel", fuel_rate=0.8,
                       fuel_stock=400.0, fuel_stock_scarce=15.0),
            HeatSource("hsrc_boiler", "h4", h_max=7.0, driver="electric_boiler"),
        ),
    )

    transport = TransportGrid(
        locations=(
            Location("g1", 2.0, 2.0), Location("g2", 6.0, 6.0),
            Location("g3", 10.0, 10.0), Location("g4", 14.0, 14.0),
            Location("g5", 8.0, 16.0), Location("g6", 14.0, 22.0),
        ),
        roads=(
            Road("r1", "g1", "g2", travel_time=1, length=6.0, flood_exposure=0.8),
            Road("r2", "g2", "g3", travel_time=1, length=6.0, flood_exposure=1.0),
            Road("r3", "g3", "g4", travel_time=1, length=6.0, flood_exposure=1.3),
            Road("r4", "g2", "g5", travel_time=1, length=7.0, flood_exposure=0.9),
            Road("r5", "g5", "g6", travel_time=2, length=9.0, flood_exposure=1.5),
            Road("r6", "g4", "g6", travel_time=1, length=8.0, flood_exposure=1.2),
            Road("r7", "g3", "g5", travel_time=1, length=5.0, flood_exposure=1.0),
        ),
        charging_stations=(
            ChargingStation("f1", "g3", "b3", station_cap=3.0),
            ChargingStation("f2", "g5", "b6", station_cap=3.0),
        ),
        fuel_nodes=(FuelNode("fn_dg", "g4"), FuelNode("fn_heat", "g2")),
        fuel_depots=(FuelDepot("fd1", "g1", stock=400.0, stock_scarce=30.0),),
        repair_depots=(RepairDepot("rd1", "g1", crews=2),),
        fleet_size=6,
        fleet_init=(FleetInit("g2", 3, 2), FleetInit("g5", 3, 2)),
        demand=tuple(
            DemandEntry(o, d, t, count, 3.0, 0.05, 0.8)
            for o, d, count, periods in (
                ("g2", "g3", 1.0, (7, 9, 11, 13, 15, 17)),
                ("g3", "g4", 1.0, (8, 12, 16)),
                ("g5", "g3", 1.0, (7, 10, 14, 18)),
                ("g1", "g2", 1.0, (8, 13, 18)),
                ("g4", "g6", 1.0, (9, 15)),
            )
            for t in periods
        ),
        charge_power=0.5,
        discharge_power=0.5,
        fuel_capacity=15.0,
        km_per_soc_level=12.0,
    )

    coupling = Coupling(
        electric_heating=(ElectricHeating("b7", "h4", conversion=1.0),),
        chp=(),
        fuel_links=(FuelLink("fn_dg", "generator:dg"),
                    FuelLink("fn_heat", "heat_source:hsrc_fuel")),
    )

    case = CaseData(power, heat, transport,
                    TimeGrid(delta_t=1.0, t_max=T_MAX, landfall_period=6),
                    coupling)
    validate_case(case)
    return case


def make_tutorial_track() -> tuple[TyphoonTrack, dict]:
    """Storm crossing the grid from the southeast, peak around hours 8-12."""
    center = []
    v_max = []
    rain = []
    for t in range(T_MAX):
        # straight track: enters at (26, -4), heads northwest over the system
        frac = t / (T_MAX - 1)
        center.append((26.0 - 28.0 * frac, -4.0 + 34.0 * frac))
        if t < 6:
            v, r = 18.0 + 2.0 * t, 5.5 * t
        elif t < 13:
            v, r = 46.0 + 2.0 * min(t - 6, 3), 38.0
        else:
            v, r = max(12.0, 52.0 - 4.5 * (t - 13)), max(0.0, 38.0 - 7.0 * (t - 13))
        v_max.append(v)
        rain.append(r)
    track = TyphoonTrack(center=tuple(center), v_max=tuple(v_max),
                         radius_max_wind=9.0, decay_exponent=0.75,
                         rain_peak=tuple(rain), rain_radius=28.0)
    curves = {
        "line_wind": FragilityCurve("line_wind", half=66.0, steepness=0.15),
        "road_flood": FragilityCurve("road_flood", half=170.0, steepness=0.03,
                                     performance_floor=0.15, drainage_mm_h=15.0,
                                     interrupt_below=0.2),
    }
    return track, curves


def write_tutorial(dest) -> None:
    dest = Path(dest)
    save_case(make_tutorial_case(), dest)
    track, curves = make_tutorial_track()
    dump_track(track, curves, dest / "track.json")


if __name__ == "__main__":
    write_tutorial(sys.argv[1] if len(sys.argv) > 1 else "cases/tutorial")
    print("tutorial case written")
