"""Shared case factories: a 2-bus micro case and a mid-size toy case."""

import pytest

from gridstorm.core import (
    Branch,
    Bus,
    CaseConfig,
    CaseData,
    ChargingStation,
    ChpLink,
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
    validate_case,
)


def make_micro_case(t_max=4) -> CaseData:
    """Smallest valid bundle: 2 buses / 1 branch / 1 pipe / 2 locations."""
    power = PowerGrid(
        buses=(
            Bus("b1", importance=0.0, peak_load=0.0, x=0.0, y=0.0, location="g1"),
            Bus("b2", importance=10.0, peak_load=1.0, x=10.0, y=0.0, location="g2"),
        ),
        branches=(
            Branch("b1:b2", "b1", "b2", resistance=0.01, reactance=0.02,
                   capacity=5.0, repair_need=1.0, repair_time=RepairDist("fixed", 1, 1)),
        ),
        generators=(Generator("grid", "b1", p_max=10.0),),
        substation="b1",
    )
    heat = HeatGrid(
        nodes=(
            HeatNode("h1", kind="source"),
            HeatNode("h2", kind="load", importance=5.0, peak_load=1.0),
        ),
        pipes=(Pipe("h1:h2", "h1", "h2", capacity=3.0, loss_fraction=0.01, length=2.0),),
        sources=(HeatSource("hs1", "h1", h_max=2.0, driver="fuel"),),
    )
    transport = TransportGrid(
        locations=(Location("g1", 0.0, 0.0), Location("g2", 10.0, 0.0)),
        roads=(Road("g1:g2", "g1", "g2", travel_time=1, length=8.0),),
        charging_stations=(),
        fuel_nodes=(),
        fuel_depots=(),
        repair_depots=(),
        fleet_size=1,
        fleet_init=(FleetInit("g1", 2, 1),),
        demand=(DemandEntry("g1", "g2", 0, count=1.0, value_fixed=3.0,
                            value_per_km=0.1, delay_cost=1.0),),
    )
    case = CaseData(power, heat, transport,
                    TimeGrid(delta_t=1.0, t_max=t_max, landfall_period=1), Coupling())
    validate_case(case)
    return case


def make_toy_case(t_max=6) -> CaseData:
    """3-bus / 3-heat-node / 3-location case with every coupling type present."""
    flat = None
    power = PowerGrid(
        buses=(
            Bus("b1", 0.0, 0.0, flat, x=0.0, y=0.0, location="g1"),
            Bus("b2", 10.0, 2.0, flat, x=8.0, y=0.0, location="g2"),
            Bus("b3", 6.0, 1.5, flat, x=16.0, y=0.0, location="g3"),
        ),
        branches=(
            Branch("L12", "b1", "b2", 0.01, 0.02, capacity=8.0, repair_need=1.0,
                   repair_time=RepairDist("fixed", 2, 2)),
            Branch("L23", "b2", "b3", 0.01, 0.02, capacity=6.0, repair_need=1.0,
                   repair_time=RepairDist("fixed", 1, 1)),
            Branch("L13", "b1", "b3", 0.015, 0.03, capacity=6.0, repair_need=1.0,
                   repair_time=RepairDist("fixed", 1, 1), normally_closed=False),
        ),
        generators=(
            Generator("grid", "b1", p_max=20.0),
            Generator("dg", "b3", p_max=2.0, fuel_rate=1.0, fuel_stock=40.0,
                      fuel_stock_scarce=2.0),
        ),
        substation="b1",
    )
    heat = HeatGrid(
        nodes=(
            HeatNode("h1", kind="source"),
            HeatNode("h2", kind="load", importance=8.0, peak_load=1.5),
            HeatNode("h3", kind="source"),
        ),
        pipes=(
            Pipe("p12", "h1", "h2", capacity=4.0, loss_fraction=0.01, length=1.0),
            Pipe("p32", "h3", "h2", capacity=4.0, loss_fraction=0.01, length=1.0),
        ),
        sources=(
            HeatSource("boiler", "h1", h_max=2.0, driver="electric_boiler"),
            HeatSource("chp_src", "h3", h_max=2.0, driver="chp"),
        ),
    )
    transport = TransportGrid(
        locations=(Location("g1", 0.0, 0.0), Location("g2", 8.0, 0.0),
                   Location("g3", 16.0, 0.0)),
        roads=(
            Road("r12", "g1", "g2", travel_time=1, length=8.0),
            Road("r23", "g2", "g3", travel_time=1, length=8.0),
        ),
        charging_stations=(ChargingStation("f1", "g2", "b2", station_cap=2.0),),
        fuel_nodes=(FuelNode("fn1", "g3"),),
        fuel_depots=(FuelDepot("fd1", "g1", stock=30.0, stock_scarce=5.0),),
        repair_depots=(RepairDepot("rd1", "g1", crews=1),),
        fleet_size=3,
        fleet_init=(FleetInit("g2", 3, 2),),
        demand=(
            DemandEntry("g1", "g3", 1, count=1.0, value_fixed=4.0,
                        value_per_km=0.05, delay_cost=0.5),
            DemandEntry("g2", "g1", 2, count=2.0, value_fixed=3.0,
                        value_per_km=0.05, delay_cost=0.5),
        ),
        charge_power=0.5,
        discharge_power=0.5,
        fuel_capacity=10.0,
        km_per_soc_level=10.0,
    )
    coupling = Coupling(
        electric_heating=(ElectricHeating("b2", "h1", conversion=1.0),),
        chp=(ChpLink("dg", "chp_src", heat_per_mw=1.0),),
        fuel_links=(FuelLink("fn1", "generator:dg"),),
    )
    case = CaseData(power, heat, transport,
                    TimeGrid(delta_t=1.0, t_max=t_max, landfall_period=1), coupling)
    validate_case(case)
    return case


@pytest.fixture
def micro_case():
    return make_micro_case()


@pytest.fixture
def toy_case():
    return make_toy_case()


@pytest.fixture
def small_config():
    return CaseConfig(soc_levels=4, soc_min_final=1, path_k=2, delay_max=2)
