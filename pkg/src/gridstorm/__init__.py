"""gridstorm: extreme-weather risk assessment for coupled power-heat-transport grids.

The package simulates one storm season's worth of what-if: a typhoon track and
rainstorm field are mapped through fragility curves onto component outages,
per-scenario emergency-dispatch MILPs are solved on a time-space-energy
expanded network, and component vulnerability is ranked either by direct
re-simulation or by ReLU-surrogate-accelerated methods.
"""

__version__ = "0.1.0"
