"""degradekit: cache-eviction performance degradation and its cryptanalytic
payoff, end to end.

Layers:

* ``traces`` — trace data model and binary serialization;
* ``probe`` — flush+reload spy, degrade loops, topology, calibration
  (hardware-gated: every operation checks host capabilities first);
* ``victim`` — synthetic victims, the counter-sync protocol, slowdown
  benchmarking and statistics;
* ``assess`` — inter-class variance leakage assessment and POI counting;
* ``dh`` / ``hnp`` / ``lattice`` — the simulated padding-oracle attack:
  chosen queries, noisy detection with majority voting, hidden-number
  lattice construction, and LLL/BKZ reduction over exact integers;
* ``attack`` — parameter sweeps, trace-budget estimation, and the
  end-to-end simulated campaign;
* ``service`` / ``cli`` — the HTTP surface and its thin command-line client.
"""

__version__ = "0.1.0"

from . import assess, attack, dh, hnp, lattice, traces
from .traces import AttackParams, DegradeStrategy, Trace, TraceSet

__all__ = [
    "AttackParams",
    "DegradeStrategy",
    "Trace",
    "TraceSet",
    "assess",
    "attack",
    "dh",
    "hnp",
    "lattice",
    "traces",
    "__version__",
]
