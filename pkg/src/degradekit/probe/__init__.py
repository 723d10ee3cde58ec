from .caps import HostCapabilities, host_capabilities
from .flushreload import (
    CalibrationResult,
    calibrate_threshold,
    degrade_activity,
    flush_reload_capture,
    smc_degrade_activity,
    suggest_threshold,
)
from .topology import CacheLineTarget, CpuTopology, Placement, discover_topology

__all__ = [
    "CacheLineTarget",
    "CalibrationResult",
    "CpuTopology",
    "HostCapabilities",
    "Placement",
    "calibrate_threshold",
    "degrade_activity",
    "discover_topology",
    "flush_reload_capture",
    "host_capabilities",
    "smc_degrade_activity",
    "suggest_threshold",
]
