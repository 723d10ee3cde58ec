"""Host capability probing.

Every hardware operation checks capabilities first and raises a structured
CapabilityError on unsupported hosts, so the rest of the toolkit (analysis,
simulation, lattice work) runs anywhere.
"""

from __future__ import annotations

import functools
import mmap
import platform
import shutil
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class HostCapabilities:
    x86_64: bool
    clflush: bool
    invariant_tsc: bool
    smt: bool
    toolchain: bool
    wx_pages: bool
    perf_events: bool

    @property
    def can_probe(self) -> bool:
        return self.x86_64 and self.clflush and self.toolchain

    @property
    def can_hyperdegrade(self) -> bool:
        return self.can_probe and self.smt

    def summary(self) -> dict:
        return self.__dict__.copy()


def _cpu_flags() -> set:
    try:
        text = Path("/proc/cpuinfo").read_text()
    except OSError:
        return set()
    flags: set = set()
    for line in text.splitlines():
        if line.startswith(("flags", "Features")):
            flags.update(line.split(":", 1)[1].split())
    return flags


def _smt_present() -> bool:
    try:
        from .topology import discover_topology

        return discover_topology().smt_available
    except Exception:
        return False


def _wx_mappable() -> bool:
    try:
        m = mmap.mmap(-1, mmap.PAGESIZE, prot=mmap.PROT_READ | mmap.PROT_WRITE | mmap.PROT_EXEC)
        m.close()
        return True
    except (OSError, PermissionError, ValueError):
        return False


def _perf_allowed() -> bool:
    # paranoid <= 2 allows per-process counting for unprivileged users
    try:
        level = int(Path("/proc/sys/kernel/perf_event_paranoid").read_text().strip())
    except (OSError, ValueError):
        return False
    return level <= 2


@functools.lru_cache(maxsize=1)
def host_capabilities() -> HostCapabilities:
    flags = _cpu_flags()
    return HostCapabilities(
        x86_64=platform.machine() in ("x86_64", "AMD64"),
        clflush=("clflush" in flags) or ("clfsh" in flags),
        invariant_tsc=("constant_tsc" in flags and "nonstop_tsc" in flags),
        smt=_smt_present(),
        toolchain=shutil.which("cc") is not None or shutil.which("gcc") is not None,
        wx_pages=_wx_mappable(),
        perf_events=_perf_allowed(),
    )
