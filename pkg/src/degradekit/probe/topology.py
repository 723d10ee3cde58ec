"""CPU topology discovery and probe placement rules."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Optional, Sequence

from ..errors import CapabilityError, ValidationError
from ..traces import DegradeStrategy

_SYS_CPU = Path("/sys/devices/system/cpu")


@dataclass(frozen=True)
class CacheLineTarget:
    """A 64-byte-aligned line within a mappable shared object."""

    path: str
    offset: int

    def __post_init__(self):
        if self.offset < 0 or self.offset % 64 != 0:
            raise ValidationError("cache line offset must be a nonnegative multiple of 64")


@dataclass(frozen=True)
class CpuTopology:
    """Logical-to-physical core map with derived SMT sibling pairs."""

    logical_cores: tuple[tuple[int, int], ...]  # (logical_id, physical_id)

    def __post_init__(self):
        ids = [l for l, _ in self.logical_cores]
        if len(ids) != len(set(ids)):
            raise ValidationError("logical core ids must be unique")

    @classmethod
    def from_logical_map(cls, pairs: Sequence[tuple[int, int]]) -> "CpuTopology":
        return cls(logical_cores=tuple((int(a), int(b)) for a, b in pairs))

    @property
    def sibling_pairs(self) -> tuple[tuple[int, int], ...]:
        groups: dict = {}
        for logical, physical in self.logical_cores:
            groups.setdefault(physical, []).append(logical)
        pairs = []
        for physical in sorted(groups):
            members = sorted(groups[physical])
            pairs.extend(combinations(members, 2))
        return tuple(pairs)

    @property
    def smt_available(self) -> bool:
        return bool(self.sibling_pairs)

    def physical_of(self, logical: int) -> int:
        for l, p in self.logical_cores:
            if l == logical:
                return p
        raise ValidationError(f"unknown logical core {logical}")

    def are_siblings(self, a: int, b: int) -> bool:
        return a != b and self.physical_of(a) == self.physical_of(b)


def _read_int(path: Path) -> int:
    return int(path.read_text().strip())


def discover_topology() -> CpuTopology:
    """Topology from sysfs, with physical ids densified over (package, core)."""
    if not _SYS_CPU.exists():
        raise CapabilityError("no sysfs CPU topology on this host")
    pairs = []
    phys_ids: dict = {}
    for cpu_dir in sorted(_SYS_CPU.glob("cpu[0-9]*"), key=lambda p: int(p.name[3:])):
        topo = cpu_dir / "topology"
        if not topo.exists():
            continue  # offline cpu
        try:
            package = _read_int(topo / "physical_package_id")
            core = _read_int(topo / "core_id")
        except (OSError, ValueError) as exc:
            raise CapabilityError(f"unreadable topology for {cpu_dir.name}: {exc}") from None
        key = (package, core)
        phys = phys_ids.setdefault(key, len(phys_ids))
        pairs.append((int(cpu_dir.name[3:]), phys))
    if not pairs:
        raise CapabilityError("sysfs exposes no CPU topology entries")
    return CpuTopology.from_logical_map(pairs)


def sysfs_sibling_sets() -> list[frozenset]:
    """Thread sibling sets straight from the kernel's own sibling lists.

    An independent source from the (package, core) id map, used to
    cross-check derived pairs.
    """
    sets = set()
    for cpu_dir in _SYS_CPU.glob("cpu[0-9]*"):
        f = cpu_dir / "topology" / "thread_siblings_list"
        if not f.exists():
            continue
        members: set = set()
        for part in f.read_text().strip().split(","):
            if "-" in part:
                lo, hi = part.split("-")
                members.update(range(int(lo), int(hi) + 1))
            elif part:
                members.add(int(part))
        if len(members) > 1:
            sets.add(frozenset(members))
    return sorted(sets, key=min)


@dataclass(frozen=True)
class Placement:
    """Core assignment for one experiment; validated against the strategy."""

    spy_core: int
    degrade_core: Optional[int]
    victim_core: int

    def validate(self, topology: CpuTopology, strategy: DegradeStrategy) -> None:
        if topology.physical_of(self.spy_core) == topology.physical_of(self.victim_core):
            raise ValidationError("spy must sit on a different physical core than the victim")
        if strategy in (DegradeStrategy.NO_DEGRADE,):
            return
        if self.degrade_core is None:
            raise ValidationError(f"strategy {strategy.value} needs a degrade core")
        siblings = topology.are_siblings(self.degrade_core, self.victim_core)
        if strategy is DegradeStrategy.DEGRADE and (
            siblings or self.degrade_core == self.victim_core
        ):
            raise ValidationError(
                "classic degrade requires the degrade core on a different "
                "physical core than the victim"
            )
        if strategy in (DegradeStrategy.HYPER_DEGRADE, DegradeStrategy.CONTENTION) and not siblings:
            raise ValidationError(
                f"{strategy.value} requires the degrade core to be the SMT "
                "sibling of the victim core"
            )
