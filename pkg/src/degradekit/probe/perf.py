"""Minimal perf_event_open wrapper for the counters the experiments use.

Only per-process counting (no sampling) is needed: CPU cycles, L1
instruction-cache load misses, and self-modifying-code machine clears (an
Intel raw event). Unavailable counters surface as CapabilityError.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import fcntl
import os
import struct
from dataclasses import dataclass

from ..errors import CapabilityError
from .caps import host_capabilities

_SYS_perf_event_open = 298  # x86-64

PERF_TYPE_HARDWARE = 0
PERF_TYPE_HW_CACHE = 3
PERF_TYPE_RAW = 4

PERF_COUNT_HW_CPU_CYCLES = 0
PERF_COUNT_HW_INSTRUCTIONS = 1
# L1I | (read op << 8) | (miss result << 16)
L1I_READ_MISS = 0x1 | (0x0 << 8) | (0x1 << 16)
# Intel machine_clears.smc: event 0xC3, umask 0x04
RAW_MACHINE_CLEARS_SMC = 0x04C3

PERF_EVENT_IOC_ENABLE = 0x2400
PERF_EVENT_IOC_DISABLE = 0x2401
PERF_EVENT_IOC_RESET = 0x2403

#: name -> (type, config)
EVENTS = {
    "cycles": (PERF_TYPE_HARDWARE, PERF_COUNT_HW_CPU_CYCLES),
    "instructions_retired": (PERF_TYPE_HARDWARE, PERF_COUNT_HW_INSTRUCTIONS),
    "l1i_misses": (PERF_TYPE_HW_CACHE, L1I_READ_MISS),
    "smc_machine_clears": (PERF_TYPE_RAW, RAW_MACHINE_CLEARS_SMC),
}

_ATTR_SIZE = 64  # PERF_ATTR_SIZE_VER0
_FLAG_DISABLED = 1 << 0
_FLAG_EXCLUDE_KERNEL = 1 << 5
_FLAG_EXCLUDE_HV = 1 << 6

_libc = ctypes.CDLL(ctypes.util.find_library("c"), use_errno=True)


def _open_event(event_type: int, config: int, pid: int) -> int:
    attr = bytearray(_ATTR_SIZE)
    struct.pack_into("<IIQ", attr, 0, event_type, _ATTR_SIZE, config)
    flags = _FLAG_DISABLED | _FLAG_EXCLUDE_KERNEL | _FLAG_EXCLUDE_HV
    struct.pack_into("<Q", attr, 40, flags)
    buf = (ctypes.c_char * _ATTR_SIZE).from_buffer(attr)
    fd = _libc.syscall(
        _SYS_perf_event_open, ctypes.byref(buf), pid, -1, -1, ctypes.c_ulong(0)
    )
    if fd < 0:
        err = ctypes.get_errno()
        raise CapabilityError(f"perf_event_open failed: {os.strerror(err)}")
    return fd


@dataclass
class PerfCounter:
    """One counting event attached to a process (0 = this process)."""

    event: str
    pid: int = 0

    def __post_init__(self):
        if not host_capabilities().perf_events:
            raise CapabilityError("perf events are not permitted on this host")
        if self.event not in EVENTS:
            raise CapabilityError(f"unknown perf event {self.event!r}")
        etype, config = EVENTS[self.event]
        self._fd = _open_event(etype, config, self.pid)

    def enable(self) -> None:
        fcntl.ioctl(self._fd, PERF_EVENT_IOC_RESET, 0)
        fcntl.ioctl(self._fd, PERF_EVENT_IOC_ENABLE, 0)

    def disable(self) -> None:
        fcntl.ioctl(self._fd, PERF_EVENT_IOC_DISABLE, 0)

    def read(self) -> int:
        data = os.read(self._fd, 8)
        return struct.unpack("<Q", data)[0]

    def close(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def __enter__(self):
        self.enable()
        return self

    def __exit__(self, *exc):
        self.disable()
        return False
