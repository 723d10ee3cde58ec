"""Party process for synchronized runs: victim or degrade role.

Runs as ``python -m degradekit.victim.launcher ROLE ... RUN_DIR``. The
victim role maps a shared object, follows the sync protocol, calls the
entry with cycle bracketing, and prints a JSON report. The degrade role
follows the same protocol wrapping a flush loop, a self-store loop, or
nothing (baseline dummy).
"""

from __future__ import annotations

import argparse
import contextlib
import ctypes
import json
import os
import sys
import time


def _pin(core) -> None:
    if core is not None:
        os.sched_setaffinity(0, {int(core)})


def _victim_main(args) -> int:
    from . import sync

    _pin(args.pin)
    lib = ctypes.CDLL(args.lib)
    entry = getattr(lib, args.entry)
    entry.restype = None
    call_args = [ctypes.c_uint64(int(a)) for a in args.args]

    cycles = {"backend": "monotonic-ns"}
    read_tsc = None
    if args.tsc:
        from ..probe import native

        try:
            read_tsc = native.timestamp_reader()
            cycles["backend"] = "tsc"
        except Exception:
            read_tsc = None

    def hot_loop() -> dict:
        if read_tsc is not None:
            c0 = read_tsc()
            entry(*call_args)
            c1 = read_tsc()
            return {"cycles": c1 - c0, "backend": "tsc"}
        t0 = time.monotonic_ns()
        entry(*call_args)
        t1 = time.monotonic_ns()
        return {"cycles": t1 - t0, "backend": "monotonic-ns"}

    report = sync.victim_protocol(args.run_dir, hot_loop)
    print(json.dumps(report))
    return 0


def _degrade_main(args) -> int:
    from . import sync

    _pin(args.pin)
    if args.flavor == "none":
        activity = contextlib.nullcontext()
    else:
        from ..probe import flushreload
        from ..probe.topology import CacheLineTarget

        if args.flavor == "smc":
            activity = flushreload.smc_degrade_activity()
        else:
            target = CacheLineTarget(path=args.lib, offset=args.offset)
            activity = flushreload.degrade_activity(target)
    sync.degrade_protocol(args.run_dir, activity)
    return 0


def _crash_main(args) -> int:
    """Test helper: follow the protocol up to the hot loop, then die."""
    from . import sync

    def hot_loop():
        os._exit(17)

    sync.victim_protocol(args.run_dir, hot_loop)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="degradekit-party")
    sub = parser.add_subparsers(dest="role", required=True)

    v = sub.add_parser("victim")
    v.add_argument("--lib", required=True)
    v.add_argument("--entry", required=True)
    v.add_argument("--args", nargs="*", default=[])
    v.add_argument("--pin", type=int, default=None)
    v.add_argument("--tsc", action="store_true")
    v.add_argument("run_dir")
    v.set_defaults(func=_victim_main)

    d = sub.add_parser("degrade")
    d.add_argument("--flavor", choices=["none", "flush", "smc"], default="none")
    d.add_argument("--lib", default=None)
    d.add_argument("--offset", type=int, default=0)
    d.add_argument("--pin", type=int, default=None)
    d.add_argument("run_dir")
    d.set_defaults(func=_degrade_main)

    c = sub.add_parser("crash-victim")
    c.add_argument("run_dir")
    c.set_defaults(func=_crash_main)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
