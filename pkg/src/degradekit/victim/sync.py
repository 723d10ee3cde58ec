"""Counter-synchronization protocol between controller, degrade, and victim.

The ordering contract, enforced through three named FIFOs:

1. the degrade party starts first and blocks until the controller ACKs it;
2. the controller starts with measurement disabled and launches the victim;
3. the victim asks for counters to be enabled (control FIFO), then blocks
   on the relay FIFO;
4. the controller enables measurement and ACKs the degrade party, which
   starts degrading *before* relaying the ACK to the victim — so degradation
   is provably active when the victim's hot loop begins;
5. the victim disables measurement right after its loop.

Every run produces a timestamped event log (CLOCK_MONOTONIC is shared
across processes), so tests can assert enable < loop start <= loop end <
disable. A no-op degrade party keeps the message sequence identical for
undegraded baselines.
"""

from __future__ import annotations

import json
import os
import select
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from ..errors import OrchestrationError

CTL_FIFO = "ctl"
ACK_FIFO = "ack"
RELAY_FIFO = "relay"

MSG_ENABLE = b"E"
MSG_DISABLE = b"D"
MSG_ACK = b"A"
MSG_STOP = b"S"

DEFAULT_TIMEOUT = 10.0


@dataclass
class SyncEvent:
    name: str
    t_ns: int


@dataclass
class SyncRunResult:
    events: list[SyncEvent]
    victim_report: dict
    degrade_stdout: str = ""

    def event(self, name: str) -> int:
        for e in self.events:
            if e.name == name:
                return e.t_ns
        raise KeyError(name)


def make_fifos(run_dir: Path) -> dict:
    paths = {}
    for name in (CTL_FIFO, ACK_FIFO, RELAY_FIFO):
        p = run_dir / name
        os.mkfifo(p)
        paths[name] = p
    return paths


def _read_byte(fd: int, deadline: float, party_procs: dict, expect: bytes, what: str) -> None:
    """Block on one protocol byte, watching the parties for early exits."""
    while True:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise OrchestrationError(f"timeout waiting for {what}")
        ready, _, _ = select.select([fd], [], [], min(0.05, remaining))
        if ready:
            data = os.read(fd, 1)
            if data == expect:
                return
            if data:
                raise OrchestrationError(f"unexpected byte {data!r} while waiting for {what}")
            # writer closed without data: fall through to liveness check
        for name, proc in party_procs.items():
            if proc.poll() is not None and proc.returncode != 0:
                raise OrchestrationError(
                    f"party {name!r} exited with {proc.returncode} before {what}",
                    party=name,
                )


def orchestrate(
    victim_cmd: list,
    degrade_cmd: list,
    run_dir,
    timeout: float = DEFAULT_TIMEOUT,
    measure_hooks: Optional[tuple[Callable, Callable]] = None,
) -> SyncRunResult:
    """Run one synchronized (controller, degrade, victim) experiment.

    ``victim_cmd`` and ``degrade_cmd`` receive the FIFO directory as their
    final argument. ``measure_hooks`` is an (enable, disable) pair called at
    the protocol points where a counter backend would be switched.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    fifos = make_fifos(run_dir)
    events: list[SyncEvent] = []

    def log(name: str):
        events.append(SyncEvent(name=name, t_ns=time.monotonic_ns()))

    procs: dict = {}
    ctl_fd = ack_fd = None
    try:
        # O_RDWR on the controller side: opens never block on peer order
        ctl_fd = os.open(fifos[CTL_FIFO], os.O_RDWR)
        ack_fd = os.open(fifos[ACK_FIFO], os.O_RDWR)

        deadline = time.monotonic() + timeout

        log("degrade-start")
        procs["degrade"] = subprocess.Popen(
            [*degrade_cmd, str(run_dir)],
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
        )
        log("victim-start")
        procs["victim"] = subprocess.Popen(
            [*victim_cmd, str(run_dir)],
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
        )

        _read_byte(ctl_fd, deadline, procs, MSG_ENABLE, "enable request")
        if measure_hooks:
            measure_hooks[0]()
        log("counters-enabled")
        os.write(ack_fd, MSG_ACK)
        log("ack-sent")

        _read_byte(ctl_fd, deadline, procs, MSG_DISABLE, "disable request")
        if measure_hooks:
            measure_hooks[1]()
        log("counters-disabled")
        os.write(ack_fd, MSG_STOP)  # releases the degrade party

        victim_out, victim_err = procs["victim"].communicate(timeout=timeout)
        if procs["victim"].returncode != 0:
            raise OrchestrationError(
                f"party 'victim' exited with {procs['victim'].returncode}: {victim_err.strip()}",
                party="victim",
            )
        degrade_out, degrade_err = procs["degrade"].communicate(timeout=timeout)
        if procs["degrade"].returncode != 0:
            raise OrchestrationError(
                f"party 'degrade' exited with {procs['degrade'].returncode}: {degrade_err.strip()}",
                party="degrade",
            )
        try:
            report = json.loads(victim_out.strip().splitlines()[-1])
        except (json.JSONDecodeError, IndexError):
            raise OrchestrationError(
                f"party 'victim' produced no report: {victim_out!r}", party="victim"
            ) from None
        return SyncRunResult(events=events, victim_report=report, degrade_stdout=degrade_out)
    except subprocess.TimeoutExpired:
        raise OrchestrationError("timeout collecting party output") from None
    finally:
        for proc in procs.values():
            if proc.poll() is None:
                proc.kill()
                proc.wait()
        for fd in (ctl_fd, ack_fd):
            if fd is not None:
                os.close(fd)
        for p in fifos.values():
            try:
                p.unlink()
            except OSError:
                pass


def victim_protocol(run_dir, hot_loop: Callable[[], dict]) -> dict:
    """Victim-side client: enable, wait for relayed ACK, run, disable.

    Returns the loop report augmented with protocol timestamps; used by the
    launcher process and by in-test victims.
    """
    run_dir = Path(run_dir)
    ctl = os.open(run_dir / CTL_FIFO, os.O_WRONLY)
    try:
        os.write(ctl, MSG_ENABLE)
        relay = os.open(run_dir / RELAY_FIFO, os.O_RDONLY)  # blocks for degrade
        try:
            data = os.read(relay, 1)
            if data != MSG_ACK:
                raise OrchestrationError(f"victim got {data!r} instead of ACK")
        finally:
            os.close(relay)
        t0 = time.monotonic_ns()
        body = hot_loop() or {}
        t1 = time.monotonic_ns()
        os.write(ctl, MSG_DISABLE)
    finally:
        os.close(ctl)
    body.setdefault("loop_start_ns", t0)
    body.setdefault("loop_end_ns", t1)
    return body


def degrade_protocol(run_dir, activity) -> None:
    """Degrade-side client: wait for ACK, start degrading, relay the ACK,
    keep degrading until the controller's stop byte.

    ``activity`` is a context manager whose __enter__ starts degradation
    (a no-op for undegraded baselines), entered *before* the relay so the
    victim's hot loop never starts without degradation active.
    """
    run_dir = Path(run_dir)
    ack = os.open(run_dir / ACK_FIFO, os.O_RDONLY)
    try:
        data = os.read(ack, 1)
        if data != MSG_ACK:
            raise OrchestrationError(f"degrade got {data!r} instead of ACK")
        with activity:
            relay = os.open(run_dir / RELAY_FIFO, os.O_WRONLY)
            try:
                os.write(relay, MSG_ACK)
            finally:
                os.close(relay)
            stop = os.read(ack, 1)
            if stop not in (MSG_STOP, b""):
                raise OrchestrationError(f"degrade got {stop!r} instead of stop")
    finally:
        os.close(ack)
