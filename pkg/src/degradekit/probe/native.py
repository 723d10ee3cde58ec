"""Native probe primitives, assembled at first use.

The hot loops (flush, wait, serialized timed reload) cannot be expressed in
Python, so they are kept as embedded assembly, built once per process into
a temporary shared object with the system toolchain, and called through
ctypes (which releases the GIL, so degrade loops run concurrently with
orchestration). Every entry point here raises CapabilityError on hosts
missing the required pieces instead of crashing.

Timestamp discipline: every reload timing is bracketed as
timestamp-read, fence, load, fence, timestamp-read — unfenced reads
misattribute latencies to neighbouring instructions.
"""

from __future__ import annotations

import ctypes
import mmap
import platform
import subprocess
import tempfile
from pathlib import Path
from typing import Optional

from ..errors import CapabilityError
from .caps import host_capabilities

_ASM = r"""
    .text

# uint64 dk_read_tsc(void): serialized timestamp read
    .globl dk_read_tsc
    .type dk_read_tsc, @function
dk_read_tsc:
    mfence
    lfence
    rdtsc
    lfence
    shl $32, %rdx
    or %rdx, %rax
    ret
    .size dk_read_tsc, .-dk_read_tsc

# uint64 dk_timed_reload(void *addr): fenced reload latency in cycles
    .globl dk_timed_reload
    .type dk_timed_reload, @function
dk_timed_reload:
    mfence
    lfence
    rdtsc
    lfence
    mov %eax, %r8d
    mov %edx, %r9d
    mov (%rdi), %rax
    lfence
    rdtsc
    shl $32, %rdx
    or %rdx, %rax
    shl $32, %r9
    or %r9, %r8
    sub %r8, %rax
    ret
    .size dk_timed_reload, .-dk_timed_reload

# void dk_flush(void *addr)
    .globl dk_flush
    .type dk_flush, @function
dk_flush:
    clflush (%rdi)
    mfence
    ret
    .size dk_flush, .-dk_flush

# void dk_load(void *addr)
    .globl dk_load
    .type dk_load, @function
dk_load:
    mov (%rdi), %rax
    mfence
    ret
    .size dk_load, .-dk_load

# void dk_capture(void *addr, uint64 wait_r, uint32 *out, uint64 n)
# per sample: flush, busy-wait wait_r decrements, fenced timed reload
    .globl dk_capture
    .type dk_capture, @function
dk_capture:
    push %rbx
    mov %rdx, %r10
    xor %r11, %r11
1:  cmp %rcx, %r11
    jae 4f
    clflush (%rdi)
    mfence
    mov %rsi, %rbx
2:  test %rbx, %rbx
    jz 3f
    dec %rbx
    jmp 2b
3:  mfence
    lfence
    rdtsc
    lfence
    mov %eax, %r8d
    mov %edx, %r9d
    mov (%rdi), %rax
    lfence
    rdtsc
    shl $32, %rdx
    or %rdx, %rax
    shl $32, %r9
    or %r9, %r8
    sub %r8, %rax
    mov %eax, (%r10,%r11,4)
    inc %r11
    jmp 1b
4:  pop %rbx
    ret
    .size dk_capture, .-dk_capture

# void dk_degrade_loop(void *addr, volatile uint8 *stop, uint64 idle)
# tightest-possible flush loop; optional pause iterations between flushes;
# exits within one iteration of *stop becoming nonzero
    .globl dk_degrade_loop
    .type dk_degrade_loop, @function
dk_degrade_loop:
1:  cmpb $0, (%rsi)
    jne 3f
    clflush (%rdi)
    mov %rdx, %rax
2:  test %rax, %rax
    jz 1b
    pause
    dec %rax
    jmp 2b
3:  ret
    .size dk_degrade_loop, .-dk_degrade_loop

# void dk_smc_loop(volatile uint8 *stop)
# stores the first byte of its own store instruction onto itself, forcing
# continual self-modifying-code machine clears; must run from a
# writable+executable copy (see smc_loop_runner)
    .globl dk_smc_loop
    .type dk_smc_loop, @function
dk_smc_loop:
    lea 1f(%rip), %rcx
    movb (%rcx), %dl
1:  movb %dl, (%rcx)
    cmpb $0, (%rdi)
    je 1b
    ret
    .size dk_smc_loop, .-dk_smc_loop
    .globl dk_smc_loop_end
dk_smc_loop_end:
    nop
"""

_lib = None
_lib_dir = None


def _require_x86_64() -> None:
    caps = host_capabilities()
    if not caps.x86_64:
        raise CapabilityError(f"native probes need x86-64, host is {platform.machine()}")
    if not caps.clflush:
        raise CapabilityError("host CPU does not advertise the flush instruction")
    if not caps.toolchain:
        raise CapabilityError("no toolchain to assemble the probe stubs")


def _build() -> ctypes.CDLL:
    global _lib, _lib_dir
    if _lib is not None:
        return _lib
    _require_x86_64()
    _lib_dir = tempfile.TemporaryDirectory(prefix="degradekit-native-")
    src = Path(_lib_dir.name) / "probes.s"
    so = Path(_lib_dir.name) / "libprobes.so"
    src.write_text(_ASM)
    proc = subprocess.run(
        ["cc", "-shared", "-nostdlib", "-o", str(so), str(src)],
        capture_output=True,
        text=True,
    )
    if proc.returncode != 0:
        raise CapabilityError(f"probe stub build failed: {proc.stderr.strip()}")
    _lib = ctypes.CDLL(str(so))
    for name, restype, argtypes in (
        ("dk_read_tsc", ctypes.c_uint64, []),
        ("dk_timed_reload", ctypes.c_uint64, [ctypes.c_void_p]),
        ("dk_flush", None, [ctypes.c_void_p]),
        ("dk_load", None, [ctypes.c_void_p]),
        (
            "dk_capture",
            None,
            [ctypes.c_void_p, ctypes.c_uint64, ctypes.c_void_p, ctypes.c_uint64],
        ),
        ("dk_degrade_loop", None, [ctypes.c_void_p, ctypes.c_void_p, ctypes.c_uint64]),
        ("dk_smc_loop", None, [ctypes.c_void_p]),
    ):
        fn = getattr(_lib, name)
        fn.restype = restype
        fn.argtypes = argtypes
    return _lib


def timestamp_reader():
    """Callable returning the serialized cycle counter."""
    lib = _build()
    caps = host_capabilities()
    if not caps.invariant_tsc:
        raise CapabilityError("host lacks an invariant timestamp counter")
    return lib.dk_read_tsc


def timed_reload(addr: int) -> int:
    return int(_build().dk_timed_reload(addr))


def flush(addr: int) -> None:
    _build().dk_flush(addr)


def touch(addr: int) -> None:
    _build().dk_load(addr)


def capture_into(addr: int, wait_r: int, out_buffer, n: int) -> None:
    """Fill a ctypes/numpy u32 buffer with n reload latencies."""
    lib = _build()
    ptr = ctypes.cast(
        (ctypes.c_uint32 * n).from_buffer(out_buffer)
        if not isinstance(out_buffer, int)
        else out_buffer,
        ctypes.c_void_p,
    )
    lib.dk_capture(addr, wait_r, ptr, n)


def degrade_loop(addr: int, stop_flag, idle: int = 0) -> None:
    """Flush loop until *stop_flag is nonzero; releases the GIL while running."""
    lib = _build()
    lib.dk_degrade_loop(addr, ctypes.addressof(stop_flag), idle)


def smc_loop_runner():
    """A (callable, stop_flag) pair running the self-store loop from a
    private writable+executable copy of its code.

    Copying rather than patching the library text keeps the rest of the
    process unmodified; mapping W+X may be denied by policy, which is a
    capability error.
    """
    lib = _build()
    start = ctypes.cast(lib.dk_smc_loop, ctypes.c_void_p).value
    end = ctypes.cast(lib.dk_smc_loop_end, ctypes.c_void_p).value
    size = end - start
    code = ctypes.string_at(start, size)
    try:
        page = mmap.mmap(
            -1,
            max(len(code), mmap.PAGESIZE),
            prot=mmap.PROT_READ | mmap.PROT_WRITE | mmap.PROT_EXEC,
        )
    except (PermissionError, OSError) as exc:
        raise CapabilityError(f"cannot map a writable+executable page: {exc}") from None
    page.write(code)
    addr = ctypes.addressof(ctypes.c_char.from_buffer(page))
    fn = ctypes.CFUNCTYPE(None, ctypes.c_void_p)(addr)
    stop = ctypes.c_uint8(0)

    def run() -> None:
        fn(ctypes.addressof(stop))

    run._keepalive = (page, fn)  # the mapping must outlive the callable
    return run, stop
