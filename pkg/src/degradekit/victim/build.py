"""Synthetic victim generation: assembly templates and shared-object builds.

Two victims are generated from templates rather than maintained as binaries,
so the loop line, iteration count, and pair constant stay parameters:

* a single-cache-line loop: 64 byte-exact lines of effective nops
  (add/sub pairs), a counter decrement, and an indirect loop branch, 16
  instructions per iteration, page-aligned so a line index addresses one
  64-byte line;
* a function pair: two byte-identical functions placed exactly 512 bytes
  apart, each spinning a counter from a constant through effective nops.
"""

from __future__ import annotations

import enum
import shutil
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from ..errors import CapabilityError, ValidationError

CACHE_LINE = 64
LINES_PER_PAGE_LOOP = 64
PAIR_SEPARATION = 512
#: The pair constant is quoted as "2k" in its source listing; 2048 is the
#: default reading, overridable where 2000 is wanted.
DEFAULT_PAIR_CNT = 2048
DEFAULT_LOOP_ITERATIONS = 1 << 16


class VictimKind(enum.Enum):
    SINGLE_LINE_LOOP = "single-line-loop"
    VICTIM_PAIR = "victim-pair"
    EXTERNAL_SHARED_LIB = "external"


@dataclass(frozen=True)
class VictimSpec:
    kind: VictimKind
    iterations: int = DEFAULT_LOOP_ITERATIONS
    line_index: int = 0
    cnt: int = DEFAULT_PAIR_CNT
    path: Optional[str] = None
    entry: Optional[str] = None

    def __post_init__(self):
        if self.kind is VictimKind.SINGLE_LINE_LOOP:
            if self.iterations < 1:
                raise ValidationError("iterations must be >= 1")
            if not 0 <= self.line_index < LINES_PER_PAGE_LOOP:
                raise ValidationError(f"line_index must be in [0, {LINES_PER_PAGE_LOOP})")
        elif self.kind is VictimKind.VICTIM_PAIR:
            if self.cnt < 1:
                raise ValidationError("cnt must be >= 1")
        elif self.kind is VictimKind.EXTERNAL_SHARED_LIB:
            if not self.path or not self.entry:
                raise ValidationError("external victim needs path and entry")

    @property
    def hot_instructions(self) -> int:
        """Retired instructions expected in the hot code per full run."""
        if self.kind is VictimKind.SINGLE_LINE_LOOP:
            return 16 * self.iterations
        if self.kind is VictimKind.VICTIM_PAIR:
            return 60 * self.cnt
        raise ValidationError("external victims have no known instruction count")


def single_line_loop_asm() -> str:
    """64 one-line loop bodies; the entry jumps into the selected line.

    Each line: 6 add/sub pairs, one add, a sub-by-2 (net decrement of the
    iteration counter), the zero-exit branch, and the indirect loop jump;
    exactly 16 instructions execute per iteration.
    """
    return """\
    .text
    .p2align 12
    .globl victim_line_table
victim_line_table:
    .rept 64
    .rept 6
    add $1, %rsi
    sub $1, %rsi
    .endr
    add $1, %rsi
    sub $2, %rsi
    jz victim_line_loop_end
    jmp *%rdi
    .p2align 6
    .endr
victim_line_loop_end:
    ret

    .globl victim_line_loop
    .type victim_line_loop, @function
victim_line_loop:
    # rdi = line index in [0, 64), rsi = iterations
    lea victim_line_table(%rip), %rax
    shl $6, %rdi
    add %rax, %rdi
    jmp *%rdi
    .size victim_line_loop, .-victim_line_loop
"""


def victim_pair_asm(cnt: int = DEFAULT_PAIR_CNT) -> str:
    """Two byte-identical counter loops starting exactly 512 bytes apart."""

    def body(label: str, back: str) -> str:
        return f"""\
    .globl {label}
    .type {label}, @function
{label}:
    mov ${cnt}, %r10
{back}:
    .rept 29
    add $1, %r10
    sub $1, %r10
    .endr
    sub $1, %r10
    jnz {back}b
    ret
    .size {label}, .-{label}
"""

    return (
        "    .text\n    .p2align 12\n"
        + body("victim_path_0", "1")
        + "    .p2align 9\n"
        + body("victim_path_1", "2")
    )


@dataclass(frozen=True)
class BuiltVictim:
    spec: VictimSpec
    library: Path
    entry: str
    asm_file: Optional[Path] = None

    def entry_args(self) -> tuple[int, ...]:
        if self.spec.kind is VictimKind.SINGLE_LINE_LOOP:
            return (self.spec.line_index, self.spec.iterations)
        return ()


def victim_asm(spec: VictimSpec) -> str:
    if spec.kind is VictimKind.SINGLE_LINE_LOOP:
        return single_line_loop_asm()
    if spec.kind is VictimKind.VICTIM_PAIR:
        return victim_pair_asm(spec.cnt)
    raise ValidationError("external victims are not generated")


def find_compiler() -> Optional[str]:
    for cc in ("cc", "gcc", "clang"):
        if shutil.which(cc):
            return cc
    return None


def build_victim(spec: VictimSpec, out_dir) -> BuiltVictim:
    """Assemble the victim shared object (or wrap an external one)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if spec.kind is VictimKind.EXTERNAL_SHARED_LIB:
        lib = Path(spec.path)
        if not lib.exists():
            raise ValidationError(f"external victim library {lib} does not exist")
        return BuiltVictim(spec=spec, library=lib, entry=spec.entry)

    cc = find_compiler()
    if cc is None:
        raise CapabilityError("no assembler/toolchain (cc, gcc, clang) on PATH")

    name = spec.kind.value.replace("-", "_")
    asm_path = out_dir / f"{name}.s"
    so_path = out_dir / f"lib{name}.so"
    asm_path.write_text(victim_asm(spec))
    cmd = [cc, "-shared", "-nostdlib", "-o", str(so_path), str(asm_path)]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise CapabilityError(f"victim build failed: {proc.stderr.strip()}")

    entry = "victim_line_loop" if spec.kind is VictimKind.SINGLE_LINE_LOOP else "victim_path_0"
    return BuiltVictim(spec=spec, library=so_path, entry=entry, asm_file=asm_path)
