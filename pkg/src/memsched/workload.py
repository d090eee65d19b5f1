"""Request streams: seeded synthetic generators and the plain-text trace format.

Trace lines look like ``<ready_at> <core_id> <R|W> 0x<hex-address>`` where
``ready_at`` is the CPU cycle at which the core reaches the memory instruction
when it never stalls (it doubles as the instruction index, one instruction per
cycle).  Lines starting with ``#`` and blank lines are ignored.
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .dram import DramGeometry, decode_address, encode_address
from .errors import ConfigError, TraceParseError

TRACE_HEADER = "# memsched trace v1: <ready_at> <core_id> <R|W> 0x<address>"


@dataclass(frozen=True)
class MemoryRequest:
    core_id: int
    address: int
    is_write: bool
    program_position: int


@dataclass(frozen=True)
class TraceRecord:
    core_id: int
    ready_at: int
    is_write: bool
    address: int


@dataclass(frozen=True)
class CoreProfile:
    intensity: float = 0.02
    locality: float = 0.5
    bank_spread: int = 4
    working_set_rows: int = 64
    write_fraction: float = 0.3


@dataclass(frozen=True)
class SyntheticParams:
    cores: tuple

    def __post_init__(self):
        object.__setattr__(self, "cores", tuple(self.cores))
        if not self.cores:
            raise ConfigError("cores", "at least one core profile is required")
        for i, p in enumerate(self.cores):
            for name in ("intensity", "locality", "write_fraction"):
                value = getattr(p, name)
                if not (isinstance(value, (int, float)) and 0.0 <= value <= 1.0):
                    raise ConfigError(f"cores[{i}].{name}", f"must be in [0, 1], got {value!r}")
            for name in ("bank_spread", "working_set_rows"):
                value = getattr(p, name)
                if not isinstance(value, (int, np.integer)) or value < 1:
                    raise ConfigError(f"cores[{i}].{name}", f"must be an integer >= 1, got {value!r}")

    @property
    def core_count(self):
        return len(self.cores)


class Trace(Sequence):
    """Columnar request trace, ordered by ``(ready_at, core_id)``.

    Behaves as a sequence of :class:`TraceRecord`.  ``instructions`` optionally
    gives each core's total instruction count (including trailing non-memory
    instructions that the records cannot express).
    """

    def __init__(self, core, ready_at, is_write, address, instructions=None):
        core = np.asarray(core, dtype=np.int64)
        ready_at = np.asarray(ready_at, dtype=np.int64)
        is_write = np.asarray(is_write, dtype=bool)
        address = np.asarray(address, dtype=np.uint64)
        order = np.lexsort((core, ready_at))
        self.core = core[order]
        self.ready_at = ready_at[order]
        self.is_write = is_write[order]
        self.address = address[order]
        self.instructions = None if instructions is None else np.asarray(instructions, dtype=np.int64)

    @classmethod
    def from_records(cls, records: Iterable[TraceRecord], instructions=None):
        records = list(records)
        return cls([r.core_id for r in records], [r.ready_at for r in records],
                   [r.is_write for r in records], [r.address for r in records],
                   instructions)

    def __len__(self):
        return len(self.core)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        return TraceRecord(int(self.core[i]), int(self.ready_at[i]),
                           bool(self.is_write[i]), int(self.address[i]))

    def __iter__(self) -> Iterator[TraceRecord]:
        for i in range(len(self)):
            yield self[i]

    def per_core_counts(self, core_count):
        return np.bincount(self.core, minlength=core_count)


def _core_layout(params: SyntheticParams, geometry: DramGeometry):
    """Disjoint row ranges per core and the banks each core touches."""
    nb = geometry.total_banks
    stride = max(math.ceil(p.working_set_rows / p.bank_spread) for p in params.cores)
    if stride * params.core_count > geometry.rows_per_bank:
        raise ConfigError("cores", f"working sets need {stride * params.core_count} rows per bank, "
                                   f"geometry has {geometry.rows_per_bank}")
    layout = []
    for c, p in enumerate(params.cores):
        if p.bank_spread > nb:
            raise ConfigError(f"cores[{c}].bank_spread", f"exceeds the {nb} banks available")
        banks = (c * p.bank_spread + np.arange(p.bank_spread)) % nb
        layout.append((banks, c * stride))
    return layout


def gen_synthetic(params: SyntheticParams, seed: int, length: int,
                  geometry: Optional[DramGeometry] = None) -> Trace:
    """Generate ``length`` instructions per core and return their memory accesses.

    Each instruction is a memory access with probability ``intensity``.  A
    request stays in the current (bank, row) with probability ``locality`` and
    otherwise jumps to a uniformly drawn entry of the core's working set.
    Working sets of different cores never share a row, so no two cores ever
    touch the same address.

    Every core draws from its own child stream of ``SeedSequence(seed)`` and
    each decision (emission, locality, target, column, write) from a separate
    grandchild stream, so raising one core's intensity cannot shrink its
    request count nor perturb other cores.
    """
    if length < 0:
        raise ConfigError("length", f"must be >= 0, got {length}")
    geometry = geometry or DramGeometry()
    layout = _core_layout(params, geometry)
    root = np.random.SeedSequence(seed)
    cols, rds, wrs, adrs = [], [], [], []
    for c, (p, child) in enumerate(zip(params.cores, root.spawn(params.core_count))):
        emit_ss, stay_ss, target_ss, col_ss, write_ss = child.spawn(5)
        emit = np.random.default_rng(emit_ss).random(length) < p.intensity
        positions = np.flatnonzero(emit).astype(np.int64)
        n = len(positions)
        stay = np.random.default_rng(stay_ss).random(n) < p.locality
        if n:
            stay[0] = False
        targets = np.random.default_rng(target_ss).integers(0, p.working_set_rows, n)
        last_jump = np.maximum.accumulate(np.where(stay, 0, np.arange(n)))
        slot = targets[last_jump] if n else targets
        banks, base_row = layout[c]
        bank = banks[slot % p.bank_spread]
        row = base_row + slot // p.bank_spread
        column = np.random.default_rng(col_ss).integers(0, geometry.columns_per_row, n)
        writes = np.random.default_rng(write_ss).random(n) < p.write_fraction
        cols.append(np.full(n, c, dtype=np.int64))
        rds.append(positions)
        wrs.append(writes)
        adrs.append(encode_address(bank.astype(np.int64), row.astype(np.int64),
                                   column.astype(np.int64), geometry))
    return Trace(np.concatenate(cols), np.concatenate(rds), np.concatenate(wrs),
                 np.concatenate(adrs), instructions=np.full(params.core_count, length))


def parse_trace_line(line: str, line_no: int = 1) -> TraceRecord:
    parts = line.split()
    if len(parts) != 4:
        raise TraceParseError(line_no, f"expected 4 fields, got {len(parts)}")
    ready_s, core_s, op, addr_s = parts
    try:
        ready_at = int(ready_s)
        core_id = int(core_s)
    except ValueError:
        raise TraceParseError(line_no, f"non-integer cycle or core in {line.strip()!r}") from None
    if ready_at < 0 or core_id < 0:
        raise TraceParseError(line_no, "negative cycle or core id")
    if op not in ("R", "W"):
        raise TraceParseError(line_no, f"unknown op '{op}'")
    if addr_s[:2] not in ("0x", "0X"):
        raise TraceParseError(line_no, f"address {addr_s!r} lacks 0x prefix")
    digits = addr_s[2:]
    if not digits or not all(ch in string.hexdigits for ch in digits):
        raise TraceParseError(line_no, f"bad hex address {addr_s!r}")
    address = int(digits, 16)
    if address >= 1 << 64:
        raise TraceParseError(line_no, f"address {addr_s} exceeds 64 bits")
    return TraceRecord(core_id, ready_at, op == "W", address)


def format_trace_line(record: TraceRecord) -> str:
    op = "W" if record.is_write else "R"
    return f"{record.ready_at} {record.core_id} {op} 0x{record.address:X}"


def iter_trace_lines(lines: Iterable[str]) -> Iterator[TraceRecord]:
    """Parse a stream of lines, skipping comments; aborts on the first bad line."""
    last_ready = {}
    for line_no, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        rec = parse_trace_line(text, line_no)
        if rec.ready_at < last_ready.get(rec.core_id, -1):
            raise TraceParseError(line_no, f"core {rec.core_id} records out of order")
        last_ready[rec.core_id] = rec.ready_at
        yield rec


def read_trace(path, instructions=None) -> Trace:
    with open(path, encoding="utf-8") as fh:
        return Trace.from_records(iter_trace_lines(fh), instructions)


def write_trace(trace: Iterable[TraceRecord], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TRACE_HEADER + "\n")
        for rec in trace:
            fh.write(format_trace_line(rec) + "\n")
            n += 1
    return n


def distinct_bank_rows(trace: Trace, geometry: DramGeometry, core: int):
    """Set of (bank, row) pairs touched by ``core``."""
    mask = trace.core == core
    bank, row, _ = decode_address(trace.address[mask], geometry)
    return set(zip(bank.tolist(), row.tolist()))
