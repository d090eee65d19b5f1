"""DRAM geometry, per-bank row-buffer state and latency classification.

Every request is modeled as a single access whose latency depends only on the
state of the target bank's row buffer (open-page policy).  Timing is kept in
DRAM clock cycles.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .errors import ConfigError

# Address-mapping scheme identifier.  Bumped whenever decode_address changes.
ADDRESS_MAPPING = "xor-v1"

NO_ROW = -1

ROW_HIT = 0
ROW_MISS_EMPTY = 1
ROW_CONFLICT = 2


class AccessKind(enum.IntEnum):
    RowHit = ROW_HIT
    RowMissEmpty = ROW_MISS_EMPTY
    RowConflict = ROW_CONFLICT


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class DramGeometry:
    channels: int = 1
    ranks_per_channel: int = 2
    banks_per_rank: int = 8
    rows_per_bank: int = 8192
    columns_per_row: int = 128
    row_size_bytes: int = 8192

    def __post_init__(self):
        for name in ("channels", "ranks_per_channel", "banks_per_rank",
                     "rows_per_bank", "columns_per_row", "row_size_bytes"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"geometry.{name}", f"must be an integer >= 1, got {value!r}")
        if not _is_pow2(self.row_size_bytes):
            raise ConfigError("geometry.row_size_bytes",
                              f"must be a power of two, got {self.row_size_bytes}")
        if not _is_pow2(self.columns_per_row) or self.columns_per_row > self.row_size_bytes:
            raise ConfigError("geometry.columns_per_row",
                              "must be a power of two no larger than row_size_bytes")

    @property
    def total_banks(self) -> int:
        return self.channels * self.ranks_per_channel * self.banks_per_rank

    @property
    def banks_per_channel(self) -> int:
        return self.ranks_per_channel * self.banks_per_rank

    @property
    def column_bytes(self) -> int:
        return self.row_size_bytes // self.columns_per_row

    @property
    def capacity_bytes(self) -> int:
        return self.total_banks * self.rows_per_bank * self.row_size_bytes


@dataclass(frozen=True)
class TimingParams:
    """Access timing in DRAM cycles.

    Defaults are DDR3-1333 (1.5 ns clock): 12 ns t_cas/t_rcd/t_rp round to 8
    cycles, burst length 8 at double data rate is 4 cycles, and a 2.66 GHz
    core clock gives 4 CPU cycles per DRAM cycle.
    """

    t_rcd: int = 8
    t_cas: int = 8
    t_rp: int = 8
    t_burst: int = 4
    cpu_per_dram_cycle: int = 4

    def __post_init__(self):
        for name in ("t_rcd", "t_cas", "t_rp", "t_burst", "cpu_per_dram_cycle"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"timing.{name}", f"must be an integer >= 1, got {value!r}")

    @classmethod
    def from_ns(cls, t_rcd_ns, t_cas_ns, t_rp_ns, burst_length=8, clock_ns=1.5,
                cpu_per_dram_cycle=4):
        """Convert nanosecond timings to whole DRAM cycles (rounded to nearest)."""
        def cyc(ns):
            return max(1, int(round(ns / clock_ns)))
        return cls(t_rcd=cyc(t_rcd_ns), t_cas=cyc(t_cas_ns), t_rp=cyc(t_rp_ns),
                   t_burst=max(1, burst_length // 2), cpu_per_dram_cycle=cpu_per_dram_cycle)


@dataclass(frozen=True)
class BankState:
    open_row: Optional[int] = None
    ready_at: int = 0


def decode_address(address, geometry: DramGeometry):
    """Map a byte address to ``(bank, row, column)``.

    Bit slices from low to high: byte within row, then the bank, then the row.
    The bank field is folded with the low bits of the row (XOR when the bank
    count is a power of two, modular addition otherwise) so that the same row
    index in neighbouring regions lands on different banks.

    Works elementwise on numpy integer arrays as well as on Python ints.
    """
    nb = geometry.total_banks
    shift = geometry.row_size_bytes.bit_length() - 1
    if isinstance(address, np.ndarray):
        address = address.astype(np.uint64)
        chunk = (address >> np.uint64(shift)).astype(np.int64)
        offset = (address & np.uint64(geometry.row_size_bytes - 1)).astype(np.int64)
    else:
        address = int(address)
        chunk = address >> shift
        offset = address & (geometry.row_size_bytes - 1)
    raw_bank = chunk % nb
    row = (chunk // nb) % geometry.rows_per_bank
    if _is_pow2(nb):
        bank = raw_bank ^ (row & (nb - 1))
    else:
        bank = (raw_bank + row) % nb
    column = offset // geometry.column_bytes
    return bank, row, column


def encode_address(bank, row, column, geometry: DramGeometry):
    """Inverse of :func:`decode_address` within the configured capacity."""
    nb = geometry.total_banks
    shift = geometry.row_size_bytes.bit_length() - 1
    if _is_pow2(nb):
        raw_bank = bank ^ (row & (nb - 1))
    else:
        raw_bank = (bank - row) % nb
    chunk = row * nb + raw_bank
    if isinstance(chunk, np.ndarray):
        return (chunk.astype(np.uint64) << np.uint64(shift)) | \
            np.asarray(column * geometry.column_bytes, dtype=np.uint64)
    return (int(chunk) << shift) | int(column * geometry.column_bytes)


@njit(cache=True)
def classify_code(open_row, row):
    if open_row == row:
        return ROW_HIT
    if open_row == NO_ROW:
        return ROW_MISS_EMPTY
    return ROW_CONFLICT


@njit(cache=True)
def latency_cycles(kind, t_rcd, t_cas, t_rp, t_burst):
    if kind == ROW_HIT:
        return t_cas + t_burst
    if kind == ROW_MISS_EMPTY:
        return t_rcd + t_cas + t_burst
    return t_rp + t_rcd + t_cas + t_burst


def classify_access(bank: BankState, row: int) -> AccessKind:
    open_row = NO_ROW if bank.open_row is None else bank.open_row
    return AccessKind(classify_code(open_row, row))


def access_latency(kind: AccessKind, timing: TimingParams) -> int:
    return int(latency_cycles(int(kind), timing.t_rcd, timing.t_cas, timing.t_rp, timing.t_burst))


def apply_access(bank: BankState, row: int, issue_cycle: int, timing: TimingParams):
    """Issue an access to ``row``; returns the new bank state and completion cycle.

    The bank must be idle (``issue_cycle >= bank.ready_at``).  The row stays
    open afterwards.
    """
    assert issue_cycle >= bank.ready_at, \
        f"bank busy until {bank.ready_at}, issue attempted at {issue_cycle}"
    completion = issue_cycle + access_latency(classify_access(bank, row), timing)
    return BankState(open_row=row, ready_at=completion), completion
