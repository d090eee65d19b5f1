"""Request buffer and the three scheduling disciplines.

All three pickers minimise one lexicographic key over the ready requests::

    (not row_hit, not from_selected_core, arrival_cycle, core_id, program_position)

FCFS ignores the first two components, FR-FCFS ignores the second, and the
core-aware picker uses all of them.  The trailing ``(core_id,
program_position)`` makes the order total, so picks are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from numba import njit

from .dram import BankState, NO_ROW
from .workload import MemoryRequest

FCFS = 0
FRFCFS = 1
CADS = 2

POLICY_CODES = {"FCFS": FCFS, "FR-FCFS": FRFCFS, "CADS": CADS}
POLICY_NAMES = {v: k for k, v in POLICY_CODES.items()}


@dataclass
class PendingRequest:
    request: MemoryRequest
    arrival_cycle: int
    bank: int
    row: int
    reissue_count: int = 0

    @property
    def core_id(self):
        return self.request.core_id


@dataclass
class RequestBuffer:
    capacity: int = 64
    entries: List[PendingRequest] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    @property
    def full(self):
        return len(self.entries) >= self.capacity

    def append(self, entry: PendingRequest):
        assert len(self.entries) < self.capacity, "request buffer overflow"
        self.entries.append(entry)

    def remove(self, entry: PendingRequest):
        self.entries.remove(entry)


@njit(cache=True)
def pick_candidate(cands, n, arrival, core, position, hit, mode, selected):
    """Position in ``cands[:n]`` of the winning request, or -1 if ``n == 0``.

    ``arrival``, ``core`` and ``position`` are indexed by request id
    (``cands[i]``); ``hit`` is indexed by candidate slot ``i``.
    """
    best = -1
    bh = bs = 0
    for i in range(n):
        r = cands[i]
        h = 0 if (mode != FCFS and hit[i]) else 1
        s = 0 if (mode == CADS and core[r] == selected) else 1
        if best >= 0:
            b = cands[best]
            if h != bh:
                if h > bh:
                    continue
            elif s != bs:
                if s > bs:
                    continue
            elif arrival[r] != arrival[b]:
                if arrival[r] > arrival[b]:
                    continue
            elif core[r] != core[b]:
                if core[r] > core[b]:
                    continue
            elif position[r] >= position[b]:
                continue
        best = i
        bh = h
        bs = s
    return best


def ready_set(buffer: RequestBuffer, banks: Sequence[BankState], now: int) -> List[PendingRequest]:
    return [p for p in buffer.entries if banks[p.bank].ready_at <= now]


def _pick(ready, banks, mode, selected=-1) -> Optional[PendingRequest]:
    n = len(ready)
    if n == 0:
        return None
    arrival = np.array([p.arrival_cycle for p in ready], dtype=np.int64)
    core = np.array([p.request.core_id for p in ready], dtype=np.int64)
    position = np.array([p.request.program_position for p in ready], dtype=np.int64)
    if banks is None:
        hit = np.zeros(n, dtype=np.bool_)
    else:
        hit = np.array([(banks[p.bank].open_row if banks[p.bank].open_row is not None
                         else NO_ROW) == p.row for p in ready], dtype=np.bool_)
    i = pick_candidate(np.arange(n, dtype=np.int64), n, arrival, core, position, hit,
                       mode, selected)
    return ready[i]


def fcfs_pick(ready: Sequence[PendingRequest]) -> Optional[PendingRequest]:
    """Oldest ready request."""
    return _pick(ready, None, FCFS)


def frfcfs_pick(ready: Sequence[PendingRequest], banks: Sequence[BankState]) -> Optional[PendingRequest]:
    """Oldest row hit if any, otherwise the oldest request."""
    return _pick(ready, banks, FRFCFS)


def cads_pick(selected_core: int, ready: Sequence[PendingRequest],
              banks: Sequence[BankState]) -> Optional[PendingRequest]:
    """Row hits of the selected core first, then any row hit, then the selected
    core's oldest, then the oldest overall."""
    return _pick(ready, banks, CADS, selected_core)
