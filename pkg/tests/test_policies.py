import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from memsched import (BankState, MemoryRequest, PendingRequest, RequestBuffer, cads_pick,
                      fcfs_pick, frfcfs_pick, ready_set)

from conftest import pending


def is_hit(p, banks):
    return banks[p.bank].open_row == p.row


def oracle(ready, banks, mode, selected=None):
    """Brute-force argmin over the documented priority key."""
    if not ready:
        return None

    def key(p):
        hit = mode != "FCFS" and is_hit(p, banks)
        sel = mode == "CADS" and p.core_id == selected
        return (not hit, not sel, p.arrival_cycle, p.core_id, p.request.program_position)
    return min(ready, key=key)


def random_buffer(rng, n, n_banks=4, n_cores=4):
    out, used = [], set()
    for _ in range(n):
        core = int(rng.integers(0, n_cores))
        pos = int(rng.integers(0, 50))
        while (core, pos) in used:
            pos += 1
        used.add((core, pos))
        out.append(PendingRequest(MemoryRequest(core, 0, False, pos), int(rng.integers(0, 6)),
                                  int(rng.integers(0, n_banks)), int(rng.integers(0, 3))))
    banks = [BankState(open_row=[None, 0, 1, 2][int(rng.integers(0, 4))]) for _ in range(n_banks)]
    return out, banks


def test_fcfs_examples():
    a, b = pending(0, 5), pending(1, 10)
    assert fcfs_pick([b, a]) is a
    assert fcfs_pick([]) is None
    c2, c0 = pending(2, 7), pending(0, 7)
    assert fcfs_pick([c2, c0]) is c0


def test_frfcfs_examples():
    banks = [BankState(open_row=1), BankState(open_row=9)]
    a = pending(0, 10, bank=0, row=1)
    b = pending(1, 5, bank=1, row=2)
    assert frfcfs_pick([a, b], banks) is a
    c, d = pending(0, 3, bank=1, row=4), pending(1, 2, bank=1, row=5)
    assert frfcfs_pick([c, d], banks) is d
    h7, h3 = pending(0, 7, bank=0, row=1), pending(1, 3, bank=0, row=1)
    assert frfcfs_pick([h7, h3], banks) is h3


def test_cads_examples():
    banks = [BankState(open_row=1), BankState(open_row=1)]
    a, b = pending(0, 10, bank=0, row=1), pending(1, 5, bank=1, row=1)
    assert cads_pick(0, [a, b], banks) is a
    a, b = pending(0, 5, bank=0, row=2), pending(1, 10, bank=1, row=1)
    assert cads_pick(0, [a, b], banks) is b
    a, b = pending(0, 5, bank=0, row=2), pending(1, 2, bank=1, row=3)
    assert cads_pick(0, [a, b], banks) is a


def test_ready_set_examples():
    banks = [BankState(None, 0), BankState(None, 3), BankState(None, 12)]
    buf = RequestBuffer(capacity=8)
    for i, bank in enumerate([0, 1, 2, 0, 1, 2]):
        buf.append(pending(i % 2, i, bank=bank))
    ready = ready_set(buf, banks, now=7)
    assert [p.bank for p in ready] == [0, 1, 0, 1]
    assert ready_set(buf, banks, now=20) == buf.entries
    assert ready_set(buf, banks, now=0) == [buf.entries[0], buf.entries[3]]


def test_buffer_capacity_is_enforced():
    buf = RequestBuffer(capacity=1)
    buf.append(pending(0, 0))
    assert buf.full
    with pytest.raises(AssertionError):
        buf.append(pending(0, 1))


def test_oracle_equivalence_1000_buffers():
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(1000):
        ready, banks = random_buffer(rng, int(rng.integers(0, 7)))
        sel = int(rng.integers(0, 4))
        mismatches += fcfs_pick(ready) is not oracle(ready, banks, "FCFS")
        mismatches += frfcfs_pick(ready, banks) is not oracle(ready, banks, "FR-FCFS")
        mismatches += cads_pick(sel, ready, banks) is not oracle(ready, banks, "CADS", sel)
    assert mismatches == 0


@pytest.mark.parametrize("n", range(1, 9))
def test_frfcfs_prefers_hits_exhaustively(n):
    rng = np.random.default_rng(n)
    base, _ = random_buffer(rng, n, n_banks=1)
    banks = [BankState(open_row=0)]
    for mask in itertools.product((0, 1), repeat=n):
        ready = [PendingRequest(p.request, p.arrival_cycle, 0, 0 if m else 1)
                 for p, m in zip(base, mask)]
        pick = frfcfs_pick(ready, banks)
        assert pick in ready
        if any(mask):
            assert is_hit(pick, banks)
        assert pick is oracle(ready, banks, "FR-FCFS")


buffers = st.integers(0, 2**32 - 1).flatmap(
    lambda seed: st.just(random_buffer(np.random.default_rng(seed), seed % 9)))


@given(buffers, st.integers(0, 3))
def test_cads_properties(buf, sel):
    ready, banks = buf
    pick = cads_pick(sel, ready, banks)
    assert (pick is None) == (not ready)
    if pick is not None:
        assert pick in ready
    others = [p for p in ready if p.core_id != sel]
    if len(others) == len(ready):
        assert pick is frfcfs_pick(ready, banks)
    if not others:
        assert pick is frfcfs_pick(ready, banks)
    if any(is_hit(p, banks) for p in ready):
        assert is_hit(pick, banks)
