import numpy as np
import pytest
from hypothesis import given, strategies as st

from memsched import (AccessKind, BankState, ConfigError, DramGeometry, TimingParams,
                      access_latency, apply_access, classify_access, decode_address,
                      encode_address)

T = TimingParams()


def test_zero_address_maps_to_origin():
    for geo in (DramGeometry(), DramGeometry(channels=2, banks_per_rank=4)):
        assert decode_address(0, geo) == (0, 0, 0)


def test_mapping_table(small_geometry):
    # Hand evaluation: chunk = addr >> 12; raw bank = chunk % 4; row = chunk // 4;
    # bank = raw ^ (row & 3).  16Ki -> chunk 4 -> raw 0, row 1 -> bank 1.
    expected = {0: (0, 0, 0), 4096: (1, 0, 0), 8192: (2, 0, 0), 16384: (1, 1, 0)}
    for addr, triple in expected.items():
        assert decode_address(addr, small_geometry) == triple


def test_same_row_region_same_row(small_geometry):
    b0, r0, c0 = decode_address(0x5000, small_geometry)
    b1, r1, c1 = decode_address(0x5FFF, small_geometry)
    assert (b0, r0) == (b1, r1)
    assert c1 == small_geometry.columns_per_row - 1


def test_xor_fold_spreads_rows(small_geometry):
    banks = {decode_address(i * 4 * 4096, small_geometry)[0] for i in range(4)}
    assert banks == {0, 1, 2, 3}


def test_non_power_of_two_banks_round_trip():
    geo = DramGeometry(channels=1, ranks_per_channel=3, banks_per_rank=2, rows_per_bank=64,
                       columns_per_row=8, row_size_bytes=1024)
    seen = set()
    for bank in range(6):
        for row in range(64):
            for col in range(8):
                addr = encode_address(bank, row, col, geo)
                assert decode_address(addr, geo) == (bank, row, col)
                seen.add(addr)
    assert len(seen) == 6 * 64 * 8


@given(st.integers(0, 15), st.integers(0, 8191), st.integers(0, 127))
def test_decode_is_injective(bank, row, column):
    geo = DramGeometry()
    addr = encode_address(bank, row, column, geo)
    assert addr < geo.capacity_bytes
    assert decode_address(addr, geo) == (bank, row, column)


def test_decode_vectorised_matches_scalar():
    geo = DramGeometry(channels=2)
    addrs = np.random.default_rng(3).integers(0, geo.capacity_bytes, 500, dtype=np.int64)
    bank, row, col = decode_address(addrs.astype(np.uint64), geo)
    for i, a in enumerate(addrs.tolist()):
        assert (bank[i], row[i], col[i]) == decode_address(a, geo)


@pytest.mark.parametrize("open_row,row,kind", [
    (5, 5, AccessKind.RowHit), (None, 5, AccessKind.RowMissEmpty), (3, 5, AccessKind.RowConflict)])
def test_classify(open_row, row, kind):
    assert classify_access(BankState(open_row=open_row), row) is kind


def test_latencies():
    assert access_latency(AccessKind.RowHit, T) == 12
    assert access_latency(AccessKind.RowMissEmpty, T) == 20
    assert access_latency(AccessKind.RowConflict, T) == 28


@given(st.integers(1, 50), st.integers(1, 50), st.integers(1, 50), st.integers(1, 50))
def test_latency_ordering(rcd, cas, rp, burst):
    t = TimingParams(rcd, cas, rp, burst)
    assert (access_latency(AccessKind.RowHit, t) < access_latency(AccessKind.RowMissEmpty, t)
            < access_latency(AccessKind.RowConflict, t))


def test_apply_access_hit():
    bank, done = apply_access(BankState(5, 100), 5, 100, T)
    assert bank == BankState(5, 112) and done == 112


def test_apply_access_opens_row():
    bank, done = apply_access(BankState(None, 0), 7, 0, T)
    assert bank.open_row == 7 and done == 20


def test_apply_access_back_to_back_hits():
    bank, done = apply_access(BankState(3, 0), 9, 10, T)
    assert classify_access(bank, 9) is AccessKind.RowHit
    bank2, _ = apply_access(bank, 9, done, T)
    assert bank2.ready_at == done + 12


def test_apply_access_before_ready_is_fatal():
    with pytest.raises(AssertionError):
        apply_access(BankState(1, 50), 1, 49, T)


def test_timing_from_ns():
    t = TimingParams.from_ns(12, 12, 12)
    assert (t.t_rcd, t.t_cas, t.t_rp, t.t_burst, t.cpu_per_dram_cycle) == (8, 8, 8, 4, 4)
    assert t == TimingParams()


@pytest.mark.parametrize("kwargs,field", [
    ({"row_size_bytes": 3000}, "geometry.row_size_bytes"),
    ({"banks_per_rank": 0}, "geometry.banks_per_rank"),
    ({"columns_per_row": 100}, "geometry.columns_per_row"),
])
def test_geometry_validation(kwargs, field):
    with pytest.raises(ConfigError) as e:
        DramGeometry(**kwargs)
    assert e.value.field == field


def test_timing_validation():
    with pytest.raises(ConfigError):
        TimingParams(t_cas=0)


def test_geometry_totals():
    geo = DramGeometry(channels=2, ranks_per_channel=2, banks_per_rank=8)
    assert geo.total_banks == 32 and geo.banks_per_channel == 16
