import numpy as np
import pytest
from hypothesis import given, strategies as st

from memsched import (ConfigError, CoreProfile, DramGeometry, SyntheticParams, Trace,
                      TraceParseError, TraceRecord, format_trace_line, gen_synthetic,
                      parse_trace_line, read_trace, write_trace)
from memsched.workload import TRACE_HEADER, distinct_bank_rows


def params(*profiles):
    return SyntheticParams(tuple(profiles))


def test_parse_examples():
    assert parse_trace_line("100 2 R 0x1F400") == TraceRecord(2, 100, False, 0x1F400)
    assert parse_trace_line("0 0 W 0x0") == TraceRecord(0, 0, True, 0)
    assert parse_trace_line("7 1 R 0x1f400").address == 0x1F400


def test_parse_unknown_op():
    with pytest.raises(TraceParseError) as e:
        parse_trace_line("100 2 X 0x10", line_no=9)
    assert str(e.value) == "unknown op 'X' at line 9"
    assert e.value.line_no == 9


@pytest.mark.parametrize("line", ["1 2 R", "a 0 R 0x1", "1 0 R 16", "1 0 R 0x", "1 0 R 0xZZ",
                                  "-1 0 R 0x1", "1 0 R 0x1_0", "1 0 R 0x10000000000000000"])
def test_parse_rejects(line):
    with pytest.raises(TraceParseError):
        parse_trace_line(line)


def test_format_examples():
    assert format_trace_line(TraceRecord(2, 100, False, 0x1F400)) == "100 2 R 0x1F400"
    assert format_trace_line(TraceRecord(0, 0, True, 0)) == "0 0 W 0x0"


records = st.builds(TraceRecord, st.integers(0, 255), st.integers(0, 2**40),
                    st.booleans(), st.integers(0, 2**64 - 1))


@given(records)
def test_round_trip_property(rec):
    assert parse_trace_line(format_trace_line(rec)) == rec


def test_round_trip_1000_random_records():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        rec = TraceRecord(int(rng.integers(0, 64)), int(rng.integers(0, 2**40)),
                          bool(rng.integers(0, 2)), int(rng.integers(0, 2**63)) * 2 + 1)
        assert parse_trace_line(format_trace_line(rec)) == rec


def test_zero_intensity_is_empty():
    p = params(*[CoreProfile(intensity=0.0)] * 3)
    assert len(gen_synthetic(p, 1, 5000)) == 0


def test_generator_deterministic():
    p = params(CoreProfile(0.1), CoreProfile(0.05, locality=0.9))
    a, b = gen_synthetic(p, 42, 10_000), gen_synthetic(p, 42, 10_000)
    assert list(a) == list(b)
    assert list(a) != list(gen_synthetic(p, 43, 10_000))


def test_full_locality_single_row():
    geo = DramGeometry()
    p = params(*[CoreProfile(0.3, locality=1.0, bank_spread=1, working_set_rows=16)] * 4)
    tr = gen_synthetic(p, 5, 1000, geo)
    for c in range(4):
        assert len(distinct_bank_rows(tr, geo, c)) == 1


def test_rate_converges_to_intensity():
    tr = gen_synthetic(params(CoreProfile(0.05), CoreProfile(0.2)), 3, 200_000)
    counts = tr.per_core_counts(2) / 200_000
    assert counts == pytest.approx([0.05, 0.2], rel=0.03)


@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**32))
def test_monotone_intensity(lo, hi, seed):
    lo, hi = sorted((lo, hi))
    other = CoreProfile(0.1)
    n_lo = gen_synthetic(params(CoreProfile(lo), other), seed, 2000).per_core_counts(2)
    n_hi = gen_synthetic(params(CoreProfile(hi), other), seed, 2000).per_core_counts(2)
    assert n_hi[0] >= n_lo[0]
    assert n_hi[1] == n_lo[1]


def test_cores_never_share_rows():
    geo = DramGeometry()
    p = params(*[CoreProfile(0.2, locality=0.2, bank_spread=8, working_set_rows=64)] * 4)
    tr = gen_synthetic(p, 9, 5000, geo)
    sets = [distinct_bank_rows(tr, geo, c) for c in range(4)]
    for i in range(4):
        for j in range(i + 1, 4):
            assert not sets[i] & sets[j]


def test_trace_sorted_by_ready_then_core():
    tr = gen_synthetic(params(CoreProfile(0.3), CoreProfile(0.3)), 1, 1000)
    keys = list(zip(tr.ready_at.tolist(), tr.core.tolist()))
    assert keys == sorted(keys)


@pytest.mark.parametrize("profile,field", [
    (CoreProfile(intensity=1.5), "cores[0].intensity"),
    (CoreProfile(locality=-0.1), "cores[0].locality"),
    (CoreProfile(bank_spread=0), "cores[0].bank_spread"),
    (CoreProfile(working_set_rows=0), "cores[0].working_set_rows"),
    (CoreProfile(write_fraction=2), "cores[0].write_fraction"),
])
def test_invalid_params_name_field(profile, field):
    with pytest.raises(ConfigError) as e:
        SyntheticParams((profile,))
    assert e.value.field == field


def test_negative_length_rejected():
    with pytest.raises(ConfigError):
        gen_synthetic(params(CoreProfile()), 0, -1)


def test_write_and_read_trace(tmp_path):
    tr = gen_synthetic(params(CoreProfile(0.1), CoreProfile(0.05)), 7, 3000)
    path = tmp_path / "t.txt"
    n = write_trace(tr, path)
    lines = path.read_text().splitlines()
    assert lines[0] == TRACE_HEADER
    assert n == len(tr) == len(lines) - 1
    back = read_trace(path)
    assert list(back) == list(tr)


def test_read_trace_aborts_on_first_bad_line(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("# header\n\n0 0 R 0x0\n5 0 Q 0x40\n6 0 X 0x80\n")
    with pytest.raises(TraceParseError) as e:
        read_trace(path)
    assert e.value.line_no == 4


def test_read_trace_rejects_unsorted_core(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("10 0 R 0x0\n5 0 R 0x40\n")
    with pytest.raises(TraceParseError):
        read_trace(path)


def test_trace_from_records_sorts():
    tr = Trace.from_records([TraceRecord(1, 5, False, 0), TraceRecord(0, 5, True, 64),
                             TraceRecord(0, 1, False, 128)])
    assert [(r.ready_at, r.core_id) for r in tr] == [(1, 0), (5, 0), (5, 1)]
