import pytest

from memsched import DramGeometry, MemoryRequest, PendingRequest
from memsched.spec import load_specs, shipped_spec


def pending(core, arrival, bank=0, row=0, pos=None):
    pos = arrival if pos is None else pos
    return PendingRequest(MemoryRequest(core, 0, False, pos), arrival, bank, row)


@pytest.fixture
def small_geometry():
    return DramGeometry(channels=1, ranks_per_channel=1, banks_per_rank=4,
                        rows_per_bank=1024, columns_per_row=128, row_size_bytes=4096)


@pytest.fixture(scope="session")
def mmnn_spec():
    return load_specs(shipped_spec("mmnn_4core.yaml"))[0]


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
