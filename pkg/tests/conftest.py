import os

import pytest

from qmboot.spectra import SolveConfig, default_g_grid, sweep

_RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    """Store the verdict line for one acceptance criterion."""

    def _record(k: int, ok: bool, detail: str) -> bool:
        _RESULTS[k] = (bool(ok), detail)
        print(f"ACCEPTANCE {k:2d} {'PASS' if ok else 'FAIL'}: {detail}")
        return bool(ok)

    return _record


_SWEEPS: dict[int, object] = {}


@pytest.fixture(scope="session")
def sweeps():
    """26-point sweeps over g in [0, 5] for n = 2, 3, 4, computed once per session."""

    def get(n: int):
        if n not in _SWEEPS:
            _SWEEPS[n] = sweep(default_g_grid(), n, SolveConfig(depth=13), workers=os.cpu_count() or 1)
        return _SWEEPS[n]

    return get


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_RESULTS):
        ok, detail = _RESULTS[k]
        terminalreporter.write_line(f"ACCEPTANCE {k:2d} {'PASS' if ok else 'FAIL'}: {detail}")
