import numpy as np
import pytest

from distntt.comm import run_spmd


def spmd(p, fn, *args, **kwargs):
    """Per-rank results of ``fn(comm, *args)`` on ``p`` in-process ranks."""
    return run_spmd(p, fn, *args, **kwargs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def scratch_workdir(tmp_path, monkeypatch):
    monkeypatch.setenv("NTT_WORKDIR", str(tmp_path))


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance(request):
    """``record(number, name, ok, detail)``: print and keep one criterion line."""
    lines = request.config.stash[ACCEPTANCE_KEY]

    def record(number, name, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
        print(line)
        lines.append((number, line))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
