import functools

import numpy as np
import pytest

from anglestab import scenario as scn
from anglestab.dynsim import simulate


@functools.lru_cache(maxsize=None)
def bundled(name):
    return scn.load(scn.bundled(name))


@functools.lru_cache(maxsize=None)
def snapshot(name):
    return scn.build_snapshot(bundled(name))


@functools.lru_cache(maxsize=None)
def trace(name):
    sc = bundled(name)
    return simulate(snapshot(name), scn.build_events(sc), scn.sim_config(sc))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
