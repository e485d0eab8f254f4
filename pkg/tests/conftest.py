import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from opl.datagen import generate_separated_dataset
from opl.netcore import ArchSpec, init_network

settings.register_profile("default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def small_net(m=8, L=2, d=1, input_dim=6, seed=0):
    return init_network(ArchSpec(input_dim, m, d, L), seed)


def small_data(n=4, input_dim=6, seed=0, **kw):
    return generate_separated_dataset(n, input_dim, 0.1, seed=seed, **kw)


@pytest.fixture
def net_and_data():
    return small_net(m=16, L=3), small_data(5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=lambda k: (int(k.split()[0]), k)):
        ok, detail = results[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {key}: {detail}")
