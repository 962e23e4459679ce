import numpy as np
import pytest

# classic 15-test worked example, in input order
BH15 = [
    0.6528, 0.7590, 0.0298, 0.4262, 0.0459, 0.0278, 0.0001, 0.0019,
    0.0004, 0.0201, 1.0000, 0.5719, 0.3240, 0.0095, 0.0344,
]
BH15_REJECTED = {0.0001, 0.0019, 0.0004, 0.0095}
SPLIT_8_7 = (BH15[:8], BH15[8:])


def random_batch(rng, m_max=10_000):
    """Mixed null/signal p-values; sometimes with ties or exact grid values."""
    m = int(rng.integers(1, m_max + 1))
    alpha = float(rng.choice([0.01, 0.05, 0.1, 0.2, rng.uniform(0.001, 0.5)]))
    values = rng.random(m)
    pi1 = rng.uniform(0, 0.3)
    signal = rng.random(m) < pi1
    values[signal] *= 10.0 ** -rng.uniform(1, 6)
    kind = rng.integers(0, 4)
    if kind == 1 and m > 1:
        # duplicates
        values[rng.integers(0, m, m // 3)] = values[rng.integers(0, m)]
    elif kind == 2:
        # values sitting exactly on step thresholds
        k = rng.integers(1, m + 1, max(1, m // 10))
        values[rng.integers(0, m, k.size)] = k * alpha / m
    return values, alpha


def random_partition(rng, m, max_chunks=20, allow_empty=True):
    n = int(rng.integers(1, max_chunks + 1))
    if allow_empty:
        cuts = np.sort(rng.integers(0, m + 1, n - 1))
    else:
        n = min(n, m)
        cuts = np.sort(rng.choice(np.arange(1, m), n - 1, replace=False)) if n > 1 else []
    return [int(c) for c in cuts]


def split_at(values, cuts):
    return np.split(np.asarray(values), cuts)


@pytest.fixture
def bh15():
    return list(BH15)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance bookkeeping: one PASS/FAIL line per criterion in the summary
ACCEPTANCE = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    ACCEPTANCE[marker.args[0]] = (marker.args[1], call.excinfo is None)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {n}: {title}")
