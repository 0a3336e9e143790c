import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from snippetcov.data import SnippetDataset, Subject, validate_dataset

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_dataset(times, values, domain=(0.0, 1.0)):
    subjects = tuple(Subject(str(i), np.asarray(t, float), np.asarray(v, float)) for i, (t, v) in enumerate(zip(times, values)))
    return validate_dataset(SnippetDataset(domain[0], domain[1], subjects))


def random_dataset(rng, n=20, m_range=(1, 6), span=0.25, noise=1.0):
    times, values = [], []
    for _ in range(n):
        m = int(rng.integers(m_range[0], m_range[1] + 1))
        c = rng.uniform(span / 2, 1 - span / 2)
        t = np.sort(rng.uniform(c - span / 2, c + span / 2, m))
        times.append(t)
        values.append(np.sin(2 * np.pi * t) + noise * rng.standard_normal(m))
    return make_dataset(times, values)


@st.composite
def snippet_datasets(draw, max_subjects=8, max_m=5, min_m=1, min_subjects=1):
    n = draw(st.integers(min_subjects, max_subjects))
    times, values = [], []
    for _ in range(n):
        m = draw(st.integers(min_m, max_m))
        t = draw(st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=m, max_size=m))
        y = draw(st.lists(st.floats(-100.0, 100.0, allow_nan=False), min_size=m, max_size=m))
        times.append(t)
        values.append(y)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return make_dataset(times, values)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = []


def record_acceptance(label, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'}  {label}  [{detail}]"
    _ACCEPTANCE.append(line)
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
