import numpy as np
import pytest

from viscowri.grid import make_grid


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_grid():
    return make_grid(12, 10, 10.0, 10.0, npml=4)


@pytest.fixture(scope="session")
def tiny_case():
    """Small inclusion problem: (survey, m_true, alpha_true, m_init, alpha_init)."""
    from viscowri.grid import Acquisition, Rectangle, field_from_regions, velocity_to_slowness_sq
    from viscowri.scenario import INCLUSION_DISC, edge_positions, generate_data

    g = make_grid(25, 25, 20.0, 20.0, npml=8)
    rect = Rectangle((240.0, 240.0), 100.0, 200.0)
    m_true = velocity_to_slowness_sq(field_from_regions(g, 1500.0, [(rect, 1300.0)]))
    alpha_true = field_from_regions(g, 0.01, [(rect, 0.1)])
    acq = Acquisition(g, edge_positions(g, 1, 20.0), edge_positions(g, 8, 20.0))
    survey = generate_data(m_true, alpha_true, acq, [2.5, 5.0], disc=INCLUSION_DISC)
    m_init = np.full(g.n, velocity_to_slowness_sq(1500.0))
    return survey, m_true, alpha_true, m_init, np.zeros(g.n)


def pytest_terminal_summary(terminalreporter):
    try:
        from acceptance_log import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
