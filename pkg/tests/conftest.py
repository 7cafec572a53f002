import warnings

import numpy as np
import pytest

from windcoh import coherency as ch
from windcoh import linearize as lz
from windcoh import netmodel as nm
from windcoh import windfarm as wf


def small_case(lines, gens, loads=None, slack=None, farms=(), shunts=None):
    """Build a NetworkCase from compact tuples.

    lines: (from, to, B); gens: (bus, M, xd, p_set, v_set); loads: {bus: (P, Q)}.
    """
    loads = loads or {}
    shunts = shunts or {}
    ids = sorted({b for l in lines for b in l[:2]} | {g[0] for g in gens})
    d = {
        "name": "toy",
        "buses": [{"id": i, "P_load": loads.get(i, (0, 0))[0], "Q_load": loads.get(i, (0, 0))[1],
                   "B": shunts.get(i, 0.0)} for i in ids],
        "lines": [{"from": a, "to": b, "b": B} for a, b, B in lines],
        "generators": [{"bus": g[0], "M": g[1], "xd_prime": g[2], "p_set": g[3], "v_set": g[4]} for g in gens],
        "slack_generator": slack,
    }
    case = nm.case_from_dict(d)
    return case.with_farms(list(farms)) if farms else case


@pytest.fixture(scope="session")
def case68():
    return nm.load_builtin()


@pytest.fixture(scope="session")
def nominal(case68):
    op = nm.solve_power_flow(case68)
    jac = lz.network_jacobians(case68, op)
    L0 = lz.kron_reduce(jac.K11, jac.K12, jac.A1, jac.A3)
    part = ch.identify(case68.M, L0, 5)
    return {"case": case68, "op": op, "jac": jac, "L0": L0, "partition": part}


def wind_case(case68, farms):
    cf = case68.with_farms([wf.make_farm(b, g) for b, g in farms])
    op = nm.solve_power_flow(cf)
    return cf, op, lz.network_jacobians(cf, op)


@pytest.fixture(scope="session")
def bus66(case68):
    return wind_case(case68, [(66, 650)])


@pytest.fixture(scope="session")
def three_farms(case68):
    return wind_case(case68, [(32, 200), (66, 250), (57, 200)])


@pytest.fixture(autouse=True)
def _quiet_expansion_warning():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="internal/external expansion")
        yield


def laplacian(W):
    W = np.asarray(W, float)
    return lz.laplacian_from_offdiag(W)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
