import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from windcoh import netmodel as nm
from windcoh.errors import DivergenceError, ValidationError

from conftest import small_case


def two_bus(B=10.0, load=0.0, shunt=0.0):
    return small_case([(1, 2, B)], [(1, 0.1, 0.3, 0.0, 1.0), (2, 0.1, 0.3, 0.0, 1.0)],
                      loads={2: (load, 0.0)}, slack=1, shunts={1: shunt})


# admittance

def test_two_bus_admittance_entries():
    Y = nm.build_admittance(two_bus(10.0))
    # physical sign: a line of susceptance B contributes +jB off-diagonal, -jB on the diagonal
    assert Y[0, 1] == pytest.approx(10j)
    assert Y[1, 0] == pytest.approx(10j)
    assert Y[0, 0] == pytest.approx(-10j)
    assert Y[1, 1] == pytest.approx(-10j)


def test_shunt_adds_to_diagonal_only():
    Y0 = nm.build_admittance(two_bus(10.0))
    Y1 = nm.build_admittance(two_bus(10.0, shunt=0.5))
    D = Y1 - Y0
    assert D[0, 0] == pytest.approx(0.5j)
    assert np.count_nonzero(np.abs(D) > 1e-15) == 1


def test_ring_row_sums_equal_shunts():
    shunts = {1: 0.1, 2: 0.2, 3: 0.3}
    c = small_case([(1, 2, 5), (2, 3, 5), (3, 1, 5)], [(1, 1, 0.3, 0, 1), (2, 1, 0.3, 0, 1)],
                   slack=1, shunts=shunts)
    Y = nm.build_admittance(c)
    hand = np.array([[-10, 5, 5], [5, -10, 5], [5, 5, -10]]) * 1j + np.diag([0.1j, 0.2j, 0.3j])
    assert np.allclose(Y, hand, atol=1e-14)
    assert np.allclose(Y.sum(axis=1), [0.1j, 0.2j, 0.3j])


def test_admittance_symmetric_benchmark(case68):
    Y = nm.build_admittance(case68)
    assert np.array_equal(Y, Y.T)


# power flow

def test_no_load_case_is_flat():
    c = small_case([(1, 2, 5), (2, 3, 4)], [(1, 1, 0.3, 0, 1), (3, 1, 0.3, 0, 1)], slack=1)
    op = nm.solve_power_flow(c)
    assert np.allclose(np.angle(op.V), 0, atol=1e-12)
    assert np.allclose(op.S_gen.real, 0, atol=1e-10)
    assert np.allclose(op.delta0, op.delta0[0], atol=1e-10)


def test_two_bus_angle_matches_closed_form():
    c = two_bus(B=5.0, load=0.5)
    op = nm.solve_power_flow(c)
    V1, V2 = op.V
    expected = math.asin(0.5 / (5.0 * abs(V1) * abs(V2)))
    assert np.angle(V1) - np.angle(V2) == pytest.approx(expected, abs=1e-10)
    assert op.S_gen[0].real == pytest.approx(0.5, abs=1e-10)


def test_benchmark_converges_and_balances(case68, nominal):
    op = nominal["op"]
    assert op.mismatch < 1e-8
    # lossless: injections sum to zero, generation equals load
    assert abs(op.S_inj.real.sum()) < 1e-8
    assert op.S_gen.real.sum() == pytest.approx(case68.P_load.sum(), abs=1e-8)
    assert case68.P_load.sum() * case68.base_mva == pytest.approx(17620.7, rel=1e-6)


def test_power_flow_residual_vanishes(case68, nominal):
    g = nm.balance_residual(case68, nominal["op"])
    assert np.max(np.abs(g)) < 1e-8


def test_power_flow_divergence_is_reported():
    c = two_bus(B=5.0, load=8.0)          # beyond the transfer limit of the line
    with pytest.raises(DivergenceError):
        nm.solve_power_flow(c, max_iter=15)


def test_slack_defaults_to_largest_inertia():
    c = small_case([(1, 2, 5), (2, 3, 4)], [(1, 1, 0.3, 0, 1), (3, 5, 0.3, 0, 1)])
    assert c.slack_index == 1


# validation

def test_valid_two_bus_has_no_findings():
    assert nm.validate_case(two_bus()) == []


def test_generator_on_missing_bus():
    c = two_bus()
    bad = nm.NetworkCase(buses=c.buses, lines=c.lines,
                         generators=c.generators + (nm.SynchronousGenerator(bus=9, M=1, xd_prime=0.3, p_set=0.0),),
                         wind_farms=(), slack=0)
    codes = [f.code for f in nm.validate_case(bad)]
    assert codes.count("dangling-reference") == 1


def test_duplicate_bus_id():
    c = two_bus()
    bad = nm.NetworkCase(buses=c.buses + (c.buses[0],), lines=c.lines, generators=c.generators,
                         wind_farms=(), slack=0)
    codes = [f.code for f in nm.validate_case(bad)]
    assert codes.count("duplicate-id") == 1


def test_resistive_line_rejected():
    c = two_bus()
    ln = c.lines[0]
    bad = nm.NetworkCase(buses=c.buses, lines=(nm.Line(ln.from_bus, ln.to_bus, ln.B, 0.0, 0.01),),
                         generators=c.generators, wind_farms=(), slack=0)
    assert [f.code for f in nm.validate_case(bad)] == ["resistive-line"]
    with pytest.raises(ValidationError):
        nm.check_case(bad)


def test_case_round_trip(tmp_path, case68):
    p = tmp_path / "c.json"
    nm.save_case(case68, p)
    back = nm.load_case(p)
    assert back.buses == case68.buses and back.lines == case68.lines
    assert back.generators == case68.generators and back.slack == case68.slack
    json.loads(p.read_text())


# properties

@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(2.0, 20.0), min_size=3, max_size=6),
       st.lists(st.floats(0.0, 0.5), min_size=3, max_size=6))
def test_random_chain_flow_is_lossless(Bs, loads):
    k = min(len(Bs), len(loads))
    lines = [(i + 1, i + 2, Bs[i]) for i in range(k)]
    c = small_case(lines, [(1, 1, 0.3, 0, 1.0), (k + 1, 1, 0.3, 0, 1.0)],
                   loads={i + 2: (0.1 * loads[i], 0.0) for i in range(k - 1)}, slack=1)
    op = nm.solve_power_flow(c)
    assert np.max(np.abs(nm.balance_residual(c, op))) < 1e-8
    assert abs(op.S_inj.real.sum()) < 1e-8
    Y = nm.build_admittance(c)
    assert np.array_equal(Y, Y.T)
