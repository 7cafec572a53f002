from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from windcoh import fdcheck
from windcoh import linearize as lz
from windcoh import netmodel as nm

from conftest import laplacian, small_case

TABLE1 = [[4, 0, 1, 2, 3, 5, 6, 7, 8], [12, 9, 10, 11], [13], [14], [15]]


def sorted_eigs(A):
    v = np.linalg.eigvals(A)
    return v[np.lexsort((v.imag, v.real))]


# generator partials

def test_single_machine_dP_ddelta():
    dP_dd = lz.generator_partials(0.0, 1.0, 0.0, 1.0, 0.5)[0]
    assert dP_dd == pytest.approx(2.0)


def test_symmetric_machines_have_equal_K11():
    c = small_case([(1, 2, 5.0)], [(1, 1, 0.3, 0, 1), (2, 1, 0.3, 0, 1)], slack=1)
    op = nm.solve_power_flow(c)
    K11 = lz.generator_jacobians(c, op)[0]
    assert K11[0, 0] == pytest.approx(K11[1, 1], rel=1e-14)


def test_generator_jacobians_vs_finite_differences(case68, nominal, bus66):
    for cs, op in [(case68, nominal["op"]), bus66[:2]]:
        for name, (_, _, err) in fdcheck.check_generator(cs, op).items():
            assert err < 1e-5, name


def test_network_jacobians_vs_finite_differences(case68, nominal, bus66):
    for cs, op in [(case68, nominal["op"]), bus66[:2]]:
        for name, (_, _, err) in fdcheck.check_network(cs, op).items():
            assert err < 1e-5, name


# block layout

def test_A1_zero_blocks(case68, nominal):
    A1 = nominal["jac"].A1
    m = case68.m
    gen_rows = set(case68.gen_pos) | {m + p for p in case68.gen_pos}
    other = [k for k in range(2 * m) if k not in gen_rows]
    assert np.all(A1[other] == 0)
    assert np.all(np.count_nonzero(A1[list(case68.gen_pos)], axis=1) == 1)


def test_farm_changes_A3_only_at_its_bus(case68, bus66):
    case, op, jac = bus66
    plain = lz.network_jacobians(case68, replace(op, wind_states=()))
    D = jac.A3 - plain.A3
    m, pos = case.m, case.bus_pos[66]
    rows = set(np.flatnonzero(np.any(D != 0, axis=1)))
    cols = set(np.flatnonzero(np.any(D != 0, axis=0)))
    assert rows <= {pos, m + pos} and cols <= {pos, m + pos}
    assert np.allclose(D[pos], jac.wind.D1[0], rtol=1e-12, atol=1e-12)
    assert np.allclose(D[m + pos], jac.wind.D2[0], rtol=1e-12, atol=1e-12)


# Kron reduction

def test_nominal_L0_is_laplacian(nominal):
    L0, M = nominal["L0"], nominal["case"].M
    scale = np.max(np.abs(L0))
    assert np.max(np.abs(L0.sum(axis=1))) < 1e-8 * scale
    assert np.allclose(L0, L0.T, atol=1e-8 * scale)
    ev = np.linalg.eigvals(L0 / M[:, None])
    assert np.sum(np.abs(ev) < 1e-6) == 1
    assert np.max(ev.real) < 1e-8


def test_toy_L0_equals_reduced_stiffness():
    # three machines, one hub bus, no load: flat profile, E = V = 1
    lines = [(1, 4, 4.0), (2, 4, 5.0), (3, 4, 6.0), (1, 2, 2.0)]
    xd = [0.2, 0.25, 0.4]
    c = small_case(lines, [(1, 1.0, xd[0], 0, 1), (2, 2.0, xd[1], 0, 1), (3, 3.0, xd[2], 0, 1)], slack=1)
    op = nm.solve_power_flow(c)
    jac = lz.network_jacobians(c, op)
    L0 = lz.kron_reduce(jac.K11, jac.K12, jac.A1, jac.A3)
    # susceptance matrix over [internal nodes 1..3, buses 1..4]
    B = np.zeros((7, 7))
    def link(i, j, b):
        B[i, j] += b; B[j, i] += b; B[i, i] -= b; B[j, j] -= b
    for k, x in enumerate(xd):
        link(k, 3 + k, 1.0 / x)
    for a, b, s in lines:
        link(3 + a - 1, 3 + b - 1, s)
    Bred = B[:3, :3] - B[:3, 3:] @ np.linalg.solve(B[3:, 3:], B[3:, :3])
    assert np.allclose(L0, laplacian(Bred), atol=1e-10)


# internal / external split

def test_split_single_area(nominal):
    L0 = nominal["L0"]
    Li, Le, eps = lz.split_internal_external(L0, [0] * 16)
    assert eps == 1.0 and np.all(Le == 0)
    assert np.allclose(Li, L0, atol=1e-12)


def test_split_singletons(nominal):
    Li, Le, eps = lz.split_internal_external(nominal["L0"], list(range(16)))
    assert np.all(Li == 0)
    assert np.allclose(Li + eps * Le, laplacian(nominal["L0"]))


def test_split_two_area_ratio():
    W = np.zeros((4, 4))
    W[0, 1] = W[2, 3] = 10.0
    W[1, 2] = W[0, 3] = 1.0
    W = W + W.T
    L = laplacian(W)
    Li, Le, eps = lz.split_internal_external(L, [0, 0, 1, 1])
    assert eps == pytest.approx(0.1)
    assert np.allclose(Li + eps * Le, L)
    for A in (Li, Le):
        assert np.allclose(A.sum(axis=1), 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_split_reconstructs_random_laplacian(seed):
    rng = np.random.default_rng(seed)
    n = rng.integers(3, 9)
    W = rng.uniform(0.1, 5, (n, n))
    L = laplacian(W + W.T)
    lab = rng.integers(0, 3, n)
    Li, Le, eps = lz.split_internal_external(L, lab)
    assert 0 < eps <= 1
    assert np.allclose(Li + eps * Le, L, atol=1e-12)
    assert np.all(Li[lab[:, None] != lab[None, :]] == 0)


# time-scale transform

def test_one_area_equal_inertia_C():
    xf = lz.timescale_transform([0] * 4, np.ones(4))
    assert np.allclose(xf.C, 0.25)


def test_G_blocks_for_sizes_3_2():
    xf = lz.timescale_transform([[0, 1, 2], [3, 4]], np.ones(5))
    expected = np.zeros((3, 5))
    expected[:2, :3] = [[-1, 1, 0], [-1, 0, 1]]
    expected[2, 3:] = [-1, 1]
    assert np.array_equal(xf.G, expected)


def test_transform_inverse_benchmark(nominal):
    xf = lz.timescale_transform(nominal["partition"], nominal["case"].M)
    assert np.max(np.abs(xf.forward @ xf.inverse - np.eye(16))) < 1e-10
    assert np.allclose(xf.C.sum(axis=1), 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_transform_inverse_random(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 12))
    r = int(rng.integers(1, n + 1))
    lab = np.concatenate([np.arange(r), rng.integers(0, r, n - r)])
    rng.shuffle(lab)
    M = rng.uniform(0.01, 10, n)
    xf = lz.timescale_transform(lab, M)
    assert np.max(np.abs(xf.forward @ xf.inverse - np.eye(n))) < 1e-10
    assert np.max(np.abs(xf.inverse @ xf.forward - np.eye(n))) < 1e-10


# two-time-scale model

def test_T_similar_to_swing_matrix(nominal):
    M = nominal["case"].M
    model = lz.ReducedSwingModel(M, nominal["L0"]).with_partition(nominal["partition"])
    T = lz.assemble_T(model, lz.timescale_transform(nominal["partition"], M))
    a = sorted_eigs(T.full())
    b = sorted_eigs(nominal["L0"] / M[:, None])
    assert np.max(np.abs(a - b)) < 1e-8 * max(1.0, np.max(np.abs(b)))


def test_one_area_T11_vanishes(nominal):
    M = nominal["case"].M
    model = lz.ReducedSwingModel(M, nominal["L0"]).with_partition([0] * 16)
    T = lz.assemble_T(model, lz.timescale_transform([0] * 16, M))
    assert np.all(T.T11 == 0)


def test_coupling_blocks_vanish_with_eps(nominal):
    M = nominal["case"].M
    m = lz.ReducedSwingModel(M, nominal["L0"]).with_partition(nominal["partition"])
    xf = lz.timescale_transform(nominal["partition"], M)
    norms = []
    for eps in (1e-1, 1e-3, 1e-5):
        T = lz.assemble_T(replace(m, epsilon=eps), xf)
        norms.append(max(np.linalg.norm(T.T12), np.linalg.norm(T.T21)))
    assert norms[0] > norms[1] > norms[2]
    assert norms[2] < 1e-3 * norms[0]
