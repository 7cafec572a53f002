import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from windcoh import linearize as lz
from windcoh import netmodel as nm
from windcoh import perturbation as pt
from windcoh import windfarm as wf
from windcoh.errors import ConditioningError

from conftest import laplacian, wind_case


def rowsum_ok(A, ulps=8):
    """Row sums vanish up to the rounding of the row's own entries."""
    A = np.asarray(A)
    return np.all(np.abs(A.sum(axis=1)) <= ulps * np.finfo(float).eps * np.abs(A).sum(axis=1) + 1e-300)


@pytest.fixture(scope="module")
def led66(nominal, bus66):
    return pt.build_ledger(nominal["jac"], bus66[2])


@pytest.fixture(scope="module")
def led3(nominal, three_farms):
    return pt.build_ledger(nominal["jac"], three_farms[2])


@pytest.fixture(scope="module")
def eq66(nominal, led66):
    L0_I, L0_E, eps = lz.split_internal_external(nominal["L0"], nominal["partition"])
    return pt.equivalent_laplacian(led66.L, nominal["partition"], L0_I, L0_E, eps)


# Jacobian shift

def test_identical_sets_have_zero_shift(nominal):
    jac = nominal["jac"]
    for D in pt.jacobian_shift(jac, jac):
        assert np.all(D == 0)


def test_shift_reconstructs(nominal, bus66):
    jac, bar = nominal["jac"], bus66[2]
    dk11, dk12, dA1, _ = pt.jacobian_shift(jac, bar)
    assert np.allclose(jac.K11 + dk11, bar.K11, rtol=1e-15, atol=0)
    assert np.allclose(jac.K12 + dk12, bar.K12, rtol=1e-15, atol=0)
    assert np.allclose(jac.A1 + dA1, bar.A1, rtol=1e-15, atol=0)


def test_dA1_zero_blocks(case68, led66):
    m = case68.m
    gen_rows = set(case68.gen_pos) | {m + p for p in case68.gen_pos}
    other = [k for k in range(2 * m) if k not in gen_rows]
    assert np.all(led66.Delta_A1[other] == 0)
    assert np.allclose(led66.Delta_A1[list(case68.gen_pos)], -led66.Delta_k11)


# structural A3 terms

def test_single_farm_term_has_four_nonzeros(led66):
    assert np.count_nonzero(led66.A3_prime) == 4


def test_three_farm_terms_on_distinct_rows(led3):
    S = sum(g * T for g, T in zip(led3.gammas, led3.A3_terms))
    assert np.count_nonzero(S) == 12
    assert len(np.flatnonzero(np.any(S != 0, axis=1))) == 6


def test_zero_zeta_gives_zero_term():
    assert np.all(pt.structural_A3_terms(np.zeros(4), [2], 5)[0] == 0)


def test_structural_terms_layout():
    T = pt.structural_A3_terms([1.0, 2.0, 3.0, 4.0], [1], 3)[0]
    assert (T[1, 1], T[1, 4], T[4, 1], T[4, 4]) == (1.0, 2.0, 3.0, 4.0)


# inversion lemma

def test_zero_x_gives_zero_X():
    A = np.eye(3) * 2 + 0.1
    assert np.all(pt.inversion_correction(A, np.zeros((3, 3))) == 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_inversion_lemma_random(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(5, 5)) + 5 * np.eye(5)
    x = 0.1 * rng.normal(size=(5, 5))
    X = pt.inversion_correction(A, x)
    direct = np.linalg.inv(A + x) - np.linalg.inv(A)
    assert np.linalg.norm(X - direct) <= 1e-10 * np.linalg.norm(np.linalg.inv(A + x))


@given(st.floats(0.01, 10.0))
def test_inversion_lemma_scalar_multiple(alpha):
    A = np.array([[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]])
    X = pt.inversion_correction(A, alpha * A)
    assert np.allclose(X, -(alpha / (1 + alpha)) * np.linalg.inv(A), rtol=1e-10, atol=1e-12)


def test_singular_update_raises():
    A = np.eye(3)
    with pytest.raises(ConditioningError):
        pt.inversion_correction(A, -A)


def test_inversion_identity_on_benchmark(led66, led3):
    for led in (led66, led3):
        direct = np.linalg.inv(led.A3 + led.x)
        assert np.linalg.norm(led.A3_inv + led.X - direct) / np.linalg.norm(direct) < 1e-8


# perturbed L

def test_two_path_equality(led66, led3):
    assert led66.two_path_error < 1e-8
    assert led3.two_path_error < 1e-8


def test_kappa_formula(led66):
    l = led66
    Ab = l.A3_inv + l.X
    kappa = l.Delta_k11 - l.K12 @ Ab @ l.Delta_A1 - l.Delta_k12 @ Ab @ (l.A1 + l.Delta_A1)
    assert np.array_equal(kappa, l.kappa_L)
    L, a, b = pt.perturbed_L(l)
    assert np.allclose(L, l.L0 + a + b, rtol=0, atol=0)


def test_short_kappa_breaks_two_path(led66):
    # without the (A3^-1 + X) factor on the K12 dA1 term the paths disagree
    L_short = led66.L0 + led66.minus_K12XA1 + led66.kappa_short
    err = np.linalg.norm(L_short - led66.L_direct) / np.linalg.norm(led66.L_direct)
    assert err > 1e-6


def test_continuity_in_gamma(case68, nominal):
    dist = [0.0]
    for g in (1, 10, 50, 100):
        _, _, jac = wind_case(case68, [(66, g)])
        led = pt.build_ledger(nominal["jac"], jac)
        dist.append(np.linalg.norm(laplacian(led.L) - nominal["L0"]))
    assert all(a < b for a, b in zip(dist, dist[1:]))
    # one unit perturbs L_eq about a hundredth as much as a hundred units
    assert dist[1] < 0.05 * dist[4]


# epsilon split

def test_neumann_series_converges_geometrically():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(6, 6)) + 6 * np.eye(6)
    B = rng.normal(size=(6, 6))
    eps = 0.2
    Ai = np.linalg.inv(A)
    exact = np.linalg.inv(A + eps * B)
    errs = []
    for k in (2, 4, 6, 8):
        S, used, _ = pt.neumann_series(Ai, B, eps, tol=0, max_terms=k)
        assert used == k
        errs.append(np.linalg.norm(Ai + eps * S - exact))
    ratios = [b / a for a, b in zip(errs, errs[1:])]
    assert all(r < 0.2 for r in ratios)
    S, _, ok = pt.neumann_series(Ai, B, eps)
    assert ok and np.linalg.norm(Ai + eps * S - exact) < 1e-8 * np.linalg.norm(exact)


def _split_inputs(case68, nominal, delta):
    """Internal/external split of A3 with a weak (delta-scaled) external part."""
    part = nominal["partition"]
    A3 = nominal["jac"].A3
    A3_I, A3_E1, _ = lz.split_A3(case68, nominal["op"], A3, part, 1.0)
    A3_I = A3 - delta * A3_E1
    L0_I, L0_E, eps0 = lz.split_internal_external(nominal["L0"], part)
    return A3_I, A3_E1, L0_I, L0_E * eps0 / delta


def test_split_series_path(case68, nominal, led66):
    delta = 1e-3
    A3_I, A3_E, L0_I, L0_E = _split_inputs(case68, nominal, delta)
    sp = pt.epsilon_split_perturbation(led66, A3_I, A3_E, delta, L0_I, L0_E)
    assert not sp.fallback
    assert sp.reconstruction_error < 1e-8


def test_split_small_eps_internal_term(case68, nominal, led66):
    delta = 1e-7
    A3_I, A3_E, L0_I, L0_E = _split_inputs(case68, nominal, delta)
    sp = pt.epsilon_split_perturbation(led66, A3_I, A3_E, delta, L0_I, L0_E)
    # as eps -> 0 the internal part alone carries the perturbation
    assert np.allclose(sp.Delta_L_I, nominal["jac"].K12 @ sp.P_a @ nominal["jac"].A1 + led66.kappa_L)
    assert np.linalg.norm(delta * sp.Delta_L_E) < 1e-4 * np.linalg.norm(sp.Delta_L_I)
    assert np.linalg.norm(sp.Delta_L_I - led66.Delta_L0) < 1e-4 * np.linalg.norm(led66.Delta_L0)


def test_split_fallback_on_benchmark(case68, nominal, led66):
    part = nominal["partition"]
    L0_I, L0_E, eps = lz.split_internal_external(nominal["L0"], part)
    A3_I, A3_E, _ = lz.split_A3(case68, nominal["op"], nominal["jac"].A3, part, eps)
    with pytest.warns(RuntimeWarning, match="did not converge"):
        sp = pt.epsilon_split_perturbation(led66, A3_I, A3_E, eps, L0_I, L0_E)
    assert sp.fallback
    assert sp.reconstruction_error < 1e-8


# equivalent Laplacian

def test_equivalent_laplacian_idempotent(nominal):
    L = laplacian(nominal["L0"])
    assert np.array_equal(pt.equivalent_laplacian(L).L_eq, L)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_equivalent_laplacian_rows(seed):
    rng = np.random.default_rng(seed)
    L = rng.normal(size=(7, 7))
    eq = pt.equivalent_laplacian(L)
    off = ~np.eye(7, dtype=bool)
    assert np.array_equal(eq.L_eq[off], L[off])
    assert rowsum_ok(eq.L_eq)


def test_equivalent_split_closure(nominal, eq66):
    U = lz.timescale_transform(nominal["partition"], nominal["case"].M).U
    for A in (eq66.L_eq, eq66.Delta_I, eq66.Delta_E):
        assert rowsum_ok(A)
    assert np.max(np.abs(eq66.Delta_I @ U)) < 1e-10
    assert np.allclose(eq66.reconstruct(), eq66.L_eq, atol=1e-12)


def test_machine1_couplings_shift(nominal, eq66):
    row = eq66.L_eq[0, 1:] - nominal["L0"][0, 1:]
    assert np.count_nonzero(np.abs(row) > 1e-6 * np.abs(nominal["L0"][0]).max()) >= 3


# perturbed two-time-scale model

def test_T_tilde_without_perturbation(nominal):
    M, part = nominal["case"].M, nominal["partition"]
    model = lz.ReducedSwingModel(M, nominal["L0"]).with_partition(part)
    xf = lz.timescale_transform(part, M)
    Z = np.zeros((16, 16))
    Tt = pt.assemble_T_tilde(model.L0_int, model.L0_ext, Z, Z, model.epsilon, M, xf)
    T = lz.assemble_T(model, xf)
    assert np.allclose(Tt.full(), T.full(), rtol=1e-13, atol=1e-13)


def test_T_tilde_structure_and_spectrum(nominal, eq66):
    M, part = nominal["case"].M, nominal["partition"]
    xf = lz.timescale_transform(part, M)
    C_part = xf.C @ (eq66.Delta_I / M[:, None]) @ xf.G_dagger
    assert np.max(np.abs(C_part)) < 1e-10
    Tt = pt.assemble_T_tilde(eq66.L0_I, eq66.L0_E, eq66.Delta_I, eq66.Delta_E, eq66.epsilon, M, xf)
    a = np.sort_complex(np.linalg.eigvals(Tt.full()))
    b = np.sort_complex(np.linalg.eigvals(eq66.L_eq / M[:, None]))
    assert np.max(np.abs(a - b)) < 1e-8 * np.max(np.abs(b))


# dump

def test_dump_ledger(tmp_path, led66):
    info = pt.dump_ledger(led66, tmp_path)
    assert (tmp_path / "manifest.json").exists()
    back = pt.read_csv(tmp_path / "L.csv")
    assert np.array_equal(back, led66.L)
    assert info["norms"]["X"] == pytest.approx(np.linalg.norm(led66.X))
