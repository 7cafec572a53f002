"""Central finite-difference checks of every analytic Jacobian.

Each check returns ``(analytic, numeric, relative error)`` with the
Frobenius-norm relative error ||analytic - numeric|| / ||numeric||.
Step sizes are h_j = rel_step * max(1, |x_j|) per coordinate, so states of
very different magnitude (rotor currents versus shaft speeds) share one
rule.
"""
from __future__ import annotations

import numpy as np

from . import linearize as lz
from . import netmodel as nm
from . import windfarm as wf


def central_jacobian(f, x0, rel_step=1e-6):
    x0 = np.asarray(x0, float)
    f0 = np.asarray(f(x0), float)
    J = np.zeros((f0.size, x0.size))
    for j in range(x0.size):
        h = rel_step * max(1.0, abs(x0[j]))
        xp, xm = x0.copy(), x0.copy()
        xp[j] += h
        xm[j] -= h
        J[:, j] = (np.asarray(f(xp)) - np.asarray(f(xm))) / (2 * h)
    return J


def rel_error(A, B):
    A, B = np.asarray(A, float), np.asarray(B, float)
    nb = np.linalg.norm(B)
    if nb == 0:
        return float(np.linalg.norm(A))
    return float(np.linalg.norm(A - B) / nb)


def _check(A, fd):
    return A, fd, rel_error(A, fd)


def check_generator(case, op):
    """K11, K12 against -dP_s/d(delta, V) of the classical-machine output."""
    gp = case.gen_pos
    m = case.m
    K11, K12, K21, K22 = lz.generator_jacobians(case, op)
    V = op.V

    def P_of_delta(d):
        return nm.generator_power(d, V[gp].real, V[gp].imag, op.E, case.xd)[0]

    def PQ_of_V(x):
        Vc = x[:m] + 1j * x[m:]
        P, Q = nm.generator_power(op.delta0, Vc[gp].real, Vc[gp].imag, op.E, case.xd)
        return np.concatenate([P, Q])

    x0 = np.concatenate([V.real, V.imag])
    fdV = central_jacobian(PQ_of_V, x0)
    n = case.n
    return {"K11": _check(K11, -central_jacobian(P_of_delta, op.delta0)),
            "K12": _check(K12, -fdV[:n]),
            "K22": _check(K22, -fdV[n:])}


def check_network(case, op, jac=None):
    """A1, A2, A3 against the balance residual g(delta, z, V)."""
    Y = nm.build_admittance(case)
    jac = jac or lz.network_jacobians(case, op, Y)
    m = case.m
    x0 = np.concatenate([op.V.real, op.V.imag])
    out = {
        "A1": _check(jac.A1, central_jacobian(lambda d: nm.balance_residual(case, op, delta=d, Y=Y), op.delta0)),
        "A3": _check(jac.A3, central_jacobian(lambda x: nm.balance_residual(case, op, V=x, Y=Y), x0)),
    }
    if op.wind_states:
        z0 = np.concatenate([st.z for st in op.wind_states])
        out["A2"] = _check(jac.A2, central_jacobian(lambda z: nm.balance_residual(case, op, z=z, Y=Y), z0))
    return out


def check_wind_unit(state: wf.WindState):
    """A and the (v_qs, v_ds) input matrix of one unit against unit_derivatives."""
    spec = state.spec
    A, Bv = wf.unit_jacobians(state)

    def fz(z):
        return wf.unit_derivatives(z, state.v_qs, state.v_ds, spec, state.p_ref, state.q_ref)

    def fv(v):
        return wf.unit_derivatives(state.z, v[0], v[1], spec, state.p_ref, state.q_ref)

    return {"A": _check(A, central_jacobian(fz, state.z)),
            "Bv": _check(Bv, central_jacobian(fv, np.array([state.v_qs, state.v_ds])))}


def check_wind_farm(case, op, k=0):
    """B of farm k (dz'/dV through the fixed frame) and D1, D2 (dP_w, dQ_w / dV)."""
    st = op.wind_states[k]
    spec = case.wind_farms[k]
    pos = case.bus_pos[spec.bus]
    m = case.m
    lin = wf.linearize_wind(spec, st, pos, m, case.base_mva)
    x0 = np.array([op.V[pos].real, op.V[pos].imag])

    def fz(x):
        v_qs, v_ds = wf.frame_voltages(complex(x[0], x[1]), st.theta0)
        return wf.unit_derivatives(st.z, v_qs, v_ds, spec, st.p_ref, st.q_ref)

    def fpq(x):
        return np.array(wf.farm_power_at(st, st.z, complex(x[0], x[1]), case.base_mva))

    def fpq_z(z):
        return np.array(wf.farm_power_at(st, z, op.V[pos], case.base_mva))

    cols = [pos, m + pos]
    dPQ = central_jacobian(fpq, x0)
    dPQz = central_jacobian(fpq_z, st.z)
    return {"B": _check(lin.B[:, cols], central_jacobian(fz, x0)),
            "D": _check(np.vstack([lin.D1[0, cols], lin.D2[0, cols]]), dPQ),
            "C": _check(np.vstack([lin.C1, lin.C2]), dPQz)}


def run_all(case, op):
    """Every check at one operating point; name -> relative error."""
    errs = {}
    for name, (_, _, e) in check_generator(case, op).items():
        errs[name] = e
    for name, (_, _, e) in check_network(case, op).items():
        errs[name] = e
    for k, st in enumerate(op.wind_states):
        for name, (_, _, e) in check_wind_unit(st).items():
            errs[f"farm{k + 1}.{name}"] = e
        for name, (_, _, e) in check_wind_farm(case, op, k).items():
            errs[f"farm{k + 1}.{name}"] = e
    return errs
