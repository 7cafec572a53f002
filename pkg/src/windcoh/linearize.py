"""Small-signal Jacobians, Kron reduction and the two-time-scale transform.

Conventions
-----------
* dV = [dV_Re(1..m), dV_Im(1..m)], buses in case order.
* Algebraic rows are stacked [P balance (m rows); Q balance (m rows)] in
  the same bus order.  The balance at bus j is
  g_j = (machine + wind injection) - load - V_j conj((Y V)_j).
* K11 = -dP_s/d delta, K12 = -dP_s/dV, K21 = -dQ_s/d delta, K22 = -dQ_s/dV,
  so M d2(delta)/dt2 = K11 d(delta) + K12 dV.
* With N_P = dP_net/dV and N_Q = dQ_net/dV the power-flow blocks are
  K1, K2 = N_P, N_Q on generator rows, K3, K4 = N_P, N_Q on wind rows and
  K5, K6 = -N_P, -N_Q on the remaining rows.  Then
      A3 = dg/dV  (rows -K1-K12 | D1-K3 | K5 and -K2-K22 | D2-K4 | K6),
      A1 = dg/d delta (-K11 on generator P rows, -K21 on generator Q rows),
      A2 = dg/dz  (C1 on wind P rows, C2 on wind Q rows).
* L0 = K11 - K12 A3^{-1} A1; M^{-1} L0 has non-positive eigenvalues, the
  oscillatory modes being +-j sqrt(|mu|).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import SingularityError, ValidationError
from . import netmodel as nm
from . import windfarm as wf

COND_WARN = 1e12


@dataclass(frozen=True)
class JacobianSet:
    K11: np.ndarray
    K12: np.ndarray
    K21: np.ndarray
    K22: np.ndarray
    N_P: np.ndarray
    N_Q: np.ndarray
    A1: np.ndarray
    A2: Optional[np.ndarray]
    A3: np.ndarray
    gen_pos: np.ndarray
    wind_pos: np.ndarray
    barred: bool = False
    wind: Optional[wf.StackedWind] = None

    @property
    def n(self):
        return self.K11.shape[0]

    @property
    def m(self):
        return self.N_P.shape[0]

    def _rows(self, kind):
        m = self.m
        if kind == "gen":
            return self.gen_pos
        if kind == "wind":
            return self.wind_pos
        other = np.setdiff1d(np.arange(m), np.concatenate([self.gen_pos, self.wind_pos]))
        return other

    @property
    def K1(self):
        return self.N_P[self._rows("gen")]

    @property
    def K2(self):
        return self.N_Q[self._rows("gen")]

    @property
    def K3(self):
        return self.N_P[self._rows("wind")]

    @property
    def K4(self):
        return self.N_Q[self._rows("wind")]

    @property
    def K5(self):
        return -self.N_P[self._rows("non")]

    @property
    def K6(self):
        return -self.N_Q[self._rows("non")]

    @property
    def D1(self):
        return None if self.wind is None else self.wind.D1

    @property
    def D2(self):
        return None if self.wind is None else self.wind.D2


def generator_partials(delta, V_Re, V_Im, E, xd):
    """Elementwise dP/d delta, dP/dV_Re, dP/dV_Im, dQ/d delta, dQ/dV_Re, dQ/dV_Im."""
    s, c = np.sin(delta), np.cos(delta)
    dP_dd = E / xd * (V_Re * c + V_Im * s)
    dP_dr = E / xd * s
    dP_di = -E / xd * c
    dQ_dd = E / xd * (-V_Re * s + V_Im * c)
    dQ_dr = (E * c - 2 * V_Re) / xd
    dQ_di = (E * s - 2 * V_Im) / xd
    return dP_dd, dP_dr, dP_di, dQ_dd, dQ_dr, dQ_di


def generator_jacobians(case: nm.NetworkCase, op: nm.OperatingPoint):
    """K11, K12, K21, K22 at ``op``; K12 and K22 are n x 2m."""
    n, m = case.n, case.m
    gp = case.gen_pos
    V = op.V[gp]
    dP_dd, dP_dr, dP_di, dQ_dd, dQ_dr, dQ_di = generator_partials(op.delta0, V.real, V.imag, op.E, case.xd)
    K11 = -np.diag(dP_dd)
    K21 = -np.diag(dQ_dd)
    K12 = np.zeros((n, 2 * m))
    K22 = np.zeros((n, 2 * m))
    idx = np.arange(n)
    K12[idx, gp] = -dP_dr
    K12[idx, m + gp] = -dP_di
    K22[idx, gp] = -dQ_dr
    K22[idx, m + gp] = -dQ_di
    return K11, K12, K21, K22


def network_flow_jacobian(Y, V):
    """N = d[P_net; Q_net]/d[V_Re, V_Im] for S_net = V conj(Y V)."""
    dS_de, dS_df = nm.complex_power_derivatives(Y, V)
    N_P = np.hstack([dS_de.real, dS_df.real])
    N_Q = np.hstack([dS_de.imag, dS_df.imag])
    return N_P, N_Q


def network_jacobians(case: nm.NetworkCase, op: nm.OperatingPoint, Y=None,
                      gen=None) -> JacobianSet:
    """Assemble the full Jacobian set at ``op``.

    Wind farms present in the case contribute D1, D2 (and A2 via C1, C2);
    the set is then flagged as barred.
    """
    if Y is None:
        Y = nm.build_admittance(case)
    m, n = case.m, case.n
    K11, K12, K21, K22 = gen if gen is not None else generator_jacobians(case, op)
    N_P, N_Q = network_flow_jacobian(Y, op.V)
    gp = case.gen_pos
    A3 = -np.vstack([N_P, N_Q])
    A3[gp] -= K12
    A3[m + gp] -= K22
    A1 = np.zeros((2 * m, n))
    A1[gp] = -K11
    A1[m + gp] = -K21
    wind = None
    A2 = None
    wpos = np.array(case.farm_pos, dtype=int) if case.wind_farms else np.zeros(0, dtype=int)
    if case.wind_farms:
        if len(op.wind_states) != len(case.wind_farms):
            raise ValidationError("operating point lacks wind states for the case's farms")
        lins = [wf.linearize_wind(f, st, int(case.bus_pos[f.bus]), m, case.base_mva)
                for f, st in zip(case.wind_farms, op.wind_states)]
        wind = wf.stack_wind(lins)
        A3[wpos] += wind.D1
        A3[m + wpos] += wind.D2
        A2 = np.zeros((2 * m, wind.nz))
        A2[wpos] = wind.C1
        A2[m + wpos] = wind.C2
    return JacobianSet(K11=K11, K12=K12, K21=K21, K22=K22, N_P=N_P, N_Q=N_Q, A1=A1, A2=A2, A3=A3,
                       gen_pos=np.array(gp), wind_pos=wpos, barred=bool(case.wind_farms), wind=wind)


def jacobians(case, op, Y=None):
    return network_jacobians(case, op, Y=Y)


def lu_solve_checked(A, B, what="A3"):
    """Solve A X = B by LU with partial pivoting; warn on bad conditioning."""
    try:
        lu = sla.lu_factor(A, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SingularityError(f"{what} could not be factorized") from exc
    if np.any(np.abs(np.diag(lu[0])) == 0):
        raise SingularityError(f"{what} is singular", condition=np.inf)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e15:
        raise SingularityError(f"{what} is numerically singular (cond {cond:.3e})", condition=cond)
    if cond > COND_WARN:
        warnings.warn(f"{what} is badly conditioned (cond {cond:.3e})", RuntimeWarning, stacklevel=2)
    return sla.lu_solve(lu, B)


def kron_reduce(K11, K12, A1, A3):
    """K11 - K12 A3^{-1} A1."""
    return K11 - K12 @ lu_solve_checked(A3, A1)


# ----------------------------------------------------------------------------
# partition helpers

def as_labels(partition, n=None):
    """Integer area label per machine from a partition object or sequence."""
    if hasattr(partition, "labels"):
        lab = np.asarray(partition.labels, dtype=int)
    elif len(partition) and not np.isscalar(partition[0]):
        lab = np.full(sum(len(a) for a in partition), -1, dtype=int)
        for k, area in enumerate(partition):
            lab[list(area)] = k
    else:
        lab = np.asarray(partition, dtype=int)
    if n is not None and len(lab) != n:
        raise ValidationError(f"partition covers {len(lab)} machines, expected {n}")
    if np.any(lab < 0):
        raise ValidationError("partition does not cover every machine")
    return lab


def laplacian_from_offdiag(W):
    """Keep the off-diagonal entries of W and set diag = -(row sum of off-diagonals)."""
    L = np.array(W, dtype=float, copy=True)
    np.fill_diagonal(L, 0.0)
    np.fill_diagonal(L, -L.sum(axis=1))
    return L


def area_mask(labels):
    labels = np.asarray(labels)
    return labels[:, None] == labels[None, :]


def split_internal_external(L0, partition):
    """L0 = L0_int + eps L0_ext with L0_int block diagonal by area.

    Both pieces get Laplacian diagonals.  eps is the worst-case ratio of
    external to internal coupling, max |external off-diagonal| over
    min |internal off-diagonal|, clipped to (0, 1]; it is 1 when either
    set of couplings is empty.  eps is diagnostic only.
    """
    L0 = np.asarray(L0, float)
    n = L0.shape[0]
    lab = as_labels(partition, n)
    same = area_mask(lab)
    off = ~np.eye(n, dtype=bool)
    L_int = laplacian_from_offdiag(np.where(same, L0, 0.0))
    ext_vals = np.abs(L0[off & ~same])
    int_vals = np.abs(L0[off & same])
    scale = np.max(np.abs(L0)) if L0.size else 1.0
    int_vals = int_vals[int_vals > 1e-14 * scale]
    if ext_vals.size == 0 or int_vals.size == 0 or ext_vals.max() == 0:
        eps = 1.0
    else:
        eps = float(min(1.0, ext_vals.max() / int_vals.min()))
    L_ext = laplacian_from_offdiag(np.where(same, 0.0, L0)) / eps
    return L_int, L_ext, eps


@dataclass(frozen=True)
class ReducedSwingModel:
    M: np.ndarray
    L0: np.ndarray
    L0_int: Optional[np.ndarray] = None
    L0_ext: Optional[np.ndarray] = None
    epsilon: Optional[float] = None

    @property
    def state_matrix(self):
        return self.L0 / self.M[:, None]

    def with_partition(self, partition):
        Li, Le, eps = split_internal_external(self.L0, partition)
        return ReducedSwingModel(self.M, self.L0, Li, Le, eps)


def reduced_model(case, op, jac=None, Y=None):
    jac = jac if jac is not None else network_jacobians(case, op, Y=Y)
    return ReducedSwingModel(M=case.M, L0=kron_reduce(jac.K11, jac.K12, jac.A1, jac.A3))


# ----------------------------------------------------------------------------
# two-time-scale transform

@dataclass(frozen=True)
class TimeScaleTransform:
    C: np.ndarray
    G: np.ndarray
    U: np.ndarray
    M_hat: np.ndarray
    G_dagger: np.ndarray
    areas: tuple

    @property
    def r(self):
        return self.U.shape[1]

    @property
    def forward(self):
        return np.vstack([self.C, self.G])

    @property
    def inverse(self):
        return np.hstack([self.U, self.G_dagger])


def _areas_from_labels(lab):
    order = []
    for a in lab:
        if a not in order:
            order.append(a)
    return tuple(tuple(int(i) for i in np.flatnonzero(lab == a)) for a in sorted(order))


def timescale_transform(partition, M) -> TimeScaleTransform:
    """Slow aggregation C = Mhat^{-1} U^T M and fast difference map G.

    Within each area the first machine (lowest index, or the order given
    when areas are passed explicitly) is the datum: q_f,j = d_j - d_1.
    G_dagger = M^-1 G^T (G M^-1 G^T)^-1 is the inertia-weighted right
    inverse of G.  It satisfies C G_dagger = 0, so [C; G]^-1 = [U, G_dagger]
    for any inertias; the unweighted G^T (G G^T)^-1 only does so when the
    machines of each area have equal inertia.
    """
    M = np.asarray(M, float)
    n = len(M)
    if hasattr(partition, "areas"):
        areas = tuple(tuple(a) for a in partition.areas)
    elif len(partition) and not np.isscalar(partition[0]):
        areas = tuple(tuple(int(i) for i in a) for a in partition)
    else:
        areas = _areas_from_labels(as_labels(partition, n))
    r = len(areas)
    U = np.zeros((n, r))
    G = np.zeros((n - r, n))
    row = 0
    for k, area in enumerate(areas):
        U[list(area), k] = 1.0
        first = area[0]
        for j in area[1:]:
            G[row, first] = -1.0
            G[row, j] = 1.0
            row += 1
    if row != n - r or not np.all(U.sum(axis=1) == 1):
        raise ValidationError("areas must be disjoint and cover every machine")
    M_hat = U.T @ M
    C = (U.T * M[None, :]) / M_hat[:, None]
    if n > r:
        GMi = G / M[None, :]
        G_dag = GMi.T @ np.linalg.inv(GMi @ G.T)
    else:
        G_dag = np.zeros((n, 0))
    return TimeScaleTransform(C=C, G=G, U=U, M_hat=M_hat, G_dagger=G_dag, areas=areas)


@dataclass(frozen=True)
class TwoTimeScaleModel:
    T11: np.ndarray
    T12: np.ndarray
    T21: np.ndarray
    T22: np.ndarray

    @property
    def r(self):
        return self.T11.shape[0]

    def full(self):
        return np.block([[self.T11, self.T12], [self.T21, self.T22]])

    def coupling_ratio(self):
        """max(|T12|, |T21|) / |T22| (2-norms); O(eps) for clustered systems."""
        t22 = np.linalg.norm(self.T22, 2) if self.T22.size else 0.0
        if t22 == 0:
            return np.inf
        return max(np.linalg.norm(self.T12, 2) if self.T12.size else 0.0,
                   np.linalg.norm(self.T21, 2) if self.T21.size else 0.0) / t22


def assemble_T(model: ReducedSwingModel, xf: TimeScaleTransform) -> TwoTimeScaleModel:
    """T11 = eps C M^-1 L0E U, T12 = eps C M^-1 L0E G+, T21 = eps G M^-1 L0E U,
    T22 = G M^-1 L0I G+ + eps G M^-1 L0E G+."""
    if model.L0_int is None:
        raise ValidationError("reduced model has no internal/external split; call with_partition first")
    Minv = 1.0 / model.M
    eps = model.epsilon
    E = Minv[:, None] * model.L0_ext
    I = Minv[:, None] * model.L0_int
    C, G, U, Gd = xf.C, xf.G, xf.U, xf.G_dagger
    return TwoTimeScaleModel(T11=eps * C @ E @ U, T12=eps * C @ E @ Gd,
                             T21=eps * G @ E @ U, T22=G @ I @ Gd + eps * G @ E @ Gd)


# ----------------------------------------------------------------------------
# area split of A3 by network branches

def bus_areas(case: nm.NetworkCase, labels):
    """Area of each bus: that of the generator nearest by series reactance."""
    pos = case.bus_pos
    m = case.m
    i = [pos[l.from_bus] for l in case.lines]
    j = [pos[l.to_bus] for l in case.lines]
    w = [1.0 / l.B for l in case.lines]
    g = csr_matrix((w + w, (i + j, j + i)), shape=(m, m))
    dist = dijkstra(g, directed=False, indices=case.gen_pos)
    nearest = np.argmin(dist, axis=0)          # ties -> lowest generator index
    return np.asarray(labels)[nearest]


def split_A3(case: nm.NetworkCase, op: nm.OperatingPoint, A3, partition, eps):
    """A3 = A3_I + eps A3_E where A3_E carries the tie lines between areas.

    Buses inherit the area of their nearest generator; a line is external
    when its ends lie in different areas.  Because the network part of
    A3 is linear in Y, the external lines' contribution is exactly
    -d S_net/dV evaluated with their admittance alone.
    """
    lab = as_labels(partition, case.n)
    ba = bus_areas(case, lab)
    pos = case.bus_pos
    ext = [l for l in case.lines if ba[pos[l.from_bus]] != ba[pos[l.to_bus]]]
    Y_ext = nm.build_admittance(case, lines=ext, shunts=False)
    N_P, N_Q = network_flow_jacobian(Y_ext, op.V)
    ext_part = -np.vstack([N_P, N_Q])
    return A3 - ext_part, ext_part / eps, tuple(ext)
