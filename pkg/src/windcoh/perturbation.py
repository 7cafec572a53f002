"""Perturbation of the swing Laplacian by wind farms.

Notation follows the linearize module.  Given nominal Jacobians at p0
(no farms) and barred Jacobians at p0_hat (farms attached):

    K11_bar = K11 + dk11,      K12_bar = K12 + dk12
    A1_bar  = A1 + dA1
    A3_bar  = A3 + sum_i gamma_i A3^i + dA3
    A3_bar^{-1} = A3^{-1} + X,  X = -(I + A3^{-1} x)^{-1} A3^{-1} x A3^{-1}
    x = sum_i gamma_i A3^i + dA3

and the perturbed coupling matrix

    L = L0 - K12 X A1 + kappa,
    kappa = dk11 - K12 (A3^{-1} + X) dA1 - dk12 (A3^{-1} + X)(A1 + dA1).

The (A3^{-1} + X) factor on the K12 dA1 term is required for L to equal
K11_bar - K12_bar A3_bar^{-1} A1_bar; the form without it is kept in the
ledger as ``kappa_short`` for comparison.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConditioningError, ValidationError
from . import linearize as lz

INV_COND_MAX = 1e12


def jacobian_shift(nominal: lz.JacobianSet, perturbed: lz.JacobianSet, A3_terms_sum=None):
    """(dk11, dk12, dA1, dA3).

    dA1 = A1_bar - A1 is non-zero only on generator P rows (-dk11) and
    generator Q rows (-dk21).  dA3 is the operating-point residual
    A3_bar - A3 - sum gamma_i A3^i.
    """
    if nominal.K11.shape != perturbed.K11.shape or nominal.A3.shape != perturbed.A3.shape:
        raise ValidationError("Jacobian sets have different dimensions")
    dk11 = perturbed.K11 - nominal.K11
    dk12 = perturbed.K12 - nominal.K12
    dA1 = perturbed.A1 - nominal.A1
    S = 0.0 if A3_terms_sum is None else A3_terms_sum
    dA3 = perturbed.A3 - nominal.A3 - S
    return dk11, dk12, dA1, dA3


def structural_A3_terms(zetas, farm_pos, m):
    """One 2m x 2m matrix per farm with zeta1..4 at the farm's (P|Q row, Re|Im column)."""
    zetas = np.atleast_2d(np.asarray(zetas, float))
    farm_pos = list(np.atleast_1d(farm_pos))
    if len(set(farm_pos)) != len(farm_pos):
        raise ValidationError("farms must sit on distinct buses")
    out = []
    for z, k in zip(zetas, farm_pos):
        T = np.zeros((2 * m, 2 * m))
        T[k, k], T[k, m + k] = z[0], z[1]
        T[m + k, k], T[m + k, m + k] = z[2], z[3]
        out.append(T)
    return out


def inversion_correction(A3, x, check=True):
    """X with (A3 + x)^{-1} = A3^{-1} + X (matrix inversion lemma form)."""
    A3 = np.asarray(A3, float)
    x = np.asarray(x, float)
    n = A3.shape[0]
    Ainv = np.linalg.inv(A3)
    P = np.eye(n) + Ainv @ x
    cond = np.linalg.cond(P)
    if not np.isfinite(cond) or cond > INV_COND_MAX:
        raise ConditioningError(f"I + A3^-1 x is badly conditioned (cond {cond:.3e}); "
                                "the penetration is too large for the expansion", condition=cond)
    X = -np.linalg.solve(P, Ainv @ x @ Ainv)
    if check:
        direct = np.linalg.inv(A3 + x)
        err = np.linalg.norm(direct - (Ainv + X)) / max(np.linalg.norm(direct), 1e-300)
        if err > 1e-8:
            raise ConditioningError(f"inversion lemma identity off by {err:.3e}", condition=cond)
    return X


@dataclass
class PerturbationLedger:
    """All matrices linking the wind-free and wind-integrated models."""
    K11: np.ndarray
    K12: np.ndarray
    A1: np.ndarray
    A3: np.ndarray
    A3_inv: np.ndarray
    Delta_k11: np.ndarray
    Delta_k12: np.ndarray
    Delta_A1: np.ndarray
    Delta_A3: np.ndarray
    A3_terms: list              # per-farm structural terms A3^i (unit gamma)
    gammas: tuple
    farm_pos: tuple
    x: np.ndarray
    X: np.ndarray
    L0: np.ndarray
    L: np.ndarray
    L_direct: np.ndarray
    minus_K12XA1: np.ndarray
    kappa_L: np.ndarray
    kappa_short: np.ndarray
    split: Optional["EpsilonSplit"] = None

    @property
    def A3_prime(self):
        return self.A3_terms[0] if len(self.A3_terms) == 1 else None

    @property
    def Delta_L0(self):
        return self.minus_K12XA1 + self.kappa_L

    @property
    def two_path_error(self):
        return float(np.linalg.norm(self.L - self.L_direct) / np.linalg.norm(self.L_direct))

    def matrices(self):
        """Name -> matrix for everything worth dumping."""
        out = {k: getattr(self, k) for k in (
            "Delta_k11", "Delta_k12", "Delta_A1", "Delta_A3", "x", "X", "L0", "L", "L_direct",
            "minus_K12XA1", "kappa_L", "kappa_short")}
        for i, T in enumerate(self.A3_terms):
            out[f"A3_term_{i + 1}"] = T
        if self.split is not None:
            out.update(self.split.matrices())
        return out


def build_ledger(nominal: lz.JacobianSet, perturbed: lz.JacobianSet) -> PerturbationLedger:
    """Quantify L versus L0 term by term and cross-check against direct Kron reduction."""
    if perturbed.wind is None:
        raise ValidationError("perturbed Jacobian set has no wind farms")
    w = perturbed.wind
    m = nominal.m
    terms = structural_A3_terms(w.zetas, w.bus_pos, m)
    S = sum(g * T for g, T in zip(w.gammas, terms))
    dk11, dk12, dA1, dA3 = jacobian_shift(nominal, perturbed, S)
    x = S + dA3
    K12, A1, A3 = nominal.K12, nominal.A1, nominal.A3
    A3_inv = np.linalg.inv(A3)
    X = inversion_correction(A3, x)
    L0 = lz.kron_reduce(nominal.K11, K12, A1, A3)
    Abar_inv = A3_inv + X
    minus_K12XA1 = -K12 @ X @ A1
    kappa = dk11 - K12 @ Abar_inv @ dA1 - dk12 @ Abar_inv @ (A1 + dA1)
    kappa_short = dk11 - K12 @ dA1 - dk12 @ Abar_inv @ (A1 + dA1)
    L = L0 + minus_K12XA1 + kappa
    L_direct = lz.kron_reduce(perturbed.K11, perturbed.K12, perturbed.A1, perturbed.A3)
    return PerturbationLedger(K11=nominal.K11, K12=K12, A1=A1, A3=A3, A3_inv=A3_inv,
                              Delta_k11=dk11, Delta_k12=dk12, Delta_A1=dA1, Delta_A3=dA3,
                              A3_terms=terms, gammas=tuple(w.gammas), farm_pos=tuple(w.bus_pos),
                              x=x, X=X, L0=L0, L=L, L_direct=L_direct, minus_K12XA1=minus_K12XA1,
                              kappa_L=kappa, kappa_short=kappa_short)


def perturbed_L(ledger: PerturbationLedger):
    """(L, -K12 X A1, kappa_L) with L = L0 - K12 X A1 + kappa_L."""
    return ledger.L, ledger.minus_K12XA1, ledger.kappa_L


# ----------------------------------------------------------------------------
# internal / external split of the perturbation

def neumann_series(Ainv, B, eps, tol=1e-8, max_terms=50):
    """S = sum_{k>=1} (-1)^k eps^{k-1} (Ainv B)^k Ainv, so (A + eps B)^{-1} = Ainv + eps S.

    Terms are added until the latest one is below ``tol`` relative to the
    running sum.  Returns (S, terms used, converged).
    """
    R = Ainv @ B
    term = -R @ Ainv
    S = term.copy()
    ref = max(np.linalg.norm(Ainv), 1e-300)
    k = 1
    converged = np.linalg.norm(term) <= tol * ref
    while not converged and k < max_terms:
        term = -eps * R @ term
        S += term
        k += 1
        tnorm = np.linalg.norm(term)
        if not np.isfinite(tnorm):
            break
        converged = tnorm * eps <= tol * ref
    return S, k, bool(converged)


@dataclass
class EpsilonSplit:
    epsilon: float
    A3_I: np.ndarray
    A3_E: np.ndarray
    P1a: np.ndarray
    X1eps: np.ndarray
    X2eps: np.ndarray
    P_a: np.ndarray
    P_b: np.ndarray
    L0_I: np.ndarray
    L0_E: np.ndarray
    Delta_L_I: np.ndarray
    Delta_L_E: np.ndarray
    series_terms: tuple
    fallback: bool
    reconstruction_error: float
    external_lines: tuple = ()

    def matrices(self):
        return {k: getattr(self, k) for k in (
            "A3_I", "A3_E", "P1a", "X1eps", "X2eps", "P_a", "P_b", "L0_I", "L0_E",
            "Delta_L_I", "Delta_L_E")}


def epsilon_split_perturbation(ledger: PerturbationLedger, A3_I, A3_E, eps, L0_I, L0_E,
                               tol=1e-8, max_terms=50) -> EpsilonSplit:
    """Split -K12 X A1 + kappa into internal and external parts.

    With A3 = A3_I + eps A3_E:
        A3^{-1} = Ai + eps X1,                    Ai = A3_I^{-1}
        (I + A3^{-1} x)^{-1} = P1a^{-1} + eps X2, P1a = I + Ai x
        X = -(P_a + eps P_b)
        P_a = P1a^{-1} Ai x Ai
        P_b = X2 (Ai + eps X1) x (Ai + eps X1) + P1a^{-1} X1 x (Ai + eps X1)
              + P1a^{-1} Ai x X1
    so that L = (L0_I + K12 P_a A1 + kappa) + eps (L0_E + K12 P_b A1).
    X1 and X2 are summed as series; if either fails to converge to
    ``tol`` within ``max_terms`` the exact closed forms are used instead
    and ``fallback`` is set.
    """
    x, K12, A1 = ledger.x, ledger.K12, ledger.A1
    n2 = A3_I.shape[0]
    Ai = np.linalg.inv(A3_I)
    X1, k1, ok1 = neumann_series(Ai, A3_E, eps, tol, max_terms)
    if not ok1:
        X1 = (ledger.A3_inv - Ai) / eps
    P1a = np.eye(n2) + Ai @ x
    P1a_inv = np.linalg.inv(P1a)
    Q = X1 @ x
    X2, k2, ok2 = neumann_series(P1a_inv, Q, eps, tol, max_terms)
    if not ok2:
        X2 = (np.linalg.inv(P1a + eps * Q) - P1a_inv) / eps
    fallback = not (ok1 and ok2)
    if fallback:
        warnings.warn("internal/external expansion did not converge; using closed forms",
                      RuntimeWarning, stacklevel=2)
    AiX = Ai + eps * X1
    P_a = P1a_inv @ Ai @ x @ Ai
    P_b = X2 @ AiX @ x @ AiX + P1a_inv @ X1 @ x @ AiX + P1a_inv @ Ai @ x @ X1
    dI = K12 @ P_a @ A1 + ledger.kappa_L
    dE = K12 @ P_b @ A1
    recon = (L0_I + dI) + eps * (L0_E + dE)
    err = float(np.linalg.norm(recon - ledger.L) / np.linalg.norm(ledger.L))
    return EpsilonSplit(epsilon=eps, A3_I=A3_I, A3_E=A3_E, P1a=P1a, X1eps=X1, X2eps=X2, P_a=P_a, P_b=P_b,
                        L0_I=L0_I, L0_E=L0_E, Delta_L_I=dI, Delta_L_E=dE, series_terms=(k1, k2),
                        fallback=fallback, reconstruction_error=err)


# ----------------------------------------------------------------------------
# equivalent Laplacian

@dataclass
class EquivalentLaplacian:
    L: np.ndarray
    L_eq: np.ndarray
    L0_I: Optional[np.ndarray] = None
    L0_E: Optional[np.ndarray] = None
    Delta_I: Optional[np.ndarray] = None     # internal part of L_eq - L0
    Delta_E: Optional[np.ndarray] = None     # external part, divided by eps
    epsilon: Optional[float] = None
    gammas: tuple = ()
    farm_buses: tuple = ()

    @property
    def L_eq_int(self):
        return None if self.Delta_I is None else self.L0_I + self.Delta_I

    @property
    def L_eq_ext(self):
        return None if self.Delta_E is None else self.L0_E + self.Delta_E

    def reconstruct(self):
        return self.L_eq_int + self.epsilon * self.L_eq_ext


def equivalent_laplacian(L, partition=None, L0_I=None, L0_E=None, eps=None,
                         gammas=(), farm_buses=()) -> EquivalentLaplacian:
    """L_eq: off-diagonals of L, diagonal = -(sum of the row's off-diagonals).

    With a partition and the nominal split, L_eq - (L0_I + eps L0_E) is
    divided along area boundaries: Delta_I keeps the intra-area
    off-diagonals, Delta_E the inter-area ones divided by eps, each with a
    Laplacian diagonal.  Delta_I is then block diagonal with zero row sums,
    so Delta_I U = 0.
    """
    L = np.asarray(L, float)
    Leq = lz.laplacian_from_offdiag(L)
    out = EquivalentLaplacian(L=L, L_eq=Leq, gammas=tuple(gammas), farm_buses=tuple(farm_buses))
    if partition is None:
        return out
    if L0_I is None or L0_E is None or eps is None:
        raise ValidationError("the equivalent-Laplacian split needs L0_I, L0_E and eps")
    lab = lz.as_labels(partition, L.shape[0])
    same = lz.area_mask(lab)
    D = Leq - (L0_I + eps * L0_E)
    out.Delta_I = lz.laplacian_from_offdiag(np.where(same, D, 0.0))
    out.Delta_E = lz.laplacian_from_offdiag(np.where(same, 0.0, D)) / eps
    out.L0_I, out.L0_E, out.epsilon = L0_I, L0_E, eps
    return out


def assemble_T_tilde(L0_I, L0_E, Delta_I, Delta_E, eps, M, xf: lz.TimeScaleTransform, R2=None):
    """Perturbed two-time-scale blocks.

    T~11 = C M^-1 dI U + eps C M^-1 (L0E + dE) U
    T~12 = C M^-1 dI G+ + eps C M^-1 (L0E + dE) G+
    T~21 = G M^-1 dI U + eps G M^-1 (L0E + dE) U
    T~22 = G M^-1 (L0I + dI) G+ + eps G M^-1 (L0E + dE) G+
    Returns the TwoTimeScaleModel and, when R2 is given, (C R2, G R2).
    """
    Minv = 1.0 / np.asarray(M, float)
    I_ = Minv[:, None] * Delta_I
    E_ = Minv[:, None] * (L0_E + Delta_E)
    I0 = Minv[:, None] * L0_I
    C, G, U, Gd = xf.C, xf.G, xf.U, xf.G_dagger
    T = lz.TwoTimeScaleModel(T11=C @ I_ @ U + eps * C @ E_ @ U,
                             T12=C @ I_ @ Gd + eps * C @ E_ @ Gd,
                             T21=G @ I_ @ U + eps * G @ E_ @ U,
                             T22=G @ (I0 + I_) @ Gd + eps * G @ E_ @ Gd)
    if R2 is None:
        return T
    return T, (C @ R2, G @ R2)


# ----------------------------------------------------------------------------
# dump

def write_csv(path, A):
    A = np.atleast_2d(np.asarray(A, float))
    with open(path, "w") as fh:
        for row in A:
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def read_csv(path):
    return np.loadtxt(path, delimiter=",", ndmin=2)


def dump_ledger(ledger: PerturbationLedger, outdir, extra=None):
    """One CSV per matrix plus manifest.json with Frobenius norms."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    mats = ledger.matrices()
    if extra:
        mats.update(extra)
    norms = {}
    for name in sorted(mats):
        write_csv(outdir / f"{name}.csv", mats[name])
        norms[name] = float(np.linalg.norm(mats[name]))
    info = {"norms": norms, "gammas": list(ledger.gammas),
            "farm_bus_positions": [int(p) for p in ledger.farm_pos],
            "two_path_error": ledger.two_path_error,
            "kappa_short_error": float(np.linalg.norm(ledger.kappa_short - ledger.kappa_L))}
    if ledger.split is not None:
        info.update({"epsilon": ledger.split.epsilon, "series_terms": list(ledger.split.series_terms),
                     "fallback": ledger.split.fallback,
                     "split_reconstruction_error": ledger.split.reconstruction_error})
    (outdir / "manifest.json").write_text(json.dumps(info, indent=1, sort_keys=True))
    return info
