"""Slow-coherency identification by pivoting on the slow eigenbasis, plus partition geometry.

Machines are indexed from 0 internally; reports add 1.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import SingularityError, ValidationError

TIE_TOL = 1e-12


@dataclass(frozen=True)
class SlowEigenspace:
    V: np.ndarray               # n x r real basis
    eigenvalues: np.ndarray     # the r selected eigenvalues of M^-1 L
    r: int
    gap_ratio: float            # |lambda_{r+1}| / |lambda_r|
    residual: float
    warnings: tuple = ()

    @property
    def frequencies(self):
        """sqrt(|lambda|) / 2 pi for the r - 1 slow modes (Hz)."""
        return np.sqrt(np.abs(self.eigenvalues[1:].real)) / (2 * np.pi)


def _real_basis(vecs, vals, tol=1e-10):
    """Real spanning set for the invariant subspace of the selected eigenvectors.

    Conjugate pairs contribute their real and imaginary parts, which are
    then orthogonalized against each other; every column is scaled to unit
    length so the basis does not depend on the eigensolver's normalization.
    """
    cols = []
    used = np.zeros(len(vals), bool)
    notes = []
    for k in range(len(vals)):
        if used[k]:
            continue
        used[k] = True
        v = vecs[:, k]
        scale = max(abs(vals[k]), 1.0)
        if abs(vals[k].imag) <= tol * scale:
            # rotate so the vector is real (eig may return a complex phase)
            j = np.argmax(np.abs(v))
            v = v * np.exp(-1j * np.angle(v[j]))
            cols.append(v.real)
            continue
        partner = None
        for j in range(k + 1, len(vals)):
            if not used[j] and abs(vals[j] - np.conj(vals[k])) <= 1e-8 * scale:
                partner = j
                break
        if partner is None:
            notes.append("conjugate partner outside the selected set; using the real part only")
            cols.append(v.real)
            continue
        used[partner] = True
        q, _ = np.linalg.qr(np.column_stack([v.real, v.imag]))
        cols.extend([q[:, 0], q[:, 1]])
    V = np.column_stack(cols)
    V = V / np.linalg.norm(V, axis=0)
    return V, tuple(notes)


def slow_eigenbasis(M, L, r: int) -> SlowEigenspace:
    """Eigenvectors of M^-1 L for the r eigenvalues smallest in magnitude."""
    M = np.asarray(M, float)
    L = np.asarray(L, float)
    n = len(M)
    if not 1 <= r <= n:
        raise ValidationError(f"need 1 <= r <= n, got r={r}, n={n}")
    A = L / M[:, None]
    vals, vecs = np.linalg.eig(A)
    order = np.lexsort((vals.imag, np.abs(vals)))
    vals, vecs = vals[order], vecs[:, order]
    sel = vals[:r]
    gap = float(np.abs(vals[r]) / np.abs(vals[r - 1])) if r < n and vals[r - 1] != 0 else np.inf
    notes = []
    if r < n and abs(abs(vals[r]) - abs(vals[r - 1])) <= 1e-6 * max(abs(vals[r]), 1e-300):
        notes.append(f"degenerate eigen-gap between eigenvalues {r} and {r + 1}")
    Vb, extra = _real_basis(vecs[:, :r], sel)
    notes.extend(extra)
    # residual of the complex eigenpairs
    Vc = vecs[:, :r]
    res = np.linalg.norm(A @ Vc - Vc * sel[None, :]) / np.linalg.norm(Vc)
    for w in notes:
        warnings.warn(w, RuntimeWarning, stacklevel=2)
    return SlowEigenspace(V=Vb, eigenvalues=sel, r=r, gap_ratio=gap, residual=float(res),
                          warnings=tuple(notes))


def reference_machines(V, tol=1e-12, normalize=True) -> list:
    """Pivot rows of Gaussian elimination with full pivoting, in pivot order.

    Columns are scaled to unit length first (``normalize``), which makes
    the choice independent of how each eigenvector happens to be scaled;
    plain full pivoting is not.
    """
    W = np.array(V, dtype=float, copy=True)
    if normalize and W.size:
        norms = np.linalg.norm(W, axis=0)
        W = W / np.where(norms > 0, norms, 1.0)
    n, r = W.shape
    rows = list(range(n))
    cols = list(range(r))
    refs = []
    scale = np.max(np.abs(W)) if W.size else 0.0
    for _ in range(r):
        sub = np.abs(W[np.ix_(rows, cols)])
        i, j = np.unravel_index(np.argmax(sub), sub.shape)
        if sub[i, j] <= tol * max(scale, 1e-300):
            raise SingularityError("slow eigenbasis is rank deficient; try a different r")
        pi, pj = rows[i], cols[j]
        refs.append(pi)
        piv = W[pi, pj]
        for rr in rows:
            if rr != pi:
                W[rr, :] -= W[rr, pj] / piv * W[pi, :]
        rows.remove(pi)
        cols.remove(pj)
    return refs


def grouping_matrix(V, refs) -> np.ndarray:
    """V_L = V V_r1^{-1}, rows in machine order (reference rows are identity rows)."""
    V = np.asarray(V, float)
    Vr1 = V[list(refs)]
    cond = np.linalg.cond(Vr1)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularityError("reference rows of V are singular; try a different r", condition=cond)
    return np.linalg.solve(Vr1.T, V.T).T


@dataclass(frozen=True)
class CoherencyPartition:
    areas: tuple                    # area k = tuple of machine indices, reference first
    reference_machines: tuple
    labels: np.ndarray              # area index per machine
    V_L: np.ndarray                 # n x r, machine order
    assignment_margins: np.ndarray  # top |V_L| minus runner-up, per machine
    ties: tuple = ()
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def r(self):
        return len(self.areas)

    @property
    def n(self):
        return len(self.labels)

    @property
    def frequencies(self):
        return np.sqrt(np.abs(self.eigenvalues[1:].real)) / (2 * np.pi)

    def as_sets(self, one_based=True):
        k = 1 if one_based else 0
        return [frozenset(i + k for i in a) for a in self.areas]

    def permuted(self):
        """(V_r = [V_r1; V_r2] row order, [I; L~])."""
        refs = list(self.reference_machines)
        rest = [i for i in range(self.n) if i not in refs]
        order = refs + rest
        return order, self.V_L[order]

    def to_dict(self):
        return {
            "areas": [[i + 1 for i in a] for a in self.areas],
            "reference_machines": [i + 1 for i in self.reference_machines],
            "margins": [float(x) for x in self.assignment_margins],
            "ties": [i + 1 for i in self.ties],
            "eigenvalues": [[float(v.real), float(v.imag)] for v in np.asarray(self.eigenvalues, complex)],
            "frequencies_hz": [float(f) for f in self.frequencies],
        }


def assign_areas(V_L, refs, eigenvalues=None) -> CoherencyPartition:
    """Row-wise argmax of |V_L|; ties go to the lowest area index and are flagged."""
    V_L = np.asarray(V_L, float)
    absV = np.abs(V_L)
    labels = np.argmax(absV, axis=1)
    srt = np.sort(absV, axis=1)
    margins = srt[:, -1] - (srt[:, -2] if V_L.shape[1] > 1 else 0.0)
    ties = tuple(int(i) for i in np.flatnonzero(margins <= TIE_TOL) if i not in refs)
    for k, ref in enumerate(refs):
        labels[ref] = k
    areas = []
    for k, ref in enumerate(refs):
        members = [ref] + [i for i in range(len(labels)) if labels[i] == k and i != ref]
        areas.append(tuple(int(i) for i in members))
    return CoherencyPartition(areas=tuple(areas), reference_machines=tuple(int(x) for x in refs),
                              labels=labels.astype(int), V_L=V_L, assignment_margins=margins,
                              ties=ties,
                              eigenvalues=np.zeros(0) if eigenvalues is None else np.asarray(eigenvalues))


def identify(M, L, r: int) -> CoherencyPartition:
    """Slow-coherency partition of M^-1 L into r areas, end to end."""
    es = slow_eigenbasis(M, L, r)
    refs = reference_machines(es.V)
    VL = grouping_matrix(es.V, refs)
    return assign_areas(VL, refs, es.eigenvalues)


def _contingency(l1, l2):
    a1, a2 = np.unique(l1), np.unique(l2)
    C = np.zeros((len(a1), len(a2)), dtype=int)
    for i, j in zip(np.searchsorted(a1, l1), np.searchsorted(a2, l2)):
        C[i, j] += 1
    return a1, a2, C


def best_matching(l1, l2):
    """Map labels of l2 onto labels of l1 maximizing overlap; returns relabelled l2."""
    l1, l2 = np.asarray(l1), np.asarray(l2)
    a1, a2, C = _contingency(l1, l2)
    # Ties between equally good matchings are broken by a bonus of
    # 2^-(i+1) per machine i kept in place (total < 1, so it never beats a
    # whole machine).  The kept set is then unique and the moved set is
    # the same whichever partition comes first.
    bonus = np.zeros(C.shape)
    np.add.at(bonus, (np.searchsorted(a1, l1), np.searchsorted(a2, l2)),
              0.5 ** (np.arange(len(l1)) + 1.0))
    ri, ci = linear_sum_assignment(-(C + bonus))
    mapping = {a2[c]: a1[r] for r, c in zip(ri, ci)}
    fresh = (l1.max() if l1.size else 0) + 1
    out = np.empty_like(l1)
    for k, lab in enumerate(l2):
        if lab not in mapping:
            mapping[lab] = fresh
            fresh += 1
        out[k] = mapping[lab]
    return out


def partition_distance(p1: CoherencyPartition, p2: CoherencyPartition):
    """(moved machines, reference changes) under the best area matching.

    Reference changes are (ref in p1, ref in p2) for matched areas whose
    reference differs.
    """
    if p1.n != p2.n:
        raise ValidationError("partitions cover different machine sets")
    l1, l2 = np.asarray(p1.labels), np.asarray(p2.labels)
    m2 = best_matching(l1, l2)
    moved = frozenset(int(i) for i in np.flatnonzero(m2 != l1))
    ref_changes = []
    for k2, ref2 in enumerate(p2.reference_machines):
        k1 = m2[ref2]
        if k1 < len(p1.reference_machines):
            # find the p2 area matched to p1 area k1
            ref1 = p1.reference_machines[k1]
            if ref1 != ref2 and m2[ref2] == k1:
                ref_changes.append((int(ref1), int(ref2)))
    return moved, tuple(sorted(ref_changes))
