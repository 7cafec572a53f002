"""Principal-component weightings of trajectory matrices and clustering.

Rows of the trajectory matrix are signals (one per machine), columns are
time samples.  With M = U S V^T the weightings are K = U S; the c columns
of K with the largest sample variance are the coordinates of each
signal.  Rows are mean-centred first unless ``center=False``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from scipy.cluster.vq import kmeans, vq

from .coherency import best_matching


@dataclass(frozen=True)
class PCAResult:
    K: np.ndarray
    selected_axes: np.ndarray
    coords: np.ndarray
    singular_values: np.ndarray
    Vt: np.ndarray
    centered: bool

    def reconstruct(self):
        return self.K @ self.Vt


def pca_weightings(data, c: int, center: bool = True) -> PCAResult:
    """SVD-based weightings of a rho x s matrix (or TrajectoryMatrix)."""
    M = np.asarray(getattr(data, "data", data), float)
    rho, s = M.shape
    if not 1 <= c <= rho:
        raise ValueError(f"need 1 <= c <= rho, got c={c}, rho={rho}")
    if s < rho:
        raise ValueError("need at least as many samples as signals")
    X = M - M.mean(axis=1, keepdims=True) if center else M
    U, S, Vt = np.linalg.svd(X, full_matrices=False)
    K = U * S[None, :]
    var = K.var(axis=0, ddof=1) if rho > 1 else np.zeros(len(S))
    order = np.argsort(-var, kind="stable")
    rank = int(np.sum(S > S[0] * 1e-12)) if S.size and S[0] > 0 else 0
    if rank < c:
        warnings.warn(f"trajectory matrix has rank {rank} < c = {c}; padding with null axes",
                      RuntimeWarning, stacklevel=2)
    axes = order[:c]
    return PCAResult(K=K, selected_axes=axes, coords=K[:, axes], singular_values=S, Vt=Vt,
                     centered=center)


def _kmeans_once(X, r, first):
    """Lloyd iterations (scipy) from farthest-point seeds starting at ``first``."""
    centers = [X[first]]
    d2 = np.sum((X - X[first]) ** 2, axis=1)
    for _ in range(1, r):
        nxt = int(np.argmax(d2))        # farthest point; ties -> lowest index
        centers.append(X[nxt])
        d2 = np.minimum(d2, np.sum((X - X[nxt]) ** 2, axis=1))
    # with an initial codebook scipy runs Lloyd once, to a distortion threshold;
    # codes left empty (repeated points) are dropped
    C, _ = kmeans(X, np.array(centers), thresh=1e-12)
    labels, _ = vq(X, C)
    inertia = float(np.sum((X - C[labels]) ** 2))
    return labels, inertia


def _canonical(labels):
    mapping = {}
    out = np.empty_like(labels)
    for i, l in enumerate(labels):
        if l not in mapping:
            mapping[l] = len(mapping)
        out[i] = mapping[l]
    return out


def cluster_coords(coords, r: int, restarts: int = 100) -> np.ndarray:
    """Deterministic k-means with farthest-point seeding.

    Restart k seeds its first centre at point k mod rho; the lowest-inertia
    result is kept (first one on ties).  Labels are renumbered in order of
    first appearance.
    """
    X = np.asarray(coords, float)
    if X.ndim == 1:
        X = X[:, None]
    n = len(X)
    if not 1 <= r <= n:
        raise ValueError(f"need 1 <= r <= number of points, got r={r}")
    best, best_inertia = None, np.inf
    for k in range(restarts):
        labels, inertia = _kmeans_once(X, r, k % n)
        if inertia < best_inertia * (1 - 1e-12):
            best, best_inertia = labels, inertia
    return _canonical(best)


@dataclass(frozen=True)
class ClusterComparison:
    pca_labels: np.ndarray
    model_labels: np.ndarray
    agreement: float
    moved_set: frozenset


def pairwise_agreement(l1, l2) -> float:
    """Fraction of machine pairs on which the two partitions agree (together / apart)."""
    l1, l2 = np.asarray(l1), np.asarray(l2)
    n = len(l1)
    if n < 2:
        return 1.0
    iu = np.triu_indices(n, 1)
    s1 = (l1[:, None] == l1[None, :])[iu]
    s2 = (l2[:, None] == l2[None, :])[iu]
    return float(np.mean(s1 == s2))


def compare_partitions(pca_labels, model_labels) -> ClusterComparison:
    p = np.asarray(getattr(pca_labels, "labels", pca_labels))
    q = np.asarray(getattr(model_labels, "labels", model_labels))
    if len(p) != len(q):
        raise ValueError("partitions cover different machine sets")
    matched = best_matching(q, p)
    moved = frozenset(int(i) for i in np.flatnonzero(matched != q))
    return ClusterComparison(pca_labels=p, model_labels=q, agreement=pairwise_agreement(p, q),
                             moved_set=moved)


def write_coords_csv(result: PCAResult, path, labels=None):
    labels = labels or [f"machine_{i + 1}" for i in range(len(result.coords))]
    with open(path, "w") as fh:
        fh.write("signal," + ",".join(f"axis_{int(a) + 1}" for a in result.selected_axes) + "\n")
        for lab, row in zip(labels, result.coords):
            fh.write(lab + "," + ",".join("%.17g" % v for v in row) + "\n")
