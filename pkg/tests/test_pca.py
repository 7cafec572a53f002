import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from windcoh import pca

T = np.linspace(0, 20, 400)


def two_groups(rng, sizes=(4, 5), noise=1e-3):
    rows, lab = [], []
    for k, size in enumerate(sizes):
        base = np.sin(0.9 * T) if k == 0 else np.cos(2.3 * T)
        for _ in range(size):
            rows.append(rng.uniform(0.8, 1.2) * base + noise * rng.normal(size=T.size))
            lab.append(k)
    return np.array(rows), np.array(lab)


# weightings

def test_rank_one_data():
    X = np.outer([1.0, 2.0, -0.5, 3.0], np.sin(T))
    with pytest.warns(RuntimeWarning, match="rank 1"):
        res = pca.pca_weightings(X, 2)
    assert res.K[:, res.selected_axes[1]].var(ddof=1) < 1e-10
    c = res.coords[:, 0]
    assert np.allclose(c / c[0], [1.0, 2.0, -0.5, 3.0], rtol=1e-8)


def test_two_group_signals_separate():
    X, lab = two_groups(np.random.default_rng(0))
    res = pca.pca_weightings(X, 2)
    C = res.coords
    d_in = max(np.ptp(C[lab == k], axis=0).max() for k in (0, 1))
    d_out = np.linalg.norm(C[lab == 0].mean(0) - C[lab == 1].mean(0))
    assert d_out > 3 * d_in


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.booleans())
def test_reconstruction(seed, center):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(6, 50)) + rng.normal(size=(6, 1))
    res = pca.pca_weightings(X, 3, center=center)
    target = X - X.mean(axis=1, keepdims=True) if center else X
    assert np.linalg.norm(target - res.reconstruct()) < 1e-10 * np.linalg.norm(target)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_axes_in_decreasing_variance(seed):
    X = np.random.default_rng(seed).normal(size=(7, 40))
    res = pca.pca_weightings(X, 4)
    v = res.K[:, res.selected_axes].var(axis=0, ddof=1)
    assert np.all(np.diff(v) <= 1e-12)
    rest = np.setdiff1d(np.arange(res.K.shape[1]), res.selected_axes)
    assert np.all(res.K[:, rest].var(axis=0, ddof=1) <= v.min() + 1e-12)


def test_bad_shapes():
    with pytest.raises(ValueError):
        pca.pca_weightings(np.ones((3, 10)), 4)
    with pytest.raises(ValueError):
        pca.pca_weightings(np.ones((5, 3)), 2)


def test_accepts_trajectory_matrix():
    from windcoh.dynsim import TrajectoryMatrix
    X, _ = two_groups(np.random.default_rng(1))
    tm = TrajectoryMatrix(data=X, dt=0.05, labels=tuple(f"s{i}" for i in range(len(X))))
    assert np.array_equal(pca.pca_weightings(tm, 2).coords, pca.pca_weightings(X, 2).coords)


# clustering

def test_tight_clusters_recovered():
    rng = np.random.default_rng(2)
    pts = np.vstack([rng.normal(0, 0.01, (5, 2)), rng.normal(3, 0.01, (6, 2))])
    lab = pca.cluster_coords(pts, 2)
    assert list(lab) == [0] * 5 + [1] * 6


def test_r_equal_rho_gives_singletons():
    pts = np.random.default_rng(3).normal(size=(6, 2))
    assert sorted(pca.cluster_coords(pts, 6)) == list(range(6))


def test_duplicates_share_a_cluster():
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(8, 3))
    pts[5] = pts[2]
    for r in (2, 3, 5):
        lab = pca.cluster_coords(pts, r)
        assert lab[5] == lab[2]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(1e-3, 1e3))
def test_grouping_scale_invariant(seed, scale):
    X, _ = two_groups(np.random.default_rng(seed), sizes=(3, 4), noise=0.05)
    a = pca.cluster_coords(pca.pca_weightings(X, 2).coords, 3)
    b = pca.cluster_coords(pca.pca_weightings(scale * X, 2).coords, 3)
    assert pca.pairwise_agreement(a, b) == 1.0


def test_clustering_is_deterministic():
    pts = np.random.default_rng(5).normal(size=(16, 4))
    assert np.array_equal(pca.cluster_coords(pts, 5), pca.cluster_coords(pts.copy(), 5))


# comparison

def test_identical_partitions_agree():
    lab = np.array([0, 0, 1, 2, 2, 3])
    cmp = pca.compare_partitions(lab, lab)
    assert cmp.agreement == 1.0 and cmp.moved_set == frozenset()


def test_one_machine_moved():
    model = np.repeat(np.arange(4), 4)
    other = model.copy()
    other[6] = 3
    cmp = pca.compare_partitions(other, model)
    assert cmp.agreement < 1.0 and cmp.moved_set == frozenset({6})


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=2, max_size=10), st.permutations(range(4)))
def test_agreement_one_iff_same_up_to_labels(lab, perm):
    lab = np.array(lab)
    relabel = np.array(perm)[lab]
    assert pca.pairwise_agreement(lab, relabel) == 1.0
    other = lab.copy()
    other[0] = (other[0] + 1) % 4
    same = all((lab[i] == lab[j]) == (other[i] == other[j])
               for i in range(len(lab)) for j in range(i + 1, len(lab)))
    assert (pca.pairwise_agreement(lab, other) == 1.0) == same


def test_coords_csv(tmp_path):
    X, _ = two_groups(np.random.default_rng(6))
    res = pca.pca_weightings(X, 2)
    pca.write_coords_csv(res, tmp_path / "pca.csv")
    lines = (tmp_path / "pca.csv").read_text().splitlines()
    assert len(lines) == 1 + len(X) and lines[1].startswith("machine_1,")
