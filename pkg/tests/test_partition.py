import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pobk.partition import (
    CosineTable,
    classify_orthogonal,
    compute_centroids,
    cosine_table,
    kmeans,
    kmeans_distance_partition,
    kmeans_row_partition,
    random_partition,
    standardized_distances,
    uniform_partition,
    zn_nn_metrics,
)
from pobk.sparse import SparseMatrix

from conftest import banded_system


def sizes(blocks):
    return [len(b) for b in blocks]


def test_uniform_partition():
    assert uniform_partition(10, 2) == [range(0, 5), range(5, 10)]
    assert sizes(uniform_partition(10, 3)) == [3, 3, 4]
    assert uniform_partition(5, 5) == [range(i, i + 1) for i in range(5)]
    for m, k in [(3, 4), (3, 0)]:
        with pytest.raises(ValueError):
            uniform_partition(m, k)


@settings(max_examples=60, deadline=None)
@given(m=st.integers(1, 200), data=st.data())
def test_partitions_cover_rows(m, data):
    k = data.draw(st.integers(1, m))
    for blocks in (uniform_partition(m, k), random_partition(m, k, np.random.default_rng(m))):
        assert len(blocks) == k
        allrows = np.sort(np.concatenate([np.asarray(b) for b in blocks]))
        assert np.array_equal(allrows, np.arange(m))
        assert all(len(b) > 0 for b in blocks)
    assert sizes(uniform_partition(m, k))[:-1] == [m // k] * (k - 1)


def test_centroids():
    v = np.array([1.0, 0.0, 2.0])
    A = SparseMatrix.from_dense(np.vstack([v, v, np.eye(3)[:2]]))
    p = compute_centroids(A, np.array([1.0, 2.0, 3.0, 4.0]), [range(0, 2), range(2, 4)])
    assert np.allclose(p.centroids[0], v)
    assert np.allclose(p.centroids[1], [0.5, 0.5, 0])
    assert np.allclose(p.centroid_rhs, [1.5, 3.5])
    with pytest.raises(ValueError):
        compute_centroids(A, np.zeros(4), [range(0, 2), range(1, 4)])


def test_centroids_match_dense_mean(rng):
    A, f, _ = banded_system(rng, 20, 2)
    blocks = [np.array([1, 5, 9]), np.setdiff1d(np.arange(20), [1, 5, 9])]
    p = compute_centroids(A, f, blocks)
    D = A.toarray()
    for b, c, fc in zip(blocks, p.centroids, p.centroid_rhs):
        acc = np.zeros(20)
        for r in b:
            acc += D[r]
        assert np.allclose(c, acc / len(b), rtol=1e-14, atol=1e-15)
        assert np.isclose(fc, f[b].sum() / len(b))


def table_from(cen):
    A = SparseMatrix.from_dense(np.asarray(cen, dtype=float))
    return cosine_table(compute_centroids(A, np.zeros(A.nrows), [[i] for i in range(A.nrows)]))


def test_cosine_examples():
    assert table_from([[1, 0], [0, 1]]).C[0, 1] == 0
    assert np.isclose(table_from([[1, 2, 3], [2, 4, 6]]).C[0, 1], 1)
    # hand dot product: 1 / (sqrt2 * sqrt2)
    assert np.isclose(table_from([[1, 1, 0], [1, 0, 1]]).C[0, 1], 0.5)
    assert np.isclose(table_from([[1, 1, 0], [-1, 0, -1]]).C[0, 1], 0.5)
    with pytest.raises(ValueError, match="block 1"):
        table_from([[1, 0], [0, 0]])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 8))
def test_cosine_table_properties(seed, k):
    rng = np.random.default_rng(seed)
    C = table_from(rng.normal(size=(k, 6))).C
    assert np.array_equal(C, C.T)
    assert np.all(np.diag(C) == 1)
    assert np.all((C >= 0) & (C <= 1 + 1e-12))


def cosines(k, low_pairs, low=0.01, high=0.9):
    C = np.full((k, k), high)
    np.fill_diagonal(C, 1.0)
    for i, j in low_pairs:
        C[i, j] = C[j, i] = low
    return CosineTable(C)


def test_classify_examples():
    # 1-based (1,3),(2,4) below threshold
    cls = classify_orthogonal(cosines(4, [(0, 2), (1, 3)]), 0.05)
    assert cls.oclass == [(0, 2), (1, 3)] and cls.nclass == []
    cls = classify_orthogonal(cosines(5, []), 0.05)
    assert cls.oclass == [] and cls.nclass == [0, 1, 2, 3, 4]
    # first j wins; the third block cannot re-pair with the used first one
    cls = classify_orthogonal(cosines(3, [(0, 1), (0, 2)]), 0.05)
    assert cls.oclass == [(0, 1)] and cls.nclass == [2]
    with pytest.raises(ValueError):
        classify_orthogonal(cosines(2, []), 1.5)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 12), thr=st.floats(0.01, 0.99))
def test_classification_is_a_partition(seed, k, thr):
    rng = np.random.default_rng(seed)
    R = rng.random((k, k))
    C = (R + R.T) / 2
    np.fill_diagonal(C, 1)
    cls = classify_orthogonal(CosineTable(C), thr)
    flat = [i for pr in cls.oclass for i in pr] + cls.nclass
    assert sorted(flat) == list(range(k))
    assert all(i < j and C[i, j] < thr for i, j in cls.oclass)
    assert cls.nclass == sorted(cls.nclass)
    assert 2 * len(cls.oclass) + len(cls.nclass) == k


def test_zn_nn_examples():
    assert zn_nn_metrics(CosineTable(np.eye(2))) == (0.5, 0.5)
    assert zn_nn_metrics(CosineTable(np.ones((2, 2)))) == (0.0, 1.0)
    C = np.eye(3)
    C[0, 1] = C[1, 0] = 0.4
    zn, nn = zn_nn_metrics(CosineTable(C))
    # direct count: four zeros; nonzeros are three 1s and two 0.4s
    assert zn == 4 / 9
    assert np.isclose(nn, 5 * (3.8 / 5) / 9, rtol=1e-15)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 8))
def test_zn_nn_decomposition(seed, k):
    rng = np.random.default_rng(seed)
    R = rng.random((k, k)) * (rng.random((k, k)) < 0.5)
    C = np.triu(R, 1) + np.triu(R, 1).T + np.eye(k)
    zn, nn = zn_nn_metrics(CosineTable(C))
    n1 = round(zn * k * k)
    n2 = int(np.sum(np.abs(C) >= 1e-12))
    assert n1 + n2 == k * k
    assert np.isclose(nn, C.sum() / (k * k))


# -- k-means -------------------------------------------------------------------

def canon(clusters):
    return sorted(tuple(sorted(c.tolist())) for c in clusters)


def test_kmeans_singletons():
    pts = np.random.default_rng(0).normal(size=(6, 3))
    assert canon(kmeans(pts, 6, seed=1)) == [(i,) for i in range(6)]


def test_kmeans_1d_matches_exhaustive():
    pts = np.array([1.0, 2.0, 10.0, 11.0])
    best, best_cost = None, np.inf
    for mask in itertools.product([0, 1], repeat=4):
        labels = np.array(mask)
        if labels.min() == labels.max():
            continue
        cost = sum(((pts[labels == c] - pts[labels == c].mean()) ** 2).sum() for c in (0, 1))
        if cost < best_cost:
            best_cost = cost
            best = [np.flatnonzero(labels == c) for c in (0, 1)]
    for seed in range(5):
        assert canon(kmeans(pts, 2, seed)) == canon(best) == [(0, 1), (2, 3)]


def test_kmeans_separated_gaussians():
    rng = np.random.default_rng(42)
    a = rng.normal([0, 0], 0.3, size=(40, 2))
    b = rng.normal([6, 6], 0.3, size=(30, 2))
    clusters = kmeans(np.vstack([a, b]), 2, seed=3)
    assert canon(clusters) == [tuple(range(40)), tuple(range(40, 70))]


def test_kmeans_sparse_equals_dense_and_is_deterministic():
    rng = np.random.default_rng(5)
    D = rng.normal(size=(30, 8)) * (rng.random((30, 8)) < 0.4)
    a = kmeans(D, 4, seed=9)
    b = kmeans(SparseMatrix.from_dense(D), 4, seed=9)
    c = kmeans(D, 4, seed=9)
    assert canon(a) == canon(c)
    assert len(b) == 4 and sum(map(len, b)) == 30
    assert all(len(x) > 0 for x in a)


def test_kmeans_duplicate_points_still_fill_clusters():
    clusters = kmeans(np.zeros((5, 2)), 3, seed=0)
    assert len(clusters) == 3 and all(len(c) for c in clusters)
    with pytest.raises(ValueError):
        kmeans(np.zeros((2, 2)), 0)


def test_standardized_distances():
    A = SparseMatrix.from_dense([[3.0, 4.0], [1.0, 0.0]])
    assert np.allclose(standardized_distances(A, [10.0, 0.0], np.zeros(2)), [2.0, 0.0])
    x = np.array([0.3, -0.2])
    assert np.allclose(standardized_distances(A, A.csr @ x, x), 0)
    scaled = SparseMatrix.from_dense([[-6.0, -8.0], [1.0, 0.0]])
    assert np.allclose(
        standardized_distances(scaled, [-20.0, 1.0], x),
        standardized_distances(A, [10.0, 1.0], x),
    )
    with pytest.raises(ValueError, match="row 1"):
        standardized_distances(SparseMatrix.from_dense([[1.0, 0.0], [0.0, 0.0]]), [1, 1], np.zeros(2))


def test_kmeans_partitions_are_valid(rng):
    A, f, _ = banded_system(rng, 50, 2)
    for blocks in (kmeans_row_partition(A, f, 5, 1), kmeans_distance_partition(A, f, 5, 1)):
        assert np.array_equal(np.sort(np.concatenate(blocks)), np.arange(50))
