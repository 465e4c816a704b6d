import numpy as np
import pytest

from crlso.analysis import (
    RankWarning,
    UndefinedSimilarityError,
    cosine_similarity_matrix,
    pca_project,
    separation_report,
)


def test_collinear_points_have_one_component():
    t = np.linspace(-1, 1, 50)
    X = np.stack([t, 2 * t], axis=1)
    with pytest.warns(RankWarning):
        proj, ratio, comps = pca_project(X, 2)
    assert proj.shape == (50, 1)
    assert ratio[0] == pytest.approx(1.0)


def test_isotropic_cloud_is_balanced():
    X = np.random.default_rng(0).standard_normal((10_000, 3))
    _, ratio, _ = pca_project(X, 3)
    assert np.allclose(ratio, 1 / 3, atol=0.02)


def test_full_reconstruction():
    X = np.random.default_rng(1).normal(size=(40, 5)) @ np.diag([5, 3, 2, 1, 0.5])
    proj, _, comps = pca_project(X, 5)
    assert np.max(np.abs(proj @ comps.T - (X - X.mean(0)))) < 1e-9


def test_sign_convention_and_order():
    X = np.random.default_rng(2).normal(size=(100, 4)) * [4, 3, 2, 1]
    _, ratio, comps = pca_project(X, 4)
    assert np.all(np.diff(ratio) <= 0)
    assert np.all(comps[np.argmax(np.abs(comps), axis=0), np.arange(4)] > 0)


def test_translation_invariance():
    X = np.random.default_rng(3).normal(size=(60, 3)) * [3, 2, 1]
    a, _, _ = pca_project(X, 2)
    b, _, _ = pca_project(X + [10.0, -4.0, 7.0], 2)
    assert np.allclose(np.abs(a), np.abs(b), atol=1e-9)


def test_cosine_examples():
    v = np.array([[1.0, 2.0, 3.0]])
    assert np.allclose(cosine_similarity_matrix(v, v), [[1.0]])
    assert cosine_similarity_matrix([[1.0, 0.0]], [[0.0, 2.0]])[0, 0] == 0.0
    assert cosine_similarity_matrix(v, -v)[0, 0] == pytest.approx(-1.0)
    assert np.allclose(cosine_similarity_matrix(v * 3.0, v * 0.5), 1.0)
    with pytest.raises(UndefinedSimilarityError):
        cosine_similarity_matrix([[0.0, 0.0]], v[:, :2])


def test_cosine_matches_definition():
    r = np.random.default_rng(4)
    A, B = r.normal(size=(5, 3)), r.normal(size=(4, 3))
    M = cosine_similarity_matrix(A, B)
    for i in range(5):
        for j in range(4):
            assert M[i, j] == pytest.approx(A[i] @ B[j] / np.linalg.norm(A[i]) / np.linalg.norm(B[j]))


def test_separation_degenerate_and_sizes():
    Z = np.ones((30, 4))
    rep = separation_report(Z, np.arange(30.0), 10, 5)
    assert rep.delta == pytest.approx(0.0, abs=1e-12)
    assert len(rep.top_index) == 10 and len(rep.worst_index) == 5
    assert set(rep.top_index) == set(range(20, 30))
    with pytest.raises(ValueError):
        separation_report(Z, np.arange(30.0), 20, 11)


def test_separation_detects_clusters():
    r = np.random.default_rng(5)
    s = np.arange(200.0)
    Z = np.where(s[:, None] >= 100, [1.0, 0.0], [0.0, 1.0]) + 0.1 * r.normal(size=(200, 2))
    assert separation_report(Z, s, 50, 50).delta > 0.5
