import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from leafwood.errors import ConfigError, SingleClassError
from leafwood.features import covariance_batch, eigenvalues_sym3
from leafwood.io import LEAF, WOOD, PointCloud
from leafwood.sampling import (SampleProfile, auto_select_training, fit_plane, get_profile,
                               random_class_seeds, seed_sphere_training, select_candidates,
                               training_from_labels)
from leafwood.spatial import NeighborSet, build_index
from leafwood.synthgen import TreeSpec, generate_tree

from oracles import random_rotation


def _all_nbh(n):
    return NeighborSet(0, np.arange(1, n), np.zeros(n - 1))


def _tls_sigma(pts):
    """Independent orthogonal-residual fit by SVD of the centred points."""
    c = pts - pts.mean(axis=0)
    normal = np.linalg.svd(c)[2][-1]
    return np.sqrt(np.mean((c @ normal) ** 2)), normal


def test_fit_plane_coplanar_sigma_zero(rng):
    pts = np.c_[rng.uniform(size=(6, 2)), np.full(6, 2.5)]
    fit = fit_plane(PointCloud(pts), _all_nbh(6))
    assert fit.sigma == pytest.approx(0.0, abs=1e-15)
    assert abs(abs(fit.normal[2]) - 1) < 1e-12


@pytest.mark.parametrize("h", [0.1, -0.3, 0.7])
def test_fit_plane_symmetric_example(h):
    pts = np.array([[1, 1, h], [1, -1, -h], [-1, 1, -h], [-1, -1, h]], dtype=float)
    fit = fit_plane(PointCloud(pts), _all_nbh(4))
    assert fit.sigma == pytest.approx(abs(h), rel=1e-12)
    assert abs(abs(fit.normal[2]) - 1) < 1e-12


def test_fit_plane_coincident_points():
    fit = fit_plane(PointCloud(np.ones((5, 3))), _all_nbh(5))
    assert fit.sigma == 0.0
    np.testing.assert_array_equal(fit.normal, [0, 0, 1])


def test_fit_plane_needs_two_neighbours():
    with pytest.raises(ConfigError):
        fit_plane(PointCloud(np.zeros((2, 3))), _all_nbh(2))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(3, 120))
def test_fit_plane_matches_svd_and_pca_identity(seed, n):
    r = np.random.default_rng(seed)
    pts = r.normal(size=(n, 3)) * r.uniform(0.01, 5, size=3) + r.uniform(-100, 100, size=3)
    fit = fit_plane(PointCloud(pts), _all_nbh(n))
    sigma, normal = _tls_sigma(pts)
    assert fit.sigma == pytest.approx(sigma, rel=1e-9)
    assert abs(abs(fit.normal @ normal) - 1) < 1e-9
    assert abs(np.linalg.norm(fit.normal) - 1) < 1e-12
    lam3 = eigenvalues_sym3(covariance_batch(pts[None]))[0, 2]
    assert fit.sigma ** 2 == pytest.approx(lam3, rel=1e-9)
    # Rigid motion leaves sigma unchanged.
    moved = pts @ random_rotation(r).T + r.normal(size=3) * 10
    assert fit_plane(PointCloud(moved), _all_nbh(n)).sigma == pytest.approx(fit.sigma, rel=1e-9)


def test_select_candidates_all_and_deterministic(rng):
    cloud = PointCloud(rng.normal(size=(50, 3)))
    assert sorted(select_candidates(cloud, 50, 1)) == list(range(50))
    np.testing.assert_array_equal(select_candidates(cloud, 20, 9), select_candidates(cloud, 20, 9))
    with pytest.raises(ConfigError):
        select_candidates(cloud, 51, 0)


def test_select_candidates_uniform_chi_square():
    n_points, n, seeds, bins = 1_000_000, 2000, 100, 100
    cloud = PointCloud(np.zeros((n_points, 3)))
    counts = np.zeros(bins)
    for s in range(seeds):
        idx = select_candidates(cloud, n, s)
        assert np.unique(idx).size == n
        counts += np.bincount(idx * bins // n_points, minlength=bins)
    assert stats.chisquare(counts).pvalue > 0.01


def test_profiles_and_validation():
    assert (get_profile("leafy").n_leaf, get_profile("leafy").n_wood) == (1200, 800)
    assert (get_profile("balanced").n_leaf, get_profile("balanced").n_wood) == (1000, 1000)
    assert (get_profile("woody").n_leaf, get_profile("woody").n_wood) == (800, 1200)
    with pytest.raises(ConfigError):
        SampleProfile(1500, 600, 2000)
    with pytest.raises(ConfigError):
        get_profile("shrubby")


def test_auto_select_on_a_plane_is_disjoint_and_deterministic(rng):
    pts = np.c_[rng.uniform(size=(500, 2)), np.zeros(500)]
    cloud = PointCloud(pts)
    index = build_index(cloud)
    prof = SampleProfile(60, 40, 200)
    ts = auto_select_training(cloud, index, prof, k=10, seed=3)
    assert np.all(ts.audit.sigma == 0)
    assert ts.counts() == (60, 40)
    # Equal sigmas: the leaf picks are the lowest candidate indices.
    cand = np.sort(ts.audit.indices)
    assert set(ts.indices[ts.classes == LEAF]) == set(cand[:60])
    assert set(ts.indices[ts.classes == WOOD]) == set(cand[-40:])
    again = auto_select_training(cloud, index, prof, k=10, seed=3, workers=4)
    np.testing.assert_array_equal(ts.indices, again.indices)
    assert ts.features.tobytes() == again.features.tobytes()


def test_auto_select_sigma_separation(rng):
    cloud = PointCloud(rng.normal(size=(3000, 3)) * [1, 1, 0.05])
    ts = auto_select_training(cloud, build_index(cloud), SampleProfile(300, 200, 1000), k=15, seed=1)
    a = ts.audit
    assert a.sigma[a.classes == LEAF].min() >= a.sigma[a.classes == WOOD].max()
    assert np.all(np.diff(ts.indices) > 0)


@pytest.mark.parametrize("seed", range(5))
def test_auto_select_purity_on_synthetic_tree(seed):
    # Leaf share 0.6 matches the 1200/800 profile; default point density.
    cloud, labels = generate_tree(TreeSpec(leaf_fraction=0.6, seed=seed))
    ts = auto_select_training(cloud, build_index(cloud), get_profile("leafy"), k=100, seed=42)
    truth = labels[ts.indices]
    leaf_purity = np.mean(truth[ts.classes == LEAF] == LEAF)
    wood_purity = np.mean(truth[ts.classes == WOOD] == WOOD)
    assert leaf_purity >= 0.95
    assert wood_purity >= 0.95


def test_seed_sphere_whole_cloud(rng):
    pts = rng.uniform(size=(200, 3))
    cloud = PointCloud(pts)
    ts = seed_sphere_training(cloud, build_index(cloud), [0], [1], radius=10.0, k=5)
    # Every point is in both spheres; each goes to its nearer seed.
    d0 = np.linalg.norm(pts - pts[0], axis=1)
    d1 = np.linalg.norm(pts - pts[1], axis=1)
    np.testing.assert_array_equal(ts.indices, np.arange(200))
    np.testing.assert_array_equal(ts.classes, np.where(d0 <= d1, LEAF, WOOD))


def test_seed_sphere_brute_force_counts(rng):
    pts = rng.uniform(size=(2000, 3)) * 10
    cloud = PointCloud(pts)
    leaf_seeds, wood_seeds = [3, 500], [1000, 1500]
    ts = seed_sphere_training(cloud, build_index(cloud), leaf_seeds, wood_seeds, radius=0.8, k=5)

    def members(seeds):
        d = np.linalg.norm(pts[:, None] - pts[seeds][None], axis=2)
        return set(np.flatnonzero((d <= 0.8).any(axis=1)))

    leaf, wood = members(leaf_seeds), members(wood_seeds)
    if leaf.isdisjoint(wood):
        assert ts.counts() == (len(leaf), len(wood))
    assert set(ts.indices) == leaf | wood


def test_seed_sphere_zero_radius_is_error(rng):
    cloud = PointCloud(rng.uniform(size=(20, 3)))
    with pytest.raises(ConfigError):
        seed_sphere_training(cloud, build_index(cloud), [0], [1], radius=0.0)


def test_training_from_labels_full_and_reproducible(rng):
    cloud = PointCloud(rng.normal(size=(100, 3)))
    labels = rng.integers(0, 2, 100)
    index = build_index(cloud)
    ts = training_from_labels(cloud, index, labels, 100, seed=5, k=5)
    np.testing.assert_array_equal(ts.indices, np.arange(100))
    np.testing.assert_array_equal(ts.classes, labels)
    a = training_from_labels(cloud, index, labels, 30, seed=5, k=5)
    b = training_from_labels(cloud, index, labels, 30, seed=5, k=5)
    np.testing.assert_array_equal(a.indices, b.indices)


def test_training_from_labels_single_class():
    cloud = PointCloud(np.random.default_rng(0).normal(size=(10, 3)))
    with pytest.raises(SingleClassError):
        training_from_labels(cloud, build_index(cloud), np.ones(10), 5, seed=0, k=3)


def test_training_from_labels_proportions_binomial():
    n_points, n, p = 20000, 500, 0.3
    labels = (np.arange(n_points) < p * n_points).astype(int)
    cloud = PointCloud(np.random.default_rng(0).normal(size=(n_points, 3)))
    index = build_index(cloud)
    feats = np.zeros((n_points, 5))
    seeds = 100
    leaf_total = 0
    for s in range(seeds):
        ts = training_from_labels(cloud, index, labels, n, seed=s, features=feats)
        leaf_total += ts.counts()[0]
    # Pooled over all seeds: 3 sigma of Binomial(seeds * n, p).
    m = seeds * n
    assert abs(leaf_total - m * p) <= 3 * np.sqrt(m * p * (1 - p))


def test_random_class_seeds(rng):
    labels = rng.integers(0, 2, 500)
    leaf, wood = random_class_seeds(labels, 20, seed=4)
    assert len(leaf) == len(wood) == 20
    assert np.all(labels[leaf] == LEAF) and np.all(labels[wood] == WOOD)
    with pytest.raises(SingleClassError):
        random_class_seeds(np.ones(10), 2, 0)


def test_profile_scales_with_candidate_count():
    p = get_profile("leafy", 500)
    assert (p.n_leaf, p.n_wood, p.n_candidates) == (300, 200, 500)
    assert get_profile("woody", 2000) is get_profile("woody")
