import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bbcalib.errors import DegenerateConfiguration, DegenerateMotion, NoConsensus, TooFewPoints
from bbcalib.estimators import (
    ModelClass,
    RansacConfig,
    Transform,
    canonical_matrix,
    estimate,
    estimate_affine,
    estimate_isometric,
    estimate_perspective,
    matrix_distance,
    pivot_calibration,
    ransac_estimate,
    residual_norms,
)
from bbcalib.geometry import RigidTransform, UnitQuaternion, apply

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def _points(rng, n):
    return rng.uniform(-60, 60, size=(n, 3)) + (0, 0, 450)


def _random_affine(rng):
    m = RigidTransform.random(rng, 20.0).as_matrix()
    m[:3, :3] = m[:3, :3] @ (np.eye(3) + rng.uniform(-0.1, 0.1, (3, 3)))
    return m


def _random_projective(rng):
    m = _random_affine(rng)
    m[3, :3] = rng.uniform(-3e-4, 3e-4, 3)
    return m


@pytest.fixture
def cloud(rng):
    return _points(rng, 20)


def test_min_samples():
    assert [m.min_samples for m in ModelClass] == [3, 4, 5]


def test_canonical_matrix_scale_and_sign(rng):
    m = _random_projective(rng)
    np.testing.assert_allclose(canonical_matrix(-7.5 * m), canonical_matrix(m), atol=1e-15)
    assert np.linalg.norm(canonical_matrix(m)) == pytest.approx(1.0)
    assert matrix_distance(m, 3 * m) < 1e-15


def test_transform_validates_model():
    shear = np.eye(4)
    shear[0, 1] = 0.1
    with pytest.raises(ValueError):
        Transform(shear, ModelClass.ISOMETRIC)
    proj = np.eye(4)
    proj[3, 2] = 1e-3
    with pytest.raises(ValueError):
        Transform(proj, ModelClass.AFFINE)
    t = Transform(proj, ModelClass.PERSPECTIVE)
    with pytest.raises(ValueError):
        t.matrix[0, 0] = 2.0


def test_isometric_identity_and_translation(cloud):
    np.testing.assert_allclose(estimate_isometric(cloud, cloud).matrix, np.eye(4), atol=1e-12)
    t = estimate_isometric(cloud, cloud + (5, 0, 0))
    np.testing.assert_allclose(t.matrix[:3, 3], [5, 0, 0], atol=1e-12)
    np.testing.assert_allclose(t.matrix[:3, :3], np.eye(3), atol=1e-12)


def test_isometric_recovers_random_rigid(rng):
    g = RigidTransform.random(rng)
    q = _points(rng, 10)
    t = estimate_isometric(q, g.apply(q))
    assert t.model is ModelClass.ISOMETRIC
    assert np.abs(t.matrix - g.as_matrix()).max() <= 1e-9


def test_isometric_never_reflects(rng):
    q = _points(rng, 8)
    p = q * (1, 1, -1)
    assert np.linalg.det(estimate_isometric(q, p).matrix[:3, :3]) == pytest.approx(1.0)


def test_isometric_collinear():
    q = np.outer(np.arange(5.0), [1, 2, 3])
    with pytest.raises(DegenerateConfiguration):
        estimate_isometric(q, q)


def test_affine_cases(rng, cloud):
    np.testing.assert_allclose(estimate_affine(cloud, cloud).matrix, np.eye(4), atol=1e-10)
    t = estimate_affine(cloud, 2 * cloud)
    np.testing.assert_allclose(t.matrix, np.diag([2, 2, 2, 1.0]), atol=1e-10)
    m = _random_affine(rng)
    q = _points(rng, 12)
    assert np.abs(estimate_affine(q, apply(m, q)).matrix - m).max() <= 1e-9


def test_affine_coplanar(rng):
    q = _points(rng, 10)
    q[:, 2] = 450.0
    with pytest.raises(DegenerateConfiguration):
        estimate_affine(q, q)


def test_perspective_cases(rng, cloud):
    assert matrix_distance(estimate_perspective(cloud, cloud).matrix, np.eye(4)) <= 1e-9
    m = _random_affine(rng)
    assert matrix_distance(estimate_perspective(cloud, apply(m, cloud)).matrix, m) <= 1e-9
    m = _random_projective(rng)
    q = _points(rng, 12)
    assert matrix_distance(estimate_perspective(q, apply(m, q)).matrix, m) <= 1e-8


def test_perspective_degenerate(rng):
    q = _points(rng, 10)
    q[:, 2] = 450.0
    with pytest.raises(DegenerateConfiguration):
        estimate_perspective(q, q)


@pytest.mark.parametrize("model", list(ModelClass))
def test_too_few_points(model):
    q = np.eye(3)[: model.min_samples - 1] * 10
    with pytest.raises(TooFewPoints):
        estimate(q, q, model)


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_perspective_recovery_property(seed):
    rng = np.random.default_rng(seed)
    m = _random_projective(rng)
    q = _points(rng, 20)
    assert matrix_distance(estimate_perspective(q, apply(m, q)).matrix, m) <= 1e-8


def test_residual_norms_brute_force(rng, cloud):
    t = Transform(_random_affine(rng), ModelClass.AFFINE)
    p = cloud + rng.normal(size=cloud.shape)
    expected = [np.linalg.norm(pi - (t.matrix[:3, :3] @ qi + t.matrix[:3, 3])) for qi, pi in zip(cloud, p)]
    np.testing.assert_allclose(residual_norms(t, cloud, p), expected, rtol=1e-12)


@pytest.mark.parametrize("model", list(ModelClass))
def test_ransac_noiseless_keeps_all(model, rng, cloud):
    g = RigidTransform.random(rng, 20.0)
    p = g.apply(cloud)
    res = ransac_estimate(cloud, p, model)
    assert res.inlier_mask.all()
    np.testing.assert_allclose(res.transform.matrix, estimate(cloud, p, model).matrix, atol=1e-12)


@pytest.mark.parametrize("model", list(ModelClass))
def test_ransac_rejects_outlier(model, rng, cloud):
    g = RigidTransform.random(rng, 20.0)
    p = g.apply(cloud) + rng.normal(size=cloud.shape)
    p[7] += 50.0 * np.array([0.6, 0.0, 0.8])
    res = ransac_estimate(cloud, p, model)
    assert not res.inlier_mask[7]
    assert res.n_inliers == 19


@pytest.mark.parametrize("model", list(ModelClass))
def test_ransac_infinite_threshold_is_plain_fit(model, rng, cloud):
    p = cloud + rng.normal(scale=3.0, size=cloud.shape)
    res = ransac_estimate(cloud, p, model, RansacConfig(inlier_threshold=np.inf))
    np.testing.assert_array_equal(res.transform.matrix, estimate(cloud, p, model).matrix)


def test_ransac_deterministic(rng, cloud):
    p = cloud + rng.normal(scale=2.0, size=cloud.shape)
    a = ransac_estimate(cloud, p, "affine", RansacConfig(seed=9))
    b = ransac_estimate(cloud, p, "affine", RansacConfig(seed=9))
    np.testing.assert_array_equal(a.transform.matrix, b.transform.matrix)


def test_ransac_no_consensus(rng, cloud):
    p = rng.uniform(-500, 500, size=cloud.shape)
    with pytest.raises(NoConsensus):
        ransac_estimate(cloud, p, "isometric", RansacConfig(inlier_threshold=1.0, max_iterations=50))


def test_ransac_degenerate_input(rng):
    q = _points(rng, 20)
    q[:, 2] = 450.0
    with pytest.raises(DegenerateConfiguration):
        ransac_estimate(q, q, "affine")


def test_ransac_config_validation():
    with pytest.raises(ValueError):
        RansacConfig(inlier_threshold=0)
    with pytest.raises(ValueError):
        RansacConfig(min_inlier_fraction=0)


def _pivot_poses(rng, tip, pivot, n=20):
    poses = []
    for _ in range(n):
        r = UnitQuaternion.from_rotvec(rng.uniform(-0.6, 0.6, 3))
        poses.append(RigidTransform(r, np.asarray(pivot) - r.as_matrix() @ tip))
    return poses


def test_pivot_fixed_tip(rng):
    tip, pivot = np.array([0, 0, 100.0]), np.array([5.0, -3.0, 200.0])
    res = pivot_calibration(_pivot_poses(rng, tip, pivot))
    assert np.abs(res.tip_offset - tip).max() <= 1e-9
    assert np.abs(res.pivot_point - pivot).max() <= 1e-9


def test_pivot_random_orientations(rng):
    tip, pivot = np.array([1.0, 2.0, 3.0]), np.array([10.0, 20.0, 30.0])
    tip_hat, pivot_hat, rms = pivot_calibration(_pivot_poses(rng, tip, pivot))
    np.testing.assert_allclose(tip_hat, tip, atol=1e-9)
    np.testing.assert_allclose(pivot_hat, pivot, atol=1e-9)
    assert rms <= 1e-9


def test_pivot_translation_only():
    poses = [RigidTransform(UnitQuaternion(), (i, 0.0, 0.0)) for i in range(10)]
    with pytest.raises(DegenerateMotion):
        pivot_calibration(poses)


def test_pivot_single_axis():
    tip = np.array([0, 0, 100.0])
    poses = []
    for a in np.linspace(-0.5, 0.5, 10):
        r = UnitQuaternion.from_axis_angle((1, 0, 0), a)
        poses.append(RigidTransform(r, -r.as_matrix() @ tip))
    with pytest.raises(DegenerateMotion):
        pivot_calibration(poses)


@pytest.mark.parametrize("model", [ModelClass.ISOMETRIC, ModelClass.AFFINE])
def test_rigid_premotion_equivariance(model, rng, cloud):
    m = _random_affine(rng) if model is ModelClass.AFFINE else RigidTransform.random(rng, 20.0).as_matrix()
    p = apply(m, cloud) + rng.normal(size=cloud.shape)
    g = RigidTransform.random(rng, 50.0)
    base = estimate(cloud, p, model).matrix
    moved = estimate(g.apply(cloud), p, model).matrix
    np.testing.assert_allclose(moved, base @ np.linalg.inv(g.as_matrix()), atol=1e-8)


def test_perspective_similarity_invariance(rng, cloud):
    m = _random_projective(rng)
    p = apply(m, cloud) + rng.normal(scale=0.5, size=cloud.shape)
    s = np.eye(4)
    s[:3, :3] = 2.5 * UnitQuaternion.random(rng).as_matrix()
    s[:3, 3] = rng.normal(scale=100, size=3)
    base = estimate_perspective(cloud, p).matrix
    moved = estimate_perspective(apply(s, cloud), p).matrix
    assert matrix_distance(moved, base @ np.linalg.inv(s)) <= 1e-6


def test_isometric_output_is_rigid_on_noisy_data(rng, cloud):
    t = estimate_isometric(cloud, cloud * 1.1 + rng.normal(size=cloud.shape))
    assert t.model is ModelClass.ISOMETRIC
    np.testing.assert_array_equal(t.matrix[3], [0, 0, 0, 1])


def test_pivot_rms_is_equation_rms(rng):
    tip, pivot = np.array([0, 0, 100.0]), np.zeros(3)
    poses = _pivot_poses(rng, tip, pivot)
    noisy = [RigidTransform(g.rotation, g.translation + rng.normal(size=3)) for g in poses]
    res = pivot_calibration(noisy)
    eqs = np.concatenate([g.rotation.as_matrix() @ res.tip_offset + g.translation - res.pivot_point for g in noisy])
    assert res.rms_residual == pytest.approx(np.sqrt(np.mean(eqs ** 2)), rel=1e-12)
