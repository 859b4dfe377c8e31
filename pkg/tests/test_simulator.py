import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bbcalib.estimators import estimate_isometric
from bbcalib.geometry import RigidTransform, UnitQuaternion
from bbcalib.simulator import (
    HOLOLENS,
    MOVERIO,
    WORLD_BOX,
    CalibrationSession,
    NoiseModel,
    Phase,
    Placement,
    PointCorrespondence,
    Scenario,
    WorkspaceFrustum,
    WorldRig,
    cube_corners,
    generate_multipoint_session,
    generate_single_point_session,
    generate_world_anchored_session,
    make_ground_truth,
    preset_matrix,
    simulate_world_anchored_chain,
)

seeds = st.integers(min_value=0, max_value=2**63 - 1)


def test_cube_corners_unit():
    c = cube_corners(1.0)
    assert len(c) == 8
    rows = {tuple(r) for r in c}
    assert (0, 0, 0) in rows and (1, 1, 1) in rows


def test_cube_corner_distances():
    e = 50.8
    c = cube_corners(e)
    d = [np.linalg.norm(a - b) for a, b in itertools.combinations(c, 2)]
    assert min(d) == pytest.approx(e)
    for x in d:
        assert min(abs(x - e), abs(x - e * np.sqrt(2)), abs(x - e * np.sqrt(3))) < 1e-12


def test_workspace_presets():
    assert HOLOLENS.near_area == 110.88 and HOLOLENS.far_area == 38.88 and HOLOLENS.depth_range == 12
    assert MOVERIO.near_area == 70.58 and MOVERIO.far_area == 26.55
    assert WORLD_BOX.half_width(WORLD_BOX.near_z) == pytest.approx(300.0)
    assert WORLD_BOX.far_z - WORLD_BOX.near_z == pytest.approx(600.0)
    with pytest.raises(ValueError):
        WorkspaceFrustum(-1.0, 10.0, 5.0)


def test_frustum_samples_inside(rng):
    for ws in (HOLOLENS, MOVERIO, WORLD_BOX):
        assert ws.contains(ws.sample(200, rng)).all()


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(sigma_xy=-1.0)
    with pytest.raises(ValueError):
        NoiseModel(1.0, 3.0, outlier_probability=0.1, outlier_magnitude=5.0)


def test_correspondence_validation():
    with pytest.raises(ValueError):
        PointCorrespondence((0, 0, 0), (0, 0, 0), "train", 0, 7)
    with pytest.raises(ValueError):
        PointCorrespondence((0, 0, np.nan), (0, 0, 0), "train", 0, 0)


@pytest.mark.parametrize("preset", ["rigid", "scaled", "shear", "perspective"])
def test_presets_invertible(preset):
    m = preset_matrix(preset, 4)
    assert abs(np.linalg.det(m)) > 0.5
    assert np.abs(m[3, :3]).max() <= 1e-3


def test_single_point_zero_noise_exact(rigid_gt):
    s = generate_single_point_session(rigid_gt, HOLOLENS, NoiseModel.noiseless(5))
    q, p = s.arrays()
    assert np.array_equal(p, rigid_gt.transform.apply(q))


def test_single_point_counts(rigid_gt):
    s = generate_single_point_session(rigid_gt)
    assert len(s.train) == 20 and len(s.test) == 8
    assert HOLOLENS.contains(s.arrays()[0]).all()


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_generators_deterministic(seed):
    gt = make_ground_truth("shear", seed % 1000)
    nm = NoiseModel(1.0, 3.0, 0.1, 50.0, 2.0, seed)
    assert generate_single_point_session(gt, nm=nm) == generate_single_point_session(gt, nm=nm)
    assert generate_multipoint_session(gt, nm=nm) == generate_multipoint_session(gt, nm=nm)


def test_outlier_rate(rigid_gt):
    hits = total = 0
    for seed in range(400):
        nm = NoiseModel(1.0, 3.0, 0.05, 50.0, seed=seed)
        s = generate_single_point_session(rigid_gt, nm=nm)
        hits += sum(c.outlier for c in s.correspondences)
        total += len(s.correspondences)
    rate = hits / total
    # binomial sd at n = 11200 is ~0.002
    assert total >= 10_000
    assert abs(rate - 0.05) < 0.008


def test_anisotropic_noise(rigid_gt):
    res = []
    for seed in range(40):
        s = generate_single_point_session(rigid_gt, nm=NoiseModel(2.0, 6.0, seed=seed))
        q, p = s.arrays()
        res.append(p - rigid_gt.transform.apply(q))
    r = np.vstack(res)
    assert r[:, 2].std() / r[:, 0].std() == pytest.approx(3.0, rel=0.1)


def test_multipoint_counts(rigid_gt):
    s = generate_multipoint_session(rigid_gt, nm=NoiseModel(seed=2))
    assert len(s.correspondences) == 20
    assert sorted({c.pose_id for c in s.correspondences}) == [0, 1, 2, 3]
    for k in range(4):
        assert sorted(c.corner_id for c in s.correspondences if c.pose_id == k) == [0, 1, 2, 3, 4]


def test_multipoint_zero_noise_isometric_exact(rigid_gt):
    s = generate_multipoint_session(rigid_gt, nm=NoiseModel.noiseless(1))
    q, p = s.arrays()
    assert np.abs(estimate_isometric(q, p).matrix - rigid_gt.transform.matrix).max() <= 1e-9


def test_multipoint_pose_perturbation_rigid(rigid_gt):
    nm = NoiseModel(0.0, 0.0, multipoint_pose_sigma=3.0, seed=8)
    s = generate_multipoint_session(rigid_gt, nm=nm)
    clean = generate_multipoint_session(rigid_gt, nm=NoiseModel.noiseless(8))
    q, p = s.arrays()
    _, p0 = clean.arrays()
    assert not np.allclose(p, p0)
    for k in range(4):
        blk, blk0 = p[5 * k:5 * k + 5], p0[5 * k:5 * k + 5]
        d = np.linalg.norm(blk[:, None] - blk[None], axis=-1)
        d0 = np.linalg.norm(blk0[:, None] - blk0[None], axis=-1)
        np.testing.assert_allclose(d, d0, atol=1e-9)


def test_world_collapses_to_head_anchored(rigid_gt):
    nm = NoiseModel(1.0, 3.0, seed=21)
    head = generate_single_point_session(rigid_gt, WORLD_BOX, nm)
    world = generate_world_anchored_session(rigid_gt, WORLD_BOX, nm, WorldRig())
    assert world.correspondences == head.correspondences


def test_world_chain_manual_oracle(rng):
    gt = make_ground_truth("scaled", 2, Scenario.WORLD_ANCHORED)
    rig = WorldRig(RigidTransform.random(rng, 1000.0), RigidTransform.random(rng, 1000.0))
    placements = [Placement(RigidTransform.random(rng, 500.0), tuple(rng.normal(size=3) * 25)) for _ in range(6)]
    out = simulate_world_anchored_chain(gt, placements, rig)
    g_wh, g_we = rig.world_from_head.as_matrix(), rig.world_from_tracker.as_matrix()
    for c, pl in zip(out, placements):
        x = np.linalg.inv(g_wh) @ g_we @ pl.object_pose.as_matrix() @ np.append(pl.point, 1.0)
        np.testing.assert_allclose(c.q, x[:3], atol=1e-9)
        np.testing.assert_allclose(c.p, gt.transform.apply(x[:3]), atol=1e-9)


def test_world_drift_rms(rng):
    placements = [Placement(RigidTransform(UnitQuaternion(), rng.uniform(-200, 200, 3))) for _ in range(3000)]
    base = simulate_world_anchored_chain(make_ground_truth("rigid", 1), placements, seed=4)
    drifted = simulate_world_anchored_chain(
        make_ground_truth("rigid", 1, Scenario.WORLD_ANCHORED, drift_sigma_mm=1.0), placements, seed=4)
    d = np.array([np.subtract(a.q, b.q) for a, b in zip(drifted, base)])
    np.testing.assert_allclose(np.sqrt((d ** 2).mean(axis=0)), 1.0, rtol=0.06)


def test_session_requires_positive_edge():
    with pytest.raises(ValueError):
        CalibrationSession((), cube_edge=0.0)


def test_session_phase_selection(noiseless_session):
    assert all(c.phase is Phase.TRAIN for c in noiseless_session.train)
    q, p = noiseless_session.arrays(Phase.TEST)
    assert q.shape == p.shape == (8, 3)
