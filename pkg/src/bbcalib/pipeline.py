"""End-to-end calibration workflows and their evaluation protocols."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import CalibrationError
from .estimators import EstimationResult, ModelClass, RansacConfig, Transform, ransac_estimate
from .geometry import RigidTransform, UnitQuaternion
from .metrics import ErrorStats, PoseError, pose_error, reprojection_error, summarize_rotation_errors
from .simulator import (
    HOLOLENS,
    WORLD_BOX,
    CalibrationSession,
    GroundTruth,
    NoiseModel,
    Phase,
    WorkspaceFrustum,
    cube_corners,
    generate_multipoint_session,
    generate_single_point_session,
    with_test_points,
)

log = logging.getLogger(__name__)

MODELS = (ModelClass.PERSPECTIVE, ModelClass.AFFINE, ModelClass.ISOMETRIC)


@dataclass(frozen=True, eq=False)
class ModelReport:
    model: ModelClass
    transform: Transform | None = None
    train: ErrorStats | None = None
    test: ErrorStats | None = None
    inlier_mask: NDArray | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def inliers(self) -> int:
        return 0 if self.inlier_mask is None else int(self.inlier_mask.sum())

    @property
    def excluded(self) -> list[int]:
        """Train indices rejected by RANSAC."""
        if self.inlier_mask is None:
            return []
        return [int(i) for i in np.flatnonzero(~self.inlier_mask)]


@dataclass(frozen=True, eq=False)
class CalibrationReport:
    models: dict[ModelClass, ModelReport]
    n_train: int
    n_test: int
    seed: int
    metadata: dict = field(default_factory=dict)

    def __getitem__(self, model: ModelClass | str) -> ModelReport:
        return self.models[ModelClass(model)]

    @property
    def failed(self) -> list[ModelClass]:
        return [m for m, r in self.models.items() if not r.ok]


def run_calibrate_and_test(session: CalibrationSession, cfg: RansacConfig = RansacConfig(),
                           models=MODELS) -> CalibrationReport:
    """Fit every model on train points and score it on the held-out test points.

    A model whose fit raises is recorded with its error message; the others
    still run.
    """
    q_tr, p_tr = session.arrays(Phase.TRAIN)
    q_te, p_te = session.arrays(Phase.TEST)
    if len(q_tr) < 5 or len(q_te) < 1:
        raise ValueError("need >= 5 train and >= 1 test correspondences")
    out = {}
    for model in models:
        model = ModelClass(model)
        try:
            res: EstimationResult = ransac_estimate(q_tr, p_tr, model, cfg)
            test = reprojection_error(res.transform, q_te, p_te)
        except CalibrationError as exc:
            log.warning("%s fit failed: %s", model, exc)
            out[model] = ModelReport(model, error=f"{type(exc).__name__}: {exc}")
            continue
        out[model] = ModelReport(model, res.transform, res.train_residual, test, res.inlier_mask)
    meta = {"noise": session.noise, "workspace": session.workspace,
            "ground_truth": session.ground_truth}
    return CalibrationReport(out, len(q_tr), len(q_te), cfg.seed, meta)


def run_multipoint_workflow(gt: GroundTruth, ws: WorkspaceFrustum = HOLOLENS,
                            nm: NoiseModel = NoiseModel(), cfg: RansacConfig = RansacConfig(),
                            n_poses: int = 4, n_test: int = 8) -> CalibrationReport:
    """Multipoint calibration (``n_poses`` x 5 corners) scored on fresh single-point tests."""
    session = generate_multipoint_session(gt, ws, nm, n_poses)
    probe = generate_single_point_session(gt, ws, _test_noise(nm), n_train=5, n_test=n_test)
    return run_calibrate_and_test(with_test_points(session, probe.test), cfg)


def _test_noise(nm: NoiseModel) -> NoiseModel:
    # independent stream from the calibration draw; no pose-level error for single points
    return NoiseModel(nm.sigma_xy, nm.sigma_z, nm.outlier_probability, nm.outlier_magnitude,
                      0.0, nm.seed + 0x5EED)


@dataclass(frozen=True)
class DoubleCubeReport:
    model: ModelClass
    placements: tuple[PoseError, ...]
    targets: tuple[RigidTransform, ...]
    achieved: tuple[RigidTransform, ...]

    @property
    def mean_displacement(self) -> float:
        return float(np.mean([e.displacement for e in self.placements]))

    @property
    def average_rotation(self) -> UnitQuaternion:
        return summarize_rotation_errors(self.placements)


def tetrahedron_vertices(center: ArrayLike, radius: float) -> NDArray:
    """Four equidistant points: a regular tetrahedron around ``center``."""
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    return np.asarray(center, dtype=float) + v * (radius / math.sqrt(3.0))


def _rigid_correction(x: NDArray, y: NDArray) -> RigidTransform:
    # rigid map sending x onto y in least squares; exact identity when y == x
    cx, cy = x.mean(axis=0), y.mean(axis=0)
    dx, dy = x - cx, y - cy
    if np.array_equal(dx, dy):
        rot = np.eye(3)
    else:
        u, _, vt = np.linalg.svd(dx.T @ dy)
        v = vt.T
        if np.linalg.det(v @ u.T) < 0:
            v[:, -1] *= -1
        rot = v @ u.T
    return RigidTransform(UnitQuaternion.from_matrix(rot), cy - rot @ cx)


def run_double_cube_match(transform: Transform, gt: GroundTruth,
                          offset: ArrayLike = (150.0, 0.0, 0.0), placements: int = 4,
                          alignment_noise: NoiseModel = NoiseModel.noiseless(),
                          ws: WorkspaceFrustum = WORLD_BOX, radius: float = 150.0,
                          cube_edge: float = 50.8) -> DoubleCubeReport:
    """Simulated double-cube-match evaluation of a candidate transform.

    The first cube sits at each of ``placements`` equidistant positions (the
    first four are tetrahedron vertices around the workspace center). The
    virtual cube is displayed through ``transform`` at ``offset`` in the first
    cube's frame. The simulated user moves the second real cube until it
    coincides with the virtual one as seen through the true display map
    ``gt``, plus residual alignment noise. Errors compare the achieved pose
    with the intended offset pose, both in tracker space.
    """
    if placements < 1:
        raise ValueError("placements must be >= 1")
    offset = np.asarray(offset, dtype=float)
    rng = np.random.default_rng(alignment_noise.seed)
    positions = tetrahedron_vertices(ws.center, radius)
    if placements > 4:
        positions = np.vstack([positions, ws.sample(placements - 4, rng)])
    corners = cube_corners(cube_edge)
    corners -= corners.mean(axis=0)

    true_m = gt.transform.matrix
    cand_m = transform.matrix
    errors, targets, achieved = [], [], []
    for k in range(placements):
        first = RigidTransform(UnitQuaternion(), positions[k])
        target = first @ RigidTransform(UnitQuaternion(), offset)
        x = target.apply(corners)
        xh = np.c_[x, np.ones(len(x))]
        shown = xh @ cand_m.T
        # where the real cube must sit to look like the virtual one through the true map
        if np.array_equal(_dehom(shown), _dehom(xh @ true_m.T)):
            y = x
        else:
            y = _dehom(np.linalg.solve(true_m, shown.T).T)
        correction = _rigid_correction(x, y)

        t_err = rng.normal(size=3) * alignment_noise.sigmas
        w_err = rng.normal(size=3) * (alignment_noise.sigma_xy / cube_edge)
        if alignment_noise.sigma_xy > 0 or alignment_noise.sigma_z > 0:
            correction = RigidTransform(UnitQuaternion.from_rotvec(w_err), t_err) @ correction
        got = correction @ target
        targets.append(target)
        achieved.append(got)
        errors.append(pose_error(got, target))
    return DoubleCubeReport(transform.model, tuple(errors), tuple(targets), tuple(achieved))


def _dehom(h: NDArray) -> NDArray:
    return h[:, :3] / h[:, 3:4]
