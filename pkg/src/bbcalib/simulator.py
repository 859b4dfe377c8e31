"""Synthetic calibration sessions with known ground truth.

The human alignment step is replaced by a noise model: each tracker-space
point ``q`` is mapped through the true transform and perturbed in the
display (viewing) frame, where ``z`` is the line of sight. Every generator is
a pure function of its configuration and seed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .estimators import ModelClass, Transform
from .geometry import RigidTransform, UnitQuaternion

CUBE_EDGE_MM = 50.8  # 2 inch cube
MULTIPOINT_CORNERS = (0, 1, 2, 3, 4)


class Phase(str, enum.Enum):
    TRAIN = "train"
    TEST = "test"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class PointCorrespondence:
    """One tracker/display pair. ``outlier`` marks injected gross errors."""

    q: tuple[float, float, float]
    p: tuple[float, float, float]
    phase: Phase = Phase.TRAIN
    pose_id: int = 0
    corner_id: int = 0
    outlier: bool = field(default=False, compare=False)

    def __post_init__(self):
        q = tuple(float(v) for v in self.q)
        p = tuple(float(v) for v in self.p)
        if len(q) != 3 or len(p) != 3 or not all(map(math.isfinite, q + p)):
            raise ValueError("correspondence points must be finite 3-vectors")
        if not 0 <= self.corner_id <= 4:
            raise ValueError(f"corner_id {self.corner_id} outside [0, 4]")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "phase", Phase(self.phase))


@dataclass(frozen=True)
class WorkspaceFrustum:
    """Square-section viewing frustum along +z.

    Areas are in cm^2 and depth in cm (as usually quoted for HMD workspaces);
    ``center_distance`` is the mm distance from the eye to the mid plane.
    """

    near_area: float
    far_area: float
    depth_range: float
    center_distance: float = 450.0

    def __post_init__(self):
        if min(self.near_area, self.far_area, self.depth_range, self.center_distance) <= 0:
            raise ValueError("workspace dimensions must be positive")

    @property
    def near_z(self) -> float:
        return self.center_distance - 5.0 * self.depth_range

    @property
    def far_z(self) -> float:
        return self.center_distance + 5.0 * self.depth_range

    @property
    def center(self) -> NDArray:
        return np.array([0.0, 0.0, self.center_distance])

    def half_width(self, z: ArrayLike) -> NDArray:
        near = 5.0 * math.sqrt(self.near_area)
        far = 5.0 * math.sqrt(self.far_area)
        s = (np.asarray(z, dtype=float) - self.near_z) / (self.far_z - self.near_z)
        return near + s * (far - near)

    def contains(self, points: ArrayLike, tol: float = 1e-9) -> NDArray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        z = pts[:, 2]
        hw = self.half_width(z)
        return ((z >= self.near_z - tol) & (z <= self.far_z + tol)
                & (np.abs(pts[:, 0]) <= hw + tol) & (np.abs(pts[:, 1]) <= hw + tol))

    def from_unit(self, uvw: NDArray) -> NDArray:
        z = self.near_z + uvw[:, 2] * (self.far_z - self.near_z)
        hw = self.half_width(z)
        return np.c_[(2 * uvw[:, 0] - 1) * hw, (2 * uvw[:, 1] - 1) * hw, z]

    def sample(self, n: int, rng: np.random.Generator) -> NDArray:
        """Stratified sample: ``n`` distinct cells of an m^3 grid, jittered."""
        m = max(1, math.ceil(round(n ** (1.0 / 3.0), 9)))
        cells = rng.permutation(m ** 3)[:n]
        ijk = np.stack(np.unravel_index(cells, (m, m, m)), axis=1)
        uvw = (ijk + rng.random((n, 3))) / m
        return self.from_unit(uvw)


HOLOLENS = WorkspaceFrustum(110.88, 38.88, 12.0)
MOVERIO = WorkspaceFrustum(70.58, 26.55, 12.0)
WORLD_BOX = WorkspaceFrustum(3600.0, 3600.0, 60.0, 700.0)
WORKSPACES = {"hololens": HOLOLENS, "moverio": MOVERIO, "world": WORLD_BOX}


@dataclass(frozen=True)
class NoiseModel:
    """Alignment noise in mm. ``sigma_z`` acts along the line of sight."""

    sigma_xy: float = 1.0
    sigma_z: float = 3.0
    outlier_probability: float = 0.0
    outlier_magnitude: float = 50.0
    multipoint_pose_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.sigma_xy, self.sigma_z, self.multipoint_pose_sigma) < 0:
            raise ValueError("noise sigmas must be >= 0")
        if not 0 <= self.outlier_probability < 1:
            raise ValueError("outlier_probability must be in [0, 1)")
        if self.outlier_probability > 0 and \
                self.outlier_magnitude <= 3 * max(self.sigma_xy, self.sigma_z):
            raise ValueError("outliers must sit outside the 3-sigma inlier envelope")

    @classmethod
    def noiseless(cls, seed: int = 0) -> NoiseModel:
        return cls(0.0, 0.0, seed=seed)

    @property
    def sigmas(self) -> NDArray:
        return np.array([self.sigma_xy, self.sigma_xy, self.sigma_z])


class Scenario(str, enum.Enum):
    HEAD_ANCHORED = "head_anchored"
    WORLD_ANCHORED = "world_anchored"


@dataclass(frozen=True)
class GroundTruth:
    """True tracker-to-display transform plus spatial-mapping drift (world only)."""

    transform: Transform
    scenario: Scenario = Scenario.HEAD_ANCHORED
    drift_sigma_mm: float = 0.0
    drift_sigma_mrad: float = 0.0

    def __post_init__(self):
        if abs(np.linalg.det(self.transform.matrix)) < 1e-12:
            raise ValueError("ground-truth transform must be invertible")
        if min(self.drift_sigma_mm, self.drift_sigma_mrad) < 0:
            raise ValueError("drift sigmas must be >= 0")
        object.__setattr__(self, "scenario", Scenario(self.scenario))


PRESETS = ("rigid", "scaled", "shear", "perspective")
PRESET_MODEL = {
    "rigid": ModelClass.ISOMETRIC,
    "scaled": ModelClass.AFFINE,
    "shear": ModelClass.AFFINE,
    "perspective": ModelClass.PERSPECTIVE,
}


def preset_matrix(preset: str, seed: int = 0) -> NDArray:
    """Ground-truth 4x4 for one of :data:`PRESETS`.

    All presets share a random rigid core (rotation up to ~5 deg, translation
    ~20 mm). ``scaled`` multiplies by 1.05, ``shear`` adds off-diagonal terms
    of a few percent, ``perspective`` also perturbs the last row by at most
    2e-4 per mm.
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {PRESETS}")
    rng = np.random.default_rng(seed)
    axis = rng.normal(size=3)
    angle = rng.uniform(-1, 1) * math.radians(5.0)
    core = RigidTransform(UnitQuaternion.from_axis_angle(axis, angle),
                          rng.normal(scale=20.0, size=3))
    m = core.as_matrix()
    if preset == "scaled":
        m[:3, :3] *= 1.05
    elif preset in ("shear", "perspective"):
        shear = np.eye(3) + rng.uniform(-0.04, 0.04, size=(3, 3))
        m[:3, :3] = m[:3, :3] @ shear
    if preset == "perspective":
        m[3, :3] = rng.uniform(-2e-4, 2e-4, size=3)
    return m


def make_ground_truth(preset: str = "rigid", seed: int = 0,
                      scenario: Scenario = Scenario.HEAD_ANCHORED,
                      drift_sigma_mm: float = 0.0,
                      drift_sigma_mrad: float = 0.0) -> GroundTruth:
    m = preset_matrix(preset, seed)
    return GroundTruth(Transform(m, PRESET_MODEL[preset]), scenario,
                       drift_sigma_mm, drift_sigma_mrad)


@dataclass(frozen=True)
class CalibrationSession:
    correspondences: tuple[PointCorrespondence, ...]
    cube_edge: float = CUBE_EDGE_MM
    ground_truth: GroundTruth | None = None
    workspace: WorkspaceFrustum = HOLOLENS
    noise: NoiseModel = field(default_factory=NoiseModel)

    def __post_init__(self):
        if self.cube_edge <= 0:
            raise ValueError("cube_edge must be positive")
        object.__setattr__(self, "correspondences", tuple(self.correspondences))

    def select(self, phase: Phase | str) -> list[PointCorrespondence]:
        return [c for c in self.correspondences if c.phase == Phase(phase)]

    @property
    def train(self) -> list[PointCorrespondence]:
        return self.select(Phase.TRAIN)

    @property
    def test(self) -> list[PointCorrespondence]:
        return self.select(Phase.TEST)

    def arrays(self, phase: Phase | str | None = None) -> tuple[NDArray, NDArray]:
        """``(q, p)`` arrays of shape ``(n, 3)``, optionally for one phase."""
        cs = self.correspondences if phase is None else self.select(phase)
        q = np.array([c.q for c in cs], dtype=float).reshape(-1, 3)
        p = np.array([c.p for c in cs], dtype=float).reshape(-1, 3)
        return q, p


def cube_corners(edge: float = CUBE_EDGE_MM) -> NDArray:
    """Corners of an axis-aligned cube with corner 0 at the origin.

    Index layout (in units of ``edge``)::

        0 (0,0,0)  1 (1,0,0)  2 (0,1,0)  3 (0,0,1)
        4 (1,1,0)  5 (1,0,1)  6 (0,1,1)  7 (1,1,1)

    Indices 0-4 are the multipoint alignment set: corner 0, its three edge
    neighbours and the diagonal corner of the z=0 face.
    """
    if edge <= 0:
        raise ValueError("edge must be positive")
    unit = np.array([
        [0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1],
        [1, 1, 0], [1, 0, 1], [0, 1, 1], [1, 1, 1],
    ], dtype=float)
    return unit * edge


def _observe(p_clean: NDArray, nm: NoiseModel, rng: np.random.Generator) -> tuple[NDArray, NDArray]:
    # draw everything unconditionally so the stream layout never depends on config
    n = len(p_clean)
    gauss = rng.normal(size=(n, 3)) * nm.sigmas
    is_out = rng.random(n) < nm.outlier_probability
    direction = rng.normal(size=(n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    p = p_clean + gauss
    p[is_out] += nm.outlier_magnitude * direction[is_out]
    return p, is_out


def _records(q: NDArray, p: NDArray, outliers: NDArray, phase: Phase,
             pose_ids: Sequence[int], corner_ids: Sequence[int]) -> list[PointCorrespondence]:
    return [PointCorrespondence(tuple(qi), tuple(pi), phase, int(k), int(c), bool(o))
            for qi, pi, o, k, c in zip(q, p, outliers, pose_ids, corner_ids)]


def generate_single_point_session(gt: GroundTruth, ws: WorkspaceFrustum = HOLOLENS,
                                  nm: NoiseModel = NoiseModel(),
                                  n_train: int = 20, n_test: int = 8) -> CalibrationSession:
    """Standard one-corner protocol: ``n_train`` calibration + ``n_test`` held-out points."""
    if n_train < 5:
        raise ValueError("n_train must be >= 5")
    rng = np.random.default_rng(nm.seed)
    q = np.vstack([ws.sample(n_train, rng), ws.sample(n_test, rng)])
    return _single_point_from(q, gt.transform.apply(q), gt, ws, nm, rng, n_train)


def _single_point_from(q, p_clean, gt, ws, nm, rng, n_train) -> CalibrationSession:
    p, out = _observe(p_clean, nm, rng)
    n = len(q)
    ids = list(range(n_train)) + list(range(n - n_train))
    recs = (_records(q[:n_train], p[:n_train], out[:n_train], Phase.TRAIN, ids[:n_train], [0] * n)
            + _records(q[n_train:], p[n_train:], out[n_train:], Phase.TEST, ids[n_train:], [0] * n))
    return CalibrationSession(tuple(recs), ground_truth=gt, workspace=ws, noise=nm)


def _place_cube(ws: WorkspaceFrustum, local: NDArray, center: NDArray,
                rng: np.random.Generator, max_tilt: float, tries: int = 2000) -> RigidTransform:
    for attempt in range(tries):
        if attempt:
            center = ws.sample(1, rng)[0]
        rot = UnitQuaternion.from_rotvec(rng.uniform(-1, 1, 3) * max_tilt)
        g = RigidTransform(rot, center)
        if np.all(ws.contains(g.apply(local))):
            return g
    raise RuntimeError("could not fit the cube inside the workspace")


def generate_multipoint_session(gt: GroundTruth, ws: WorkspaceFrustum = HOLOLENS,
                                nm: NoiseModel = NoiseModel(), n_poses: int = 4,
                                cube_edge: float = CUBE_EDGE_MM) -> CalibrationSession:
    """Five cube corners per placement, ``n_poses`` placements, train phase only.

    Each placement gets one rigid perturbation shared by its five corners
    (translation sigma ``multipoint_pose_sigma``, rotation sigma
    ``multipoint_pose_sigma / cube_edge`` rad about the corner centroid), then
    independent per-corner noise.
    """
    if n_poses < 2:
        raise ValueError("n_poses must be >= 2")
    rng = np.random.default_rng(nm.seed)
    corners = cube_corners(cube_edge)
    local = corners[list(MULTIPOINT_CORNERS)] - corners.mean(axis=0)
    centers = ws.sample(n_poses, rng)
    places = [_place_cube(ws, local, c, rng, math.radians(30.0)) for c in centers]

    q = np.vstack([g.apply(local) for g in places])
    p = gt.transform.apply(q)
    sigma = nm.multipoint_pose_sigma
    for k in range(n_poses):
        t_err = rng.normal(scale=sigma, size=3)
        w_err = rng.normal(scale=sigma / cube_edge, size=3)
        if sigma > 0:
            blk = p[5 * k:5 * k + 5]
            c = blk.mean(axis=0)
            p[5 * k:5 * k + 5] = (blk - c) @ UnitQuaternion.from_rotvec(w_err).as_matrix().T + c + t_err
    p, out = _observe(p, nm, rng)
    pose_ids = np.repeat(np.arange(n_poses), 5)
    corner_ids = np.tile(np.array(MULTIPOINT_CORNERS), n_poses)
    recs = _records(q, p, out, Phase.TRAIN, pose_ids, corner_ids)
    return CalibrationSession(tuple(recs), cube_edge, gt, ws, nm)


@dataclass(frozen=True)
class WorldRig:
    """Fixed tracker pose in the world and the nominal head pose."""

    world_from_tracker: RigidTransform = field(default_factory=RigidTransform)
    world_from_head: RigidTransform = field(default_factory=RigidTransform)


# tracker 1.5 m in front of the user facing back; head at standing eye height
DEFAULT_RIG = WorldRig(
    RigidTransform(UnitQuaternion.from_axis_angle((0, 1, 0), math.pi), (0.0, 1600.0, 1500.0)),
    RigidTransform(UnitQuaternion(), (0.0, 1650.0, 0.0)),
)


@dataclass(frozen=True)
class Placement:
    """Object pose in the tracker frame and the alignment point on the object."""

    object_pose: RigidTransform
    point: tuple[float, float, float] = (0.0, 0.0, 0.0)


def simulate_world_anchored_chain(gt: GroundTruth, placements: Sequence[Placement],
                                  rig: WorldRig = WorldRig(),
                                  seed: int = 0) -> list[PointCorrespondence]:
    """Tracker-to-display chain through the HMD's self-localization.

    The measured point is ``inv(G_WH_est) . G_WE . G_EO . point`` where the
    estimated head pose carries drift independently resampled per placement
    (constant within it). The display point is ``T`` applied to the same chain
    evaluated with the drift-free head pose. No display noise is added here.
    """
    q, x_true = _world_chain(gt, placements, rig, np.random.default_rng((seed, 1)))
    p = gt.transform.apply(x_true)
    return _records(q, p, np.zeros(len(q), bool), Phase.TRAIN, range(len(q)), [0] * len(q))


def _world_chain(gt, placements, rig, drift_rng) -> tuple[NDArray, NDArray]:
    q = np.empty((len(placements), 3))
    x_true = np.empty((len(placements), 3))
    head_true_inv = rig.world_from_head.inverse()
    for i, pl in enumerate(placements):
        dt = drift_rng.normal(scale=gt.drift_sigma_mm, size=3)
        dw = drift_rng.normal(scale=gt.drift_sigma_mrad * 1e-3, size=3)
        x_world = rig.world_from_tracker.apply(pl.object_pose.apply(np.asarray(pl.point, float)))
        head_est = rig.world_from_head @ RigidTransform(UnitQuaternion.from_rotvec(dw), dt)
        q[i] = head_est.inverse().apply(x_world)
        x_true[i] = head_true_inv.apply(x_world)
    return q, x_true


def generate_world_anchored_session(gt: GroundTruth, ws: WorkspaceFrustum = WORLD_BOX,
                                    nm: NoiseModel = NoiseModel(1.0, 1.0),
                                    rig: WorldRig = WorldRig(),
                                    n_train: int = 20, n_test: int = 8) -> CalibrationSession:
    """Outside-in protocol: points are tracked externally and pulled into the HMD frame.

    Placements are sampled in the HMD frame exactly as in the head-anchored
    generator, so with zero drift and identity rig both generators agree bit
    for bit on the same seed.
    """
    if n_train < 5:
        raise ValueError("n_train must be >= 5")
    rng = np.random.default_rng(nm.seed)
    x_head = np.vstack([ws.sample(n_train, rng), ws.sample(n_test, rng)])
    tracker_from_head = rig.world_from_tracker.inverse() @ rig.world_from_head
    placements = [Placement(RigidTransform(UnitQuaternion(), x)) for x in tracker_from_head.apply(x_head)]
    q, x_true = _world_chain(gt, placements, rig, np.random.default_rng((nm.seed, 1)))
    return _single_point_from(q, gt.transform.apply(x_true), gt, ws, nm, rng, n_train)


def with_test_points(session: CalibrationSession, extra: Sequence[PointCorrespondence]) -> CalibrationSession:
    return replace(session, correspondences=session.correspondences + tuple(extra))
