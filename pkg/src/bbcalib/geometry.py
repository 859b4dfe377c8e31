"""Homogeneous transforms, unit quaternions and rigid-transform algebra.

All lengths are millimeters. Points are numpy arrays of shape ``(3,)`` or
``(n, 3)``; homogeneous matrices are ``(4, 4)`` arrays and display
projections ``(3, 4)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import NearInfinityPoint, RankDeficient

# relative threshold on the homogeneous coordinate before division
DEHOMOGENIZE_EPS = 1e-12


def _canonical_sign(v: NDArray) -> NDArray:
    # q and -q are the same rotation; pick w > 0, else first nonzero of x, y, z > 0
    for c in v:
        if c > 0:
            return v
        if c < 0:
            return -v
    return v


@dataclass(frozen=True)
class UnitQuaternion:
    """Rotation quaternion in ``(w, x, y, z)`` order.

    Normalized and moved to the canonical hemisphere on construction, so two
    quaternions describing the same rotation compare equal.
    """

    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        v = np.array([self.w, self.x, self.y, self.z], dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError(f"non-finite quaternion {v}")
        n = np.linalg.norm(v)
        if n == 0.0:
            raise ValueError("zero quaternion")
        v = _canonical_sign(v / n)
        for name, c in zip("wxyz", v):
            object.__setattr__(self, name, float(c))

    @classmethod
    def from_array(cls, v: ArrayLike) -> UnitQuaternion:
        w, x, y, z = np.asarray(v, dtype=float)
        return cls(w, x, y, z)

    @classmethod
    def from_axis_angle(cls, axis: ArrayLike, angle: float) -> UnitQuaternion:
        axis = np.asarray(axis, dtype=float)
        n = np.linalg.norm(axis)
        if n == 0.0:
            return cls()
        s = np.sin(angle / 2.0) / n
        return cls(np.cos(angle / 2.0), *(axis * s))

    @classmethod
    def from_rotvec(cls, rotvec: ArrayLike) -> UnitQuaternion:
        rotvec = np.asarray(rotvec, dtype=float)
        return cls.from_axis_angle(rotvec, float(np.linalg.norm(rotvec)))

    @classmethod
    def from_matrix(cls, r: ArrayLike) -> UnitQuaternion:
        """Convert a rotation matrix (Shepperd's branch selection)."""
        r = np.asarray(r, dtype=float)
        tr = np.trace(r)
        diag = np.diag(r)
        k = int(np.argmax(np.r_[tr, diag]))
        if k == 0:
            s = 2.0 * np.sqrt(1.0 + tr)
            q = [0.25 * s,
                 (r[2, 1] - r[1, 2]) / s,
                 (r[0, 2] - r[2, 0]) / s,
                 (r[1, 0] - r[0, 1]) / s]
        elif k == 1:
            s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
            q = [(r[2, 1] - r[1, 2]) / s,
                 0.25 * s,
                 (r[0, 1] + r[1, 0]) / s,
                 (r[0, 2] + r[2, 0]) / s]
        elif k == 2:
            s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
            q = [(r[0, 2] - r[2, 0]) / s,
                 (r[0, 1] + r[1, 0]) / s,
                 0.25 * s,
                 (r[1, 2] + r[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
            q = [(r[1, 0] - r[0, 1]) / s,
                 (r[0, 2] + r[2, 0]) / s,
                 (r[1, 2] + r[2, 1]) / s,
                 0.25 * s]
        return cls(*q)

    @classmethod
    def random(cls, rng: np.random.Generator) -> UnitQuaternion:
        """Uniformly distributed rotation."""
        return cls.from_array(rng.normal(size=4))

    def as_array(self) -> NDArray:
        return np.array([self.w, self.x, self.y, self.z])

    def as_matrix(self) -> NDArray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def conjugate(self) -> UnitQuaternion:
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    inverse = conjugate

    def __mul__(self, other: UnitQuaternion) -> UnitQuaternion:
        return UnitQuaternion.from_array(quat_multiply(self.as_array(), other.as_array()))

    def angle(self) -> float:
        """Rotation angle in radians, in ``[0, pi]``."""
        return 2.0 * float(np.arctan2(np.linalg.norm([self.x, self.y, self.z]), abs(self.w)))


def quat_multiply(a: NDArray, b: NDArray) -> NDArray:
    """Hamilton product of two ``(w, x, y, z)`` arrays."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def _as_vec3(v: ArrayLike) -> NDArray:
    v = np.asarray(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite point {v}")
    return v


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation plus translation (mm). ``apply(x) = R x + t``."""

    rotation: UnitQuaternion = field(default_factory=UnitQuaternion)
    translation: NDArray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = _as_vec3(self.translation).copy()
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return self.rotation == other.rotation and np.array_equal(self.translation, other.translation)

    def __hash__(self):
        return hash((self.rotation, tuple(self.translation)))

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_matrix(cls, m: ArrayLike) -> RigidTransform:
        m = np.asarray(m, dtype=float)
        return cls(UnitQuaternion.from_matrix(m[:3, :3]), m[:3, 3])

    @classmethod
    def random(cls, rng: np.random.Generator, translation_scale: float = 100.0) -> RigidTransform:
        return cls(UnitQuaternion.random(rng), rng.normal(scale=translation_scale, size=3))

    def as_matrix(self) -> NDArray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.as_matrix()
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> RigidTransform:
        return invert_rigid(self)

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        r = self.rotation * other.rotation
        t = self.rotation.as_matrix() @ other.translation + self.translation
        return RigidTransform(r, t)

    def apply(self, points: ArrayLike) -> NDArray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.as_matrix().T + self.translation


def translate(x: float, y: float, z: float) -> NDArray:
    m = np.eye(4)
    m[:3, 3] = (x, y, z)
    return m


def compose(a: ArrayLike, b: ArrayLike) -> NDArray:
    """Matrix product ``a @ b``: apply ``b`` first, then ``a``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite matrix")
    return a @ b


def apply(t: ArrayLike, points: ArrayLike) -> NDArray:
    """Map one point ``(3,)`` or a batch ``(n, 3)`` through a 4x4 matrix.

    Raises:
        NearInfinityPoint: if any image has a homogeneous coordinate below
            ``DEHOMOGENIZE_EPS`` relative to its norm.
    """
    t = np.asarray(t, dtype=float)
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    h = pts @ t[:, :3].T + t[:, 3]
    w = h[:, 3]
    bad = np.abs(w) <= DEHOMOGENIZE_EPS * np.linalg.norm(h, axis=1)
    if np.any(bad):
        raise NearInfinityPoint(f"{int(bad.sum())} point(s) map to infinity")
    out = h[:, :3] / w[:, None]
    return out[0] if single else out


def invert_rigid(g: RigidTransform) -> RigidTransform:
    r_inv = g.rotation.conjugate()
    return RigidTransform(r_inv, -(r_inv.as_matrix() @ g.translation))


def apply_to_projection(p_default: ArrayLike, t: ArrayLike) -> NDArray:
    """Corrected 3x4 projection ``p_default @ t``."""
    p_default = np.asarray(p_default, dtype=float)
    t = np.asarray(t, dtype=float)
    if p_default.shape != (3, 4) or t.shape != (4, 4):
        raise ValueError("expected a 3x4 projection and a 4x4 transform")
    out = p_default @ t
    if np.linalg.matrix_rank(out) < 3:
        raise RankDeficient("corrected projection has rank < 3")
    return out


def is_rotation(r: ArrayLike, tol: float = 1e-9) -> bool:
    r = np.asarray(r, dtype=float)
    return bool(np.allclose(r.T @ r, np.eye(3), atol=tol) and abs(np.linalg.det(r) - 1.0) <= tol)
