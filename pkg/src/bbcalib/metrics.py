"""Reprojection statistics, pose errors and quaternion averaging."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike

from .errors import AmbiguousAverage
from .geometry import RigidTransform, UnitQuaternion

AXES = ("x", "y", "z")


@dataclass(frozen=True)
class ErrorStats:
    """Mean/std of residual norms plus per-axis stats of |residual| (mm).

    Standard deviations are population (ddof=0) values.
    """

    mean: float
    std: float
    per_axis: tuple[tuple[float, float], tuple[float, float], tuple[float, float]]
    n: int

    @property
    def rms(self) -> float:
        return float(np.sqrt(self.mean ** 2 + self.std ** 2))

    def axis(self, name: str) -> tuple[float, float]:
        return self.per_axis[AXES.index(name)]


def error_stats(residuals: ArrayLike) -> ErrorStats:
    """Summarize an ``(n, 3)`` array of signed residual vectors."""
    r = np.atleast_2d(np.asarray(residuals, dtype=float))
    if len(r) == 0:
        raise ValueError("need at least one residual")
    norms = np.linalg.norm(r, axis=1)
    a = np.abs(r)
    per_axis = tuple((float(a[:, k].mean()), float(a[:, k].std())) for k in range(3))
    return ErrorStats(float(norms.mean()), float(norms.std()), per_axis, len(r))


def reprojection_error(t, q: ArrayLike, p: ArrayLike) -> ErrorStats:
    """Reprojection statistics of ``p - T(q)``.

    ``t`` may be a :class:`~bbcalib.estimators.Transform` or a bare 4x4 array.
    Raises :class:`~bbcalib.errors.NearInfinityPoint` if any ``q`` maps to
    infinity.
    """
    from .geometry import apply

    m = getattr(t, "matrix", t)
    q = np.atleast_2d(np.asarray(q, dtype=float))
    p = np.atleast_2d(np.asarray(p, dtype=float))
    return error_stats(p - apply(m, q))


def average_quaternion(qs: Iterable[UnitQuaternion | ArrayLike]) -> UnitQuaternion:
    """Eigenvector average of rotations (largest eigenvalue of sum q q^T).

    Inputs may be :class:`UnitQuaternion` or raw ``(w, x, y, z)`` vectors
    (normalized here, sign left alone). The result is insensitive to the sign
    of each input since ``q q^T = (-q)(-q)^T``.
    """
    arr = np.array([q.as_array() if isinstance(q, UnitQuaternion) else np.asarray(q, dtype=float)
                    for q in qs])
    if arr.ndim != 2 or arr.shape[1] != 4 or len(arr) == 0:
        raise ValueError("need at least one 4-component quaternion")
    arr = arr / np.linalg.norm(arr, axis=1, keepdims=True)
    m = arr.T @ arr
    vals, vecs = np.linalg.eigh(m)
    if vals[-1] - vals[-2] <= 1e-12 * max(vals[-1], 1.0):
        raise AmbiguousAverage("top two eigenvalues coincide; average is not unique")
    return UnitQuaternion.from_array(vecs[:, -1])


@dataclass(frozen=True)
class PoseError:
    displacement: float
    rotation: UnitQuaternion


def pose_error(achieved: RigidTransform, target: RigidTransform) -> PoseError:
    d = float(np.linalg.norm(achieved.translation - target.translation))
    if achieved.rotation == target.rotation:
        # conj(q) * q leaves rounding residue; equal orientations are exactly identity
        return PoseError(d, UnitQuaternion())
    return PoseError(d, target.rotation.conjugate() * achieved.rotation)


def summarize_rotation_errors(es: Sequence[PoseError]) -> UnitQuaternion:
    return average_quaternion(e.rotation for e in es)


def format_quaternion(q: UnitQuaternion, digits: int = 3) -> str:
    """``(w, x, y, z)`` tuple text, e.g. ``(0.999, 0.005, 0.002, 0.007)``."""
    vals = [0.0 if abs(v) < 0.5 * 10 ** -digits else v for v in q.as_array()]
    return "(" + ", ".join(f"{v:.{digits}f}" for v in vals) + ")"
