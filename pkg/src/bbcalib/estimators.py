"""3D-3D transform estimators, RANSAC wrapper and pivot calibration.

Three model classes map tracker-space points ``q`` onto display-space
points ``p``:

* isometric -- rotation + translation, closed-form SVD registration (Arun)
* affine -- 12-parameter linear least squares
* perspective -- 15-parameter projective 4x4 via normalized DLT

Estimators take ``q`` and ``p`` as ``(n, 3)`` arrays.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import geometry
from .errors import (
    DegenerateConfiguration,
    DegenerateMotion,
    NoConsensus,
    TooFewPoints,
)
from .geometry import RigidTransform

if TYPE_CHECKING:
    from .metrics import ErrorStats

# single conditioning knob shared by every degeneracy check
CONDITION_LIMIT = 1e8


class ModelClass(str, enum.Enum):
    ISOMETRIC = "isometric"
    AFFINE = "affine"
    PERSPECTIVE = "perspective"

    @property
    def min_samples(self) -> int:
        return _MIN_SAMPLES[self]

    def __str__(self) -> str:
        return self.value


_MIN_SAMPLES = {ModelClass.ISOMETRIC: 3, ModelClass.AFFINE: 4, ModelClass.PERSPECTIVE: 5}


def canonical_matrix(m: ArrayLike) -> NDArray:
    """Scale a 4x4 matrix to unit Frobenius norm with a fixed sign.

    The sign makes the ``[3, 3]`` entry positive; if that entry is zero the
    largest-magnitude entry is made positive instead. Matrices already at
    unit norm (to a few ulp) are not rescaled, so the map is idempotent bit
    for bit.
    """
    m = np.asarray(m, dtype=float)
    n = np.linalg.norm(m)
    if abs(n - 1.0) > 8 * np.finfo(float).eps:
        m = m / n
    pivot = m[3, 3] if m[3, 3] != 0 else m.flat[np.argmax(np.abs(m))]
    return -m if pivot < 0 else m


def matrix_distance(a: ArrayLike, b: ArrayLike) -> float:
    """Frobenius distance between two matrices after canonical scaling."""
    return float(np.linalg.norm(canonical_matrix(a) - canonical_matrix(b)))


@dataclass(frozen=True, eq=False)
class Transform:
    """A 4x4 homogeneous matrix tagged with the model class it belongs to."""

    matrix: NDArray
    model: ModelClass

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        model = ModelClass(self.model)
        if m.shape != (4, 4) or not np.all(np.isfinite(m)):
            raise ValueError("transform must be a finite 4x4 matrix")
        if model is ModelClass.PERSPECTIVE:
            m = canonical_matrix(m)
        else:
            if not np.allclose(m[3], [0, 0, 0, 1], rtol=0, atol=1e-12):
                raise ValueError(f"{model} transform needs last row (0, 0, 0, 1)")
            m[3] = (0.0, 0.0, 0.0, 1.0)
            if model is ModelClass.ISOMETRIC and not geometry.is_rotation(m[:3, :3]):
                raise ValueError("isometric transform needs an orthonormal rotation block")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "model", model)

    def apply(self, points: ArrayLike) -> NDArray:
        return geometry.apply(self.matrix, points)

    def __repr__(self) -> str:
        return f"Transform(model={self.model.value}, matrix={self.matrix.tolist()})"


def _check_points(q: ArrayLike, p: ArrayLike, model: ModelClass) -> tuple[NDArray, NDArray]:
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.ndim != 2 or q.shape[1] != 3 or q.shape != p.shape:
        raise ValueError(f"expected matching (n, 3) arrays, got {q.shape} and {p.shape}")
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
        raise ValueError("non-finite correspondence")
    if len(q) < model.min_samples:
        raise TooFewPoints(f"{model} needs at least {model.min_samples} points, got {len(q)}")
    return q, p


def similarity_normalization(x: NDArray) -> NDArray:
    """4x4 similarity moving the centroid to the origin, mean distance to sqrt(3)."""
    c = x.mean(axis=0)
    d = np.linalg.norm(x - c, axis=1).mean()
    if d == 0.0:
        raise DegenerateConfiguration("all points coincide")
    s = np.sqrt(3.0) / d
    n = np.eye(4)
    n[:3, :3] *= s
    n[:3, 3] = -s * c
    return n


def estimate_isometric(q: ArrayLike, p: ArrayLike) -> Transform:
    """Least-squares rigid registration of ``q`` onto ``p``."""
    q, p = _check_points(q, p, ModelClass.ISOMETRIC)
    qc = q.mean(axis=0)
    pc = p.mean(axis=0)
    sv = np.linalg.svd(q - qc, compute_uv=False)
    # three points are always coplanar, so only collinearity is rejected
    if sv[1] <= sv[0] / CONDITION_LIMIT:
        raise DegenerateConfiguration("tracker points are collinear")
    h = (q - qc).T @ (p - pc)
    u, _, vt = np.linalg.svd(h)
    v = vt.T
    if np.linalg.det(v @ u.T) < 0:
        v[:, -1] *= -1
    r = v @ u.T
    m = np.eye(4)
    m[:3, :3] = r
    m[:3, 3] = pc - r @ qc
    return Transform(m, ModelClass.ISOMETRIC)


def estimate_affine(q: ArrayLike, p: ArrayLike) -> Transform:
    """Least-squares 12-parameter affine map (algebraic = geometric error)."""
    q, p = _check_points(q, p, ModelClass.AFFINE)
    nq = similarity_normalization(q)
    design = np.c_[q @ nq[:3, :3].T + nq[:3, 3], np.ones(len(q))]
    if np.linalg.cond(design) >= CONDITION_LIMIT:
        raise DegenerateConfiguration("tracker points are coplanar")
    sol, *_ = np.linalg.lstsq(design, p, rcond=None)
    m = np.eye(4)
    m[:3, :] = sol.T
    m = m @ nq
    m[3] = (0.0, 0.0, 0.0, 1.0)
    return Transform(m, ModelClass.AFFINE)


def _dlt_rows(qh: NDArray, ph: NDArray) -> NDArray:
    # p ~ T q  =>  T_k . q - p_k * (T_4 . q) = 0 for k = 0, 1, 2
    n = len(qh)
    a = np.zeros((3 * n, 16))
    for k in range(3):
        rows = a[k::3]
        rows[:, 4 * k:4 * k + 4] = qh
        rows[:, 12:16] = -ph[:, k:k + 1] * qh
    return a


def estimate_perspective(q: ArrayLike, p: ArrayLike) -> Transform:
    """Normalized DLT for a general 4x4 projective map (algebraic error)."""
    q, p = _check_points(q, p, ModelClass.PERSPECTIVE)
    nq = similarity_normalization(q)
    np_ = similarity_normalization(p)
    qh = np.c_[q, np.ones(len(q))] @ nq.T
    ph = np.c_[p, np.ones(len(p))] @ np_.T
    a = _dlt_rows(qh, ph[:, :3])
    _, s, vt = np.linalg.svd(a)
    if s[14] <= s[0] / CONDITION_LIMIT:
        raise DegenerateConfiguration("perspective design matrix is ill-conditioned")
    tn = vt[-1].reshape(4, 4)
    m = np.linalg.solve(np_, tn @ nq)
    return Transform(m, ModelClass.PERSPECTIVE)


ESTIMATORS = {
    ModelClass.ISOMETRIC: estimate_isometric,
    ModelClass.AFFINE: estimate_affine,
    ModelClass.PERSPECTIVE: estimate_perspective,
}


def estimate(q: ArrayLike, p: ArrayLike, model: ModelClass | str) -> Transform:
    return ESTIMATORS[ModelClass(model)](q, p)


def residual_norms(t: Transform | ArrayLike, q: ArrayLike, p: ArrayLike) -> NDArray:
    """Per-point ``||p - T(q)||``; points sent to infinity get ``inf``."""
    m = t.matrix if isinstance(t, Transform) else np.asarray(t, dtype=float)
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    h = q @ m[:, :3].T + m[:, 3]
    w = h[:, 3]
    ok = np.abs(w) > geometry.DEHOMOGENIZE_EPS * np.linalg.norm(h, axis=1)
    out = np.full(len(q), np.inf)
    out[ok] = np.linalg.norm(p[ok] - h[ok, :3] / w[ok, None], axis=1)
    return out


@dataclass(frozen=True)
class RansacConfig:
    inlier_threshold: float = 5.0
    max_iterations: int = 500
    min_inlier_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0 < self.min_inlier_fraction <= 1:
            raise ValueError("min_inlier_fraction must be in (0, 1]")


@dataclass(frozen=True, eq=False)
class EstimationResult:
    transform: Transform
    inlier_mask: NDArray
    train_residual: ErrorStats

    @property
    def n_inliers(self) -> int:
        return int(self.inlier_mask.sum())


def _batch_normalization(x: NDArray) -> tuple[NDArray, NDArray]:
    # per-sample similarity normalization of (B, k, 3) stacks
    c = x.mean(axis=1, keepdims=True)
    d = np.linalg.norm(x - c, axis=2).mean(axis=1)
    ok = d > 0
    s = np.sqrt(3.0) / np.where(ok, d, 1.0)
    n = np.zeros((len(x), 4, 4))
    n[:, 0, 0] = n[:, 1, 1] = n[:, 2, 2] = s
    n[:, :3, 3] = -s[:, None] * c[:, 0]
    n[:, 3, 3] = 1.0
    return n, ok


def _hom(x: NDArray) -> NDArray:
    return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)


def _minimal_fits(model: ModelClass, qs: NDArray, ps: NDArray) -> tuple[NDArray, NDArray]:
    """Fit every minimal sample in a ``(B, k, 3)`` stack at once.

    Same math and degeneracy rules as the single-sample estimators. Returns
    ``(B, 4, 4)`` matrices and a validity mask.
    """
    b = len(qs)
    if model is ModelClass.ISOMETRIC:
        qc = qs - qs.mean(axis=1, keepdims=True)
        pc = ps - ps.mean(axis=1, keepdims=True)
        sv = np.linalg.svd(qc, compute_uv=False)
        ok = sv[:, 1] > sv[:, 0] / CONDITION_LIMIT
        u, _, vt = np.linalg.svd(np.einsum("bki,bkj->bij", qc, pc))
        v = np.swapaxes(vt, 1, 2).copy()
        flip = np.linalg.det(v @ np.swapaxes(u, 1, 2)) < 0
        v[flip, :, -1] *= -1
        r = v @ np.swapaxes(u, 1, 2)
        m = np.tile(np.eye(4), (b, 1, 1))
        m[:, :3, :3] = r
        m[:, :3, 3] = ps.mean(axis=1) - np.einsum("bij,bj->bi", r, qs.mean(axis=1))
        return m, ok
    nq, ok = _batch_normalization(qs)
    qn = np.einsum("bij,bkj->bki", nq, _hom(qs))
    if model is ModelClass.AFFINE:
        sv = np.linalg.svd(qn, compute_uv=False)
        ok &= sv[:, -1] > sv[:, 0] / CONDITION_LIMIT
        design = np.where(ok[:, None, None], qn, np.eye(4))
        sol = np.linalg.solve(design, _hom(ps))
        m = np.swapaxes(sol, 1, 2) @ nq
        m[:, 3] = (0.0, 0.0, 0.0, 1.0)
        return m, ok
    np_, ok_p = _batch_normalization(ps)
    ok &= ok_p
    pn = np.einsum("bij,bkj->bki", np_, _hom(ps))
    a = np.zeros((b, 3 * qs.shape[1], 16))
    for k in range(3):
        a[:, k::3, 4 * k:4 * k + 4] = qn
        a[:, k::3, 12:16] = -pn[:, :, k:k + 1] * qn
    _, s, vt = np.linalg.svd(a)
    ok &= s[:, 14] > s[:, 0] / CONDITION_LIMIT
    tn = vt[:, -1].reshape(b, 4, 4)
    m = np.linalg.solve(np.where(ok[:, None, None], np_, np.eye(4)), tn @ nq)
    return m, ok


def _batch_residuals(m: NDArray, q: NDArray, p: NDArray) -> NDArray:
    h = np.einsum("bij,nj->bni", m, _hom(q))
    w = h[..., 3]
    good = np.abs(w) > geometry.DEHOMOGENIZE_EPS * np.linalg.norm(h, axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.linalg.norm(p - h[..., :3] / w[..., None], axis=2)
    return np.where(good, err, np.inf)


def ransac_estimate(q: ArrayLike, p: ArrayLike, model: ModelClass | str,
                    cfg: RansacConfig = RansacConfig()) -> EstimationResult:
    """Fit ``model`` robustly, rejecting points by reprojection error.

    ``cfg.max_iterations`` minimal subsets are drawn from a generator seeded
    with ``cfg.seed`` (hypotheses are fitted in vectorized batches). The
    hypothesis with the most inliers wins, ties going to the lower mean
    inlier error and then to the earlier draw; the final transform is refit
    on that hypothesis's inliers only.

    Raises:
        DegenerateConfiguration: the full point set cannot determine ``model``.
        NoConsensus: best inlier fraction below ``cfg.min_inlier_fraction``.
    """
    from .metrics import reprojection_error

    model = ModelClass(model)
    q, p = _check_points(q, p, model)
    n = len(q)
    # no subset of a degenerate set can be better conditioned; fail before sampling
    ESTIMATORS[model](q, p)
    rng = np.random.default_rng(cfg.seed)
    idx = np.array([rng.choice(n, size=model.min_samples, replace=False)
                    for _ in range(cfg.max_iterations)])

    best_mask = None
    best_key = (0, -np.inf)
    for start in range(0, len(idx), 256):
        chunk = idx[start:start + 256]
        with np.errstate(all="ignore"):
            mats, ok = _minimal_fits(model, q[chunk], p[chunk])
        if not ok.any():
            continue
        err = _batch_residuals(mats[ok], q, p)
        masks = err < cfg.inlier_threshold
        counts = masks.sum(axis=1)
        with np.errstate(invalid="ignore"):
            means = np.where(counts > 0, np.where(masks, err, 0.0).sum(axis=1) / np.maximum(counts, 1), np.inf)
        # lexsort: last key primary; earliest draw wins exact ties
        order = np.lexsort((np.arange(len(counts)), means, -counts))
        i = order[0]
        key = (int(counts[i]), -float(means[i]))
        if key[0] > 0 and key > best_key:
            best_key, best_mask = key, masks[i]

    if best_mask is None or best_key[0] < max(model.min_samples, cfg.min_inlier_fraction * n):
        frac = 0.0 if best_mask is None else best_key[0] / n
        raise NoConsensus(f"{model}: best inlier fraction {frac:.2f} below {cfg.min_inlier_fraction}")

    transform = ESTIMATORS[model](q[best_mask], p[best_mask])
    stats = reprojection_error(transform, q[best_mask], p[best_mask])
    return EstimationResult(transform, best_mask, stats)


@dataclass(frozen=True, eq=False)
class PivotResult:
    tip_offset: NDArray
    pivot_point: NDArray
    rms_residual: float

    def __iter__(self):
        return iter((self.tip_offset, self.pivot_point, self.rms_residual))


def pivot_calibration(poses: Sequence[RigidTransform]) -> PivotResult:
    """Recover a tool-tip offset and the fixed pivot it rotates about.

    Each pose ``(R_i, t_i)`` contributes ``R_i tip + t_i = pivot``, stacked
    as ``[R_i | -I] [tip; pivot] = -t_i`` and solved in least squares.

    Returns:
        ``(tip_offset, pivot_point, rms_residual)``; the residual is the RMS
        over all ``3n`` scalar equations, in mm.
    """
    if len(poses) < 3:
        raise DegenerateMotion(f"pivot calibration needs >= 3 poses, got {len(poses)}")
    a = np.zeros((3 * len(poses), 6))
    b = np.zeros(3 * len(poses))
    for i, g in enumerate(poses):
        a[3 * i:3 * i + 3, :3] = g.rotation.as_matrix()
        a[3 * i:3 * i + 3, 3:] = -np.eye(3)
        b[3 * i:3 * i + 3] = -g.translation
    if np.linalg.cond(a) >= CONDITION_LIMIT:
        raise DegenerateMotion("poses need rotation about at least two distinct axes")
    x, *_ = np.linalg.lstsq(a, b, rcond=None)
    rms = float(np.sqrt(np.mean((a @ x - b) ** 2)))
    return PivotResult(x[:3], x[3:], rms)

