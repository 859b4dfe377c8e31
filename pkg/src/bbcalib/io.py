"""Text file formats: sessions, reports, transforms, double-cube results.

Writers go through :func:`atomic_write` so a failed command never leaves a
partial file behind.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .estimators import ModelClass, Transform
from .geometry import is_rotation
from .metrics import ErrorStats, format_quaternion
from .pipeline import CalibrationReport, DoubleCubeReport
from .simulator import CalibrationSession, GroundTruth, PointCorrespondence

SESSION_VERSION = "version,1"
SESSION_HEADER = ["index", "phase", "pose_id", "corner_id", "qx", "qy", "qz", "px", "py", "pz"]
REPORT_HEADER = ["model", "phase", "n", "mean_mm", "std_mm",
                 "x_mean", "x_std", "y_mean", "y_std", "z_mean", "z_std", "inliers"]
DOUBLECUBE_HEADER = ["placement", "disp_mm", "qw", "qx", "qy", "qz"]


class FormatError(ValueError):
    pass


def atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _g9(v: float) -> str:
    return f"{v:.9g}"


def _g17(v: float) -> str:
    return f"{v:.17g}"


def _f6(v: float) -> str:
    # no "-0.000000" for values that round to zero
    return f"{round(v, 6) or 0.0:.6f}"


# -- sessions ----------------------------------------------------------------

def format_session(session: CalibrationSession | Sequence[PointCorrespondence],
                   ground_truth: np.ndarray | None = None, q_only: bool = False) -> str:
    """Serialize correspondences (9 significant digits) plus an optional ``gt,`` row.

    With ``q_only`` the display columns are left empty (tracker-side fragment).
    """
    if isinstance(session, CalibrationSession):
        cs = session.correspondences
        if ground_truth is None and session.ground_truth is not None:
            ground_truth = session.ground_truth.transform.matrix
    else:
        cs = session
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    buf.write(SESSION_VERSION + "\n")
    w.writerow(SESSION_HEADER)
    for i, c in enumerate(cs):
        p = ["", "", ""] if q_only else [_g9(v) for v in c.p]
        w.writerow([i, c.phase.value, c.pose_id, c.corner_id, *map(_g9, c.q), *p])
    if ground_truth is not None:
        w.writerow(["gt", *map(_g17, np.asarray(ground_truth, dtype=float).ravel())])
    return buf.getvalue()


def parse_session(text: str, allow_missing_p: bool = False) -> tuple[list[PointCorrespondence], np.ndarray | None]:
    """Parse session text into correspondences and the optional ground-truth matrix.

    With ``allow_missing_p`` rows lacking display coordinates (stream
    fragments) are returned with ``p = (0, 0, 0)``.
    """
    lines = text.splitlines()
    if not lines or lines[0].strip() != SESSION_VERSION:
        raise FormatError(f"first line must be {SESSION_VERSION!r}")
    rows = list(csv.reader(lines[1:]))
    if not rows or rows[0] != SESSION_HEADER:
        raise FormatError("missing or malformed session header")
    cs: list[PointCorrespondence] = []
    gt = None
    for lineno, row in enumerate(rows[1:], start=3):
        if not row:
            continue
        if row[0] == "gt":
            if len(row) != 17:
                raise FormatError(f"line {lineno}: gt row needs 16 entries")
            gt = np.array([float(v) for v in row[1:]]).reshape(4, 4)
            continue
        if gt is not None:
            raise FormatError(f"line {lineno}: data after gt row")
        if len(row) != len(SESSION_HEADER):
            raise FormatError(f"line {lineno}: expected {len(SESSION_HEADER)} fields")
        try:
            q = tuple(float(v) for v in row[4:7])
            if allow_missing_p and all(v == "" for v in row[7:10]):
                p = (0.0, 0.0, 0.0)
            else:
                p = tuple(float(v) for v in row[7:10])
            cs.append(PointCorrespondence(q, p, row[1], int(row[2]), int(row[3])))
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
    return cs, gt


def infer_model(m: np.ndarray) -> ModelClass:
    if not np.allclose(m[3], [0, 0, 0, 1], rtol=0, atol=1e-12):
        return ModelClass.PERSPECTIVE
    return ModelClass.ISOMETRIC if is_rotation(m[:3, :3]) else ModelClass.AFFINE


def read_session(path: str | Path) -> CalibrationSession:
    cs, gt = parse_session(Path(path).read_text(encoding="utf-8"))
    truth = GroundTruth(Transform(gt, infer_model(gt))) if gt is not None else None
    return CalibrationSession(tuple(cs), ground_truth=truth)


def write_session(path: str | Path, session: CalibrationSession) -> None:
    atomic_write(path, format_session(session))


# -- transforms --------------------------------------------------------------

def format_transform(t: Transform) -> str:
    rows = "\n".join(" ".join(_g17(v) for v in row) for row in t.matrix)
    return f"# model: {t.model.value}\n{rows}\n"


def parse_transform(text: str) -> Transform:
    model = None
    vals: list[float] = []
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            if key.strip() == "model":
                model = ModelClass(val.strip())
            continue
        vals.extend(float(v) for v in line.replace(",", " ").split())
    if len(vals) != 16:
        raise FormatError(f"transform needs 16 entries, got {len(vals)}")
    m = np.array(vals).reshape(4, 4)
    return Transform(m, model or infer_model(m))


def read_transform(path: str | Path) -> Transform:
    return parse_transform(Path(path).read_text(encoding="utf-8"))


# -- reports -----------------------------------------------------------------

def _stats_row(model: str, phase: str, s: ErrorStats, inliers) -> list[str]:
    axes = [f"{v:.6f}" for pair in s.per_axis for v in pair]
    return [model, phase, str(s.n), f"{s.mean:.6f}", f"{s.std:.6f}", *axes,
            "" if inliers is None else str(inliers)]


def format_report(report: CalibrationReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for model, r in report.models.items():
        if not r.ok:
            continue
        w.writerow(_stats_row(model.value, "train", r.train, r.inliers))
        w.writerow(_stats_row(model.value, "test", r.test, r.inliers))
    return buf.getvalue()


def format_stats_rows(rows: Iterable[tuple[str, str, ErrorStats, int | None]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for model, phase, stats, inliers in rows:
        w.writerow(_stats_row(model, phase, stats, inliers))
    return buf.getvalue()


def parse_report(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and list(rows[0]) != REPORT_HEADER:
        raise FormatError("unexpected report header")
    return rows


def format_doublecube(report: DoubleCubeReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DOUBLECUBE_HEADER)
    for k, e in enumerate(report.placements):
        w.writerow([k, _f6(e.displacement), *map(_f6, e.rotation.as_array())])
    q = report.average_rotation
    w.writerow(["mean", _f6(report.mean_displacement), *map(_f6, q.as_array())])
    return buf.getvalue()


def doublecube_summary(report: DoubleCubeReport) -> str:
    return (f"{report.model.value}: E_dp = {report.mean_displacement:.3f} mm, "
            f"E_dq = {format_quaternion(report.average_rotation)}")
