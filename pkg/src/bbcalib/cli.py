"""Command-line interface.

Exit codes:
    0  success
    1  I/O failure (missing/unreadable input, unwritable output)
    2  bad flags
    3  degenerate calibration data
    4  double-cube evaluation requested without ground truth
    5  could not bind the stream socket
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path


from . import io as bio
from .errors import DegenerateConfiguration, TooFewPoints
from .estimators import ModelClass, RansacConfig
from .metrics import reprojection_error
from .pipeline import _test_noise, run_calibrate_and_test, run_double_cube_match
from .simulator import (
    DEFAULT_RIG,
    PRESETS,
    WORKSPACES,
    NoiseModel,
    Phase,
    PointCorrespondence,
    Scenario,
    generate_multipoint_session,
    generate_single_point_session,
    generate_world_anchored_session,
    make_ground_truth,
    with_test_points,
)
from .stream import DEFAULT_PORT, PoseListener, PoseStore, decode_packet, read_replay

log = logging.getLogger("bbcalib")

EXIT_OK, EXIT_IO, EXIT_FLAGS, EXIT_DEGENERATE, EXIT_NO_GT, EXIT_BIND = 0, 1, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _default_seed() -> int:
    raw = os.environ.get("BBCALIB_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CliError(EXIT_FLAGS, f"BBCALIB_SEED must be an integer, got {raw!r}") from None


def _read(fn, path):
    try:
        return fn(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc.strerror or exc}") from None
    except ValueError as exc:
        raise CliError(EXIT_IO, f"cannot parse {path}: {exc}") from None


def _write(path, text):
    try:
        bio.atomic_write(path, text)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc.strerror or exc}") from None


# -- simulate ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    seed = args.seed
    nm = NoiseModel(args.noise_sigma_xy, args.noise_sigma_z, args.outlier_prob,
                    args.outlier_mag, args.pose_sigma, seed)
    if args.scenario == "world":
        gt = make_ground_truth(args.preset, seed, Scenario.WORLD_ANCHORED,
                               args.drift_mm, args.drift_mrad)
        ws = WORKSPACES[args.workspace or "world"]
        session = generate_world_anchored_session(gt, ws, nm, DEFAULT_RIG, args.n_train, args.n_test)
    else:
        gt = make_ground_truth(args.preset, seed)
        ws = WORKSPACES[args.workspace or "hololens"]
        if args.scenario == "head":
            session = generate_single_point_session(gt, ws, nm, args.n_train, args.n_test)
        else:
            session = generate_multipoint_session(gt, ws, nm, args.poses)
            probe = generate_single_point_session(gt, ws, _test_noise(nm), 5, args.n_test)
            session = with_test_points(session, probe.test)
    _write(args.out, bio.format_session(session))
    print(f"wrote {len(session.train)} train + {len(session.test)} test rows to {args.out}")
    return EXIT_OK


# -- calibrate ---------------------------------------------------------------

def _ransac_cfg(args) -> RansacConfig:
    return RansacConfig(args.threshold, args.max_iter, args.min_inlier_frac, args.seed)


def cmd_calibrate(args) -> int:
    session = _read(bio.read_session, args.session)
    models = list(ModelClass) if args.model == "all" else [ModelClass(args.model)]
    if len(session.train) < 5 or len(session.test) < 1:
        raise CliError(EXIT_DEGENERATE, "session needs >= 5 train and >= 1 test rows")
    report = run_calibrate_and_test(session, _ransac_cfg(args), models)

    degenerate = [m for m in report.failed
                  if report[m].error.split(":")[0] in (DegenerateConfiguration.__name__, TooFewPoints.__name__)]
    if degenerate:
        names = ", ".join(f"{m.value} ({report[m].error})" for m in degenerate)
        raise CliError(EXIT_DEGENERATE, f"degenerate data for model(s): {names}")
    for m in report.failed:
        print(f"warning: {m.value} skipped: {report[m].error}", file=sys.stderr)

    out_dir = Path(args.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create {out_dir}: {exc.strerror}") from None
    _write(out_dir / "report.csv", bio.format_report(report))
    for m, r in report.models.items():
        if r.ok:
            _write(out_dir / f"transform_{m.value}.txt", bio.format_transform(r.transform))

    print(f"{'model':<12} {'train mm':>16} {'test mm':>16} inliers")
    for m, r in report.models.items():
        if r.ok:
            print(f"{m.value:<12} {r.train.mean:7.3f} +- {r.train.std:5.3f} "
                  f"{r.test.mean:7.3f} +- {r.test.std:5.3f} {r.inliers:>4}/{report.n_train}")
    return EXIT_OK


# -- evaluate ----------------------------------------------------------------

def cmd_evaluate(args) -> int:
    transform = _read(bio.read_transform, args.transform)
    session = _read(bio.read_session, args.session)
    if args.mode == "test":
        q, p = session.arrays(Phase.TEST)
        if len(q) == 0:
            raise CliError(EXIT_IO, f"{args.session} has no test rows")
        stats = reprojection_error(transform, q, p)
        _write(args.out, bio.format_stats_rows([(transform.model.value, "test", stats, None)]))
        print(f"{transform.model.value}: test {stats.mean:.3f} +- {stats.std:.3f} mm (n={stats.n})")
        return EXIT_OK

    if session.ground_truth is None:
        raise CliError(EXIT_NO_GT, f"{args.session} has no ground-truth block; doublecube needs one")
    nm = NoiseModel(args.align_sigma_xy, args.align_sigma_z, seed=args.seed)
    report = run_double_cube_match(transform, session.ground_truth, offset=(args.offset, 0.0, 0.0),
                                   alignment_noise=nm)
    _write(args.out, bio.format_doublecube(report))
    print(bio.doublecube_summary(report))
    return EXIT_OK


# -- stream ------------------------------------------------------------------

def _fragment_rows(samples) -> list[PointCorrespondence]:
    return [PointCorrespondence(tuple(pose.pose.translation), (0.0, 0.0, 0.0), Phase.TRAIN, k, 0)
            for k, pose in samples]


def _replay(path, sample_hz):
    """Feed a replay file through a store; sample latest poses on the packet clock."""
    clock = [0]
    store = PoseStore(clock=lambda: clock[0])
    samples = []
    period = int(round(1e6 / sample_hz))
    next_sample = None
    k = 0
    first_ts = last_ts = None
    for rec in _read(read_replay, path):
        try:
            ts = decode_packet(rec).timestamp_us
        except ValueError:
            store.offer_bytes(rec)
            continue
        if next_sample is None:
            next_sample = ts
        while ts > next_sample:
            clock[0] = next_sample
            for mid in store.markers():
                samples.append((k, store.latest(mid)[0]))
            k += 1
            next_sample += period
        clock[0] = ts
        if store.offer_bytes(rec):
            first_ts = ts if first_ts is None else min(first_ts, ts)
            last_ts = ts if last_ts is None else max(last_ts, ts)
    for mid in store.markers():
        samples.append((k, store.latest(mid)[0]))
    span = 0.0 if first_ts is None else (last_ts - first_ts) / 1e6
    rate = store.accepted / span if span > 0 else 0.0
    return store, samples, rate, store.accepted + store.dropped


def _live(host, port, duration, sample_hz):
    listener = PoseListener(host=host, port=port)
    try:
        listener.start()
    except OSError as exc:
        raise CliError(EXIT_BIND, f"cannot bind {host}:{port}: {exc.strerror or exc}") from None
    samples = []
    t0 = time.monotonic()
    k = 0
    try:
        while (elapsed := time.monotonic() - t0) < duration:
            time.sleep(min(1.0 / sample_hz, max(0.0, duration - elapsed)))
            for mid in listener.store.markers():
                samples.append((k, listener.store.latest(mid)[0]))
            k += 1
    finally:
        listener.stop()
    wall = time.monotonic() - t0
    rate = listener.store.accepted / wall if wall > 0 else 0.0
    return listener.store, samples, rate, listener.received


def cmd_stream(args) -> int:
    if args.replay:
        store, samples, rate, packets = _replay(args.replay, args.sample_hz)
    else:
        store, samples, rate, packets = _live(args.host, args.port, args.duration, args.sample_hz)
    _write(args.out, bio.format_session(_fragment_rows(samples), q_only=True))
    print(f"packets={packets} accepted={store.accepted} drops={store.dropped} "
          f"stale={store.stale} malformed={store.malformed} rate={rate:.1f} Hz rows={len(samples)}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _positive(v: str) -> float:
    x = float(v)
    if not x > 0:
        raise argparse.ArgumentTypeError(f"{v} must be > 0")
    return x


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bbcalib", description="Blackbox 3D-3D OST-HMD display calibration")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic session file")
    s.add_argument("--scenario", choices=["head", "world", "multipoint"], default="head")
    s.add_argument("--preset", choices=PRESETS, default="rigid", help="ground-truth transform family")
    s.add_argument("--workspace", choices=sorted(WORKSPACES), default=None)
    s.add_argument("--noise-sigma-xy", type=float, default=1.0)
    s.add_argument("--noise-sigma-z", type=float, default=3.0)
    s.add_argument("--outlier-prob", type=float, default=0.0)
    s.add_argument("--outlier-mag", type=float, default=50.0)
    s.add_argument("--pose-sigma", type=float, default=0.0, help="multipoint per-pose rigid error (mm)")
    s.add_argument("--drift-mm", type=float, default=0.0)
    s.add_argument("--drift-mrad", type=float, default=0.0)
    s.add_argument("--n-train", type=int, default=20)
    s.add_argument("--n-test", type=int, default=8)
    s.add_argument("--poses", type=int, default=4)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("calibrate", help="fit transforms and write a report")
    c.add_argument("session")
    c.add_argument("--model", choices=["all"] + [m.value for m in ModelClass], default="all")
    c.add_argument("--threshold", type=_positive, default=5.0, help="RANSAC inlier threshold (mm)")
    c.add_argument("--max-iter", type=int, default=500)
    c.add_argument("--min-inlier-frac", type=float, default=0.5)
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--out-dir", default=".")
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("evaluate", help="score a transform on a session")
    e.add_argument("--transform", required=True)
    e.add_argument("--session", required=True)
    e.add_argument("--mode", choices=["test", "doublecube"], default="test")
    e.add_argument("--offset", type=float, default=150.0, help="double-cube offset (mm)")
    e.add_argument("--align-sigma-xy", type=float, default=0.0)
    e.add_argument("--align-sigma-z", type=float, default=0.0)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    t = sub.add_parser("stream", help="record tracker poses from UDP or a replay file")
    t.add_argument("--port", type=int, default=DEFAULT_PORT)
    t.add_argument("--host", default="127.0.0.1")
    t.add_argument("--duration", type=float, default=10.0)
    t.add_argument("--sample-hz", type=_positive, default=10.0)
    t.add_argument("--replay", default=None, help="file of concatenated 48-byte packets")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_stream)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "seed", 0) is None:
            args.seed = _default_seed()
        return args.func(args)
    except CliError as exc:
        print(f"bbcalib: error: {exc}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        print(f"bbcalib: error: {exc}", file=sys.stderr)
        return EXIT_FLAGS


if __name__ == "__main__":
    sys.exit(main())
