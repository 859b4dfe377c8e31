"""UDP bridge for externally tracked marker poses.

Wire format, 48 bytes little-endian::

    0   4s   magic b"TRKP"
    4   u32  marker_id
    8   u64  timestamp_us
    16  7f32 qw qx qy qz tx ty tz   (translation in mm)
    44  4x   zero padding

A replay file is the same records concatenated.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from .errors import BadLength, BadMagic, NonUnitQuaternion, PacketError
from .geometry import RigidTransform, UnitQuaternion

log = logging.getLogger(__name__)

MAGIC = b"TRKP"
PACKET = struct.Struct("<4sIQ7f4x")
PACKET_SIZE = PACKET.size
DEFAULT_PORT = 14514
QUAT_NORM_TOL = 1e-3

assert PACKET_SIZE == 48


@dataclass(frozen=True)
class TrackedPose:
    marker_id: int
    timestamp_us: int
    pose: RigidTransform

    def __post_init__(self):
        if not 0 <= self.marker_id < 2 ** 32:
            raise ValueError("marker_id must fit in u32")
        if not 0 <= self.timestamp_us < 2 ** 64:
            raise ValueError("timestamp_us must fit in u64")


def encode_packet(p: TrackedPose) -> bytes:
    q = p.pose.rotation
    t = p.pose.translation
    return PACKET.pack(MAGIC, p.marker_id, p.timestamp_us, q.w, q.x, q.y, q.z, *t)


def decode_packet(b: bytes) -> TrackedPose:
    """Inverse of :func:`encode_packet`.

    A quaternion within ``QUAT_NORM_TOL`` of unit length is renormalized.

    Raises:
        BadLength, BadMagic, NonUnitQuaternion
    """
    if len(b) != PACKET_SIZE:
        raise BadLength(f"expected {PACKET_SIZE} bytes, got {len(b)}")
    magic, marker_id, ts, w, x, y, z, tx, ty, tz = PACKET.unpack(b)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    quat = np.array([w, x, y, z], dtype=float)
    norm = float(np.linalg.norm(quat))
    if not np.isfinite(norm) or abs(norm - 1.0) > QUAT_NORM_TOL:
        raise NonUnitQuaternion(f"quaternion norm {norm:.6g}")
    trans = np.array([tx, ty, tz], dtype=float)
    if not np.all(np.isfinite(trans)):
        raise PacketError("non-finite translation")
    return TrackedPose(marker_id, ts, RigidTransform(UnitQuaternion.from_array(quat), trans))


def iter_records(data: bytes) -> Iterator[bytes]:
    if len(data) % PACKET_SIZE:
        raise BadLength(f"replay data length {len(data)} is not a multiple of {PACKET_SIZE}")
    for i in range(0, len(data), PACKET_SIZE):
        yield data[i:i + PACKET_SIZE]


def read_replay(path: str | Path) -> list[bytes]:
    return list(iter_records(Path(path).read_bytes()))


def write_replay(path: str | Path, poses: Iterable[TrackedPose]) -> None:
    Path(path).write_bytes(b"".join(encode_packet(p) for p in poses))


def _now_us() -> int:
    return time.monotonic_ns() // 1000


class PoseStore:
    """Latest accepted pose per marker.

    One writer calls :meth:`offer`; readers call :meth:`latest` from any
    thread. Published poses are immutable, so readers only hold the lock long
    enough to grab a reference.
    """

    def __init__(self, clock: Callable[[], int] = _now_us):
        self._clock = clock
        self._lock = threading.Lock()
        self._slots: dict[int, tuple[TrackedPose, int]] = {}
        self.accepted = 0
        self.stale = 0
        self.malformed = 0

    def offer(self, pose: TrackedPose) -> bool:
        """Publish ``pose`` unless it is older than the marker's current pose."""
        with self._lock:
            cur = self._slots.get(pose.marker_id)
            if cur is not None and pose.timestamp_us <= cur[0].timestamp_us:
                self.stale += 1
                return False
            self._slots[pose.marker_id] = (pose, self._clock())
            self.accepted += 1
            return True

    def offer_bytes(self, data: bytes) -> bool:
        try:
            pose = decode_packet(data)
        except PacketError as exc:
            with self._lock:
                self.malformed += 1
            log.debug("dropped packet: %s", exc)
            return False
        return self.offer(pose)

    def latest(self, marker_id: int) -> tuple[TrackedPose, int] | None:
        """``(pose, staleness_us)`` or ``None`` if the marker was never seen."""
        with self._lock:
            slot = self._slots.get(marker_id)
        if slot is None:
            return None
        pose, received = slot
        return pose, max(0, self._clock() - received)

    def markers(self) -> list[int]:
        with self._lock:
            return sorted(self._slots)

    @property
    def dropped(self) -> int:
        return self.stale + self.malformed


class PoseListener:
    """Background UDP receiver feeding a :class:`PoseStore`.

    Usable as a context manager; :meth:`start` binds immediately so a bind
    failure raises ``OSError`` in the caller.
    """

    def __init__(self, store: PoseStore | None = None, host: str = "127.0.0.1",
                 port: int = DEFAULT_PORT, rcvbuf: int = 1 << 20):
        self.store = store if store is not None else PoseStore()
        self.host = host
        self.port = port
        self.rcvbuf = rcvbuf
        self.received = 0
        self._sock: socket.socket | None = None
        self._thread: threading.Thread | None = None
        self._stop = threading.Event()

    @property
    def address(self) -> tuple[str, int]:
        if self._sock is None:
            return self.host, self.port
        return self._sock.getsockname()[:2]

    def start(self) -> PoseListener:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, self.rcvbuf)
            sock.bind((self.host, self.port))
        except OSError:
            sock.close()
            raise
        sock.settimeout(0.05)
        self._sock = sock
        self._stop.clear()
        self._thread = threading.Thread(target=self._run, name="pose-listener", daemon=True)
        self._thread.start()
        return self

    def _run(self):
        sock = self._sock
        while not self._stop.is_set():
            try:
                data, _ = sock.recvfrom(4096)
            except socket.timeout:
                continue
            except OSError:
                break
            self.received += 1
            self.store.offer_bytes(data)

    def stop(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
            self._thread = None
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def __enter__(self) -> PoseListener:
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def send_packets(packets: Iterable[bytes], address: tuple[str, int], rate_hz: float) -> int:
    """Send packets at a fixed rate on an absolute schedule (no drift accumulation)."""
    period = 1.0 / rate_hz
    n = 0
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
        t0 = time.perf_counter()
        for n, pkt in enumerate(packets, start=1):
            delay = t0 + (n - 1) * period - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
            sock.sendto(pkt, address)
    return n
