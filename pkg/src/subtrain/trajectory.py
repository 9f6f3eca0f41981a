"""Append-only on-disk store of flat parameter snapshots.

File layout (little-endian): magic "DLTR", version u32, n u64, t u64,
then t records of (epoch u32, global_step u64, n float64 values). The
header's t field is kept current after every append, so a crashed run
leaves a readable prefix.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, IoError, ShapeError

MAGIC = b"DLTR"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")
_RECORD_META = struct.Struct("<IQ")


@dataclass(frozen=True)
class SamplingSchedule:
    """How many snapshots to take per epoch, and over which epoch window."""

    samples_per_epoch: int = 1
    start_epoch: int = 0
    end_epoch: int = 1

    def __post_init__(self):
        if self.samples_per_epoch < 1:
            raise ValueError("samples_per_epoch must be >= 1")
        if self.start_epoch < 0:
            raise ValueError("start_epoch must be >= 0")
        if self.start_epoch >= self.end_epoch:
            raise ValueError("start_epoch must be < end_epoch")


def due(schedule: SamplingSchedule, epoch: int, step_in_epoch: int, steps_per_epoch: int) -> bool:
    """True at the evenly spaced sampling offsets of an in-window epoch.

    Offsets are floor((i+1) * steps_per_epoch / samples_per_epoch) - 1 for
    i = 0..samples_per_epoch-1; one sample per epoch lands on the last step.
    """
    if not schedule.start_epoch <= epoch < schedule.end_epoch:
        return False
    k = schedule.samples_per_epoch
    return any(step_in_epoch == (i + 1) * steps_per_epoch // k - 1 for i in range(k))


class TrajectoryStore:
    """Single-writer snapshot log; read back only after the writer closes."""

    def __init__(self, path, mode: str):
        self.path = path
        self._mode = mode
        self.n = 0
        self.t = 0
        self.meta: list[tuple[int, int]] = []  # (epoch, global_step) per record
        if mode == "w":
            try:
                self._f = open(path, "w+b")
            except OSError as e:
                raise IoError(f"cannot create trajectory file {path}: {e}") from e
            self._f.write(_HEADER.pack(MAGIC, VERSION, 0, 0))
        elif mode == "r":
            try:
                self._f = open(path, "rb")
            except OSError as e:
                raise IoError(f"cannot open trajectory file {path}: {e}") from e
            self._read_header()
        else:
            raise ValueError(f"bad mode {mode!r}")

    @classmethod
    def create(cls, path) -> "TrajectoryStore":
        return cls(path, "w")

    @classmethod
    def open(cls, path) -> "TrajectoryStore":
        return cls(path, "r")

    def _read_header(self):
        raw = self._f.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise FormatError(f"{self.path}: truncated trajectory header")
        magic, version, n, t = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise FormatError(f"{self.path}: bad trajectory magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"{self.path}: unsupported trajectory version {version}")
        self.n, self.t = int(n), int(t)
        record = _RECORD_META.size + 8 * self.n
        self._f.seek(0, 2)
        body = self._f.tell() - _HEADER.size
        if body < record * self.t:
            raise FormatError(f"{self.path}: file shorter than header claims (t={self.t})")
        self._f.seek(_HEADER.size)
        for _ in range(self.t):
            epoch, gstep = _RECORD_META.unpack(self._f.read(_RECORD_META.size))
            self.meta.append((int(epoch), int(gstep)))
            self._f.seek(8 * self.n, 1)

    def record(self, epoch: int, global_step: int, w: np.ndarray) -> None:
        """Append a verbatim copy of w; the first call fixes n."""
        if self._mode != "w":
            raise IoError("store opened read-only")
        w = np.asarray(w, dtype=np.float64)
        if w.ndim != 1:
            raise ShapeError(f"snapshot must be 1-D, got shape {w.shape}")
        if self.t == 0 and self.n == 0:
            self.n = w.shape[0]
            self._f.seek(0)
            self._f.write(_HEADER.pack(MAGIC, VERSION, self.n, 0))
            self._f.seek(0, 2)
        if w.shape[0] != self.n:
            raise ShapeError(f"snapshot length {w.shape[0]} != store n {self.n}")
        try:
            self._f.seek(0, 2)
            self._f.write(_RECORD_META.pack(epoch, global_step))
            self._f.write(w.astype("<f8").tobytes())
            self.t += 1
            self._f.seek(len(MAGIC) + 4 + 8)
            self._f.write(struct.pack("<Q", self.t))
            self._f.flush()
        except OSError as e:
            raise IoError(f"write to {self.path} failed: {e}") from e
        self.meta.append((epoch, global_step))

    def load_all(self) -> np.ndarray:
        """All snapshots as an n x t matrix, columns in record order."""
        if self._mode != "r":
            raise IoError("load_all requires a store opened for reading")
        out = np.empty((self.n, self.t), order="F")
        self._f.seek(_HEADER.size)
        for j in range(self.t):
            self._f.seek(_RECORD_META.size, 1)
            buf = self._f.read(8 * self.n)
            if len(buf) != 8 * self.n:
                raise FormatError(f"{self.path}: truncated record {j}")
            out[:, j] = np.frombuffer(buf, dtype="<f8")
        return out

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def load_all(path) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Convenience reader: (n x t snapshot matrix, per-record metadata)."""
    with TrajectoryStore.open(path) as store:
        return store.load_all(), list(store.meta)
