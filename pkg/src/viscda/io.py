"""Binary snapshot and observation-stream formats, trajectories and CSV output.

Snapshot file (``.nnse``), all little-endian::

    b"NNSE1"                      magic
    uint32  n
    uint32  dealias numerator
    uint32  dealias denominator
    float64 domain_length
    float64 time
    uint8   flags                 bit 0: divergence-free, bit 1: forcing (FORC)
    [if FORC]
    uint16  length, bytes         PRNG algorithm identifier (ASCII)
    float64 k_low, float64 k_high, uint64 seed, float64 target_l2
    n*n pairs of float64 (re, im) for u1, then n*n pairs for u2

Coefficients cover the full lattice in row-major order: row ``i`` holds
``k1 = fftfreq(n)[i] * n`` and column ``j`` holds ``k2 = fftfreq(n)[j] * n``.

Observation stream (``.nnob``)::

    b"NNOB1"
    uint32  n
    float64 cutoff (= 1/h)
    float64 domain_length
    uint16  length, bytes         source run id (UTF-8)
    uint32  m                     number of stored modes
    m pairs of int32 (k1, k2)     modes with k2 >= 0 and |k| <= 1/h
    records until EOF: float64 t, then 2*m pairs of float64 (re, im)
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import math
import os
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .forcing import PRNG_ALGORITHM, ForcingSpec
from .grid import Grid2D
from .spectral import SpectralField2D, low_mode_mask

SNAPSHOT_MAGIC = b"NNSE1"
OBS_MAGIC = b"NNOB1"
FLAG_DIVFREE = 1
FLAG_FORCING = 2

_HEAD = struct.Struct("<5sIIIddB")
_FORC = struct.Struct("<ddQd")


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# snapshots


def full_lattice(grid: Grid2D, uh: np.ndarray) -> np.ndarray:
    """Expand real-FFT layout (2, n, n//2+1) to the full (2, n, n) lattice."""
    n = grid.n
    full = np.zeros((2, n, n), dtype=complex)
    half = n // 2 + 1
    full[:, :, :half] = uh
    rows = (-np.arange(n)) % n
    cols = np.arange(half, n)
    full[:, :, half:] = np.conj(uh[:, rows][:, :, (n - cols)])
    return full


def encode_snapshot(field: SpectralField2D, t: float, forcing: ForcingSpec | None = None) -> bytes:
    g = field.grid
    flags = (FLAG_DIVFREE if field.divergence_free else 0) | (FLAG_FORCING if forcing else 0)
    buf = _io.BytesIO()
    buf.write(_HEAD.pack(SNAPSHOT_MAGIC, g.n, g.dealias_factor.numerator, g.dealias_factor.denominator,
                         g.domain_length, t, flags))
    if forcing is not None:
        algo = PRNG_ALGORITHM.encode("ascii")
        buf.write(struct.pack("<H", len(algo)) + algo)
        buf.write(_FORC.pack(forcing.k_low, forcing.k_high, forcing.seed, forcing.target_l2))
    buf.write(full_lattice(g, np.asarray(field.coeffs)).astype("<c16").tobytes())
    return buf.getvalue()


@dataclass(frozen=True)
class Snapshot:
    field: SpectralField2D
    t: float
    forcing: ForcingSpec | None = None
    prng: str | None = None


def decode_snapshot(data: bytes) -> Snapshot:
    if len(data) < _HEAD.size or data[:5] != SNAPSHOT_MAGIC:
        raise FormatError("not an NNSE1 snapshot")
    magic, n, num, den, length, t, flags = _HEAD.unpack_from(data, 0)
    off = _HEAD.size
    forcing = prng = None
    if flags & FLAG_FORCING:
        (ln,) = struct.unpack_from("<H", data, off)
        prng = data[off + 2: off + 2 + ln].decode("ascii")
        off += 2 + ln
        k_low, k_high, seed, target = _FORC.unpack_from(data, off)
        off += _FORC.size
        forcing = ForcingSpec(k_low, k_high, seed, target)
    grid = Grid2D(n, Fraction(num, den), length)
    nbytes = 2 * n * n * 16
    if len(data) - off != nbytes:
        raise FormatError(f"payload is {len(data) - off} bytes, expected {nbytes}")
    full = np.frombuffer(data, dtype="<c16", count=2 * n * n, offset=off).reshape(2, n, n)
    field = SpectralField2D(grid, full[:, :, : n // 2 + 1].astype(complex), bool(flags & FLAG_DIVFREE))
    return Snapshot(field, t, forcing, prng)


def atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_snapshot(path: Path, field: SpectralField2D, t: float, forcing: ForcingSpec | None = None) -> None:
    atomic_write(path, encode_snapshot(field, t, forcing))


def read_snapshot(path: Path) -> Snapshot:
    return decode_snapshot(Path(path).read_bytes())


def write_forcing(path: Path, f: SpectralField2D, spec: ForcingSpec) -> None:
    write_snapshot(path, f, 0.0, forcing=spec)


def read_forcing(path: Path) -> SpectralField2D:
    snap = read_snapshot(path)
    if snap.forcing is None:
        raise FormatError(f"{path} lacks the FORC marker")
    return snap.field


def file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# trajectories


def snapshot_name(step: int) -> str:
    return f"snap_{step:08d}.nnse"


class SnapshotTrajectory:
    """Read-only view of a directory of snapshots written by a reference run."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        paths = sorted(self.directory.glob("snap_*.nnse"))
        if not paths:
            raise FileNotFoundError(f"no snapshots in {self.directory}")
        self.paths = paths
        self.times = np.array([read_snapshot(p).t for p in paths])

    def __len__(self) -> int:
        return len(self.paths)

    def load(self, i: int) -> SpectralField2D:
        return read_snapshot(self.paths[i]).field

    def at(self, t: float, tol: float = 1e-9) -> np.ndarray | None:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > tol:
            return None
        return np.asarray(self.load(i).coeffs)


class MemoryTrajectory:
    """Trajectory held in memory as (time, coefficient array) pairs."""

    def __init__(self, times: Sequence[float], states: Sequence[np.ndarray]):
        self.times = np.asarray(times, dtype=float)
        self.states = list(states)

    def __len__(self) -> int:
        return len(self.states)

    def at(self, t: float, tol: float = 1e-9) -> np.ndarray | None:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > tol:
            return None
        return self.states[i]


# ---------------------------------------------------------------------------
# observation streams


class ObservationStream:
    """Time-stamped low-mode coefficients I_h(u); the only data assimilation sees.

    Records live in a ``(records, 2, m)`` array over the ``m`` stored modes.
    Lookups use zero-order hold: the value at ``t`` is the latest record at
    or before ``t``.
    """

    def __init__(self, grid: Grid2D, h: float, times: np.ndarray, values: np.ndarray, run_id: str = ""):
        self.grid = grid
        self.h = h
        self.run_id = run_id
        keep = low_mode_mask(grid, h)
        self.rows, self.cols = np.nonzero(keep)
        self.times = np.asarray(times, dtype=float)
        self.values = values
        if len(self.times) and np.any(np.diff(self.times) <= 0):
            raise ValueError("observation times must be strictly increasing")
        if values.shape[1:] != (2, len(self.rows)):
            raise ValueError("observation records do not match the mode set")

    @classmethod
    def from_states(cls, grid: Grid2D, h: float, times: Sequence[float], states: Iterable[np.ndarray],
                    run_id: str = "") -> ObservationStream:
        keep = low_mode_mask(grid, h)
        vals = np.array([np.asarray(s)[:, keep] for s in states]).reshape(len(times), 2, int(keep.sum()))
        return cls(grid, h, np.asarray(times), vals, run_id)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def t_first(self) -> float:
        return float(self.times[0])

    @property
    def t_last(self) -> float:
        return float(self.times[-1])

    def index_at(self, t: float, tol: float = 1e-9) -> int:
        i = int(np.searchsorted(self.times, t + tol, side="right")) - 1
        if i < 0:
            raise KeyError(f"no observation at or before t = {t}")
        return i

    def expand(self, i: int) -> np.ndarray:
        """Record ``i`` as a full coefficient array, zero outside the low modes."""
        out = np.zeros((2,) + self.grid.shape, dtype=complex)
        out[:, self.rows, self.cols] = self.values[i]
        return out

    def field_at(self, t: float) -> np.ndarray:
        return self.expand(self.index_at(t))


def _obs_header(grid: Grid2D, h: float, run_id: str, rows: np.ndarray, cols: np.ndarray) -> bytes:
    rid = run_id.encode("utf-8")
    k1 = grid.k1_index[rows].astype("<i4")
    k2 = grid.k2_index[cols].astype("<i4")
    pairs = np.stack([k1, k2], axis=1).tobytes()
    return (OBS_MAGIC + struct.pack("<Idd", grid.n, 1.0 / h, grid.domain_length)
            + struct.pack("<H", len(rid)) + rid + struct.pack("<I", len(rows)) + pairs)


class ObservationWriter:
    """Append-only writer; each record is flushed so readers see whole records."""

    def __init__(self, path: Path, grid: Grid2D, h: float, run_id: str = ""):
        self.path = Path(path)
        self.grid = grid
        keep = low_mode_mask(grid, h)
        self.keep = keep
        rows, cols = np.nonzero(keep)
        self._fh = open(self.path, "wb")
        self._fh.write(_obs_header(grid, h, run_id, rows, cols))
        self._fh.flush()

    def append(self, t: float, uh: np.ndarray) -> None:
        vals = np.asarray(uh)[:, self.keep].astype("<c16")
        self._fh.write(struct.pack("<d", t) + vals.tobytes())
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_observations(path: Path) -> ObservationStream:
    data = Path(path).read_bytes()
    if data[:5] != OBS_MAGIC:
        raise FormatError("not an NNOB1 observation stream")
    n, cutoff, length = struct.unpack_from("<Idd", data, 5)
    off = 5 + struct.calcsize("<Idd")
    (ln,) = struct.unpack_from("<H", data, off)
    run_id = data[off + 2: off + 2 + ln].decode("utf-8")
    off += 2 + ln
    (m,) = struct.unpack_from("<I", data, off)
    off += 4
    modes = np.frombuffer(data, dtype="<i4", count=2 * m, offset=off).reshape(m, 2)
    off += 8 * m
    grid = Grid2D(n, domain_length=length)
    h = 1.0 / cutoff
    stream_keep = low_mode_mask(grid, h)
    rows, cols = np.nonzero(stream_keep)
    if len(rows) != m or np.any(grid.k1_index[rows] != modes[:, 0]) or np.any(cols != modes[:, 1]):
        raise FormatError("stored mode list does not match the cutoff")
    rec = 8 + 2 * m * 16
    nrec = (len(data) - off) // rec
    raw = np.frombuffer(data, dtype=np.uint8, count=nrec * rec, offset=off).reshape(nrec, rec)
    times = raw[:, :8].copy().view("<f8").ravel()
    values = raw[:, 8:].copy().view("<c16").reshape(nrec, 2, m).astype(complex)
    return ObservationStream(grid, h, times, values, run_id)


# ---------------------------------------------------------------------------
# CSV


def fmt(x) -> str:
    """Round-trippable text for a CSV cell; None and NaN become empty cells."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return ""
    return f"{x:.17g}"


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(x) for x in r])
    atomic_write(Path(path), buf.getvalue().encode("utf-8"))


def read_csv(path: Path) -> tuple[list[str], list[dict[str, float | None]]]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [{k: (float(v) if v != "" else None) for k, v in zip(header, line)} for line in r]
    return header, rows
