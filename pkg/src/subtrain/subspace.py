"""Orthonormal basis extraction from parameter trajectories.

The top principal directions of the centered snapshot matrix W (n x t) are
found through the t x t Gram matrix W'W, never through an n x n covariance:
eigenvectors v_i of the Gram matrix are lifted back as u_i = W v_i / s_i,
where s_i^2 is the i-th eigenvalue. Peak extra memory stays O(n*t + t*t +
n*d) and the arithmetic cost is O(t^3 + t^2 n).

Basis file layout (little-endian): magic "DLBS", version u32, n u64, d u64,
mean (n f64), sigmas (d f64), ratios (d f64), then d basis columns (n f64).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTrajectory, DimensionError, FormatError, ShapeError

MAGIC = b"DLBS"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")

# components with eigenvalue below this times the leading eigenvalue are dropped
RELATIVE_EIGVAL_FLOOR = 1e-10


@dataclass
class SubspaceBasis:
    """Orthonormal columns spanning the dominant trajectory directions."""

    P: np.ndarray                # (n, effective_d), orthonormal columns
    mean: np.ndarray             # (n,) trajectory mean
    sigmas: np.ndarray           # (effective_d,) singular values, descending
    variance_ratios: np.ndarray  # (effective_d,) share of total variance
    effective_d: int

    @property
    def n(self) -> int:
        return self.P.shape[0]

    def project(self, g: np.ndarray) -> np.ndarray:
        """Subspace coordinates P'g of a full-space vector."""
        g = np.asarray(g, dtype=np.float64)
        if g.shape != (self.n,):
            raise ShapeError(f"vector has shape {g.shape}, basis expects ({self.n},)")
        return self.P.T @ g

    def lift(self, s: np.ndarray) -> np.ndarray:
        """Full-space vector P s of subspace coordinates."""
        s = np.asarray(s, dtype=np.float64)
        if s.shape != (self.effective_d,):
            raise ShapeError(f"coords have shape {s.shape}, basis expects ({self.effective_d},)")
        return self.P @ s


def _pairwise_dot(a: np.ndarray, b: np.ndarray) -> float:
    # np.sum reduces pairwise in numpy's own loops, keeping the accumulation
    # order independent of the BLAS backend
    return float(np.sum(a * b))


def center(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Trajectory mean and the column-centered snapshot matrix (Fortran order)."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise ShapeError(f"samples must be n x t, got shape {samples.shape}")
    n, t = samples.shape
    if t < 2:
        raise DegenerateTrajectory(f"need at least 2 snapshots, got {t}")
    mean = samples.mean(axis=1)
    w = np.empty((n, t), order="F")
    np.subtract(samples, mean[:, None], out=w)
    return mean, w


def extract_basis(samples: np.ndarray, d: int) -> SubspaceBasis:
    """Top-d orthonormal directions of the centered trajectory.

    Components whose eigenvalue falls below RELATIVE_EIGVAL_FLOOR times the
    leading one are dropped, so effective_d can come out smaller than d.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise ShapeError(f"samples must be n x t, got shape {samples.shape}")
    t = samples.shape[1]
    if not 1 <= d <= t:
        raise DimensionError(f"requested d={d} outside [1, t={t}]")

    mean, w = center(samples)
    gram = np.empty((t, t))
    for i in range(t):
        for j in range(i, t):
            gram[i, j] = gram[j, i] = _pairwise_dot(w[:, i], w[:, j])

    eigvals, eigvecs = np.linalg.eigh(gram)
    order = np.argsort(eigvals, kind="stable")[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    eigvecs = eigvecs[:, order]

    # min/max reductions rather than abs(): no n x t temporary
    scale = max(1.0, float(samples.max()), float(-samples.min()))
    if np.sqrt(eigvals[0]) <= 1e-12 * scale * np.sqrt(samples.size):
        raise DegenerateTrajectory("all snapshots identical up to roundoff")

    keep = int(np.sum(eigvals[:d] >= RELATIVE_EIGVAL_FLOOR * eigvals[0]))
    sigmas = np.sqrt(eigvals[:keep])
    total = float(np.sum(eigvals))
    ratios = eigvals[:keep] / total

    # deterministic sign: flip each eigenvector so its largest entry is positive
    v = eigvecs[:, :keep].copy()
    for i in range(keep):
        peak = int(np.argmax(np.abs(v[:, i])))
        if v[peak, i] < 0:
            v[:, i] = -v[:, i]

    p = np.empty((w.shape[0], keep), order="F")
    scaled = v / sigmas
    for i in range(keep):
        np.matmul(w, scaled[:, i], out=p[:, i])

    # one modified Gram-Schmidt pass; back-lifting loses orthogonality at ~1e-12
    for i in range(keep):
        for j in range(i):
            p[:, i] -= _pairwise_dot(p[:, j], p[:, i]) * p[:, j]
        p[:, i] /= np.sqrt(_pairwise_dot(p[:, i], p[:, i]))

    return SubspaceBasis(p, mean, sigmas, ratios, keep)


def trajectory_spectrum(samples: np.ndarray) -> np.ndarray:
    """All t singular values of the centered trajectory, descending."""
    _, w = center(samples)
    t = w.shape[1]
    gram = np.empty((t, t))
    for i in range(t):
        for j in range(i, t):
            gram[i, j] = gram[j, i] = _pairwise_dot(w[:, i], w[:, j])
    eigvals = np.maximum(np.linalg.eigvalsh(gram), 0.0)
    return np.sqrt(eigvals[::-1])


def explained_variance(sigmas: np.ndarray) -> np.ndarray:
    """Share of total variance per component: sigma_i^2 / sum_j sigma_j^2."""
    sigmas = np.asarray(sigmas, dtype=np.float64)
    sq = sigmas * sigmas
    total = float(np.sum(sq))
    if total <= 0.0:
        raise DegenerateTrajectory("no positive singular value")
    return sq / total


def save_basis(path, basis: SubspaceBasis) -> None:
    n, d = basis.P.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, n, d))
        f.write(basis.mean.astype("<f8").tobytes())
        f.write(basis.sigmas.astype("<f8").tobytes())
        f.write(basis.variance_ratios.astype("<f8").tobytes())
        for i in range(d):
            f.write(basis.P[:, i].astype("<f8").tobytes())


def load_basis(path) -> SubspaceBasis:
    with open(path, "rb") as f:
        raw = f.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise FormatError(f"{path}: truncated basis header")
        magic, version, n, d = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad basis magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"{path}: unsupported basis version {version}")

        def block(count, what):
            buf = f.read(8 * count)
            if len(buf) != 8 * count:
                raise FormatError(f"{path}: truncated {what}")
            return np.frombuffer(buf, dtype="<f8")

        mean = block(n, "mean")
        sigmas = block(d, "sigmas")
        ratios = block(d, "ratios")
        p = np.empty((n, d), order="F")
        for i in range(d):
            p[:, i] = block(n, f"basis column {i}")
    return SubspaceBasis(p, mean.copy(), sigmas.copy(), ratios.copy(), int(d))
