"""Forward operators: parallel-beam CT and PSF blurring."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

from .linops import DimensionError, LinearOperator, MatrixOp, reshape


class ConfigError(ValueError):
    """Invalid geometry or model parameters."""


@dataclass(frozen=True)
class CtGeometry:
    """Parallel-beam geometry for an ``n x n`` grid of unit pixels centred at the origin.

    Detector ``i`` sits at offset ``(i - (detector_count-1)/2) * spacing`` along
    ``(cos t, sin t)``; its ray runs along ``(-sin t, cos t)``.
    """

    n: int
    angles: tuple[float, ...]
    detector_count: int | None = None
    spacing: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        if self.n < 2:
            raise ConfigError(f"image side must be >= 2, got {self.n}")
        if not self.angles:
            raise ConfigError("angle list is empty")
        if not all(math.isfinite(a) for a in self.angles):
            raise ConfigError("angles must be finite")
        if self.detector_count is None:
            object.__setattr__(self, "detector_count", math.ceil(math.sqrt(2) * self.n))
        if self.detector_count < 1 or self.spacing <= 0:
            raise ConfigError("detector_count must be >= 1 and spacing > 0")

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.angles) * self.detector_count, self.n * self.n)

    def detector_offsets(self) -> np.ndarray:
        d = self.detector_count
        return (np.arange(d) - (d - 1) / 2.0) * self.spacing


def parse_angles(text: str) -> tuple[float, ...]:
    """Parse MATLAB-style ``start:step:end`` or ``start:end`` ranges (inclusive)."""
    parts = [p.strip() for p in str(text).split(":")]
    try:
        nums = [float(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"bad angle range {text!r}") from exc
    if len(nums) == 1:
        return (nums[0],)
    if len(nums) == 2:
        start, step, stop = nums[0], 1.0, nums[1]
    elif len(nums) == 3:
        start, step, stop = nums
    else:
        raise ConfigError(f"bad angle range {text!r}")
    if step == 0 or (stop - start) / step < 0:
        raise ConfigError(f"angle range {text!r} is empty")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return tuple(start + k * step for k in range(count))


def _ray_segments(n: int, s: float, theta: float):
    """Pixel indices (column-stacked) and chord lengths for one ray."""
    half = n / 2.0
    c, si = math.cos(theta), math.sin(theta)
    if abs(c) < 1e-12:
        c = 0.0
    if abs(si) < 1e-12:
        si = 0.0
    px, py = s * c, s * si
    dx, dy = -si, c

    t_lo, t_hi = -math.inf, math.inf
    for p, d in ((px, dx), (py, dy)):
        if d == 0.0:
            if not -half <= p <= half:
                return None
        else:
            t1, t2 = (-half - p) / d, (half - p) / d
            t_lo = max(t_lo, min(t1, t2))
            t_hi = min(t_hi, max(t1, t2))
    if not t_hi > t_lo:
        return None

    edges = np.arange(n + 1) - half
    ts = [np.array([t_lo, t_hi])]
    if dx != 0.0:
        ts.append((edges - px) / dx)
    if dy != 0.0:
        ts.append((edges - py) / dy)
    t = np.concatenate(ts)
    t = np.unique(t[(t >= t_lo) & (t <= t_hi)])
    lengths = np.diff(t)
    mid = 0.5 * (t[:-1] + t[1:])
    col = np.floor(px + mid * dx + half).astype(int)
    row = np.floor(half - (py + mid * dy)).astype(int)
    keep = (lengths > 1e-12) & (col >= 0) & (col < n) & (row >= 0) & (row < n)
    return row[keep] + n * col[keep], lengths[keep]


def ct_build(geom: CtGeometry) -> MatrixOp:
    """Sparse line-length projector; row ``a*detector_count + i`` is ray ``i`` at angle ``a``."""
    rows, cols, vals = [], [], []
    offsets = geom.detector_offsets()
    for a, angle in enumerate(geom.angles):
        theta = math.radians(angle)
        for i, s in enumerate(offsets):
            seg = _ray_segments(geom.n, float(s), theta)
            if seg is None:
                continue
            idx, lengths = seg
            rows.append(np.full(idx.size, a * geom.detector_count + i))
            cols.append(idx)
            vals.append(lengths)
    if rows:
        r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    else:
        r = c = np.zeros(0, dtype=int)
        v = np.zeros(0)
    matrix = sp.coo_matrix((v, (r, c)), shape=geom.shape).tocsr()
    matrix.sum_duplicates()
    op = MatrixOp(matrix)
    op.geometry = geom
    return op


def ct_sinogram(op: LinearOperator, x) -> np.ndarray:
    """Project an image vector; returns the sinogram in row order of the operator."""
    return op.apply(x)


def sinogram_image(op: MatrixOp, sinogram) -> np.ndarray:
    """Arrange a sinogram as a ``detector_count x n_angles`` array."""
    geom = op.geometry
    return reshape(sinogram, (geom.detector_count, len(geom.angles))).data


def write_triplets(op: MatrixOp, path) -> None:
    """Dump a sparse operator as ``row col value`` lines (zero-based)."""
    coo = sp.coo_matrix(op.matrix)
    path = Path(path)
    try:
        with path.open("w") as fh:
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")
    except OSError as exc:
        raise OSError(f"cannot write triplets to {path}: {exc}") from exc


@dataclass(frozen=True)
class Psf:
    kernel: np.ndarray
    center: tuple[int, int] = field(default=None)

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=float)
        if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
            raise ConfigError(f"PSF kernel must be 2-D with odd sides, got shape {k.shape}")
        if np.any(k < 0):
            raise ConfigError("PSF entries must be non-negative")
        total = k.sum()
        if total <= 0:
            raise ConfigError("PSF kernel is all zero")
        object.__setattr__(self, "kernel", k / total)
        object.__setattr__(self, "center", (k.shape[0] // 2, k.shape[1] // 2))


def psf_defocus(radius: float) -> Psf:
    """Normalized indicator of a disk sampled at integer offsets."""
    if not radius >= 0.5:
        raise ConfigError(f"defocus radius must be >= 0.5, got {radius}")
    half = int(math.floor(radius))
    i, j = np.mgrid[-half:half + 1, -half:half + 1]
    return Psf((i * i + j * j <= radius * radius).astype(float))


_SHAKE_MOVES = np.array([(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)])


def psf_shake(seed: int, steps: int, extent: int) -> Psf:
    """Histogram of a seeded 8-neighbour random walk confined to a ``(2*extent+1)^2`` window."""
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    if extent < 0:
        raise ConfigError(f"extent must be >= 0, got {extent}")
    rng = np.random.default_rng(seed)
    size = 2 * extent + 1
    hist = np.zeros((size, size))
    pos = np.array([extent, extent])
    hist[tuple(pos)] += 1
    moves = rng.integers(0, len(_SHAKE_MOVES), size=steps - 1)
    for m in moves:
        pos = np.clip(pos + _SHAKE_MOVES[m], 0, size - 1)
        hist[tuple(pos)] += 1
    return Psf(hist)


class BlurOp(LinearOperator):
    """2-D convolution with zero boundary; the adjoint is correlation with the same kernel."""

    def __init__(self, psf: Psf, shape: tuple[int, int]):
        rows, cols = shape
        if psf.kernel.shape[0] > rows or psf.kernel.shape[1] > cols:
            raise DimensionError(f"kernel {psf.kernel.shape} larger than image {shape}")
        super().__init__(rows * cols, rows * cols)
        self.psf = psf
        self.grid = (rows, cols)

    def _apply(self, v):
        X = v.reshape(self.grid, order="F")
        return ndimage.convolve(X, self.psf.kernel, mode="constant", cval=0.0).ravel(order="F")

    def _apply_adjoint(self, u):
        Y = u.reshape(self.grid, order="F")
        return ndimage.correlate(Y, self.psf.kernel, mode="constant", cval=0.0).ravel(order="F")


def blur_op(psf: Psf, shape: tuple[int, int]) -> BlurOp:
    return BlurOp(psf, shape)


def blurred_image(op: BlurOp, x) -> np.ndarray:
    return reshape(op.apply(x), op.grid).data


__all__ = [
    "BlurOp",
    "ConfigError",
    "CtGeometry",
    "Psf",
    "blur_op",
    "ct_build",
    "ct_sinogram",
    "parse_angles",
    "psf_defocus",
    "psf_shake",
    "sinogram_image",
    "write_triplets",
]
