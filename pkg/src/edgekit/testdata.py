"""Phantoms, noise, error metrics and file I/O (PGM images, CSV run logs)."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .linops import DimensionError, ImageGrid

PHANTOM_KINDS = ("grains", "threephases", "shepplogan", "pattern")

# Modified (Toft) Shepp-Logan: intensity, semi-axes a, b, centre x0, y0, rotation (deg).
SHEPP_LOGAN_ELLIPSES = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
)


class PhantomError(ValueError):
    pass


def _pixel_centres(n: int):
    """Coordinates in [-1, 1]^2 of pixel centres; row 0 is the top (y = +1)."""
    c = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    x = np.broadcast_to(c[None, :], (n, n))
    y = np.broadcast_to(-c[:, None], (n, n))
    return x, y


def _ellipse_mask(x, y, a, b, x0, y0, phi_deg):
    phi = np.deg2rad(phi_deg)
    xr = (x - x0) * np.cos(phi) + (y - y0) * np.sin(phi)
    yr = -(x - x0) * np.sin(phi) + (y - y0) * np.cos(phi)
    return (xr / a) ** 2 + (yr / b) ** 2 <= 1.0


def shepp_logan(n: int) -> np.ndarray:
    x, y = _pixel_centres(n)
    img = np.zeros((n, n))
    for amp, a, b, x0, y0, phi in SHEPP_LOGAN_ELLIPSES:
        img[_ellipse_mask(x, y, a, b, x0, y0, phi)] += amp
    img = np.clip(img, 0.0, None)
    return img / img.max()


def grains(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    count = max(4, int(round(3 * np.sqrt(n))))
    sites = rng.uniform(0, n, size=(count, 2))
    values = rng.uniform(0.0, 1.0, size=count)
    r, c = np.mgrid[0:n, 0:n] + 0.5
    d2 = (r[..., None] - sites[:, 0]) ** 2 + (c[..., None] - sites[:, 1]) ** 2
    return values[np.argmin(d2, axis=-1)]


def threephases(n: int, seed: int) -> np.ndarray:
    """Smoothed random field cut at its terciles into the levels 0, 0.5 and 1."""
    rng = np.random.default_rng(seed)
    field_ = ndimage.gaussian_filter(rng.standard_normal((n, n)), sigma=n / 12.0, mode="wrap")
    lo, hi = np.quantile(field_, [1 / 3, 2 / 3])
    img = np.full((n, n), 0.5)
    img[field_ < lo] = 0.0
    img[field_ >= hi] = 1.0
    return img


def pattern(n: int) -> np.ndarray:
    x, y = _pixel_centres(n)
    img = np.zeros((n, n))
    img[(np.abs(x) < 0.8) & (np.abs(y) < 0.8)] = 0.25
    img[(x > -0.65) & (x < -0.05) & (y > 0.05) & (y < 0.65)] = 0.5
    img[(x - 0.35) ** 2 + (y - 0.35) ** 2 < 0.25 ** 2] = 1.0
    img[(x - 0.35) ** 2 + (y + 0.35) ** 2 < 0.3 ** 2] = 0.75
    img[(x - 0.35) ** 2 + (y + 0.35) ** 2 < 0.12 ** 2] = 0.0
    img[(np.abs(x + 0.35) + np.abs(y + 0.35)) < 0.3] = 1.0
    return img


def phantom(kind: str, n: int, seed: int = 0) -> ImageGrid:
    """Piecewise-constant test images with values in [0, 1]; deterministic in (kind, n, seed)."""
    if kind not in PHANTOM_KINDS:
        raise PhantomError(f"unknown phantom kind {kind!r}; choose from {', '.join(PHANTOM_KINDS)}")
    if n < 16:
        raise PhantomError(f"phantom size must be >= 16, got {n}")
    if kind == "grains":
        data = grains(n, seed)
    elif kind == "threephases":
        data = threephases(n, seed)
    elif kind == "shepplogan":
        data = shepp_logan(n)
    else:
        data = pattern(n)
    return ImageGrid.from_array(data)


@dataclass(frozen=True)
class NoisyData:
    b: np.ndarray
    eta: np.ndarray
    b_true: np.ndarray
    noise_level: float
    seed: int | None

    @property
    def eta_norm(self) -> float:
        return float(np.linalg.norm(self.eta))


def add_noise(b_true, level: float, seed=None) -> NoisyData:
    """White Gaussian noise scaled so that ``||eta|| / ||b_true|| == level`` exactly."""
    b_true = np.asarray(b_true, dtype=float)
    if level < 0:
        raise ValueError(f"noise level must be >= 0, got {level}")
    bnorm = np.linalg.norm(b_true)
    if level == 0:
        eta = np.zeros_like(b_true)
    else:
        if bnorm == 0:
            raise ValueError("cannot scale noise relative to a zero b_true")
        g = np.random.default_rng(seed).standard_normal(b_true.shape)
        eta = (level * bnorm / np.linalg.norm(g)) * g
    return NoisyData(b=b_true + eta, eta=eta, b_true=b_true, noise_level=float(level), seed=seed)


def relative_error(x, x_true) -> float:
    x = np.asarray(x, dtype=float)
    x_true = np.asarray(x_true, dtype=float)
    if x.shape != x_true.shape:
        raise DimensionError(f"shapes differ: {x.shape} vs {x_true.shape}")
    denom = np.linalg.norm(x_true)
    if denom == 0:
        raise ValueError("x_true is zero")
    return float(np.linalg.norm(x - x_true) / denom)


# ---------------------------------------------------------------- run logs

CSV_COLUMNS = ("outer_iter", "inner_iter_count", "lambda", "residual_norm", "seminorm", "relative_error")


@dataclass
class OuterRecord:
    outer_iter: int
    inner_iter_count: int
    lam: float
    residual_norm: float
    seminorm: float
    relative_error: float | None = None
    lambda_flag: str = "root"


@dataclass
class InnerRecord:
    outer_iter: int
    inner_iter: int
    lam: float | None
    residual_norm: float
    seminorm: float
    lsqr_iters: int
    relative_error: float | None = None


@dataclass
class RunLog:
    outer: list[OuterRecord] = field(default_factory=list)
    inner: list[InnerRecord] = field(default_factory=list)

    def lambdas(self) -> list[float]:
        return [r.lam for r in self.outer]

    def relative_errors(self) -> list[float | None]:
        return [r.relative_error for r in self.outer]


def csv_value(value) -> str:
    """CSV cell text: empty for None, exact repr for floats."""
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def runlog_csv_text(log: RunLog) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in log.outer:
        writer.writerow([
            csv_value(r.outer_iter), csv_value(r.inner_iter_count), csv_value(r.lam),
            csv_value(r.residual_norm), csv_value(r.seminorm), csv_value(r.relative_error),
        ])
    return buf.getvalue()


def write_csv(log: RunLog, path) -> None:
    path = Path(path)
    try:
        path.write_text(runlog_csv_text(log))
    except OSError as exc:
        raise OSError(f"cannot write CSV log {path}: {exc}") from exc


def write_inner_csv(log: RunLog, path) -> None:
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("outer_iter", "inner_iter", "lambda", "residual_norm", "seminorm",
                     "lsqr_iters", "relative_error"))
    for r in log.inner:
        writer.writerow([csv_value(v) for v in (r.outer_iter, r.inner_iter, r.lam, r.residual_norm,
                                                 r.seminorm, r.lsqr_iters, r.relative_error)])
    try:
        path.write_text(buf.getvalue())
    except OSError as exc:
        raise OSError(f"cannot write CSV log {path}: {exc}") from exc


# ---------------------------------------------------------------- PGM

def to_bytes(data) -> np.ndarray:
    """Min-max rescale to 0..255; a constant image maps to 128."""
    data = np.asarray(data, dtype=float)
    lo, hi = float(np.min(data)), float(np.max(data))
    if not hi > lo:
        return np.full(data.shape, 128, dtype=np.uint8)
    return np.rint((data - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(image, path) -> None:
    """Binary (P5) 8-bit PGM."""
    data = image.data if isinstance(image, ImageGrid) else np.asarray(image, dtype=float)
    if data.ndim != 2:
        raise DimensionError(f"PGM needs a 2-D image, got ndim={data.ndim}")
    pixels = to_bytes(data)
    header = f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii")
    path = Path(path)
    try:
        path.write_bytes(header + pixels.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write PGM {path}: {exc}") from exc


def _pgm_tokens(raw: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    return tokens, pos + 1


def read_pgm(path) -> ImageGrid:
    """Read a binary PGM; intensities are returned scaled to [0, 1]."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read PGM {path}: {exc}") from exc
    try:
        (magic, w, h, maxval), offset = _pgm_tokens(raw, 4)
        if magic != b"P5":
            raise ValueError(f"unsupported magic {magic!r}")
        w, h, maxval = int(w), int(h), int(maxval)
        dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
        pixels = np.frombuffer(raw, dtype=dtype, count=w * h, offset=offset)
    except (ValueError, IndexError) as exc:
        raise ValueError(f"malformed PGM {path}: {exc}") from exc
    return ImageGrid.from_array(pixels.reshape(h, w).astype(float) / maxval)
