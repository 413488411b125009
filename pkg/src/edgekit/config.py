"""Experiment configuration files: flat ``key = value`` lines with ``#`` comments."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

from .forward import ConfigError, parse_angles
from .testdata import PHANTOM_KINDS

PROBLEMS = ("ct", "blur")
PSFS = ("defocus", "shake")
SCHEMES = ("new", "irn_tv")
RULES = ("dp", "lcurve", "fixed")
PROJECTORS = ("auto", "lsqr", "cholesky")


@dataclass(frozen=True)
class ExperimentConfig:
    phantom: str
    problem: str = "ct"
    n: int = 128
    angles: str = "0:2:130"
    psf: str = "defocus"
    radius: float = 3.0
    shake_seed: int = 0
    shake_steps: int = 200
    shake_extent: int = 4
    phantom_seed: int = 0
    image: str | None = None
    noise: float = 1e-3
    noise_seed: int = 0
    scheme: str = "new"
    p: float = 2.0
    q: float = 1.0
    epsilon: float | None = None
    rule: str = "dp"
    tau: float = 1.01
    lam: float | None = None
    lambda_max: float = 1e8
    lambda_min: float = 1e-10
    lcurve_min: float = 1e-6
    lcurve_max: float = 1e2
    lcurve_points: int = 25
    max_inner: int = 60
    stab_tol: float = 1e-3
    stab_window: int = 3
    lsqr_tol: float = 1e-12
    projector: str = "auto"
    max_outer: int = 20
    output_dir: str = "out"

    def __post_init__(self):
        _validate(self)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            lines.append(f"{_KEY_OF[f.name]} = {_format(value)}")
        return "\n".join(lines) + "\n"

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def problem_key(self) -> tuple:
        """Fields that define the data (used to check that two runs share a problem)."""
        names = ("problem", "n", "angles", "psf", "radius", "shake_seed", "shake_steps",
                 "shake_extent", "phantom", "phantom_seed", "image", "noise", "noise_seed")
        return tuple(getattr(self, k) for k in names)


# config-file key -> dataclass field, where they differ
_FIELD_OF = {"lambda": "lam"}
_KEY_OF = {f.name: f.name for f in dataclasses.fields(ExperimentConfig)}
_KEY_OF.update({v: k for k, v in _FIELD_OF.items()})
_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}

HELP = {
    "phantom": f"test image: {', '.join(PHANTOM_KINDS)} or 'file' (required)",
    "problem": "ct or blur",
    "n": "image side in pixels",
    "angles": "CT projection angles in degrees, start:step:end inclusive",
    "psf": "blur kernel: defocus or shake",
    "radius": "defocus disk radius in pixels",
    "shake_seed": "seed of the random-walk shake kernel",
    "shake_steps": "random-walk length of the shake kernel",
    "shake_extent": "half-width of the shake kernel window",
    "phantom_seed": "seed for random phantoms",
    "image": "PGM file used when phantom = file",
    "noise": "relative noise level ||eta||/||b_true||",
    "noise_seed": "seed of the Gaussian noise",
    "scheme": "weights: new (cumulative) or irn_tv",
    "p": "exponent of the new weights",
    "q": "IRN-TV exponent, 1 <= q < 2",
    "epsilon": "IRN-TV smoothing; default 1e-8 * max squared gradient",
    "rule": "parameter rule: dp, lcurve or fixed",
    "tau": "discrepancy safety factor (> 1)",
    "lambda": "regularization parameter for rule = fixed",
    "lambda_max": "upper end of the discrepancy search interval",
    "lambda_min": "lower end of the discrepancy search interval",
    "lcurve_min": "smallest lambda of the L-curve grid",
    "lcurve_max": "largest lambda of the L-curve grid",
    "lcurve_points": "number of log-spaced L-curve grid values",
    "max_inner": "maximum inner (hybrid) iterations per outer iteration",
    "stab_tol": "relative change of lambda regarded as stable",
    "stab_window": "consecutive stable iterations that end an inner cycle",
    "lsqr_tol": "LSQR tolerance for the projections",
    "projector": "range projection: auto, lsqr or cholesky",
    "max_outer": "maximum outer iterations",
    "output_dir": "directory receiving images and logs",
}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(name: str, raw: str):
    f = _FIELDS[name]
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if raw.lower() in ("none", "auto", "") and "None" in kind and name != "image":
        return None
    if kind.startswith("int"):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"expected an integer, got {raw!r}") from None
    if kind.startswith("float"):
        try:
            value = float(raw)
        except ValueError:
            raise ConfigError(f"expected a number, got {raw!r}") from None
        if not math.isfinite(value):
            raise ConfigError(f"expected a finite number, got {raw!r}")
        return value
    return raw


def _choice(value, options, key):
    if value not in options:
        raise ConfigError(f"{key} must be one of {', '.join(options)}, got {value!r}")


def _validate(c: ExperimentConfig) -> None:
    _choice(c.problem, PROBLEMS, "problem")
    _choice(c.phantom, PHANTOM_KINDS + ("file",), "phantom")
    _choice(c.psf, PSFS, "psf")
    _choice(c.scheme, SCHEMES, "scheme")
    _choice(c.rule, RULES, "rule")
    _choice(c.projector, PROJECTORS, "projector")
    if c.phantom == "file":
        if not c.image:
            raise ConfigError("phantom = file needs an image path")
    elif c.n < 16:
        raise ConfigError(f"n must be >= 16, got {c.n}")
    if c.problem == "ct":
        parse_angles(c.angles)
    if c.radius < 0.5:
        raise ConfigError(f"radius must be >= 0.5, got {c.radius}")
    if c.shake_steps < 1 or c.shake_extent < 0:
        raise ConfigError("shake_steps must be >= 1 and shake_extent >= 0")
    if c.noise < 0:
        raise ConfigError(f"noise must be >= 0, got {c.noise}")
    if not c.p > 0:
        raise ConfigError(f"p must be positive, got {c.p}")
    if not 1.0 <= c.q < 2.0:
        raise ConfigError(f"q must satisfy 1 <= q < 2, got {c.q}")
    if c.epsilon is not None and not c.epsilon > 0:
        raise ConfigError(f"epsilon must be positive, got {c.epsilon}")
    if not c.tau > 1.0:
        raise ConfigError(f"tau must exceed 1, got {c.tau}")
    if c.rule == "fixed" and c.lam is None:
        raise ConfigError("rule = fixed needs a lambda value")
    if c.lam is not None and c.lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {c.lam}")
    if not 0 < c.lcurve_min < c.lcurve_max or c.lcurve_points < 3:
        raise ConfigError("need 0 < lcurve_min < lcurve_max and lcurve_points >= 3")
    if not 0 < c.lambda_min < c.lambda_max:
        raise ConfigError("need 0 < lambda_min < lambda_max")
    if c.max_inner < 1 or c.max_outer < 1 or c.stab_window < 1:
        raise ConfigError("max_inner, max_outer and stab_window must be >= 1")
    if not c.stab_tol > 0 or not 0 < c.lsqr_tol < 1:
        raise ConfigError("stab_tol must be positive and lsqr_tol in (0, 1)")


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    values: dict[str, object] = {}
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        name = _FIELD_OF.get(key, key)
        if name not in _FIELDS or key in _FIELD_OF.values():
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first set on line {seen[key]})")
        seen[key] = lineno
        try:
            values[name] = _convert(name, raw)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {key}: {exc}") from None
    if "phantom" not in values:
        raise ConfigError(f"{source}: missing required key 'phantom' (required keys: phantom)")
    try:
        return ExperimentConfig(**values)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    return parse_config_text(text, str(path))


def help_text() -> str:
    lines = []
    for f in dataclasses.fields(ExperimentConfig):
        key = _KEY_OF[f.name]
        default = "(required)" if f.default is dataclasses.MISSING else _format(f.default)
        lines.append(f"  {key:<14} {HELP[key]} [default: {default}]")
    return "\n".join(lines)
