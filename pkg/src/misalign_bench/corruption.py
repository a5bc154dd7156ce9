"""Image degradation operators: motion blur, low light, occlusion.

Three kinds at three severities give nine conditions, named ``ll1..ll3``,
``mb1..mb3`` and ``occ1..occ3``; the untouched input is condition ``clean``.
All operators preserve shape and dtype (uint8 RGB) and are bit-reproducible
for a fixed seed. Blur consumes no randomness at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .rng import MASK64, SplitMix64, gaussian_field, mix64


class CorruptionKind(str, Enum):
    MOTION_BLUR = "mb"
    LOW_LIGHT = "ll"
    OCCLUSION = "occ"


SEVERITIES = (1, 2, 3)
CLEAN = "clean"

#: Canonical report row order: clean, then low light, motion blur, occlusion.
ALL_CONDITIONS = (
    CLEAN,
    "ll1", "ll2", "ll3",
    "mb1", "mb2", "mb3",
    "occ1", "occ2", "occ3",
)

DEGRADED_CONDITIONS = ALL_CONDITIONS[1:]


def _check_severity(severity: int) -> int:
    if severity not in SEVERITIES:
        raise ValueError(f"severity must be one of {SEVERITIES}, got {severity!r}")
    return severity


@dataclass(frozen=True)
class CorruptionSpec:
    """One degradation condition: kind, severity and the seed driving it."""

    kind: CorruptionKind
    severity: int
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.kind, CorruptionKind):
            raise ValueError(f"unknown corruption kind: {self.kind!r}")
        _check_severity(self.severity)

    @property
    def condition(self) -> str:
        return f"{self.kind.value}{self.severity}"


@dataclass(frozen=True)
class OcclusionRect:
    """Axis-aligned masked rectangle, returned for auditability."""

    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"degenerate rectangle: {self}")
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"rectangle outside image: {self}")

    @property
    def area(self) -> int:
        return self.w * self.h


@dataclass(frozen=True)
class CorruptionParams:
    """Tunable operator parameters, indexed by severity 1..3.

    The noise magnitudes behind "mild/moderate/stronger" are not pinned by
    any external source, so they are configurable; everything else defaults
    to the published protocol values.
    """

    blur_lengths: tuple[int, int, int] = (7, 15, 25)
    gammas: tuple[float, float, float] = (1.6, 2.2, 3.0)
    noise_sigmas: tuple[float, float, float] = (5.0, 13.0, 20.0)
    area_fractions: tuple[float, float, float] = (0.08, 0.15, 0.25)
    # noise is drawn per pixel-channel by default; True shares one draw
    # across the three channels of a pixel
    noise_shared_across_channels: bool = False

    def blur_length(self, severity: int) -> int:
        return self.blur_lengths[_check_severity(severity) - 1]

    def gamma(self, severity: int) -> float:
        return self.gammas[_check_severity(severity) - 1]

    def noise_sigma(self, severity: int) -> float:
        return self.noise_sigmas[_check_severity(severity) - 1]

    def area_fraction(self, severity: int) -> float:
        return self.area_fractions[_check_severity(severity) - 1]


DEFAULT_PARAMS = CorruptionParams()


def parse_condition(name: str) -> tuple[CorruptionKind, int] | None:
    """Map a condition name to (kind, severity); None for ``clean``."""
    if name == CLEAN:
        return None
    for kind in CorruptionKind:
        if name.startswith(kind.value) and name[len(kind.value):].isdigit():
            return kind, _check_severity(int(name[len(kind.value):]))
    raise ValueError(f"unknown condition name: {name!r}")


def require_rgb8(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.dtype != np.uint8 or arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(
            f"expected HxWx3 uint8 image, got dtype={arr.dtype} shape={arr.shape}"
        )
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"empty image: shape={arr.shape}")
    return arr


def motion_blur(img, severity: int, params: CorruptionParams = DEFAULT_PARAMS) -> np.ndarray:
    """Horizontal uniform blur of kernel length 7/15/25 for severity 1/2/3.

    The kernel support is k x k but only the middle row is nonzero (uniform
    weights 1/k), i.e. a pure horizontal drag. Borders replicate the edge
    pixel so constant images stay constant. Integer arithmetic throughout;
    the division rounds half-up (k is odd, so exact halves cannot occur).
    """
    arr = require_rgb8(img)
    k = params.blur_length(severity)
    r = k // 2
    padded = np.pad(arr, ((0, 0), (r, r), (0, 0)), mode="edge").astype(np.int64)
    windows = np.lib.stride_tricks.sliding_window_view(padded, k, axis=1)
    sums = windows.sum(axis=-1)
    return ((2 * sums + k) // (2 * k)).astype(np.uint8)


def gamma_curve(gamma: float) -> np.ndarray:
    """Exact float map v -> 255*(v/255)**gamma for v in 0..255."""
    v = np.arange(256, dtype=np.float64)
    return 255.0 * (v / 255.0) ** gamma


def gamma_lut(gamma: float) -> np.ndarray:
    """8-bit gamma table: round-half-up of the exact curve."""
    return np.floor(gamma_curve(gamma) + 0.5).astype(np.uint8)


def low_light(
    img,
    severity: int,
    seed: int,
    params: CorruptionParams = DEFAULT_PARAMS,
) -> np.ndarray:
    """Gamma darkening (1.6/2.2/3.0) plus additive Gaussian sensor noise.

    Order of operations: exact gamma curve, then noise, then one final
    round-half-up and clamp to [0, 255]. With sigma = 0 the result equals
    ``gamma_lut(gamma)[img]`` exactly.
    """
    arr = require_rgb8(img)
    gamma = params.gamma(severity)
    sigma = params.noise_sigma(severity)
    darkened = gamma_curve(gamma)[arr]
    if sigma > 0:
        if params.noise_shared_across_channels:
            noise = gaussian_field(seed, arr.shape[:2], sigma)[..., None]
        else:
            noise = gaussian_field(seed, arr.shape, sigma)
        darkened = darkened + noise
    return np.clip(np.floor(darkened + 0.5), 0, 255).astype(np.uint8)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def occlude(
    img,
    severity: int,
    seed: int,
    params: CorruptionParams = DEFAULT_PARAMS,
) -> tuple[np.ndarray, OcclusionRect]:
    """Mask one black rectangle covering ~8%/15%/25% of the image area.

    Geometry from the seed, in fixed draw order: aspect ratio w/h uniform
    in [0.5, 2.0], then x0, then y0, position uniform over fully-inside
    placements. Width solves the target area for the drawn aspect; height
    then re-solves the area so integer rounding stays within a fraction of
    a row of the target.
    """
    arr = require_rgb8(img)
    h_img, w_img = arr.shape[:2]
    target = params.area_fraction(severity) * w_img * h_img
    rng = SplitMix64(seed)
    aspect = 0.5 + 1.5 * rng.uniform()
    w = max(1, min(w_img, _round_half_up(math.sqrt(target * aspect))))
    h = max(1, min(h_img, _round_half_up(target / w)))
    if h == h_img:  # aspect pushed past the image edge; re-solve the width
        w = max(1, min(w_img, _round_half_up(target / h)))
    x0 = rng.randbelow(w_img - w + 1)
    y0 = rng.randbelow(h_img - h + 1)
    out = arr.copy()
    out[y0:y0 + h, x0:x0 + w, :] = 0
    return out, OcclusionRect(x0, y0, w, h)


def corrupt(img, spec: CorruptionSpec, params: CorruptionParams = DEFAULT_PARAMS) -> np.ndarray:
    """Apply the operator selected by ``spec``; stochastic ones use spec.seed."""
    if not isinstance(spec, CorruptionSpec):
        raise ValueError(f"expected a CorruptionSpec, got {type(spec).__name__}")
    if spec.kind is CorruptionKind.MOTION_BLUR:
        return motion_blur(img, spec.severity, params)
    if spec.kind is CorruptionKind.LOW_LIGHT:
        return low_light(img, spec.severity, spec.seed, params)
    if spec.kind is CorruptionKind.OCCLUSION:
        return occlude(img, spec.severity, spec.seed, params)[0]
    raise ValueError(f"unknown corruption kind: {spec.kind!r}")


def derive_seed(global_seed: int, image_id: str, spec: CorruptionSpec) -> int:
    """Stable per-(image, condition) seed, independent of execution order.

    FNV-1a over a canonical key string, whitened with one SplitMix64
    finalization. Does not depend on spec.seed (this function produces it).
    """
    key = f"{global_seed & MASK64}|{image_id}|{spec.kind.value}|{spec.severity}"
    h = 0xCBF29CE484222325
    for byte in key.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & MASK64
    return mix64(h)
