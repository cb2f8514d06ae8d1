"""sRGB -> CIELAB conversion, Individual Typology Angle, and skin-scale lookups."""

from __future__ import annotations

import math

import numpy as np

# IEC 61966-2-1 linear sRGB -> XYZ, D65, 2 degree observer
SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
# reference white is the image of sRGB white, so (255, 255, 255) lands on a = b = 0 exactly
D65_WHITE = SRGB_TO_XYZ.sum(axis=1)

_EPSILON = 216.0 / 24389.0
_KAPPA = 24389.0 / 27.0

MIN_ITA_PIXELS = 64

# lower ITA bound (exclusive) for each Fitzpatrick type; anything at or below -30 is VI
ITA_BANDS = (
    (55.0, "I"),
    (41.0, "II"),
    (28.0, "III"),
    (10.0, "IV"),
    (-30.0, "V"),
)

# published Monk Skin Tone swatches, lightest to darkest
MONK_HEX = (
    "#f6ede4",
    "#f3e7db",
    "#f7ead0",
    "#eadaba",
    "#d7bd96",
    "#a07e56",
    "#825c43",
    "#604134",
    "#3a312a",
    "#292420",
)


class DegenerateRegionError(ValueError):
    """ITA is undefined for the region (too few pixels or L = 50 with b = 0)."""


def hex_to_rgb(value: str) -> tuple[int, int, int]:
    v = value.lstrip("#")
    return int(v[0:2], 16), int(v[2:4], 16), int(v[4:6], 16)


def srgb_to_linear(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def srgb_to_lab(rgb) -> np.ndarray:
    """Convert 8-bit sRGB (shape ``(..., 3)``) to CIELAB under D65.

    A single triple returns a length-3 array ``(L, a, b)``.
    """
    rgb = np.asarray(rgb, dtype=float) / 255.0
    lin = srgb_to_linear(rgb)
    xyz = lin @ SRGB_TO_XYZ.T
    t = xyz / D65_WHITE
    f = np.where(t > _EPSILON, np.cbrt(t), (_KAPPA * t + 16.0) / 116.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def ita_angle(L: float, b: float) -> float:
    """ITA in degrees: arctan((L - 50) / b) * 180 / pi."""
    if b == 0.0:
        if L > 50.0:
            return 90.0
        if L < 50.0:
            return -90.0
        raise DegenerateRegionError("ITA undefined at L = 50, b = 0")
    return math.degrees(math.atan((L - 50.0) / b))


def region_ita(lab_pixels: np.ndarray) -> tuple[np.ndarray, float]:
    """Mean Lab of ``(n, 3)`` masked pixels and its ITA."""
    lab_pixels = np.asarray(lab_pixels, dtype=float).reshape(-1, 3)
    if len(lab_pixels) < MIN_ITA_PIXELS:
        raise DegenerateRegionError(f"{len(lab_pixels)} skin pixels, need at least {MIN_ITA_PIXELS}")
    mean = lab_pixels.mean(axis=0)
    return mean, ita_angle(float(mean[0]), float(mean[2]))


def ita_to_fitzpatrick(angle: float) -> str:
    if not math.isfinite(angle):
        raise ValueError(f"ITA must be finite, got {angle}")
    for lower, label in ITA_BANDS:
        if angle > lower:
            return label
    return "VI"


MONK_LAB = srgb_to_lab(np.array([hex_to_rgb(h) for h in MONK_HEX]))


def lab_to_monk(lab, tie_tol: float = 1e-9) -> int:
    """Nearest Monk swatch (1-10) by Euclidean Lab distance; ties go to the lighter tone."""
    d = np.linalg.norm(MONK_LAB - np.asarray(lab, dtype=float), axis=1)
    return int(np.flatnonzero(d <= d.min() + tie_tol)[0]) + 1
