"""Line-profile reductions: quadratic fits, double-well detection, secular
frequencies."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks

from .constants import E_CHARGE
from .errors import ConfigError, InsufficientSamplesError, NonConfiningError

# Local minima/maxima shallower than this are treated as noise when
# classifying well shapes (eV); below the smallest profile features of
# interest, above solver noise.
PROMINENCE_EV = 1e-3


@dataclass
class LineProfile:
    """Sampled potential along a line: unit axis, sorted offsets (m),
    values (eV)."""

    axis: np.ndarray
    offsets: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.axis = np.asarray(self.axis, dtype=float)
        self.offsets = np.asarray(self.offsets, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        n = np.linalg.norm(self.axis)
        if n == 0:
            raise ConfigError("profile axis must be nonzero")
        self.axis = self.axis / n
        if len(self.offsets) < 5:
            raise ConfigError("profile needs at least 5 samples")
        if not np.all(np.diff(self.offsets) > 0):
            raise ConfigError("profile offsets must be strictly increasing")
        if self.values.shape != self.offsets.shape:
            raise ConfigError("offsets/values length mismatch")

    def reversed(self) -> "LineProfile":
        return LineProfile(-self.axis, -self.offsets[::-1], self.values[::-1])


@dataclass
class QuadraticFit:
    """Least-squares parabola v = curvature (x - vertex)^2 + value."""

    curvature: float          # eV / m^2
    vertex_offset: float      # m
    vertex_value: float       # eV
    max_abs_residual: float   # eV, over the fit window
    window: float             # m (half-width)

    def __call__(self, x):
        return self.curvature * (np.asarray(x) - self.vertex_offset) ** 2 + self.vertex_value


def quadratic_fit(profile: LineProfile, window: float) -> QuadraticFit:
    """Fit a parabola over |offset| <= window and report the worst residual
    inside the window."""
    mask = np.abs(profile.offsets) <= window
    if mask.sum() < 5:
        raise InsufficientSamplesError(
            f"only {int(mask.sum())} samples inside +-{window} (need >= 5)"
        )
    x = profile.offsets[mask]
    v = profile.values[mask]
    x0 = x.mean()
    coeff = np.polyfit(x - x0, v, 2)
    a, b, c = coeff
    residual = float(np.abs(np.polyval(coeff, x - x0) - v).max())
    if a != 0.0:
        vertex = x0 - b / (2.0 * a)
        value = c - b * b / (4.0 * a)
    else:
        vertex = math.nan
        value = c
    return QuadraticFit(float(a), float(vertex), float(value), residual, window)


@dataclass
class WellShape:
    kind: str                       # "single" or "double"
    minima_offsets: tuple = ()      # m, positions of all detected minima
    barrier_ev: float | None = None
    offset: float | None = None     # |position of the deepest minimum|


def detect_double_well(profile: LineProfile, prominence: float = PROMINENCE_EV) -> WellShape:
    """Classify a profile as single- or double-welled.

    Double means at least two strict local minima separated by an interior
    local maximum; extrema shallower than `prominence` count as noise.
    The barrier spans from the deeper minimum to the central maximum.
    """
    v = profile.values
    minima, _ = find_peaks(-v, prominence=prominence)
    maxima, _ = find_peaks(v, prominence=prominence)
    if len(minima) < 2 or len(maxima) == 0:
        return WellShape("single")
    order = np.argsort(v[minima])
    deepest = minima[order[0]]
    partner = None
    central = None
    for m in minima[order[1:]]:
        lo, hi = min(deepest, m), max(deepest, m)
        between = maxima[(maxima > lo) & (maxima < hi)]
        if between.size:
            partner = m
            central = between[np.argmax(v[between])]
            break
    if partner is None:
        return WellShape("single")
    offsets = tuple(sorted(float(profile.offsets[i]) for i in (deepest, partner)))
    barrier = float(v[central] - v[deepest])
    return WellShape("double", offsets, barrier, abs(float(profile.offsets[deepest])))


def secular_frequency(fit: QuadraticFit, mass: float) -> float:
    """Angular secular frequency from an eV-valued quadratic curvature.

    U(x) = curvature * e * x^2 joules, so omega = sqrt(2 curvature e / m).
    """
    if not fit.curvature > 0:
        raise NonConfiningError(f"curvature {fit.curvature} is not confining")
    return math.sqrt(2.0 * fit.curvature * E_CHARGE / mass)


def curvature_for_frequency(omega: float, mass: float) -> float:
    """Inverse of secular_frequency: eV/m^2 curvature giving omega."""
    return mass * omega ** 2 / (2.0 * E_CHARGE)
