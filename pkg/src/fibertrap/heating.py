"""Dielectric-loss heating estimator.

The ion's secular motion is modeled by solving the electrostatic problem
twice, with a unit ion charge at the trap center and displaced by a small
step along the mode axis, with every electrode grounded.  The squared
difference field integrated over the dielectric volume feeds the
fluctuation-dissipation noise spectrum

    S(w) = 4 kB T / (Delta^2 e^2 w) * eps0 eps_r tan(delta) * integral(|dE|^2 dV)

and the heating rate

    ndot = e^2 S(w) / (4 m hbar w),

reported in phonons per millisecond.  Heating-vs-length curves are reduced
to power laws ndot ~ d^-alpha by log-log least squares.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .constants import E_CHARGE, EPS0, HBAR, K_BOLTZMANN
from .errors import AnalysisError, ConfigError, InsufficientSamplesError
from .mesh import (
    MeshBuilder,
    ROLE_DIELECTRIC,
    SurfaceMesh,
    _grading_ratio,
    build_scenario_mesh,
    center_graded_edges,
    geometric_edges,
    plate,
)
from .scenario import Shielding, TrapScenario
from .solver import BoundaryCondition, Solver, evaluate_field

_DIRECTIONS = {"x": np.array([1.0, 0.0, 0.0]),
               "y": np.array([0.0, 1.0, 0.0]),
               "z": np.array([0.0, 0.0, 1.0])}

DIELECTRIC_DEPTH_CUTOFF = 2e-3   # integrate this far into the fiber


# ---------------------------------------------------------------------------
# dielectric volume quadrature

@dataclass
class VolumeQuadrature:
    points: np.ndarray    # (n, 3)
    weights: np.ndarray   # (n,) cell volumes, m^3

    def __len__(self):
        return len(self.points)

    @property
    def total_volume(self) -> float:
        return float(self.weights.sum())


def fiber_quadrature(scenario: TrapScenario, density: float = 1.0,
                     depth_cutoff: float = DIELECTRIC_DEPTH_CUTOFF) -> VolumeQuadrature:
    """Cylindrical cells inside the fiber, graded toward the end face.

    The integrand decays fast with depth, so cells start ~2 um thick at the
    tip and grow geometrically down to the axial cutoff.
    """
    d = scenario.cavity_half_length
    rf = scenario.fiber_radius
    depth = min(depth_cutoff, scenario.fiber_modeled_length)
    n_z = max(4, int(round(18 * density)))
    n_r = max(3, int(round(8 * density)))
    n_th = max(4, int(round(6 * density)))
    first = min(2e-6, depth / n_z)
    z_edges = geometric_edges(d, d + depth, n_z, _grading_ratio(depth, n_z, first))
    # radial edges concentrated toward the axis (aperture leak region)
    r_edges = rf * (np.linspace(0.0, 1.0, n_r + 1) ** 1.4)
    th_edges = np.linspace(0.0, 2.0 * math.pi, n_th + 1)
    return _cylindrical_cells(z_edges, r_edges, th_edges)


def _cylindrical_cells(z_edges, r_edges, th_edges) -> VolumeQuadrature:
    pts = []
    wts = []
    for z0, z1 in zip(z_edges[:-1], z_edges[1:]):
        zm = 0.5 * (z0 + z1)
        for r0, r1 in zip(r_edges[:-1], r_edges[1:]):
            rm = math.sqrt(0.5 * (r0 * r0 + r1 * r1))  # area-weighted radius
            ring_vol = math.pi * (r1 * r1 - r0 * r0) * (z1 - z0)
            for t0, t1 in zip(th_edges[:-1], th_edges[1:]):
                tm = 0.5 * (t0 + t1)
                pts.append((rm * math.cos(tm), rm * math.sin(tm), zm))
                wts.append(ring_vol / (len(th_edges) - 1))
    return VolumeQuadrature(np.asarray(pts), np.asarray(wts))


# ---------------------------------------------------------------------------
# displaced-ion difference field

@dataclass
class DeltaFieldResult:
    direction: str
    delta: float
    points: np.ndarray
    weights: np.ndarray
    delta_e: np.ndarray        # (n, 3) field differences, V/m
    integral: float            # integral |dE|^2 dV, V^2 m
    diagnostics: dict = field(default_factory=dict)

    @property
    def integral_per_delta_sq(self) -> float:
        return self.integral / self.delta ** 2


class HeatingPipeline:
    """Mesh + solver + volume quadrature for one scenario geometry."""

    def __init__(self, scenario: TrapScenario, *, resolution: float = 1.0,
                 quad_density: float = 1.0, tol: float = 1e-3,
                 mesh: SurfaceMesh | None = None,
                 quadrature: VolumeQuadrature | None = None):
        self.scenario = scenario
        self.mesh = mesh if mesh is not None else build_scenario_mesh(scenario, resolution)
        self.solver = Solver(self.mesh, tol=tol)
        self.quadrature = quadrature if quadrature is not None else fiber_quadrature(
            scenario, quad_density)

    def delta_field(self, direction: str = "z", delta: float | None = None,
                    check_linearity: bool = False) -> DeltaFieldResult:
        """Difference field per quadrature node for an ion displacement.

        The ion is a unit charge at the trap center; all electrodes are
        grounded.  delta defaults to d/1000.
        """
        if direction not in _DIRECTIONS:
            raise ConfigError(f"direction must be one of x, y, z, got {direction!r}")
        d = self.scenario.cavity_half_length
        if delta is None:
            delta = d / 1000.0
        if not 0 < delta < d:
            raise ConfigError(f"displacement {delta} must lie in (0, d={d})")
        result = self._difference(direction, delta)
        if check_linearity:
            half = self._difference(direction, delta / 2.0)
            drift = abs(half.integral_per_delta_sq / result.integral_per_delta_sq - 1.0)
            result.diagnostics["linearity_drift"] = drift
            if drift > 0.02:
                warnings.warn(
                    f"delta-field integral changes by {drift:.1%} when halving the "
                    "displacement; outside the linear-response regime",
                    stacklevel=2,
                )
        return result

    def _difference(self, direction: str, delta: float) -> DeltaFieldResult:
        if len(self.quadrature) == 0:
            return DeltaFieldResult(direction, delta, np.zeros((0, 3)), np.zeros(0),
                                    np.zeros((0, 3)), 0.0)
        e_origin = self._ion_field((0.0, 0.0, 0.0))
        shift = tuple(delta * _DIRECTIONS[direction])
        e_moved = self._ion_field(shift)
        de = e_moved - e_origin
        integral = float((self.quadrature.weights * np.einsum("nd,nd->n", de, de)).sum())
        return DeltaFieldResult(direction, delta, self.quadrature.points,
                                self.quadrature.weights, de, integral,
                                {"n_nodes": len(self.quadrature)})

    def _ion_field(self, position) -> np.ndarray:
        bc = BoundaryCondition({}, point_charges=((position, E_CHARGE),))
        sol = self.solver.solve(bc)
        return evaluate_field(sol, self.quadrature.points, near_quadrature=True)

    def heating_rate(self, direction: str = "z", delta: float | None = None,
                     omega: float | None = None, **kw) -> float:
        """End-to-end phonons/ms for this geometry."""
        sc = self.scenario
        omega = omega if omega is not None else sc.axial_phonon_frequency
        df = self.delta_field(direction, delta, **kw)
        s = noise_psd(df.integral, omega, sc.temperature, sc.eps_r, sc.tan_delta, df.delta)
        return heating_rate(s, omega, sc.ion_mass)


def delta_field(scenario: TrapScenario, direction: str = "z",
                delta: float | None = None, **kw) -> DeltaFieldResult:
    """One-shot convenience wrapper around HeatingPipeline.delta_field."""
    check = kw.pop("check_linearity", False)
    return HeatingPipeline(scenario, **kw).delta_field(direction, delta, check)


# ---------------------------------------------------------------------------
# spectrum and rate arithmetic

def noise_psd(integral: float, omega: float, temperature: float, eps_r: float,
              tan_delta: float, delta: float) -> float:
    """Electric-field noise power spectral density, V^2 m^-2 Hz^-1."""
    if omega <= 0 or temperature <= 0 or delta <= 0:
        raise ConfigError("omega, temperature and delta must be positive")
    if integral < 0 or tan_delta < 0 or eps_r < 1:
        raise ConfigError("integral and tan_delta must be >= 0, eps_r >= 1")
    return (4.0 * K_BOLTZMANN * temperature
            / (delta ** 2 * E_CHARGE ** 2 * omega)
            * EPS0 * eps_r * tan_delta * integral)


def heating_rate(psd: float, omega: float, mass: float) -> float:
    """Phonons per millisecond from the field-noise PSD."""
    if psd < 0:
        raise ConfigError("psd must be >= 0")
    per_second = E_CHARGE ** 2 * psd / (4.0 * mass * HBAR * omega)
    return per_second / 1e3


# ---------------------------------------------------------------------------
# heating vs cavity length

@dataclass
class HeatingCurve:
    lengths: np.ndarray          # cavity lengths L = 2 d, m
    rates: np.ndarray            # phonons/ms
    scenario: str                # descriptor
    exposed_radius: float | None = None

    def __post_init__(self):
        self.lengths = np.asarray(self.lengths, dtype=float)
        self.rates = np.asarray(self.rates, dtype=float)
        if not np.all(np.diff(self.lengths) > 0):
            raise ConfigError("curve lengths must be strictly increasing")
        if np.any(self.rates <= 0):
            raise ConfigError("heating rates must be positive")


def heating_vs_length(scenario: TrapScenario, lengths, *, direction: str = "z",
                      delta: float | None = None, omega: float | None = None,
                      resolution: float = 1.0, quad_density: float = 1.0,
                      tol: float = 1e-3) -> HeatingCurve:
    """Run the full pipeline once per cavity length.

    Needs >= 4 lengths spanning at least one octave.  The mesh is rebuilt
    for each length (the fiber moves); results are ordered by length.
    """
    lengths = np.sort(np.asarray(lengths, dtype=float))
    if len(lengths) < 4:
        raise ConfigError("need at least 4 cavity lengths")
    if lengths[-1] < 2.0 * lengths[0]:
        raise ConfigError("lengths must span at least one octave")
    rates = []
    for L in lengths:
        sc = scenario.with_(cavity_half_length=L / 2.0)
        pipe = HeatingPipeline(sc, resolution=resolution, quad_density=quad_density, tol=tol)
        rates.append(pipe.heating_rate(direction, delta, omega))
    return HeatingCurve(lengths, np.asarray(rates), scenario.shielding.value,
                        scenario.exposed_radius)


@dataclass
class PowerLawFit:
    alpha: float
    alpha_stderr: float
    prefactor: float            # ndot at d = 1 m on the fitted line
    r_squared: float
    n_points: int


def fit_power_law(curve: HeatingCurve) -> PowerLawFit:
    """Least squares on (ln d, ln ndot); alpha is minus the slope."""
    if len(curve.lengths) < 4:
        raise InsufficientSamplesError("power-law fit needs >= 4 points")
    if np.any(curve.rates <= 0):
        raise AnalysisError("power-law fit needs positive rates")
    x = np.log(curve.lengths / 2.0)     # ion-mirror distance d
    y = np.log(curve.rates)
    n = len(x)
    coeff, residuals, *_ = np.polyfit(x, y, 1, full=True)
    slope, intercept = coeff
    y_hat = slope * x + intercept
    ss_res = float(((y - y_hat) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    if n > 2 and ((x - x.mean()) ** 2).sum() > 0:
        stderr = math.sqrt(ss_res / (n - 2) / ((x - x.mean()) ** 2).sum())
    else:
        stderr = math.nan
    return PowerLawFit(float(-slope), stderr, float(math.exp(intercept)), r2, n)


def extrapolate_heating(n_ref: float, L_ref: float, L_target: float, alpha: float) -> float:
    """ndot ~ d^-alpha scaling between cavity lengths (L ratio = d ratio)."""
    if n_ref <= 0 or L_ref <= 0 or L_target <= 0:
        raise ConfigError("reference rate and lengths must be positive")
    return n_ref * (L_ref / L_target) ** alpha


# ---------------------------------------------------------------------------
# infinite-plane control geometry

def slab_mesh(width: float, thickness: float, distance: float, *,
              eps_r: float = 3.8, n_top: int = 11, n_side: int = 4) -> SurfaceMesh:
    """Closed dielectric slab far wider than the ion distance (alpha = 3
    control).  Ion sits at the origin; slab top face at z = distance."""
    b = MeshBuilder()
    eps = (eps_r, 1.0)
    z0, z1 = distance, distance + thickness
    edges = center_graded_edges(n_top, 12.0)
    top = plate((-width / 2, -width / 2, z0), (width, 0, 0), (0, width, 0),
                0, 0, u_edges=edges, v_edges=edges)
    b.add(top, role=ROLE_DIELECTRIC, body="slab", eps=eps)
    bottom = plate((-width / 2, -width / 2, z1), (width, 0, 0), (0, width, 0),
                   max(6, n_top // 2), max(6, n_top // 2))
    b.add(bottom, role=ROLE_DIELECTRIC, body="slab", eps=eps)
    for origin, u, v in (
        ((-width / 2, -width / 2, z0), (width, 0, 0), (0, 0, thickness)),
        ((-width / 2, width / 2, z0), (width, 0, 0), (0, 0, thickness)),
        ((-width / 2, -width / 2, z0), (0, width, 0), (0, 0, thickness)),
        ((width / 2, -width / 2, z0), (0, width, 0), (0, 0, thickness)),
    ):
        side = plate(origin, u, v, max(8, n_top), n_side)
        b.add(side, role=ROLE_DIELECTRIC, body="slab", eps=eps)
    mesh = b.build()
    # orient all normals outward from the slab interior
    inside = np.array([0.0, 0.0, z0 + thickness / 2.0])
    flip = np.einsum("ij,ij->i", mesh.normal, mesh.centroid - inside) < 0
    tri = mesh.tri.copy()
    tri[flip] = tri[flip][:, ::-1]
    b2 = MeshBuilder()
    b2.add(tri, role=ROLE_DIELECTRIC, body="slab", eps=eps)
    b2.mark_closed("slab")
    return b2.build()


def slab_quadrature(width: float, thickness: float, distance: float,
                    density: float = 1.0, lateral_extent: float | None = None
                    ) -> VolumeQuadrature:
    """Graded box cells under the ion; lateral extent defaults to width/2
    (the integrand decays fast off-axis)."""
    half = (lateral_extent or width / 2.0) / 2.0
    n_xy = max(6, int(round(12 * density)))
    n_z = max(4, int(round(10 * density)))
    g = geometric_edges(0.0, half, max(3, n_xy // 2), 6.0)
    xy = np.unique(np.concatenate([-g, g]))
    z = geometric_edges(distance, distance + thickness, n_z, 8.0)
    pts = []
    wts = []
    for x0, x1 in zip(xy[:-1], xy[1:]):
        for y0, y1 in zip(xy[:-1], xy[1:]):
            for z0, z1 in zip(z[:-1], z[1:]):
                pts.append(((x0 + x1) / 2, (y0 + y1) / 2, (z0 + z1) / 2))
                wts.append((x1 - x0) * (y1 - y0) * (z1 - z0))
    return VolumeQuadrature(np.asarray(pts), np.asarray(wts))


def slab_heating_curve(lengths, *, width: float | None = None,
                       thickness: float | None = None,
                       scenario: TrapScenario | None = None,
                       quad_density: float = 1.0) -> HeatingCurve:
    """Heating curve for the infinite-plane control (expect alpha ~ 3)."""
    lengths = np.sort(np.asarray(lengths, dtype=float))
    sc = scenario or TrapScenario.unshielded()
    d_max = lengths[-1] / 2.0
    width = width or 24.0 * d_max
    thickness = thickness or 6.0 * d_max
    rates = []
    for L in lengths:
        d = L / 2.0
        mesh = slab_mesh(width, thickness, d, eps_r=sc.eps_r)
        quad = slab_quadrature(width, thickness, d, density=quad_density)
        pipe = HeatingPipeline(sc.with_(cavity_half_length=d), mesh=mesh, quadrature=quad)
        rates.append(pipe.heating_rate("z"))
    return HeatingCurve(lengths, np.asarray(rates), "infinite_plane", None)
