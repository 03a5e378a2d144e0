"""Quasi-static boundary-integral solver on triangle panel meshes.

Every surface carries one unknown: a free-space equivalent charge density
per panel (constant over the panel).  Collocation at panel centroids gives

* conductor panels (and panels with an explicit Dirichlet override):
  potential from all densities + point charges equals the imposed value;
* dielectric-interface panels: continuity of the normal displacement field,
  which for a flat panel reduces to
  (eps_in + eps_out) / (2 eps0 (eps_in - eps_out)) * sigma = E_n(others).

The dense system is LU-factorized once per (mesh, override set) and reused
for any number of right-hand sides; a deterministic GMRES fallback covers
meshes too large for the dense path.

Also hosts the 1-D resistive ladder that converts photoelectric surface
current into a fiber-surface potential profile.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack as _lapack
from scipy.linalg import lu_factor, lu_solve
from scipy.sparse.linalg import LinearOperator, gmres

from .constants import COULOMB, EPS0
from .errors import (
    ConfigError,
    ConvergenceError,
    NearFieldError,
    SingularSystemError,
    SolverError,
)
from .mesh import ROLE_CONDUCTOR, SurfaceMesh
from .scenario import Shielding, TrapScenario

DENSE_PANEL_LIMIT = 20000
NEAR_FIELD_CUTOFF = 0.1       # fraction of local panel size
_SIGMA_RANGE = (1e-18, 1e-14)  # plausible fused-silica conductivity, S/m

# 3-point degree-2 triangle rule (barycentric permutations of 2/3, 1/6, 1/6)
_QUAD_BARY = np.array([
    [2 / 3, 1 / 6, 1 / 6],
    [1 / 6, 2 / 3, 1 / 6],
    [1 / 6, 1 / 6, 2 / 3],
])
_QUAD_W = np.array([1 / 3, 1 / 3, 1 / 3])


# ---------------------------------------------------------------------------
# boundary conditions

@dataclass(frozen=True)
class BoundaryCondition:
    """Electrode potentials, optional point charges, optional per-panel
    Dirichlet overrides (panel index -> volts)."""

    potentials: dict = field(default_factory=dict)
    point_charges: tuple = ()      # ((x, y, z), coulombs), ...
    panel_potentials: dict = field(default_factory=dict)

    def validate(self, mesh: SurfaceMesh) -> None:
        for name in self.potentials:
            if name not in mesh.electrode_names:
                raise ConfigError(f"boundary condition names unknown electrode {name!r}")
        n = len(mesh)
        for idx in self.panel_potentials:
            if not 0 <= idx < n:
                raise ConfigError(f"panel override index {idx} out of range")
        for pos, _q in self.point_charges:
            if len(pos) != 3:
                raise ConfigError("point charges need 3-D positions")

    def electrode_voltages(self, mesh: SurfaceMesh) -> np.ndarray:
        """Per-panel imposed potential for conductor panels (0 if unset)."""
        volts = np.zeros(len(mesh))
        for name, v in self.potentials.items():
            volts[mesh.conductor_panels(name)] = v
        return volts

    def scaled(self, c: float) -> "BoundaryCondition":
        return BoundaryCondition(
            {k: c * v for k, v in self.potentials.items()},
            tuple((pos, c * q) for pos, q in self.point_charges),
            {k: c * v for k, v in self.panel_potentials.items()},
        )


# ---------------------------------------------------------------------------
# panel integrals

def _quad_points(tri: np.ndarray, levels: int = 0):
    """Quadrature points/weights (weights sum to 1) on triangles (n,3,3).

    levels > 0 subdivides each triangle 4**levels times (flat midpoint
    split) and applies the 3-point rule on each child.
    """
    tris = tri
    for _ in range(levels):
        a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
        ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
        tris = np.concatenate([
            np.stack([a, ab, ca], axis=1),
            np.stack([ab, b, bc], axis=1),
            np.stack([ca, bc, c], axis=1),
            np.stack([ab, bc, ca], axis=1),
        ])
    pts = np.einsum("qk,nkd->nqd", _QUAD_BARY, tris)
    if levels:
        m = 4 ** levels
        n = tri.shape[0]
        pts = pts.reshape(m, n, 3, 3).transpose(1, 0, 2, 3).reshape(n, 3 * m, 3)
        w = np.tile(_QUAD_W / m, m)
    else:
        w = _QUAD_W
    return pts, w


def _self_potential(tri: np.ndarray, point: np.ndarray) -> float:
    """Analytic integral of 1/|r - r'| over a flat triangle for an in-plane
    interior point (used for the collocation self term)."""
    total = 0.0
    for k in range(3):
        a = tri[k]
        b = tri[(k + 1) % 3]
        t = b - a
        length = np.linalg.norm(t)
        if length == 0:
            raise SolverError("degenerate panel edge")
        t = t / length
        pa = a - point
        pb = b - point
        s_minus = float(pa @ t)
        s_plus = float(pb @ t)
        r_minus = float(np.linalg.norm(pa))
        r_plus = float(np.linalg.norm(pb))
        # perpendicular distance from the point to the edge line
        d = math.sqrt(max(r_minus ** 2 - s_minus ** 2, 0.0))
        if d < 1e-300:
            continue
        total += d * math.log((r_plus + s_plus) / (r_minus + s_minus))
    return total


def _longest_edges(tri: np.ndarray) -> np.ndarray:
    e = np.stack([
        np.linalg.norm(tri[:, 1] - tri[:, 0], axis=1),
        np.linalg.norm(tri[:, 2] - tri[:, 1], axis=1),
        np.linalg.norm(tri[:, 0] - tri[:, 2], axis=1),
    ])
    return e.max(axis=0)


class PanelOperator:
    """Dense potential / normal-field coupling matrices for one mesh."""

    def __init__(self, mesh: SurfaceMesh, *, near_factor: float = 3.0,
                 max_levels: int = 4, block: int = 256):
        if len(mesh) == 0:
            raise ConfigError("empty mesh")
        if len(mesh) > DENSE_PANEL_LIMIT:
            raise ConfigError(
                f"mesh has {len(mesh)} panels, above the dense limit {DENSE_PANEL_LIMIT}"
            )
        self.mesh = mesh
        n = len(mesh)
        centroids = mesh.centroid
        normals = mesh.normal
        areas = mesh.area

        G = np.empty((n, n))
        K = np.empty((n, n))
        qpts, qw = _quad_points(mesh.tri)
        for start in range(0, n, block):
            sl = slice(start, min(start + block, n))
            pts = qpts[sl]                      # (b, q, 3)
            diff = centroids[:, None, None, :] - pts[None, :, :, :]
            dist = np.linalg.norm(diff, axis=-1)
            dist[dist == 0] = np.inf
            inv = 1.0 / dist
            G[:, sl] = (inv @ qw) * areas[sl]
            en = np.einsum("ibqd,id->ibq", diff, normals) * inv ** 3
            K[:, sl] = (en @ qw) * areas[sl]

        # refine near pairs: the base rule degrades when the target sits
        # within a few source-panel diameters, so redo those entries with
        # subdivision depth tied to the distance ratio
        edges = _longest_edges(mesh.tri)
        for j in range(n):
            dist = np.linalg.norm(centroids - centroids[j], axis=1)
            near = np.flatnonzero(dist < near_factor * edges[j])
            near = near[near != j]
            if near.size == 0:
                continue
            ratio = edges[j] / np.maximum(dist[near], 1e-300)
            levels = np.clip(np.ceil(np.log2(ratio)).astype(int) + 1, 1, max_levels)
            for lv in np.unique(levels):
                tgt = near[levels == lv]
                pts, w = _quad_points(mesh.tri[j:j + 1], levels=int(lv))
                diff = centroids[tgt, None, :] - pts[0][None, :, :]
                d = np.linalg.norm(diff, axis=-1)
                inv = 1.0 / d
                G[tgt, j] = (inv @ w) * areas[j]
                en = np.einsum("pqd,pd->pq", diff, normals[tgt]) * inv ** 3
                K[tgt, j] = (en @ w) * areas[j]

        # analytic self terms; the principal-value normal field of a flat
        # panel at its own centroid vanishes by symmetry
        for j in range(n):
            G[j, j] = _self_potential(mesh.tri[j], centroids[j])
            K[j, j] = 0.0

        self.G = COULOMB * G
        self.K = COULOMB * K


def _point_charge_potential(points: np.ndarray, charges) -> np.ndarray:
    phi = np.zeros(len(points))
    for pos, q in charges:
        r = np.linalg.norm(points - np.asarray(pos, dtype=float), axis=1)
        if np.any(r == 0):
            raise SolverError("evaluation point coincides with a point charge")
        phi += COULOMB * q / r
    return phi


def _point_charge_field(points: np.ndarray, charges) -> np.ndarray:
    E = np.zeros((len(points), 3))
    for pos, q in charges:
        diff = points - np.asarray(pos, dtype=float)
        r = np.linalg.norm(diff, axis=1)
        if np.any(r == 0):
            raise SolverError("evaluation point coincides with a point charge")
        E += COULOMB * q * diff / r[:, None] ** 3
    return E


# ---------------------------------------------------------------------------
# solutions and solver

@dataclass
class SolverDiagnostics:
    residual_norm: float
    condition_estimate: float
    method: str


@dataclass
class FieldSolution:
    """Solved panel charge densities (C/m^2) on a mesh."""

    mesh: SurfaceMesh
    sigma: np.ndarray
    bc: BoundaryCondition
    diagnostics: SolverDiagnostics

    def total_charge(self, panels=None) -> float:
        idx = slice(None) if panels is None else panels
        return float((self.sigma[idx] * self.mesh.area[idx]).sum())

    def electrode_charge(self, name: str) -> float:
        return self.total_charge(self.mesh.conductor_panels(name))


class Solver:
    """Assembles the collocation system for one mesh and solves it for any
    number of boundary conditions, reusing the factorization."""

    def __init__(self, mesh: SurfaceMesh, tol: float = 1e-3):
        self.mesh = mesh
        self.tol = tol
        self.operator = PanelOperator(mesh)
        self._factorizations: dict = {}

    def _system(self, override: frozenset) -> np.ndarray:
        mesh = self.mesh
        n = len(mesh)
        dirichlet = mesh.role == ROLE_CONDUCTOR
        if override:
            dirichlet = dirichlet.copy()
            dirichlet[list(override)] = True
        A = np.where(dirichlet[:, None], self.operator.G, -self.operator.K)
        diel = ~dirichlet
        eps_in = mesh.eps_in[diel]
        eps_out = mesh.eps_out[diel]
        if np.any(eps_in == eps_out):
            raise ConfigError("dielectric panel with eps_in == eps_out has no interface")
        diag = (eps_in + eps_out) / (2.0 * EPS0 * (eps_in - eps_out))
        idx = np.flatnonzero(diel)
        A[idx, idx] += diag
        return A, dirichlet

    def _factorized(self, override: frozenset):
        key = override
        if key not in self._factorizations:
            A, dirichlet = self._system(override)
            n = A.shape[0]
            anorm = np.abs(A).sum(axis=0).max()
            try:
                lu, piv = lu_factor(A)
            except Exception as exc:  # LinAlgError
                raise SingularSystemError(f"collocation system factorization failed: {exc}")
            gecon = _lapack.dgecon
            rcond, _info = gecon(lu, anorm, norm="1")
            if not np.isfinite(rcond) or rcond < 1e-14:
                raise SingularSystemError(
                    f"collocation system is numerically singular (rcond={rcond:.2e}); "
                    "check for coincident or degenerate panels"
                )
            self._factorizations[key] = (A, (lu, piv), dirichlet, 1.0 / rcond)
        return self._factorizations[key]

    def _rhs(self, bc: BoundaryCondition, dirichlet: np.ndarray) -> np.ndarray:
        mesh = self.mesh
        b = np.zeros(len(mesh))
        volts = bc.electrode_voltages(mesh)
        for idx, v in bc.panel_potentials.items():
            volts[idx] = v
        cen = mesh.centroid
        if bc.point_charges:
            phi_pc = _point_charge_potential(cen, bc.point_charges)
            en_pc = np.einsum("id,id->i", _point_charge_field(cen, bc.point_charges),
                              mesh.normal)
        else:
            phi_pc = np.zeros(len(mesh))
            en_pc = np.zeros(len(mesh))
        b[dirichlet] = volts[dirichlet] - phi_pc[dirichlet]
        b[~dirichlet] = en_pc[~dirichlet]
        return b

    def solve(self, bc: BoundaryCondition) -> FieldSolution:
        bc.validate(self.mesh)
        override = frozenset(bc.panel_potentials)
        A, lu, dirichlet, cond = self._factorized(override)
        b = self._rhs(bc, dirichlet)
        sigma = lu_solve(lu, b)
        scale = float(np.linalg.norm(b))
        residual = float(np.linalg.norm(A @ sigma - b)) / (scale if scale > 0 else 1.0)
        if residual > self.tol:
            raise SolverError(f"collocation residual {residual:.2e} exceeds tol {self.tol}")
        return FieldSolution(self.mesh, sigma, bc,
                             SolverDiagnostics(residual, cond, "dense-lu"))


def _solve_iterative(mesh: SurfaceMesh, bc: BoundaryCondition, tol: float,
                     maxiter: int = 2000) -> FieldSolution:
    """Deterministic GMRES fallback for meshes above the dense limit.

    Still materializes the coupling matrices; intended head-room, not a
    fast-multipole replacement.
    """
    solver = Solver.__new__(Solver)
    solver.mesh = mesh
    solver.tol = tol
    solver.operator = PanelOperator(mesh)
    solver._factorizations = {}
    A, dirichlet = solver._system(frozenset(bc.panel_potentials))
    b = solver._rhs(bc, dirichlet)
    op = LinearOperator(A.shape, matvec=lambda x: A @ x)
    sigma, info = gmres(op, b, rtol=min(tol, 1e-8), maxiter=maxiter)
    if info != 0:
        raise ConvergenceError(f"iterative solve did not converge (info={info})")
    residual = float(np.linalg.norm(A @ sigma - b) / max(np.linalg.norm(b), 1e-300))
    return FieldSolution(mesh, sigma, bc, SolverDiagnostics(residual, math.nan, "gmres"))


def solve(mesh: SurfaceMesh, bc: BoundaryCondition, tol: float = 1e-3) -> FieldSolution:
    """One-shot solve; for repeated right-hand sides keep a Solver instance."""
    if len(mesh) > DENSE_PANEL_LIMIT:
        return _solve_iterative(mesh, bc, tol)
    return Solver(mesh, tol=tol).solve(bc)


# ---------------------------------------------------------------------------
# evaluation

def _near_panels(mesh: SurfaceMesh, points: np.ndarray, cutoff: float):
    """(point, panel) pairs closer than cutoff * panel size."""
    pairs = []
    for i, p in enumerate(points):
        dist = np.linalg.norm(mesh.centroid - p, axis=1)
        close = np.flatnonzero(dist < cutoff * mesh.size)
        for j in close:
            pairs.append((i, j, dist[j]))
    return pairs


def evaluate_potential(sol: FieldSolution, points, *, near_quadrature: bool = False,
                       cutoff: float = NEAR_FIELD_CUTOFF,
                       include_point_charges: bool = True) -> np.ndarray:
    """Potential (V) at arbitrary points from the solved densities.

    Points closer to a panel than `cutoff` * panel size raise
    NearFieldError unless near-field quadrature is enabled, in which case
    the offending panel integrals are refined adaptively.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    mesh = sol.mesh
    # base rule resolves distances down to ~1 panel size; anything closer is
    # handled per-pair below
    near = _near_panels(mesh, points, max(cutoff, 1.0))
    violations = [(i, j) for i, j, d in near if d < cutoff * mesh.size[j]]
    if violations and not near_quadrature:
        raise NearFieldError(
            f"{len(violations)} evaluation points violate the near-field cutoff; "
            "enable near_quadrature or move the points"
        )
    qpts, qw = _quad_points(mesh.tri)
    phi = np.zeros(len(points))
    for i, p in enumerate(points):
        diff = p[None, None, :] - qpts
        dist = np.linalg.norm(diff, axis=-1)
        inv = 1.0 / np.where(dist > 0, dist, np.inf)
        phi[i] = COULOMB * float(((inv @ qw) * mesh.area * sol.sigma).sum())
    # replace the contributions of near panels with refined integrals
    for i, j, d in near:
        p = points[i]
        base = COULOMB * sol.sigma[j] * mesh.area[j] * float(
            (1.0 / np.linalg.norm(p - _quad_points(mesh.tri[j:j + 1])[0][0], axis=-1))
            @ _QUAD_W
        )
        phi[i] += _refined_panel_potential(mesh, j, p) * sol.sigma[j] - base
    if include_point_charges and sol.bc.point_charges:
        phi += _point_charge_potential(points, sol.bc.point_charges)
    return phi


def _refined_panel_potential(mesh: SurfaceMesh, j: int, p: np.ndarray) -> float:
    """Accurate single-panel potential integral (per unit density)."""
    tri = mesh.tri[j]
    normal = mesh.normal[j]
    h = float((p - tri[0]) @ normal)
    size = mesh.size[j]
    if abs(h) < 1e-9 * size:
        return COULOMB * _self_potential(tri, p - h * normal)
    levels = int(np.clip(math.ceil(math.log2(size / max(abs(h), 1e-12))) + 1, 1, 5))
    pts, w = _quad_points(mesh.tri[j:j + 1], levels=levels)
    d = np.linalg.norm(p[None, :] - pts[0], axis=-1)
    return COULOMB * mesh.area[j] * float((1.0 / d) @ w)


def evaluate_field(sol: FieldSolution, points, *, near_quadrature: bool = False,
                   cutoff: float = NEAR_FIELD_CUTOFF,
                   include_point_charges: bool = True) -> np.ndarray:
    """Electric field (V/m) at arbitrary points; E = -grad(potential)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    mesh = sol.mesh
    near = _near_panels(mesh, points, max(cutoff, 1.0))
    violations = [(i, j) for i, j, d in near if d < cutoff * mesh.size[j]]
    if violations and not near_quadrature:
        raise NearFieldError(
            f"{len(violations)} evaluation points violate the near-field cutoff; "
            "enable near_quadrature or move the points"
        )
    qpts, qw = _quad_points(mesh.tri)
    E = np.zeros((len(points), 3))
    weighted = mesh.area * sol.sigma
    for i, p in enumerate(points):
        diff = p[None, None, :] - qpts
        dist = np.linalg.norm(diff, axis=-1)
        inv3 = np.where(dist > 0, dist, np.inf) ** -3
        E[i] = COULOMB * np.einsum("nq,nqd,n->d", inv3 * qw[None, :], diff, weighted)
    for i, j, d in near:
        p = points[i]
        if d < 1e-3 * mesh.size[j]:
            raise NearFieldError("field evaluation on a panel surface is undefined")
        pts0 = _quad_points(mesh.tri[j:j + 1])[0][0]
        diff = p[None, :] - pts0
        dist = np.linalg.norm(diff, axis=-1)
        base = COULOMB * weighted[j] * np.einsum("q,qd->d", _QUAD_W / dist ** 3, diff)
        levels = int(np.clip(math.ceil(math.log2(mesh.size[j] / d)) + 2, 2, 6))
        pts, w = _quad_points(mesh.tri[j:j + 1], levels=levels)
        diff = p[None, :] - pts[0]
        dist = np.linalg.norm(diff, axis=-1)
        fine = COULOMB * weighted[j] * np.einsum("q,qd->d", w / dist ** 3, diff)
        E[i] += fine - base
    if include_point_charges and sol.bc.point_charges:
        E += _point_charge_field(points, sol.bc.point_charges)
    return E


# ---------------------------------------------------------------------------
# fiber conduction ladder

@dataclass
class ConductionProfile:
    """Steady-state fiber-surface potential from photoelectric charging.

    `coordinate` is distance along the conduction path: axial distance from
    the tip for the unshielded and tube variants, end-face radius for the
    gold-mask variant.
    """

    coordinate: np.ndarray
    potential: np.ndarray
    variant: Shielding
    kind: str  # "axial" or "radial"

    @property
    def peak_voltage(self) -> float:
        return float(self.potential.max(initial=0.0))

    def panel_potentials(self, mesh: SurfaceMesh, scenario: TrapScenario) -> dict:
        """Dirichlet values for the exposed (source) panels of `mesh`."""
        idx = mesh.source_panels()
        out = {}
        for i in idx:
            c = mesh.centroid[i]
            if self.kind == "axial":
                s = max(c[2] - scenario.cavity_half_length, 0.0)
            else:
                s = math.hypot(c[0], c[1])
            out[int(i)] = float(np.interp(s, self.coordinate, self.potential))
        return out


def solve_fiber_conduction(scenario: TrapScenario, sigma_fiber: float | None = None,
                           n_nodes: int = 512) -> ConductionProfile:
    """1-D resistive ladder for the charging equilibrium.

    Current injected on exposed surfaces drains through the fiber bulk to
    the variant's ground: the far mounting end (unshielded), the grounded
    tube contact (metal tube) or the mask edge (gold mask, radial path
    through an effective conduction depth equal to the exposed radius).
    """
    sigma = scenario.sigma_fiber if sigma_fiber is None else sigma_fiber
    if not sigma > 0:
        raise ConfigError("fiber conductivity must be > 0")
    if not _SIGMA_RANGE[0] <= sigma <= _SIGMA_RANGE[1]:
        warnings.warn(
            f"fiber conductivity {sigma:.2e} S/m is outside the plausible "
            f"range [{_SIGMA_RANGE[0]:.0e}, {_SIGMA_RANGE[1]:.0e}]",
            stacklevel=2,
        )
    i_plus = scenario.surface_current_density
    rf = scenario.fiber_radius

    if scenario.shielding is Shielding.GOLD_MASK:
        r_exp = scenario.exposed_radius
        t_eff = r_exp
        rho = np.linspace(0.0, r_exp, n_nodes)
        if i_plus == 0:
            return ConductionProfile(rho, np.zeros_like(rho), scenario.shielding, "radial")
        current = i_plus * math.pi * rho ** 2
        # dV/drho = -I / (sigma * 2 pi rho t); integrand is linear in rho
        integrand = np.zeros_like(rho)
        integrand[1:] = current[1:] / (sigma * 2.0 * math.pi * rho[1:] * t_eff)
        v = _integrate_from_ground(rho, integrand)
        return ConductionProfile(rho, v, scenario.shielding, "radial")

    area = math.pi * rf ** 2
    i_end = i_plus * area
    if scenario.shielding is Shielding.METAL_TUBE:
        length = scenario.contact_distance
        s = np.linspace(0.0, length, n_nodes)
        current = np.full_like(s, i_end)
    else:
        length = scenario.fiber_length
        tip = scenario.exposed_tip_length
        s = np.unique(np.concatenate([np.linspace(0.0, length, n_nodes), [tip]]))
        lateral = i_plus * math.pi * scenario.fiber_diameter
        current = i_end + lateral * np.minimum(s, tip)
    if i_plus == 0:
        return ConductionProfile(s, np.zeros_like(s), scenario.shielding, "axial")
    v = _integrate_from_ground(s, current / (sigma * area))
    return ConductionProfile(s, v, scenario.shielding, "axial")


def _integrate_from_ground(x: np.ndarray, dv: np.ndarray) -> np.ndarray:
    """V(x) = integral of dv from x to ground at x[-1] (trapezoid)."""
    seg = 0.5 * (dv[1:] + dv[:-1]) * np.diff(x)
    v = np.zeros_like(x)
    v[:-1] = seg[::-1].cumsum()[::-1]
    return v


# ---------------------------------------------------------------------------
# diagnostics helpers

def capacitance_matrix(mesh: SurfaceMesh, electrodes=None, tol: float = 1e-3) -> np.ndarray:
    """C[i, j] = charge on electrode i with electrode j at 1 V, others 0."""
    electrodes = list(electrodes or mesh.electrode_names)
    solver = Solver(mesh, tol=tol)
    C = np.zeros((len(electrodes), len(electrodes)))
    for j, name in enumerate(electrodes):
        sol = solver.solve(BoundaryCondition({name: 1.0}))
        for i, other in enumerate(electrodes):
            C[i, j] = sol.electrode_charge(other)
    return C
