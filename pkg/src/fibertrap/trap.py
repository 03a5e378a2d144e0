"""Confinement potential assembly.

The total potential seen by the ion combines the time-averaged RF
pseudopotential, the DC electrode contributions and the potential produced
by photoelectric surface charging of the fiber:

    total(r) = pseudo(r) + sum_i V_i * dc_i(r) + current(r)

Pseudopotential values are reported in eV; DC and charging maps are plain
volts (numerically equal to eV for a singly charged ion, which is how the
sum is formed).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .constants import E_CHARGE
from .errors import ConfigError, GridMismatchError
from .mesh import SurfaceMesh, build_scenario_mesh
from .scenario import Shielding, TrapScenario
from .solver import (
    BoundaryCondition,
    FieldSolution,
    Solver,
    evaluate_field,
    evaluate_potential,
    solve_fiber_conduction,
)


class MapKind(enum.Enum):
    PSEUDO_EV = "pseudopotential_eV"
    DC_V = "dc_potential_V"
    CURRENT_V = "current_potential_V"
    TOTAL_EV = "total_potential_eV"


# ---------------------------------------------------------------------------
# sampling grids

@dataclass(frozen=True)
class LineGrid:
    """Points origin + offset * axis for each offset (meters)."""

    axis: tuple
    offsets: tuple
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=float)
        if offsets.ndim != 1 or len(offsets) < 2:
            raise ConfigError("line grid needs at least 2 offsets")
        if not np.all(np.diff(offsets) > 0):
            raise ConfigError("line grid offsets must be strictly increasing")
        axis = np.asarray(self.axis, dtype=float)
        n = np.linalg.norm(axis)
        if n == 0:
            raise ConfigError("line grid axis must be nonzero")
        object.__setattr__(self, "axis", tuple(axis / n))
        object.__setattr__(self, "offsets", tuple(offsets))

    def points(self) -> np.ndarray:
        off = np.asarray(self.offsets)
        return np.asarray(self.origin) + off[:, None] * np.asarray(self.axis)

    def __len__(self) -> int:
        return len(self.offsets)


@dataclass(frozen=True)
class BoxGrid:
    """Axis-aligned 3-D grid; values are stored flat in C order (x, y, z)."""

    x: tuple
    y: tuple
    z: tuple

    def __post_init__(self):
        for name in ("x", "y", "z"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 1 or len(arr) < 1:
                raise ConfigError(f"box grid {name} axis must be 1-D and nonempty")
            if len(arr) > 1 and not np.all(np.diff(arr) > 0):
                raise ConfigError(f"box grid {name} axis must be strictly increasing")
            object.__setattr__(self, name, tuple(arr))

    @property
    def shape(self) -> tuple:
        return (len(self.x), len(self.y), len(self.z))

    def points(self) -> np.ndarray:
        X, Y, Z = np.meshgrid(self.x, self.y, self.z, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def __len__(self) -> int:
        return len(self.x) * len(self.y) * len(self.z)


def radial_line(span: float = 500e-6, step: float = 2e-6, axis=(0.0, 1.0, 0.0)) -> LineGrid:
    """Default analysis line through the trap center, perpendicular to the
    fiber axis (2 um steps over +-500 um unless overridden)."""
    n = int(round(span / step))
    offsets = np.arange(-n, n + 1) * step
    return LineGrid(axis, tuple(offsets))


# ---------------------------------------------------------------------------
# potential maps

@dataclass
class PotentialMap:
    grid: LineGrid | BoxGrid
    values: np.ndarray
    kind: MapKind
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.grid),):
            raise ConfigError(
                f"values shape {self.values.shape} does not match grid size {len(self.grid)}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ConfigError("potential map contains non-finite values")

    def same_grid(self, other: "PotentialMap") -> bool:
        if type(self.grid) is not type(other.grid):
            return False
        if isinstance(self.grid, LineGrid):
            return (self.grid.axis == other.grid.axis
                    and self.grid.offsets == other.grid.offsets
                    and self.grid.origin == other.grid.origin)
        return (self.grid.x == other.grid.x and self.grid.y == other.grid.y
                and self.grid.z == other.grid.z)

    def line_profile(self):
        from .analysis import LineProfile

        if not isinstance(self.grid, LineGrid):
            raise ConfigError("only line maps convert to profiles")
        return LineProfile(np.asarray(self.grid.axis), np.asarray(self.grid.offsets),
                           self.values.copy())


def pseudopotential_energy_ev(field_magnitude, mass: float, omega_rf: float):
    """Time-averaged pseudopotential (eV) for RF field amplitude |grad U|."""
    field_magnitude = np.asarray(field_magnitude, dtype=float)
    return E_CHARGE * field_magnitude ** 2 / (4.0 * mass * omega_rf ** 2)


def pseudopotential(rf_solution: FieldSolution, grid, scenario: TrapScenario,
                    **eval_kw) -> PotentialMap:
    """Pseudopotential map (eV) from the solved RF amplitude field."""
    E = evaluate_field(rf_solution, grid.points(), **eval_kw)
    mag = np.linalg.norm(E, axis=1)
    values = pseudopotential_energy_ev(mag, scenario.ion_mass, scenario.Omega_RF)
    return PotentialMap(grid, values, MapKind.PSEUDO_EV,
                        {"scenario": scenario.hash(), "V0": scenario.V0})


def rf_boundary_condition(scenario: TrapScenario) -> BoundaryCondition:
    """RF amplitude pattern: opposite blade pairs at +-V0, rest grounded."""
    return BoundaryCondition({
        "blade_a1": scenario.V0, "blade_a2": scenario.V0,
        "blade_b1": -scenario.V0, "blade_b2": -scenario.V0,
    })


def dc_boundary_condition(scenario: TrapScenario) -> BoundaryCondition:
    pots = {f"endcap_{i}": scenario.V_endcap for i in range(1, 9)}
    if scenario.shielding is not Shielding.UNSHIELDED:
        pots["shield"] = scenario.V_shield
    return BoundaryCondition(pots)


def dc_basis(mesh: SurfaceMesh, electrode: str, grid, *, solver: Solver | None = None,
             **eval_kw) -> PotentialMap:
    """Unit-volt potential map of one electrode, all others grounded."""
    if electrode not in mesh.electrode_names:
        raise ConfigError(f"unknown electrode {electrode!r}")
    solver = solver or Solver(mesh)
    sol = solver.solve(BoundaryCondition({electrode: 1.0}))
    values = evaluate_potential(sol, grid.points(), **eval_kw)
    return PotentialMap(grid, values, MapKind.DC_V, {"electrode": electrode})


def surface_current_potential(scenario: TrapScenario, grid, *,
                              mesh: SurfaceMesh | None = None,
                              solver: Solver | None = None,
                              sigma_fiber: float | None = None,
                              **eval_kw) -> PotentialMap:
    """Potential map (V) of the charged fiber surface, electrodes grounded.

    The conduction ladder fixes the exposed-panel potentials; all metal is
    held at zero.  The map is linear in the surface current density and
    identically zero when it vanishes.
    """
    if mesh is None:
        mesh = build_scenario_mesh(scenario)
    if solver is None:
        solver = Solver(mesh)
    profile = solve_fiber_conduction(scenario, sigma_fiber)
    if profile.peak_voltage == 0.0:
        values = np.zeros(len(grid))
        return PotentialMap(grid, values, MapKind.CURRENT_V,
                            {"scenario": scenario.hash(), "i_plus": 0.0})
    overrides = profile.panel_potentials(mesh, scenario)
    bc = BoundaryCondition({}, panel_potentials=overrides)
    sol = solver.solve(bc)
    values = evaluate_potential(sol, grid.points(), **eval_kw)
    return PotentialMap(grid, values, MapKind.CURRENT_V,
                        {"scenario": scenario.hash(),
                         "i_plus": scenario.surface_current_density,
                         "peak_voltage": profile.peak_voltage})


def total_potential(pseudo: PotentialMap, dc_terms=(), current: PotentialMap | None = None
                    ) -> PotentialMap:
    """Pointwise total (eV): pseudo + sum(V_i * dc_i) + current.

    `dc_terms` is a sequence of (unit-volt PotentialMap, applied volts).
    All maps must share the pseudopotential's grid exactly.
    """
    if pseudo.kind is not MapKind.PSEUDO_EV:
        raise ConfigError("first argument must be a pseudopotential map")
    values = pseudo.values.copy()
    for dc_map, volts in dc_terms:
        if not pseudo.same_grid(dc_map):
            raise GridMismatchError("dc map grid differs from pseudopotential grid")
        values = values + volts * dc_map.values
    if current is not None:
        if not pseudo.same_grid(current):
            raise GridMismatchError("current map grid differs from pseudopotential grid")
        values = values + current.values
    return PotentialMap(pseudo.grid, values, MapKind.TOTAL_EV, dict(pseudo.provenance))


# ---------------------------------------------------------------------------
# one-stop pipeline for a scenario

class TrapModel:
    """Builds the mesh once and serves every potential map of a scenario."""

    def __init__(self, scenario: TrapScenario, resolution: float = 1.0,
                 tol: float = 1e-3):
        self.scenario = scenario
        self.mesh = build_scenario_mesh(scenario, resolution)
        self.solver = Solver(self.mesh, tol=tol)

    def rf_solution(self) -> FieldSolution:
        return self.solver.solve(rf_boundary_condition(self.scenario))

    def pseudo_map(self, grid) -> PotentialMap:
        return pseudopotential(self.rf_solution(), grid, self.scenario)

    def dc_map(self, grid) -> PotentialMap:
        """Combined DC map (V) at the scenario's electrode voltages."""
        sol = self.solver.solve(dc_boundary_condition(self.scenario))
        values = evaluate_potential(sol, grid.points())
        return PotentialMap(grid, values, MapKind.DC_V,
                            {"scenario": self.scenario.hash(), "combined": True})

    def current_map(self, grid) -> PotentialMap:
        return surface_current_potential(self.scenario, grid, mesh=self.mesh,
                                         solver=self.solver)

    def total_map(self, grid) -> PotentialMap:
        pseudo = self.pseudo_map(grid)
        dc = self.dc_map(grid)
        current = self.current_map(grid)
        total = pseudo.values + dc.values + current.values
        return PotentialMap(grid, total, MapKind.TOTAL_EV,
                            {"scenario": self.scenario.hash()})

    def component_maps(self, grid) -> dict:
        pseudo = self.pseudo_map(grid)
        dc = self.dc_map(grid)
        current = self.current_map(grid)
        total = PotentialMap(grid, pseudo.values + dc.values + current.values,
                             MapKind.TOTAL_EV, {"scenario": self.scenario.hash()})
        return {"pseudo": pseudo, "dc": dc, "current": current, "total": total}
