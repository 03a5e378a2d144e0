"""Triangular surface meshes for the trap, fiber and shielding bodies.

Panels are flat triangles carrying one role each:

* ``conductor`` -- metal surface with an imposed potential, tagged with an
  electrode name;
* ``dielectric`` -- dielectric/vacuum interface with (eps_in, eps_out);
* ``source`` -- exposed dielectric that collects photoelectric charge.  In
  ordinary solves these behave like dielectric interfaces; the charging
  solve imposes Dirichlet data on them.

Curved primitives remember their carrier surface so that refinement can
re-project new vertices onto the true cylinder/sphere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, MeshError
from .scenario import Shielding, TrapScenario

ROLE_CONDUCTOR = 0
ROLE_DIELECTRIC = 1
ROLE_SOURCE = 2

ROLE_NAMES = {ROLE_CONDUCTOR: "conductor", ROLE_DIELECTRIC: "dielectric", ROLE_SOURCE: "source"}

_WATERTIGHT_RTOL = 1e-6


# ---------------------------------------------------------------------------
# carriers for curved surfaces.  A carrier turns the straight midpoint of a
# panel edge into a point on the true surface.  The rule must depend only on
# the edge endpoints so that panels sharing an edge stay conforming.

@dataclass(frozen=True)
class PolarCarrier:
    """Surface of revolution about an axis (cylinder sides, discs, annuli).

    An edge midpoint keeps its axial position and azimuth but its distance
    from the axis is set to the mean of the endpoint radii: circumferential
    chords get pushed back onto their circle, radial edges are untouched.
    """

    point: tuple
    axis: tuple

    def midpoint(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        o = np.asarray(self.point)
        a = np.asarray(self.axis, dtype=float)
        a = a / np.linalg.norm(a)
        m = 0.5 * (p + q)
        w = m - o
        ax = (w @ a)[:, None] * a
        rad = w - ax
        rad_norm = np.linalg.norm(rad, axis=1, keepdims=True)
        rad_norm[rad_norm == 0] = 1.0

        def radius_of(x):
            wx = x - o
            return np.linalg.norm(wx - (wx @ a)[:, None] * a, axis=1, keepdims=True)

        target = 0.5 * (radius_of(p) + radius_of(q))
        return o + ax + target * rad / rad_norm


@dataclass(frozen=True)
class SphereCarrier:
    center: tuple
    radius: float

    def midpoint(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center)
        m = 0.5 * (p + q)
        w = m - c
        norm = np.linalg.norm(w, axis=1, keepdims=True)
        norm[norm == 0] = 1.0
        return c + self.radius * w / norm


# ---------------------------------------------------------------------------
# panel view and mesh container

class Panel:
    """Read-only view of one panel of a SurfaceMesh."""

    __slots__ = ("_mesh", "_i")

    def __init__(self, mesh: "SurfaceMesh", i: int):
        self._mesh = mesh
        self._i = i

    @property
    def vertices(self) -> np.ndarray:
        return self._mesh.tri[self._i]

    @property
    def centroid(self) -> np.ndarray:
        return self._mesh.centroid[self._i]

    @property
    def normal(self) -> np.ndarray:
        return self._mesh.normal[self._i]

    @property
    def area(self) -> float:
        return float(self._mesh.area[self._i])

    @property
    def role(self) -> str:
        return ROLE_NAMES[int(self._mesh.role[self._i])]

    @property
    def body(self) -> str:
        return self._mesh.body_names[self._mesh.body[self._i]]

    @property
    def electrode(self) -> str | None:
        e = int(self._mesh.electrode[self._i])
        return self._mesh.electrode_names[e] if e >= 0 else None

    @property
    def eps(self) -> tuple | None:
        if self._mesh.role[self._i] == ROLE_CONDUCTOR:
            return None
        return (float(self._mesh.eps_in[self._i]), float(self._mesh.eps_out[self._i]))


class SurfaceMesh:
    """Immutable triangle mesh with per-panel roles."""

    def __init__(self, tri, role, body, body_names, electrode, electrode_names,
                 eps_in, eps_out, carrier_index, carriers, closed_bodies=()):
        self.tri = np.asarray(tri, dtype=float)
        self.role = np.asarray(role, dtype=np.int8)
        self.body = np.asarray(body, dtype=np.int32)
        self.body_names = list(body_names)
        self.electrode = np.asarray(electrode, dtype=np.int32)
        self.electrode_names = list(electrode_names)
        self.eps_in = np.asarray(eps_in, dtype=float)
        self.eps_out = np.asarray(eps_out, dtype=float)
        self.carrier_index = np.asarray(carrier_index, dtype=np.int32)
        self.carriers = list(carriers)
        self.closed_bodies = tuple(closed_bodies)

        if self.tri.ndim != 3 or self.tri.shape[1:] != (3, 3):
            raise MeshError(f"triangle array must be (n, 3, 3), got {self.tri.shape}")

        e1 = self.tri[:, 1] - self.tri[:, 0]
        e2 = self.tri[:, 2] - self.tri[:, 0]
        cross = np.cross(e1, e2)
        norms = np.linalg.norm(cross, axis=1)
        if np.any(norms <= 0):
            raise MeshError("mesh contains degenerate (zero-area) panels")
        self.area = 0.5 * norms
        self.normal = cross / norms[:, None]
        self.centroid = self.tri.mean(axis=1)
        # characteristic panel edge length
        self.size = np.sqrt(2.0 * self.area)

        self._validate()

    # -- basic protocol ------------------------------------------------------

    def __len__(self) -> int:
        return self.tri.shape[0]

    @property
    def n_panels(self) -> int:
        return self.tri.shape[0]

    @property
    def panels(self) -> list[Panel]:
        return [Panel(self, i) for i in range(len(self))]

    # -- selection helpers ----------------------------------------------------

    def electrode_index(self, name: str) -> int:
        try:
            return self.electrode_names.index(name)
        except ValueError:
            raise ConfigError(f"unknown electrode {name!r}") from None

    def conductor_panels(self, name: str | None = None) -> np.ndarray:
        mask = self.role == ROLE_CONDUCTOR
        if name is not None:
            mask &= self.electrode == self.electrode_index(name)
        return np.flatnonzero(mask)

    def source_panels(self) -> np.ndarray:
        return np.flatnonzero(self.role == ROLE_SOURCE)

    def interface_panels(self) -> np.ndarray:
        """Dielectric-interface panels, including exposed (source) ones."""
        return np.flatnonzero(self.role != ROLE_CONDUCTOR)

    def body_panels(self, body: str) -> np.ndarray:
        try:
            b = self.body_names.index(body)
        except ValueError:
            raise ConfigError(f"unknown body {body!r}") from None
        return np.flatnonzero(self.body == b)

    def body_area(self, body: str) -> float:
        return float(self.area[self.body_panels(body)].sum())

    def role_area(self, role: int, body: str | None = None) -> float:
        mask = self.role == role
        if body is not None:
            mask &= self.body == self.body_names.index(body)
        return float(self.area[mask].sum())

    # -- validation -----------------------------------------------------------

    def _validate(self) -> None:
        n = len(self)
        for arr, name in ((self.role, "role"), (self.body, "body"),
                          (self.electrode, "electrode"), (self.eps_in, "eps_in"),
                          (self.eps_out, "eps_out"), (self.carrier_index, "carrier")):
            if arr.shape != (n,):
                raise MeshError(f"{name} array has wrong shape {arr.shape}")
        cond = self.role == ROLE_CONDUCTOR
        if np.any(self.electrode[cond] < 0):
            raise MeshError("conductor panels must carry an electrode id")
        if np.any(self.eps_in[~cond] < 1) or np.any(self.eps_out[~cond] < 1):
            raise MeshError("dielectric panels need eps_in, eps_out >= 1")
        for body in self.closed_bodies:
            self.check_watertight(body)

    def check_watertight(self, body: str) -> None:
        idx = self.body_panels(body)
        flux = (self.area[idx, None] * self.normal[idx]).sum(axis=0)
        total = float(self.area[idx].sum())
        if np.linalg.norm(flux) > _WATERTIGHT_RTOL * total:
            raise MeshError(
                f"body {body!r} is not watertight: residual flux "
                f"{np.linalg.norm(flux) / total:.2e} of total area"
            )


# ---------------------------------------------------------------------------
# builder

class MeshBuilder:
    def __init__(self):
        self._tri = []
        self._role = []
        self._body = []
        self._electrode = []
        self._eps_in = []
        self._eps_out = []
        self._carrier_index = []
        self.body_names: list[str] = []
        self.electrode_names: list[str] = []
        self.carriers: list = []
        self.closed_bodies: list[str] = []

    def _body_id(self, name: str) -> int:
        if name not in self.body_names:
            self.body_names.append(name)
        return self.body_names.index(name)

    def _electrode_id(self, name: str | None) -> int:
        if name is None:
            return -1
        if name not in self.electrode_names:
            self.electrode_names.append(name)
        return self.electrode_names.index(name)

    def add(self, tri: np.ndarray, *, role: int, body: str, electrode: str | None = None,
            eps: tuple = (1.0, 1.0), carrier=None) -> None:
        tri = np.asarray(tri, dtype=float)
        if len(tri) == 0:
            raise MeshError(f"surface for body {body!r} produced no panels")
        if role == ROLE_CONDUCTOR and electrode is None:
            raise MeshError("conductor surfaces need an electrode name")
        n = len(tri)
        ci = -1
        if carrier is not None:
            self.carriers.append(carrier)
            ci = len(self.carriers) - 1
        self._tri.append(tri)
        self._role.append(np.full(n, role, dtype=np.int8))
        self._body.append(np.full(n, self._body_id(body), dtype=np.int32))
        self._electrode.append(np.full(n, self._electrode_id(electrode), dtype=np.int32))
        self._eps_in.append(np.full(n, eps[0], dtype=float))
        self._eps_out.append(np.full(n, eps[1], dtype=float))
        self._carrier_index.append(np.full(n, ci, dtype=np.int32))

    def mark_closed(self, body: str) -> None:
        if body not in self.closed_bodies:
            self.closed_bodies.append(body)

    def build(self) -> SurfaceMesh:
        if not self._tri:
            raise MeshError("empty mesh")
        return SurfaceMesh(
            np.concatenate(self._tri),
            np.concatenate(self._role),
            np.concatenate(self._body),
            self.body_names,
            np.concatenate(self._electrode),
            self.electrode_names,
            np.concatenate(self._eps_in),
            np.concatenate(self._eps_out),
            np.concatenate(self._carrier_index),
            self.carriers,
            self.closed_bodies,
        )


# ---------------------------------------------------------------------------
# primitives.  All return (n, 3, 3) vertex arrays with outward-oriented
# normals fixed afterwards via _orient.

def _orient(tri: np.ndarray, direction) -> np.ndarray:
    """Flip triangles whose normal opposes `direction` (vector or callable)."""
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    normal = np.cross(e1, e2)
    centroid = tri.mean(axis=1)
    want = direction(centroid) if callable(direction) else np.broadcast_to(direction, normal.shape)
    flip = np.einsum("ij,ij->i", normal, want) < 0
    tri = tri.copy()
    tri[flip] = tri[flip][:, ::-1]
    return tri


def disc(radius: float, n_r: int, n_t: int, *, z: float = 0.0, inner_radius: float = 0.0,
         normal=(0.0, 0.0, 1.0), radial_grading: float = 1.0) -> np.ndarray:
    """Triangulated disc or annulus in the plane z=const, axis along z.

    radial_grading > 1 concentrates rings toward the inner edge.
    """
    if n_r < 1 or n_t < 3:
        raise MeshError("disc needs n_r >= 1 and n_t >= 3")
    if radial_grading == 1.0:
        radii = np.linspace(inner_radius, radius, n_r + 1)
    else:
        w = np.geomspace(1.0, radial_grading, n_r)
        edges = np.concatenate([[0.0], np.cumsum(w)])
        radii = inner_radius + (radius - inner_radius) * edges / edges[-1]
    theta = np.linspace(0.0, 2.0 * math.pi, n_t + 1)
    tris = []
    for r0, r1 in zip(radii[:-1], radii[1:]):
        for t0, t1 in zip(theta[:-1], theta[1:]):
            p00 = (r0 * math.cos(t0), r0 * math.sin(t0), z)
            p01 = (r0 * math.cos(t1), r0 * math.sin(t1), z)
            p10 = (r1 * math.cos(t0), r1 * math.sin(t0), z)
            p11 = (r1 * math.cos(t1), r1 * math.sin(t1), z)
            if r0 == 0.0:
                tris.append((p00, p10, p11))
            else:
                tris.append((p00, p10, p11))
                tris.append((p00, p11, p01))
    return _orient(np.asarray(tris), np.asarray(normal, dtype=float))


def cylinder(radius: float, z0: float, z1: float, n_z: int, n_t: int, *,
             z_edges=None, outward: bool = True) -> np.ndarray:
    """Lateral cylinder surface with axis along z.

    `z_edges` overrides the uniform axial subdivision (graded meshes).
    """
    if n_t < 3:
        raise MeshError("cylinder needs n_t >= 3")
    if z_edges is None:
        z_edges = np.linspace(z0, z1, n_z + 1)
    z_edges = np.asarray(z_edges, dtype=float)
    theta = np.linspace(0.0, 2.0 * math.pi, n_t + 1)
    tris = []
    for za, zb in zip(z_edges[:-1], z_edges[1:]):
        for t0, t1 in zip(theta[:-1], theta[1:]):
            p00 = (radius * math.cos(t0), radius * math.sin(t0), za)
            p01 = (radius * math.cos(t1), radius * math.sin(t1), za)
            p10 = (radius * math.cos(t0), radius * math.sin(t0), zb)
            p11 = (radius * math.cos(t1), radius * math.sin(t1), zb)
            tris.append((p00, p10, p11))
            tris.append((p00, p11, p01))
    sign = 1.0 if outward else -1.0

    def radial(c):
        d = c * np.array([1.0, 1.0, 0.0])
        n = np.linalg.norm(d, axis=1, keepdims=True)
        n[n == 0] = 1.0
        return sign * d / n

    return _orient(np.asarray(tris), radial)


def plate(origin, u_vec, v_vec, n_u, n_v, *, u_edges=None, v_edges=None) -> np.ndarray:
    """Flat rectangular plate spanned by u_vec and v_vec from origin.

    Normal follows u x v.  Edge arrays (fractions in [0, 1]) override the
    uniform subdivision for graded plates.
    """
    origin = np.asarray(origin, dtype=float)
    u_vec = np.asarray(u_vec, dtype=float)
    v_vec = np.asarray(v_vec, dtype=float)
    ue = np.linspace(0.0, 1.0, n_u + 1) if u_edges is None else np.asarray(u_edges, dtype=float)
    ve = np.linspace(0.0, 1.0, n_v + 1) if v_edges is None else np.asarray(v_edges, dtype=float)
    tris = []
    for ua, ub in zip(ue[:-1], ue[1:]):
        for va, vb in zip(ve[:-1], ve[1:]):
            p00 = origin + ua * u_vec + va * v_vec
            p01 = origin + ua * u_vec + vb * v_vec
            p10 = origin + ub * u_vec + va * v_vec
            p11 = origin + ub * u_vec + vb * v_vec
            tris.append((p00, p10, p11))
            tris.append((p00, p11, p01))
    return _orient(np.asarray(tris), np.cross(u_vec, v_vec))


def annular_sector(r_in: float, r_out: float, t0: float, t1: float, n_r: int, n_t: int,
                   *, z: float = 0.0, normal=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Sector of an annulus in the plane z=const."""
    radii = np.linspace(r_in, r_out, n_r + 1)
    theta = np.linspace(t0, t1, n_t + 1)
    tris = []
    for r0, r1 in zip(radii[:-1], radii[1:]):
        for a, b in zip(theta[:-1], theta[1:]):
            p00 = (r0 * math.cos(a), r0 * math.sin(a), z)
            p01 = (r0 * math.cos(b), r0 * math.sin(b), z)
            p10 = (r1 * math.cos(a), r1 * math.sin(a), z)
            p11 = (r1 * math.cos(b), r1 * math.sin(b), z)
            tris.append((p00, p10, p11))
            tris.append((p00, p11, p01))
    return _orient(np.asarray(tris), np.asarray(normal, dtype=float))


_ICOSA_T = (1.0 + math.sqrt(5.0)) / 2.0
_ICOSA_VERTS = np.array([
    [-1, _ICOSA_T, 0], [1, _ICOSA_T, 0], [-1, -_ICOSA_T, 0], [1, -_ICOSA_T, 0],
    [0, -1, _ICOSA_T], [0, 1, _ICOSA_T], [0, -1, -_ICOSA_T], [0, 1, -_ICOSA_T],
    [_ICOSA_T, 0, -1], [_ICOSA_T, 0, 1], [-_ICOSA_T, 0, -1], [-_ICOSA_T, 0, 1],
], dtype=float)
_ICOSA_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


def icosphere(radius: float, subdivisions: int, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Icosahedron-based sphere triangulation (20 * 4**subdivisions panels)."""
    center = np.asarray(center, dtype=float)
    verts = _ICOSA_VERTS / np.linalg.norm(_ICOSA_VERTS, axis=1, keepdims=True)
    tri = verts[np.asarray(_ICOSA_FACES)]
    for _ in range(subdivisions):
        a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
        ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
        tri = np.concatenate([
            np.stack([a, ab, ca], axis=1),
            np.stack([ab, b, bc], axis=1),
            np.stack([ca, bc, c], axis=1),
            np.stack([ab, bc, ca], axis=1),
        ])
        tri = tri / np.linalg.norm(tri, axis=2, keepdims=True)
    tri = center + radius * tri

    def radial(cc):
        d = cc - center
        return d

    return _orient(tri, radial)


def sphere_mesh(radius: float, subdivisions: int = 3, center=(0.0, 0.0, 0.0), *,
                electrode: str = "sphere") -> SurfaceMesh:
    """Convenience conductor sphere used by solver oracles."""
    b = MeshBuilder()
    b.add(icosphere(radius, subdivisions, center), role=ROLE_CONDUCTOR,
          body=electrode, electrode=electrode,
          carrier=SphereCarrier(tuple(center), radius))
    b.mark_closed(electrode)
    return b.build()


def geometric_edges(x0: float, x1: float, n: int, ratio: float) -> np.ndarray:
    """n intervals from x0 to x1 with sizes growing by `ratio` overall."""
    if n < 1:
        raise MeshError("need at least one interval")
    if ratio == 1.0:
        return np.linspace(x0, x1, n + 1)
    w = np.geomspace(1.0, ratio, n)
    edges = np.concatenate([[0.0], np.cumsum(w)])
    return x0 + (x1 - x0) * edges / edges[-1]


def center_graded_edges(n_half: int, ratio: float) -> np.ndarray:
    """Fractional edges on [0, 1], finest at the middle, for graded plates."""
    e1 = geometric_edges(0.0, 0.5, n_half, 1.0 / ratio)
    e2 = (1.0 - e1)[::-1]
    return np.unique(np.concatenate([e1, e2]))


# ---------------------------------------------------------------------------
# scenario mesh

def _counts(base: int, resolution: float, minimum: int = 1) -> int:
    return max(minimum, int(round(base * resolution)))


def build_scenario_mesh(scenario: TrapScenario, resolution: float = 1.0) -> SurfaceMesh:
    """Construct the full trap mesh for one scenario.

    `resolution` scales the per-axis panel densities; 1.0 is the default
    desk-scale density (~2k panels).  Values <= 0 raise.
    """
    scenario.validate()
    if resolution <= 0:
        raise MeshError(f"resolution must be > 0, got {resolution}")

    d = scenario.cavity_half_length
    rf = scenario.fiber_radius
    eps = (scenario.eps_r, 1.0)
    zmax = d + scenario.fiber_modeled_length

    n_t = _counts(24, resolution, 8)          # azimuthal, all fiber surfaces
    n_r_tip = _counts(4, resolution, 2)       # radial rings on tip surfaces
    n_z_side = _counts(12, resolution, 4)     # axial rings on the long side

    b = MeshBuilder()
    fiber_axis = PolarCarrier((0.0, 0.0, 0.0), (0.0, 0.0, 1.0))
    side_r = scenario.shield_outer_radius()

    def add_side(role, electrode=None, z_start=d, z_end=zmax, n=None, first=None):
        """Lateral surface of the fiber assembly, graded toward the tip."""
        n = n or n_z_side
        length = z_end - z_start
        first = first or min(length / n, rf / 2)
        ratio = _grading_ratio(length, n, first)
        edges = geometric_edges(z_start, z_end, n, ratio)
        b.add(cylinder(side_r, z_start, z_end, n, n_t, z_edges=edges),
              role=role, body="fiber", electrode=electrode, eps=eps, carrier=fiber_axis)

    def add_disc(radius, n_r, *, z, inner=0.0, normal, role, electrode=None, grading=1.0):
        b.add(disc(radius, n_r, n_t, z=z, inner_radius=inner, normal=normal,
                   radial_grading=grading),
              role=role, body="fiber", electrode=electrode, eps=eps, carrier=fiber_axis)

    if scenario.shielding is Shielding.UNSHIELDED:
        add_disc(rf, n_r_tip, z=d, normal=(0, 0, -1), role=ROLE_SOURCE)
        tip_len = min(scenario.exposed_tip_length, scenario.fiber_modeled_length)
        n_tipside = _counts(6, resolution, 2)
        b.add(cylinder(rf, d, d + tip_len, n_tipside, n_t),
              role=ROLE_SOURCE, body="fiber", eps=eps, carrier=fiber_axis)
        if zmax > d + tip_len:
            add_side(ROLE_DIELECTRIC, z_start=d + tip_len)
        add_disc(rf, max(2, n_r_tip - 1), z=zmax, normal=(0, 0, 1), role=ROLE_DIELECTRIC)
    elif scenario.shielding is Shielding.METAL_TUBE:
        r_in = 0.5 * scenario.tube_inner_diameter
        r_out = 0.5 * scenario.tube_outer_diameter
        p = scenario.tube_protrusion
        mouth = d + p
        add_disc(rf, n_r_tip, z=d, normal=(0, 0, -1), role=ROLE_SOURCE)
        if p > 0:
            # protruding tip: side wetted by adhesive, insulating, no charging
            n_p = _counts(4, resolution, 2)
            b.add(cylinder(rf, d, mouth, n_p, n_t), role=ROLE_DIELECTRIC,
                  body="fiber", eps=eps, carrier=fiber_axis)
        # tube mouth: adhesive fills the fiber-tube gap, then the tube wall
        add_disc(r_in, 2, z=mouth, inner=rf, normal=(0, 0, -1), role=ROLE_DIELECTRIC)
        add_disc(r_out, 2, z=mouth, inner=r_in, normal=(0, 0, -1),
                 role=ROLE_CONDUCTOR, electrode="shield")
        add_side(ROLE_CONDUCTOR, electrode="shield", z_start=mouth)
        add_disc(r_out, max(2, n_r_tip - 1), z=zmax, normal=(0, 0, 1),
                 role=ROLE_CONDUCTOR, electrode="shield")
    else:  # GOLD_MASK
        r_exp = scenario.exposed_radius
        t_shield = scenario.shield_thickness
        r_out = rf + t_shield
        # the exposed mirror sits recessed at the bottom of a hole through
        # the gold layer; the hole wall is grounded metal
        add_disc(r_exp, n_r_tip, z=d, normal=(0, 0, -1), role=ROLE_SOURCE)
        b.add(cylinder(r_exp, d - t_shield, d, 1, n_t, outward=False),
              role=ROLE_CONDUCTOR, body="fiber", electrode="shield", carrier=fiber_axis)
        add_disc(r_out, _counts(4, resolution, 2), z=d - t_shield, inner=r_exp,
                 normal=(0, 0, -1), role=ROLE_CONDUCTOR, electrode="shield")
        add_side(ROLE_CONDUCTOR, electrode="shield", z_start=d - t_shield)
        add_disc(r_out, max(2, n_r_tip - 1), z=zmax, normal=(0, 0, 1),
                 role=ROLE_CONDUCTOR, electrode="shield")
    b.mark_closed("fiber")

    _add_blades(b, scenario, resolution)
    _add_endcaps(b, scenario, resolution)
    return b.build()


def _grading_ratio(length: float, n: int, first: float) -> float:
    """Overall last/first interval ratio so the first interval ~= `first`."""
    if first * n >= length:
        return 1.0
    # geometric sum first*(q**n - 1)/(q - 1) = length; solve crudely for q,
    # then convert to last/first ratio q**(n-1).
    lo, hi = 1.0 + 1e-9, 10.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        total = first * (mid ** n - 1.0) / (mid - 1.0)
        if total < length:
            lo = mid
        else:
            hi = mid
    return lo ** (n - 1)


def _add_blades(b: MeshBuilder, scenario: TrapScenario, resolution: float) -> None:
    """Four blade electrodes as thin radial fins along the diagonals.

    Opposite fins form an RF pair; the blade edge faces the axis at
    `blade_tip_radius`.
    """
    names = ["blade_a1", "blade_b1", "blade_a2", "blade_b2"]
    angles = [math.pi / 4 + k * math.pi / 2 for k in range(4)]
    n_rad = _counts(5, resolution, 2)
    n_ax = _counts(10, resolution, 3)
    r0 = scenario.blade_tip_radius
    depth = scenario.blade_depth
    w = scenario.blade_width
    # grade radially: fine at the edge facing the axis
    u_edges = geometric_edges(0.0, 1.0, n_rad, 4.0)
    for name, ang in zip(names, angles):
        radial = np.array([math.cos(ang), math.sin(ang), 0.0])
        origin = r0 * radial + np.array([0.0, 0.0, -w / 2])
        tris = plate(origin, depth * radial, (0, 0, w), n_rad, n_ax, u_edges=u_edges)
        b.add(tris, role=ROLE_CONDUCTOR, body=name, electrode=name)


def _add_endcaps(b: MeshBuilder, scenario: TrapScenario, resolution: float) -> None:
    """Eight endcap electrodes: two rings of four annular sectors at +-z."""
    n_r = _counts(3, resolution, 1)
    n_arc = _counts(4, resolution, 2)
    r_in = scenario.endcap_inner_radius
    r_out = scenario.endcap_outer_radius
    idx = 1
    for z, nrm in ((-scenario.endcap_z, (0, 0, 1)), (scenario.endcap_z, (0, 0, -1))):
        for k in range(4):
            t0 = -math.pi / 4 + k * math.pi / 2
            name = f"endcap_{idx}"
            tris = annular_sector(r_in, r_out, t0 + 0.05, t0 + math.pi / 2 - 0.05,
                                  n_r, n_arc, z=z, normal=nrm)
            b.add(tris, role=ROLE_CONDUCTOR, body=name, electrode=name)
            idx += 1


# ---------------------------------------------------------------------------
# refinement

def refine_mesh(mesh: SurfaceMesh, factor: int) -> SurfaceMesh:
    """Subdivide panels so the count grows by ~factor.

    Each round splits every triangle at its edge midpoints (4 children),
    running ceil(log4 factor) rounds, so the count multiplies by the next
    power of four >= factor.  Midpoints of shared edges project to the same
    carrier point on both sides, which keeps closed bodies watertight; on
    curved carriers the projected midpoints pull the panel areas toward the
    closed-form surface area.  factor=1 returns the mesh unchanged.
    """
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ConfigError(f"refinement factor must be an integer >= 1, got {factor}")
    if factor == 1:
        return mesh
    rounds = math.ceil(math.log(factor, 4))
    tri = mesh.tri
    role, body, electrode = mesh.role, mesh.body, mesh.electrode
    eps_in, eps_out, carrier = mesh.eps_in, mesh.eps_out, mesh.carrier_index

    def midpoints(p, q, carrier_idx):
        m = 0.5 * (p + q)
        for ci in np.unique(carrier_idx):
            if ci < 0:
                continue
            sel = carrier_idx == ci
            m[sel] = mesh.carriers[ci].midpoint(p[sel], q[sel])
        return m

    for _ in range(rounds):
        a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
        mab = midpoints(a, b, carrier)
        mbc = midpoints(b, c, carrier)
        mca = midpoints(c, a, carrier)
        tri = np.concatenate([
            np.stack([a, mab, mca], axis=1),
            np.stack([mab, b, mbc], axis=1),
            np.stack([mca, mbc, c], axis=1),
            np.stack([mab, mbc, mca], axis=1),
        ])
        role = np.tile(role, 4)
        body = np.tile(body, 4)
        electrode = np.tile(electrode, 4)
        eps_in = np.tile(eps_in, 4)
        eps_out = np.tile(eps_out, 4)
        carrier = np.tile(carrier, 4)
    return SurfaceMesh(tri, role, body, mesh.body_names, electrode,
                       mesh.electrode_names, eps_in, eps_out, carrier,
                       mesh.carriers, mesh.closed_bodies)
