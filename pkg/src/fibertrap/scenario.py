"""Trap scenario description and scenario-file handling.

A scenario bundles the shielding variant, every geometric dimension of the
blade trap / fiber assembly, and the drive parameters.  Scenario files are
YAML; lengths may be plain numbers (meters) or strings with a unit suffix
("125 um", "2.2 mm").  The parser normalizes everything to SI.

Blade-trap dimensions beyond the blade width are not pinned down by the
source apparatus; the defaults below are documented assumptions, chosen so
the default scenario confines a 138Ba+ ion and reproduces the qualitative
shielding behavior.  Every dimension can be overridden in the file.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field, fields, replace

import yaml

from .constants import (
    EPS_R_SILICA,
    MASS_BA138,
    SIGMA_SILICA,
    TAN_DELTA_SILICA,
)
from .errors import ConfigError


class Shielding(enum.Enum):
    UNSHIELDED = "unshielded"
    METAL_TUBE = "metal_tube"
    GOLD_MASK = "gold_mask"


_LENGTH_UNITS = {
    "m": 1.0,
    "cm": 1e-2,
    "mm": 1e-3,
    "um": 1e-6,
    "nm": 1e-9,
}

# Fields parsed with unit suffix support.
_LENGTH_FIELDS = {
    "fiber_diameter",
    "fiber_length",
    "fiber_modeled_length",
    "tube_inner_diameter",
    "tube_outer_diameter",
    "tube_protrusion",
    "shield_thickness",
    "exposed_radius",
    "cavity_half_length",
    "blade_width",
    "blade_tip_radius",
    "blade_depth",
    "endcap_z",
    "endcap_inner_radius",
    "endcap_outer_radius",
    "exposed_tip_length",
    "contact_distance",
}


def parse_length(value) -> float:
    """Parse a length that is either a number (meters) or '<num> <unit>'."""
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        parts = value.split()
        try:
            if len(parts) == 1:
                return float(parts[0])
            if len(parts) == 2 and parts[1] in _LENGTH_UNITS:
                return float(parts[0]) * _LENGTH_UNITS[parts[1]]
        except ValueError:
            pass
    raise ConfigError(f"cannot parse length value {value!r}")


@dataclass(frozen=True)
class TrapScenario:
    """One shielding configuration plus drive parameters."""

    shielding: Shielding

    # Fiber body.
    fiber_diameter: float = 125e-6
    fiber_length: float = 60e-3
    # The mesh truncates the 60 mm fiber to this length; fields decay well
    # inside it.  The conduction model always uses the full fiber_length.
    fiber_modeled_length: float = 2.5e-3

    # Shielding variant parameters (None unless the variant uses them).
    tube_inner_diameter: float | None = None
    tube_outer_diameter: float | None = None
    tube_protrusion: float | None = None   # fiber tip past the tube mouth
    shield_thickness: float | None = None
    exposed_radius: float | None = None

    # Cavity geometry: ion-mirror distance d; cavity length L = 2 d.
    cavity_half_length: float = 250e-6

    # Blade trap geometry (assumed defaults, see module docstring).
    blade_width: float = 2.2e-3          # blade extent along the fiber axis
    blade_tip_radius: float = 500e-6     # blade edge to trap axis
    blade_depth: float = 1.0e-3          # radial extent of each blade
    endcap_z: float = 2.5e-3             # axial position of the endcap rings
    endcap_inner_radius: float = 300e-6
    endcap_outer_radius: float = 900e-6

    # Drive parameters.
    V0: float = 30.0
    Omega_RF: float = 2 * math.pi * 20e6
    V_endcap: float = 100.0
    V_shield: float = 0.0                # shield is a DC electrode, never RF

    # Surface charging / conduction.
    surface_current_density: float = 1e-12   # A / m^2
    exposed_tip_length: float = 200e-6       # side exposure, unshielded case
    sigma_fiber: float = SIGMA_SILICA        # S/m
    contact_distance: float = 200e-6         # tube variant: tip to ground

    # Ion and material parameters.
    ion_mass: float = MASS_BA138
    temperature: float = 295.0
    eps_r: float = EPS_R_SILICA
    tan_delta: float = TAN_DELTA_SILICA
    # Secular frequency along the cavity axis used by heating estimates.
    axial_phonon_frequency: float = 2 * math.pi * 2.85e6

    def __post_init__(self):
        self.validate()

    # -- derived quantities ------------------------------------------------

    @property
    def cavity_length(self) -> float:
        return 2.0 * self.cavity_half_length

    @property
    def fiber_radius(self) -> float:
        return 0.5 * self.fiber_diameter

    def shield_outer_radius(self) -> float:
        """Outer radius of the fiber assembly (fiber, tube or mask)."""
        if self.shielding is Shielding.METAL_TUBE:
            return 0.5 * self.tube_outer_diameter
        if self.shielding is Shielding.GOLD_MASK:
            return self.fiber_radius + self.shield_thickness
        return self.fiber_radius

    def electrode_names(self) -> list[str]:
        names = ["blade_a1", "blade_a2", "blade_b1", "blade_b2"]
        names += [f"endcap_{i}" for i in range(1, 9)]
        if self.shielding is not Shielding.UNSHIELDED:
            names.append("shield")
        return names

    # -- validation ---------------------------------------------------------

    def validate(self) -> None:
        positive = [
            ("fiber_diameter", self.fiber_diameter),
            ("fiber_length", self.fiber_length),
            ("fiber_modeled_length", self.fiber_modeled_length),
            ("cavity_half_length", self.cavity_half_length),
            ("blade_width", self.blade_width),
            ("blade_tip_radius", self.blade_tip_radius),
            ("blade_depth", self.blade_depth),
            ("endcap_z", self.endcap_z),
            ("endcap_inner_radius", self.endcap_inner_radius),
            ("endcap_outer_radius", self.endcap_outer_radius),
            ("exposed_tip_length", self.exposed_tip_length),
            ("ion_mass", self.ion_mass),
            ("temperature", self.temperature),
            ("Omega_RF", self.Omega_RF),
        ]
        for name, value in positive:
            if not value > 0:
                raise ConfigError(f"{name} must be > 0, got {value}")
        if self.eps_r < 1:
            raise ConfigError("eps_r must be >= 1")
        if self.surface_current_density < 0:
            raise ConfigError("surface_current_density must be >= 0")

        tube_fields = (self.tube_inner_diameter, self.tube_outer_diameter,
                       self.tube_protrusion)
        mask_fields = (self.shield_thickness, self.exposed_radius)
        if self.shielding is Shielding.METAL_TUBE:
            if any(v is None for v in tube_fields):
                raise ConfigError("metal_tube scenario requires tube diameters and protrusion")
            if any(v is not None for v in mask_fields):
                raise ConfigError("metal_tube scenario must not set mask fields")
            if not self.tube_inner_diameter > self.fiber_diameter:
                raise ConfigError("tube_inner_diameter must exceed fiber_diameter")
            if not self.tube_outer_diameter > self.tube_inner_diameter:
                raise ConfigError("tube_outer_diameter must exceed tube_inner_diameter")
            if self.tube_protrusion < 0:
                raise ConfigError("tube_protrusion must be >= 0")
            if not self.contact_distance > 0:
                raise ConfigError("contact_distance must be > 0")
        elif self.shielding is Shielding.GOLD_MASK:
            if any(v is None for v in mask_fields):
                raise ConfigError("gold_mask scenario requires shield_thickness and exposed_radius")
            if any(v is not None for v in tube_fields):
                raise ConfigError("gold_mask scenario must not set tube fields")
            if not 0 < self.exposed_radius <= 0.5 * self.fiber_diameter:
                raise ConfigError("exposed_radius must be in (0, fiber_diameter/2]")
            if not self.shield_thickness > 0:
                raise ConfigError("shield_thickness must be > 0")
        else:
            if any(v is not None for v in tube_fields + mask_fields):
                raise ConfigError("unshielded scenario must not set tube or mask fields")

    # -- constructors for the three variants ---------------------------------

    @classmethod
    def unshielded(cls, **kwargs) -> "TrapScenario":
        return cls(shielding=Shielding.UNSHIELDED, **kwargs)

    @classmethod
    def metal_tube(cls, **kwargs) -> "TrapScenario":
        kwargs.setdefault("tube_inner_diameter", 150e-6)
        kwargs.setdefault("tube_outer_diameter", 190e-6)
        kwargs.setdefault("tube_protrusion", 15e-6)
        return cls(shielding=Shielding.METAL_TUBE, **kwargs)

    @classmethod
    def gold_mask(cls, **kwargs) -> "TrapScenario":
        kwargs.setdefault("shield_thickness", 10e-6)
        kwargs.setdefault("exposed_radius", 30e-6)
        return cls(shielding=Shielding.GOLD_MASK, **kwargs)

    def with_(self, **kwargs) -> "TrapScenario":
        """Copy with replacements (frozen dataclass helper)."""
        return replace(self, **kwargs)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Shielding):
                value = value.value
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrapScenario":
        if "shielding" not in data:
            raise ConfigError("scenario is missing the 'shielding' key")
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            if key not in known:
                raise ConfigError(f"unknown scenario key {key!r}")
            if key == "shielding":
                try:
                    value = Shielding(value)
                except ValueError:
                    raise ConfigError(f"unknown shielding variant {value!r}") from None
            elif value is not None and key in _LENGTH_FIELDS:
                value = parse_length(value)
            elif value is not None:
                value = float(value)
            kwargs[key] = value
        return cls(**kwargs)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def from_yaml(cls, text: str) -> "TrapScenario":
        data = yaml.safe_load(text)
        if not isinstance(data, dict):
            raise ConfigError("scenario file must contain a mapping")
        return cls.from_dict(data)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_yaml())

    @classmethod
    def load(cls, path) -> "TrapScenario":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return cls.from_yaml(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read scenario file {path}: {exc}") from exc

    def hash(self) -> str:
        """Stable content hash used for caching and output provenance."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]
