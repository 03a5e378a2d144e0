"""Physical constants used across the package (SI units)."""

import scipy.constants as _sc

E_CHARGE = _sc.e                  # elementary charge, C
EPS0 = _sc.epsilon_0              # vacuum permittivity, F/m
MU0 = _sc.mu_0                    # vacuum permeability, H/m
K_BOLTZMANN = _sc.k               # Boltzmann constant, J/K
HBAR = _sc.hbar                   # reduced Planck constant, J s
ATOMIC_MASS = _sc.atomic_mass     # unified atomic mass unit, kg

# 138Ba+ ion mass; the missing electron is ~4e-6 relative, ignored.
MASS_BA138 = 137.905247 * ATOMIC_MASS

COULOMB = 1.0 / (4.0 * _sc.pi * EPS0)

# Gold resistivity at room temperature, ohm m.
RESISTIVITY_GOLD = 2.44e-8

# Fused silica defaults.  The permittivity and loss tangent are bulk
# room-temperature values; the conductivity sits at the top of the commonly
# quoted 1e-18..1e-14 S/m range (see scenario notes).
EPS_R_SILICA = 3.8
TAN_DELTA_SILICA = 1e-4
SIGMA_SILICA = 1e-14

SECONDS_PER_WEEK = 7 * 24 * 3600.0
