"""Conversions between laboratory parameters and the dimensionless model.

The dimensionless modulated pendulum is H = p^2/2 - gamma (1 + eps cos t) cos x
with effective Planck constant hbar_eff.  All SI quantities live at this
boundary; every other module works with dimensionless numbers only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import ParameterDomainError

# CODATA values, SI
H_PLANCK = 6.62607015e-34   # J s
HBAR = H_PLANCK / (2.0 * math.pi)

# Empirical lattice-depth calibration for the Rb-87 / 1064 nm setup:
# s = 1.03e6 * P[W] / (w0[um])^2
DEPTH_COEFF = 1.03e6


@dataclass(frozen=True)
class PhysicalSetup:
    """Laboratory-side description of the lattice and the atomic cloud."""

    atom_mass: float                       # kg
    lattice_spacing: float                 # m
    modulation_angular_frequency: float    # rad/s
    lattice_depth: float                   # J
    laser_power: float                     # W
    beam_waist: float                      # m
    velocity_width: float                  # m/s

    def __post_init__(self):
        for name in ("atom_mass", "lattice_spacing", "modulation_angular_frequency",
                     "lattice_depth", "laser_power", "beam_waist", "velocity_width"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ParameterDomainError(f"{name} must be finite and >= 0, got {v}")
        for name in ("atom_mass", "lattice_spacing", "modulation_angular_frequency",
                     "beam_waist"):
            if getattr(self, name) == 0:
                raise ParameterDomainError(f"{name} must be strictly positive")

    @property
    def lattice_velocity(self) -> float:
        """v_L = h / (M d)."""
        return H_PLANCK / (self.atom_mass * self.lattice_spacing)

    @property
    def lattice_energy(self) -> float:
        """E_L = M v_L^2 / 2."""
        return 0.5 * self.atom_mass * self.lattice_velocity ** 2

    @property
    def dimensionless_depth(self) -> float:
        """s = U0 / E_L."""
        return self.lattice_depth / self.lattice_energy


def reduce_beta(beta: float) -> float:
    """Fold a quasimomentum into the first Brillouin zone [-1/2, 1/2)."""
    b = (beta + 0.5) % 1.0 - 0.5
    # the % above can return exactly 0.5 - eps rounding artifacts; clamp edge
    if b >= 0.5:
        b -= 1.0
    return b


@dataclass(frozen=True)
class ModelParams:
    """Dimensionless system point driving every computation."""

    gamma: float
    epsilon: float
    hbar_eff: float
    beta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            raise ParameterDomainError(f"gamma must be >= 0, got {self.gamma}")
        if not (0.0 <= self.epsilon <= 1.0):
            raise ParameterDomainError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if not (math.isfinite(self.hbar_eff) and self.hbar_eff > 0):
            raise ParameterDomainError(f"hbar_eff must be > 0, got {self.hbar_eff}")
        object.__setattr__(self, "beta", reduce_beta(self.beta))

    def with_beta(self, beta: float) -> "ModelParams":
        return ModelParams(self.gamma, self.epsilon, self.hbar_eff, beta)

    def with_hbar(self, hbar_eff: float) -> "ModelParams":
        return ModelParams(self.gamma, self.epsilon, hbar_eff, self.beta)

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "epsilon": self.epsilon,
                "hbar_eff": self.hbar_eff, "beta": self.beta}


@dataclass(frozen=True)
class LoadingEstimate:
    """Widths of the state loaded in one deep lattice well."""

    ground_width_ratio: float      # a0 / d
    trap_frequency: float          # omega_h, rad/s (nan if no setup given)
    quasimomentum_width: float     # Delta beta (nan if no setup given)


def derive_dimensionless(setup: PhysicalSetup) -> ModelParams:
    """Map a physical setup to (gamma, epsilon=0 placeholder excluded) model params.

    hbar_eff = 4 pi^2 hbar / (M omega d^2) and
    gamma = (E_L / hbar omega)^2 * (U0 / E_L).  beta defaults to 0; the
    modulation amplitude epsilon is a free drive setting, returned as 0.
    """
    m, d, w = setup.atom_mass, setup.lattice_spacing, setup.modulation_angular_frequency
    hbar_eff = 4.0 * math.pi ** 2 * HBAR / (m * w * d ** 2)
    el = setup.lattice_energy
    gamma = (el / (HBAR * w)) ** 2 * (setup.lattice_depth / el)
    if not (math.isfinite(hbar_eff) and math.isfinite(gamma)):
        raise ParameterDomainError("derived parameters are not finite")
    return ModelParams(gamma=gamma, epsilon=0.0, hbar_eff=hbar_eff, beta=0.0)


def omega_for_hbar_eff(atom_mass: float, lattice_spacing: float,
                       hbar_eff: float) -> float:
    """Inverse solve: modulation angular frequency giving a target hbar_eff."""
    if hbar_eff <= 0 or atom_mass <= 0 or lattice_spacing <= 0:
        raise ParameterDomainError("all arguments must be strictly positive")
    return 4.0 * math.pi ** 2 * HBAR / (atom_mass * hbar_eff * lattice_spacing ** 2)


def lattice_depth_from_laser(power: float, waist: float) -> float:
    """Dimensionless lattice depth s from laser power [W] and waist [m]."""
    if power < 0:
        raise ParameterDomainError(f"power must be >= 0, got {power}")
    if waist <= 0:
        raise ParameterDomainError(f"waist must be > 0, got {waist}")
    waist_um = waist * 1e6
    return DEPTH_COEFF * power / waist_um ** 2


def quasimomentum_width(setup: PhysicalSetup) -> float:
    """Delta beta = M d Delta v / h for the atomic cloud."""
    return setup.atom_mass * setup.lattice_spacing * setup.velocity_width / H_PLANCK


def harmonic_loading_estimate(s: float, setup: PhysicalSetup | None = None) -> LoadingEstimate:
    """Harmonic-well widths for a cloud loaded in a deep lattice of depth s.

    a0/d = s^(-1/4) / sqrt(2 pi^2).  The trap frequency and quasimomentum
    width need the physical setup; they come back as nan when absent.
    """
    if s <= 0:
        raise ParameterDomainError(f"s must be > 0, got {s}")
    ratio = s ** -0.25 / math.sqrt(2.0 * math.pi ** 2)
    if setup is None:
        return LoadingEstimate(ratio, float("nan"), float("nan"))
    u0 = s * setup.lattice_energy
    omega_h = math.sqrt(2.0 * math.pi ** 2 * u0
                        / (setup.atom_mass * setup.lattice_spacing ** 2))
    return LoadingEstimate(ratio, omega_h, quasimomentum_width(setup))


# --- JSON boundary -----------------------------------------------------------

_SETUP_KEYS = ("mass_kg", "lattice_spacing_m", "omega_rad_s", "power_w",
               "waist_m", "velocity_width_m_s")


def setup_from_descriptor(desc: dict) -> PhysicalSetup:
    """Build a PhysicalSetup from the JSON setup descriptor.

    The lattice depth is derived from the laser power and waist through the
    calibration (s -> U0 = s E_L).
    """
    missing = [k for k in _SETUP_KEYS if k not in desc]
    if missing:
        raise ParameterDomainError(f"setup descriptor missing keys: {missing}")
    tmp = PhysicalSetup(
        atom_mass=float(desc["mass_kg"]),
        lattice_spacing=float(desc["lattice_spacing_m"]),
        modulation_angular_frequency=float(desc["omega_rad_s"]),
        lattice_depth=1.0,  # placeholder, replaced below
        laser_power=float(desc["power_w"]),
        beam_waist=float(desc["waist_m"]),
        velocity_width=float(desc["velocity_width_m_s"]),
    )
    s = lattice_depth_from_laser(tmp.laser_power, tmp.beam_waist)
    return PhysicalSetup(
        atom_mass=tmp.atom_mass,
        lattice_spacing=tmp.lattice_spacing,
        modulation_angular_frequency=tmp.modulation_angular_frequency,
        lattice_depth=s * tmp.lattice_energy,
        laser_power=tmp.laser_power,
        beam_waist=tmp.beam_waist,
        velocity_width=tmp.velocity_width,
    )


def load_setup(path) -> PhysicalSetup:
    with open(path) as fh:
        return setup_from_descriptor(json.load(fh))


def model_params_to_json(params: ModelParams) -> str:
    return json.dumps(params.to_dict(), sort_keys=True)


def model_params_from_json(text: str) -> ModelParams:
    d = json.loads(text)
    return ModelParams(gamma=d["gamma"], epsilon=d["epsilon"],
                       hbar_eff=d["hbar_eff"], beta=d.get("beta", 0.0))
