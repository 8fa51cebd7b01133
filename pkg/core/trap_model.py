"""
Trap Model
Physical constants, trap geometry and the derived single-particle quantities:
oscillator lengths, Lamb-Dicke parameters, Zeeman splitting and spin-motion coupling.

All functions are pure; the config records are frozen and validated on construction.
Angular frequencies are in rad/s, fields in gauss, lengths in metres.
"""
import math
from dataclasses import dataclass
from typing import Tuple, Union

from scipy import constants

from .errors import IndexAboveTrapDepth, LambDickeViolation

HBAR = constants.hbar
H_PLANCK = constants.h
MU_B = constants.physical_constants['Bohr magneton'][0]  # J/T
GAUSS = 1e-4  # T

# Cs D2 defaults, cycling transition 6S1/2 F=4 -> 6P3/2 F'=5
CS_MASS = 132.905451933 * constants.atomic_mass
CS_D2_WAVELENGTH = 852.3e-9
CS_D2_LINEWIDTH = 2 * math.pi * 5.22e6
CS_D2_ISAT_MW_CM2 = 1.105
CS_LANDE_G_F4 = 0.25

AXES = ('x', 'y', 'z')
Axis = Union[int, str]


def axis_index(axis: Axis) -> int:
    """Accept 0/1/2 or 'x'/'y'/'z'."""
    if isinstance(axis, str):
        if axis not in AXES:
            raise ValueError(f"Unknown axis '{axis}', expected one of {AXES}")
        return AXES.index(axis)
    if axis not in (0, 1, 2):
        raise ValueError(f"Axis index must be 0, 1 or 2, got {axis}")
    return int(axis)


def _triple(values, name: str) -> tuple:
    values = tuple(values)
    if len(values) != 3:
        raise ValueError(f"{name} needs one value per axis (x, y, z), got {len(values)}")
    return values


@dataclass(frozen=True)
class TrapConfig:
    omega: Tuple[float, float, float]
    anharmonicity: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    mass: float = CS_MASS
    wavelength_raman: float = CS_D2_WAVELENGTH
    trap_depth_quanta: Tuple[int, int, int] = (25, 25, 25)
    # geometric projection of the Raman wavevector on each axis; 1 is the conservative bound
    lamb_dicke_projection: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, 'omega', tuple(float(w) for w in _triple(self.omega, 'omega')))
        object.__setattr__(self, 'anharmonicity',
                           tuple(float(a) for a in _triple(self.anharmonicity, 'anharmonicity')))
        object.__setattr__(self, 'trap_depth_quanta',
                           tuple(int(d) for d in _triple(self.trap_depth_quanta, 'trap_depth_quanta')))
        object.__setattr__(self, 'lamb_dicke_projection',
                           tuple(float(p) for p in _triple(self.lamb_dicke_projection, 'lamb_dicke_projection')))

        if any(not w > 0 for w in self.omega):
            raise ValueError(f"Trap frequencies must be positive, got {self.omega}")
        if any(not 0 <= a < 0.1 for a in self.anharmonicity):
            raise ValueError(f"Anharmonicities must lie in [0, 0.1), got {self.anharmonicity}")
        if any(d < 1 for d in self.trap_depth_quanta):
            raise ValueError(f"Trap depth must be at least one quantum, got {self.trap_depth_quanta}")
        if not self.mass > 0 or not self.wavelength_raman > 0:
            raise ValueError("Mass and Raman wavelength must be positive")

        for i in range(3):
            eta = lamb_dicke(self, i)
            if eta >= 0.5:
                raise LambDickeViolation(
                    f"Lamb-Dicke parameter along {AXES[i]} is {eta:.3f} (>= 0.5)")


@dataclass(frozen=True)
class FieldConfig:
    b_off: float = 0.0            # gauss, along y
    b_gradient: float = 1.6e6     # gauss per metre (1.6 G/um measured), B_fict along x, linear in y
    lande_g: float = CS_LANDE_G_F4
    f_total: int = 4

    def __post_init__(self):
        if self.b_off < 0:
            raise ValueError(f"Offset field must be non-negative, got {self.b_off}")
        if int(self.f_total) != self.f_total or self.f_total < 1:
            raise ValueError(f"Total spin F must be an integer >= 1, got {self.f_total}")
        if not math.isfinite(self.lande_g) or self.lande_g == 0:
            raise ValueError(f"Lande factor must be finite and nonzero, got {self.lande_g}")


@dataclass(frozen=True)
class LaserConfig:
    detuning: float = -12.0                   # units of the natural linewidth
    intensity: float = 4.1                    # I / I_sat
    linewidth_natural: float = CS_D2_LINEWIDTH
    ac_stark_shift_per_mf: float = 0.0        # rad/s per unit m_F

    def __post_init__(self):
        if self.intensity < 0:
            raise ValueError(f"Intensity must be non-negative, got {self.intensity}")
        if not self.linewidth_natural > 0:
            raise ValueError("Natural linewidth must be positive")


def oscillator_length(trap: TrapConfig, axis: Axis) -> float:
    i = axis_index(axis)
    return math.sqrt(HBAR / (2.0 * trap.mass * trap.omega[i]))


def lamb_dicke(trap: TrapConfig, axis: Axis) -> float:
    """eta = k * x0, with the full Raman wavevector unless a projection factor is configured."""
    i = axis_index(axis)
    k = 2.0 * math.pi / trap.wavelength_raman
    return k * trap.lamb_dicke_projection[i] * oscillator_length(trap, i)


def zeeman_splitting(field: FieldConfig) -> float:
    """Splitting between adjacent Zeeman substates, rad/s."""
    return field.lande_g * MU_B * field.b_off * GAUSS / HBAR


def spin_motion_coupling(trap: TrapConfig, field: FieldConfig, axis: Axis = 'y') -> float:
    """
    Omega such that g_F mu_B b y F_x equals hbar Omega (a + a^dag)(F+ + F-),
    using y = y0 (a + a^dag) and F_x = (F+ + F-)/2.
    """
    y0 = oscillator_length(trap, axis)
    return field.lande_g * MU_B * field.b_gradient * GAUSS * y0 / (2.0 * HBAR)


def resonant_field(trap: TrapConfig, field: FieldConfig, axis: Axis) -> float:
    """Offset field (gauss) at which the Zeeman splitting equals omega_axis."""
    i = axis_index(axis)
    return HBAR * trap.omega[i] / (field.lande_g * MU_B) / GAUSS


def anharmonic_level_energy(trap: TrapConfig, axis: Axis, n: int) -> float:
    """E_n = hbar omega (n + 1/2)(1 - alpha n / 2), in joules."""
    i = axis_index(axis)
    if n < 0:
        raise ValueError(f"Level index must be non-negative, got {n}")
    if n > trap.trap_depth_quanta[i]:
        raise IndexAboveTrapDepth(
            f"Level {n} lies above the trap depth ({trap.trap_depth_quanta[i]}) along {AXES[i]}")
    alpha = trap.anharmonicity[i]
    return HBAR * trap.omega[i] * (n + 0.5) * (1.0 - alpha * n / 2.0)


def transition_frequency(trap: TrapConfig, axis: Axis, n_initial: int, n_final: int) -> float:
    """f_{n,n'} = (E_n' - E_n) / h in Hz; negative for n -> n-1."""
    return (anharmonic_level_energy(trap, axis, n_final)
            - anharmonic_level_energy(trap, axis, n_initial)) / H_PLANCK


def scattering_rate(laser: LaserConfig) -> float:
    """Photon scattering rate R = (Gamma/2) s / (1 + s + (2 Delta / Gamma)^2), 1/s."""
    s = laser.intensity
    return 0.5 * laser.linewidth_natural * s / (1.0 + s + (2.0 * laser.detuning) ** 2)


def kilohertz(omega: float) -> float:
    return omega / (2.0 * math.pi) / 1e3


def default_trap(**overrides) -> TrapConfig:
    """Trap with the ab initio frequencies {136, 83, 215} kHz."""
    params = dict(omega=tuple(2 * math.pi * f * 1e3 for f in (136.0, 83.0, 215.0)))
    params.update(overrides)
    return TrapConfig(**params)
