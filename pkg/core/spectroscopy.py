"""
Spectroscopy
Forward model of the heterodyne fluorescence spectrum and sideband-asymmetry thermometry.

Sign convention: red sidebands (n -> n-1, S-) sit at negative frequency relative to the carrier,
blue sidebands (n -> n+1, S+) at positive frequency.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from .errors import GridTooCoarse, LambDickeViolation, NonPhysicalSidebands
from .trap_model import AXES, TrapConfig, lamb_dicke, transition_frequency

logger = logging.getLogger(__name__)

THERMAL_TOL = 1e-9
SAMPLES_PER_WIDTH = 5
BAND_LINEWIDTHS = 5.0
BAND_GAP_FRACTION = 0.45         # of the distance to the nearest other line
CARRIER = 'carrier'


@dataclass(frozen=True)
class SidebandComponent:
    axis: str                    # 'x', 'y', 'z' or 'carrier'
    n_initial: int
    n_final: int
    center_frequency: float      # Hz, relative to the carrier
    rate: float                  # Gamma_{n -> n'}, 1/s
    population: float            # thermal P(n_initial); 1 for the carrier
    width: float                 # FWHM, Hz

    def __post_init__(self):
        if abs(self.n_final - self.n_initial) > 1:
            raise ValueError(f"Component {self.n_initial}->{self.n_final} is beyond first Lamb-Dicke order")
        if self.rate < 0 or self.width <= 0:
            raise ValueError("Component rate must be non-negative and width positive")

    @property
    def weight(self) -> float:
        return self.population * self.rate


@dataclass
class Spectrum:
    frequencies: np.ndarray      # Hz, relative to the carrier, uniform
    psd: np.ndarray
    resolution_bandwidth: float = 0.0
    averages: int = 1
    metadata: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        self.psd = np.asarray(self.psd, dtype=float)
        if self.frequencies.shape != self.psd.shape or self.frequencies.ndim != 1:
            raise ValueError("Spectrum frequencies and psd must be 1D arrays of equal length")
        check_uniform_grid(self.frequencies)
        if np.any(self.psd < 0):
            raise ValueError("Spectrum psd must be non-negative")

    @property
    def spacing(self) -> float:
        return float(self.frequencies[1] - self.frequencies[0])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'freq_hz': self.frequencies, 'psd': self.psd})


def check_uniform_grid(frequencies: np.ndarray, rtol: float = 1e-6):
    if frequencies.size < 2:
        raise ValueError("Frequency grid needs at least 2 points")
    steps = np.diff(frequencies)
    if np.any(steps <= 0):
        raise ValueError("Frequency grid must be strictly increasing")
    if np.max(np.abs(steps - steps[0])) > rtol * steps[0]:
        raise ValueError("Frequency grid must be uniform")


def frequency_grid(half_span: float, spacing: float) -> np.ndarray:
    """Symmetric grid -half_span..half_span (Hz) containing 0."""
    count = int(round(half_span / spacing))
    return np.arange(-count, count + 1) * spacing


def scattering_rates(n: int, eta: float, gamma_sc: float) -> Tuple[float, float, float]:
    """(Gamma_{n->n-1}, Gamma_{n->n}, Gamma_{n->n+1}) to second order in eta."""
    if n < 0:
        raise ValueError(f"Occupation must be non-negative, got {n}")
    if eta >= 0.5:
        raise LambDickeViolation(f"Lamb-Dicke parameter {eta:.3f} is outside the expansion range")
    if gamma_sc < 0:
        raise ValueError(f"Scattering rate must be non-negative, got {gamma_sc}")
    eta2 = eta * eta
    down = eta2 * n * gamma_sc
    up = eta2 * (n + 1) * gamma_sc
    stay = (1.0 - eta2 * (2 * n + 1)) * gamma_sc
    if stay < 0:
        logger.warning(f"Carrier rate for n={n} is negative at eta={eta:.3f}; flooring at 0")
        stay = 0.0
    return down, stay, up


def thermal_populations(mean_n: float, tol: float = THERMAL_TOL, n_limit: Optional[int] = None) -> np.ndarray:
    """
    Thermal P(n), truncated once the cumulative probability reaches 1 - tol (and at n_limit),
    then renormalized.
    """
    if mean_n < 0:
        raise ValueError(f"Mean occupation must be non-negative, got {mean_n}")
    if mean_n == 0:
        return np.ones(1)
    ratio = mean_n / (mean_n + 1.0)
    n_cut = max(int(math.ceil(math.log(tol) / math.log(ratio))) - 1, 0)
    if n_limit is not None:
        n_cut = min(n_cut, n_limit)
    p = ratio ** np.arange(n_cut + 1) / (mean_n + 1.0)
    return p / p.sum()


def spectrum_components(trap: TrapConfig, mean_n: Sequence[float], gamma_sc: float, min_width: float,
                        thermal_tol: float = THERMAL_TOL,
                        eta: Optional[Sequence[float]] = None) -> List[SidebandComponent]:
    """
    All first-order components of the three axes plus the carrier. Sideband width is the larger of
    min_width and the motional depopulation rate of the initial level over 2 pi; the carrier takes
    the scattered weight not carried by any sideband and has width min_width.
    """
    if len(mean_n) != 3:
        raise ValueError(f"Need one occupation per axis, got {len(mean_n)}")
    if not min_width > 0:
        raise ValueError(f"min_width must be positive, got {min_width}")
    eta = [lamb_dicke(trap, i) for i in range(3)] if eta is None else list(eta)
    components = []
    sideband_weight = 0.0
    for i, axis in enumerate(AXES):
        # blue line from n_cut must stay inside the trap
        populations = thermal_populations(mean_n[i], thermal_tol, trap.trap_depth_quanta[i] - 1)
        for n, p_n in enumerate(populations):
            down, _, up = scattering_rates(n, eta[i], gamma_sc)
            width = max(min_width, (down + up) / (2 * math.pi))
            if n > 0:
                components.append(SidebandComponent(axis, n, n - 1, transition_frequency(trap, i, n, n - 1),
                                                    down, float(p_n), width))
                sideband_weight += p_n * down
            components.append(SidebandComponent(axis, n, n + 1, transition_frequency(trap, i, n, n + 1),
                                                up, float(p_n), width))
            sideband_weight += p_n * up
    carrier = gamma_sc - sideband_weight
    if carrier < 0:
        logger.warning(f"Sideband weight exceeds the scattering rate by {-carrier:.3e}/s; carrier floored at 0")
        carrier = 0.0
    components.append(SidebandComponent(CARRIER, 0, 0, 0.0, carrier, 1.0, min_width))
    return components


def lorentzian(frequencies: np.ndarray, center: float, fwhm: float, area: float = 1.0) -> np.ndarray:
    half = 0.5 * fwhm
    return area * (half / math.pi) / ((frequencies - center) ** 2 + half * half)


def render_components(components: Sequence[SidebandComponent], frequencies: np.ndarray,
                      amplitude: float = 1.0, offset: float = 0.0) -> np.ndarray:
    total = np.zeros_like(frequencies, dtype=float)
    for c in components:
        if c.weight > 0:
            total += lorentzian(frequencies, c.center_frequency, c.width, c.weight)
    return amplitude * total + offset


def synthesize_spectrum(trap: TrapConfig, mean_n: Sequence[float], gamma_sc: float, min_width: float,
                        frequencies: np.ndarray, amplitude: float = 1.0, offset: float = 0.0,
                        thermal_tol: float = THERMAL_TOL) -> Spectrum:
    """Noiseless model spectrum psd(f) = amplitude * sum of Lorentzians + offset."""
    frequencies = np.asarray(frequencies, dtype=float)
    check_uniform_grid(frequencies)
    spacing = frequencies[1] - frequencies[0]
    if spacing > min_width / SAMPLES_PER_WIDTH:
        raise GridTooCoarse(f"Grid spacing {spacing:.1f} Hz gives fewer than {SAMPLES_PER_WIDTH} "
                            f"samples per min_width {min_width:.1f} Hz")
    if amplitude < 0 or offset < 0:
        raise ValueError("amplitude and offset must be non-negative")
    components = spectrum_components(trap, mean_n, gamma_sc, min_width, thermal_tol)
    extent = max(abs(c.center_frequency) for c in components)
    if frequencies[0] > -extent or frequencies[-1] < extent:
        logger.warning(f"Grid [{frequencies[0]:.0f}, {frequencies[-1]:.0f}] Hz does not cover all sidebands "
                       f"(extent {extent:.0f} Hz)")
    psd = render_components(components, frequencies, amplitude, offset)
    return Spectrum(frequencies, psd, resolution_bandwidth=spacing, averages=1,
                    metadata={'model': 'synth', 'mean_n': list(map(float, mean_n)),
                              'gamma_sc': gamma_sc, 'min_width': min_width})


def components_frame(components: Sequence[SidebandComponent]) -> pd.DataFrame:
    return pd.DataFrame([(c.axis, c.n_initial, c.n_final, c.center_frequency, c.weight, c.width)
                         for c in components],
                        columns=['axis', 'n_from', 'n_to', 'f_hz', 'rate', 'width'])


def sideband_weights(components: Sequence[SidebandComponent], axis: str) -> Tuple[float, float]:
    """Exact (S-, S+) of one axis from the component list."""
    red = sum(c.weight for c in components if c.axis == axis and c.n_final < c.n_initial)
    blue = sum(c.weight for c in components if c.axis == axis and c.n_final > c.n_initial)
    return red, blue


def integrate_band(spectrum: Spectrum, center: float, half_width: float,
                   edge_fraction: float = 0.1) -> Tuple[float, float]:
    """
    Area of psd over [center - half_width, center + half_width] above a linear baseline through
    the mean psd of the two outer edge windows. Returns (area, 1-sigma estimate from edge scatter).
    """
    f, psd = spectrum.frequencies, spectrum.psd
    mask = (f >= center - half_width) & (f <= center + half_width)
    if mask.sum() < 5:
        raise GridTooCoarse(f"Band around {center:.0f} Hz holds fewer than 5 grid points")
    fb, pb = f[mask], psd[mask]
    edge = max(int(round(edge_fraction * fb.size)), 1)
    left_f, left_p = fb[:edge].mean(), pb[:edge].mean()
    right_f, right_p = fb[-edge:].mean(), pb[-edge:].mean()
    slope = (right_p - left_p) / (right_f - left_f)
    baseline = left_p + slope * (fb - left_f)
    area = float(trapezoid(pb - baseline, fb))
    scatter = np.concatenate([pb[:edge] - baseline[:edge], pb[-edge:] - baseline[-edge:]])
    sigma = float(np.std(scatter) * spectrum.spacing * math.sqrt(fb.size)) if scatter.size > 1 else 0.0
    return area, sigma


def band_half_widths(centers: Sequence[float], eta: Sequence[float], gamma_sc: float, min_width: float,
                     linewidths: float = BAND_LINEWIDTHS) -> Tuple[List[float], float]:
    """
    Integration half-widths (Hz) of each axis' sideband pair and of the carrier. An axis gets
    `linewidths` times the width of its n=1 -> 0 line, never below min_width, capped below half the
    distance to the nearest other line so the windows cannot overlap.
    """
    if len(centers) != len(eta):
        raise ValueError(f"Need one Lamb-Dicke parameter per sideband, got {len(eta)} for {len(centers)}")
    lines = [0.0] + [sign * c for c in centers for sign in (1.0, -1.0)]
    halves = []
    for center, eta_i in zip(centers, eta):
        down, _, up = scattering_rates(1, eta_i, gamma_sc)
        width = max(min_width, (down + up) / (2 * math.pi))
        gap = min(abs(center - other) for other in lines if other != center)
        halves.append(min(linewidths * width, BAND_GAP_FRACTION * gap))
    carrier = min(linewidths * min_width, BAND_GAP_FRACTION * min(abs(c) for c in centers))
    return halves, carrier


def check_bands(centers: Sequence[float], half_widths: Sequence[float], carrier_half_width: Optional[float] = None):
    """
    Sideband windows +-f_i must not overlap each other or the carrier window. The carrier window
    takes the first half-width unless given.
    """
    carrier = half_widths[0] if carrier_half_width is None else carrier_half_width
    windows = [(-carrier, carrier)]
    for c, hw in zip(centers, half_widths):
        windows += [(c - hw, c + hw), (-c - hw, -c + hw)]
    windows.sort()
    for (lo_a, hi_a), (lo_b, hi_b) in zip(windows, windows[1:]):
        if lo_b < hi_a:
            raise ValueError(f"Bands [{lo_a:.0f}, {hi_a:.0f}] and [{lo_b:.0f}, {hi_b:.0f}] Hz overlap")


@dataclass(frozen=True)
class Thermometry:
    mean_n: float
    error: float
    ground_occupation: float


def sideband_thermometry(s_minus: float, s_plus: float, s_minus_err: float = 0.0,
                         s_plus_err: float = 0.0) -> Thermometry:
    """<n> = S- / (S+ - S-), first-order error propagation."""
    if s_minus < 0:
        tolerance = max(3.0 * s_minus_err, 1e-2 * abs(s_plus))
        if -s_minus > tolerance:
            raise NonPhysicalSidebands(f"Red sideband integral {s_minus:.4e} is negative beyond its uncertainty")
        logger.warning(f"Red sideband integral {s_minus:.3e} is consistent with zero; using 0")
        s_minus = 0.0
    if s_minus >= s_plus:
        raise NonPhysicalSidebands(f"S- = {s_minus:.4e} >= S+ = {s_plus:.4e}: no finite positive temperature")
    gap = s_plus - s_minus
    mean_n = s_minus / gap
    error = math.hypot(s_plus * s_minus_err, s_minus * s_plus_err) / gap ** 2
    return Thermometry(mean_n, error, ground_state_occupation(mean_n))


def ground_state_occupation(mean_n: float) -> float:
    if mean_n < 0:
        raise ValueError(f"Mean occupation must be non-negative, got {mean_n}")
    return 1.0 / (1.0 + mean_n)
