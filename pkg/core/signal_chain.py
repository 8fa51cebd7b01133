"""
Signal Chain
Photon click streams from a rate-modulated Poisson process and Welch PSD estimation of the
binned counting signal.

Each spectral component k becomes a tone m_k cos(2 pi (f_c + f_k) t + phi_k(t)) in the click rate.
phi_k starts uniform and diffuses as a Wiener process with D_k = pi * width_k, which turns the
tone into a Lorentzian of FWHM width_k.
"""
import logging
import math
import struct
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy import signal

from .errors import GridMismatch, ModulationOverflow, WindowTooLong
from .spectroscopy import SidebandComponent, Spectrum

logger = logging.getLogger(__name__)

CLICK_MAGIC = b'DRCCLK01'
DEFAULT_CARRIER = 10e6
DEFAULT_BIN_WIDTH = 20e-9
CHUNK = 1 << 18


@dataclass(frozen=True)
class Tone:
    frequency: float       # Hz relative to the carrier
    width: float           # FWHM, Hz
    depth: float           # modulation depth m_k


@dataclass(frozen=True, eq=False)
class ClickStream:
    duration: float
    timestamps: np.ndarray
    seed: int

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=np.float64)
        object.__setattr__(self, 'timestamps', t)
        if t.size and (t[0] < 0 or t[-1] >= self.duration):
            raise ValueError("Timestamps must lie in [0, duration)")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("Timestamps must be strictly increasing")

    @property
    def count(self) -> int:
        return int(self.timestamps.size)


@dataclass
class PsdEstimate:
    spectrum: Spectrum
    window_length: float
    overlap: float
    segments: int
    realizations: int = 1

    @property
    def resolution_bandwidth(self) -> float:
        return 1.0 / self.window_length


def realization_seed(master_seed: int, index: int) -> int:
    """Seed of realization `index`: SeedSequence(master, spawn_key=(index,))."""
    state = np.random.SeedSequence(master_seed, spawn_key=(index,)).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


def tones_from_components(components: Sequence[SidebandComponent], modulation_depth: float) -> List[Tone]:
    """
    Merge components sharing (frequency, width), then m_k proportional to sqrt(weight) with
    sum m_k = modulation_depth.
    """
    if modulation_depth > 1:
        raise ModulationOverflow(f"Total modulation depth {modulation_depth} exceeds 1; the click rate would go negative")
    if modulation_depth < 0:
        raise ValueError("Modulation depth must be non-negative")
    merged = {}
    for c in components:
        if c.weight > 0:
            key = (round(c.center_frequency, 6), round(c.width, 6))
            merged[key] = merged.get(key, 0.0) + c.weight
    if not merged or modulation_depth == 0:
        return []
    roots = {key: math.sqrt(w) for key, w in merged.items()}
    norm = sum(roots.values())
    return [Tone(f, width, modulation_depth * r / norm) for (f, width), r in sorted(roots.items())]


def simulate_click_stream(tones: Sequence[Tone], mean_rate: float, duration: float, seed: int,
                          carrier_offset: float = DEFAULT_CARRIER) -> ClickStream:
    """Thinning: Poisson(lambda_max T) sorted candidates, each kept with probability lambda(t)/lambda_max."""
    if mean_rate * duration < 100:
        raise ValueError(f"Expected click count {mean_rate * duration:.1f} is below 100")
    total_depth = sum(t.depth for t in tones)
    if total_depth > 1 + 1e-12:
        raise ModulationOverflow(f"Sum of modulation depths {total_depth:.4f} exceeds 1")
    extent = max((abs(t.frequency) for t in tones), default=0.0)
    if carrier_offset <= extent:
        raise ValueError(f"Carrier offset {carrier_offset:.0f} Hz must exceed the spectral extent {extent:.0f} Hz")

    rng = np.random.default_rng(seed)
    rate_max = mean_rate * (1.0 + total_depth)
    n_candidates = rng.poisson(rate_max * duration)
    candidates = np.sort(rng.uniform(0.0, duration, n_candidates))
    frequencies = np.array([carrier_offset + t.frequency for t in tones])
    depths = np.array([t.depth for t in tones])
    diffusion = np.array([math.pi * t.width for t in tones])
    phases = rng.uniform(0.0, 2 * math.pi, len(tones))

    kept = []
    last_time = 0.0
    for start in range(0, n_candidates, CHUNK):
        times = candidates[start:start + CHUNK]
        rate = np.ones_like(times)
        if len(tones):
            steps = np.diff(times, prepend=last_time)
            kicks = rng.standard_normal((len(tones), times.size)) * np.sqrt(2.0 * diffusion[:, None] * steps[None, :])
            walk = phases[:, None] + np.cumsum(kicks, axis=1)
            phases = walk[:, -1]
            rate += np.sum(depths[:, None] * np.cos(2 * math.pi * frequencies[:, None] * times[None, :] + walk), axis=0)
        accept = rng.uniform(0.0, 1.0 + total_depth, times.size) < rate
        kept.append(times[accept])
        last_time = times[-1]
    timestamps = np.concatenate(kept) if kept else np.empty(0)
    timestamps = np.unique(timestamps)
    logger.debug(f"Seed {seed}: {n_candidates} candidates, {timestamps.size} clicks")
    return ClickStream(duration, timestamps, seed)


def bin_counts(stream: ClickStream, bin_width: float = DEFAULT_BIN_WIDTH) -> np.ndarray:
    n_bins = int(math.floor(stream.duration / bin_width + 1e-9))
    index = np.floor(stream.timestamps / bin_width).astype(np.int64)
    index = index[index < n_bins]
    return np.bincount(index, minlength=n_bins).astype(float)


def welch_signal(samples: np.ndarray, sample_rate: float, window_length: float, overlap: float = 0.5,
                 scaling: str = 'density') -> Tuple[np.ndarray, np.ndarray, int]:
    """One-sided Hann-windowed Welch estimate; returns (frequencies, psd, segments)."""
    nperseg = int(round(window_length * sample_rate))
    if samples.size < 2 * nperseg:
        raise WindowTooLong(f"Record of {samples.size} samples is shorter than two windows of {nperseg}")
    if not 0 <= overlap < 1:
        raise ValueError(f"Overlap must lie in [0, 1), got {overlap}")
    noverlap = int(round(overlap * nperseg))
    freqs, psd = signal.welch(samples, fs=sample_rate, window='hann', nperseg=nperseg,
                              noverlap=noverlap, detrend='constant', scaling=scaling)
    segments = 1 + (samples.size - nperseg) // (nperseg - noverlap)
    return freqs, psd, segments


def welch_psd(stream: ClickStream, window_length: float = 1e-3, overlap: float = 0.5,
              bin_width: float = DEFAULT_BIN_WIDTH, scaling: str = 'density') -> PsdEstimate:
    """PSD of the counting signal (counts per bin / bin_width, i.e. a rate) up to 1/(2 bin_width)."""
    if stream.duration < 2 * window_length:
        raise WindowTooLong(f"Duration {stream.duration} s is shorter than two windows of {window_length} s")
    rate_signal = bin_counts(stream, bin_width) / bin_width
    freqs, psd, segments = welch_signal(rate_signal, 1.0 / bin_width, window_length, overlap, scaling)
    spectrum = Spectrum(freqs, psd, resolution_bandwidth=1.0 / window_length, averages=segments,
                        metadata={'bin_width': bin_width, 'scaling': scaling})
    return PsdEstimate(spectrum, window_length, overlap, segments, 1)


def relative_to_carrier(estimate: PsdEstimate, carrier_offset: float = DEFAULT_CARRIER,
                        half_span: float = 300e3) -> PsdEstimate:
    """Crop to carrier +- half_span and shift the axis so the carrier sits at 0 Hz."""
    f = estimate.spectrum.frequencies
    mask = np.abs(f - carrier_offset) <= half_span
    if mask.sum() < 2:
        raise GridMismatch(f"No PSD bins within {half_span:.0f} Hz of {carrier_offset:.0f} Hz")
    cropped = Spectrum(f[mask] - carrier_offset, estimate.spectrum.psd[mask],
                       estimate.spectrum.resolution_bandwidth, estimate.spectrum.averages,
                       dict(estimate.spectrum.metadata, carrier_offset=carrier_offset))
    return PsdEstimate(cropped, estimate.window_length, estimate.overlap, estimate.segments,
                       estimate.realizations)


def average_psds(estimates: Sequence[PsdEstimate]) -> PsdEstimate:
    """Pointwise mean over identical grids; segment and realization counts are summed."""
    if not estimates:
        raise ValueError("Nothing to average")
    first = estimates[0]
    grid = first.spectrum.frequencies
    for e in estimates[1:]:
        if e.spectrum.frequencies.shape != grid.shape or not np.array_equal(e.spectrum.frequencies, grid):
            raise GridMismatch("PSD estimates have different frequency grids")
        if e.window_length != first.window_length:
            raise GridMismatch("PSD estimates use different window lengths")
    psd = np.mean([e.spectrum.psd for e in estimates], axis=0)
    segments = sum(e.segments for e in estimates)
    spectrum = Spectrum(grid.copy(), psd, first.spectrum.resolution_bandwidth, segments,
                        dict(first.spectrum.metadata))
    return PsdEstimate(spectrum, first.window_length, first.overlap, segments,
                       sum(e.realizations for e in estimates))


def psd_standard_error(estimates: Sequence[PsdEstimate]) -> np.ndarray:
    """Per-bin standard error of the mean across estimates (inverse-variance fit weights)."""
    stack = np.array([e.spectrum.psd for e in estimates])
    if stack.shape[0] < 2:
        return np.zeros(stack.shape[1])
    return stack.std(axis=0, ddof=1) / math.sqrt(stack.shape[0])


def write_click_stream(path: str, stream: ClickStream):
    """Binary layout: magic, float64 duration, then float64 timestamps; all little-endian."""
    with open(path, 'wb') as f:
        f.write(CLICK_MAGIC)
        f.write(struct.pack('<d', stream.duration))
        f.write(stream.timestamps.astype('<f8').tobytes())


def read_click_stream(path: str, seed: int = 0) -> ClickStream:
    with open(path, 'rb') as f:
        magic = f.read(len(CLICK_MAGIC))
        if magic != CLICK_MAGIC:
            raise ValueError(f"{path} is not a click-stream file (magic {magic!r})")
        (duration,) = struct.unpack('<d', f.read(8))
        timestamps = np.frombuffer(f.read(), dtype='<f8').astype(np.float64)
    return ClickStream(duration, timestamps, seed)
