import math

import numpy as np
import pytest

from core.errors import GridMismatch, ModulationOverflow, WindowTooLong
from core.signal_chain import (ClickStream, PsdEstimate, Tone, average_psds, bin_counts,
                               psd_standard_error, read_click_stream, realization_seed,
                               relative_to_carrier, simulate_click_stream, tones_from_components,
                               welch_psd, welch_signal, write_click_stream)
from core.spectroscopy import SidebandComponent, Spectrum, spectrum_components, synthesize_spectrum
from core.trap_model import LaserConfig, scattering_rate

from .conftest import SPECTRUM_MEAN_N

BIN = 1e-7


def test_pure_tone_power_and_frequency():
    rate, depth, carrier = 1e6, 0.5, 1e6
    stream = simulate_click_stream([Tone(50e3, 1.0, depth)], rate, 0.2, seed=7, carrier_offset=carrier)
    assert abs(stream.count - rate * 0.2) < 5 * math.sqrt(rate * 0.2)

    estimate = welch_psd(stream, window_length=1e-3, bin_width=BIN)
    f, psd = estimate.spectrum.frequencies, estimate.spectrum.psd
    df = f[1] - f[0]
    assert estimate.resolution_bandwidth == pytest.approx(1e3)

    target = carrier + 50e3
    band = np.abs(f - target) <= 2e5
    assert abs(f[band][psd[band].argmax()] - target) <= df

    peak = np.abs(f - target) <= 5 * df
    floor = 2 * rate
    power = (psd[peak] - floor).sum() * df
    expected = (rate * depth) ** 2 / 2 * np.sinc(target * BIN) ** 2
    assert power == pytest.approx(expected, rel=0.02)


def test_welch_satisfies_parseval():
    rng = np.random.default_rng(3)
    samples = rng.normal(0.0, 2.0, 1_000_000)
    freqs, psd, segments = welch_signal(samples, 1000.0, 1.0)
    assert segments == 1999
    assert psd.sum() * (freqs[1] - freqs[0]) == pytest.approx(4.0, rel=0.01)


def test_shot_noise_floor_is_flat():
    rate = 1e6
    estimates = [welch_psd(simulate_click_stream([], rate, 0.01, realization_seed(5, k)),
                           window_length=1e-3, bin_width=BIN)
                 for k in range(100)]
    average = average_psds(estimates)
    psd = average.spectrum.psd[1:-1]
    assert psd.max() / psd.min() < 3.0
    assert psd.mean() == pytest.approx(2 * rate, rel=0.1)
    assert average.realizations == 100
    assert average.segments == sum(e.segments for e in estimates)


def test_averaged_noise_falls_as_inverse_root_of_realizations():
    estimates = [welch_psd(simulate_click_stream([], 1e6, 0.01, realization_seed(9, k)),
                           window_length=1e-3, bin_width=BIN)
                 for k in range(64)]
    spread = []
    for count in (4, 16, 64):
        psd = average_psds(estimates[:count]).spectrum.psd[10:-10]
        spread.append(psd.std() / psd.mean())
    assert spread[0] / spread[1] == pytest.approx(2.0, rel=0.15)
    assert spread[1] / spread[2] == pytest.approx(2.0, rel=0.15)


def test_click_stream_spectrum_follows_synthesized_lines(spectrum_trap):
    gamma_sc = scattering_rate(LaserConfig())
    components = spectrum_components(spectrum_trap, SPECTRUM_MEAN_N, gamma_sc, 10e3, thermal_tol=1e-4)
    tones = tones_from_components(components, 0.9)
    estimates = [relative_to_carrier(welch_psd(simulate_click_stream(tones, 5e6, 0.02, realization_seed(4, k)),
                                               window_length=1e-3))
                 for k in range(20)]
    measured = average_psds(estimates).spectrum
    model = synthesize_spectrum(spectrum_trap, SPECTRUM_MEAN_N, gamma_sc, 10e3, measured.frequencies,
                                thermal_tol=1e-4)
    assert np.corrcoef(measured.psd, model.psd)[0, 1] > 0.99


def test_tone_depths_follow_square_root_of_weight():
    components = [SidebandComponent('y', 0, 1, 94e3, 4.0, 1.0, 10e3),
                  SidebandComponent('y', 1, 0, -94e3, 1.0, 1.0, 10e3),
                  SidebandComponent('carrier', 0, 0, 0.0, 0.0, 1.0, 10e3)]
    tones = tones_from_components(components, 0.9)
    assert [t.frequency for t in tones] == [-94e3, 94e3]
    assert sum(t.depth for t in tones) == pytest.approx(0.9)
    assert tones[1].depth == pytest.approx(2 * tones[0].depth)
    assert tones_from_components(components, 0.0) == []


def test_modulation_overflow():
    with pytest.raises(ModulationOverflow):
        tones_from_components([SidebandComponent('y', 0, 1, 94e3, 1.0, 1.0, 10e3)], 1.5)
    with pytest.raises(ModulationOverflow):
        simulate_click_stream([Tone(1e3, 1.0, 0.6), Tone(2e3, 1.0, 0.6)], 1e6, 0.01, seed=1)


def test_window_longer_than_record():
    stream = simulate_click_stream([], 1e6, 1.5e-3, seed=1)
    with pytest.raises(WindowTooLong):
        welch_psd(stream, window_length=1e-3, bin_width=BIN)


def test_average_rejects_mismatched_grids():
    def estimate(grid, window):
        return PsdEstimate(Spectrum(grid, np.ones(grid.size)), window, 0.5, 3)

    grid = np.arange(10.0)
    with pytest.raises(GridMismatch):
        average_psds([estimate(grid, 1e-3), estimate(grid + 0.5, 1e-3)])
    with pytest.raises(GridMismatch):
        average_psds([estimate(grid, 1e-3), estimate(grid, 2e-3)])
    with pytest.raises(GridMismatch):
        relative_to_carrier(estimate(grid, 1e-3), carrier_offset=1e6, half_span=3.0)


def test_relative_to_carrier_centres_axis():
    grid = np.arange(0.0, 2e6, 1e3)
    cropped = relative_to_carrier(PsdEstimate(Spectrum(grid, np.ones(grid.size)), 1e-3, 0.5, 3),
                                  carrier_offset=1e6, half_span=300e3)
    assert cropped.spectrum.frequencies[0] == -300e3
    assert cropped.spectrum.frequencies[-1] == 300e3
    assert cropped.spectrum.metadata['carrier_offset'] == 1e6


def test_standard_error_across_realizations():
    grid = np.arange(4.0)
    estimates = [PsdEstimate(Spectrum(grid, np.full(4, v)), 1e-3, 0.5, 1) for v in (1.0, 3.0)]
    assert np.allclose(psd_standard_error(estimates), 1.0)
    assert np.array_equal(psd_standard_error(estimates[:1]), np.zeros(4))


def test_streams_are_reproducible():
    tones = [Tone(50e3, 100.0, 0.4)]
    a = simulate_click_stream(tones, 1e6, 2e-3, seed=realization_seed(1, 0))
    b = simulate_click_stream(tones, 1e6, 2e-3, seed=realization_seed(1, 0))
    c = simulate_click_stream(tones, 1e6, 2e-3, seed=realization_seed(1, 1))
    assert np.array_equal(a.timestamps, b.timestamps)
    assert not np.array_equal(a.timestamps, c.timestamps)
    assert realization_seed(1, 0) == realization_seed(1, 0) != realization_seed(2, 0)


def test_stream_validation():
    with pytest.raises(ValueError):
        ClickStream(1.0, np.array([0.5, 0.2]), 0)
    with pytest.raises(ValueError):
        ClickStream(1.0, np.array([0.5, 1.0]), 0)
    with pytest.raises(ValueError):
        simulate_click_stream([], 1e3, 0.05, seed=1)
    with pytest.raises(ValueError):
        simulate_click_stream([Tone(20e6, 1.0, 0.1)], 1e6, 0.01, seed=1)


def test_bin_counts():
    stream = ClickStream(1e-6, np.array([0.0, 1e-8, 5.5e-7, 9.9e-7]), 0)
    counts = bin_counts(stream, 1e-7)
    assert counts.size == 10
    assert counts.sum() == 4
    assert counts[0] == 2 and counts[5] == 1 and counts[9] == 1


def test_binary_click_file(tmp_path):
    stream = simulate_click_stream([], 1e5, 0.01, seed=11)
    path = tmp_path / 'clicks.bin'
    write_click_stream(str(path), stream)
    back = read_click_stream(str(path), seed=11)
    assert back.duration == stream.duration
    assert np.array_equal(back.timestamps, stream.timestamps)
    (tmp_path / 'bad.bin').write_bytes(b'NOTCLICKS')
    with pytest.raises(ValueError):
        read_click_stream(str(tmp_path / 'bad.bin'))
