import math
from dataclasses import replace

import numpy as np
import pytest

from core.config import RunConfig
from core.errors import BoundsViolation, FitDiverged, SingularNormalMatrix
from core.fitting import (FitModelParams, FitOptions, FitResult, SpectrumModel, _jacobian,
                          fit_multistart, fit_report, fit_spectrum, initial_guess, parameter_names)
from core.spectroscopy import Spectrum, frequency_grid

from .conftest import SPECTRUM_KHZ, SPECTRUM_MEAN_N

GAMMA_SC = 1.0e5
AB_INITIO = tuple(2 * math.pi * f * 1e3 for f in (136.0, 83.0, 215.0))


@pytest.fixture
def model(spectrum_trap):
    return SpectrumModel(spectrum_trap, GAMMA_SC)


@pytest.fixture
def truth():
    return FitModelParams(mean_n=SPECTRUM_MEAN_N,
                          omega=tuple(2 * math.pi * f * 1e3 for f in SPECTRUM_KHZ),
                          min_width=10e3, amplitude=1.0, offset=0.0)


@pytest.fixture
def grid():
    return frequency_grid(300e3, 1e3)


def _start(truth):
    return replace(truth,
                   mean_n=tuple(n * s for n, s in zip(truth.mean_n, (1.1, 0.9, 1.1))),
                   omega=tuple(w * s for w, s in zip(truth.omega, (1.02, 0.98, 1.01))),
                   min_width=1.1 * truth.min_width, amplitude=0.9)


def test_noiseless_fit_recovers_parameters(model, truth, grid):
    data = Spectrum(grid, model(truth, grid))
    result = fit_spectrum(data, _start(truth), model)
    assert result.converged
    assert result.params.mean_n == pytest.approx(truth.mean_n, rel=1e-3)
    assert result.params.omega == pytest.approx(truth.omega, rel=1e-5)
    assert result.params.min_width == pytest.approx(truth.min_width, rel=1e-4)
    assert all(b <= a for a, b in zip(result.history, result.history[1:]))
    assert result.names == parameter_names()


def test_log_occupation_reaches_same_minimum(model, truth, grid):
    data = Spectrum(grid, model(truth, grid))
    plain = fit_spectrum(data, _start(truth), model)
    logged = fit_spectrum(data, _start(truth), model, options=FitOptions(log_occupation=True))
    assert logged.converged
    assert logged.params.mean_n == pytest.approx(plain.params.mean_n, rel=1e-5)


def test_multistart_keeps_best(model, truth, grid):
    data = Spectrum(grid, model(truth, grid))
    result = fit_multistart(data, _start(truth), model, starts=3, seed=4)
    single = fit_spectrum(data, _start(truth), model)
    assert result.residual_norm <= single.residual_norm * (1 + 1e-9)


def test_zero_amplitude_is_singular(model, truth, grid):
    flat = Spectrum(grid, np.ones(grid.size))
    with pytest.raises(SingularNormalMatrix):
        fit_spectrum(flat, replace(truth, amplitude=0.0), model)


def test_initial_value_outside_bounds(model, truth, grid):
    data = Spectrum(grid, model(truth, grid))
    with pytest.raises(BoundsViolation):
        fit_spectrum(data, replace(truth, mean_n=(-0.1, 0.5, 0.2)), model)


def test_jacobian_matches_analytic_derivatives():
    def residual(u):
        return np.array([u[0] ** 2, u[0] * u[1], math.sin(u[1])])

    u = np.array([1.5, 0.3])
    expected = np.array([[3.0, 0.0], [0.3, 1.5], [0.0, math.cos(0.3)]])
    assert np.allclose(_jacobian(residual, u), expected, atol=1e-8)


def test_initial_guess_finds_blue_sidebands(model, truth, grid):
    data = Spectrum(grid, model(truth, grid))
    guess = initial_guess(data, AB_INITIO, GAMMA_SC, 10e3, model, exclude_hz=40e3)
    for omega, khz in zip(guess.omega, SPECTRUM_KHZ):
        assert abs(omega / (2 * math.pi) - khz * 1e3) <= 1e3
    assert all(0.0 <= n <= 10.0 for n in guess.mean_n)
    assert guess.amplitude == pytest.approx(1.0, abs=0.2)


def _result(mean_n, freqs_khz, converged=True):
    params = FitModelParams(mean_n=mean_n, omega=tuple(2 * math.pi * f * 1e3 for f in freqs_khz),
                            min_width=10e3, amplitude=1.0, offset=0.0)
    names = parameter_names()
    return FitResult(params=params, names=names, uncertainties={n: 0.0 for n in names},
                     covariance=np.zeros((len(names), len(names))), residual_norm=0.0,
                     iterations=3, converged=converged)


def test_report_occupation_and_deviation(trap):
    report = fit_report(_result((0.10, 0.78, 0.22), (136.0, 94.0, 215.0)), trap)
    assert report['p0_x'] == pytest.approx(0.909, abs=1e-3)
    assert report['p0_y'] == pytest.approx(0.562, abs=1e-3)
    assert report['freq_y_deviation_pct'] == pytest.approx(13.25, abs=0.01)
    assert report['freq_x_deviation_pct'] == pytest.approx(0.0, abs=1e-9)
    assert report['width_within_inhomogeneity_y'] is False
    assert report['width_within_inhomogeneity_z'] is True


def test_report_compares_with_configured_ab_initio_trap():
    ab_initio = RunConfig({'fit': {'ab_initio_khz': [150.0, 90.0, 220.0]}}).ab_initio_trap()
    report = fit_report(_result((0.1, 0.1, 0.1), (150.0, 94.5, 220.0)), ab_initio)
    assert report['freq_y_ab_initio_khz'] == pytest.approx(90.0)
    assert report['freq_y_deviation_pct'] == pytest.approx(5.0)
    assert report['freq_z_deviation_pct'] == pytest.approx(0.0, abs=1e-9)


def test_report_refuses_unconverged_fit(trap):
    with pytest.raises(FitDiverged):
        fit_report(_result((0.1, 0.1, 0.1), (136.0, 83.0, 215.0), converged=False), trap)


def test_record_restores_parameters():
    result = _result((1.4, 0.58, 0.22), SPECTRUM_KHZ)
    back = FitResult.from_record(result.to_record())
    assert back.params == result.params
    assert back.names == result.names


@pytest.mark.slow
def test_reported_uncertainty_matches_scatter(model, truth, grid):
    """Across noisy realizations the spread of <n_z> agrees with the fitted error bar."""
    clean = model(replace(truth, offset=1.0), grid)
    fitted, reported = [], []
    for seed in range(50):
        noise = np.random.default_rng(seed).normal(0.0, 1e-3, grid.size)
        data = Spectrum(grid, clean + noise)
        try:
            result = fit_spectrum(data, replace(truth, offset=1.0), model)
        except (FitDiverged, SingularNormalMatrix):
            continue
        if result.converged:
            fitted.append(result.params.mean_n[2])
            reported.append(result.uncertainties['mean_n_z'])
    assert len(fitted) >= 45
    ratio = np.std(fitted, ddof=1) / np.mean(reported)
    assert 0.5 < ratio < 2.0
