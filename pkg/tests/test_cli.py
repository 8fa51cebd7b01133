import json
import math
import os

import numpy as np
import pytest
import yaml

import main
from core.quantum import thermal_distribution
from core.rate_model import mean_first_passage_time
from core.trap_model import FieldConfig, default_trap, resonant_field

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def _config(tmp_path, name='config.yaml', **sections):
    data = {'out_dir': str(tmp_path / 'out')}
    data.update(sections)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def _json(tmp_path, name):
    with open(tmp_path / 'out' / name, encoding='utf-8') as f:
        return json.load(f)


QUICK_COOL = {'n_max': 12, 'initial_mean_n': 0.5, 'duration_ms': 0.5, 'dt_us': 10.0,
              'lifetime_duration_ms': 50.0, 'lifetime_samples': 20}


def test_print_config(tmp_path, capsys):
    assert main.main(['--config', str(tmp_path / 'none.yaml'), '--seed', '5', '--print-config']) == 0
    printed = yaml.safe_load(capsys.readouterr().out)
    assert printed['seed'] == 5
    assert printed['trap']['frequencies_khz'] == [136.0, 83.0, 215.0]


def test_missing_subcommand_is_usage_error(tmp_path, capsys):
    assert main.main(['--config', str(tmp_path / 'none.yaml')]) == 2
    assert 'error: UsageError' in capsys.readouterr().err


def test_bad_config_exits_with_two(tmp_path, capsys):
    path = _config(tmp_path, trap={'frequencies': [1, 2, 3]})
    assert main.main(['--config', path, 'resonances']) == 2
    assert 'error: ConfigError' in capsys.readouterr().err


def test_shipped_config_finds_first_resonance(tmp_path):
    with open(os.path.join(ROOT, 'config.yaml'), encoding='utf-8') as f:
        shipped = yaml.safe_load(f)
    shipped['out_dir'] = str(tmp_path / 'out')
    path = tmp_path / 'config.yaml'
    path.write_text(yaml.safe_dump(shipped))
    assert main.main(['--config', str(path), 'resonances']) == 0
    summary = _json(tmp_path, 'scan_summary.json')
    assert summary['first_resonance_gauss'] == pytest.approx(0.237, rel=0.1)
    assert summary['first_resonance_axis'] == 'y'
    for axis in 'xyz':
        optimum = summary['axes'][axis]['mean_n_minima'][0]['b_off_gauss']
        assert optimum == pytest.approx(summary['expected_resonance_gauss'][axis], rel=0.05)
    assert summary['axes']['y']['mean_n_minima'][0]['value'] < 1.0


def test_resonance_scan_is_reproducible(tmp_path):
    path = _config(tmp_path, trap={'depth_quanta': [20, 20, 20]},
                   scan={'axes': ['y'], 'b_min_gauss': 0.1, 'b_max_gauss': 0.5, 'points': 21,
                         'duration_ms': 100.0, 'samples': 10})
    assert main.main(['--config', path, 'resonances']) == 0
    summary = _json(tmp_path, 'scan_summary.json')
    assert summary['first_resonance_gauss'] == pytest.approx(0.237, rel=0.1)
    assert list(summary['expected_resonance_gauss']) == ['y']
    first = (tmp_path / 'out' / 'scan.csv').read_bytes()
    assert first.startswith(b'# columns: b_off_gauss [G], survival [1]')

    assert main.main(['--config', path, 'resonances']) == 0
    assert (tmp_path / 'out' / 'scan.csv').read_bytes() == first


def test_cool_writes_trajectory_and_lifetimes(tmp_path):
    path = _config(tmp_path, cool=QUICK_COOL, scan={'axes': ['y']})
    assert main.main(['--config', path, 'cool', '--dump-operators']) == 0
    out = tmp_path / 'out'
    for name in ('trajectory.csv', 'branching.csv', 'hamiltonian.csv', 'lifetimes.json'):
        assert (out / name).exists()
    record = _json(tmp_path, 'lifetimes.json')
    assert record['axis'] == 'y'
    assert record['final_mean_n'] < 0.5
    assert set(record['cooled']) == {'tau_s', 'tau_err_s', 'final_survival', 'mean_lifetime_s'}
    assert record['cooled']['final_survival'] >= record['uncooled']['final_survival']


def test_lifetime_without_cooling_is_first_passage_time(tmp_path):
    path = _config(tmp_path, cool=QUICK_COOL, scan={'axes': ['y']},
                   field={'gradient_gauss_per_um': 0.0}, dissipators={'pump_rate_per_s': 0.0})
    assert main.main(['--config', path, 'cool']) == 0
    gamma, nbar = 300.0 / 1e4, 1e4
    n = np.arange(26)
    up, down = gamma * (nbar + 1) * (n + 1), gamma * nbar * n
    expected = sum(w * mean_first_passage_time(up, down, k)
                   for k, w in enumerate(thermal_distribution(1.0, 25)))
    record = _json(tmp_path, 'lifetimes.json')
    assert record['uncooled']['mean_lifetime_s']['y'] == pytest.approx(expected, rel=0.05)


def test_cooling_without_heating_reaches_ground_state(tmp_path):
    b_res = resonant_field(default_trap(), FieldConfig(), 'y')
    cool = dict(QUICK_COOL, duration_ms=2.0)
    path = _config(tmp_path, cool=cool, scan={'axes': ['y']}, field={'b_off_gauss': b_res},
                   dissipators={'background_heating_quanta_per_ms': 0.0, 'recoil_geometry': 0.0})
    assert main.main(['--config', path, 'cool']) == 0
    assert _json(tmp_path, 'lifetimes.json')['final_mean_n'] < 0.1


THERMO_SPECTRUM = {'min_width_khz': 3.0, 'spacing_khz': 0.5}


def test_thermometry_of_synthesized_spectrum(tmp_path, capsys):
    path = _config(tmp_path, spectrum=THERMO_SPECTRUM)
    assert main.main(['--config', path, 'spectrum', '--mode', 'synth']) == 0
    assert main.main(['--config', path, 'thermometry']) == 0
    assert 'axis=z' in capsys.readouterr().out
    record = _json(tmp_path, 'thermometry.json')
    assert record['z']['mean_n'] == pytest.approx(0.22, rel=0.05)
    assert record['z']['ground_occupation'] == pytest.approx(0.82, abs=0.01)
    assert record['y']['mean_n'] == pytest.approx(0.58, rel=0.1)
    assert [record[a]['half_width_hz'] for a in 'xyz'] == [pytest.approx(15e3)] * 3
    assert record['carrier_half_width_hz'] == pytest.approx(15e3)


def test_thermometry_bands_follow_each_axis(tmp_path):
    path = _config(tmp_path)
    assert main.main(['--config', path, 'spectrum']) == 0
    assert main.main(['--config', path, 'thermometry']) == 0
    record = _json(tmp_path, 'thermometry.json')
    # 10 kHz lines: five linewidths would reach the neighbouring sideband, so each band stops short of it
    assert record['x']['half_width_hz'] == pytest.approx(0.45 * 60e3)
    assert record['y']['half_width_hz'] == pytest.approx(0.45 * 60e3)
    assert record['z']['half_width_hz'] == pytest.approx(0.45 * 79e3)
    assert record['carrier_half_width_hz'] == pytest.approx(0.45 * 94e3)
    assert all(math.isfinite(record[a]['mean_n']) for a in 'xyz')


def test_thermometry_of_cold_spectrum(tmp_path):
    path = _config(tmp_path, spectrum=dict(THERMO_SPECTRUM, mean_n=[0.0, 0.0, 0.0]))
    assert main.main(['--config', path, 'spectrum']) == 0
    assert main.main(['--config', path, 'thermometry']) == 0
    record = _json(tmp_path, 'thermometry.json')
    assert all(record[a]['mean_n'] < 0.01 for a in 'xyz')


def test_overlapping_bands_are_rejected(tmp_path, capsys):
    path = _config(tmp_path, spectrum=THERMO_SPECTRUM)
    assert main.main(['--config', path, 'spectrum']) == 0
    assert main.main(['--config', path, 'thermometry', '--half-width-khz', '50']) == 2
    assert 'overlap' in capsys.readouterr().err


def test_unknown_spectrum_mode(tmp_path):
    assert main.main(['--config', _config(tmp_path), 'spectrum', '--mode', 'fourier']) == 2


def test_fit_of_synthesized_spectrum(tmp_path):
    path = _config(tmp_path)
    assert main.main(['--config', path, 'spectrum']) == 0
    assert main.main(['--config', path, 'fit']) == 0
    report = _json(tmp_path, 'fit.json')['report']
    assert report['mean_n_z'] == pytest.approx(0.22, rel=1e-3)
    assert report['freq_y_khz'] == pytest.approx(94.0, rel=1e-4)
    assert report['freq_y_deviation_pct'] == pytest.approx(13.25, abs=0.01)


def test_pipeline_spectrum_does_not_depend_on_workers(tmp_path):
    signal = {'duration_ms': 5.0, 'realizations': 2}
    outputs = []
    for workers in (1, 2):
        out = tmp_path / f'w{workers}'
        path = _config(tmp_path, f'config{workers}.yaml', signal=signal)
        args = ['--config', path, '--out', str(out), '--workers', str(workers), 'spectrum', '--mode', 'pipeline']
        assert main.main(args) == 0
        outputs.append((out / 'psd.csv').read_bytes())
    assert outputs[0] == outputs[1]


@pytest.mark.slow
def test_click_stream_spectrum_fit_recovers_occupations(tmp_path):
    path = _config(tmp_path)
    assert main.main(['--config', path, '--workers', '2', 'spectrum', '--mode', 'pipeline',
                      '--realizations', '100']) == 0
    assert main.main(['--config', path, 'fit']) == 0
    report = _json(tmp_path, 'fit.json')['report']
    for axis, mean_n, khz in zip('xyz', (1.4, 0.58, 0.22), (154.0, 94.0, 233.0)):
        assert report[f'mean_n_{axis}'] == pytest.approx(mean_n, rel=0.2)
        assert report[f'freq_{axis}_khz'] == pytest.approx(khz, rel=0.02)
        assert math.isfinite(report[f'mean_n_{axis}_err'])
