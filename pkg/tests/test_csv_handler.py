import numpy as np
import pandas as pd

from core.csv_handler import CSVHandler
from core.quantum import HilbertSpace, fock_annihilation
from core.signal_chain import simulate_click_stream
from core.spectroscopy import Spectrum


def test_header_names_columns_and_units(tmp_path):
    handler = CSVHandler(str(tmp_path / 'out'))
    path = handler.path('table.csv')
    handler.write_frame(path, pd.DataFrame({'t_s': [0.0, 1e-5], 'survival': [1.0, 0.5]}),
                        {'t_s': 's'}, ['axis=y'])
    with open(path, encoding='utf-8') as f:
        lines = f.read().splitlines()
    assert lines[0] == '# columns: t_s [s], survival'
    assert lines[1] == '# axis=y'
    assert lines[2] == 't_s,survival'
    assert lines[3] == '0,1'
    assert lines[4] == '1e-05,0.5'


def test_spectrum_file(tmp_path):
    handler = CSVHandler(str(tmp_path))
    spectrum = Spectrum(np.arange(-2.0, 3.0), np.array([0.1, 0.2, 1.0 / 3.0, 0.2, 0.1]),
                        resolution_bandwidth=1000.0, averages=7)
    path = handler.path('psd.csv')
    handler.write_spectrum(path, spectrum, errors=np.full(5, 0.01))
    back = handler.read_spectrum(path)
    assert back.resolution_bandwidth == 1000.0
    assert back.averages == 7
    assert np.allclose(back.psd, spectrum.psd, rtol=1e-11)
    assert list(handler.read_frame(path).columns) == ['freq_hz', 'psd', 'psd_err']


def test_click_csv(tmp_path):
    handler = CSVHandler(str(tmp_path))
    stream = simulate_click_stream([], 1e5, 0.01, seed=3)
    path = handler.path('clicks.csv')
    handler.write_click_csv(path, stream)
    back = handler.read_click_csv(path)
    assert back.seed == 3
    assert back.duration == stream.duration
    assert np.allclose(back.timestamps, stream.timestamps, rtol=1e-11)


def test_operator_triplets(tmp_path):
    handler = CSVHandler(str(tmp_path))
    space = HilbertSpace(1, 2)
    path = handler.path('a.csv')
    handler.write_operator_triplets(path, fock_annihilation(space))
    frame = handler.read_frame(path)
    assert list(frame.columns) == ['row', 'col', 're', 'im']
    assert len(frame) == space.n_spin * space.n_max
    assert list(frame['row'][:2]) == [0, 1] and list(frame['col'][:2]) == [1, 2]
    assert np.allclose(frame['re'][:2], [1.0, np.sqrt(2.0)])


def test_json_accepts_numpy_values(tmp_path):
    handler = CSVHandler(str(tmp_path))
    path = handler.path('record.json')
    handler.write_json(path, {'n': np.float64(0.5), 'k': np.int64(3), 'ok': np.bool_(True),
                              'v': np.arange(2.0)})
    assert handler.read_json(path) == {'n': 0.5, 'k': 3, 'ok': True, 'v': [0.0, 1.0]}
