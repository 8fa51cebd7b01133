import json
import logging
import os
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .quantum import OperatorMatrix
from .signal_chain import ClickStream
from .spectroscopy import Spectrum

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.12g'


class CSVHandler:
    """CSV artifacts with a '#'-prefixed header naming columns and units, plus JSON records."""

    def __init__(self, out_dir: Optional[str] = None):
        self.out_dir = out_dir
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name) if self.out_dir else name

    def write_frame(self, path: str, frame: pd.DataFrame, units: Optional[Dict[str, str]] = None,
                    notes: Optional[List[str]] = None):
        """
        Write frame as CSV. Floats use a fixed format so identical inputs give identical bytes.
        """
        if frame.empty:
            logger.warning(f"No rows to write to {path}.")
        units = units or {}
        columns = ', '.join(f"{c} [{units[c]}]" if c in units else c for c in frame.columns)
        with open(path, 'w', encoding='utf-8', newline='') as f:
            f.write(f"# columns: {columns}\n")
            for note in notes or []:
                f.write(f"# {note}\n")
            frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
        logger.info(f"Wrote {len(frame)} rows to {path}")

    def read_frame(self, path: str) -> pd.DataFrame:
        if not os.path.exists(path):
            raise FileNotFoundError(f"File not found: {path}")
        return pd.read_csv(path, comment='#')

    def write_spectrum(self, path: str, spectrum: Spectrum, errors: Optional[np.ndarray] = None):
        """psd.csv; `errors` adds a psd_err column (standard error across realizations)."""
        notes = [f"resolution_bandwidth_hz={spectrum.resolution_bandwidth:.12g}",
                 f"averages={spectrum.averages}"]
        frame = spectrum.to_frame()
        if errors is not None:
            frame['psd_err'] = np.asarray(errors, dtype=float)
        self.write_frame(path, frame, {'freq_hz': 'Hz', 'psd': 'arb', 'psd_err': 'arb'}, notes)

    def read_spectrum(self, path: str) -> Spectrum:
        frame = self.read_frame(path)
        missing = {'freq_hz', 'psd'} - set(frame.columns)
        if missing:
            raise ValueError(f"{path} lacks columns {sorted(missing)}")
        meta = self._read_notes(path)
        return Spectrum(frame['freq_hz'].to_numpy(), frame['psd'].to_numpy(),
                        resolution_bandwidth=float(meta.get('resolution_bandwidth_hz', 0.0)),
                        averages=int(float(meta.get('averages', 1))),
                        metadata={'source': path})

    def _read_notes(self, path: str) -> Dict[str, str]:
        notes = {}
        with open(path, 'r', encoding='utf-8') as f:
            for line in f:
                if not line.startswith('#'):
                    break
                key, sep, value = line[1:].strip().partition('=')
                if sep:
                    notes[key.strip()] = value.strip()
        return notes

    def write_json(self, path: str, record: Dict[str, object]):
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(record, f, indent=2, sort_keys=False, default=_json_default)
            f.write('\n')
        logger.info(f"Wrote {path}")

    def read_json(self, path: str) -> Dict[str, object]:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)

    def write_operator_triplets(self, path: str, operator: OperatorMatrix):
        """Nonzero entries as (row, col, re, im) in the basis order of operator.space."""
        coo = sp.coo_matrix(operator.matrix)
        order = np.lexsort((coo.col, coo.row))
        frame = pd.DataFrame({'row': coo.row[order], 'col': coo.col[order],
                              're': coo.data[order].real, 'im': coo.data[order].imag})
        notes = [f"dim={operator.space.dim}", f"f_total={operator.space.f_total}",
                 f"n_max={operator.space.n_max}", f"units={operator.units}",
                 "index = (m_F + F) * (n_max + 1) + n"]
        self.write_frame(path, frame, notes=notes)

    def write_click_csv(self, path: str, stream: ClickStream):
        self.write_frame(path, pd.DataFrame({'t_s': stream.timestamps}), {'t_s': 's'},
                         [f"duration_s={stream.duration:.17g}", f"seed={stream.seed}"])

    def read_click_csv(self, path: str) -> ClickStream:
        meta = self._read_notes(path)
        frame = self.read_frame(path)
        return ClickStream(float(meta['duration_s']), frame['t_s'].to_numpy(), int(meta.get('seed', 0)))


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Cannot serialize {type(value).__name__}")
