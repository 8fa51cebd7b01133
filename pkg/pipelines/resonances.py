import logging
from typing import List

import numpy as np

from core.errors import UsageError
from core.rate_model import axis_resonances, find_resonances, scan_laser, scan_offset_field
from core.trap_model import resonant_field

from .base_pipeline import BasePipeline

logger = logging.getLogger(__name__)

SCAN_UNITS = {'b_off_gauss': 'G', 'survival': '1', 'mean_n_x': 'quanta', 'mean_n_y': 'quanta',
              'mean_n_z': 'quanta', 'tau_s': 's', 'survival_x': '1', 'survival_y': '1', 'survival_z': '1'}
LASER_UNITS = {'detuning_gamma': 'Gamma', 'intensity_sat': 'I_sat', 'survival': '1',
               'mean_n_x': 'quanta', 'mean_n_y': 'quanta', 'mean_n_z': 'quanta'}


class ResonancesPipeline(BasePipeline):
    """Survival versus offset field, its resonances, and optionally survival versus laser settings."""

    def __init__(self, config, processor):
        super().__init__(config, processor)
        self.name = "ResonancesPipeline"

    def field_grid(self) -> np.ndarray:
        scan = self._section('scan')
        points = int(scan['points'])
        if points < 2:
            raise UsageError(f"scan.points must be at least 2, got {points}")
        low, high = float(scan['b_min_gauss']), float(scan['b_max_gauss'])
        if not high > low:
            raise UsageError(f"scan.b_max_gauss ({high}) must exceed scan.b_min_gauss ({low})")
        return np.linspace(low, high, points)

    def run(self, laser_scan: bool = False, **options) -> List[str]:
        scan = self._section('scan')
        setup = self.config.cooling_setup()
        grid = self.field_grid()
        logger.info(f"[{self.name}] Scanning {grid.size} offset fields on axes {list(setup.axes)} "
                    f"({scan['model']} model)")

        frame = scan_offset_field(setup, grid, float(scan['duration_ms']) * 1e-3,
                                  samples=int(scan['samples']),
                                  initial_mean_n=float(scan['initial_mean_n']),
                                  model=scan['model'], mapper=self.processor.map)
        written = []
        path = self.out_path('scan.csv')
        self.output.write_frame(path, frame, SCAN_UNITS, [f"model={scan['model']}",
                                                         f"duration_s={float(scan['duration_ms']) * 1e-3:.6g}"])
        written.append(path)

        resonances = find_resonances(frame['b_off_gauss'], frame['survival'], frame['mean_n_y'])
        if not resonances:
            logger.warning(f"[{self.name}] No interior survival maximum in the scanned range")
        per_axis = {axis: axis_resonances(frame, axis) for axis in setup.axes}
        first_axis, first = self._first_resonance(resonances, per_axis)
        expected = {axis: resonant_field(setup.trap, setup.field, axis) for axis in setup.axes}
        summary = {
            'resonances': resonances,
            'axes': per_axis,
            'first_resonance_gauss': first,
            'first_resonance_axis': first_axis,
            'expected_resonance_gauss': expected,
            'best_survival': float(frame['survival'].max()),
            'worst_survival': float(frame['survival'].min()),
        }
        path = self.out_path('scan_summary.json')
        self.output.write_json(path, summary)
        written.append(path)
        for r in resonances:
            logger.info(f"[{self.name}] Resonance b_off={r['b_off_gauss']:.4f} G {r['kind']}={r['value']:.6g}")

        if laser_scan:
            written.append(self._laser_scan(setup))
        return written

    def _first_resonance(self, combined: list, per_axis: dict):
        """
        Lowest cooling optimum of the cooled axis (cool.axis). The product of three survivals is
        dominated by the weakly coupled axes, so it only decides when that axis was not scanned.
        """
        axis = self._section('cool')['axis']
        if axis in per_axis:
            optima = per_axis[axis]['mean_n_minima'] or per_axis[axis]['survival_maxima']
            if optima:
                return axis, optima[0]['b_off_gauss']
        if combined:
            return 'combined', combined[0]['b_off_gauss']
        return None, None

    def _laser_scan(self, setup) -> str:
        scan = self._section('scan')
        b_off = float(scan['laser_b_off_gauss'])
        logger.info(f"[{self.name}] Laser scan at b_off={b_off} G")
        frame = scan_laser(setup.with_field(b_off), scan['laser_detunings_gamma'],
                           scan['laser_intensities_sat'], float(scan['laser_duration_ms']) * 1e-3,
                           samples=int(scan['samples']),
                           initial_mean_n=float(scan['initial_mean_n']),
                           model=scan['model'], mapper=self.processor.map)
        path = self.out_path('laser_scan.csv')
        self.output.write_frame(path, frame, LASER_UNITS, [f"b_off_gauss={b_off:.6g}"])
        return path
