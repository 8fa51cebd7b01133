import logging
from typing import List, Optional, Tuple

from core.errors import UsageError
from core.spectroscopy import band_half_widths, check_bands, integrate_band, sideband_thermometry
from core.trap_model import AXES, lamb_dicke

from .base_pipeline import BasePipeline

logger = logging.getLogger(__name__)


class ThermometryPipeline(BasePipeline):
    """Model-free <n_i> from the red/blue sideband band integrals of a PSD file."""

    def __init__(self, config, processor):
        super().__init__(config, processor)
        self.name = "ThermometryPipeline"

    def centers(self) -> List[float]:
        section = self._section('thermometry')
        khz = section['frequencies_khz'] or self._section('spectrum')['frequencies_khz']
        if len(khz) != 3:
            raise UsageError(f"Need three sideband frequencies (x, y, z), got {len(khz)}")
        return [float(f) * 1e3 for f in khz]

    def half_widths(self, centers: List[float], half_width_khz: Optional[float] = None) -> Tuple[List[float], float]:
        """
        Per-axis band half-widths and the carrier half-width, in Hz. A fixed half-width (command line,
        then config) applies to every band; otherwise each axis takes its own from its sideband width.
        """
        section = self._section('thermometry')
        fixed = half_width_khz if half_width_khz is not None else section['half_width_khz']
        if fixed is not None:
            half = float(fixed) * 1e3
            return [half] * 3, half
        trap = self.config.trap([c / 1e3 for c in centers])
        min_width = float(self._section('spectrum')['min_width_khz']) * 1e3
        return band_half_widths(centers, [lamb_dicke(trap, axis) for axis in AXES], self.config.gamma_sc(),
                                min_width, float(section['half_width_linewidths']))

    def run(self, psd_file: Optional[str] = None, half_width_khz: Optional[float] = None,
            **options) -> List[str]:
        section = self._section('thermometry')
        psd_file = psd_file or self.out_path('psd.csv')
        centers = self.centers()
        halves, carrier = self.half_widths(centers, half_width_khz)
        try:
            check_bands(centers, halves, carrier)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        logger.info(f"[{self.name}] Band half-widths {[round(h / 1e3, 2) for h in halves]} kHz, "
                    f"carrier {carrier / 1e3:.2f} kHz")

        spectrum = self.output.read_spectrum(psd_file)
        edge = float(section['edge_fraction'])
        record = {'source': psd_file, 'carrier_half_width_hz': carrier}
        for axis, center, half_width in zip(AXES, centers, halves):
            s_minus, s_minus_err = integrate_band(spectrum, -center, half_width, edge)
            s_plus, s_plus_err = integrate_band(spectrum, center, half_width, edge)
            result = sideband_thermometry(s_minus, s_plus, s_minus_err, s_plus_err)
            record[axis] = {'center_hz': center, 'half_width_hz': half_width,
                            's_minus': s_minus, 's_minus_err': s_minus_err,
                            's_plus': s_plus, 's_plus_err': s_plus_err, 'mean_n': result.mean_n,
                            'mean_n_err': result.error, 'ground_occupation': result.ground_occupation}
            print(f"axis={axis} mean_n={result.mean_n:.4f} err={result.error:.4f} "
                  f"p0={result.ground_occupation:.4f}")
        path = self.out_path('thermometry.json')
        self.output.write_json(path, record)
        return [path]
