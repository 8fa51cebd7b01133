import logging
from typing import List, Optional

from core.errors import UsageError
from core.signal_chain import (PsdEstimate, average_psds, psd_standard_error, realization_seed,
                               relative_to_carrier, simulate_click_stream, tones_from_components, welch_psd)
from core.spectroscopy import components_frame, frequency_grid, spectrum_components, synthesize_spectrum

from .base_pipeline import BasePipeline

logger = logging.getLogger(__name__)

MODES = ('synth', 'pipeline')


def _realization_task(args) -> PsdEstimate:
    """One click stream to one carrier-relative PSD. Top level so worker processes can import it."""
    tones, seed, signal = args
    stream = simulate_click_stream(tones, float(signal['mean_rate']), float(signal['duration_ms']) * 1e-3,
                                   seed, carrier_offset=float(signal['carrier_mhz']) * 1e6)
    estimate = welch_psd(stream, window_length=float(signal['window_ms']) * 1e-3,
                         overlap=float(signal['overlap']), bin_width=float(signal['bin_ns']) * 1e-9,
                         scaling=signal['scaling'])
    return relative_to_carrier(estimate, float(signal['carrier_mhz']) * 1e6,
                               float(signal['half_span_khz']) * 1e3)


class SpectrumPipeline(BasePipeline):
    """
    Sideband spectrum of the configured thermal state, either rendered directly ('synth') or
    measured through the simulated photon-click chain ('pipeline').
    """

    def __init__(self, config, processor):
        super().__init__(config, processor)
        self.name = "SpectrumPipeline"

    def components(self):
        section = self._section('spectrum')
        trap = self.config.trap(section['frequencies_khz'])
        return spectrum_components(trap, section['mean_n'], self.config.gamma_sc(),
                                   float(section['min_width_khz']) * 1e3)

    def run(self, mode: Optional[str] = None, realizations: Optional[int] = None, **options) -> List[str]:
        mode = mode or self._section('spectrum')['mode']
        if mode not in MODES:
            raise UsageError(f"Unknown spectrum mode '{mode}', expected one of {list(MODES)}")
        components = self.components()
        written = []
        path = self.out_path('components.csv')
        self.output.write_frame(path, components_frame(components),
                                {'f_hz': 'Hz', 'rate': '1/s', 'width': 'Hz'})
        written.append(path)

        if mode == 'synth':
            written.append(self._synthesize())
        else:
            written.append(self._measure(components, realizations))
        return written

    def _synthesize(self) -> str:
        section = self._section('spectrum')
        trap = self.config.trap(section['frequencies_khz'])
        grid = frequency_grid(float(section['half_span_khz']) * 1e3, float(section['spacing_khz']) * 1e3)
        logger.info(f"[{self.name}] Synthesizing {grid.size} bins for <n>={section['mean_n']}")
        spectrum = synthesize_spectrum(trap, section['mean_n'], self.config.gamma_sc(),
                                       float(section['min_width_khz']) * 1e3, grid,
                                       amplitude=float(section['amplitude']), offset=float(section['offset']))
        path = self.out_path('psd.csv')
        self.output.write_spectrum(path, spectrum)
        return path

    def _measure(self, components, realizations: Optional[int]) -> str:
        signal = self._section('signal')
        count = int(realizations if realizations is not None else signal['realizations'])
        if count < 1:
            raise UsageError(f"Need at least one realization, got {count}")
        tones = tones_from_components(components, float(signal['modulation_depth']))
        logger.info(f"[{self.name}] {count} realizations of {float(signal['duration_ms'])} ms with "
                    f"{len(tones)} tones, master seed {self.seed}")
        tasks = [(tones, realization_seed(self.seed, k), signal) for k in range(count)]
        estimates = self.processor.map(_realization_task, tasks)
        average = average_psds(estimates)
        path = self.out_path('psd.csv')
        self.output.write_spectrum(path, average.spectrum, psd_standard_error(estimates))
        return path
