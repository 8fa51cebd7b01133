import logging
from typing import List, Optional

from core.errors import FitDiverged
from core.fitting import FitOptions, SpectrumModel, fit_multistart, fit_report, fit_spectrum, initial_guess
from core.trap_model import AXES

from .base_pipeline import BasePipeline

logger = logging.getLogger(__name__)


class FitPipeline(BasePipeline):
    """Levenberg-Marquardt fit of the sideband model to a PSD file; writes fit.json."""

    def __init__(self, config, processor):
        super().__init__(config, processor)
        self.name = "FitPipeline"

    def options(self) -> FitOptions:
        fit = self._section('fit')
        return FitOptions(max_iterations=int(fit['max_iterations']),
                          initial_damping=float(fit['initial_damping']),
                          log_occupation=bool(fit['log_occupation']),
                          release_anharmonicity=bool(fit['release_anharmonicity']),
                          exclude_hz=float(fit['exclude_khz']) * 1e3)

    def model(self) -> SpectrumModel:
        # eta_i stay at the values of the configured spectral trap
        section = self._section('spectrum')
        return SpectrumModel(self.config.trap(section['frequencies_khz']), self.config.gamma_sc())

    def run(self, psd_file: Optional[str] = None, **options) -> List[str]:
        fit = self._section('fit')
        psd_file = psd_file or self.out_path('psd.csv')
        data = self.output.read_spectrum(psd_file)
        frame = self.output.read_frame(psd_file)
        sigma = None
        if fit['weighted']:
            if 'psd_err' in frame.columns and (frame['psd_err'] > 0).all():
                sigma = frame['psd_err'].to_numpy()
            else:
                logger.warning(f"[{self.name}] {psd_file} has no usable psd_err column; fitting unweighted")

        model = self.model()
        fit_options = self.options()
        ab_initio = self.config.ab_initio_trap()
        min_width = float(self._section('spectrum')['min_width_khz']) * 1e3
        initial = initial_guess(data, ab_initio.omega, model.gamma_sc, min_width, model,
                                exclude_hz=fit_options.exclude_hz)
        logger.info(f"[{self.name}] Initial guess <n>={[round(n, 3) for n in initial.mean_n]}")

        starts = int(fit['starts'])
        if starts > 1:
            result = fit_multistart(data, initial, model, starts=starts, seed=self.seed,
                                    options=fit_options, sigma=sigma, mapper=self.processor.map)
        else:
            result = fit_spectrum(data, initial, model, options=fit_options, sigma=sigma)
        if not result.converged:
            raise FitDiverged(f"No convergence after {result.iterations} iterations "
                              f"(residual norm {result.residual_norm:.3e})")

        report = fit_report(result, ab_initio)
        record = {'source': psd_file, 'fit': result.to_record(), 'report': report}
        path = self.out_path('fit.json')
        self.output.write_json(path, record)
        summary = ' '.join(f"<n_{a}>={report[f'mean_n_{a}']:.4f}+-{report[f'mean_n_{a}_err']:.4f}"
                           for a in AXES)
        logger.info(f"[{self.name}] {summary}")
        return [path]
