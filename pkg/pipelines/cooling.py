import logging
import math
from typing import Dict, List, Optional

from core.dynamics import branching_frame, lindblad_evolve, steady_state
from core.errors import DrcError, FitDiverged, SingularBalanceMatrix
from core.quantum import DensityState, HilbertSpace, rotating_frame_hamiltonian
from core.rate_model import CoolingSetup, mean_lifetime, survival_lifetime, survival_trajectory

from .base_pipeline import BasePipeline

logger = logging.getLogger(__name__)


class CoolingPipeline(BasePipeline):
    """
    Full density-matrix cooling run on one axis, plus trap lifetimes with the pump on and off
    from the rate-equation model.
    """

    def __init__(self, config, processor):
        super().__init__(config, processor)
        self.name = "CoolingPipeline"

    def run(self, dump_operators: bool = False, **options) -> List[str]:
        cool = self._section('cool')
        axis = cool['axis']
        setup = self.config.cooling_setup()
        space = HilbertSpace(setup.field.f_total, int(cool['n_max']))
        hamiltonian = rotating_frame_hamiltonian(setup.trap, setup.field, space, setup.laser, axis,
                                                 setup.coupling(axis))
        dissipators = setup.dissipators(axis)
        rho0 = DensityState.thermal(space, float(cool['initial_mean_n']))

        written = []
        duration = float(cool['duration_ms']) * 1e-3
        dt = float(cool['dt_us']) * 1e-6
        logger.info(f"[{self.name}] Axis {axis}: dim={space.dim}, <n>0={cool['initial_mean_n']}, "
                    f"t={duration:.3e} s")
        trajectory = lindblad_evolve(hamiltonian, dissipators, rho0, duration, dt,
                                     method=cool['method'], absorbing=bool(cool['absorbing']), axis=axis)
        path = self.out_path('trajectory.csv')
        units = {'t_s': 's', f'mean_n_{axis}': 'quanta', 'survival': '1'}
        self.output.write_frame(path, trajectory.to_frame(), units,
                                [f"axis={axis}", f"method={cool['method']}", f"n_max={space.n_max}"])
        written.append(path)

        path = self.out_path('branching.csv')
        self.output.write_frame(path, branching_frame(space.f_total))
        written.append(path)

        if dump_operators:
            path = self.out_path('hamiltonian.csv')
            self.output.write_operator_triplets(path, hamiltonian)
            written.append(path)

        record = {
            'axis': axis,
            'final_mean_n': float(trajectory.mean_n[axis][-1]),
            'final_ground_fidelity': float(trajectory.populations[axis][-1][0, 0]),
            'steady_state': self._steady_state(hamiltonian, dissipators),
            'cooled': self._lifetime(setup, 'cooled'),
            'uncooled': self._lifetime(self.config.cooling_setup(pump=False), 'uncooled'),
        }
        cooled, uncooled = record['cooled']['tau_s'], record['uncooled']['tau_s']
        record['enhancement'] = cooled / uncooled if cooled and uncooled else None
        path = self.out_path('lifetimes.json')
        self.output.write_json(path, record)
        written.append(path)

        logger.info(f"[{self.name}] axis={axis} <n>_final={record['final_mean_n']:.4f} "
                    f"tau_cooled={_fmt(cooled)} s tau_uncooled={_fmt(uncooled)} s")
        return written

    def _steady_state(self, hamiltonian, dissipators) -> Optional[Dict[str, object]]:
        try:
            state = steady_state(hamiltonian, dissipators)
        except DrcError as exc:
            logger.warning(f"[{self.name}] No steady state: {type(exc).__name__}: {exc}")
            return None
        return {'mean_n': state.mean_n(), 'ground_fidelity': state.population(-state.space.f_total, 0),
                'origin': state.origin}

    def _lifetime(self, setup: CoolingSetup, label: str) -> Dict[str, object]:
        cool = self._section('cool')
        initial = float(self._section('scan')['initial_mean_n'])
        trajectory = survival_trajectory(setup, float(cool['lifetime_duration_ms']) * 1e-3,
                                         samples=int(cool['lifetime_samples']), initial_mean_n=initial)
        record = {'tau_s': None, 'tau_err_s': None,
                  'final_survival': float(trajectory.survival[-1]),
                  'mean_lifetime_s': {}}
        try:
            record['tau_s'], record['tau_err_s'] = survival_lifetime(trajectory)
        except FitDiverged as exc:
            logger.warning(f"[{self.name}] {label} lifetime: {exc}")
        for axis in setup.axes:
            try:
                record['mean_lifetime_s'][axis] = mean_lifetime(setup, axis, initial)
            except SingularBalanceMatrix:
                record['mean_lifetime_s'][axis] = None
        return record


def _fmt(value) -> str:
    return 'inf' if value is None or not math.isfinite(value) else f"{value:.4g}"
