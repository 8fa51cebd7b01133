"""
Rate-Equation Model
Classical master equation on the states (m_F, n) of one axis. The coherent exchange
|m_F, n> <-> |m_F+1, n-1> is replaced by the golden-rule rate 2 g^2 gc / (d^2 + gc^2), where gc is
the decay rate of the pair coherence. Pumping, recoil and background heating are classical jumps.

Also hosts the offset-field and laser scans, survival curves and lifetime estimates.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.linalg import expm
from scipy.optimize import curve_fit
from scipy.sparse.linalg import splu

from .dynamics import (BACKGROUND_OCCUPATION, RECOIL_GEOMETRY, CoolingTrajectory, DissipatorSet,
                       build_dissipators, lindblad_evolve)
from .errors import FitDiverged, SingularBalanceMatrix, UsageError
from .quantum import DensityState, HilbertSpace, rotating_frame_hamiltonian, thermal_distribution
from .trap_model import (AXES, Axis, FieldConfig, LaserConfig, TrapConfig, axis_index,
                         spin_motion_coupling, zeeman_splitting)

logger = logging.getLogger(__name__)

FLAT_SURVIVAL_TOL = 1e-6
PLATEAU_RTOL = 1e-12
SCAN_COLUMNS = ['b_off_gauss', 'survival', 'mean_n_x', 'mean_n_y', 'mean_n_z', 'tau_s',
                'survival_x', 'survival_y', 'survival_z']


@dataclass(frozen=True)
class CoolingSetup:
    """Everything needed to run DRC on the three axes as independent 1D problems."""
    trap: TrapConfig
    field: FieldConfig
    laser: LaserConfig
    background_heating: float = 300.0          # quanta/s per axis
    recoil_geometry: float = RECOIL_GEOMETRY
    background_occupation: float = BACKGROUND_OCCUPATION
    coupling_scale: float = 0.3                # Omega_x,z = scale * Omega_y
    pump: bool = True
    pump_rate: Optional[float] = None          # overrides the laser-derived rate, 1/s
    axes: Tuple[str, ...] = AXES

    def __post_init__(self):
        object.__setattr__(self, 'axes', tuple(AXES[axis_index(a)] for a in self.axes))
        if not self.axes:
            raise ValueError("At least one axis must be simulated")
        if self.coupling_scale < 0:
            raise ValueError(f"coupling_scale must be non-negative, got {self.coupling_scale}")

    def coupling(self, axis: Axis) -> float:
        omega_y = spin_motion_coupling(self.trap, self.field, 'y')
        return omega_y if axis_index(axis) == 1 else self.coupling_scale * omega_y

    def dissipators(self, axis: Axis) -> DissipatorSet:
        rate = self.pump_rate if self.pump else 0.0
        return build_dissipators(self.laser, self.trap, axis,
                                 background_heating=self.background_heating,
                                 recoil_geometry=self.recoil_geometry,
                                 background_occupation=self.background_occupation,
                                 f_total=self.field.f_total, pump_rate=rate)

    def with_field(self, b_off: float) -> 'CoolingSetup':
        return replace(self, field=replace(self.field, b_off=b_off))

    def with_laser(self, detuning: float, intensity: float) -> 'CoolingSetup':
        return replace(self, laser=replace(self.laser, detuning=detuning, intensity=intensity))


def exchange_rate(g: float, detuning: float, gamma_c: float) -> float:
    """Golden-rule transfer rate between two states coupled by g with coherence decay gamma_c."""
    if gamma_c <= 0:
        return 0.0
    return 2.0 * g * g * gamma_c / (detuning * detuning + gamma_c * gamma_c)


def _jump_out_rate(dissipators: DissipatorSet, m: int, n: int) -> float:
    """Total jump rate out of |m, n>, self-returning pump events included."""
    scatter = dissipators.scattering(m)
    total = scatter * (1.0 + dissipators.recoil_heating * (2 * n + 1))
    if dissipators.background_heating > 0:
        gamma = dissipators.background_heating / dissipators.background_occupation
        nbar = dissipators.background_occupation
        total += gamma * ((nbar + 1) * (n + 1) + nbar * n)
    return total


def rate_generator(space: HilbertSpace, omega: float, delta: float, coupling: float,
                   dissipators: DissipatorSet, absorbing: bool = False) -> sp.csc_matrix:
    """
    dP/dt = G P on the flattened (m_F, n) populations, spin-major like the quantum basis.
    G[j, i] is the rate i -> j; with `absorbing`, upward jumps out of n_max leave the system.
    """
    f = space.f_total
    rows, cols, vals = [], [], []
    outflow = np.zeros(space.dim)

    def add(src: int, dst: int, rate: float):
        if rate > 0:
            rows.append(dst)
            cols.append(src)
            vals.append(rate)
            outflow[src] += rate

    gamma = nbar = 0.0
    if dissipators.background_heating > 0:
        gamma = dissipators.background_heating / dissipators.background_occupation
        nbar = dissipators.background_occupation

    for m in range(-f, f + 1):
        scatter = dissipators.scattering(m)
        for n in range(space.n_fock):
            i = space.index(m, n)
            for final, weight in dissipators.branching[m].items():
                if final != m:
                    add(i, space.index(final, n), scatter * weight)
            up = scatter * dissipators.recoil_heating * (n + 1) + gamma * (nbar + 1) * (n + 1)
            down = scatter * dissipators.recoil_heating * n + gamma * nbar * n
            if n < space.n_max:
                add(i, space.index(m, n + 1), up)
            elif absorbing:
                outflow[i] += up
            if n > 0:
                add(i, space.index(m, n - 1), down)

    detuning = delta - omega
    for m in range(-f, f):
        spin = math.sqrt(f * (f + 1) - m * (m + 1))
        for n in range(1, space.n_fock):
            a, b = space.index(m, n), space.index(m + 1, n - 1)
            g = coupling * math.sqrt(n) * spin
            gamma_c = 0.5 * (_jump_out_rate(dissipators, m, n) + _jump_out_rate(dissipators, m + 1, n - 1))
            k = exchange_rate(g, detuning, gamma_c)
            add(a, b, k)
            add(b, a, k)

    generator = sp.coo_matrix((vals, (rows, cols)), shape=(space.dim, space.dim)).tocsc()
    return generator - sp.diags(outflow, format='csc')


def _axis_terms(trap: TrapConfig, field: FieldConfig, axis: Axis, laser: Optional[LaserConfig],
                coupling: Optional[float]) -> Tuple[float, float, float]:
    omega = trap.omega[axis_index(axis)]
    delta = zeeman_splitting(field) + (laser.ac_stark_shift_per_mf if laser is not None else 0.0)
    strength = spin_motion_coupling(trap, field, 'y') if coupling is None else coupling
    return omega, delta, strength


def _solve_balance(generator: sp.csc_matrix, residual_tol: float = 1e-9) -> np.ndarray:
    dim = generator.shape[0]
    coo = generator.tocoo()
    keep = coo.row != 0
    system = sp.csc_matrix((np.concatenate([coo.data[keep], np.ones(dim)]),
                            (np.concatenate([coo.row[keep], np.zeros(dim, dtype=int)]),
                             np.concatenate([coo.col[keep], np.arange(dim)]))), shape=generator.shape)
    rhs = np.zeros(dim)
    rhs[0] = 1.0
    try:
        p = splu(system).solve(rhs)
    except RuntimeError as exc:
        raise SingularBalanceMatrix(f"Balance matrix is singular: {exc}") from exc
    scale = np.max(np.abs(generator.diagonal())) or 1.0
    if not np.all(np.isfinite(p)) or np.max(np.abs(generator @ p)) / scale > residual_tol:
        raise SingularBalanceMatrix("Balance equations have no unique normalized solution")
    if p.min() < -1e-9:
        raise SingularBalanceMatrix(f"Stationary solution has negative population {p.min():.3e}")
    p = np.clip(p, 0.0, None)
    return p / p.sum()


@dataclass
class RateSteadyState:
    populations: np.ndarray          # (2F+1, n_max+1)
    mean_n: float
    ground_fidelity: float           # P(m_F = -F, n = 0)


def rate_equation_steady_state(trap: TrapConfig, field: FieldConfig, dissipators: DissipatorSet,
                               axis: Axis = 'y', n_max: Optional[int] = None,
                               laser: Optional[LaserConfig] = None, coupling: Optional[float] = None,
                               weak_coupling: bool = False) -> RateSteadyState:
    """
    Stationary populations of the classical chain (reflecting at n_max, default the trap depth).
    Pass weak_coupling=True to acknowledge the regime; otherwise a strong coupling is logged.
    """
    n_max = trap.trap_depth_quanta[axis_index(axis)] if n_max is None else n_max
    space = HilbertSpace(field.f_total, n_max)
    omega, delta, strength = _axis_terms(trap, field, axis, laser, coupling)
    if not weak_coupling and strength > 0.2 * dissipators.pump_rate:
        logger.warning(f"Omega={strength:.3e} rad/s is not small against R_p={dissipators.pump_rate:.3e} /s; "
                       "golden-rule rates may be inaccurate")
    p = _solve_balance(rate_generator(space, omega, delta, strength, dissipators))
    table = p.reshape(space.n_spin, space.n_fock)
    return RateSteadyState(populations=table,
                           mean_n=float(table.sum(axis=0) @ np.arange(space.n_fock)),
                           ground_fidelity=float(table[0, 0]))


def birth_death_steady_state(up: Sequence[float], down: Sequence[float]) -> np.ndarray:
    """
    Stationary distribution of a chain on 0..N-1 with up[n]: n -> n+1 and down[n]: n -> n-1.
    up[N-1] and down[0] are ignored.
    """
    up = np.asarray(up, dtype=float)
    down = np.asarray(down, dtype=float)
    if up.shape != down.shape or up.ndim != 1 or up.size < 1:
        raise ValueError("up and down must be 1D arrays of the same length")
    log_p = np.zeros(up.size)
    for n in range(1, up.size):
        if up[n - 1] == 0:
            log_p[n:] = -np.inf
            break
        if down[n] == 0:
            raise SingularBalanceMatrix(f"Level {n} is entered but never left downward")
        log_p[n] = log_p[n - 1] + math.log(up[n - 1]) - math.log(down[n])
    p = np.exp(log_p - log_p.max())
    return p / p.sum()


def mean_first_passage_time(up: Sequence[float], down: Sequence[float], start: int = 0) -> float:
    """
    Mean time for a chain on 0..N-1 started at `start` to leave through the top (up[N-1] is the
    loss rate out of the last level).
    """
    up = np.asarray(up, dtype=float)
    down = np.asarray(down, dtype=float)
    size = up.size
    if not 0 <= start < size:
        raise ValueError(f"Start level {start} outside 0..{size - 1}")
    generator = np.zeros((size, size))
    for n in range(size):
        generator[n, n] = -up[n] - (down[n] if n > 0 else 0.0)
        if n + 1 < size:
            generator[n + 1, n] = up[n]
        if n > 0:
            generator[n - 1, n] = down[n]
    p0 = np.zeros(size)
    p0[start] = 1.0
    return mean_absorption_time(sp.csc_matrix(generator), p0)


def mean_absorption_time(generator: sp.spmatrix, p0: np.ndarray) -> float:
    """Integral of the survival probability, -1^T G^-1 p0, for a leaking generator."""
    try:
        x = splu(sp.csc_matrix(generator)).solve(np.asarray(p0, dtype=float))
    except RuntimeError as exc:
        raise SingularBalanceMatrix("Generator has no loss channel; the atom is never absorbed") from exc
    return float(-x.sum())


def _initial_populations(space: HilbertSpace, mean_n: float) -> np.ndarray:
    table = np.zeros((space.n_spin, space.n_fock))
    table[0] = thermal_distribution(mean_n, space.n_max)
    return table


def _axis_trajectory(setup: CoolingSetup, axis: str, times: np.ndarray, initial_mean_n: float,
                     model: str) -> Tuple[np.ndarray, np.ndarray]:
    """Populations (samples, 2F+1, n_max+1) for one axis with an absorbing boundary at the trap depth."""
    n_max = setup.trap.trap_depth_quanta[axis_index(axis)]
    space = HilbertSpace(setup.field.f_total, n_max)
    dissipators = setup.dissipators(axis)
    coupling = setup.coupling(axis)

    if model == 'rate':
        omega, delta, strength = _axis_terms(setup.trap, setup.field, axis, setup.laser, coupling)
        generator = rate_generator(space, omega, delta, strength, dissipators, absorbing=True)
        p0 = _initial_populations(space, initial_mean_n).ravel()
        block = np.empty((times.size, space.dim))
        block[0] = p0
        if times.size > 1:
            step = expm(generator.toarray() * (times[1] - times[0]))
            for k in range(1, times.size):
                block[k] = step @ block[k - 1]
        block = np.clip(block, 0.0, None)
        return block.reshape(times.size, space.n_spin, space.n_fock)

    if model == 'lindblad':
        hamiltonian = rotating_frame_hamiltonian(setup.trap, setup.field, space, setup.laser, axis, coupling)
        rho0 = DensityState.from_populations(space, _initial_populations(space, initial_mean_n))
        dt = times[1] - times[0]
        trajectory = lindblad_evolve(hamiltonian, dissipators, rho0, times[-1], dt,
                                     absorbing=True, axis=axis)
        return trajectory.populations[axis]

    raise UsageError(f"Unknown dynamics model '{model}', expected 'rate' or 'lindblad'")


def survival_trajectory(setup: CoolingSetup, duration: float, samples: int = 50,
                        initial_mean_n: float = 1.0, model: str = 'rate') -> CoolingTrajectory:
    """
    Survival and conditional <n_i>(t) with an absorbing boundary at the trap depth of every axis.
    The 3D survival is the product of the per-axis survivals.
    """
    if samples < 1 or not duration > 0:
        raise ValueError("duration must be positive and samples >= 1")
    times = np.linspace(0.0, duration, samples + 1)
    survival = np.ones_like(times)
    mean_n, populations = {}, {}
    for axis in setup.axes:
        pops = _axis_trajectory(setup, axis, times, initial_mean_n, model)
        fock = pops.sum(axis=1)
        trapped = fock.sum(axis=1)
        survival = survival * trapped
        weighted = fock @ np.arange(fock.shape[1])
        mean_n[axis] = np.divide(weighted, trapped, out=np.zeros_like(weighted), where=trapped > 0)
        populations[axis] = pops
    return CoolingTrajectory(times=times, mean_n=mean_n, populations=populations,
                             survival=survival, method=model)


def _exponential(t, tau):
    return np.exp(-t / tau)


def survival_lifetime(trajectory: CoolingTrajectory) -> Tuple[float, float]:
    """Least-squares fit of exp(-t/tau) to the survival curve; returns (tau, standard error)."""
    t = np.asarray(trajectory.times, dtype=float)
    s = np.asarray(trajectory.survival, dtype=float)
    if t.size < 10:
        raise FitDiverged(f"Need at least 10 survival samples, got {t.size}")
    if np.any(np.diff(s) >= 0) or s[-1] <= 0:
        raise FitDiverged("Survival is not strictly decreasing; no finite lifetime")
    guess = -(t[-1] - t[0]) / math.log(s[-1] / s[0])
    try:
        popt, pcov = curve_fit(_exponential, t - t[0], s / s[0], p0=[guess], maxfev=2000)
    except (RuntimeError, ValueError) as exc:
        raise FitDiverged(f"Exponential fit failed: {exc}") from exc
    tau = float(popt[0])
    err = float(math.sqrt(pcov[0, 0])) if np.isfinite(pcov[0, 0]) else math.inf
    if not tau > 0 or not math.isfinite(tau):
        raise FitDiverged(f"Fitted lifetime {tau} is not a positive number")
    return tau, err


def mean_lifetime(setup: CoolingSetup, axis: Axis, initial_mean_n: float = 1.0) -> float:
    """Exact mean trapping time of one axis from a thermal start in m_F = -F."""
    axis = AXES[axis_index(axis)]
    n_max = setup.trap.trap_depth_quanta[axis_index(axis)]
    space = HilbertSpace(setup.field.f_total, n_max)
    omega, delta, strength = _axis_terms(setup.trap, setup.field, axis, setup.laser, setup.coupling(axis))
    generator = rate_generator(space, omega, delta, strength, setup.dissipators(axis), absorbing=True)
    return mean_absorption_time(generator, _initial_populations(space, initial_mean_n).ravel())


def _steady_mean_n(setup: CoolingSetup, axis: str) -> float:
    try:
        steady = rate_equation_steady_state(setup.trap, setup.field, setup.dissipators(axis), axis,
                                            laser=setup.laser, coupling=setup.coupling(axis),
                                            weak_coupling=True)
    except SingularBalanceMatrix:
        return math.nan
    return steady.mean_n


def _point_summary(setup: CoolingSetup, duration: float, samples: int, initial_mean_n: float,
                   model: str) -> Dict[str, float]:
    trajectory = survival_trajectory(setup, duration, samples, initial_mean_n, model)
    survival = float(trajectory.survival[-1])
    row = {'survival': survival}
    for axis in AXES:
        row[f'mean_n_{axis}'] = _steady_mean_n(setup, axis) if axis in setup.axes else math.nan
    row['tau_s'] = -duration / math.log(survival) if 0 < survival < 1 else math.inf
    for axis in AXES:
        pops = trajectory.populations.get(axis)
        row[f'survival_{axis}'] = float(pops[-1].sum()) if pops is not None else math.nan
    return row


def _field_task(args) -> Dict[str, float]:
    setup, b_off, duration, samples, initial_mean_n, model = args
    row = {'b_off_gauss': b_off}
    row.update(_point_summary(setup.with_field(b_off), duration, samples, initial_mean_n, model))
    return row


def _laser_task(args) -> Dict[str, float]:
    setup, detuning, intensity, duration, samples, initial_mean_n, model = args
    row = {'detuning_gamma': detuning, 'intensity_sat': intensity}
    row.update(_point_summary(setup.with_laser(detuning, intensity), duration, samples, initial_mean_n, model))
    return row


def _run(tasks: list, worker: Callable, mapper: Optional[Callable]) -> list:
    return list(mapper(worker, tasks)) if mapper is not None else [worker(t) for t in tasks]


def scan_offset_field(setup: CoolingSetup, b_values: Sequence[float], duration: float,
                      samples: int = 20, initial_mean_n: float = 1.0, model: str = 'rate',
                      mapper: Optional[Callable] = None) -> pd.DataFrame:
    """
    Survival after `duration`, steady-state <n_i> and effective lifetime for each offset field (gauss),
    followed by the survival of each axis on its own. `mapper(fn, tasks)` must return results in task order.
    """
    b_values = sorted(float(b) for b in b_values)
    if len(b_values) < 2:
        raise UsageError("An offset-field scan needs at least 2 field values")
    tasks = [(setup, b, duration, samples, initial_mean_n, model) for b in b_values]
    rows = _run(tasks, _field_task, mapper)
    return pd.DataFrame(rows, columns=SCAN_COLUMNS)


def scan_laser(setup: CoolingSetup, detunings: Sequence[float], intensities: Sequence[float],
               duration: float, samples: int = 20, initial_mean_n: float = 1.0, model: str = 'rate',
               mapper: Optional[Callable] = None) -> pd.DataFrame:
    """Survival versus laser detuning (units of Gamma) for each intensity (units of I_sat)."""
    if len(detunings) < 2:
        raise UsageError("A laser scan needs at least 2 detunings")
    tasks = [(setup, float(d), float(i), duration, samples, initial_mean_n, model)
             for i in sorted(intensities, reverse=True) for d in sorted(detunings)]
    rows = _run(tasks, _laser_task, mapper)
    return pd.DataFrame(rows, columns=['detuning_gamma', 'intensity_sat', 'survival',
                                       'mean_n_x', 'mean_n_y', 'mean_n_z'])


def _vertex(x: np.ndarray, y: np.ndarray, i: int) -> Tuple[float, float]:
    """Parabola through points i-1, i, i+1; returns the vertex (x, y)."""
    xs, ys = x[i - 1:i + 2], y[i - 1:i + 2]
    a, b, c = np.polyfit(xs - xs[1], ys, 2)
    if a == 0:
        return float(x[i]), float(y[i])
    offset = float(np.clip(-b / (2 * a), xs[0] - xs[1], xs[2] - xs[1]))
    return float(xs[1] + offset), float(a * offset ** 2 + b * offset + c)


def _local_maxima(x: np.ndarray, y: np.ndarray) -> List[Tuple[float, float]]:
    """Interior maxima as (x, y); single points are refined by a parabola, plateaus sit at their midpoint."""
    # values closer than rounding noise form one plateau
    eps = PLATEAU_RTOL * max(float(np.nanmax(np.abs(y))), 1e-300)
    found = []
    i = 1
    while i < x.size - 1:
        if not y[i] - y[i - 1] > eps:
            i += 1
            continue
        j = i
        while j + 1 < x.size and abs(y[j + 1] - y[i]) <= eps:
            j += 1
        if j + 1 < x.size and y[i] - y[j + 1] > eps:
            if j == i:
                found.append(_vertex(x, y, i))
            else:
                found.append((0.5 * float(x[i] + x[j]), float(y[i])))
        i = j + 1
    return found


def find_resonances(b_values: Sequence[float], survival: Sequence[float],
                    mean_n_y: Optional[Sequence[float]] = None,
                    flat_tol: float = FLAT_SURVIVAL_TOL) -> List[Dict[str, float]]:
    """
    Interior local maxima of survival, refined by quadratic interpolation. When survival is flat
    within flat_tol, local minima of <n_y> are reported instead.
    """
    x = np.asarray(b_values, dtype=float)
    s = np.asarray(survival, dtype=float)
    if np.ptp(s) > flat_tol or mean_n_y is None:
        return [{'b_off_gauss': b, 'value': v, 'kind': 'survival_max'} for b, v in _local_maxima(x, s)]
    return [{**r, 'kind': 'mean_n_y_min'} for r in cooling_optima(x, mean_n_y)]


def cooling_optima(b_values: Sequence[float], mean_n: Sequence[float]) -> List[Dict[str, float]]:
    """Interior local minima of a steady-state <n> curve, the fields where cooling wins most."""
    x = np.asarray(b_values, dtype=float)
    n = np.asarray(mean_n, dtype=float)
    if not np.all(np.isfinite(n)):
        return []
    return [{'b_off_gauss': b, 'value': -v, 'kind': 'mean_n_min'} for b, v in _local_maxima(x, -n)]


def axis_resonances(frame: pd.DataFrame, axis: Axis) -> Dict[str, List[Dict[str, float]]]:
    """
    Resonances of one axis from an offset-field scan: maxima of that axis' survival and minima of
    its steady-state <n>. Survival saturates at 1 across a resonance that cools well, so the <n>
    minima locate it more sharply.
    """
    axis = AXES[axis_index(axis)]
    b = frame['b_off_gauss'].to_numpy(dtype=float)
    survival = frame[f'survival_{axis}'].to_numpy(dtype=float)
    if not np.all(np.isfinite(survival)):
        raise UsageError(f"Axis '{axis}' was not simulated in this scan")
    maxima = [{'b_off_gauss': b_peak, 'value': v, 'kind': 'survival_max'}
              for b_peak, v in _local_maxima(b, survival)] if np.ptp(survival) > FLAT_SURVIVAL_TOL else []
    return {'survival_maxima': maxima,
            'mean_n_minima': cooling_optima(b, frame[f'mean_n_{axis}'])}
