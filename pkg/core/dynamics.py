"""
Open-System Dynamics
Lindblad evolution of the DRC cycle on one motional axis: coherent spin-motion exchange,
sigma- optical pumping, photon recoil and background heating.

Density matrices are vectorized row-major, vec(A rho B) = (A (x) B^T) vec(rho).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply, splu
from scipy.sparse.linalg import norm as sparse_norm

from .errors import (DimensionMismatch, NoConvergence, NonUniqueSteadyState,
                     StepTooLarge, TruncationOverflow)
from .quantum import DensityState, HilbertSpace, OperatorMatrix, fock_annihilation, spin_projector
from .trap_model import AXES, Axis, LaserConfig, TrapConfig, axis_index, lamb_dicke, scattering_rate

logger = logging.getLogger(__name__)

RECOIL_GEOMETRY = 0.4
BACKGROUND_OCCUPATION = 1e4

TRACE_TOL_PER_MS = 1e-8
HERMITICITY_TOL = 1e-10
POSITIVITY_TOL = -1e-9
INITIAL_TOP_LIMIT = 1e-4
TOP_LEVEL_LIMIT = 1e-3

RK4_STABILITY = 2.5
MAX_HALVINGS = 8
EXPM_CHUNK = 64


def _cg_squared_raise(j: int, m: int, q: int) -> float:
    """<j m; 1 q | j+1 m+q>^2."""
    M = m + q
    if abs(m) > j or abs(M) > j + 1:
        return 0.0
    if q == 1:
        value = (j + M) * (j + M + 1) / ((2 * j + 1) * (2 * j + 2))
    elif q == 0:
        value = (j - M + 1) * (j + M + 1) / ((2 * j + 1) * (j + 1))
    else:
        value = (j - M) * (j - M + 1) / ((2 * j + 1) * (2 * j + 2))
    return max(float(value), 0.0)


def absorption_weights(f_total: int) -> Dict[int, float]:
    """Relative sigma- absorption strength of each m_F on the F -> F+1 transition (1 for m_F = -F)."""
    return {m: _cg_squared_raise(f_total, m, -1) for m in range(-f_total, f_total + 1)}


def branching_table(f_total: int) -> Dict[int, Dict[int, float]]:
    """
    Final-m_F weights after sigma- absorption to F+1, M = m-1, and spontaneous decay back to F.
    Net change is 0, -1 or -2; m_F = -F is closed.
    """
    table = {}
    for m in range(-f_total, f_total + 1):
        upper = m - 1
        weights = {}
        for q in (1, 0, -1):
            final = upper - q
            if abs(final) <= f_total:
                w = _cg_squared_raise(f_total, final, q)
                if w > 0:
                    weights[final] = w
        total = sum(weights.values())
        table[m] = {final: w / total for final, w in sorted(weights.items())}
    return table


def branching_frame(f_total: int) -> pd.DataFrame:
    rows = [(m, final, w) for m, finals in branching_table(f_total).items() for final, w in finals.items()]
    return pd.DataFrame(rows, columns=['m_f', 'to_m_f', 'weight'])


@dataclass(frozen=True)
class DissipatorSet:
    pump_rate: float                                  # 1/s, sigma- scattering on the cycling state
    branching: Dict[int, Dict[int, float]]
    absorption: Dict[int, float]
    recoil_heating: float = 0.0                       # quanta per scattering event on this axis
    background_heating: float = 0.0                   # quanta/s
    background_occupation: float = BACKGROUND_OCCUPATION
    f_total: int = 4

    def __post_init__(self):
        for name in ('pump_rate', 'recoil_heating', 'background_heating'):
            if getattr(self, name) < 0 or not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite and non-negative, got {getattr(self, name)}")
        if not self.background_occupation > 0:
            raise ValueError("Background occupation must be positive")
        for m, finals in self.branching.items():
            if abs(sum(finals.values()) - 1.0) > 1e-12:
                raise ValueError(f"Branching weights from m_F={m} sum to {sum(finals.values())}")
            if any(w < 0 for w in finals.values()):
                raise ValueError(f"Negative branching weight from m_F={m}")

    def scattering(self, m_f: int) -> float:
        """Photon scattering rate of state m_F."""
        return self.pump_rate * self.absorption.get(m_f, 0.0)

    @property
    def is_trivial(self) -> bool:
        return self.pump_rate == 0 and self.background_heating == 0


def build_dissipators(laser: LaserConfig, trap: Optional[TrapConfig] = None, axis: Axis = 'y',
                      background_heating: float = 0.0, recoil_geometry: float = RECOIL_GEOMETRY,
                      background_occupation: float = BACKGROUND_OCCUPATION, f_total: int = 4,
                      pump_rate: Optional[float] = None) -> DissipatorSet:
    """
    Rates for one axis. The pump rate follows the laser unless given explicitly; recoil per event is
    eta_axis^2 * geometry (0 without a trap).
    """
    rate = scattering_rate(laser) if pump_rate is None else pump_rate
    recoil = 0.0
    if trap is not None:
        recoil = lamb_dicke(trap, axis) ** 2 * recoil_geometry
    return DissipatorSet(pump_rate=rate,
                         branching=branching_table(f_total),
                         absorption=absorption_weights(f_total),
                         recoil_heating=recoil,
                         background_heating=background_heating,
                         background_occupation=background_occupation,
                         f_total=f_total)


def jump_operators(space: HilbertSpace, dissipators: DissipatorSet) -> List[Tuple[str, sp.csr_matrix]]:
    if space.f_total != dissipators.f_total:
        raise DimensionMismatch(f"Dissipators are built for F={dissipators.f_total}, space has F={space.f_total}")
    jumps = []
    for m, finals in dissipators.branching.items():
        rate = dissipators.scattering(m)
        if rate <= 0:
            continue
        for final, weight in finals.items():
            jumps.append((f'pump {m}->{final}', math.sqrt(rate * weight) * spin_projector(space, final, m)))

    a = fock_annihilation(space).tocsr()
    if dissipators.recoil_heating > 0 and dissipators.pump_rate > 0:
        scatter = np.sqrt([dissipators.scattering(m) for m in space.m_values])
        spin_diag = sp.kron(sp.diags(scatter), sp.identity(space.n_fock), format='csr')
        weight = math.sqrt(dissipators.recoil_heating)
        jumps.append(('recoil down', weight * (spin_diag @ a)))
        jumps.append(('recoil up', weight * (spin_diag @ a.T)))

    if dissipators.background_heating > 0:
        gamma = dissipators.background_heating / dissipators.background_occupation
        nbar = dissipators.background_occupation
        jumps.append(('heating up', math.sqrt(gamma * (nbar + 1)) * a.T.tocsr()))
        jumps.append(('heating down', math.sqrt(gamma * nbar) * a))
    return jumps


def boundary_loss(space: HilbertSpace, dissipators: DissipatorSet) -> np.ndarray:
    """Loss rate out of the top Fock level: the upward rates that would leave the truncated ladder."""
    loss = np.zeros(space.dim)
    top = space.n_max + 1
    gamma_up = 0.0
    if dissipators.background_heating > 0:
        gamma = dissipators.background_heating / dissipators.background_occupation
        gamma_up = gamma * (dissipators.background_occupation + 1)
    for m in space.m_values:
        recoil_up = dissipators.scattering(int(m)) * dissipators.recoil_heating
        loss[space.index(int(m), space.n_max)] = top * (gamma_up + recoil_up)
    return loss


def liouvillian(hamiltonian: OperatorMatrix, dissipators: DissipatorSet,
                absorbing: bool = False) -> sp.csr_matrix:
    space = hamiltonian.space
    h = hamiltonian.tocsr()
    eye = sp.identity(space.dim, format='csr')
    generator = -1j * (sp.kron(h, eye) - sp.kron(eye, h.T))
    decay = sp.csr_matrix((space.dim, space.dim), dtype=complex)
    for _, op in jump_operators(space, dissipators):
        generator = generator + sp.kron(op, op.conj())
        decay = decay + op.conj().T @ op
    if absorbing:
        decay = decay + sp.diags(boundary_loss(space, dissipators))
    generator = generator - 0.5 * (sp.kron(decay, eye) + sp.kron(eye, decay.T))
    return sp.csr_matrix(generator)


@dataclass
class CoolingTrajectory:
    times: np.ndarray
    mean_n: Dict[str, np.ndarray]
    populations: Dict[str, np.ndarray]      # per axis, shape (samples, 2F+1, n_max+1)
    survival: np.ndarray
    method: str = 'expm'
    final_state: Optional[DensityState] = field(default=None, repr=False)

    def to_frame(self) -> pd.DataFrame:
        data = {'t_s': self.times}
        for axis in AXES:
            if axis in self.mean_n:
                data[f'mean_n_{axis}'] = self.mean_n[axis]
        data['survival'] = self.survival
        return pd.DataFrame(data)


def _conditional_mean_n(populations: np.ndarray) -> np.ndarray:
    """<n> of the atoms still trapped, per sample."""
    fock = populations.sum(axis=1)
    total = fock.sum(axis=1)
    weighted = fock @ np.arange(fock.shape[1])
    return np.divide(weighted, total, out=np.zeros_like(weighted), where=total > 0)


def _check_sample(rho: np.ndarray, t: float, absorbing: bool) -> Optional[str]:
    trace = np.trace(rho).real
    tol = TRACE_TOL_PER_MS * max(t / 1e-3, 1.0)
    if absorbing:
        if trace > 1.0 + tol:
            return f"trace grew to {trace:.12f}"
    elif abs(trace - 1.0) > tol:
        return f"trace deviates by {trace - 1.0:.3e}"
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > HERMITICITY_TOL:
        return f"Hermiticity deviation {herm:.3e}"
    lowest = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
    if lowest < POSITIVITY_TOL:
        return f"minimum eigenvalue {lowest:.3e}"
    return None


def _check_top_level(populations: np.ndarray, limit: float, t: float):
    top = populations[:, -1].sum()
    if top > limit:
        raise TruncationOverflow(f"Top Fock level holds {top:.3e} of the population at t={t:.3e} s")


def _rk4_interval(generator: sp.csr_matrix, v: np.ndarray, dt: float, substeps: int) -> np.ndarray:
    h = dt / substeps
    for _ in range(substeps):
        k1 = generator @ v
        k2 = generator @ (v + 0.5 * h * k1)
        k3 = generator @ (v + 0.5 * h * k2)
        k4 = generator @ (v + h * k3)
        v = v + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return v


def lindblad_evolve(hamiltonian: OperatorMatrix, dissipators: DissipatorSet, rho0: DensityState,
                    t_final: float, dt: float, method: str = 'expm', absorbing: bool = False,
                    axis: Axis = 'y') -> CoolingTrajectory:
    """
    Integrate d rho/dt = L[rho] and sample every dt up to t_final.
    method='expm' propagates with expm_multiply; method='rk4' uses fixed-step RK4 and halves
    the step when a sample fails the trace, Hermiticity or positivity monitors.
    """
    space = hamiltonian.space
    if rho0.space != space:
        raise DimensionMismatch("Initial state and Hamiltonian live on different spaces")
    if not t_final > 0 or not dt > 0:
        raise ValueError(f"t_final and dt must be positive, got {t_final}, {dt}")
    n_samples = int(round(t_final / dt))
    if n_samples < 1 or abs(n_samples * dt - t_final) > 1e-9 * t_final:
        raise ValueError(f"t_final={t_final} is not a whole number of steps dt={dt}")
    if method not in ('expm', 'rk4'):
        raise ValueError(f"Unknown integration method '{method}'")

    initial = rho0.populations()
    _check_top_level(initial, INITIAL_TOP_LIMIT, 0.0)

    generator = liouvillian(hamiltonian, dissipators, absorbing=absorbing)
    dim = space.dim
    v = rho0.matrix.ravel().astype(complex)
    times = np.arange(n_samples + 1) * dt
    pops = np.empty((n_samples + 1, space.n_spin, space.n_fock))
    pops[0] = initial
    logger.info(f"Evolving dim={dim} ({method}, absorbing={absorbing}) to t={t_final:.3e} s in {n_samples} samples")

    if method == 'expm':
        done = 0
        while done < n_samples:
            chunk = min(EXPM_CHUNK, n_samples - done)
            block = expm_multiply(generator, v, start=0.0, stop=chunk * dt, num=chunk + 1, endpoint=True)
            for k in range(1, chunk + 1):
                rho = block[k].reshape(dim, dim)
                t = times[done + k]
                problem = _check_sample(rho, t, absorbing)
                if problem:
                    raise StepTooLarge(f"Propagation failed a monitor at t={t:.3e} s: {problem}")
                pops[done + k] = np.real(np.diag(rho)).reshape(space.n_spin, space.n_fock)
                if not absorbing:
                    _check_top_level(pops[done + k], TOP_LEVEL_LIMIT, t)
            v = block[-1]
            done += chunk
    else:
        bound = sparse_norm(generator, ord=np.inf)
        substeps = 1
        while dt / substeps * bound > RK4_STABILITY:
            substeps *= 2
        if substeps > 1:
            logger.warning(f"dt={dt:.3e} s is beyond the RK4 stability bound, using {substeps} substeps")
        for k in range(1, n_samples + 1):
            t = times[k]
            for attempt in range(MAX_HALVINGS + 1):
                candidate = _rk4_interval(generator, v, dt, substeps)
                rho = candidate.reshape(dim, dim)
                problem = _check_sample(rho, t, absorbing)
                if problem is None:
                    break
                substeps *= 2
                logger.debug(f"Monitor failed at t={t:.3e} s ({problem}); halving step")
            else:
                raise StepTooLarge(f"RK4 step could not satisfy the monitors at t={t:.3e} s: {problem}")
            v = candidate
            pops[k] = np.real(np.diag(rho)).reshape(space.n_spin, space.n_fock)
            if not absorbing:
                _check_top_level(pops[k], TOP_LEVEL_LIMIT, t)

    final = DensityState(space, v.reshape(dim, dim), validate=False, origin=f'lindblad_evolve/{method}')
    axis_name = AXES[axis_index(axis)]
    return CoolingTrajectory(times=times,
                             mean_n={axis_name: _conditional_mean_n(pops)},
                             populations={axis_name: pops},
                             survival=pops.sum(axis=(1, 2)),
                             method=method,
                             final_state=final)


def _as_state(space: HilbertSpace, v: np.ndarray, origin: str) -> DensityState:
    rho = v.reshape(space.dim, space.dim)
    rho = 0.5 * (rho + rho.conj().T)
    trace = np.trace(rho).real
    if not np.all(np.isfinite(rho)) or trace <= 0:
        raise NoConvergence("Steady-state solution is not a finite positive-trace matrix")
    rho = rho / trace
    if np.linalg.eigvalsh(rho).min() < POSITIVITY_TOL:
        raise NoConvergence("Steady-state solution is not positive semidefinite")
    return DensityState(space, rho, origin=origin)


def _integrate_to_rest(generator: sp.csr_matrix, v: np.ndarray, tol: float = 1e-10,
                       tau: float = 1e-4, max_rounds: int = 30) -> np.ndarray:
    for _ in range(max_rounds):
        nxt = expm_multiply(generator * tau, v)
        if np.max(np.abs(nxt - v)) < tol:
            return nxt
        v = nxt
        tau *= 2.0
    raise NoConvergence(f"Long-time integration did not settle within {max_rounds} rounds")


def steady_state(hamiltonian: OperatorMatrix, dissipators: DissipatorSet,
                 rho0: Optional[DensityState] = None, absorbing: bool = False,
                 residual_tol: float = 1e-8) -> DensityState:
    """
    Solve L[rho] = 0 with one row replaced by the trace condition (sparse LU). When the null space is
    degenerate, integrate rho0 to rest instead; without rho0 that is NonUniqueSteadyState.
    The returned state's `origin` records which route produced it.
    """
    space = hamiltonian.space
    if dissipators.is_trivial:
        raise NonUniqueSteadyState("Without pumping or heating every Hamiltonian eigenstate is stationary")
    generator = liouvillian(hamiltonian, dissipators, absorbing=absorbing)
    dim = space.dim
    trace_index = np.arange(dim) * (dim + 1)

    coo = generator.tocoo()
    keep = coo.row != 0
    rows = np.concatenate([coo.row[keep], np.zeros(dim, dtype=coo.row.dtype)])
    cols = np.concatenate([coo.col[keep], trace_index])
    vals = np.concatenate([coo.data[keep], np.ones(dim, dtype=complex)])
    system = sp.csc_matrix((vals, (rows, cols)), shape=generator.shape)
    rhs = np.zeros(dim * dim, dtype=complex)
    rhs[0] = 1.0

    try:
        v = splu(system).solve(rhs)
        scale = sparse_norm(generator, ord=np.inf)
        residual = np.max(np.abs(generator @ v)) / scale if np.all(np.isfinite(v)) else np.inf
    except RuntimeError:
        residual = np.inf

    if residual <= residual_tol:
        return _as_state(space, v, 'direct')
    if absorbing:
        raise NoConvergence(f"No trace-preserving steady state (relative residual {residual:.3e}); "
                            "population drains through the absorbing boundary")
    if rho0 is None:
        raise NonUniqueSteadyState("Liouvillian null space is degenerate; pass an initial state to select one")
    logger.info("Degenerate null space, falling back to long-time integration")
    v = _integrate_to_rest(generator, rho0.matrix.ravel().astype(complex))
    return _as_state(space, v, 'integration')
