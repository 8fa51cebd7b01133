"""
Fitting
Damped Gauss-Newton (Levenberg-Marquardt) fit of a PSD to the spectral forward model.
Free parameters: <n_i>, omega_i, min_width, amplitude, offset (and alpha_i on request).
"""
import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import find_peaks

from .errors import (BoundsViolation, FitDiverged, NonPhysicalSidebands,
                     SingularNormalMatrix)
from .spectroscopy import (THERMAL_TOL, Spectrum, ground_state_occupation, integrate_band,
                           render_components, sideband_thermometry, spectrum_components)
from .trap_model import AXES, TrapConfig, kilohertz, lamb_dicke

logger = logging.getLogger(__name__)

FD_STEP = 1e-6
CONDITION_LIMIT = 1e14
INHOMOGENEITY_BOUND = 0.1


@dataclass(frozen=True)
class FitModelParams:
    mean_n: Tuple[float, float, float]
    omega: Tuple[float, float, float]            # rad/s
    min_width: float                             # Hz
    amplitude: float
    offset: float
    anharmonicity: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def vector(self, names: Sequence[str]) -> np.ndarray:
        return np.array([_get(self, name) for name in names], dtype=float)

    @classmethod
    def from_vector(cls, base: 'FitModelParams', names: Sequence[str], values: np.ndarray) -> 'FitModelParams':
        mean_n, omega, alpha = list(base.mean_n), list(base.omega), list(base.anharmonicity)
        scalars = {}
        for name, value in zip(names, values):
            if name.startswith('mean_n_'):
                mean_n[AXES.index(name[-1])] = float(value)
            elif name.startswith('omega_'):
                omega[AXES.index(name[-1])] = float(value)
            elif name.startswith('alpha_'):
                alpha[AXES.index(name[-1])] = float(value)
            else:
                scalars[name] = float(value)
        return replace(base, mean_n=tuple(mean_n), omega=tuple(omega), anharmonicity=tuple(alpha), **scalars)


def _get(params: FitModelParams, name: str) -> float:
    for prefix, attr in (('mean_n_', 'mean_n'), ('omega_', 'omega'), ('alpha_', 'anharmonicity')):
        if name.startswith(prefix):
            return getattr(params, attr)[AXES.index(name[-1])]
    return getattr(params, name)


def parameter_names(release_anharmonicity: bool = False) -> List[str]:
    names = [f'mean_n_{a}' for a in AXES] + [f'omega_{a}' for a in AXES] + ['min_width', 'amplitude', 'offset']
    if release_anharmonicity:
        names += [f'alpha_{a}' for a in AXES]
    return names


DEFAULT_BOUNDS = {
    'mean_n': (0.0, 50.0),
    'omega': (2 * math.pi * 5e3, 2 * math.pi * 2e6),
    'alpha': (0.0, 0.05),
    'min_width': (1.0, 1e6),
    'amplitude': (0.0, math.inf),
    'offset': (-math.inf, math.inf),
}


def _bound(bounds: Dict[str, Tuple[float, float]], name: str) -> Tuple[float, float]:
    for key in ('mean_n', 'omega', 'alpha'):
        if name.startswith(key + '_'):
            return bounds.get(name, bounds[key])
    return bounds[name]


@dataclass(frozen=True)
class FitOptions:
    max_iterations: int = 200
    initial_damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.1
    damping_cap: float = 1e12
    rtol: float = 1e-10
    step_tol: float = 1e-12
    log_occupation: bool = False        # fit u = log(1 + <n>) instead of <n>
    release_anharmonicity: bool = False
    exclude_hz: float = 0.0             # drop |f| < exclude_hz from the residual


@dataclass
class FitResult:
    params: FitModelParams
    names: List[str]
    uncertainties: Dict[str, float]
    covariance: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    history: List[float] = field(default_factory=list, repr=False)

    def to_record(self) -> Dict[str, object]:
        """Flat JSON-compatible record; covariance is row-major in `parameters` order."""
        record = {}
        for name in self.names:
            record[name] = _get(self.params, name)
            record[f'{name}_err'] = self.uncertainties[name]
        for name in parameter_names(True):
            record.setdefault(name, _get(self.params, name))
        record['converged'] = bool(self.converged)
        record['residual_norm'] = float(self.residual_norm)
        record['iterations'] = int(self.iterations)
        record['parameters'] = list(self.names)
        record['covariance'] = [float(v) for v in self.covariance.ravel()]
        return record

    @classmethod
    def from_record(cls, record: Dict[str, object]) -> 'FitResult':
        names = list(record['parameters'])
        base = FitModelParams(mean_n=tuple(record[f'mean_n_{a}'] for a in AXES),
                              omega=tuple(record[f'omega_{a}'] for a in AXES),
                              min_width=record['min_width'], amplitude=record['amplitude'],
                              offset=record['offset'],
                              anharmonicity=tuple(record.get(f'alpha_{a}', 0.0) for a in AXES))
        size = len(names)
        return cls(params=base, names=names,
                   uncertainties={n: float(record[f'{n}_err']) for n in names},
                   covariance=np.array(record['covariance'], dtype=float).reshape(size, size),
                   residual_norm=float(record['residual_norm']),
                   iterations=int(record['iterations']), converged=bool(record['converged']))


class SpectrumModel:
    """psd(f; params) with the scattering rate, trap depth and eta_i held fixed."""

    def __init__(self, trap: TrapConfig, gamma_sc: float, eta: Optional[Sequence[float]] = None,
                 thermal_tol: float = THERMAL_TOL):
        self.trap = trap
        self.gamma_sc = gamma_sc
        self.eta = tuple(eta) if eta is not None else tuple(lamb_dicke(trap, i) for i in range(3))
        self.thermal_tol = thermal_tol

    def __call__(self, params: FitModelParams, frequencies: np.ndarray) -> np.ndarray:
        trap = replace(self.trap, omega=params.omega, anharmonicity=params.anharmonicity)
        components = spectrum_components(trap, params.mean_n, self.gamma_sc, params.min_width,
                                         self.thermal_tol, eta=self.eta)
        return render_components(components, frequencies, params.amplitude, params.offset)


class _Transform:
    """Internal coordinates: optional log(1 + n) for occupations, everything scaled to O(1)."""

    def __init__(self, names: Sequence[str], initial: np.ndarray, log_occupation: bool):
        self.names = list(names)
        self.log_mask = np.array([log_occupation and n.startswith('mean_n_') for n in names])
        natural = self._to_raw(initial)
        self.scale = np.where(np.abs(natural) > 0, np.abs(natural), 1.0)
        self.scale[[n.startswith('mean_n_') for n in names]] = 1.0

    def _to_raw(self, theta: np.ndarray) -> np.ndarray:
        raw = theta.astype(float).copy()
        raw[self.log_mask] = np.log1p(theta[self.log_mask])
        return raw

    def forward(self, theta: np.ndarray) -> np.ndarray:
        return self._to_raw(theta) / self.scale

    def inverse(self, u: np.ndarray) -> np.ndarray:
        raw = u * self.scale
        raw[self.log_mask] = np.expm1(raw[self.log_mask])
        return raw

    def derivative(self, u: np.ndarray) -> np.ndarray:
        """d theta / d u, elementwise."""
        d = self.scale.copy()
        raw = u * self.scale
        d[self.log_mask] *= np.exp(raw[self.log_mask])
        return d


def _jacobian(residual: Callable[[np.ndarray], np.ndarray], u: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central differences with relative step `step` per parameter."""
    columns = []
    for k in range(u.size):
        h = step * max(abs(u[k]), 1.0)
        up, down = u.copy(), u.copy()
        up[k] += h
        down[k] -= h
        columns.append((residual(up) - residual(down)) / (2 * h))
    return np.column_stack(columns)


def fit_spectrum(data: Spectrum, initial: FitModelParams, model: SpectrumModel,
                 bounds: Optional[Dict[str, Tuple[float, float]]] = None,
                 options: FitOptions = FitOptions(), sigma: Optional[np.ndarray] = None) -> FitResult:
    """
    Minimize sum (psd - model)^2 (divided by sigma^2 when given) by damped Gauss-Newton with
    multiplicative damping and projection onto the bounds.
    """
    bounds = dict(DEFAULT_BOUNDS, **(bounds or {}))
    names = parameter_names(options.release_anharmonicity)
    theta0 = initial.vector(names)
    lower = np.array([_bound(bounds, n)[0] for n in names])
    upper = np.array([_bound(bounds, n)[1] for n in names])
    if np.any(theta0 < lower) or np.any(theta0 > upper):
        bad = [n for n, v, lo, hi in zip(names, theta0, lower, upper) if not lo <= v <= hi]
        raise BoundsViolation(f"Initial values outside bounds: {', '.join(bad)}")

    mask = np.abs(data.frequencies) >= options.exclude_hz
    freqs, target = data.frequencies[mask], data.psd[mask]
    weights = None
    if sigma is not None:
        sigma = np.asarray(sigma, dtype=float)[mask]
        weights = np.where(sigma > 0, 1.0 / np.where(sigma > 0, sigma, 1.0), 0.0)

    transform = _Transform(names, theta0, options.log_occupation)

    def clip(u: np.ndarray) -> np.ndarray:
        return transform.forward(np.clip(transform.inverse(u), lower, upper))

    def residual(u: np.ndarray) -> np.ndarray:
        theta = np.clip(transform.inverse(u), lower, upper)
        r = model(FitModelParams.from_vector(initial, names, theta), freqs) - target
        return r * weights if weights is not None else r

    u = transform.forward(theta0)
    r = residual(u)
    rss = float(r @ r)
    scaled_target = target * weights if weights is not None else target
    scale_rss = float(scaled_target @ scaled_target)
    damping = options.initial_damping
    history = [rss]
    converged = False
    iterations = 0

    for iterations in range(1, options.max_iterations + 1):
        jac = _jacobian(residual, u)
        dead = [n for n, column in zip(names, jac.T) if not np.any(column)]
        if dead:
            raise SingularNormalMatrix(f"Model does not depend on: {', '.join(dead)}")
        normal = jac.T @ jac
        gradient = jac.T @ r
        accepted = False
        while not accepted:
            system = normal + damping * np.diag(np.diag(normal))
            try:
                step = -np.linalg.solve(system, gradient)
            except np.linalg.LinAlgError:
                step = np.full_like(u, np.nan)
            candidate = clip(u + step) if np.all(np.isfinite(step)) else u
            r_new = residual(candidate)
            rss_new = float(r_new @ r_new)
            if np.all(np.isfinite(step)) and rss_new <= rss:
                accepted = True
                damping = max(damping * options.damping_down, 1e-15)
            else:
                damping *= options.damping_up
                if damping > options.damping_cap:
                    raise FitDiverged(f"Damping exceeded {options.damping_cap:.1e} at iteration {iterations}")
        step_norm = float(np.linalg.norm(candidate - u))
        change = (rss - rss_new) / rss if rss > 0 else 0.0
        u, r, rss = candidate, r_new, rss_new
        history.append(rss)
        logger.debug(f"Iteration {iterations}: rss={rss:.6e}, damping={damping:.1e}")
        if change < options.rtol or step_norm < options.step_tol or rss <= 1e-28 * scale_rss:
            converged = True
            break

    if not converged:
        logger.warning(f"Fit did not converge in {options.max_iterations} iterations (rss={rss:.4e})")

    theta = np.clip(transform.inverse(u), lower, upper)
    covariance = _covariance(_jacobian(residual, u), rss, transform.derivative(u), names)
    errors = np.sqrt(np.clip(np.diag(covariance), 0.0, None))
    return FitResult(params=FitModelParams.from_vector(initial, names, theta), names=names,
                     uncertainties=dict(zip(names, map(float, errors))), covariance=covariance,
                     residual_norm=math.sqrt(rss), iterations=iterations, converged=converged,
                     history=history)


def _covariance(jac: np.ndarray, rss: float, derivative: np.ndarray, names: Sequence[str]) -> np.ndarray:
    """s^2 (J^T J)^-1 mapped back to natural parameters."""
    norms = np.linalg.norm(jac, axis=0)
    if np.any(norms == 0):
        dead = [n for n, v in zip(names, norms) if v == 0]
        raise SingularNormalMatrix(f"Model does not depend on: {', '.join(dead)}")
    scaled = jac / norms
    normal = scaled.T @ scaled
    if np.linalg.cond(normal) > CONDITION_LIMIT:
        raise SingularNormalMatrix("Normal matrix is numerically singular; parameters are degenerate")
    dof = max(jac.shape[0] - jac.shape[1], 1)
    inverse = np.linalg.inv(normal) / np.outer(norms, norms)
    covariance = (rss / dof) * inverse
    covariance = covariance * np.outer(derivative, derivative)
    return 0.5 * (covariance + covariance.T)


def initial_guess(data: Spectrum, ab_initio_omega: Sequence[float], gamma_sc: float, min_width: float,
                  model: SpectrumModel, exclude_hz: float = 0.0,
                  band_half_width: Optional[float] = None) -> FitModelParams:
    """
    omega_i from the three largest positive-frequency peaks above the median background, assigned to
    axes by the permutation closest to the ab initio frequencies; <n_i> from raw band integrals;
    amplitude and offset by linear least squares against the unit-amplitude model.
    """
    f, psd = data.frequencies, data.psd
    background = float(np.median(psd))
    positive = f >= max(exclude_hz, 2 * min_width)
    idx, props = find_peaks(np.where(positive, psd - background, 0.0),
                            distance=max(int(min_width / data.spacing), 1), height=0.0)
    order = np.argsort(props['peak_heights'])[::-1][:3] if idx.size else []
    peaks = [float(f[idx[k]]) for k in order]
    expected = [w / (2 * math.pi) for w in ab_initio_omega]
    omega = list(ab_initio_omega)
    if peaks:
        best = min(itertools.permutations(range(3), len(peaks)),
                   key=lambda perm: sum(abs(peaks[j] - expected[axis]) for j, axis in enumerate(perm)))
        for j, axis in enumerate(best):
            omega[axis] = 2 * math.pi * peaks[j]

    half = band_half_width or 1.5 * min_width
    mean_n = []
    for w in omega:
        center = w / (2 * math.pi)
        try:
            s_minus, _ = integrate_band(data, -center, half)
            s_plus, _ = integrate_band(data, center, half)
            mean_n.append(min(sideband_thermometry(max(s_minus, 0.0), s_plus).mean_n, 10.0))
        except (NonPhysicalSidebands, ValueError) as exc:
            logger.debug(f"Band thermometry at {center:.0f} Hz failed ({exc}); seeding <n> = 0.5")
            mean_n.append(0.5)

    trial = FitModelParams(tuple(mean_n), tuple(omega), min_width, 1.0, 0.0, model.trap.anharmonicity)
    mask = np.abs(f) >= exclude_hz
    shape = model(trial, f[mask])
    design = np.column_stack([shape, np.ones_like(shape)])
    (amplitude, offset), *_ = np.linalg.lstsq(design, psd[mask], rcond=None)
    return replace(trial, amplitude=float(max(amplitude, 0.0)), offset=float(offset))


def perturb(params: FitModelParams, rng: np.random.Generator, fraction: float = 0.1) -> FitModelParams:
    """Multiply every free value by 1 + U(-fraction, fraction)."""
    def jitter(values):
        return tuple(float(v * (1 + rng.uniform(-fraction, fraction))) for v in values)
    return replace(params, mean_n=jitter(params.mean_n), omega=jitter(params.omega),
                   min_width=jitter([params.min_width])[0], amplitude=jitter([params.amplitude])[0])


def fit_multistart(data: Spectrum, initial: FitModelParams, model: SpectrumModel, starts: int = 4,
                   seed: int = 0, bounds: Optional[Dict[str, Tuple[float, float]]] = None,
                   options: FitOptions = FitOptions(), sigma: Optional[np.ndarray] = None,
                   mapper: Optional[Callable] = None) -> FitResult:
    """Start 0 is `initial`; start k > 0 uses SeedSequence(seed, spawn_key=(k,)) to perturb it."""
    inits = [initial] + [perturb(initial, np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,))))
                         for k in range(1, starts)]
    tasks = [(data, init, model, bounds, options, sigma) for init in inits]
    results = list(mapper(_fit_task, tasks)) if mapper is not None else [_fit_task(t) for t in tasks]
    usable = [r for r in results if r is not None]
    if not usable:
        raise FitDiverged(f"All {starts} starts failed")
    return min(usable, key=lambda r: r.residual_norm)


def _fit_task(args) -> Optional[FitResult]:
    data, init, model, bounds, options, sigma = args
    try:
        return fit_spectrum(data, init, model, bounds, options, sigma)
    except (FitDiverged, BoundsViolation, SingularNormalMatrix) as exc:
        logger.warning(f"Start failed: {exc}")
        return None


def fit_report(result: FitResult, ab_initio: TrapConfig) -> Dict[str, object]:
    """Occupations, ground-state fractions, trap frequencies and their deviation from the ab initio trap."""
    if not result.converged:
        raise FitDiverged("Refusing to report an unconverged fit")
    p = result.params
    ab_initio_omega = ab_initio.omega
    report = {}
    for i, axis in enumerate(AXES):
        n = p.mean_n[i]
        report[f'mean_n_{axis}'] = n
        report[f'mean_n_{axis}_err'] = result.uncertainties.get(f'mean_n_{axis}', 0.0)
        report[f'p0_{axis}'] = ground_state_occupation(n)
        report[f'freq_{axis}_khz'] = kilohertz(p.omega[i])
        report[f'freq_{axis}_khz_err'] = kilohertz(result.uncertainties.get(f'omega_{axis}', 0.0))
        report[f'freq_{axis}_ab_initio_khz'] = kilohertz(ab_initio_omega[i])
        report[f'freq_{axis}_deviation_pct'] = 100.0 * (p.omega[i] - ab_initio_omega[i]) / ab_initio_omega[i]
        width_fraction = p.min_width / (p.omega[i] / (2 * math.pi))
        report[f'width_fraction_{axis}'] = width_fraction
        report[f'width_within_inhomogeneity_{axis}'] = bool(width_fraction <= INHOMOGENEITY_BOUND)
    report['min_width_khz'] = p.min_width / 1e3
    report['amplitude'] = p.amplitude
    report['offset'] = p.offset
    report['residual_norm'] = result.residual_norm
    report['iterations'] = result.iterations
    return report
