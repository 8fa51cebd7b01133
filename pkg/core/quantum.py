"""
Quantum Core
Operators on the truncated space (2F+1 spin states) x (Fock levels 0..n_max) and the
spin-motion Hamiltonian H/hbar = w a^dag a + D_off F_y + Omega (a + a^dag)(F+ + F-).

Basis ordering is spin-major and fixed:
    index = (m_F + F) * (n_max + 1) + n
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch
from .trap_model import (Axis, FieldConfig, LaserConfig, TrapConfig, axis_index,
                         spin_motion_coupling, zeeman_splitting)

logger = logging.getLogger(__name__)

BASIS_ORDERING = "spin-major: index = (m_F + F) * (n_max + 1) + n"
DENSE_LIMIT = 512

Matrix = Union[np.ndarray, sp.spmatrix]


@dataclass(frozen=True)
class HilbertSpace:
    f_total: int
    n_max: int

    def __post_init__(self):
        if self.f_total < 1 or int(self.f_total) != self.f_total:
            raise ValueError(f"F must be an integer >= 1, got {self.f_total}")
        if self.n_max < 1:
            raise ValueError(f"Fock truncation n_max must be >= 1, got {self.n_max}")

    @property
    def n_spin(self) -> int:
        return 2 * self.f_total + 1

    @property
    def n_fock(self) -> int:
        return self.n_max + 1

    @property
    def dim(self) -> int:
        return self.n_spin * self.n_fock

    @property
    def m_values(self) -> np.ndarray:
        return np.arange(-self.f_total, self.f_total + 1)

    def index(self, m_f: int, n: int) -> int:
        if abs(m_f) > self.f_total or not 0 <= n <= self.n_max:
            raise ValueError(f"|m_F={m_f}, n={n}> is outside the truncated space")
        return (m_f + self.f_total) * self.n_fock + n


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    space: HilbertSpace
    matrix: Matrix
    units: str = 'dimensionless'

    def __post_init__(self):
        if self.matrix.shape != (self.space.dim, self.space.dim):
            raise DimensionMismatch(
                f"Operator shape {self.matrix.shape} does not match space dimension {self.space.dim}")

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else np.asarray(self.matrix)

    def tocsr(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.matrix)

    def dagger(self) -> 'OperatorMatrix':
        return OperatorMatrix(self.space, self.matrix.conj().T, self.units)

    def _check(self, other: 'OperatorMatrix'):
        if other.space != self.space:
            raise DimensionMismatch("Operators live on different spaces")

    def __add__(self, other: 'OperatorMatrix') -> 'OperatorMatrix':
        self._check(other)
        return _wrap(self.space, self.matrix + other.matrix, self.units)

    def __sub__(self, other: 'OperatorMatrix') -> 'OperatorMatrix':
        self._check(other)
        return _wrap(self.space, self.matrix - other.matrix, self.units)

    def __matmul__(self, other: 'OperatorMatrix') -> 'OperatorMatrix':
        self._check(other)
        return _wrap(self.space, self.matrix @ other.matrix, self.units)

    def __mul__(self, scalar: complex) -> 'OperatorMatrix':
        return _wrap(self.space, self.matrix * scalar, self.units)

    __rmul__ = __mul__

    def commutator(self, other: 'OperatorMatrix') -> 'OperatorMatrix':
        return self @ other - other @ self

    def hermiticity_error(self) -> float:
        """max |H - H^dag| relative to max |H|."""
        dense = self.toarray()
        scale = np.max(np.abs(dense)) or 1.0
        return float(np.max(np.abs(dense - dense.conj().T)) / scale)


def _wrap(space: HilbertSpace, matrix: Matrix, units: str = 'dimensionless') -> OperatorMatrix:
    """Dense storage up to DENSE_LIMIT, compressed-sparse above."""
    if space.dim <= DENSE_LIMIT:
        matrix = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix)
        matrix = matrix.astype(complex)
    else:
        matrix = sp.csr_matrix(matrix, dtype=complex)
    return OperatorMatrix(space, matrix, units)


def _fock_ladder(n_max: int) -> sp.csr_matrix:
    return sp.diags(np.sqrt(np.arange(1, n_max + 1, dtype=float)), offsets=1, format='csr')


def _spin_raising(f_total: int) -> sp.csr_matrix:
    m = np.arange(-f_total, f_total)
    return sp.diags(np.sqrt(f_total * (f_total + 1) - m * (m + 1.0)), offsets=-1, format='csr')


def fock_annihilation(space: HilbertSpace) -> OperatorMatrix:
    a = sp.kron(sp.identity(space.n_spin), _fock_ladder(space.n_max), format='csr')
    return _wrap(space, a)


def number_operator(space: HilbertSpace) -> OperatorMatrix:
    n = sp.kron(sp.identity(space.n_spin),
                sp.diags(np.arange(space.n_fock, dtype=float)), format='csr')
    return _wrap(space, n)


def spin_operators(space: HilbertSpace) -> Tuple[OperatorMatrix, OperatorMatrix, OperatorMatrix]:
    """(F_y, F+, F-) with F_y the quantization axis; identity on the Fock factor."""
    fock_id = sp.identity(space.n_fock)
    f_y = sp.diags(space.m_values.astype(float))
    f_plus = _spin_raising(space.f_total)
    return (_wrap(space, sp.kron(f_y, fock_id, format='csr')),
            _wrap(space, sp.kron(f_plus, fock_id, format='csr')),
            _wrap(space, sp.kron(f_plus.T, fock_id, format='csr')))


def spin_projector(space: HilbertSpace, m_to: int, m_from: int) -> sp.csr_matrix:
    """|m_to><m_from| (x) identity on the Fock factor."""
    op = sp.csr_matrix(([1.0], ([m_to + space.f_total], [m_from + space.f_total])),
                       shape=(space.n_spin, space.n_spin))
    return sp.kron(op, sp.identity(space.n_fock), format='csr')


def _coupling_terms(trap: TrapConfig, field: FieldConfig, space: HilbertSpace,
                    laser: Optional[LaserConfig], axis: Axis, coupling: Optional[float]):
    if space.f_total != field.f_total:
        raise DimensionMismatch(
            f"Space has F={space.f_total} but the field configuration has F={field.f_total}")
    omega = trap.omega[axis_index(axis)]
    delta = zeeman_splitting(field)
    shift = laser.ac_stark_shift_per_mf if laser is not None else 0.0
    strength = spin_motion_coupling(trap, field, 'y') if coupling is None else coupling
    return omega, delta + shift, strength


def build_hamiltonian(trap: TrapConfig, field: FieldConfig, space: HilbertSpace,
                      laser: Optional[LaserConfig] = None, axis: Axis = 'y',
                      coupling: Optional[float] = None) -> OperatorMatrix:
    """
    H/hbar in rad/s, lab frame. `coupling` overrides Omega (used for the x and z effective
    couplings); the optional ac-Stark term adds shift * m_F on the diagonal.
    """
    omega, delta, strength = _coupling_terms(trap, field, space, laser, axis, coupling)
    a = fock_annihilation(space).tocsr()
    f_y, f_plus, f_minus = (op.tocsr() for op in spin_operators(space))

    h = (omega * (a.T @ a)
         + delta * f_y
         + strength * ((a + a.T) @ (f_plus + f_minus)))
    logger.debug(f"Hamiltonian: omega={omega:.4e}, delta={delta:.4e}, Omega={strength:.4e}, dim={space.dim}")
    return _wrap(space, h, 'rad/s')


def rotating_frame_hamiltonian(trap: TrapConfig, field: FieldConfig, space: HilbertSpace,
                               laser: Optional[LaserConfig] = None, axis: Axis = 'y',
                               coupling: Optional[float] = None) -> OperatorMatrix:
    """
    Same physics in the frame rotating at omega (a^dag a + F_y), rotating-wave approximation:
    H/hbar = (D_off + shift - omega) F_y + Omega (a F+ + a^dag F-).
    """
    omega, delta, strength = _coupling_terms(trap, field, space, laser, axis, coupling)
    a = fock_annihilation(space).tocsr()
    f_y, f_plus, f_minus = (op.tocsr() for op in spin_operators(space))
    h = (delta - omega) * f_y + strength * (a @ f_plus + a.T @ f_minus)
    return _wrap(space, h, 'rad/s')


@dataclass(frozen=True, eq=False)
class DensityState:
    space: HilbertSpace
    matrix: np.ndarray
    validate: bool = True
    origin: str = 'constructed'

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=complex)
        object.__setattr__(self, 'matrix', matrix)
        if matrix.shape != (self.space.dim, self.space.dim):
            raise DimensionMismatch(f"Density matrix shape {matrix.shape} does not match {self.space.dim}")
        if not self.validate:
            return
        trace = np.trace(matrix).real
        if abs(trace - 1.0) > 1e-9:
            raise ValueError(f"Density matrix trace is {trace:.12f}, expected 1")
        if np.max(np.abs(matrix - matrix.conj().T)) > 1e-10:
            raise ValueError("Density matrix is not Hermitian")
        if np.linalg.eigvalsh(0.5 * (matrix + matrix.conj().T)).min() < -1e-9:
            raise ValueError("Density matrix has a negative eigenvalue")

    @classmethod
    def basis(cls, space: HilbertSpace, m_f: int, n: int) -> 'DensityState':
        rho = np.zeros((space.dim, space.dim), dtype=complex)
        k = space.index(m_f, n)
        rho[k, k] = 1.0
        return cls(space, rho)

    @classmethod
    def from_populations(cls, space: HilbertSpace, populations: np.ndarray) -> 'DensityState':
        """Diagonal state from a (2F+1, n_max+1) population table, renormalized."""
        populations = np.asarray(populations, dtype=float)
        if populations.shape != (space.n_spin, space.n_fock):
            raise DimensionMismatch(f"Population table shape {populations.shape} is not "
                                    f"{(space.n_spin, space.n_fock)}")
        return cls(space, np.diag(populations.ravel() / populations.sum()).astype(complex))

    @classmethod
    def thermal(cls, space: HilbertSpace, mean_n: float, m_f: Optional[int] = None) -> 'DensityState':
        """Thermal motional state (truncated, renormalized) times |m_F><m_F| (default m_F = -F)."""
        m_f = -space.f_total if m_f is None else m_f
        table = np.zeros((space.n_spin, space.n_fock))
        table[m_f + space.f_total] = thermal_distribution(mean_n, space.n_max)
        return cls.from_populations(space, table)

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def populations(self) -> np.ndarray:
        """P(m_F, n) as a (2F+1, n_max+1) array."""
        return np.real(np.diag(self.matrix)).reshape(self.space.n_spin, self.space.n_fock)

    def mean_n(self) -> float:
        return float(self.populations().sum(axis=0) @ np.arange(self.space.n_fock))

    def population(self, m_f: int, n: int) -> float:
        k = self.space.index(m_f, n)
        return float(self.matrix[k, k].real)


def thermal_distribution(mean_n: float, n_max: int) -> np.ndarray:
    """P(n) = nbar^n / (nbar + 1)^(n+1) on 0..n_max, renormalized."""
    if mean_n < 0:
        raise ValueError(f"Mean occupation must be non-negative, got {mean_n}")
    n = np.arange(n_max + 1)
    if mean_n == 0:
        return (n == 0).astype(float)
    p = (mean_n / (mean_n + 1.0)) ** n / (mean_n + 1.0)
    return p / p.sum()
