import numpy as np
import pytest
import scipy.sparse as sp

from core.errors import DimensionMismatch
from core.quantum import (DensityState, HilbertSpace, OperatorMatrix, build_hamiltonian,
                          fock_annihilation, number_operator, rotating_frame_hamiltonian,
                          spin_operators, thermal_distribution)
from core.trap_model import FieldConfig, zeeman_splitting


def test_spin_major_index():
    space = HilbertSpace(4, 22)
    assert space.dim == 9 * 23
    assert space.index(-4, 0) == 0
    assert space.index(-4, 22) == 22
    assert space.index(-3, 0) == 23
    assert space.index(4, 22) == space.dim - 1
    with pytest.raises(ValueError):
        space.index(5, 0)


def test_storage_switches_to_sparse_above_limit():
    assert isinstance(fock_annihilation(HilbertSpace(4, 22)).matrix, np.ndarray)
    big = fock_annihilation(HilbertSpace(4, 60))
    assert big.is_sparse
    assert sp.isspmatrix_csr(big.matrix)


def test_spin_commutators():
    space = HilbertSpace(4, 3)
    f_y, f_plus, f_minus = spin_operators(space)
    assert np.allclose(f_plus.commutator(f_minus).toarray(), 2 * f_y.toarray())
    assert np.allclose(f_y.commutator(f_plus).toarray(), f_plus.toarray())
    assert np.allclose(f_y.commutator(f_minus).toarray(), -f_minus.toarray())


def test_fock_commutator_below_truncation():
    space = HilbertSpace(1, 6)
    a = fock_annihilation(space)
    comm = a.commutator(a.dagger()).toarray()
    diag = np.real(np.diag(comm)).reshape(space.n_spin, space.n_fock)
    assert np.allclose(diag[:, :-1], 1.0)
    assert np.allclose(diag[:, -1], -space.n_max)
    assert np.allclose((a.dagger() @ a).toarray(), number_operator(space).toarray())


def test_f_y_eigenvalues():
    space = HilbertSpace(4, 2)
    f_y = spin_operators(space)[0].toarray()
    assert sorted(set(np.round(np.linalg.eigvalsh(f_y), 12))) == list(range(-4, 5))


def test_hamiltonians_are_hermitian(trap, resonant):
    space = HilbertSpace(4, 10)
    assert build_hamiltonian(trap, resonant, space).hermiticity_error() < 1e-12
    assert rotating_frame_hamiltonian(trap, resonant, space).hermiticity_error() < 1e-12


def test_uncoupled_lab_frame_spectrum(trap):
    field = FieldConfig(b_off=0.5)
    space = HilbertSpace(4, 5)
    h = build_hamiltonian(trap, field, space, coupling=0.0).toarray()
    omega = trap.omega[1]
    delta = zeeman_splitting(field)
    expected = sorted(omega * n + delta * m for m in space.m_values for n in range(space.n_fock))
    assert np.allclose(np.sort(np.linalg.eigvalsh(h)), expected, rtol=1e-12, atol=1e-6)


def test_low_lab_frame_levels_do_not_depend_on_truncation(trap):
    field = FieldConfig(b_off=0.1, b_gradient=1e4)
    levels = []
    for n_max in (20, 25):
        h = build_hamiltonian(trap, field, HilbertSpace(4, n_max)).toarray()
        levels.append(np.linalg.eigvalsh(h)[:100])
    np.testing.assert_allclose(levels[0], levels[1], rtol=0, atol=1e-6 * trap.omega[1])


def test_stretched_ground_state_is_an_eigenvector(trap):
    field = FieldConfig(b_off=0.3)
    space = HilbertSpace(4, 8)
    h = rotating_frame_hamiltonian(trap, field, space).toarray()
    psi = np.zeros(space.dim)
    psi[space.index(-4, 0)] = 1.0
    out = h @ psi
    energy = -4 * (zeeman_splitting(field) - trap.omega[1])
    assert np.allclose(out, energy * psi, atol=1e-9 * abs(energy))


def test_coupling_links_n_to_n_minus_one_with_raised_spin(trap, resonant):
    space = HilbertSpace(4, 4)
    h = rotating_frame_hamiltonian(trap, resonant, space, coupling=1.0).toarray()
    # a F+ |-3, 1> = sqrt(1) * sqrt(F(F+1) - m(m+1)) |-2, 0>
    element = h[space.index(-2, 0), space.index(-3, 1)]
    assert element.real == pytest.approx(np.sqrt(20 - 6))


def test_field_and_space_must_agree_on_f(trap):
    with pytest.raises(DimensionMismatch):
        build_hamiltonian(trap, FieldConfig(f_total=4), HilbertSpace(3, 4))


def test_operators_on_different_spaces_do_not_combine():
    a = fock_annihilation(HilbertSpace(4, 3))
    b = fock_annihilation(HilbertSpace(4, 4))
    with pytest.raises(DimensionMismatch):
        a + b
    with pytest.raises(DimensionMismatch):
        OperatorMatrix(HilbertSpace(4, 3), np.zeros((3, 3)))


def test_thermal_state():
    space = HilbertSpace(4, 30)
    rho = DensityState.thermal(space, 0.5)
    assert rho.trace == pytest.approx(1.0)
    assert rho.mean_n() == pytest.approx(0.5, rel=1e-6)
    assert rho.population(-4, 0) == pytest.approx(2.0 / 3.0, rel=1e-6)
    assert rho.populations()[1:].sum() == 0.0


def test_thermal_distribution_edges():
    assert np.array_equal(thermal_distribution(0.0, 3), [1.0, 0.0, 0.0, 0.0])
    assert thermal_distribution(2.0, 5).sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        thermal_distribution(-0.1, 3)


def test_density_state_validation():
    space = HilbertSpace(1, 1)
    with pytest.raises(ValueError):
        DensityState(space, 2 * np.eye(space.dim) / space.dim)
    with pytest.raises(ValueError):
        DensityState(space, np.diag([1.5, -0.5, 0.0, 0.0, 0.0, 0.0]))
    unchecked = DensityState(space, np.zeros((space.dim, space.dim)), validate=False)
    assert unchecked.trace == 0.0
