import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from core.errors import IndexAboveTrapDepth, LambDickeViolation
from core.trap_model import (AXES, FieldConfig, LaserConfig, TrapConfig, anharmonic_level_energy,
                             axis_index, default_trap, lamb_dicke, oscillator_length, resonant_field,
                             scattering_rate, spin_motion_coupling, transition_frequency,
                             zeeman_splitting)


def test_first_resonance_near_quarter_gauss(trap):
    b_res = resonant_field(trap, FieldConfig(), 'y')
    assert b_res == pytest.approx(0.237, rel=0.01)


def test_zeeman_splitting_matches_trap_frequency_at_resonance(trap):
    for axis in AXES:
        field = FieldConfig(b_off=resonant_field(trap, FieldConfig(), axis))
        assert zeeman_splitting(field) == pytest.approx(trap.omega[axis_index(axis)], rel=1e-12)


def test_lamb_dicke_of_soft_axis(trap):
    assert lamb_dicke(trap, 'y') == pytest.approx(0.158, rel=0.02)
    assert lamb_dicke(trap, 'y') > lamb_dicke(trap, 'x') > lamb_dicke(trap, 'z')


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=20e3, max_value=1e6), st.floats(min_value=1.1, max_value=4.0))
def test_lamb_dicke_scales_as_inverse_sqrt_frequency(f_hz, factor):
    low = TrapConfig(omega=(2 * math.pi * f_hz,) * 3)
    high = TrapConfig(omega=(2 * math.pi * f_hz * factor,) * 3)
    assert lamb_dicke(low, 0) / lamb_dicke(high, 0) == pytest.approx(math.sqrt(factor), rel=1e-12)
    assert oscillator_length(low, 0) > oscillator_length(high, 0)


def test_short_wavelength_violates_lamb_dicke():
    with pytest.raises(LambDickeViolation):
        default_trap(wavelength_raman=200e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=0.0, max_value=5e6))
def test_coupling_is_linear_in_gradient(gradient):
    trap = default_trap()
    unit = spin_motion_coupling(trap, FieldConfig(b_gradient=1.0), 'y')
    assert spin_motion_coupling(trap, FieldConfig(b_gradient=gradient), 'y') == pytest.approx(gradient * unit)


def test_harmonic_levels_are_equally_spaced(trap):
    spacings = [anharmonic_level_energy(trap, 'y', n + 1) - anharmonic_level_energy(trap, 'y', n)
                for n in range(10)]
    assert max(spacings) == pytest.approx(min(spacings), rel=1e-12)


def test_anharmonic_spacing_shrinks_with_n():
    trap = default_trap(anharmonicity=(0.01, 0.01, 0.01))
    spacings = [anharmonic_level_energy(trap, 'z', n + 1) - anharmonic_level_energy(trap, 'z', n)
                for n in range(trap.trap_depth_quanta[2])]
    assert all(b < a for a, b in zip(spacings, spacings[1:]))


def test_level_above_trap_depth(trap):
    with pytest.raises(IndexAboveTrapDepth):
        anharmonic_level_energy(trap, 'x', trap.trap_depth_quanta[0] + 1)


def test_red_transition_is_negative(trap):
    blue = transition_frequency(trap, 'y', 0, 1)
    red = transition_frequency(trap, 'y', 1, 0)
    assert blue == pytest.approx(83e3, rel=1e-9)
    assert red == pytest.approx(-blue, rel=1e-12)


def test_scattering_rate_limits():
    assert scattering_rate(LaserConfig(intensity=0.0)) == 0.0
    saturated = LaserConfig(detuning=0.0, intensity=1e9)
    assert scattering_rate(saturated) == pytest.approx(saturated.linewidth_natural / 2, rel=1e-6)
    assert scattering_rate(LaserConfig(detuning=-12.0)) == pytest.approx(scattering_rate(LaserConfig(detuning=12.0)))


def test_axis_index_accepts_names_and_numbers():
    assert [axis_index(a) for a in AXES] == [0, 1, 2]
    assert axis_index(2) == 2
    with pytest.raises(ValueError):
        axis_index('w')
    with pytest.raises(ValueError):
        axis_index(3)


def test_config_records_validate():
    with pytest.raises(ValueError):
        TrapConfig(omega=(1.0, 2.0))
    with pytest.raises(ValueError):
        TrapConfig(omega=(1e5, -1e5, 1e5))
    with pytest.raises(ValueError):
        FieldConfig(b_off=-0.1)
    with pytest.raises(ValueError):
        LaserConfig(intensity=-1.0)
