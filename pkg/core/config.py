"""
Run configuration: sectioned YAML in human units, merged over compiled-in defaults and
converted to SI records once at load time.
"""
import copy
import logging
import math
import os
from typing import Any, Dict, List, Optional

import yaml
from scipy import constants

from .errors import ConfigError, DrcError
from .rate_model import CoolingSetup
from .trap_model import AXES, FieldConfig, LaserConfig, TrapConfig, scattering_rate

logger = logging.getLogger(__name__)

DEFAULTS: Dict[str, Any] = {
    'seed': 1,
    'out_dir': 'out',
    'workers': 1,
    'trap': {
        'frequencies_khz': [136.0, 83.0, 215.0],
        'anharmonicity': [0.0, 0.0, 0.0],
        'mass_amu': 132.905451933,
        'wavelength_nm': 852.3,
        'depth_quanta': [25, 25, 25],
        'lamb_dicke_projection': [1.0, 1.0, 1.0],
    },
    'field': {
        'b_off_gauss': 0.237,
        'gradient_gauss_per_um': 0.5,
        'lande_g': 0.25,
        'f_total': 4,
    },
    'laser': {
        'detuning_gamma': -12.0,
        'intensity_sat': 4.1,
        'linewidth_mhz': 5.22,
        'ac_stark_khz_per_mf': 0.0,
    },
    'dissipators': {
        'background_heating_quanta_per_ms': 0.3,
        'recoil_geometry': 0.4,
        'background_occupation': 1.0e4,
        'coupling_scale': 0.3,
        'pump_rate_per_s': None,
    },
    'signal': {
        'mean_rate': 5.0e6,
        'modulation_depth': 0.9,
        'carrier_mhz': 10.0,
        'duration_ms': 200.0,
        'window_ms': 1.0,
        'overlap': 0.5,
        'bin_ns': 20.0,
        'realizations': 100,
        'half_span_khz': 300.0,
        'scaling': 'density',
    },
    'fit': {
        'max_iterations': 200,
        'initial_damping': 1.0e-3,
        'log_occupation': False,
        'release_anharmonicity': False,
        'exclude_khz': 40.0,
        'starts': 1,
        'weighted': False,
        'ab_initio_khz': [136.0, 83.0, 215.0],
    },
    'scan': {
        'b_min_gauss': 0.05,
        'b_max_gauss': 1.0,
        'points': 40,
        'duration_ms': 500.0,
        'samples': 20,
        'initial_mean_n': 1.0,
        'model': 'rate',
        'axes': ['x', 'y', 'z'],
        'laser_b_off_gauss': 0.5,
        'laser_duration_ms': 80.0,
        'laser_detunings_gamma': [-20.0, -16.0, -12.0, -8.0, -4.0, -2.0, 2.0, 4.0, 8.0, 12.0],
        'laser_intensities_sat': [6.8, 1.4, 0.14],
    },
    'cool': {
        'axis': 'y',
        'n_max': 22,
        'duration_ms': 2.0,
        'dt_us': 10.0,
        'initial_mean_n': 2.0,
        'method': 'expm',
        'absorbing': False,
        'lifetime_duration_ms': 500.0,
        'lifetime_samples': 50,
    },
    'spectrum': {
        'mode': 'synth',
        'mean_n': [1.4, 0.58, 0.22],
        'frequencies_khz': [154.0, 94.0, 233.0],
        'gamma_sc_per_s': None,
        'min_width_khz': 10.0,
        'amplitude': 1.0,
        'offset': 0.0,
        'spacing_khz': 1.0,
        'half_span_khz': 300.0,
    },
    'thermometry': {
        'half_width_khz': None,
        'half_width_linewidths': 5.0,
        'edge_fraction': 0.1,
        'frequencies_khz': None,
    },
}


def _merge(defaults: Dict[str, Any], overrides: Dict[str, Any], path: str = '') -> Dict[str, Any]:
    merged = copy.deepcopy(defaults)
    for key, value in overrides.items():
        dotted = f'{path}{key}'
        if key not in defaults:
            raise ConfigError(f"Unknown configuration key '{dotted}'")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{dotted}' must be a section, got {type(value).__name__}")
            merged[key] = _merge(defaults[key], value, dotted + '.')
        else:
            merged[key] = value
    return merged


def load_config(path: Optional[str]) -> Dict[str, Any]:
    """Read YAML overrides; a missing file falls back to defaults with a warning."""
    if not path:
        return {}
    if not os.path.exists(path):
        logger.warning(f"Config file not found at {path}. Using defaults.")
        return {}
    with open(path, 'r', encoding='utf-8') as f:
        try:
            data = yaml.safe_load(f) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"Cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a mapping of sections")
    return data


class RunConfig:
    """Effective configuration. Sections are plain dicts; typed records are built on demand."""

    def __init__(self, overrides: Optional[Dict[str, Any]] = None):
        self.data = _merge(DEFAULTS, overrides or {})
        try:
            self.validate()
        except DrcError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{type(exc).__name__}: {exc}") from exc
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path: Optional[str]) -> 'RunConfig':
        return cls(load_config(path))

    def __getitem__(self, section: str) -> Any:
        return self.data[section]

    def override(self, **values) -> 'RunConfig':
        """Top-level scalars (seed, out_dir, workers) from the command line; None keeps the current value."""
        changes = {k: v for k, v in values.items() if v is not None}
        merged = copy.deepcopy(self.data)
        merged.update(changes)
        return RunConfig(merged)

    def dump(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=False, default_flow_style=None)

    def validate(self):
        self.trap()
        self.field()
        self.laser()
        self.cooling_setup()
        if int(self.data['workers']) < 1:
            raise ConfigError("workers must be >= 1")
        scan = self.data['scan']
        axis_list(scan['axes'])
        axis_list([self.data['cool']['axis']])
        if scan['model'] not in ('rate', 'lindblad'):
            raise ConfigError(f"scan.model must be 'rate' or 'lindblad', got {scan['model']!r}")
        if self.data['cool']['method'] not in ('expm', 'rk4'):
            raise ConfigError(f"cool.method must be 'expm' or 'rk4', got {self.data['cool']['method']!r}")
        if self.data['spectrum']['mode'] not in ('synth', 'pipeline'):
            raise ConfigError(f"spectrum.mode must be 'synth' or 'pipeline', got {self.data['spectrum']['mode']!r}")
        for key in ('mean_n', 'frequencies_khz'):
            if len(self.data['spectrum'][key]) != 3:
                raise ConfigError(f"spectrum.{key} needs three values (x, y, z)")
        if len(self.data['fit']['ab_initio_khz']) != 3:
            raise ConfigError("fit.ab_initio_khz needs three values (x, y, z)")
        if not float(self.data['thermometry']['half_width_linewidths']) > 0:
            raise ConfigError("thermometry.half_width_linewidths must be positive")

    def trap(self, frequencies_khz: Optional[List[float]] = None) -> TrapConfig:
        t = self.data['trap']
        freqs = t['frequencies_khz'] if frequencies_khz is None else frequencies_khz
        return TrapConfig(omega=tuple(2 * math.pi * float(f) * 1e3 for f in freqs),
                          anharmonicity=tuple(t['anharmonicity']),
                          mass=float(t['mass_amu']) * constants.atomic_mass,
                          wavelength_raman=float(t['wavelength_nm']) * 1e-9,
                          trap_depth_quanta=tuple(t['depth_quanta']),
                          lamb_dicke_projection=tuple(t['lamb_dicke_projection']))

    def field(self) -> FieldConfig:
        f = self.data['field']
        return FieldConfig(b_off=float(f['b_off_gauss']),
                           b_gradient=float(f['gradient_gauss_per_um']) * 1e6,
                           lande_g=float(f['lande_g']),
                           f_total=int(f['f_total']))

    def laser(self) -> LaserConfig:
        section = self.data['laser']
        return LaserConfig(detuning=float(section['detuning_gamma']),
                           intensity=float(section['intensity_sat']),
                           linewidth_natural=2 * math.pi * float(section['linewidth_mhz']) * 1e6,
                           ac_stark_shift_per_mf=2 * math.pi * float(section['ac_stark_khz_per_mf']) * 1e3)

    def cooling_setup(self, axes: Optional[List[str]] = None, pump: bool = True) -> CoolingSetup:
        d = self.data['dissipators']
        pump_rate = d['pump_rate_per_s']
        return CoolingSetup(trap=self.trap(), field=self.field(), laser=self.laser(),
                            background_heating=float(d['background_heating_quanta_per_ms']) * 1e3,
                            recoil_geometry=float(d['recoil_geometry']),
                            background_occupation=float(d['background_occupation']),
                            coupling_scale=float(d['coupling_scale']),
                            pump=pump,
                            pump_rate=None if pump_rate is None else float(pump_rate),
                            axes=tuple(axes or self.data['scan']['axes']))

    def gamma_sc(self) -> float:
        value = self.data['spectrum']['gamma_sc_per_s']
        return scattering_rate(self.laser()) if value is None else float(value)

    def ab_initio_trap(self) -> TrapConfig:
        """The configured trap with the ab initio frequencies the fit is compared against."""
        return self.trap(self.data['fit']['ab_initio_khz'])

    @property
    def seed(self) -> int:
        return int(self.data['seed'])

    @property
    def out_dir(self) -> str:
        return str(self.data['out_dir'])

    @property
    def workers(self) -> int:
        return int(self.data['workers'])


def axis_list(values) -> List[str]:
    axes = [str(a) for a in values]
    unknown = [a for a in axes if a not in AXES]
    if unknown:
        raise ConfigError(f"Unknown axes {unknown}, expected a subset of {list(AXES)}")
    return axes
