import math
import os
import sys

import pytest

# Add project root to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.trap_model import FieldConfig, LaserConfig, TrapConfig, default_trap, resonant_field  # noqa: E402

SPECTRUM_KHZ = (154.0, 94.0, 233.0)
SPECTRUM_MEAN_N = (1.4, 0.58, 0.22)


@pytest.fixture
def trap() -> TrapConfig:
    return default_trap()


@pytest.fixture
def spectrum_trap() -> TrapConfig:
    return default_trap(omega=tuple(2 * math.pi * f * 1e3 for f in SPECTRUM_KHZ))


@pytest.fixture
def laser() -> LaserConfig:
    return LaserConfig()


@pytest.fixture
def resonant(trap) -> FieldConfig:
    """Offset field tuned to the y trap frequency."""
    base = FieldConfig()
    return FieldConfig(b_off=resonant_field(trap, base, 'y'))
