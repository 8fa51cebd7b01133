"""
Exception hierarchy for the DRC simulator.
Every error raised on purpose derives from DrcError so the CLI can report it as one line.
"""


class DrcError(Exception):
    """Root of all simulator errors."""
    exit_code = 1


class ConfigError(DrcError):
    exit_code = 2


class UsageError(DrcError):
    exit_code = 2


# trap-model
class LambDickeViolation(DrcError):
    pass


class IndexAboveTrapDepth(DrcError):
    pass


# quantum-core
class DimensionMismatch(DrcError):
    pass


# dynamics
class StepTooLarge(DrcError):
    pass


class TruncationOverflow(DrcError):
    pass


class NonUniqueSteadyState(DrcError):
    pass


class NoConvergence(DrcError):
    pass


class SingularBalanceMatrix(DrcError):
    pass


class FitDiverged(DrcError):
    pass


# spectroscopy
class GridTooCoarse(DrcError):
    pass


class NonPhysicalSidebands(DrcError):
    pass


# signal
class ModulationOverflow(DrcError):
    pass


class WindowTooLong(DrcError):
    pass


class GridMismatch(DrcError):
    pass


# fitting
class SingularNormalMatrix(DrcError):
    pass


class BoundsViolation(DrcError):
    pass
