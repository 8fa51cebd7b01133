from .cooling import CoolingPipeline
from .fit import FitPipeline
from .resonances import ResonancesPipeline
from .spectrum import SpectrumPipeline
from .thermometry import ThermometryPipeline

__all__ = ['CoolingPipeline', 'FitPipeline', 'ResonancesPipeline', 'SpectrumPipeline', 'ThermometryPipeline']
