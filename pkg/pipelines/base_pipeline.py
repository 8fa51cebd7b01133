"""
Base Pipeline Abstract Class
Configuration access and artifact output shared by every subcommand.
"""
import logging
from abc import ABC, abstractmethod
from typing import Any, Dict, List

from core.config import RunConfig
from core.csv_handler import CSVHandler
from core.processor import Processor

logger = logging.getLogger(__name__)


class BasePipeline(ABC):
    def __init__(self, config: RunConfig, processor: Processor):
        self.config = config
        self.processor = processor
        self.name = "BasePipeline"
        self.output = CSVHandler(config.out_dir)

    def _section(self, name: str) -> Dict[str, Any]:
        """Stage-specific configuration section."""
        return self.config[name]

    def out_path(self, name: str) -> str:
        return self.output.path(name)

    @property
    def seed(self) -> int:
        return self.config.seed

    @abstractmethod
    def run(self, **options) -> List[str]:
        """
        Execute the stage and return the paths of the files written.
        """
        pass
