"""Multi-target filtering and tracking with a ConvLSTM predictor over PHD maps."""

from ._accel import USE_NUMBA, backend_name
from .config import PipelineConfig, dump_config, load_config, parse_config

__version__ = "0.1.0"

__all__ = ["PipelineConfig", "USE_NUMBA", "backend_name", "dump_config", "load_config", "parse_config"]
