"""Limited-feedback multi-cell MU-MIMO beamforming with augmented deep unfolding."""

from .channel import Dataset, LayoutConfig, generate_dataset, read_dataset, write_dataset
from .config import ExperimentConfig, load_config, parse_config
from .errors import (AdubfError, ConfigError, ContractError, DimensionError, DomainError,
                     FormatError, SingularityError, TrainingDiverged)
from .model import ADUModel, ModelConfig
from .wmmse import f_wmmse, run_wmmse, sum_rate

__version__ = "0.1.0"
