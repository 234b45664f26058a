from .checkpoint import checkpoint_bytes, load_checkpoint, restore, save_checkpoint
from .config import ABLATION_ROWS, PRESETS, ConfigError, TrainConfig, load_config, parse_config_text
from .loop import Models, NumericError, Trainer, build_data, build_models, evaluate
from .plot import line_chart, runlog_charts
from .runlog import COLUMNS, RunLog

__all__ = [
    "checkpoint_bytes", "load_checkpoint", "restore", "save_checkpoint", "ABLATION_ROWS", "PRESETS",
    "ConfigError", "TrainConfig", "load_config", "parse_config_text", "Models", "NumericError", "Trainer",
    "build_data", "build_models", "evaluate", "line_chart", "runlog_charts", "COLUMNS", "RunLog",
]
