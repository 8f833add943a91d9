"""Two-adapter meta-learning for incremental forecasting under distribution shift."""

from .adapter import AdapterConfig, DataAdapter
from .config import RunConfig, load_config
from .data import StreamDataset, TaskSchedule, build_schedule, load_csv, normalize
from .metrics import evaluate_predictions, ic_per_date, partition_by_shift, rank_ic_per_date, summarize
from .models import LinearModel, MlpModel, build_model
from .pipeline import DoubleAdaptLearner, NaiveILLearner, RollingRetrainLearner, offline_train, online_train
from .synth import SynthConfig, generate

__all__ = [
    "AdapterConfig", "DataAdapter", "RunConfig", "load_config", "StreamDataset", "TaskSchedule", "build_schedule",
    "load_csv", "normalize", "evaluate_predictions", "ic_per_date", "rank_ic_per_date", "partition_by_shift",
    "summarize", "LinearModel", "MlpModel", "build_model", "DoubleAdaptLearner", "NaiveILLearner",
    "RollingRetrainLearner", "offline_train", "online_train", "SynthConfig", "generate",
]
