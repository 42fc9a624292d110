"""Recurrent-network chains and fast memoryless multi-step rollout."""

from .cells import CellKind, CellParams, LayerState, PredictorParams
from .chain import ChainModel, build_model, chain_predict_next, chain_run, chain_step, zero_state
from .rollout import (
    ResetPolicy,
    RolloutResult,
    count_ew,
    count_ml,
    count_mw,
    predict_ew,
    predict_ml,
    predict_mw,
    speed_gain,
)
from .train import DatasetSpec, TrainConfig, generate_dataset, train

__version__ = "0.1.0"
