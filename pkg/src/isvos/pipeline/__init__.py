"""Inference loop, joint training, sweeps, benchmarks, gradient suite and CLI."""

from .config import ModelConfig
from .inference import RunReport, occupancy_sequence, run_inference
from .model import ISVOS, FrameFeatures
from .sweep import SweepTable, memory_size_sweep
from .train import MomentumSGD, TrainResult, clip_loss, train_toy
