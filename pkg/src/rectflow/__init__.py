"""Rectified-flow generative modelling for mixed-type tables."""

from .data import Column, SplitSpec, TableData, TableSchema, load_csv, load_schema, split, write_csv
from .flow import FlowConfig
from .metrics import MetricsReport, evaluate
from .model import ModelConfig, VelocityNet
from .sampler import SolverConfig, generate, integrate
from .training import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
