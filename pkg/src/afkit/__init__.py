"""Data-parallel alignment-free sequence comparison."""

from __future__ import annotations

from afkit.engine import AFMatrix, Counters, PipelineConfig, Strategy, run_pipeline
from afkit.kernels import BACKEND
from afkit.seqio import Dataset, load_dataset

__all__ = ["AFMatrix", "BACKEND", "Counters", "Dataset", "PipelineConfig", "Strategy",
           "load_dataset", "run_pipeline"]
__version__ = "0.1.0"
