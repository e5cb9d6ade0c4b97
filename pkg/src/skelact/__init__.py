"""Desk-scale skeleton action recognition with body-part cross-attention.

A from-scratch float64 stack: tape-based autodiff tensors, a channel-wise
topology graph-conv backbone, dual-branch body-part cross-attention blocks,
channel-transposed temporal attention, and four-stream score ensembling,
all verified by finite-difference and brute-force oracles rather than
full-dataset training.
"""

from .tensor import Tensor, Parameter, ShapeError, NumericError, backward
from .gradcheck import grad_check
from .skeleton import (SkeletonSequence, PartitionTable, DatasetManifest,
                       default_partitions, default_layout, toy_layout,
                       parse_skeleton, write_skeleton, derive_stream,
                       synth_generate)
from .model import (ModelConfig, init_model, pipeline_forward, predict_proba,
                    cross_entropy, train, evaluate, ensemble_fuse)

__all__ = [
    "Tensor", "Parameter", "ShapeError", "NumericError", "backward",
    "grad_check", "SkeletonSequence", "PartitionTable", "DatasetManifest",
    "default_partitions", "default_layout", "toy_layout", "parse_skeleton",
    "write_skeleton", "derive_stream", "synth_generate", "ModelConfig",
    "init_model", "pipeline_forward", "predict_proba", "cross_entropy",
    "train", "evaluate", "ensemble_fuse",
]

__version__ = "0.1.0"
