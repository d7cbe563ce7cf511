"""Text-conditioned spatiotemporal forecasting model and its ablation variants."""

from eventflow.fusion.layers import (
    dynamic_context,
    head,
    infuse,
    influence,
    param_shapes,
    st_encode,
    time_embedding,
    time_indices,
)
from eventflow.fusion.model import VARIANTS, Batch, Scaler, TstConfig, TstModel, collate, make_variant, tst_forward
from eventflow.fusion.train import (
    TrainingAborted,
    TrainResult,
    dump_introspection,
    evaluate_loss,
    load_checkpoint,
    noise_contexts,
    save_checkpoint,
    train,
)

__all__ = [
    "VARIANTS",
    "Batch",
    "Scaler",
    "TrainResult",
    "TrainingAborted",
    "TstConfig",
    "TstModel",
    "collate",
    "dump_introspection",
    "dynamic_context",
    "evaluate_loss",
    "head",
    "infuse",
    "influence",
    "load_checkpoint",
    "make_variant",
    "noise_contexts",
    "param_shapes",
    "save_checkpoint",
    "st_encode",
    "time_embedding",
    "time_indices",
    "train",
    "tst_forward",
]
