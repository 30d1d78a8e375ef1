"""Hide secret networks inside a carrier network through a shared parameter pool."""

from .nn import KINDS, Model, ModelSpec, ParamKind, arch_spec, forward, init_params, loss_and_grad
from .parampool import (
    FillAssignment,
    ParamPool,
    SecretKey,
    assemble,
    decode,
    decode_direct,
    decode_segmented,
    derive_assignment,
    fill,
    init_from_model,
    init_from_scratch,
    propagate,
    update,
)
from .trainer import RunLog, TaskSpec, TrainConfig, delta_perf, evaluate, train_joint
from .estimators import FCNClassifier, ModelHider, NoiseMemorizer, WeightHistogramTransformer

__version__ = "0.1.0"
