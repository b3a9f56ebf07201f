"""Class-incremental learning with distillation, bias removal and generative replay."""

from .batch import LabeledBatch
from .core import Parameter, SgdConfig, Tensor, backward, make_rng, matmul, relu, sgd_step, softmax
from .errors import (
    ContractError,
    DataGenerationError,
    FormatError,
    InclearnError,
    NumericError,
    ShapeError,
    TrainingDivergence,
)
from .losses import (
    BiasCorrection,
    LossConfig,
    apply_bias,
    combined_loss,
    cross_entropy_loss,
    distillation_loss,
    estimate_bias,
    predict,
)
from .models import ClassifierNet, CriticNet, FrozenClassifier, GeneratorNet, expand_head, forward_logits, snapshot
from .training import incremental_train, train_classifier

__version__ = "0.1.0"
