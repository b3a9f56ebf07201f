from .exemplars import herding_order, normalize_features, select_herding, select_random
from .gan import (
    GanConfig,
    ReplayFilter,
    build_gan_memory,
    critic_loss,
    filter_replay,
    gan_train,
    generator_loss,
    label_samples,
    pseudo_label,
    true_component_accuracy,
)
from .store import ExemplarBudget, ExemplarStore

__all__ = [
    "ExemplarBudget", "ExemplarStore", "GanConfig", "ReplayFilter", "build_gan_memory", "critic_loss",
    "filter_replay", "gan_train", "generator_loss", "herding_order", "label_samples", "normalize_features",
    "pseudo_label", "select_herding", "select_random", "true_component_accuracy",
]
