"""Domain-decomposed physics-informed networks."""
from .losses import (
    LossBreakdown,
    LossEngine,
    lagrange_solve,
    lagrange_weights,
    loss_and_gradient,
    loss_terms,
)
from .model import (
    COLLOCATION_TARGETS,
    TRIAL_MODES,
    BlockGrid,
    BlockModel,
    CollocationSet,
    LossWeights,
    build_model,
    normalize_coefficient,
    predict,
    sample_collocation,
    trial_value,
)
from .train import (
    SplitStage,
    TrainConfig,
    continuation_epsilon,
    recurrent_split_init,
    split_model,
    train,
)
