"""Multi-hypothesis trajectory forecasting with winner-takes-all losses.

The package trains small multi-head MLPs on synthetic branching futures and
compares hard, relaxed, evolving, divide-and-conquer and annealed variants
of the winner-takes-all objective.
"""

from .datagen import (
    FeaturizedScene,
    GeneratorConfig,
    Scene,
    denormalize_prediction,
    endpoint_ring_config,
    featurize,
    generate,
    generate_scene,
    load_dataset,
    save_dataset,
    three_branch_config,
)
from .errors import (
    ConfigurationError,
    DatasetParseError,
    InputError,
    NonFiniteError,
    WtalabError,
)
from .harness import (
    EpochRecord,
    ExperimentConfig,
    ModelSettings,
    OptimizerConfig,
    SweepCell,
    TrainResult,
    emit_charts,
    evaluate_cmd,
    load_config,
    save_config,
    sweep,
    train,
)
from .losses import (
    AssignmentWeights,
    LossConfig,
    ade_cost,
    assignment_weights,
    awta_weights,
    batch_objective,
    cost_vector,
    dac_weights,
    ewta_weights,
    rwta_weights,
    score_loss,
    weighted_loss,
    winner_index,
    wta_weights,
)
from .metrics import (
    MetricsReport,
    brier_fde,
    effective_hypotheses,
    evaluate,
    min_ade,
    min_fde,
    miss_rate,
)
from .network import (
    AdamState,
    GradientBuffer,
    HypothesisSet,
    ModelConfig,
    ModelParams,
    adam_step,
    backward,
    forward,
    gradient_check,
    init_adam,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .postselect import NMSConfig, nms_select
from .schedulers import (
    ScheduleState,
    constant_temperature,
    dac_depth,
    ewta_topn,
    exp_temperature,
    linear_temperature,
    temperature,
)

__version__ = "0.1.0"
