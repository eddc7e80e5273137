"""Linear-utility direct preference optimization for diffusion and flow models, at toy scale."""

from .schedules import Paradigm, Schedule, make_schedule, schedule_coeffs, sde_from_schedule
from .dynamics import (
    GaussianStep,
    PredictionKind,
    drift,
    euler_maruyama_step,
    gaussian_kl_same_cov,
    perturb,
    sample,
    score_from_velocity_rf,
    target_value,
    velocity_from_score,
)
from .nn import MlpModel, OptimizerState, finite_diff_grad, grad_loss, mlp_forward, mlp_init, optimizer_step
from .objectives import (
    DpoConfig,
    LambdaMode,
    PreferencePair,
    UtilityKind,
    UtilitySpec,
    delta_d,
    dpo_gradient_weight,
    dpo_sigmoid_loss,
    dpo_unified_loss,
    implicit_accuracy,
    lambda_weight,
    linear_dpo_loss,
    linear_dpo_weight,
    normalize_utility,
    sft_loss,
    utility,
)
from .data_io import Mode, ToyTaskSpec, gen_dataset, load_dataset, pref_mass, save_dataset
from .training import TrainConfig, TrainState, ema_update, train_run, train_sft, train_step

__version__ = "0.1.0"
