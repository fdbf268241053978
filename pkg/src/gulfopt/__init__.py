"""Guided functional-gradient training: successive mirror descent in function
space driving parameter-space regression, with baselines and a numerical
verification suite."""

from .data import Dataset, SyntheticSpec, gen_synthetic, load_csv_dataset
from .diagnostics import (
    DescentCheckConfig,
    StageRecord,
    alpha_regularized_loss,
    ensemble_predict,
    evaluate,
    record_trajectory,
    theorem21_descent_check,
)
from .funcspace import TabularFunction, prop21_functional_check, tabular_mirror_descent
from .losses import (
    BregmanGenerator,
    GuideTarget,
    LossFn,
    bregman,
    cross_entropy,
    guide_step_l2,
    guide_step_loss_generator,
    guide_step_mirror_exact,
    half_squared_norm,
    loss_generator,
    squared,
    squared_hinge,
)
from .models import (
    MlpArchitecture,
    MlpModel,
    backward,
    forward,
    init_random,
    load_checkpoint,
    param_norm_sq,
    save_checkpoint,
    shrink_last_layer,
)
from .numerics import RngStream, finite_diff_grad, log_sum_exp, rng_normal, stable_softmax
from .trainers import (
    GulfConfig,
    SgdConfig,
    base_loop,
    gulf_stage,
    gulf_train,
    prop22_grad_identity_check,
    sgd_run,
    train_base_lambda_alpha,
    train_label_smoothing,
    train_regular,
)

__version__ = "0.1.0"
