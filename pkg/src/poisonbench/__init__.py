"""poisonbench: indiscriminate data-poisoning attacks and a unified
pretrain/attack/test benchmark for small differentiable classifiers."""

from .data import (
    GaussianSpec,
    LabeledDataset,
    OrderingPlan,
    PoisonBudget,
    assemble_poisoned,
    load_csv,
    load_idx,
    make_binary_subset,
    save_csv,
    split,
    synth_gaussian,
)
from .models import (
    GeneratorNet,
    LogisticRegression,
    Mlp,
    ModelShape,
    ParamVector,
    SmoothedHingeSVM,
    TrainConfig,
    accuracy,
    cross_hvp_data,
    cross_hvp_theta,
    gen_forward,
    init_params,
    load_checkpoint,
    make_model,
    save_checkpoint,
    train_gd,
    train_to_tol,
)
from .numkit import CgConfig, CgResult, cg_solve, fd_grad, fd_hvp

__version__ = "0.1.0"
