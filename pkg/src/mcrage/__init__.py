"""Rebalance class-imbalanced tabular data with a conditional denoising diffusion model."""
from .denoiser import Checkpoint, DenoiserParams, TrainConfig, init_params, train
from .diffusion import GuidanceConfig, NoiseSchedule, compute_T_prime, dataset_diameter, linear_schedule, sample
from .evaluation import EvalReport, fit_forest, per_group_report
from .forest import ForestConfig
from .rebalance import RebalancePlan, mcrage, smote, undersample_balance
from .schema import (
    ColumnSchema,
    Dataset,
    GroupIndexMap,
    ScalerParams,
    decode_group,
    destandardize,
    encode_group,
    group_stats,
    load_csv,
    make_imbalanced,
    standardize,
    train_test_split,
)

__version__ = "0.1.0"
