"""Variable-projection boosting with separable weak learners."""
from .boost import BoostConfig, Ensemble, Learner, StageRecord, boost, ensemble_predict, optimal_constant, reduction_ratio
from .datasets import Dataset, gen_synthetic, load_csv, split_standardize, write_csv
from .diagnostics import RegularityReport, regularity_report
from .errors import (
    ConfigError,
    DataError,
    DegenerateClassError,
    GenerationError,
    InputError,
    NumericalError,
    ParseError,
    VPBoostError,
)
from .featurizer import FeaturizerSpec, feature_batch, init_theta
from .losses import LossKind, LossTag, empirical_loss, loss_batch, loss_eval
from .varpro import assemble_reduced, model_reduction, quadratic_grad_theta, solve_optimal_weights
from .weak import TrainConfig, Variant, train_weak_learner

__version__ = "0.1.0"
