"""Multi-site ComBat harmonization and leakage-free pretend-target prediction.

Modules: ``data`` (datasets, schemas, folds), ``combat`` (parametric
location/scale harmonization with empirical Bayes), ``predictors`` (random
forest, logistic, ridge), ``pretty`` (PrettYharmonize), ``schemes`` (the five
harmonization schemes and the CV harness), ``metrics``, ``synth`` (synthetic
data and sampling designs) and ``cli``.
"""

__version__ = "0.1.0"

from .combat import CombatConfig, CombatModel  # noqa: E402
from .data import Dataset, Schema, TaskKind, load_dataset, make_folds  # noqa: E402
from .errors import (  # noqa: E402
    ConfigError,
    ConvergenceError,
    DataError,
    HarmonbenchError,
    NumericalError,
    UnknownSiteError,
)
from .predictors import PredictorSpec  # noqa: E402
from .pretty import PrettyConfig, PrettyModel  # noqa: E402
from .schemes import ExperimentConfig, Scheme, compare_schemes, run_experiment  # noqa: E402
from .synth import DependenceSpec, GenConfig, generate, sample_dependence, sample_independence  # noqa: E402

__all__ = [
    "CombatConfig",
    "CombatModel",
    "ConfigError",
    "ConvergenceError",
    "DataError",
    "Dataset",
    "DependenceSpec",
    "ExperimentConfig",
    "GenConfig",
    "HarmonbenchError",
    "NumericalError",
    "PredictorSpec",
    "PrettyConfig",
    "PrettyModel",
    "Schema",
    "Scheme",
    "TaskKind",
    "UnknownSiteError",
    "compare_schemes",
    "generate",
    "load_dataset",
    "make_folds",
    "run_experiment",
    "sample_dependence",
    "sample_independence",
]
