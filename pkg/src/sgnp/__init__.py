"""Sparse Gaussian neural processes on a small numpy autodiff engine."""

from .data import (MetaDataset, Task, gen_1d_regression, gen_2d_classification, load_csv_tasks,
                   split_context_target)
from .errors import (NumericalError, ParseError, ResourceError, SchemaError, SGNPError,
                     TrainingError, ValidationError)
from .gp_core import (Bernoulli, Gaussian, GaussianPredictive, InducingState, collapsed_elbo,
                      elbo, exact_posterior, log_marginal, sparse_predict, titsias_collapse)
from .kernels import SEARD, Periodic, Sum, gram, se
from .models import MetaTrainConfig, Model, ModelSpec, evaluate, meta_train

__all__ = [
    "Bernoulli", "Gaussian", "GaussianPredictive", "InducingState", "MetaDataset",
    "MetaTrainConfig", "Model", "ModelSpec", "NumericalError", "ParseError", "ResourceError",
    "SGNPError", "SchemaError", "Task", "TrainingError", "ValidationError", "collapsed_elbo",
    "elbo", "evaluate", "exact_posterior", "gen_1d_regression", "gen_2d_classification", "gram",
    "Periodic", "SEARD", "Sum", "load_csv_tasks", "log_marginal", "meta_train", "se", "sparse_predict",
    "split_context_target", "titsias_collapse",
]
