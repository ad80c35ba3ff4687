"""Hierarchical Bayes mixed logit with prior transfer and early stopping."""

from .controller import (EarlyStopConfig, PriorModel, ValidationTrace, direct_application,
                         evaluate, extract_prior, run_benchmark, run_esbda)
from .data_io import (DatasetSchema, GroundTruth, generate_synthetic, grouped_split,
                      load_dataset, load_model, load_spec, save_dataset, save_model)
from .engine import GibbsConfig, PosteriorSummary, run_chain, summarize_posterior
from .errors import ChainAborted, DataError, MixLogitError, NumericalError, SpecificationError
from .metrics import MetricsPair, behavioral_consistency, cel, gmpca, significance_stars
from .model import (CoefficientKind, CoefficientSpec, Dataset, ModelParams, UtilitySpec,
                    choice_probabilities)
from .samplers import rng_stream

__version__ = "0.1.0"
