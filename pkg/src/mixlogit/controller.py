"""Prior injection, early stopping on validation cross-entropy, and the benchmark.

A transfer run starts the Gibbs chain from a previously estimated model,
tracks the cross-entropy of the trailing posterior mean on a held-out
validation fold every ``thin`` epochs, and stops once ``patience`` epochs
pass without improvement. The reported estimate is rolled back to the best
checkpoint, i.e. ``patience`` epochs before the stop.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .engine import (ChainState, GibbsConfig, PosteriorSummary, RetainedDraws,
                     initial_state, run_chain, summarize_posterior)
from .errors import DataError, SpecificationError
from .metrics import ConsistencyReport, MetricsPair, behavioral_consistency, cel_from_log
from .model import Dataset, ModelParams, UtilitySpec, simulated_log_prob
from .samplers import rng_stream

log = logging.getLogger(__name__)

EVAL_STREAM = 1

APPROACHES = ("esbda", "bda", "nonconjugate", "direct")


@dataclass(frozen=True, eq=False)
class PriorModel:
    spec: UtilitySpec
    alpha: np.ndarray
    zeta: np.ndarray
    omega: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        params = ModelParams(self.alpha, self.zeta, self.omega).check(self.spec)
        object.__setattr__(self, "alpha", params.alpha)
        object.__setattr__(self, "zeta", params.zeta)
        object.__setattr__(self, "omega", params.omega)

    def params(self) -> ModelParams:
        return ModelParams(self.alpha.copy(), self.zeta.copy(), self.omega.copy())


def extract_prior(summary: PosteriorSummary, provenance: str = "") -> PriorModel:
    """Posterior means of a summary, packaged as the prior for the next transfer."""
    return PriorModel(summary.spec, summary.alpha_mean.copy(), summary.zeta_mean.copy(),
                      summary.omega_mean.copy(), provenance)


@dataclass(frozen=True)
class EarlyStopConfig:
    patience: int | None = 200  # epochs; None disables early stopping
    min_epochs: int = 0

    def check(self, thin: int):
        if self.patience is not None and (self.patience < thin or self.patience % thin):
            raise SpecificationError(
                f"patience {self.patience} must be a positive multiple of the "
                f"checkpoint interval {thin}")


@dataclass
class ValidationTrace:
    epochs: list = field(default_factory=list)
    train_cel: list = field(default_factory=list)
    validation_cel: list = field(default_factory=list)
    improved: list = field(default_factory=list)
    best_epoch: int | None = None
    best_cel: float = math.inf
    stop_epoch: int | None = None  # set only when early stopping triggered
    checkpoint_state: ChainState | None = None
    checkpoint_draws: RetainedDraws | None = None

    def __len__(self):
        return len(self.epochs)

    def record(self, epoch: int, train_cel: float, validation_cel: float) -> bool:
        """Append a checkpoint; True when it strictly improves the best CEL."""
        better = validation_cel < self.best_cel
        self.epochs.append(epoch)
        self.train_cel.append(train_cel)
        self.validation_cel.append(validation_cel)
        self.improved.append(better)
        if better:
            self.best_cel, self.best_epoch = validation_cel, epoch
        return better

    @property
    def stopped(self) -> bool:
        return self.stop_epoch is not None

    @property
    def output_epoch(self) -> int | None:
        """Epoch whose estimate is reported."""
        if self.stopped:
            return self.best_epoch
        return self.epochs[-1] if self.epochs else None

    def rows(self) -> list[dict]:
        return [{"epoch": e, "train_cel": t, "validation_cel": v, "best_so_far": int(b)}
                for e, t, v, b in zip(self.epochs, self.train_cel, self.validation_cel,
                                      self.improved)]


def init_from_prior(prior: PriorModel | None, dataset: Dataset) -> ChainState:
    """Chain start: the prior's parameters, or zeta=0, Omega=I, alpha=0 without one."""
    spec = dataset.spec
    if prior is None:
        params = ModelParams(np.zeros(spec.q), np.zeros(spec.p), np.eye(spec.p))
    else:
        if prior.spec.spec_hash != spec.spec_hash:
            raise SpecificationError("prior model was estimated on a different specification")
        params = prior.params()
    return initial_state(dataset, params)


def evaluate(params: ModelParams, dataset: Dataset, draws: int, seed: int) -> MetricsPair:
    """CEL/GMPCA of the simulated unconditional probabilities on ``dataset``.

    The mixing draws depend only on ``seed``, so repeated calls use common
    random numbers.
    """
    if dataset.n_situations == 0:
        raise DataError("evaluation set has no choice situations")
    params.check(dataset.spec)
    z = rng_stream(seed, EVAL_STREAM).standard_normal((draws, dataset.spec.p))
    return MetricsPair.from_log_probs(
        simulated_log_prob(params, dataset.design, dataset.spec.kinds, z))


def checkpoint_evaluate(state: ChainState, window: RetainedDraws | None, dataset: Dataset,
                        draws: int, seed: int) -> float:
    """Validation CEL of the trailing-window posterior mean (current state if empty)."""
    params = window.mean_params() if window is not None and len(window) else state.params
    return evaluate(params, dataset, draws, seed).cel


def should_stop(trace: ValidationTrace, config: EarlyStopConfig) -> bool:
    if config.patience is None or not trace.epochs or trace.best_epoch is None:
        return False
    current = trace.epochs[-1]
    return current - trace.best_epoch >= config.patience and current >= config.min_epochs


def run_esbda(train: Dataset, validation: Dataset | None, prior: PriorModel | None = None,
              gibbs: GibbsConfig = GibbsConfig(), stop: EarlyStopConfig = EarlyStopConfig(),
              evaluator=None, eval_seed: int | None = None):
    """Estimate on ``train`` with optional prior start and early stopping.

    ``prior=None`` gives the nonconjugate simulator; ``stop.patience=None``
    gives plain BDA. ``evaluator(state, window)`` may replace the default
    ``(train CEL, validation CEL)`` computation. Without a validation set
    only the training CEL is tracked and early stopping is disabled.

    Returns ``(summary, trace)``; the summary comes from the best checkpoint
    when early stopping fired, otherwise from the final trailing window.
    """
    if validation is not None and validation.spec.spec_hash != train.spec.spec_hash:
        raise SpecificationError("training and validation data use different specifications")
    if validation is not None:
        overlap = set(train.groups) & set(validation.groups)
        if overlap:
            raise DataError(f"training and validation folds share groups {sorted(overlap)[:5]}")
    stop.check(gibbs.thin)
    eval_seed = gibbs.seed if eval_seed is None else eval_seed
    if evaluator is None:
        def evaluator(state, window):
            tr = checkpoint_evaluate(state, window, train, gibbs.draws, eval_seed)
            if validation is None:
                return tr, math.nan
            return tr, checkpoint_evaluate(state, window, validation, gibbs.draws, eval_seed)

    trace = ValidationTrace()
    early = stop.patience is not None and validation is not None

    def monitor(epoch, state, draws):
        window = draws.window(gibbs.window)
        train_cel, val_cel = evaluator(state, window)
        if trace.record(epoch, train_cel, val_cel):
            trace.checkpoint_state = state.copy()
            trace.checkpoint_draws = window
        if early and should_stop(trace, stop):
            trace.stop_epoch = epoch
            return True
        return False

    init = init_from_prior(prior, train)
    draws, final = run_chain(train, gibbs, init, monitor)
    if trace.stopped:
        log.info("early stop at epoch %d, output epoch %d (CEL %.4f)",
                 trace.stop_epoch, trace.best_epoch, trace.best_cel)
        summary = summarize_posterior(trace.checkpoint_draws, gibbs.window)
    elif len(draws):
        summary = summarize_posterior(draws, gibbs.window)
    else:
        summary = summarize_posterior(RetainedDraws.from_state(train.spec, final), gibbs.window)
    return summary, trace


def direct_application(prior: PriorModel, dataset: Dataset, draws: int, seed: int) -> MetricsPair:
    """Metrics of the unmodified prior model on new data; no estimation."""
    if prior.spec.spec_hash != dataset.spec.spec_hash:
        raise SpecificationError("prior model was estimated on a different specification")
    return evaluate(prior.params(), dataset, draws, seed)


# --- benchmark -------------------------------------------------------------

@dataclass
class Level:
    """One modelling scenario: a dataset and its fold sizes in groups.

    Level 0 uses ``folds=(n_train,)``; lower levels use
    ``(n_train, n_validation, n_test)``.
    """

    name: str
    dataset: Dataset
    folds: tuple


@dataclass
class ApproachResult:
    approach: str
    summary: PosteriorSummary
    trace: ValidationTrace | None
    validation: MetricsPair
    test: MetricsPair
    consistency: ConsistencyReport | None
    epochs_run: int


@dataclass
class LevelResult:
    name: str
    fold_situations: tuple
    results: dict  # approach -> ApproachResult, in APPROACHES order


@dataclass
class BenchmarkReport:
    base_name: str
    base_summary: PosteriorSummary
    base_trace: ValidationTrace
    levels: list

    def metrics_rows(self) -> list[dict]:
        rows = []
        for level in self.levels:
            for name, r in level.results.items():
                for fold, m in (("validation", r.validation), ("test", r.test)):
                    rows.append({
                        "level": level.name, "approach": name, "fold": fold,
                        "cel": m.cel, "gmpca": m.gmpca, "epochs_run": r.epochs_run,
                        "output_epoch": "" if r.trace is None else r.trace.output_epoch,
                        "stop_epoch": "" if r.trace is None or not r.trace.stopped
                        else r.trace.stop_epoch,
                    })
        return rows


def run_benchmark(levels, gibbs: GibbsConfig = GibbsConfig(),
                  stop: EarlyStopConfig = EarlyStopConfig(), seed: int = 0,
                  cost_coefficient: str | None = None) -> BenchmarkReport:
    """Estimate the base level, then transfer down the levels with all four approaches.

    Each lower level receives as prior the ESBDA estimate of the level above
    (the base estimate for the first one).
    """
    from .data_io import grouped_split

    levels = list(levels)
    if not levels:
        raise SpecificationError("benchmark plan has no levels")
    base = levels[0]
    if len(base.folds) < 1:
        raise SpecificationError(f"{base.name}: missing training fold size")
    base_train, _, _ = grouped_split(base.dataset, (base.folds[0], 0, 0), seed)
    log.info("%s: nonconjugate estimation on %d situations", base.name, base_train.n_situations)
    base_summary, base_trace = run_esbda(base_train, None, None, gibbs,
                                         EarlyStopConfig(patience=None))
    reference = base_summary
    prior = extract_prior(base_summary, f"{base.name} nonconjugate")
    out = []
    for idx, level in enumerate(levels[1:], start=1):
        if len(level.folds) != 3:
            raise SpecificationError(f"{level.name}: need (train, validation, test) fold sizes")
        train, val, test = grouped_split(level.dataset, tuple(level.folds), seed + idx)
        results = {}
        runs = {
            "esbda": (prior, stop),
            "bda": (prior, EarlyStopConfig(patience=None)),
            "nonconjugate": (None, EarlyStopConfig(patience=None)),
        }
        for name, (p, s) in runs.items():
            log.info("%s: running %s", level.name, name)
            summary, trace = run_esbda(train, val, p, gibbs, s)
            params = summary.params()
            results[name] = ApproachResult(
                name, summary, trace,
                evaluate(params, val, gibbs.draws, gibbs.seed),
                evaluate(params, test, gibbs.draws, gibbs.seed),
                behavioral_consistency(summary, reference, cost_coefficient)
                if cost_coefficient else None,
                trace.stop_epoch or (trace.epochs[-1] if trace.epochs else 0))
        results["direct"] = ApproachResult(
            "direct", reference, None,
            direct_application(prior, val, gibbs.draws, gibbs.seed),
            direct_application(prior, test, gibbs.draws, gibbs.seed),
            behavioral_consistency(reference, reference, cost_coefficient)
            if cost_coefficient else None,
            0)
        out.append(LevelResult(level.name,
                               (train.n_situations, val.n_situations, test.n_situations),
                               {k: results[k] for k in APPROACHES}))
        reference = results["esbda"].summary
        prior = extract_prior(reference, f"{level.name} esbda")
    return BenchmarkReport(base.name, base_summary, base_trace, out)
