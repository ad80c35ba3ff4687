"""Hierarchical Bayes Gibbs sweep, chain driver and posterior summaries.

One epoch updates, in order:

1. every individual's latent coefficients ``beta_n`` by Metropolis-Hastings,
2. the population mean ``zeta`` from N(mean(beta), Omega / N),
3. the population covariance ``Omega`` from IW(K + N, K I + N S),
4. the fixed coefficients ``alpha`` by Metropolis-Hastings (flat prior).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ChainAborted, NumericalError, SpecificationError
from .metrics import significance_stars
from .model import Dataset, ModelParams, UtilitySpec, transform_latent
from .samplers import (MhTuning, adapt_step_size, metropolis_accept, mh_update_betas,
                       rng_stream, sample_inverse_wishart, sample_mvn)

log = logging.getLogger(__name__)

CHAIN_STREAM = 0


@dataclass(frozen=True)
class GibbsConfig:
    max_epochs: int = 10000
    thin: int = 10
    plot_interval: int = 20
    prior_dof: int | None = None  # K; defaults to the number of random coefficients
    draws: int = 100
    seed: int = 0
    window: int = 50
    workers: int = 1

    def __post_init__(self):
        if self.thin < 1:
            raise SpecificationError("thin interval must be >= 1")
        if self.max_epochs < 0:
            raise SpecificationError("max_epochs must be >= 0")
        if self.draws < 1 or self.window < 1 or self.workers < 1:
            raise SpecificationError("draws, window and workers must be >= 1")

    def dof(self, p: int) -> int:
        k = p if self.prior_dof is None else self.prior_dof
        if k < max(p, 1):
            raise SpecificationError(f"prior dof K={k} must be >= max(p, 1) with p={p}")
        return k


@dataclass
class ChainState:
    params: ModelParams
    betas: np.ndarray  # (n_individuals, p)
    tuning: MhTuning = field(default_factory=MhTuning)
    epoch: int = 0
    # per-individual log-likelihood at (params.alpha, betas); None when stale
    loglik: np.ndarray | None = None

    def copy(self) -> "ChainState":
        return ChainState(self.params.copy(), self.betas.copy(), self.tuning.copy(),
                          self.epoch, None if self.loglik is None else self.loglik.copy())


@dataclass
class RetainedDraws:
    spec: UtilitySpec
    epochs: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    zeta: list = field(default_factory=list)
    omega: list = field(default_factory=list)
    betas: list = field(default_factory=list)

    def __len__(self):
        return len(self.epochs)

    def append(self, state: ChainState):
        self.epochs.append(state.epoch)
        self.alpha.append(state.params.alpha.copy())
        self.zeta.append(state.params.zeta.copy())
        self.omega.append(state.params.omega.copy())
        self.betas.append(state.betas.copy())

    def window(self, size: int) -> "RetainedDraws":
        """Last ``size`` draws (all of them when fewer are available)."""
        sl = slice(max(len(self) - size, 0), None)
        return RetainedDraws(self.spec, self.epochs[sl], self.alpha[sl], self.zeta[sl],
                             self.omega[sl], self.betas[sl])

    def mean_params(self) -> ModelParams:
        if not len(self):
            raise SpecificationError("no retained draws")
        return ModelParams(np.mean(self.alpha, axis=0), np.mean(self.zeta, axis=0),
                           np.mean(self.omega, axis=0))

    @classmethod
    def from_state(cls, spec: UtilitySpec, state: ChainState) -> "RetainedDraws":
        draws = cls(spec)
        draws.append(state)
        return draws


def initial_state(dataset: Dataset, params: ModelParams, tuning: MhTuning | None = None,
                  betas=None) -> ChainState:
    params = params.copy().check(dataset.spec)
    if betas is None:
        betas = np.tile(params.zeta, (len(dataset), 1))
    betas = np.asarray(betas, dtype=float).reshape(len(dataset), dataset.spec.p)
    return ChainState(params, betas.copy(), tuning.copy() if tuning else MhTuning())


def update_zeta(betas, omega, rng: np.random.Generator) -> np.ndarray:
    betas = np.atleast_2d(betas)
    n = len(betas)
    if n < 1:
        raise SpecificationError("need at least one individual")
    return sample_mvn(betas.mean(axis=0), np.asarray(omega) / n, rng)


def update_omega(betas, zeta, prior_dof: int, rng: np.random.Generator) -> np.ndarray:
    betas = np.atleast_2d(betas)
    n, p = betas.shape
    if n < 1:
        raise SpecificationError("need at least one individual")
    if prior_dof < p:
        raise SpecificationError("prior dof must be >= p")
    d = betas - zeta
    scale = prior_dof * np.eye(p) + d.T @ d  # K I + N S_bar
    return sample_inverse_wishart(prior_dof + n, scale, rng)


class _Likelihood:
    """Per-individual log-likelihood, optionally split over a thread pool.

    Chunks are contiguous ranges of individuals, so each individual's value
    is computed by the same arithmetic whatever the chunking.
    """

    def __init__(self, dataset: Dataset, pool: ThreadPoolExecutor | None = None, chunks: int = 1):
        self.kinds = dataset.spec.kinds
        design = dataset.design
        n = design.n_individuals
        if pool is None or chunks <= 1 or n < 2:
            self.parts = [(0, n, design)]
            self.pool = None
        else:
            edges = np.linspace(0, n, min(chunks, n) + 1).astype(int)
            self.parts = [(a, b, design.slice(a, b)) for a, b in zip(edges[:-1], edges[1:])]
            self.pool = pool

    def __call__(self, alpha, betas) -> np.ndarray:
        coef = transform_latent(betas, self.kinds)
        if self.pool is None:
            return self.parts[0][2].individual_loglik(alpha, coef)
        jobs = [self.pool.submit(d.individual_loglik, alpha, coef[a:b]) for a, b, d in self.parts]
        return np.concatenate([j.result() for j in jobs])


def gibbs_epoch(state: ChainState, dataset: Dataset, config: GibbsConfig,
                rng: np.random.Generator, likelihood: _Likelihood | None = None) -> ChainState:
    """One full sweep; returns a new state and leaves ``state`` untouched."""
    spec = dataset.spec
    p, q, n = spec.p, spec.q, len(dataset)
    likelihood = likelihood or _Likelihood(dataset)
    alpha = state.params.alpha
    zeta, omega = state.params.zeta, state.params.omega
    betas = state.betas
    tuning = state.tuning
    ll = state.loglik if state.loglik is not None else likelihood(alpha, betas)

    if p > 0 and n > 0:
        z = rng.standard_normal((n, p))
        u = rng.random(n)
        betas, accepted, ll = mh_update_betas(
            betas, lambda b: likelihood(alpha, b), ll, zeta, omega, tuning.rho, z, u)
        tuning = replace(tuning, beta_accepts=int(accepted.sum()), beta_proposals=n)
        tuning = adapt_step_size(tuning, accepted.mean(), "beta")
        zeta = update_zeta(betas, omega, rng)
        omega = update_omega(betas, zeta, config.dof(p), rng)
        try:
            np.linalg.cholesky(omega)
        except np.linalg.LinAlgError:
            raise NumericalError(f"Omega lost positive definiteness at epoch {state.epoch + 1}")

    if q > 0:
        za = rng.standard_normal(q)
        ua = rng.random()
        proposal = alpha + tuning.rho_alpha * np.sqrt(tuning.alpha_scale(q)) * za
        prop_ll = likelihood(proposal, betas)
        accepted = bool(np.all(np.isfinite(proposal))
                        and metropolis_accept(prop_ll.sum(), ll.sum(), ua))
        if accepted:
            alpha, ll = proposal, prop_ll
        tuning = tuning.record_alpha(alpha, accepted)
        tuning = adapt_step_size(tuning, tuning.alpha_accepts / tuning.alpha_proposals, "alpha")

    return ChainState(ModelParams(alpha, zeta, omega), betas, tuning, state.epoch + 1, ll)


def run_chain(dataset: Dataset, config: GibbsConfig, init: ChainState, monitor=None,
              rng: np.random.Generator | None = None):
    """Drive ``gibbs_epoch`` until ``config.max_epochs`` or the monitor asks to stop.

    Every ``config.thin`` epochs the state is retained and then
    ``monitor(epoch, state, draws)`` is called; a truthy return stops the
    chain. A monitor exception is re-raised as :class:`ChainAborted` carrying
    the draws retained so far.

    Returns ``(draws, final_state)``.
    """
    rng = rng if rng is not None else rng_stream(config.seed, CHAIN_STREAM)
    draws = RetainedDraws(dataset.spec)
    state = init
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        likelihood = _Likelihood(dataset, pool, config.workers)
        for _ in range(config.max_epochs):
            state = gibbs_epoch(state, dataset, config, rng, likelihood)
            if state.epoch % config.thin:
                continue
            draws.append(state)
            if monitor is None:
                continue
            try:
                stop = monitor(state.epoch, state, draws)
            except Exception as exc:
                raise ChainAborted(f"monitor failed at epoch {state.epoch}: {exc}",
                                   draws, state) from exc
            if stop:
                log.info("chain stopped by monitor at epoch %d", state.epoch)
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return draws, state


def _sd(x, axis=0):
    x = np.asarray(x, dtype=float)
    if x.shape[axis] < 2:
        return np.zeros(np.delete(x.shape, axis))
    return x.std(axis=axis, ddof=1)


@dataclass
class PosteriorSummary:
    """Posterior statistics over a window of retained draws.

    ``sigma_*`` describe the latent standard deviations sqrt(diag Omega).
    ``simulated_*`` pool transform_latent(beta_n) over individuals and
    draws, so ``simulated_sd`` is the population spread of the coefficient.
    """

    spec: UtilitySpec
    zeta_mean: np.ndarray
    zeta_sd: np.ndarray
    sigma_mean: np.ndarray
    sigma_sd: np.ndarray
    omega_mean: np.ndarray
    alpha_mean: np.ndarray
    alpha_sd: np.ndarray
    simulated_mean: np.ndarray
    simulated_sd: np.ndarray
    n_draws: int
    first_epoch: int
    last_epoch: int

    def params(self) -> ModelParams:
        return ModelParams(self.alpha_mean.copy(), self.zeta_mean.copy(), self.omega_mean.copy())

    def coefficient_means(self) -> dict[str, float]:
        """Utility-scale mean of each coefficient (simulated for random ones)."""
        out = {c.name: float(m) for c, m in zip(self.spec.random, self.simulated_mean)}
        out.update({c.name: float(m) for c, m in zip(self.spec.fixed, self.alpha_mean)})
        return {c.name: out[c.name] for c in self.spec.coefficients}

    def rows(self) -> list[dict]:
        rows = []
        for k, c in enumerate(self.spec.random):
            rows.append(_row("latent_mean", c.name, self.zeta_mean[k], self.zeta_sd[k]))
            rows.append(_row("latent_sd", c.name, self.sigma_mean[k], self.sigma_sd[k]))
        for k, c in enumerate(self.spec.random):
            rows.append(_row("simulated", c.name, self.simulated_mean[k], self.simulated_sd[k],
                             stars=False))
        for k, c in enumerate(self.spec.fixed):
            rows.append(_row("fixed", c.name, self.alpha_mean[k], self.alpha_sd[k]))
        return rows


def _row(section, name, mean, sd, stars=True):
    return {"section": section, "coefficient": name, "mean": float(mean), "sd": float(sd),
            "stars": significance_stars(mean, sd) if stars else ""}


def summarize_posterior(draws: RetainedDraws, window: int = 50) -> PosteriorSummary:
    if not len(draws):
        raise SpecificationError("cannot summarize an empty set of draws")
    w = draws.window(window)
    spec = w.spec
    zeta = np.array(w.zeta).reshape(len(w), spec.p)
    omega = np.array(w.omega).reshape(len(w), spec.p, spec.p)
    alpha = np.array(w.alpha).reshape(len(w), spec.q)
    sigma = np.sqrt(np.clip(np.diagonal(omega, axis1=1, axis2=2), 0.0, None))
    betas = np.array(w.betas).reshape(len(w), -1, spec.p)
    if betas.shape[1]:
        simulated = transform_latent(betas, spec.kinds).reshape(-1, spec.p)
    else:
        simulated = transform_latent(zeta, spec.kinds)
    return PosteriorSummary(
        spec=spec,
        zeta_mean=zeta.mean(axis=0), zeta_sd=_sd(zeta),
        sigma_mean=sigma.mean(axis=0), sigma_sd=_sd(sigma),
        omega_mean=omega.mean(axis=0),
        alpha_mean=alpha.mean(axis=0), alpha_sd=_sd(alpha),
        simulated_mean=simulated.mean(axis=0), simulated_sd=_sd(simulated),
        n_draws=len(w), first_epoch=w.epochs[0], last_epoch=w.epochs[-1],
    )
