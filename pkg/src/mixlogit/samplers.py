"""Random-number primitives and Metropolis-Hastings kernels."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NumericalError, SpecificationError
from .model import (Dataset, Individual, UtilitySpec, covariance_factor,
                    panel_log_likelihood, transform_latent)

ACCEPT_TARGET = 0.30
ACCEPT_BAND = 0.01
SCALE_MIN, SCALE_MAX = 1e-6, 1e2
ALPHA_WINDOW = 20
ALPHA_SCALE_INIT = 0.1
ALPHA_SCALE_WARMUP = 50


def rng_stream(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for ``(seed, stream)``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(stream),)))


@dataclass
class MhTuning:
    """Random-walk step scales plus the acceptance bookkeeping that drives them.

    ``alpha_history`` holds the accept flags of the most recent fixed-coefficient
    proposals; ``alpha_n``/``alpha_mean``/``alpha_m2`` are running moments of
    the fixed-coefficient draws used as the proposal's diagonal scale.
    """

    rho: float = 0.1
    rho_alpha: float = 0.1
    beta_accepts: int = 0
    beta_proposals: int = 0
    alpha_history: tuple = ()
    alpha_n: int = 0
    alpha_mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    alpha_m2: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def alpha_accepts(self) -> int:
        return int(sum(self.alpha_history))

    @property
    def alpha_proposals(self) -> int:
        return len(self.alpha_history)

    def alpha_scale(self, q: int) -> np.ndarray:
        """Diagonal proposal variance for the fixed coefficients."""
        if self.alpha_n < ALPHA_SCALE_WARMUP or len(self.alpha_m2) != q:
            return np.full(q, ALPHA_SCALE_INIT)
        return np.maximum(self.alpha_m2 / (self.alpha_n - 1), 1e-12)

    def record_alpha(self, alpha, accepted: bool) -> "MhTuning":
        alpha = np.asarray(alpha, dtype=float)
        if self.alpha_n == 0 or len(self.alpha_mean) != len(alpha):
            n, mean, m2 = 1, alpha.copy(), np.zeros_like(alpha)
        else:
            n = self.alpha_n + 1
            delta = alpha - self.alpha_mean
            mean = self.alpha_mean + delta / n
            m2 = self.alpha_m2 + delta * (alpha - mean)
        history = (self.alpha_history + (bool(accepted),))[-ALPHA_WINDOW:]
        return replace(self, alpha_history=history, alpha_n=n, alpha_mean=mean, alpha_m2=m2)

    def copy(self) -> "MhTuning":
        return replace(self, alpha_mean=self.alpha_mean.copy(), alpha_m2=self.alpha_m2.copy())


def sample_mvn(mean, cov, rng: np.random.Generator) -> np.ndarray:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.asarray(cov, dtype=float).reshape(len(mean), len(mean))
    z = rng.standard_normal(len(mean))
    return mean + covariance_factor(cov) @ z


def sample_inverse_wishart(dof: float, scale, rng: np.random.Generator) -> np.ndarray:
    """Draw from IW(dof, scale) with E[draw] = scale / (dof - p - 1).

    Bartlett decomposition: if ``A A'`` ~ Wishart(dof, I) then
    ``L (A A')^{-1} L'`` ~ IW(dof, L L').
    """
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    p = scale.shape[0]
    if scale.shape != (p, p):
        raise SpecificationError("scale must be square")
    if not dof > p - 1:
        raise SpecificationError(f"degrees of freedom {dof} must exceed p - 1 = {p - 1}")
    try:
        chol = np.linalg.cholesky(scale)
    except np.linalg.LinAlgError:
        raise NumericalError("inverse-Wishart scale is not positive definite") from None
    # scalar draws: far cheaper than the array paths for the small p used here
    a = np.zeros((p, p))
    for i in range(p):
        a[i, i] = np.sqrt(rng.chisquare(dof - i))
    if p > 1:
        normals = rng.standard_normal(p * (p - 1) // 2)
        k = 0
        for i in range(1, p):
            a[i, :i] = normals[k:k + i]
            k += i
    g = solve_triangular(a, chol.T, lower=True, check_finite=False)
    draw = g.T @ g
    return (draw + draw.T) / 2


def acceptance_log_prob(log_target_new, log_target_old):
    """log min(1, new/old); NaN (e.g. both targets -inf) maps to -inf."""
    with np.errstate(invalid="ignore"):
        diff = np.minimum(0.0, np.asarray(log_target_new, dtype=float) - log_target_old)
    return np.where(np.isnan(diff), -np.inf, diff)


def acceptance_probability(log_target_new, log_target_old):
    return np.exp(acceptance_log_prob(log_target_new, log_target_old))


def metropolis_accept(log_target_new, log_target_old, u) -> np.ndarray:
    """Vectorised accept decision for uniforms ``u`` in [0, 1)."""
    with np.errstate(divide="ignore"):
        return np.log(u) < acceptance_log_prob(log_target_new, log_target_old)


def normal_log_kernel(x, mean, chol) -> np.ndarray:
    """-0.5 * Mahalanobis distance of the rows of ``x`` under ``chol chol'``."""
    d = np.atleast_2d(x) - mean
    if d.shape[-1] == 0:
        return np.zeros(d.shape[0])
    y = solve_triangular(chol, d.T, lower=True)
    return -0.5 * np.sum(y * y, axis=0)


def _cholesky(omega):
    try:
        return np.linalg.cholesky(omega)
    except np.linalg.LinAlgError:
        raise NumericalError("Omega is not positive definite") from None


def mh_update_betas(betas, loglik, current_loglik, zeta, omega, rho, z, u):
    """One random-walk step for every individual at once.

    ``loglik`` maps an (N, p) latent array to per-individual log-likelihoods.
    Row ``n`` of ``z`` (normals) and ``u`` (uniforms) is individual ``n``'s
    randomness, so results do not depend on how individuals are batched.
    Returns ``(betas', accepted, loglik')``.
    """
    if rho == 0:
        return betas.copy(), np.ones(len(betas), dtype=bool), current_loglik.copy()
    chol = _cholesky(omega)
    proposal = betas + rho * (z @ chol.T)
    prop_ll = loglik(proposal)
    new = prop_ll + normal_log_kernel(proposal, zeta, chol)
    old = current_loglik + normal_log_kernel(betas, zeta, chol)
    accepted = metropolis_accept(new, old, u)
    out = np.where(accepted[:, None], proposal, betas)
    return out, accepted, np.where(accepted, prop_ll, current_loglik)


def mh_update_individual(beta_n, individual: Individual | None, alpha, zeta, omega,
                         tuning: MhTuning, rng: np.random.Generator,
                         spec: UtilitySpec | None = None, log_likelihood=None):
    """Single-individual MH step targeting L(y_n | alpha, beta) phi(beta | zeta, Omega).

    ``log_likelihood`` overrides the panel likelihood (callable of beta);
    without it ``spec`` and ``individual`` are required.
    """
    beta_n = np.atleast_1d(np.asarray(beta_n, dtype=float))
    zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    if log_likelihood is None:
        if spec is None:
            raise SpecificationError("spec is required to evaluate the panel likelihood")
        if individual is None:
            raise SpecificationError("individual is required without a log_likelihood")
        log_likelihood = lambda b: panel_log_likelihood(individual, alpha, b, spec)

    def loglik(rows):
        return np.array([log_likelihood(r) for r in rows])

    z = rng.standard_normal((1, len(beta_n)))
    u = rng.random(1)
    out, accepted, _ = mh_update_betas(beta_n[None, :], loglik, loglik(beta_n[None, :]),
                                       zeta, omega, tuning.rho, z, u)
    return out[0], bool(accepted[0])


def mh_update_alpha(alpha, dataset: Dataset | None, betas, tuning: MhTuning,
                    rng: np.random.Generator, log_likelihood=None):
    """MH step for the fixed coefficients under a flat prior.

    The target is the sum of panel log-likelihoods over all individuals at
    their current ``betas``; ``log_likelihood`` (callable of alpha) overrides it.
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    if alpha.size == 0:
        return alpha.copy(), True
    if log_likelihood is None:
        design = dataset.design
        coef = transform_latent(np.asarray(betas, dtype=float).reshape(len(dataset), -1),
                                dataset.spec.kinds)
        log_likelihood = lambda a: float(design.individual_loglik(a, coef).sum())
    new, accepted, _ = alpha_step(alpha, log_likelihood, log_likelihood(alpha), tuning, rng)
    return new, accepted


def alpha_step(alpha, log_likelihood, current_ll, tuning: MhTuning, rng):
    """Random-walk step on alpha; returns ``(alpha', accepted, loglik')``."""
    q = len(alpha)
    z = rng.standard_normal(q)
    u = rng.random()
    if tuning.rho_alpha == 0:
        return alpha.copy(), True, current_ll
    proposal = alpha + tuning.rho_alpha * np.sqrt(tuning.alpha_scale(q)) * z
    prop_ll = log_likelihood(proposal)
    if metropolis_accept(prop_ll, current_ll, u):
        return proposal, True, prop_ll
    return alpha.copy(), False, current_ll


def adapt_scale(scale: float, rate: float) -> float:
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"acceptance rate {rate} outside [0, 1]")
    if rate < ACCEPT_TARGET - ACCEPT_BAND:
        scale *= 0.98
    elif rate > ACCEPT_TARGET + ACCEPT_BAND:
        scale *= 1.02
    return float(min(max(scale, SCALE_MIN), SCALE_MAX))


def adapt_step_size(tuning: MhTuning, rate: float, which: str = "beta") -> MhTuning:
    """Nudge ``rho`` (``which="beta"``) or ``rho_alpha`` toward 30% acceptance."""
    if which == "beta":
        return replace(tuning, rho=adapt_scale(tuning.rho, rate))
    if which == "alpha":
        return replace(tuning, rho_alpha=adapt_scale(tuning.rho_alpha, rate))
    raise ValueError(f"unknown step size {which!r}")
