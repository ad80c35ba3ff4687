"""Utility specification, datasets and mixed-logit probability math.

Utilities are linear in parameters::

    V_in = alpha' z_in + T(beta_n)' x_in

where ``alpha`` are fixed coefficients, ``beta_n ~ N(zeta, Omega)`` are the
latent individual-level coefficients and ``T`` maps each latent value to the
coefficient that enters utility (identity, ``exp`` or ``-exp``).

Everything in here is pure: randomness comes in through an explicit
``numpy.random.Generator``.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, NumericalError, SpecificationError

#: Attribute binding used by alternative-specific constants.
CONSTANT = None


class CoefficientKind(enum.Enum):
    FIXED = "fixed"
    NORMAL = "normal"
    LOGNORMAL_POSITIVE = "lognormal_positive"
    LOGNORMAL_NEGATIVE = "lognormal_negative"

    @property
    def is_random(self) -> bool:
        return self is not CoefficientKind.FIXED


@dataclass(frozen=True)
class CoefficientSpec:
    """One utility coefficient.

    ``attribute`` is the name of the attribute the coefficient multiplies, or
    :data:`CONSTANT` for an alternative-specific constant. ``alternatives``
    lists the alternatives the coefficient enters; ``None`` means generic
    (all alternatives).
    """

    name: str
    kind: CoefficientKind
    attribute: str | None
    alternatives: tuple[str, ...] | None = None

    @property
    def is_constant(self) -> bool:
        return self.attribute is CONSTANT


@dataclass(frozen=True)
class UtilitySpec:
    alternatives: tuple[str, ...]
    attributes: tuple[str, ...]
    coefficients: tuple[CoefficientSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "alternatives", tuple(self.alternatives))
        object.__setattr__(self, "attributes", tuple(self.attributes))
        object.__setattr__(self, "coefficients", tuple(self.coefficients))
        self._validate()

    def _validate(self):
        if len(self.alternatives) < 2:
            raise SpecificationError("need at least two alternatives")
        if len(set(self.alternatives)) != len(self.alternatives):
            raise SpecificationError("duplicate alternative identifiers")
        if len(set(self.attributes)) != len(self.attributes):
            raise SpecificationError("duplicate attribute identifiers")
        if not self.coefficients:
            raise SpecificationError("specification has no coefficients")
        names = [c.name for c in self.coefficients]
        if len(set(names)) != len(names):
            raise SpecificationError("coefficient names must be unique")
        with_constant = set()
        for c in self.coefficients:
            if c.alternatives is not None:
                unknown = set(c.alternatives) - set(self.alternatives)
                if unknown:
                    raise SpecificationError(
                        f"{c.name}: unknown alternatives {sorted(unknown)}")
                if not c.alternatives:
                    raise SpecificationError(f"{c.name}: empty applicability")
            if c.is_constant:
                if c.kind is not CoefficientKind.FIXED:
                    raise SpecificationError(f"constant {c.name} must be fixed")
                if c.alternatives is None or len(c.alternatives) != 1:
                    raise SpecificationError(
                        f"constant {c.name} must apply to exactly one alternative")
                with_constant.add(c.alternatives[0])
            elif c.attribute not in self.attributes:
                raise SpecificationError(
                    f"{c.name}: unknown attribute {c.attribute!r}")
        if with_constant >= set(self.alternatives):
            raise SpecificationError(
                "every alternative has a constant; one must be the base")

    @cached_property
    def random(self) -> tuple[CoefficientSpec, ...]:
        return tuple(c for c in self.coefficients if c.kind.is_random)

    @cached_property
    def fixed(self) -> tuple[CoefficientSpec, ...]:
        return tuple(c for c in self.coefficients if not c.kind.is_random)

    @property
    def p(self) -> int:
        return len(self.random)

    @property
    def q(self) -> int:
        return len(self.fixed)

    @property
    def n_alternatives(self) -> int:
        return len(self.alternatives)

    @cached_property
    def kinds(self) -> tuple[CoefficientKind, ...]:
        return tuple(c.kind for c in self.random)

    def coefficient(self, name: str) -> CoefficientSpec:
        for c in self.coefficients:
            if c.name == name:
                return c
        raise SpecificationError(f"no coefficient named {name!r}")

    def alternative_index(self, alternative: str) -> int:
        try:
            return self.alternatives.index(alternative)
        except ValueError:
            raise SpecificationError(f"unknown alternative {alternative!r}") from None

    def _loadings(self, coefs, attributes):
        """Map raw attributes (..., J, A) to per-coefficient columns (..., J, k)."""
        attributes = np.asarray(attributes, dtype=float)
        out = np.zeros(attributes.shape[:-1] + (len(coefs),))
        for k, c in enumerate(coefs):
            if c.alternatives is None:
                rows = np.arange(self.n_alternatives)
            else:
                rows = np.array([self.alternatives.index(a) for a in c.alternatives])
            if c.is_constant:
                out[..., rows, k] = 1.0
            else:
                a = self.attributes.index(c.attribute)
                out[..., rows, k] = attributes[..., rows, a]
        return out

    def fixed_design(self, attributes) -> np.ndarray:
        return self._loadings(self.fixed, attributes)

    def random_design(self, attributes) -> np.ndarray:
        return self._loadings(self.random, attributes)

    def to_dict(self) -> dict:
        return {
            "alternatives": list(self.alternatives),
            "attributes": list(self.attributes),
            "coefficients": [
                {
                    "name": c.name,
                    "kind": c.kind.value,
                    "attribute": c.attribute,
                    "alternatives": None if c.alternatives is None else list(c.alternatives),
                }
                for c in self.coefficients
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UtilitySpec":
        try:
            coefs = tuple(
                CoefficientSpec(
                    name=c["name"],
                    kind=CoefficientKind(c["kind"]),
                    attribute=c.get("attribute"),
                    alternatives=None if c.get("alternatives") is None
                    else tuple(c["alternatives"]),
                )
                for c in d["coefficients"]
            )
            return cls(tuple(d["alternatives"]), tuple(d["attributes"]), coefs)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, SpecificationError):
                raise
            raise SpecificationError(f"malformed specification: {exc}") from exc

    @cached_property
    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True, eq=False)
class ChoiceSituation:
    attributes: np.ndarray  # (J, A)
    available: np.ndarray  # (J,) bool
    chosen: str

    def __post_init__(self):
        object.__setattr__(self, "attributes", np.asarray(self.attributes, dtype=float))
        object.__setattr__(self, "available", np.asarray(self.available, dtype=bool))


@dataclass(frozen=True, eq=False)
class Individual:
    id: str
    group: str
    situations: tuple[ChoiceSituation, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "situations", tuple(self.situations))


@dataclass(frozen=True, eq=False)
class Design:
    """Stacked, spec-resolved arrays for every situation of a dataset.

    Arrays are coefficient-major with situations last, e.g. ``fixed[k, j, s]``,
    so reductions over coefficients and alternatives are elementwise passes
    over long rows. Situations are ordered by owning individual, so a
    contiguous range of individuals maps to a contiguous range of columns.
    """

    fixed: np.ndarray  # (q, J, S)
    random: np.ndarray  # (p, J, S)
    available: np.ndarray  # (J, S)
    chosen: np.ndarray  # (S,)
    owner: np.ndarray  # (S,)
    n_individuals: int

    @classmethod
    def build(cls, spec: "UtilitySpec", attributes, available, chosen, owner, n_individuals):
        """From situation-major attributes (S, J, A) and availability (S, J)."""
        def layout(a):
            return np.ascontiguousarray(np.moveaxis(a, -1, 0).transpose(0, 2, 1))

        return cls(layout(spec.fixed_design(attributes)), layout(spec.random_design(attributes)),
                   np.ascontiguousarray(np.asarray(available, dtype=bool).T),
                   np.asarray(chosen, dtype=np.intp), np.asarray(owner, dtype=np.intp),
                   n_individuals)

    @property
    def n_situations(self) -> int:
        return len(self.chosen)

    def fixed_utilities(self, alpha) -> np.ndarray:
        v = np.zeros(self.available.shape)
        for k, a in enumerate(alpha):
            v += self.fixed[k] * a
        return v

    def utilities(self, alpha, coef) -> np.ndarray:
        """Systematic utilities (J, S); ``coef`` is (n_individuals, p), transformed."""
        v = self.fixed_utilities(alpha)
        if len(self.random):
            per_situation = np.asarray(coef).T[:, self.owner]
            for k in range(len(self.random)):
                v += self.random[k] * per_situation[k]
        return v

    def chosen_log_prob(self, alpha, coef) -> np.ndarray:
        v = self.utilities(alpha, coef)
        masked = np.where(self.available, v, -np.inf)
        m = masked.max(axis=0)
        log_norm = m + np.log(np.exp(masked - m).sum(axis=0))
        return v[self.chosen, np.arange(len(self.chosen))] - log_norm

    def individual_loglik(self, alpha, coef) -> np.ndarray:
        """Panel log-likelihood per individual; zero for individuals without data."""
        lp = self.chosen_log_prob(alpha, coef)
        return np.bincount(self.owner, weights=lp, minlength=self.n_individuals)

    def slice(self, start: int, stop: int) -> "Design":
        lo, hi = np.searchsorted(self.owner, [start, stop])
        return Design(self.fixed[..., lo:hi], self.random[..., lo:hi],
                      self.available[:, lo:hi], self.chosen[lo:hi],
                      self.owner[lo:hi] - start, stop - start)


def _chosen_log_softmax(v, available, chosen):
    masked = np.where(available, v, -np.inf)
    m = masked.max(axis=-1, keepdims=True)
    log_norm = m[..., 0] + np.log(np.exp(masked - m).sum(axis=-1))
    picked = np.take_along_axis(v, chosen[:, None], axis=-1)[:, 0]
    return picked - log_norm


@dataclass(frozen=True, eq=False)
class Dataset:
    spec: UtilitySpec
    individuals: tuple[Individual, ...]
    dropped: int = 0  # situations discarded while loading

    def __post_init__(self):
        object.__setattr__(self, "individuals", tuple(self.individuals))
        j, a = self.spec.n_alternatives, len(self.spec.attributes)
        for ind in self.individuals:
            for s in ind.situations:
                if s.attributes.shape != (j, a) or s.available.shape != (j,):
                    raise DataError(
                        f"individual {ind.id}: situation shape {s.attributes.shape} "
                        f"does not match spec ({j}, {a})")
                k = self.spec.alternative_index(s.chosen)
                if not s.available[k]:
                    raise DataError(f"individual {ind.id}: chosen alternative unavailable")
                if s.available.sum() < 2:
                    raise DataError(f"individual {ind.id}: fewer than two alternatives available")

    def __len__(self):
        return len(self.individuals)

    @property
    def n_situations(self) -> int:
        return sum(len(i.situations) for i in self.individuals)

    @property
    def groups(self) -> list[str]:
        return sorted({i.group for i in self.individuals})

    def subset(self, individuals: Iterable[Individual]) -> "Dataset":
        return Dataset(self.spec, tuple(individuals))

    @cached_property
    def design(self) -> Design:
        spec = self.spec
        j, a = spec.n_alternatives, len(spec.attributes)
        rows = [(n, s) for n, ind in enumerate(self.individuals) for s in ind.situations]
        if rows:
            x = np.stack([s.attributes for _, s in rows])
            avail = np.stack([s.available for _, s in rows])
        else:
            x = np.zeros((0, j, a))
            avail = np.zeros((0, j), dtype=bool)
        chosen = np.array([spec.alternative_index(s.chosen) for _, s in rows], dtype=np.intp)
        owner = np.array([n for n, _ in rows], dtype=np.intp)
        return Design.build(spec, x, avail, chosen, owner, len(self.individuals))


@dataclass(eq=False)
class ModelParams:
    alpha: np.ndarray
    zeta: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        self.zeta = np.atleast_1d(np.asarray(self.zeta, dtype=float))
        p = len(self.zeta)
        self.omega = np.asarray(self.omega, dtype=float).reshape(p, p)
        if self.alpha.ndim != 1 or self.zeta.ndim != 1:
            raise SpecificationError("alpha and zeta must be vectors")
        check_covariance(self.omega)

    def check(self, spec: UtilitySpec) -> "ModelParams":
        if len(self.alpha) != spec.q or len(self.zeta) != spec.p:
            raise SpecificationError(
                f"parameters (q={len(self.alpha)}, p={len(self.zeta)}) do not match "
                f"spec (q={spec.q}, p={spec.p})")
        return self

    def copy(self) -> "ModelParams":
        return ModelParams(self.alpha.copy(), self.zeta.copy(), self.omega.copy())


def check_covariance(omega, tol=1e-10):
    """Validate a covariance: symmetric within ``tol`` and positive semi-definite.

    Degenerate (singular) matrices are accepted so that point-mass mixing
    distributions can be expressed; the factorization routine handles them.
    """
    omega = np.asarray(omega, dtype=float)
    if omega.ndim != 2 or omega.shape[0] != omega.shape[1]:
        raise SpecificationError("covariance must be a square matrix")
    if omega.size and np.max(np.abs(omega - omega.T)) > tol:
        raise SpecificationError("covariance is not symmetric")
    if not np.all(np.isfinite(omega)):
        raise NumericalError("covariance has non-finite entries")
    covariance_factor(omega)
    return omega


def covariance_factor(cov) -> np.ndarray:
    """Lower factor ``L`` with ``L @ L.T == cov``.

    Cholesky when possible; singular PSD matrices fall back to a symmetric
    eigen-root so a zero covariance yields an exactly zero factor.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.size == 0:
        return cov.copy()
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    w, v = np.linalg.eigh((cov + cov.T) / 2)
    scale = max(1.0, float(np.max(np.abs(w))))
    if w.min() < -1e-10 * scale:
        raise NumericalError("covariance is not positive semi-definite")
    return v * np.sqrt(np.clip(w, 0.0, None))


def transform_latent(b, kinds: Sequence[CoefficientKind]) -> np.ndarray:
    """Map latent draws to utility coefficients elementwise along the last axis."""
    b = np.asarray(b, dtype=float)
    if b.shape[-1:] != (len(kinds),) and not (b.ndim == 0 and len(kinds) == 1):
        raise SpecificationError(
            f"latent vector length {b.shape[-1:]} does not match {len(kinds)} kinds")
    out = np.array(b, dtype=float, copy=True)
    for k, kind in enumerate(kinds):
        if kind is CoefficientKind.LOGNORMAL_POSITIVE:
            out[..., k] = np.exp(b[..., k])
        elif kind is CoefficientKind.LOGNORMAL_NEGATIVE:
            out[..., k] = -np.exp(b[..., k])
        elif kind is not CoefficientKind.NORMAL:
            raise SpecificationError(f"{kind} is not a random kind")
    return out


def systematic_utility(spec: UtilitySpec, alpha, c_n, situation: ChoiceSituation) -> np.ndarray:
    """Utilities of one situation; unavailable alternatives get ``-inf``."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    c_n = np.atleast_1d(np.asarray(c_n, dtype=float))
    if alpha.shape != (spec.q,) or c_n.shape != (spec.p,):
        raise SpecificationError(
            f"expected alpha of length {spec.q} and coefficients of length {spec.p}")
    x = situation.attributes
    if x.shape != (spec.n_alternatives, len(spec.attributes)):
        raise SpecificationError(f"situation shape {x.shape} does not match spec")
    v = spec.fixed_design(x) @ alpha + spec.random_design(x) @ c_n
    return np.where(situation.available, v, -np.inf)


def choice_probabilities(v, available=None) -> np.ndarray:
    """Logit probabilities along the last axis, restricted to available alternatives."""
    v = np.asarray(v, dtype=float)
    if available is None:
        available = np.isfinite(v) | np.isnan(v)
    available = np.broadcast_to(np.asarray(available, dtype=bool), v.shape)
    if not np.all(available.any(axis=-1)):
        raise DataError("no available alternative")
    masked = np.where(available, v, -np.inf)
    e = np.exp(masked - masked.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def panel_log_likelihood(individual: Individual, alpha, beta_n, spec: UtilitySpec) -> float:
    """Log of the product of chosen-alternative probabilities over situations."""
    beta_n = np.atleast_1d(np.asarray(beta_n, dtype=float))
    if beta_n.shape != (spec.p,):
        raise SpecificationError(f"beta_n must have length {spec.p}")
    c_n = transform_latent(beta_n, spec.kinds)
    total = 0.0
    for s in individual.situations:
        v = systematic_utility(spec, alpha, c_n, s)
        total += float(_chosen_log_softmax(
            v[None, :], s.available[None, :],
            np.array([spec.alternative_index(s.chosen)]))[0])
    return total


def panel_likelihood(individual: Individual, alpha, beta_n, spec: UtilitySpec) -> float:
    return float(np.exp(panel_log_likelihood(individual, alpha, beta_n, spec)))


def mixing_draws(params: ModelParams, z) -> np.ndarray:
    """Latent draws ``zeta + L z`` for standard normal ``z`` of shape (R, p)."""
    return params.zeta + np.asarray(z) @ covariance_factor(params.omega).T


def unconditional_choice_probability(params: ModelParams, spec: UtilitySpec,
                                     situation: ChoiceSituation, draws: int,
                                     rng: np.random.Generator) -> np.ndarray:
    """Simulated mixed-logit probabilities, averaging over ``draws`` mixing draws."""
    if draws < 1:
        raise SpecificationError("draw count must be at least 1")
    params.check(spec)
    x = situation.attributes
    z = rng.standard_normal((draws, spec.p))
    c = transform_latent(mixing_draws(params, z), spec.kinds)
    v = spec.fixed_design(x) @ params.alpha + c @ spec.random_design(x).T
    return choice_probabilities(v, situation.available).mean(axis=0)


def simulated_log_prob(params: ModelParams, design: Design, kinds, z) -> np.ndarray:
    """Log of the simulated chosen-alternative probability per situation.

    ``z`` holds (R, p) standard normal draws shared by every situation.
    """
    c = transform_latent(mixing_draws(params, z), kinds)  # (R, p)
    v = np.repeat(design.fixed_utilities(params.alpha)[:, :, None], len(c), axis=2)  # (J, S, R)
    for k in range(len(design.random)):
        v += design.random[k][:, :, None] * c[:, k]
    avail = design.available[:, :, None]
    masked = np.where(avail, v, -np.inf)
    e = np.exp(masked - masked.max(axis=0))
    prob = e[design.chosen, np.arange(design.n_situations)] / e.sum(axis=0)  # (S, R)
    return np.log(np.maximum(prob.mean(axis=1), 1e-300))
