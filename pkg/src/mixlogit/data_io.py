"""Dataset ingestion, grouped fold splits, synthetic data and model persistence.

Datasets are long-format CSV: one row per alternative per choice situation,
with 0/1 ``chosen`` and (optionally) ``available`` columns.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .controller import PriorModel
from .engine import PosteriorSummary
from .errors import DataError, SpecificationError
from .model import (CONSTANT, ChoiceSituation, CoefficientKind, CoefficientSpec, Dataset,
                    Individual, ModelParams, UtilitySpec, choice_probabilities,
                    covariance_factor, transform_latent)
from .samplers import rng_stream

log = logging.getLogger(__name__)

MODEL_VERSION = 1
SPLIT_STREAM = 2


@dataclass(frozen=True)
class DatasetSchema:
    """Column roles of a long-format dataset.

    ``group=None`` uses the individual id as group; ``available=None``
    treats every alternative as available; ``attributes=None`` takes the
    attribute names from the utility specification.
    """

    individual: str = "individual"
    situation: str = "situation"
    alternative: str = "alternative"
    chosen: str = "chosen"
    group: str | None = "group"
    available: str | None = "available"
    attributes: tuple[str, ...] | None = None


def write_text_atomic(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


# --- datasets ----------------------------------------------------------------

def load_dataset(path, spec: UtilitySpec, schema: DatasetSchema | None = None) -> Dataset:
    """Read a long-format CSV into a :class:`Dataset`.

    Situations with no chosen row, several chosen rows, a chosen but
    unavailable alternative, or fewer than two available alternatives are
    dropped; the count is logged and stored on ``Dataset.dropped``.
    """
    schema = schema or DatasetSchema()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    attrs = list(schema.attributes or spec.attributes)
    id_cols = [schema.individual, schema.situation, schema.alternative]
    if schema.group:
        id_cols.append(schema.group)
    df = pd.read_csv(path, dtype={c: str for c in id_cols}, float_precision="round_trip")
    has_group = bool(schema.group) and schema.group in df.columns
    has_avail = bool(schema.available) and schema.available in df.columns
    required = [schema.individual, schema.situation, schema.alternative, schema.chosen, *attrs]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    for c in attrs + [schema.chosen] + ([schema.available] if has_avail else []):
        if not pd.api.types.is_numeric_dtype(df[c]):
            raise DataError(f"{path}: column {c!r} is not numeric")
        if df[c].isna().any():
            raise DataError(f"{path}: column {c!r} has missing values")
    key = [schema.individual, schema.situation, schema.alternative]
    dup = df.duplicated(key)
    if dup.any():
        row = df.loc[dup.idxmax(), key].tolist()
        raise DataError(f"{path}: duplicate (individual, situation, alternative) key {row}")
    unknown = set(df[schema.alternative]) - set(spec.alternatives)
    if unknown:
        raise DataError(f"{path}: unknown alternatives {sorted(unknown)}")

    j, a = spec.n_alternatives, len(spec.attributes)
    attr_index = [spec.attributes.index(n) for n in attrs] if schema.attributes else None
    alt_pos = df[schema.alternative].map({k: i for i, k in enumerate(spec.alternatives)}).to_numpy()
    values = df[attrs].to_numpy(dtype=float)
    chosen = df[schema.chosen].to_numpy()
    avail = df[schema.available].to_numpy() != 0 if has_avail else np.ones(len(df), dtype=bool)

    individuals, groups, order = {}, {}, []
    dropped = total = 0
    for (ind_id, _), rows in df.groupby([schema.individual, schema.situation], sort=False).indices.items():
        total += 1
        x = np.zeros((j, a))
        av = np.zeros(j, dtype=bool)
        pos = alt_pos[rows]
        if attr_index is None:
            x[pos] = values[rows]
        else:
            x[np.ix_(pos, attr_index)] = values[rows]
        av[pos] = avail[rows]
        picked = pos[chosen[rows] != 0]
        if len(picked) != 1 or not av[picked[0]] or av.sum() < 2:
            dropped += 1
            continue
        if ind_id not in individuals:
            individuals[ind_id] = []
            order.append(ind_id)
            groups[ind_id] = df[schema.group].iat[rows[0]] if has_group else ind_id
        individuals[ind_id].append(ChoiceSituation(x, av, spec.alternatives[picked[0]]))
    if dropped:
        log.warning("%s: dropped %d of %d choice situations", path, dropped, total)
    if not order:
        raise DataError(f"{path}: no usable choice situations")
    people = tuple(Individual(i, groups[i], tuple(individuals[i])) for i in order)
    return Dataset(spec, people, dropped=dropped)


def dataset_to_csv(dataset: Dataset) -> str:
    spec = dataset.spec
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["individual", "group", "situation", "alternative", "chosen", "available",
                *spec.attributes])
    for ind in dataset.individuals:
        for t, s in enumerate(ind.situations, start=1):
            for k, alt in enumerate(spec.alternatives):
                w.writerow([ind.id, ind.group, t, alt, int(alt == s.chosen),
                            int(s.available[k]), *(repr(float(v)) for v in s.attributes[k])])
    return buf.getvalue()


def save_dataset(dataset: Dataset, path):
    write_text_atomic(path, dataset_to_csv(dataset))


def grouped_split(dataset: Dataset, counts, seed: int):
    """Split into (train, validation, test) by whole groups.

    Groups are shuffled with ``seed`` and assigned contiguously; ``counts``
    are group counts and ``None`` means "all remaining groups".
    """
    groups = dataset.groups
    counts = list(counts) + [0] * (3 - len(counts))
    if len(counts) != 3:
        raise SpecificationError("fold counts must be (train, validation, test)")
    fixed = sum(c for c in counts if c is not None)
    if any(c is not None and c < 0 for c in counts):
        raise SpecificationError("fold counts must be nonnegative")
    if fixed > len(groups):
        raise DataError(f"requested {fixed} groups but dataset has {len(groups)}")
    rest = len(groups) - fixed
    counts = [rest if c is None else c for c in counts]
    if sum(counts) > len(groups):
        raise SpecificationError("at most one fold may take all remaining groups")
    perm = rng_stream(seed, SPLIT_STREAM).permutation(len(groups))
    edges = np.cumsum([0] + counts)
    folds = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        keep = {groups[i] for i in perm[lo:hi]}
        folds.append(dataset.subset(i for i in dataset.individuals if i.group in keep))
    return tuple(folds)


# --- synthetic data ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GroundTruth:
    spec: UtilitySpec
    alpha: np.ndarray
    zeta: np.ndarray
    omega: np.ndarray
    seed: int = 0

    def __post_init__(self):
        params = self.params()
        object.__setattr__(self, "alpha", params.alpha)
        object.__setattr__(self, "zeta", params.zeta)
        object.__setattr__(self, "omega", params.omega)

    def params(self) -> ModelParams:
        return ModelParams(self.alpha, self.zeta, self.omega).check(self.spec)


def standard_normal_law(rng, shape):
    return rng.standard_normal(shape)


def generate_synthetic(truth: GroundTruth, individuals: int, situations: int,
                       rng: np.random.Generator | None = None, attribute_law=None,
                       group_size: int = 1, id_prefix: str = "") -> Dataset:
    """Simulate panel choices from a known mixed-logit model.

    Attributes come from ``attribute_law(rng, shape)`` (standard normal by
    default); each individual draws ``beta_n ~ N(zeta, Omega)`` once and
    chooses in every situation from the implied logit probabilities.
    ``id_prefix`` keeps ids of separately generated datasets distinct.
    """
    if individuals < 1 or situations < 1 or group_size < 1:
        raise SpecificationError("counts must be >= 1")
    spec = truth.spec
    params = truth.params()
    rng = rng if rng is not None else rng_stream(truth.seed, 0)
    law = attribute_law or standard_normal_law
    j, a = spec.n_alternatives, len(spec.attributes)
    x = np.asarray(law(rng, (individuals, situations, j, a)), dtype=float)
    betas = params.zeta + rng.standard_normal((individuals, spec.p)) @ covariance_factor(params.omega).T
    coef = transform_latent(betas, spec.kinds)
    v = spec.fixed_design(x) @ params.alpha
    if spec.p:
        v = v + np.einsum("ntjk,nk->ntj", spec.random_design(x), coef)
    prob = choice_probabilities(v)
    u = rng.random((individuals, situations, 1))
    choice = np.minimum((prob.cumsum(axis=-1) < u).sum(axis=-1), j - 1)
    avail = np.ones(j, dtype=bool)
    width = len(str(individuals))
    people = []
    for n in range(individuals):
        sits = tuple(ChoiceSituation(x[n, t], avail, spec.alternatives[choice[n, t]])
                     for t in range(situations))
        people.append(Individual(f"{id_prefix}i{n:0{width}d}",
                                 f"{id_prefix}g{n // group_size:0{width}d}", sits))
    return Dataset(spec, tuple(people))


# --- specifications ----------------------------------------------------------

def load_spec(path) -> UtilitySpec:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"specification not found: {path}")
    try:
        return UtilitySpec.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as exc:
        raise SpecificationError(f"{path}: {exc}") from exc


def spec_to_json(spec: UtilitySpec) -> str:
    return json.dumps(spec.to_dict(), indent=2) + "\n"


def save_spec(spec: UtilitySpec, path):
    write_text_atomic(path, spec_to_json(spec))


def california_spec() -> UtilitySpec:
    """Vehicle purchase model: three vehicles, five random and two fixed terms."""
    c = CoefficientSpec
    k = CoefficientKind
    return UtilitySpec(
        ("vehicle_1", "vehicle_2", "vehicle_3"),
        ("price", "operating_cost", "range", "electric", "hybrid", "high_perf", "mid_high_perf"),
        (
            c("price", k.LOGNORMAL_NEGATIVE, "price"),
            c("operate", k.LOGNORMAL_NEGATIVE, "operating_cost"),
            c("range", k.LOGNORMAL_POSITIVE, "range"),
            c("electric", k.NORMAL, "electric"),
            c("hybrid", k.NORMAL, "hybrid"),
            c("high", k.FIXED, "high_perf"),
            c("midhigh", k.FIXED, "mid_high_perf"),
        ),
    )


def london_spec() -> UtilitySpec:
    """Mode choice model: normal generic cost, alternative-specific time terms."""
    c = CoefficientSpec
    k = CoefficientKind
    return UtilitySpec(
        ("driving", "public", "cycling", "walking"),
        ("cost", "driving_time", "traffic_var", "access_time", "bus_time", "rail_time",
         "change_walk_time", "change_wait_time", "cycling_time", "walking_time"),
        (
            c("cost", k.NORMAL, "cost", ("driving", "public")),
            c("driving_time", k.FIXED, "driving_time", ("driving",)),
            c("traffic", k.FIXED, "traffic_var", ("driving",)),
            c("access_time", k.FIXED, "access_time", ("public",)),
            c("bus_time", k.FIXED, "bus_time", ("public",)),
            c("rail_time", k.FIXED, "rail_time", ("public",)),
            c("change_walking_time", k.FIXED, "change_walk_time", ("public",)),
            c("change_waiting_time", k.FIXED, "change_wait_time", ("public",)),
            c("cycling_time", k.FIXED, "cycling_time", ("cycling",)),
            c("walking_time", k.FIXED, "walking_time", ("walking",)),
            c("C_public", k.FIXED, CONSTANT, ("public",)),
            c("C_cycling", k.FIXED, CONSTANT, ("cycling",)),
            c("C_walking", k.FIXED, CONSTANT, ("walking",)),
        ),
    )


# --- model artifacts ---------------------------------------------------------

def model_to_json(model, spec: UtilitySpec | None = None, provenance: str = "",
                  seed: int | None = None) -> str:
    if isinstance(model, PosteriorSummary):
        spec = model.spec
        alpha, zeta, omega = model.alpha_mean, model.zeta_mean, model.omega_mean
    elif isinstance(model, PriorModel):
        spec = model.spec
        alpha, zeta, omega = model.alpha, model.zeta, model.omega
        provenance = provenance or model.provenance
    elif isinstance(model, GroundTruth):
        spec = model.spec
        alpha, zeta, omega = model.alpha, model.zeta, model.omega
        seed = model.seed if seed is None else seed
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    doc = {
        "version": MODEL_VERSION,
        "spec_hash": spec.spec_hash,
        "alpha": [float(v) for v in alpha],
        "zeta": [float(v) for v in zeta],
        "omega": [[float(v) for v in row] for row in np.asarray(omega)],
        "provenance": provenance,
        "seed": seed,
        "names": {"alpha": [c.name for c in spec.fixed], "zeta": [c.name for c in spec.random]},
    }
    return json.dumps(doc, indent=2) + "\n"


def save_model(model, path, provenance: str = "", seed: int | None = None):
    write_text_atomic(path, model_to_json(model, provenance=provenance, seed=seed))


def load_model(path, spec: UtilitySpec) -> PriorModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model artifact not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        version, spec_hash = doc["version"], doc["spec_hash"]
        alpha, zeta, omega = doc["alpha"], doc["zeta"], doc["omega"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed model artifact ({exc})") from exc
    if version != MODEL_VERSION:
        raise DataError(f"{path}: unsupported model version {version}")
    if spec_hash != spec.spec_hash:
        raise SpecificationError(f"{path}: model was estimated on a different specification")
    omega = np.array(omega, dtype=float).reshape(len(zeta), len(zeta))
    return PriorModel(spec, np.array(alpha, dtype=float), np.array(zeta, dtype=float), omega,
                      doc.get("provenance") or "")


# --- benchmark plans ---------------------------------------------------------

def load_plan(path):
    """Read a benchmark plan; relative paths resolve against the plan's folder.

    Returns ``(spec, levels, options)`` where ``options`` holds the optional
    top-level keys (``seed``, ``cost_coefficient``).
    """
    from .controller import Level

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"benchmark plan not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        spec = load_spec(path.parent / doc["spec"])
        levels = []
        for entry in doc["levels"]:
            folds = tuple(None if f == "all" else int(f) for f in entry["folds"])
            data = load_dataset(path.parent / entry["data"], spec)
            levels.append(Level(entry["name"], data, folds))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (DataError, SpecificationError)):
            raise
        raise SpecificationError(f"{path}: malformed plan ({exc})") from exc
    options = {k: doc[k] for k in ("seed", "cost_coefficient") if k in doc}
    return spec, levels, options
