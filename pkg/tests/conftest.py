import numpy as np
import pytest

from mixlogit.data_io import GroundTruth, generate_synthetic
from mixlogit.model import (ChoiceSituation, CoefficientKind, CoefficientSpec, Dataset,
                            Individual, UtilitySpec)
from mixlogit.samplers import rng_stream

K = CoefficientKind


def small_spec(p_kind=K.NORMAL):
    """Three alternatives, one random coefficient on x, one fixed on z."""
    return UtilitySpec(("a", "b", "c"), ("x", "z"),
                       (CoefficientSpec("beta", p_kind, "x"),
                        CoefficientSpec("alpha", K.FIXED, "z")))


def random_only_spec():
    return UtilitySpec(("a", "b"), ("x",), (CoefficientSpec("beta", K.NORMAL, "x"),))


def fixed_only_spec():
    return UtilitySpec(("a", "b"), ("z",), (CoefficientSpec("alpha", K.FIXED, "z"),))


def one_situation_dataset(spec, n, chosen="a"):
    """``n`` individuals with one all-zero situation each (flat likelihood in beta)."""
    j, a = spec.n_alternatives, len(spec.attributes)
    sit = ChoiceSituation(np.zeros((j, a)), np.ones(j, bool), chosen)
    return Dataset(spec, tuple(Individual(f"i{k}", f"g{k}", (sit,)) for k in range(n)))


@pytest.fixture
def spec():
    return small_spec()


@pytest.fixture
def truth(spec):
    return GroundTruth(spec, np.array([0.8]), np.array([-1.0]), np.array([[0.5]]))


@pytest.fixture
def synthetic(truth):
    return generate_synthetic(truth, 40, 6, rng_stream(11, 9))
