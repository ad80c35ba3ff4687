import json
import math

import numpy as np
import pandas as pd
import pytest

from mixlogit.controller import PriorModel
from mixlogit.data_io import (DatasetSchema, GroundTruth, california_spec, dataset_to_csv,
                              generate_synthetic, grouped_split, load_dataset, load_model,
                              load_plan, load_spec, london_spec, model_to_json, save_dataset,
                              save_model, save_spec)
from mixlogit.errors import DataError, SpecificationError
from mixlogit.metrics import cel
from mixlogit.model import choice_probabilities, systematic_utility, transform_latent
from mixlogit.samplers import rng_stream

from conftest import small_spec

HEADER = "individual,group,situation,alternative,chosen,x,z\n"


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoad:
    def test_single_situation(self, tmp_path):
        path = write(tmp_path, HEADER + "p1,h1,1,a,0,1.5,0\np1,h1,1,b,1,2.5,1\np1,h1,1,c,0,0,0\n")
        data = load_dataset(path, small_spec())
        assert len(data) == 1 and data.n_situations == 1 and data.dropped == 0
        sit = data.individuals[0].situations[0]
        assert sit.chosen == "b" and sit.available.all()
        np.testing.assert_array_equal(sit.attributes, [[1.5, 0], [2.5, 1], [0, 0]])

    def test_drop_missing_choice(self, tmp_path):
        rows = "p1,h1,1,a,0,1,0\np1,h1,1,b,0,1,0\np1,h1,1,c,0,1,0\n" \
               "p1,h1,2,a,1,1,0\np1,h1,2,b,0,1,0\np1,h1,2,c,0,1,0\n"
        data = load_dataset(write(tmp_path, HEADER + rows), small_spec())
        assert data.n_situations == 1 and data.dropped == 1

    def test_drop_chosen_unavailable(self, tmp_path):
        text = "individual,situation,alternative,chosen,available,x,z\n" \
               "p,1,a,1,0,0,0\np,1,b,0,1,0,0\np,1,c,0,1,0,0\n" \
               "p,2,a,1,1,0,0\np,2,b,0,0,0,0\np,2,c,0,1,0,0\n"
        data = load_dataset(write(tmp_path, text), small_spec())
        assert data.n_situations == 1 and data.dropped == 1
        assert data.individuals[0].group == "p"
        np.testing.assert_array_equal(data.individuals[0].situations[0].available,
                                      [True, False, True])

    def test_counts_add_up(self, tmp_path, synthetic):
        text = dataset_to_csv(synthetic)
        lines = text.splitlines()
        # blank out the choice of the first three situations
        for k in range(1, 10):
            parts = lines[k].split(",")
            parts[4] = "0"
            lines[k] = ",".join(parts)
        data = load_dataset(write(tmp_path, "\n".join(lines) + "\n"), synthetic.spec)
        assert data.n_situations + data.dropped == synthetic.n_situations
        assert data.dropped == 3

    def test_missing_column(self, tmp_path):
        with pytest.raises(DataError, match="missing columns"):
            load_dataset(write(tmp_path, "individual,situation,alternative,chosen,x\n"), small_spec())

    def test_non_numeric(self, tmp_path):
        with pytest.raises(DataError, match="not numeric"):
            load_dataset(write(tmp_path, HEADER + "p,h,1,a,1,cheap,0\np,h,1,b,0,1,0\n"), small_spec())

    def test_duplicate_key(self, tmp_path):
        with pytest.raises(DataError, match="duplicate"):
            load_dataset(write(tmp_path, HEADER + "p,h,1,a,1,0,0\np,h,1,a,0,1,0\n"), small_spec())

    def test_unknown_alternative(self, tmp_path):
        with pytest.raises(DataError, match="unknown alternatives"):
            load_dataset(write(tmp_path, HEADER + "p,h,1,a,1,0,0\np,h,1,q,0,1,0\n"), small_spec())

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / "nope.csv", small_spec())

    def test_custom_schema(self, tmp_path):
        text = "pid,task,mode,pick,x,z\n1,1,a,1,0.5,1\n1,1,b,0,0,0\n1,1,c,0,0,0\n"
        schema = DatasetSchema("pid", "task", "mode", "pick", group=None, available=None)
        data = load_dataset(write(tmp_path, text), small_spec(), schema)
        assert data.individuals[0].id == "1" and data.individuals[0].group == "1"

    def test_round_trip_bit_exact(self, tmp_path, synthetic):
        path = tmp_path / "rt.csv"
        save_dataset(synthetic, path)
        back = load_dataset(path, synthetic.spec)
        assert [i.id for i in back.individuals] == [i.id for i in synthetic.individuals]
        for a, b in zip(back.individuals, synthetic.individuals):
            assert a.group == b.group
            for sa, sb in zip(a.situations, b.situations):
                np.testing.assert_array_equal(sa.attributes, sb.attributes)
                assert sa.chosen == sb.chosen
        assert dataset_to_csv(back) == dataset_to_csv(synthetic)


class TestSplit:
    def test_all_train(self, synthetic):
        tr, va, te = grouped_split(synthetic, (None, 0, 0), 0)
        assert len(tr) == len(synthetic) and len(va) == len(te) == 0

    def test_disjoint(self, truth):
        data = generate_synthetic(truth, 60, 3, rng_stream(1), group_size=3)
        for seed in range(5):
            folds = grouped_split(data, (7, 5, None), seed)
            keys = [set(f.groups) for f in folds]
            assert not (keys[0] & keys[1] or keys[0] & keys[2] or keys[1] & keys[2])
            assert set().union(*keys) == set(data.groups)
            assert [len(k) for k in keys] == [7, 5, 8]

    def test_deterministic(self, synthetic):
        a = grouped_split(synthetic, (10, 10, None), 4)
        b = grouped_split(synthetic, (10, 10, None), 4)
        assert [f.groups for f in a] == [f.groups for f in b]
        c = grouped_split(synthetic, (10, 10, None), 5)
        assert [f.groups for f in a] != [f.groups for f in c]

    def test_insufficient(self, synthetic):
        with pytest.raises(DataError):
            grouped_split(synthetic, (30, 30, 0), 0)


class TestSynthetic:
    def test_dominance(self):
        spec = small_spec()
        truth = GroundTruth(spec, np.array([20.0]), np.array([0.0]), np.array([[0.0]]))
        # z = 1 on alternative a only gives it a +20 utility edge
        law = lambda rng, shape: np.broadcast_to(np.array([[0.0, 1.0], [0.0, 0.0], [0.0, 0.0]]),
                                                 shape).copy()
        data = generate_synthetic(truth, 500, 10, rng_stream(0), law)
        picks = [s.chosen for i in data.individuals for s in i.situations]
        assert picks.count("a") / len(picks) > 0.999

    def test_truth_cel_matches_entropy(self, truth):
        data = generate_synthetic(truth, 4000, 5, rng_stream(2))
        x = np.stack([s.attributes for i in data.individuals for s in i.situations])
        chosen = np.array([data.spec.alternatives.index(s.chosen)
                           for i in data.individuals for s in i.situations])
        z = rng_stream(3).standard_normal(2000)  # mixing draws shared by all situations
        c = truth.zeta[0] + math.sqrt(truth.omega[0, 0]) * z
        probs, entropy = [], 0.0
        for xs, ch in zip(np.array_split(x, 40), np.array_split(chosen, 40)):
            v = xs[:, None, :, 0] * c[None, :, None] + truth.alpha[0] * xs[:, None, :, 1]
            p = choice_probabilities(v).mean(axis=1)
            entropy -= np.sum(p * np.log(p))
            probs.extend(p[np.arange(len(ch)), ch])
        assert abs(cel(probs) - entropy / len(x)) < 0.01

    def test_seeded(self, truth):
        a = generate_synthetic(truth, 10, 3, rng_stream(5))
        b = generate_synthetic(truth, 10, 3, rng_stream(5))
        assert dataset_to_csv(a) == dataset_to_csv(b)

    def test_group_size_and_prefix(self, truth):
        data = generate_synthetic(truth, 6, 1, rng_stream(0), group_size=2, id_prefix="x")
        assert data.groups == ["xg0", "xg1", "xg2"] and data.individuals[0].id == "xi0"

    def test_invalid_counts(self, truth):
        with pytest.raises(SpecificationError):
            generate_synthetic(truth, 0, 3)

    def test_invalid_truth(self, truth):
        with pytest.raises(SpecificationError):
            GroundTruth(truth.spec, np.array([1.0, 2.0]), truth.zeta, truth.omega)


class TestModelArtifacts:
    def test_round_trip(self, tmp_path, spec):
        prior = PriorModel(spec, np.array([1 / 3]), np.array([math.pi]),
                           np.array([[2 / 7]]), "level 0")
        save_model(prior, tmp_path / "m.json", seed=4)
        back = load_model(tmp_path / "m.json", spec)
        assert back.alpha[0] == 1 / 3 and back.zeta[0] == math.pi and back.omega[0, 0] == 2 / 7
        assert back.provenance == "level 0"
        assert json.loads((tmp_path / "m.json").read_text())["seed"] == 4

    def test_tampered_hash(self, tmp_path, spec):
        doc = json.loads(model_to_json(PriorModel(spec, [0.1], [0.2], [[1.0]])))
        doc["spec_hash"] = "0" * 64
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(SpecificationError):
            load_model(tmp_path / "m.json", spec)

    def test_wrong_spec(self, tmp_path, spec):
        save_model(PriorModel(spec, [0.1], [0.2], [[1.0]]), tmp_path / "m.json")
        from conftest import small_spec as other
        from mixlogit.model import CoefficientKind
        with pytest.raises(SpecificationError):
            load_model(tmp_path / "m.json", other(CoefficientKind.LOGNORMAL_POSITIVE))

    def test_asymmetric_omega(self, tmp_path):
        spec = california_spec()
        doc = json.loads(model_to_json(PriorModel(spec, np.zeros(2), np.zeros(5), np.eye(5))))
        doc["omega"][0][1] = 1e-6
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(SpecificationError):
            load_model(tmp_path / "m.json", spec)

    def test_malformed(self, tmp_path, spec):
        (tmp_path / "m.json").write_text("{\"version\": 1}")
        with pytest.raises(DataError):
            load_model(tmp_path / "m.json", spec)


class TestSpecFiles:
    @pytest.mark.parametrize("make", [california_spec, london_spec, small_spec])
    def test_round_trip(self, tmp_path, make):
        save_spec(make(), tmp_path / "s.json")
        assert load_spec(tmp_path / "s.json").spec_hash == make().spec_hash

    def test_malformed(self, tmp_path):
        (tmp_path / "s.json").write_text("{\"alternatives\": [\"a\"]}")
        with pytest.raises(SpecificationError):
            load_spec(tmp_path / "s.json")

    def test_case_study_kinds(self):
        spec = california_spec()
        kinds = {c.name: c.kind.value for c in spec.coefficients}
        assert kinds["price"] == kinds["operate"] == "lognormal_negative"
        assert kinds["range"] == "lognormal_positive"
        assert london_spec().p == 1 and london_spec().coefficient("C_walking").alternatives == ("walking",)


class TestPlan:
    def test_load(self, tmp_path, synthetic):
        save_spec(synthetic.spec, tmp_path / "spec.json")
        save_dataset(synthetic, tmp_path / "d.csv")
        (tmp_path / "plan.json").write_text(json.dumps({
            "spec": "spec.json", "seed": 5,
            "levels": [{"name": "L0", "data": "d.csv", "folds": ["all"]},
                       {"name": "L1", "data": "d.csv", "folds": [5, 5, "all"]}]}))
        spec, levels, options = load_plan(tmp_path / "plan.json")
        assert [l.folds for l in levels] == [(None,), (5, 5, None)]
        assert options == {"seed": 5} and spec.spec_hash == synthetic.spec.spec_hash

    def test_malformed(self, tmp_path):
        (tmp_path / "plan.json").write_text("{\"levels\": []}")
        with pytest.raises(SpecificationError):
            load_plan(tmp_path / "plan.json")
