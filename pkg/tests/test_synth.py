"""Tests for the synthetic dataset generator and its self-checks."""

import json

import numpy as np
import pytest

from mmgraphqa.errors import ValidationError
from mmgraphqa.stores import FeatureDims
from mmgraphqa.synth import (
    MODES,
    GeneratedData,
    SyntheticSpec,
    bayes_accuracies,
    enumerated_bayes,
    generate,
    linear_probe_accuracy,
    scene_probe_split_accuracy,
    write_dataset,
)

DIMS = FeatureDims(8, 8, 8)


def spec(mode="cross_modal", n=20, **kw):
    base = dict(mode=mode, n_examples=n, dims=DIMS)
    base.update(kw)
    return SyntheticSpec(**base)


class TestSpec:
    def test_unknown_mode_rejected(self):
        with pytest.raises(ValidationError, match="unknown signal mode"):
            spec(mode="retrieval")

    @pytest.mark.parametrize(
        "kw", [dict(n=-1), dict(n_candidates=1), dict(noise=-0.1), dict(n_scene_entities=0)]
    )
    def test_bad_numbers_rejected(self, kw):
        with pytest.raises(ValidationError):
            spec(**kw)

    def test_candidates_bounded_by_dims(self):
        with pytest.raises(ValidationError, match="dimensionality"):
            spec(n_candidates=9)

    def test_json_roundtrip(self):
        s = spec(n_candidates=3, noise=0.2)
        assert SyntheticSpec.from_json_dict(s.to_json_dict()) == s


class TestBayes:
    def test_enumerated_bayes_coin_flip(self):
        # observation carries no information: best accuracy is the prior max
        cases = [(0.5, None, 0), (0.5, None, 1)]
        assert enumerated_bayes(cases) == pytest.approx(0.5)

    def test_enumerated_bayes_perfect_observer(self):
        cases = [(0.25, i, i) for i in range(4)]
        assert enumerated_bayes(cases) == pytest.approx(1.0)

    def test_scene_only_values(self):
        b = bayes_accuracies("scene_only", 2)
        assert b == {"scene": pytest.approx(1.0), "concept": pytest.approx(0.5), "joint": pytest.approx(1.0)}

    def test_concept_only_values(self):
        b = bayes_accuracies("concept_only", 3)
        assert b["scene"] == pytest.approx(1 / 3)
        assert b["concept"] == pytest.approx(1.0)

    def test_cross_modal_single_modality_at_chance(self):
        for k in (2, 3):
            b = bayes_accuracies("cross_modal", k)
            assert b["scene"] == pytest.approx(1 / k)
            assert b["concept"] == pytest.approx(1 / k)
            assert b["joint"] == pytest.approx(1.0)


class TestProbe:
    def test_separable_data_is_learned(self):
        x = np.vstack([np.full((10, 3), -1.0), np.full((10, 3), 1.0)])
        y = np.array([0] * 10 + [1] * 10)
        assert linear_probe_accuracy(x, y, x, y, 2) == 1.0

    def test_empty_eval_returns_zero(self):
        assert linear_probe_accuracy(np.zeros((0, 2)), np.zeros(0, int), np.zeros((0, 2)), np.zeros(0, int), 2) == 0.0


class TestGenerate:
    @pytest.mark.parametrize("mode", MODES)
    def test_structure(self, mode):
        data = generate(spec(mode=mode, n=10), seed=0)
        assert len(data.examples) == 10
        assert len(data.scenes) == 10
        for ex in data.examples:
            assert len(ex["answers"]) == 2
            assert 0 <= ex["gold"] < 2
            assert ex["image_id"] in data.regions

    def test_determinism(self):
        a = generate(spec(n=6), seed=3)
        b = generate(spec(n=6), seed=3)
        assert a.examples == b.examples
        for key in a.features:
            np.testing.assert_array_equal(a.features[key], b.features[key])

    def test_seeds_differ(self):
        a = generate(spec(n=6), seed=0)
        b = generate(spec(n=6), seed=1)
        assert a.examples != b.examples or any(
            not np.array_equal(a.features[k], b.features[k]) for k in a.features
        )

    def test_candidate_words_shared_across_examples(self):
        data = generate(spec(mode="cross_modal", n=8), seed=0)
        vocab = {w for ex in data.examples for w in ex["answers"]}
        assert vocab == {"w0", "w1"}
        # each shared word is reachable through the concept store
        heads = {h for h, _, _ in data.kg_triples}
        assert vocab <= heads

    def test_scene_only_regions_match_candidates(self):
        s = spec(mode="scene_only", n=4, n_regions_per_option=5)
        data = generate(s, seed=0)
        for ex in data.examples:
            descs = [r["description"] for r in data.regions[ex["image_id"]]]
            assert len(descs) == 2 * 5
            assert set(descs) == set(ex["answers"])

    def test_noise_free_cross_modal_probes_at_chance(self):
        data = generate(spec(mode="cross_modal", n=40, noise=0.0), seed=0)
        assert data.selfcheck["bayes"]["scene"] == pytest.approx(0.5)
        assert data.selfcheck["bayes"]["joint"] == pytest.approx(1.0)

    def test_noise_free_scene_probe_perfect(self):
        data = generate(spec(mode="scene_only", n=30, noise=0.0), seed=0)
        assert data.selfcheck["probe_scene"] == 1.0

    def test_noise_free_concept_probe_perfect(self):
        data = generate(spec(mode="concept_only", n=30, noise=0.0), seed=0)
        assert data.selfcheck["probe_concept"] == 1.0

    def test_split_probe_near_chance_for_cross_modal(self):
        data = generate(spec(mode="cross_modal", n=200, noise=0.1), seed=0)
        assert scene_probe_split_accuracy(data) <= 0.65

    def test_empty_dataset(self):
        data = generate(spec(n=0), seed=0)
        assert data.examples == [] and data.gold.shape == (0,)


class TestWriteDataset:
    def test_files_written_and_parse(self, tmp_path):
        data = generate(spec(mode="concept_only", n=5), seed=1)
        paths = write_dataset(data, tmp_path)
        for p in paths.values():
            assert p.exists()
        lines = paths["examples"].read_text().splitlines()
        assert [json.loads(l)["id"] for l in lines] == [f"ex{i}" for i in range(5)]
        restored = SyntheticSpec.from_json_dict(json.loads(paths["spec"].read_text()))
        assert restored == data.spec
        triples = [l.split("\t") for l in paths["triples"].read_text().splitlines()]
        assert all(len(t) == 3 for t in triples)
