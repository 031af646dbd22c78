"""Synthetic QA datasets with controlled signal placement.

Three signal modes decide where the gold candidate is recoverable from:

* ``scene_only``   — scene-side features (entities and candidate-matched
  regions) identify the gold option directly.
* ``concept_only`` — the concept feature attached to the gold candidate's
  answer word carries the signal.
* ``cross_modal``  — the scene encodes a latent type and the candidate words
  carry shuffled type features; only the combination identifies the gold
  position.  Neither modality alone beats chance, which the generator
  verifies with an enumerated Bayes oracle.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .stores import FeatureDims

MODES = ("scene_only", "concept_only", "cross_modal")

QUESTION_TEXT = "which option matches the scene"


@dataclass
class SyntheticSpec:
    mode: str
    n_examples: int
    n_candidates: int = 2
    n_scene_entities: int = 4
    n_regions_per_option: int = 10
    noise: float = 0.1
    dims: FeatureDims = field(default_factory=FeatureDims)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown signal mode {self.mode!r}")
        if self.n_examples < 0:
            raise ValidationError("n_examples must be >= 0")
        if self.n_candidates < 2:
            raise ValidationError("need at least 2 candidates")
        if self.n_candidates > min(self.dims.scene, self.dims.concept):
            raise ValidationError("candidate count exceeds feature dimensionality")
        if self.n_scene_entities < 1:
            raise ValidationError("need at least 1 scene entity")
        if self.noise < 0:
            raise ValidationError("noise must be >= 0")

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "n_examples": self.n_examples,
            "n_candidates": self.n_candidates,
            "n_scene_entities": self.n_scene_entities,
            "n_regions_per_option": self.n_regions_per_option,
            "noise": self.noise,
            "dims": {"scene": self.dims.scene, "concept": self.dims.concept, "text": self.dims.text},
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        dims = d.pop("dims")
        return cls(dims=FeatureDims(**dims), **d)


@dataclass
class GeneratedData:
    """In-memory view of one generated dataset."""

    spec: SyntheticSpec
    examples: list[dict]
    scenes: dict[str, list[list]]  # image_id -> scene triple rows
    regions: dict[str, list[dict]]  # image_id -> region records
    kg_triples: list[tuple[str, str, str]]
    features: dict[str, np.ndarray]
    scene_pool: np.ndarray  # (n, d_scene) mean scene-entity feature per example
    concept_concat: np.ndarray  # (n, k * d_concept) candidate word features in order
    gold: np.ndarray  # (n,)
    selfcheck: dict


def _orthonormal_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((dim, max(n, 1))))
    return q.T[:n]


def _noisy(rng: np.random.Generator, base: np.ndarray, noise: float) -> np.ndarray:
    return base + noise * rng.standard_normal(base.shape) / np.sqrt(base.shape[-1])


def enumerated_bayes(cases: list[tuple[float, object, int]]) -> float:
    """Optimal accuracy of a predictor that observes ``obs`` only.

    ``cases`` enumerates the generative distribution as (probability,
    observation, gold) triples; the optimum picks argmax of the posterior
    per observation value.
    """
    by_obs: dict[object, dict[int, float]] = {}
    for p, obs, gold in cases:
        by_obs.setdefault(obs, {}).setdefault(gold, 0.0)
        by_obs[obs][gold] += p
    return sum(max(d.values()) for d in by_obs.values())


def bayes_accuracies(mode: str, k: int) -> dict[str, float]:
    """Noise-free Bayes accuracy of scene-only / concept-only / joint observers."""
    cases_scene: list[tuple[float, object, int]] = []
    cases_concept: list[tuple[float, object, int]] = []
    cases_joint: list[tuple[float, object, int]] = []
    if mode == "scene_only":
        for b in range(k):
            cases_scene.append((1 / k, b, b))
            cases_concept.append((1 / k, None, b))
            cases_joint.append((1 / k, b, b))
    elif mode == "concept_only":
        for g in range(k):
            cases_scene.append((1 / k, None, g))
            cases_concept.append((1 / k, g, g))
            cases_joint.append((1 / k, g, g))
    else:
        perms = list(itertools.permutations(range(k)))
        p = 1.0 / (k * len(perms))
        for b in range(k):
            for perm in perms:
                gold = perm.index(b)
                cases_scene.append((p, b, gold))
                cases_concept.append((p, perm, gold))
                cases_joint.append((p, (b, perm), gold))
    return {
        "scene": enumerated_bayes(cases_scene),
        "concept": enumerated_bayes(cases_concept),
        "joint": enumerated_bayes(cases_joint),
    }


def linear_probe_accuracy(
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_eval: np.ndarray,
    y_eval: np.ndarray,
    n_classes: int,
) -> float:
    """One-vs-all least-squares classifier accuracy."""
    if len(x_train) == 0 or len(x_eval) == 0:
        return 0.0
    a = np.hstack([x_train, np.ones((len(x_train), 1))])
    targets = np.eye(n_classes)[y_train]
    w, *_ = np.linalg.lstsq(a, targets, rcond=None)
    scores = np.hstack([x_eval, np.ones((len(x_eval), 1))]) @ w
    return float(np.mean(np.argmax(scores, axis=1) == y_eval))


def scene_probe_split_accuracy(data: GeneratedData, train_frac: float = 0.5) -> float:
    """Held-out accuracy of a linear classifier on pooled scene features."""
    n = len(data.gold)
    cut = int(n * train_frac)
    return linear_probe_accuracy(
        data.scene_pool[:cut],
        data.gold[:cut],
        data.scene_pool[cut:],
        data.gold[cut:],
        data.spec.n_candidates,
    )


def generate(spec: SyntheticSpec, seed: int = 0) -> GeneratedData:
    rng = np.random.default_rng(seed)
    k = spec.n_candidates
    d_s, d_c = spec.dims.scene, spec.dims.concept

    scene_patterns = _orthonormal_rows(rng, k, d_s)
    concept_patterns = _orthonormal_rows(rng, k, d_c)
    good_bad = _orthonormal_rows(rng, 2, d_c)
    region_match = _orthonormal_rows(rng, 2, d_s)  # [matching, non-matching]
    flat_scene = _orthonormal_rows(rng, 1, d_s)[0]
    flat_region = _orthonormal_rows(rng, 1, d_s)[0]

    examples: list[dict] = []
    scenes: dict[str, list[list]] = {}
    regions: dict[str, list[dict]] = {}
    kg: list[tuple[str, str, str]] = []
    features: dict[str, np.ndarray] = {}
    scene_pool = np.zeros((spec.n_examples, d_s))
    concept_concat = np.zeros((spec.n_examples, k * d_c))
    gold_arr = np.zeros(spec.n_examples, dtype=np.intp)

    # Candidate words are shared across examples so a model cannot memorize
    # per-example identities through the context encoding; each word enters
    # the concept vocabulary via its own hub triple.
    if spec.mode == "scene_only":
        words = [f"option_{w}" for w in range(k)]
    else:
        words = [f"w{w}" for w in range(k)]
    for w, word in enumerate(words):
        kg.append((word, "related_to", f"hub{w}"))
    if spec.mode == "concept_only":
        word_features = {words[0]: good_bad[0]}
        for word in words[1:]:
            word_features[word] = good_bad[1]
    elif spec.mode == "cross_modal":
        word_features = {words[t]: concept_patterns[t] for t in range(k)}
    else:
        word_features = {}
    for word, base in word_features.items():
        f = _noisy(rng, base, spec.noise)
        features[f"concept:{word}"] = f

    for i in range(spec.n_examples):
        image_id = f"img{i}"
        b = int(rng.integers(k))

        # scene entities: pattern follows the latent unless the mode hides it
        scene_base = flat_scene if spec.mode == "concept_only" else scene_patterns[b]
        ent_feats = []
        rows = []
        for j in range(spec.n_scene_entities):
            ref = f"{image_id}:s{j}"
            f = _noisy(rng, scene_base, spec.noise)
            features[ref] = f
            ent_feats.append(f)
        scene_pool[i] = np.mean(ent_feats, axis=0)
        for j in range(spec.n_scene_entities - 1):
            rows.append(
                [f"obj{j}", "near", f"obj{j + 1}", f"{image_id}:s{j}", f"{image_id}:s{j + 1}", 1.0]
            )
        if spec.n_scene_entities == 1:
            # a lone entity still needs one self-descriptive triple partner
            ref = f"{image_id}:s0b"
            features[ref] = _noisy(rng, scene_base, spec.noise)
            rows.append(["obj0", "near", "obj0b", f"{image_id}:s0", ref, 1.0])
        scenes[image_id] = rows

        # answer candidates and the concept-side signal
        if spec.mode == "scene_only":
            answers = list(words)
            gold = b
        elif spec.mode == "concept_only":
            # gold is the position of the "good" word after shuffling
            perm = rng.permutation(k)
            answers = [words[int(t)] for t in perm]
            gold = int(np.where(perm == 0)[0][0])
        else:  # cross_modal: gold is the position of the word whose type is b
            perm = rng.permutation(k)
            answers = [words[int(t)] for t in perm]
            gold = int(np.where(perm == b)[0][0])

        if spec.mode != "scene_only":
            for pos in range(k):
                concept_concat[i, pos * d_c : (pos + 1) * d_c] = features[
                    f"concept:{answers[pos]}"
                ]

        # regions: candidate-discriminative only in scene_only mode
        recs = []
        if spec.mode == "scene_only":
            for w in range(k):
                for r in range(spec.n_regions_per_option):
                    ref = f"{image_id}:r{w}_{r}"
                    base = region_match[0] if w == b else region_match[1]
                    features[ref] = _noisy(rng, base, spec.noise)
                    recs.append(
                        {"id": f"{image_id}:{w}:{r}", "description": answers[w], "feature_ref": ref}
                    )
        else:
            for r in range(3):
                ref = f"{image_id}:r{r}"
                features[ref] = _noisy(rng, flat_region, spec.noise)
                recs.append({"id": f"{image_id}:{r}", "description": "region", "feature_ref": ref})
        regions[image_id] = recs

        examples.append(
            {
                "id": f"ex{i}",
                "image_id": image_id,
                "question": QUESTION_TEXT,
                "answers": answers,
                "gold": gold,
            }
        )
        gold_arr[i] = gold

    selfcheck = {
        "mode": spec.mode,
        "noise": spec.noise,
        "bayes": bayes_accuracies(spec.mode, k),
        "probe_scene": (
            linear_probe_accuracy(scene_pool, gold_arr, scene_pool, gold_arr, k)
            if spec.n_examples
            else None
        ),
        "probe_concept": (
            linear_probe_accuracy(concept_concat, gold_arr, concept_concat, gold_arr, k)
            if spec.n_examples and spec.mode != "scene_only"
            else None
        ),
    }
    _verify(spec, selfcheck)
    return GeneratedData(
        spec=spec,
        examples=examples,
        scenes=scenes,
        regions=regions,
        kg_triples=kg,
        features=features,
        scene_pool=scene_pool,
        concept_concat=concept_concat,
        gold=gold_arr,
        selfcheck=selfcheck,
    )


def _verify(spec: SyntheticSpec, selfcheck: dict) -> None:
    """Structural guarantees the generator must uphold."""
    bayes = selfcheck["bayes"]
    if spec.mode == "cross_modal":
        if bayes["scene"] > 0.6 or bayes["concept"] > 0.6:
            raise ValidationError(
                f"single-modality ceiling violated: {bayes}"
            )
        if abs(bayes["joint"] - 1.0) > 1e-12:
            raise ValidationError(f"joint observer is not perfect: {bayes}")
    if spec.noise == 0 and spec.n_examples:
        if spec.mode == "scene_only" and selfcheck["probe_scene"] != 1.0:
            raise ValidationError(
                f"noise-free scene probe reached only {selfcheck['probe_scene']}"
            )
        if spec.mode == "concept_only" and selfcheck["probe_concept"] != 1.0:
            raise ValidationError(
                f"noise-free concept probe reached only {selfcheck['probe_concept']}"
            )


# ---------------------------------------------------------------------------
# on-disk layout (consumed by the pipeline loader)


def write_dataset(data: GeneratedData, out_dir: str | Path) -> dict[str, Path]:
    from .serialize import save_arrays

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "triples": out / "triples.tsv",
        "regions": out / "regions.json",
        "scenes": out / "scenes.jsonl",
        "examples": out / "examples.jsonl",
        "features": out / "features.bin",
        "spec": out / "dataset.json",
        "selfcheck": out / "selfcheck.json",
    }
    with open(paths["triples"], "w", encoding="utf-8") as fh:
        for h, r, t in data.kg_triples:
            fh.write(f"{h}\t{r}\t{t}\n")
    paths["regions"].write_text(json.dumps(data.regions, indent=1, sort_keys=True))
    with open(paths["scenes"], "w", encoding="utf-8") as fh:
        for image_id, rows in data.scenes.items():
            fh.write(json.dumps({"image_id": image_id, "triples": rows}) + "\n")
    with open(paths["examples"], "w", encoding="utf-8") as fh:
        for ex in data.examples:
            fh.write(json.dumps(ex) + "\n")
    save_arrays(paths["features"], data.features)
    paths["spec"].write_text(json.dumps(data.spec.to_json_dict(), indent=1))
    paths["selfcheck"].write_text(json.dumps(data.selfcheck, indent=1))
    return paths
