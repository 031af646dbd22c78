"""Local knowledge stores and feature providers.

Stand-ins for external resources: a triple store for the concept knowledge
graph, a region-description store, and deterministic feature providers that
replace pretrained encoders with hashed unit vectors or file-backed vectors.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .serialize import load_arrays, save_arrays


@dataclass(frozen=True)
class Triple:
    head: str
    relation: str
    tail: str


class TripleStore:
    """Deduplicated (head, relation, tail) triples, indexed by both ends."""

    def __init__(self, triples: list[Triple] | None = None):
        self.triples: list[Triple] = []
        self._by_head: dict[str, list[Triple]] = {}
        self._by_tail: dict[str, list[Triple]] = {}
        self._seen: set[Triple] = set()
        for t in triples or []:
            self.add(t)

    def add(self, t: Triple) -> None:
        if t in self._seen:
            return
        self._seen.add(t)
        self.triples.append(t)
        self._by_head.setdefault(t.head, []).append(t)
        self._by_tail.setdefault(t.tail, []).append(t)

    def __len__(self) -> int:
        return len(self.triples)

    def one_hop(self, concept: str) -> list[Triple]:
        """All triples containing ``concept``, in insertion order."""
        hits = self._by_head.get(concept, []) + [
            t for t in self._by_tail.get(concept, []) if t.head != concept
        ]
        order = {t: i for i, t in enumerate(self.triples)}
        return sorted(hits, key=order.__getitem__)

    def vocabulary(self) -> set[str]:
        return set(self._by_head) | set(self._by_tail)

    def relation_names(self) -> list[str]:
        seen: list[str] = []
        for t in self.triples:
            if t.relation not in seen:
                seen.append(t.relation)
        return seen

    def connecting(self, a: str, b: str) -> list[Triple]:
        return [t for t in self._by_head.get(a, []) if t.tail == b] + [
            t for t in self._by_head.get(b, []) if t.tail == a
        ]

    @classmethod
    def load(cls, path: str | Path) -> "TripleStore":
        store = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3 or not all(parts):
                    raise FormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
                store.add(Triple(*parts))
        return store

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.triples:
                fh.write(f"{t.head}\t{t.relation}\t{t.tail}\n")


@dataclass
class Region:
    id: str
    description: str
    feature_ref: str


class RegionStore:
    def __init__(self, regions: list[Region] | None = None):
        self.regions = list(regions or [])

    def __len__(self) -> int:
        return len(self.regions)

    @classmethod
    def load(cls, path: str | Path) -> "RegionStore":
        try:
            records = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from exc
        return cls([Region(r["id"], r["description"], r["feature_ref"]) for r in records])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(
                [
                    {"id": r.id, "description": r.description, "feature_ref": r.feature_ref}
                    for r in self.regions
                ],
                indent=1,
            )
        )


# ---------------------------------------------------------------------------
# feature providers


class HashEmbedder:
    """Deterministic unit-norm embeddings seeded from a string hash."""

    def __init__(self, seed: int, dim: int):
        if dim < 2:
            raise ValueError("embedding dim must be >= 2")
        self.seed = seed
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}

    def text_embed(self, text: str) -> np.ndarray:
        v = self._cache.get(text)
        if v is None:
            digest = hashlib.sha256(f"{self.seed}:{text}".encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            v = rng.standard_normal(self.dim)
            v /= np.linalg.norm(v)
            self._cache[text] = v
        return v

    def similarity(self, a: str, b: str) -> float:
        va, vb = self.text_embed(a), self.text_embed(b)
        return float(np.clip(np.dot(va, vb), -1.0, 1.0))


class FileFeatureStore:
    """Vectors keyed by string, loaded from the shared binary format."""

    def __init__(self, arrays: dict[str, np.ndarray]):
        self.arrays = arrays

    @classmethod
    def load(cls, path: str | Path) -> "FileFeatureStore":
        return cls(load_arrays(path))

    def save(self, path: str | Path) -> None:
        save_arrays(path, self.arrays)

    def has(self, key: str) -> bool:
        return key in self.arrays

    def get(self, key: str, width: int | None = None) -> np.ndarray:
        if key not in self.arrays:
            raise ValidationError(f"feature key {key!r} not found in feature store")
        v = self.arrays[key]
        if width is not None and v.shape != (width,):
            raise ValidationError(
                f"feature {key!r} has shape {v.shape}, expected ({width},)"
            )
        return v


@dataclass
class FeatureDims:
    scene: int = 16  # visual entity vectors (2048 in the full-scale setting)
    concept: int = 16  # concept text vectors (1024 in the full-scale setting)
    text: int = 16  # context-node encoding


class FeatureSuite:
    """Resolves every feature the graph builder needs.

    Explicit ``feature_ref`` lookups require the key to exist when a file
    store is attached; concept names fall back to hashed embeddings so a
    store only has to carry the vectors that matter.
    """

    def __init__(
        self,
        dims: FeatureDims,
        seed: int = 0,
        store: FileFeatureStore | None = None,
    ):
        self.dims = dims
        self.store = store
        self._scene_hash = HashEmbedder(seed * 4 + 1, dims.scene)
        self._concept_hash = HashEmbedder(seed * 4 + 2, dims.concept)
        self._text_hash = HashEmbedder(seed * 4 + 3, dims.text)

    def _ref(self, key: str, width: int, hash_fallback: HashEmbedder) -> np.ndarray:
        if self.store is not None:
            return self.store.get(key, width)
        return hash_fallback.text_embed(key)

    def scene_feature(self, ref: str) -> np.ndarray:
        return self._ref(ref, self.dims.scene, self._scene_hash)

    def region_feature(self, ref: str) -> np.ndarray:
        # Region crops share the visual embedding space with scene entities.
        return self._ref(ref, self.dims.scene, self._scene_hash)

    def concept_feature(self, name: str) -> np.ndarray:
        key = f"concept:{name}"
        if self.store is not None and self.store.has(key):
            return self.store.get(key, self.dims.concept)
        return self._concept_hash.text_embed(name)

    def text_embed(self, text: str) -> np.ndarray:
        return self._text_hash.text_embed(text)

    def similarity(self, a: str, b: str) -> float:
        return self._text_hash.similarity(a, b)
