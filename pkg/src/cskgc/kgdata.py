"""Loading, validating and indexing factual triples and entity-concept maps."""

from __future__ import annotations

import enum
import logging
import os
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

logger = logging.getLogger(__name__)

UNK_CONCEPT = "__UNK_CONCEPT__"
SPLITS = ("train", "valid", "test")
# ah_t / at_h at or above this count as the "many" side
CATEGORY_THRESHOLD = 1.5


class DatasetError(ValueError):
    """Raised for missing or malformed dataset / concept files."""


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class Vocab:
    """Bidirectional label <-> dense id mapping, ids assigned on first insert."""

    def __init__(self, labels: Iterable[str] = ()):
        self.labels: list[str] = []
        self.index: dict[str, int] = {}
        for label in labels:
            self.add(label)

    def add(self, label: str) -> int:
        idx = self.index.get(label)
        if idx is None:
            idx = len(self.labels)
            self.index[label] = idx
            self.labels.append(label)
        return idx

    def id_of(self, label: str) -> int:
        return self.index[label]

    def __contains__(self, label: str) -> bool:
        return label in self.index

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, idx: int) -> str:
        return self.labels[idx]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self.labels == other.labels

    def __repr__(self) -> str:
        return f"Vocab({len(self)} labels)"


def _encode(triples: np.ndarray, n_entities: int, n_relations: int) -> np.ndarray:
    """Pack (h, r, t) rows into sortable int64 keys."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    return (triples[:, 0] * n_relations + triples[:, 1]) * n_entities + triples[:, 2]


@dataclass(eq=False)
class KnowledgeGraph:
    """Integer-id triples with membership and adjacency indices.

    Build with :meth:`from_labels` (or :func:`load_dataset`); the indices are
    computed once at construction and the object is treated as immutable.
    """

    entities: Vocab
    relations: Vocab
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    cross_split_duplicates: int = 0

    membership: set = field(init=False, repr=False)
    train_membership: set = field(init=False, repr=False)
    by_relation: dict = field(init=False, repr=False)
    heads_of: dict = field(init=False, repr=False)
    tails_of: dict = field(init=False, repr=False)
    train_heads_of: dict = field(init=False, repr=False)
    train_tails_of: dict = field(init=False, repr=False)
    all_keys: np.ndarray = field(init=False, repr=False)
    train_keys: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        for name in SPLITS:
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1, 3)
            arr.setflags(write=False)
            setattr(self, name, arr)
        self.train_membership = set(map(tuple, self.train.tolist()))
        self.membership = set(self.train_membership)
        for arr in (self.valid, self.test):
            self.membership.update(map(tuple, arr.tolist()))

        by_rel = defaultdict(list)
        for i, r in enumerate(self.train[:, 1].tolist()):
            by_rel[r].append(i)
        self.by_relation = {r: np.asarray(v, dtype=np.int64) for r, v in by_rel.items()}

        self.heads_of, self.tails_of = _adjacency(self.membership)
        self.train_heads_of, self.train_tails_of = _adjacency(self.train_membership)

        ne, nr = self.n_entities, self.n_relations
        self.all_keys = np.unique(_encode(np.array(sorted(self.membership)), ne, nr))
        self.train_keys = np.unique(_encode(self.train, ne, nr))

    @classmethod
    def from_labels(
        cls,
        train: Sequence[tuple[str, str, str]],
        valid: Sequence[tuple[str, str, str]] = (),
        test: Sequence[tuple[str, str, str]] = (),
    ) -> "KnowledgeGraph":
        """Assign ids by first appearance over train, then valid, then test."""
        entities, relations = Vocab(), Vocab()
        arrays = []
        for split in (train, valid, test):
            rows = []
            for h, r, t in split:
                rows.append((entities.add(h), relations.add(r), entities.add(t)))
            arrays.append(np.asarray(rows, dtype=np.int64).reshape(-1, 3))
        seen: set = set()
        dupes = 0
        for arr in arrays:
            keys = set(map(tuple, arr.tolist()))
            dupes += len(keys & seen)
            seen |= keys
        if dupes:
            warnings.warn(f"{dupes} triple(s) appear in more than one split", stacklevel=2)
        return cls(entities, relations, *arrays, cross_split_duplicates=dupes)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def split(self, name: str) -> np.ndarray:
        if name.lower() not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name.lower())

    def keys(self, triples: np.ndarray) -> np.ndarray:
        return _encode(triples, self.n_entities, self.n_relations)

    def is_known(self, triples: np.ndarray, splits: str = "all") -> np.ndarray:
        """Vectorised membership test for an (n, 3) array of triples."""
        ref = self.all_keys if splits == "all" else self.train_keys
        keys = self.keys(triples)
        if ref.size == 0:
            return np.zeros(keys.shape, dtype=bool)
        pos = np.searchsorted(ref, keys)
        pos = np.minimum(pos, ref.size - 1)
        return ref[pos] == keys

    def known_tails(self, h: int, r: int, splits: str = "all") -> frozenset:
        index = self.tails_of if splits == "all" else self.train_tails_of
        return index.get((h, r), frozenset())

    def known_heads(self, t: int, r: int, splits: str = "all") -> frozenset:
        index = self.heads_of if splits == "all" else self.train_heads_of
        return index.get((t, r), frozenset())

    def label_triple(self, t: Sequence[int]) -> tuple[str, str, str]:
        return self.entities[t[0]], self.relations[t[1]], self.entities[t[2]]


def _adjacency(triples: Iterable[tuple]) -> tuple[dict, dict]:
    heads, tails = defaultdict(set), defaultdict(set)
    for h, r, t in triples:
        tails[(h, r)].add(t)
        heads[(t, r)].add(h)
    return (
        {k: frozenset(v) for k, v in heads.items()},
        {k: frozenset(v) for k, v in tails.items()},
    )


def _read_triples(path: Path) -> list[tuple[str, str, str]]:
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    rows = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(p.strip() for p in parts):
                raise DatasetError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
                )
            triple = tuple(p.strip() for p in parts)
            if triple in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate triple {triple}")
            seen.add(triple)
            rows.append(triple)
    return rows


def load_dataset(dir_path: str | os.PathLike) -> KnowledgeGraph:
    """Read ``train.txt``, ``valid.txt`` and ``test.txt`` from ``dir_path``."""
    root = Path(dir_path)
    splits = [_read_triples(root / f"{name}.txt") for name in SPLITS]
    return KnowledgeGraph.from_labels(*splits)


def write_dataset(kg: KnowledgeGraph, dir_path: str | os.PathLike) -> None:
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        lines = ["\t".join(kg.label_triple(t)) + "\n" for t in kg.split(name).tolist()]
        (root / f"{name}.txt").write_text("".join(lines), encoding="utf-8")


@dataclass(eq=False)
class ConceptMap:
    """entity id -> ordered tuple of concept ids, plus the inverse index."""

    concepts: Vocab
    entity_concepts: list[tuple[int, ...]]
    n_fallback: int = 0
    members: dict = field(init=False, repr=False)

    def __post_init__(self):
        members = defaultdict(list)
        for e, cs in enumerate(self.entity_concepts):
            for c in cs:
                members[c].append(e)
        self.members = {c: np.asarray(v, dtype=np.int64) for c, v in members.items()}

    @classmethod
    def from_dict(cls, kg: KnowledgeGraph, mapping: dict[str, Iterable[str]]) -> "ConceptMap":
        vocab = Vocab()
        per_entity: list[tuple[int, ...] | None] = [None] * kg.n_entities
        for ent, concepts in mapping.items():
            if ent not in kg.entities:
                raise DatasetError(f"unknown entity {ent!r} in concept map")
            ids = tuple(dict.fromkeys(vocab.add(c) for c in concepts))
            if not ids:
                raise DatasetError(f"empty concept list for entity {ent!r}")
            per_entity[kg.entities.id_of(ent)] = ids
        missing = sum(1 for x in per_entity if x is None)
        if missing:
            unk = vocab.add(UNK_CONCEPT)
            per_entity = [x if x is not None else (unk,) for x in per_entity]
            logger.warning("%d entities without concepts mapped to %s", missing, UNK_CONCEPT)
        return cls(vocab, per_entity, n_fallback=missing)

    def __getitem__(self, entity: int) -> tuple[int, ...]:
        return self.entity_concepts[entity]

    def entities_with(self, concepts: Iterable[int]) -> np.ndarray:
        """Sorted ids of entities carrying at least one of ``concepts``."""
        parts = [self.members[c] for c in concepts if c in self.members]
        if not parts:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(parts))

    def labels_of(self, entity: int) -> list[str]:
        return [self.concepts[c] for c in self.entity_concepts[entity]]


def load_concept_map(path: str | os.PathLike, kg: KnowledgeGraph) -> ConceptMap:
    """Parse ``entity<TAB>c1,c2,...`` lines.

    Entities of ``kg`` missing from the file get the fallback concept
    ``__UNK_CONCEPT__``; the number of such entities is ``n_fallback``.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    mapping: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DatasetError(f"{path}:{lineno}: expected 'entity<TAB>concepts'")
            ent = parts[0].strip()
            concepts = [c.strip() for c in parts[1].split(",") if c.strip()]
            if not concepts:
                raise DatasetError(f"{path}:{lineno}: empty concept list for {ent!r}")
            if ent not in kg.entities:
                raise DatasetError(f"{path}:{lineno}: unknown entity {ent!r}")
            if ent in mapping:
                raise DatasetError(f"{path}:{lineno}: entity {ent!r} listed twice")
            mapping[ent] = concepts
    return ConceptMap.from_dict(kg, mapping)


def write_concept_map(cmap: ConceptMap, kg: KnowledgeGraph, path: str | os.PathLike) -> None:
    lines = []
    for e, cs in enumerate(cmap.entity_concepts):
        labels = [cmap.concepts[c] for c in cs if cmap.concepts[c] != UNK_CONCEPT]
        if labels:
            lines.append(f"{kg.entities[e]}\t{','.join(labels)}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


class RelationCategory(str, enum.Enum):
    ONE_ONE = "ONE_ONE"
    ONE_N = "ONE_N"
    N_ONE = "N_ONE"
    N_N = "N_N"

    @classmethod
    def classify(cls, ah_t: float, at_h: float) -> "RelationCategory":
        many_tails = ah_t >= CATEGORY_THRESHOLD
        many_heads = at_h >= CATEGORY_THRESHOLD
        if many_tails and many_heads:
            return cls.N_N
        if many_tails:
            return cls.ONE_N
        if many_heads:
            return cls.N_ONE
        return cls.ONE_ONE


@dataclass(frozen=True)
class RelationProfile:
    relation: int
    avg_tails_per_head: float
    avg_heads_per_tail: float
    category: RelationCategory

    @property
    def head_unique(self) -> bool:
        return self.category in (RelationCategory.ONE_ONE, RelationCategory.ONE_N)

    @property
    def tail_unique(self) -> bool:
        return self.category in (RelationCategory.ONE_ONE, RelationCategory.N_ONE)


def profile_relations(kg: KnowledgeGraph) -> dict[int, RelationProfile]:
    """Classify each relation with training triples as 1-1 / 1-N / N-1 / N-N."""
    profiles = {}
    for r in sorted(kg.by_relation):
        rows = kg.train[kg.by_relation[r]]
        n_pairs = len({(h, t) for h, _, t in rows.tolist()})
        ah_t = n_pairs / len(np.unique(rows[:, 0]))
        at_h = n_pairs / len(np.unique(rows[:, 2]))
        profiles[r] = RelationProfile(r, ah_t, at_h, RelationCategory.classify(ah_t, at_h))
    return profiles


def known_triple(kg: KnowledgeGraph, t: Sequence[int], splits: str = "all") -> bool:
    """Membership in train (``splits="train"``) or train/valid/test (``"all"``)."""
    key = (int(t[0]), int(t[1]), int(t[2]))
    if splits == "train":
        return key in kg.train_membership
    if splits == "all":
        return key in kg.membership
    raise ValueError(f"splits must be 'train' or 'all', got {splits!r}")
