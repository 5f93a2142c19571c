"""Concept-level triples derived from the training facts.

Individual form holds every (head concept, relation, tail concept) witnessed
by a training triple; set form merges them per relation into one
(head concept set, tail concept set) pair.
"""

from __future__ import annotations

import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .kgdata import ConceptMap, DatasetError, KnowledgeGraph

_EMPTY: frozenset = frozenset()


@dataclass(eq=False)
class CommonSenseStore:
    individual: frozenset
    setform: dict
    index_by_head_rel: dict = field(init=False, repr=False)
    index_by_tail_rel: dict = field(init=False, repr=False)

    def __post_init__(self):
        by_head, by_tail = defaultdict(set), defaultdict(set)
        for ch, r, ct in self.individual:
            by_head[(ch, r)].add(ct)
            by_tail[(ct, r)].add(ch)
        self.index_by_head_rel = {k: frozenset(v) for k, v in by_head.items()}
        self.index_by_tail_rel = {k: frozenset(v) for k, v in by_tail.items()}

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, CommonSenseStore)
            and self.individual == other.individual
            and self.setform == other.setform
        )

    def __len__(self) -> int:
        return len(self.individual)


def generate(kg: KnowledgeGraph, cmap: ConceptMap) -> CommonSenseStore:
    """Build both common-sense forms from the training split."""
    individual = set()
    heads, tails = defaultdict(set), defaultdict(set)
    for h, r, t in kg.train.tolist():
        ch, ct = cmap[h], cmap[t]
        for a in ch:
            for b in ct:
                individual.add((a, r, b))
        heads[r].update(ch)
        tails[r].update(ct)
    setform = {r: (frozenset(heads[r]), frozenset(tails[r])) for r in heads}
    return CommonSenseStore(frozenset(individual), setform)


def setform_from_individual(individual: Iterable[tuple[int, int, int]]) -> dict:
    heads, tails = defaultdict(set), defaultdict(set)
    for ch, r, ct in individual:
        heads[r].add(ch)
        tails[r].add(ct)
    return {r: (frozenset(heads[r]), frozenset(tails[r])) for r in heads}


def tail_concepts(store: CommonSenseStore, head_concepts: Iterable[int], r: int) -> frozenset:
    """Tail concepts reachable from any of ``head_concepts`` via ``r``."""
    out = set()
    for c in head_concepts:
        out |= store.index_by_head_rel.get((c, r), _EMPTY)
    return frozenset(out)


def head_concepts(store: CommonSenseStore, tail_concepts: Iterable[int], r: int) -> frozenset:
    out = set()
    for c in tail_concepts:
        out |= store.index_by_tail_rel.get((c, r), _EMPTY)
    return frozenset(out)


def setform_of(store: CommonSenseStore, r: int) -> tuple[frozenset, frozenset]:
    return store.setform.get(r, (_EMPTY, _EMPTY))


def save_store(
    store: CommonSenseStore,
    dir_path: str | os.PathLike,
    kg: KnowledgeGraph,
    cmap: ConceptMap,
) -> tuple[Path, Path]:
    """Write ``cs_individual.txt`` and ``cs_setform.txt`` (label form, sorted)."""
    from .ioutil import atomic_write_text

    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    c, rel = cmap.concepts, kg.relations
    ind = sorted((c[a], rel[r], c[b]) for a, r, b in store.individual)
    ind_path = root / "cs_individual.txt"
    atomic_write_text(ind_path, "".join("\t".join(x) + "\n" for x in ind))

    rows = []
    for r, (hs, ts) in store.setform.items():
        rows.append((rel[r], ",".join(sorted(c[x] for x in hs)), ",".join(sorted(c[x] for x in ts))))
    set_path = root / "cs_setform.txt"
    atomic_write_text(set_path, "".join("\t".join(x) + "\n" for x in sorted(rows)))
    return ind_path, set_path


def load_store(dir_path: str | os.PathLike, kg: KnowledgeGraph, cmap: ConceptMap) -> CommonSenseStore:
    """Read the two files written by :func:`save_store` back into id space."""
    root = Path(dir_path)
    ind_path, set_path = root / "cs_individual.txt", root / "cs_setform.txt"
    for p in (ind_path, set_path):
        if not p.is_file():
            raise DatasetError(f"missing file: {p}")

    def concept(label: str, where: str) -> int:
        if label not in cmap.concepts:
            raise DatasetError(f"{where}: unknown concept {label!r}")
        return cmap.concepts.id_of(label)

    def relation(label: str, where: str) -> int:
        if label not in kg.relations:
            raise DatasetError(f"{where}: unknown relation {label!r}")
        return kg.relations.id_of(label)

    individual = set()
    for lineno, line in enumerate(ind_path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        where = f"{ind_path}:{lineno}"
        if len(parts) != 3:
            raise DatasetError(f"{where}: expected 3 fields")
        individual.add((concept(parts[0], where), relation(parts[1], where), concept(parts[2], where)))

    setform = {}
    for lineno, line in enumerate(set_path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        where = f"{set_path}:{lineno}"
        if len(parts) != 3:
            raise DatasetError(f"{where}: expected 3 fields")
        hs = frozenset(concept(x, where) for x in parts[1].split(",") if x)
        ts = frozenset(concept(x, where) for x in parts[2].split(",") if x)
        setform[relation(parts[0], where)] = (hs, ts)
    return CommonSenseStore(frozenset(individual), setform)
