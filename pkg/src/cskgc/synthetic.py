"""Synthetic knowledge graphs whose relations respect fixed concept pairs."""

from __future__ import annotations

import numpy as np

from .kgdata import ConceptMap, KnowledgeGraph, Vocab


def concept_structured_kg(
    n_entities: int = 200,
    n_concepts: int = 8,
    n_relations: int = 6,
    tails_per_head: int = 3,
    dim: int = 8,
    noise: float = 0.3,
    split: tuple[float, float] = (0.8, 0.1),
    seed: int = 0,
) -> tuple[KnowledgeGraph, ConceptMap, dict]:
    """Build a KG where relation ``r`` only links concept ``a_r`` to concept ``b_r``.

    Every entity has one concept and a latent point near its concept centre.
    For each head of concept ``a_r`` the tails are the ``tails_per_head``
    entities of concept ``b_r`` closest to ``z_h + v_r``, so a translation
    model can fit the data. Each relation contributes to the training split,
    so the common sense mined from it is complete.

    Returns ``(kg, cmap, pairs)`` with ``pairs[r] = (head concept, tail concept)`` labels.
    """
    rng = np.random.default_rng(seed)
    concept = np.arange(n_entities) % n_concepts
    centres = rng.normal(size=(n_concepts, dim)) * 2.0
    z = centres[concept] + noise * rng.normal(size=(n_entities, dim))
    # the first relations walk a permutation of the concepts so each one is used
    perm = rng.permutation(n_concepts)
    pairs = {}
    rows = []
    for r in range(n_relations):
        if 2 * r + 1 < n_concepts:
            a, b = perm[2 * r], perm[2 * r + 1]
        else:
            a, b = rng.choice(n_concepts, size=2, replace=False)
        pairs[f"r{r}"] = (f"c{a}", f"c{b}")
        v = centres[b] - centres[a] + noise * rng.normal(size=dim)
        heads, tails = np.flatnonzero(concept == a), np.flatnonzero(concept == b)
        for h in heads:
            d = np.linalg.norm(z[tails] - (z[h] + v), axis=1)
            for t in tails[np.argsort(d, kind="stable")[:tails_per_head]]:
                rows.append((h, r, t))
    order = rng.permutation(len(rows))
    rows = [rows[i] for i in order]
    # keep one triple of every relation in training before splitting the rest
    first, rest, seen = [], [], set()
    for row in rows:
        (rest if row[1] in seen else first).append(row)
        seen.add(row[1])
    n_train = int(split[0] * len(rows)) - len(first)
    n_valid = int(split[1] * len(rows))
    train = first + rest[:n_train]
    valid = rest[n_train:n_train + n_valid]
    test = rest[n_train + n_valid:]
    # entity ids equal entity numbers, including entities that occur in no triple
    arr = lambda part: np.array(part, dtype=np.int64).reshape(-1, 3)
    kg = KnowledgeGraph(Vocab(f"e{i}" for i in range(n_entities)), Vocab(f"r{r}" for r in range(n_relations)),
                        arr(train), arr(valid), arr(test))
    cmap = ConceptMap.from_dict(kg, {f"e{i}": [f"c{concept[i]}"] for i in range(n_entities)})
    return kg, cmap, pairs
