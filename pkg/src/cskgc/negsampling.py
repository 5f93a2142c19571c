"""Negative sampling: common-sense guided (CGNS), uniform and self-adversarial.

All samplers work on batches of positives and return a :class:`NegativeBatch`
with ``n`` head corruptions and ``n`` tail corruptions per positive. The
single-positive functions (:func:`cgns_sample`, :func:`uniform_sample`) wrap
the batch path and return :class:`NegativeSample` records.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .commonsense import CommonSenseStore, setform_of
from .kgdata import ConceptMap, KnowledgeGraph, RelationProfile, Triple
from .scorers import ModelState, fact_forward

# rejection rounds before falling back to an explicit valid-candidate scan
_MAX_REDRAWS = 8


class Side(str, enum.Enum):
    HEAD = "HEAD"
    TAIL = "TAIL"


@dataclass(frozen=True)
class NegativeSample:
    triple: Triple
    weight: float
    corrupted_side: Side
    prob: float
    fallback: bool = False


@dataclass
class NegativeBatch:
    """Corruptions for ``B`` positives; columns ``[:n]`` are head-side, ``[n:]`` tail-side."""

    positives: np.ndarray
    heads: np.ndarray
    tails: np.ndarray
    weights: np.ndarray
    probs: np.ndarray
    fallback: np.ndarray

    @property
    def n(self) -> int:
        return self.heads.shape[1]

    def triples(self) -> np.ndarray:
        """``(B, 2n, 3)`` negative triples in column order."""
        B, n = self.heads.shape
        out = np.repeat(self.positives[:, None, :], 2 * n, axis=1)
        out[:, :n, 0] = self.heads
        out[:, n:, 2] = self.tails
        return out

    def samples(self, i: int) -> list[NegativeSample]:
        h, r, t = (int(x) for x in self.positives[i])
        n = self.n
        out = []
        for j in range(n):
            out.append(NegativeSample(Triple(int(self.heads[i, j]), r, t), float(self.weights[i, j]),
                                      Side.HEAD, float(self.probs[i, j]), bool(self.fallback[i, 0])))
        for j in range(n):
            out.append(NegativeSample(Triple(h, r, int(self.tails[i, j])), float(self.weights[i, n + j]),
                                      Side.TAIL, float(self.probs[i, n + j]), bool(self.fallback[i, 1])))
        return out


def self_adversarial_weights(scores, temperature: float = 1.0) -> np.ndarray:
    """Softmax of ``scores / temperature`` along the last axis (max-shifted)."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(scores, dtype=np.float64) / temperature
    if z.size == 0:
        raise ValueError("scores must be non-empty")
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def _side_is_unique(profile: RelationProfile, side: Side) -> bool:
    return profile.head_unique if side is Side.HEAD else profile.tail_unique


def _pool_concepts(cmap, store, profile, positive, side: Side):
    h, r, t = positive
    if _side_is_unique(profile, side):
        return cmap[h] if side is Side.HEAD else cmap[t]
    heads, tails = setform_of(store, r)
    return heads if side is Side.HEAD else tails


def candidate_pool(cmap: ConceptMap, store: CommonSenseStore, profiles: dict,
                   positive, side: Side | str) -> frozenset:
    """Entities CGNS draws from for ``side``, before the original is excluded.

    A unique side draws from entities sharing a concept with the positive's own
    entity; a non-unique side from the set-form concepts of the relation.
    """
    side = Side(side)
    concepts = _pool_concepts(cmap, store, profiles[int(positive[1])], positive, side)
    return frozenset(cmap.entities_with(concepts).tolist())


class _Drawer:
    """Uniform draws from entity pools, rejecting the original entity and,
    optionally, candidates that form a known training triple."""

    def __init__(self, kg: KnowledgeGraph, filter_known: bool):
        self.kg = kg
        self.filter_known = filter_known
        self.all_entities = np.arange(kg.n_entities)

    def _invalid(self, pos: np.ndarray, side: Side, cand: np.ndarray) -> np.ndarray:
        col = 0 if side is Side.HEAD else 2
        bad = cand == pos[:, col:col + 1]
        if self.filter_known:
            trip = np.repeat(pos[:, None, :], cand.shape[1], axis=1)
            trip[..., col] = cand
            bad |= self.kg.is_known(trip.reshape(-1, 3), "train").reshape(cand.shape)
        return bad

    def draw(self, pos: np.ndarray, side: Side, pool: np.ndarray, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(candidates (G, n), fallback (G,))`` for positives sharing ``pool``."""
        G = pos.shape[0]
        fallback = np.zeros(G, dtype=bool)
        if pool.size == 0:
            cand = np.zeros((G, n), dtype=np.int64)
            bad = np.ones((G, n), dtype=bool)
        else:
            cand = pool[rng.integers(0, pool.size, size=(G, n))]
            bad = self._invalid(pos, side, cand)
            for _ in range(_MAX_REDRAWS):
                if not bad.any():
                    break
                k = int(bad.sum())
                cand[bad] = pool[rng.integers(0, pool.size, size=k)]
                bad = self._invalid(pos, side, cand)
        for g in np.flatnonzero(bad.any(axis=1)):
            row = pos[g:g + 1]
            valid = self._valid(row, side, pool)
            if valid.size == 0:
                fallback[g] = True
                valid = self._valid(row, side, self.all_entities)
                if valid.size == 0:
                    # every other entity forms a known triple: keep only the original-exclusion rule
                    col = 0 if side is Side.HEAD else 2
                    valid = self.all_entities[self.all_entities != row[0, col]]
                cand[g] = valid[rng.integers(0, valid.size, size=n)]
            else:
                k = int(bad[g].sum())
                cand[g, bad[g]] = valid[rng.integers(0, valid.size, size=k)]
        return cand, fallback

    def _valid(self, row: np.ndarray, side: Side, pool: np.ndarray) -> np.ndarray:
        if pool.size == 0:
            return pool
        return pool[~self._invalid(row, side, pool[None, :])[0]]


class UniformSampler:
    """Corrupt uniformly over all entities except the original; weight 1."""

    def __init__(self, kg: KnowledgeGraph, filter_known: bool = False):
        self.kg = kg
        self._drawer = _Drawer(kg, filter_known)

    def _candidates(self, positives, n, rng):
        pool = self._drawer.all_entities
        heads, fb_h = self._drawer.draw(positives, Side.HEAD, pool, n, rng)
        tails, fb_t = self._drawer.draw(positives, Side.TAIL, pool, n, rng)
        return heads, tails, np.stack([fb_h, fb_t], axis=1)

    def sample_batch(self, positives, n: int, state=None, temperature: float = 1.0, rng=None) -> NegativeBatch:
        positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
        heads, tails, fb = self._candidates(positives, n, rng)
        ones = np.ones((positives.shape[0], 2 * n))
        return NegativeBatch(positives, heads, tails, ones, ones / n, fb)


class SelfAdversarialSampler(UniformSampler):
    """Uniform candidates, weighted per side by the softmax of their fact scores."""

    def sample_batch(self, positives, n: int, state=None, temperature: float = 1.0, rng=None) -> NegativeBatch:
        positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
        heads, tails, fb = self._candidates(positives, n, rng)
        batch = NegativeBatch(positives, heads, tails, None, None, fb)
        scores = _negative_scores(state, batch)
        probs = np.concatenate([self_adversarial_weights(scores[:, :n], temperature),
                                self_adversarial_weights(scores[:, n:], temperature)], axis=1)
        batch.probs = probs
        batch.weights = probs.copy()
        return batch


def _negative_scores(state: ModelState, batch: NegativeBatch) -> np.ndarray:
    trip = batch.triples()
    B, K, _ = trip.shape
    flat = trip.reshape(-1, 3)
    return fact_forward(state, flat[:, 0], flat[:, 1], flat[:, 2]).reshape(B, K)


class CGNSSampler:
    """Common-sense guided negative sampling.

    For each side the candidate concepts come from the positive's own entity
    when that side is unique for the relation's category, otherwise from the
    relation's set-form concepts. ``p`` is the per-side softmax of candidate
    fact scores; the weight is ``p`` on a unique side and ``1 - p`` otherwise.
    """

    def __init__(self, kg: KnowledgeGraph, store: CommonSenseStore, cmap: ConceptMap,
                 profiles: dict, filter_known: bool = True):
        self.kg, self.store, self.cmap, self.profiles = kg, store, cmap, profiles
        self._drawer = _Drawer(kg, filter_known)
        self._pools: dict = {}

    def _pool(self, concepts) -> np.ndarray:
        key = frozenset(concepts)
        pool = self._pools.get(key)
        if pool is None:
            pool = self.cmap.entities_with(sorted(key))
            self._pools[key] = pool
        return pool

    def _side(self, positives, side: Side, n: int, rng):
        B = positives.shape[0]
        cand = np.zeros((B, n), dtype=np.int64)
        fallback = np.zeros(B, dtype=bool)
        unique = np.zeros(B, dtype=bool)
        groups: dict = {}
        for i, pos in enumerate(positives.tolist()):
            profile = self.profiles[pos[1]]
            unique[i] = _side_is_unique(profile, side)
            key = frozenset(_pool_concepts(self.cmap, self.store, profile, pos, side))
            groups.setdefault(key, []).append(i)
        for key, idx in groups.items():
            idx = np.asarray(idx)
            c, fb = self._drawer.draw(positives[idx], side, self._pool(key), n, rng)
            cand[idx], fallback[idx] = c, fb
        return cand, fallback, unique

    def sample_batch(self, positives, n: int, state: ModelState, temperature: float = 1.0,
                     rng=None) -> NegativeBatch:
        positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
        heads, fb_h, uniq_h = self._side(positives, Side.HEAD, n, rng)
        tails, fb_t, uniq_t = self._side(positives, Side.TAIL, n, rng)
        batch = NegativeBatch(positives, heads, tails, None, None, np.stack([fb_h, fb_t], axis=1))
        scores = _negative_scores(state, batch)
        p_h = self_adversarial_weights(scores[:, :n], temperature)
        p_t = self_adversarial_weights(scores[:, n:], temperature)
        w_h = np.where(uniq_h[:, None], p_h, 1.0 - p_h)
        w_t = np.where(uniq_t[:, None], p_t, 1.0 - p_t)
        batch.probs = np.concatenate([p_h, p_t], axis=1)
        batch.weights = np.concatenate([w_h, w_t], axis=1)
        return batch


def cgns_sample(kg, store, cmap, profiles, positive, n: int, state: ModelState,
                temperature: float = 1.0, rng=None, filter_known: bool = True) -> list[NegativeSample]:
    """``n`` head and ``n`` tail corruptions of one positive, CGNS-weighted."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    sampler = CGNSSampler(kg, store, cmap, profiles, filter_known)
    return sampler.sample_batch([positive], n, state, temperature, rng).samples(0)


def uniform_sample(kg, positive, n: int, rng=None) -> list[NegativeSample]:
    if kg.n_entities < 2:
        raise ValueError("uniform sampling needs at least 2 entities")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return UniformSampler(kg).sample_batch([positive], n, rng=rng).samples(0)
