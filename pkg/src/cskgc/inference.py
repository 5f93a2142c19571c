"""Coarse-to-fine entity prediction and filtered-ranking evaluation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .commonsense import CommonSenseStore, head_concepts, tail_concepts
from .kgdata import ConceptMap, KnowledgeGraph, profile_relations
from .negsampling import Side
from .scorers import Mode, ModelState, candidate_scores

HITS_AT = (1, 3, 10)


@dataclass(frozen=True)
class Query:
    anchor: int
    relation: int
    missing_side: Side

    def __post_init__(self):
        object.__setattr__(self, "missing_side", Side(self.missing_side))

    @classmethod
    def tail(cls, head: int, relation: int) -> "Query":
        return cls(head, relation, Side.TAIL)

    @classmethod
    def head(cls, tail: int, relation: int) -> "Query":
        return cls(tail, relation, Side.HEAD)

    @property
    def known_head(self) -> int | None:
        return self.anchor if self.missing_side is Side.TAIL else None

    @property
    def known_tail(self) -> int | None:
        return self.anchor if self.missing_side is Side.HEAD else None


@dataclass
class RankingResult:
    query: Query
    gold: int | None
    filtered_rank: int | None
    in_concept_pool: bool
    pool_size: int
    top_k: list = field(default_factory=list)
    fallback: bool = False


@dataclass
class EvalConfig:
    """How candidates are scored and filtered.

    ``coarse`` turns on the concept pool (needs ``store`` and ``cmap``);
    ``alpha1`` adds the common-sense score in ICSE mode; ``filter_splits`` is
    ``"all"`` (train, valid and test) or ``"train"``.
    """

    mode: Mode = Mode.ECSE
    coarse: bool = False
    store: CommonSenseStore | None = None
    cmap: ConceptMap | None = None
    alpha1: float | None = None
    filter_splits: str = "all"
    top_k: int = 10

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.coarse and (self.store is None or self.cmap is None):
            raise ValueError("coarse filtering needs a common-sense store and a concept map")
        if self.filter_splits not in ("all", "train"):
            raise ValueError(f"filter_splits must be 'all' or 'train', got {self.filter_splits!r}")

    @classmethod
    def for_mode(cls, mode, alpha1=None, store=None, cmap=None, **kw) -> "EvalConfig":
        """ECSE ranks coarse-to-fine when concepts are available; ICSE uses the dual score."""
        mode = Mode(mode)
        if mode is Mode.ECSE:
            return cls(mode, coarse=store is not None and cmap is not None, store=store, cmap=cmap, **kw)
        return cls(mode, alpha1=alpha1, **kw)


@dataclass
class MetricsReport:
    mr: float
    mrr: float
    hits: dict
    n: int
    breakdown: dict = field(default_factory=dict)
    ranks: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "mr": self.mr,
            "mrr": self.mrr,
            "hits": {str(k): v for k, v in self.hits.items()},
            "breakdown": self.breakdown,
            "n": self.n,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        rows = [("MR", f"{self.mr:.4f}"), ("MRR", f"{self.mrr:.4f}")]
        rows += [(f"Hits@{k}", f"{v:.4f}") for k, v in self.hits.items()]
        rows.append(("N", str(self.n)))
        width = max(len(a) for a, _ in rows)
        lines = [f"{a:<{width}}  {b:>10}" for a, b in rows]
        if self.breakdown:
            cats = sorted({c for per in self.breakdown.values() for c in per})
            lines.append("")
            lines.append(f"{'Hits@10':<8}" + "".join(f"{c:>10}" for c in cats))
            for side, per in sorted(self.breakdown.items()):
                cells = "".join(f"{per[c]:>10.4f}" if c in per else f"{'-':>10}" for c in cats)
                lines.append(f"{side:<8}{cells}")
        return "\n".join(lines)


def metrics_from_ranks(ranks) -> MetricsReport:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("no ranks to summarise")
    if np.any(ranks < 1):
        raise ValueError("ranks must be >= 1")
    return MetricsReport(
        mr=float(ranks.mean()),
        mrr=float(np.mean(1.0 / ranks)),
        hits={k: float(np.mean(ranks <= k)) for k in HITS_AT},
        n=int(ranks.size),
        ranks=ranks.astype(np.int64),
    )


def _pool_ids(query: Query, store: CommonSenseStore, cmap: ConceptMap) -> np.ndarray:
    concepts = set(cmap[query.anchor])
    if query.missing_side is Side.TAIL:
        wanted = tail_concepts(store, concepts, query.relation)
    else:
        wanted = head_concepts(store, concepts, query.relation)
    return cmap.entities_with(wanted)


def coarse_filter(query: Query, store: CommonSenseStore, cmap: ConceptMap) -> tuple[frozenset, bool]:
    """Entities carrying a concept the common sense allows on the missing side.

    Returns ``(pool, fallback)``; an empty pool falls back to every entity.
    """
    ids = _pool_ids(query, store, cmap)
    if ids.size == 0:
        return frozenset(range(len(cmap.entity_concepts))), True
    return frozenset(ids.tolist()), False


def _order_keys(scores: np.ndarray, in_pool: np.ndarray):
    """Sort order: in-pool first, then descending score, then ascending id."""
    ids = np.arange(scores.size)
    return np.lexsort((ids, -scores, ~in_pool))


def rank_candidates(
    state: ModelState,
    query: Query,
    pool,
    kg: KnowledgeGraph,
    alpha1: float | None = None,
    gold: int | None = None,
    k: int = 10,
    filter_splits: str = "all",
) -> RankingResult:
    """Rank every entity for ``query`` with the two-tier rule.

    With ``gold`` given, candidates forming known triples (other than the
    gold) are filtered out and ``filtered_rank`` is the gold's 1-based rank.
    ``pool`` may be ``None`` (every entity is in the pool).
    """
    n = state.n_entities
    if not 0 <= query.anchor < n or not 0 <= query.relation < state.n_relations:
        raise IndexError(f"query ids out of range: {query}")
    if gold is not None and not 0 <= gold < n:
        raise IndexError(f"gold entity {gold} out of range")
    scores = candidate_scores(state, query.anchor, query.relation, query.missing_side.value, alpha1)
    in_pool = np.ones(n, dtype=bool)
    if pool is not None:
        in_pool[:] = False
        ids = np.fromiter(pool, dtype=np.int64) if not isinstance(pool, np.ndarray) else pool
        in_pool[ids] = True
    keep = np.ones(n, dtype=bool)
    rank = None
    if gold is not None:
        if query.missing_side is Side.TAIL:
            known = kg.known_tails(query.anchor, query.relation, filter_splits)
        else:
            known = kg.known_heads(query.anchor, query.relation, filter_splits)
        if known:
            keep[np.fromiter(known, dtype=np.int64)] = False
        keep[gold] = True
        g_pool, g_score = in_pool[gold], scores[gold]
        ids = np.arange(n)
        better = np.where(in_pool == g_pool,
                          (scores > g_score) | ((scores == g_score) & (ids < gold)),
                          in_pool & ~g_pool)
        rank = int(np.count_nonzero(better & keep)) + 1
    order = _order_keys(scores, in_pool)
    order = order[keep[order]][:max(k, 0)]
    top = [(int(e), float(scores[e])) for e in order]
    return RankingResult(query, gold, rank, bool(in_pool[gold]) if gold is not None else False,
                         int(in_pool.sum()), top)


def _pool_for(query: Query, config: EvalConfig, cache: dict):
    if not config.coarse:
        return None, False
    key = (tuple(config.cmap[query.anchor]), query.relation, query.missing_side)
    if key not in cache:
        ids = _pool_ids(query, config.store, config.cmap)
        cache[key] = (None, True) if ids.size == 0 else (ids, False)
    return cache[key]


def rank_split(state: ModelState, kg: KnowledgeGraph, split: str, config: EvalConfig) -> list[RankingResult]:
    """Head and tail queries for every triple of ``split``, in triple order (head query first)."""
    triples = kg.split(split.lower())
    if len(triples) == 0:
        raise ValueError(f"split {split!r} is empty")
    alpha1 = config.alpha1 if config.mode is Mode.ICSE else None
    cache: dict = {}
    out = []
    for h, r, t in triples.tolist():
        for query, gold in ((Query.head(t, r), h), (Query.tail(h, r), t)):
            pool, fallback = _pool_for(query, config, cache)
            res = rank_candidates(state, query, pool, kg, alpha1, gold, config.top_k, config.filter_splits)
            res.fallback = fallback
            out.append(res)
    return out


def evaluate(state: ModelState, kg: KnowledgeGraph, split: str, config: EvalConfig | None = None,
             results: list | None = None) -> MetricsReport:
    """Filtered MR, MRR and Hits@K, with Hits@10 per (missing side, relation category).

    Pass a list as ``results`` to receive the individual :class:`RankingResult` records.
    """
    config = config or EvalConfig()
    ranked = rank_split(state, kg, split, config)
    if results is not None:
        results.extend(ranked)
    report = metrics_from_ranks([r.filtered_rank for r in ranked])
    profiles = profile_relations(kg)
    groups: dict = {}
    for res in ranked:
        p = profiles.get(res.query.relation)
        cat = p.category.value if p is not None else "UNSEEN"
        groups.setdefault(res.query.missing_side.value, {}).setdefault(cat, []).append(res.filtered_rank)
    report.breakdown = {side: {cat: float(np.mean(np.asarray(rs) <= 10)) for cat, rs in sorted(per.items())}
                        for side, per in sorted(groups.items())}
    return report


def predict(
    state: ModelState,
    kg: KnowledgeGraph,
    relation: str,
    head: str | None = None,
    tail: str | None = None,
    k: int = 10,
    config: EvalConfig | None = None,
) -> list[tuple[str, float, list[str]]]:
    """Top-``k`` answers for ``(head, relation, ?)`` or ``(?, relation, tail)`` given by label.

    Each answer is ``(entity label, score, concept labels)``; concept labels
    are empty without a concept map.
    """
    config = config or EvalConfig()
    if (head is None) == (tail is None):
        raise ValueError("give exactly one of head or tail")
    unknown = [x for x, vocab in ((head, kg.entities), (tail, kg.entities), (relation, kg.relations))
               if x is not None and x not in vocab]
    if unknown:
        raise KeyError(f"unknown label(s): {', '.join(unknown)}")
    r = kg.relations.id_of(relation)
    query = Query.tail(kg.entities.id_of(head), r) if head is not None else Query.head(kg.entities.id_of(tail), r)
    pool, _ = _pool_for(query, config, {})
    alpha1 = config.alpha1 if config.mode is Mode.ICSE else None
    res = rank_candidates(state, query, pool, kg, alpha1, None, k)
    cmap = config.cmap
    return [(kg.entities[e], s, cmap.labels_of(e) if cmap is not None else []) for e, s in res.top_k]
