"""Losses, optimizers and the training loop for both ECSE and ICSE modes."""

from __future__ import annotations

import dataclasses
import enum
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit, log_expit

from .commonsense import CommonSenseStore
from .kgdata import ConceptMap, KnowledgeGraph, profile_relations
from .negsampling import CGNSSampler, NegativeBatch, SelfAdversarialSampler, UniformSampler
from .scorers import Mode, ModelKind, ModelState, accumulate, cs_forward, fact_forward, init_state, sim_forward

logger = logging.getLogger(__name__)


class LossKind(str, enum.Enum):
    MARGIN = "MARGIN"
    LOGSIGMOID = "LOGSIGMOID"


class SamplerKind(str, enum.Enum):
    CGNS = "CGNS"
    UNIFORM = "UNIFORM"
    SELF_ADVERSARIAL = "SELF_ADVERSARIAL"


class OptimizerKind(str, enum.Enum):
    SGD = "SGD"
    ADAM = "ADAM"


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    mode: Mode = Mode.ECSE
    model_kind: ModelKind = ModelKind.TRANSLATION
    d_e: int = 32
    d_c: int = 8
    margin: float = 9.0
    margin_f: float = 9.0
    margin_cs: float = 9.0
    margin_sim: float = 9.0
    alpha1: float = 0.5
    alpha2: float = 0.1
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 128
    n_negatives: int = 2
    temperature: float = 1.0
    loss_kind: LossKind = LossKind.LOGSIGMOID
    # None: CGNS for ECSE, SELF_ADVERSARIAL for ICSE
    sampler_kind: SamplerKind | None = None
    filter_known: bool = True
    optimizer: OptimizerKind = OptimizerKind.ADAM
    seed: int = 0
    eval_every: int = 0
    keep_best: bool = False

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.model_kind = ModelKind(self.model_kind)
        self.loss_kind = LossKind(self.loss_kind)
        self.optimizer = OptimizerKind(self.optimizer)
        if self.sampler_kind is None:
            self.sampler_kind = SamplerKind.CGNS if self.mode is Mode.ECSE else SamplerKind.SELF_ADVERSARIAL
        self.sampler_kind = SamplerKind(self.sampler_kind)

    def validate(self) -> "TrainConfig":
        problems = []
        for name in ("margin", "margin_f", "margin_cs", "margin_sim", "learning_rate", "temperature"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0")
        for name in ("alpha1", "alpha2"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        for name in ("d_e", "batch_size", "n_negatives"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.epochs < 0:
            problems.append("epochs must be >= 0")
        if self.mode is Mode.ICSE:
            if not 0 < self.d_c < self.d_e:
                problems.append("ICSE requires 0 < d_c < d_e")
            if self.sampler_kind is SamplerKind.CGNS:
                problems.append("ICSE draws self-adversarial negatives; sampler_kind CGNS is ECSE-only")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    def to_dict(self) -> dict:
        return {k: (v.value if isinstance(v, enum.Enum) else v) for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config field(s): {sorted(unknown)}")
        return cls(**data)


@dataclass
class TrainReport:
    epoch_loss: list = field(default_factory=list)
    loss_f: list = field(default_factory=list)
    loss_cs: list = field(default_factory=list)
    loss_sim: list = field(default_factory=list)
    valid_mrr: list = field(default_factory=list)
    sim_skipped: int = 0
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# -- losses ------------------------------------------------------------------

def _margin_terms(pos, neg, w, gamma):
    """Per-positive hinge sum and its derivatives w.r.t. pos and neg scores."""
    a = gamma - pos[:, None] + w * neg
    active = a > 0
    loss = np.sum(np.where(active, a, 0.0), axis=1)
    return loss, -active.sum(axis=1).astype(float), w * active


def _logsigmoid_terms(pos, neg, w, gamma):
    loss = -log_expit(gamma + pos) - np.sum(w * log_expit(-neg - gamma), axis=1)
    return loss, -expit(-gamma - pos), w * expit(neg + gamma)


def _split_negatives(neg_samples):
    arr = np.asarray(neg_samples, dtype=np.float64).reshape(-1, 2)
    return arr[None, :, 0], arr[None, :, 1]


def margin_loss(pos_score: float, neg_samples: Sequence[tuple[float, float]], gamma: float) -> float:
    """Sum over negatives of ``max(0, gamma - E(pos) + w E(neg))``."""
    neg, w = _split_negatives(neg_samples)
    return float(_margin_terms(np.array([pos_score], float), neg, w, gamma)[0][0])


def logsigmoid_loss(pos_score: float, neg_samples: Sequence[tuple[float, float]], gamma: float) -> float:
    """``-log s(gamma + E(pos)) - sum w log s(-E(neg) - gamma)``."""
    neg, w = _split_negatives(neg_samples)
    return float(_logsigmoid_terms(np.array([pos_score], float), neg, w, gamma)[0][0])


def _icse_terms(f_pos, f_neg, w, c_pos, c_neg, s_p, s_n, has_anchor, cfg):
    """Per-positive ICSE components and derivative coefficients.

    L_f sums the logsigmoid loss over each negative (so the positive term is
    counted once per negative), L_cs the margin loss, and L_sim a single
    hinge over the (same relation, other relation) pair.
    """
    K = f_neg.shape[1]
    g1, g2, g3 = cfg.margin_f, cfg.margin_cs, cfg.margin_sim
    lf = -K * log_expit(g1 + f_pos) - np.sum(w * log_expit(-f_neg - g1), axis=1)
    d_fpos = -K * expit(-g1 - f_pos)
    d_fneg = w * expit(f_neg + g1)
    a = g2 - c_pos[:, None] + c_neg
    act = a > 0
    lcs = np.sum(np.where(act, a, 0.0), axis=1)
    d_cpos = -act.sum(axis=1).astype(float)
    d_cneg = act.astype(float)
    b = (g3 - s_p + s_n) * has_anchor
    sim_act = b > 0
    lsim = np.where(sim_act, b, 0.0)
    d_sp, d_sn = -sim_act.astype(float), sim_act.astype(float)
    return (lf, lcs, lsim), (d_fpos, d_fneg, d_cpos, d_cneg, d_sp, d_sn)


def icse_loss(state: ModelState, positive, negatives, anchor_contrast, cfg: TrainConfig):
    """Joint loss of one positive; returns ``(total, L_f, L_cs, L_sim)``.

    ``negatives`` holds ``(triple, weight)`` pairs or :class:`NegativeSample`
    records; ``anchor_contrast`` is ``(same_relation_triple, other_relation_triple)``
    or ``None`` to skip the similarity term.
    """
    trips, weights = [], []
    for item in negatives:
        if hasattr(item, "triple"):
            trips.append(tuple(item.triple))
            weights.append(item.weight)
        else:
            trips.append(tuple(item[0]))
            weights.append(item[1])
    allt = np.array([tuple(positive)] + trips, dtype=np.int64)
    f = fact_forward(state, allt[:, 0], allt[:, 1], allt[:, 2])
    c = cs_forward(state, allt[:, 0], allt[:, 1], allt[:, 2])
    if anchor_contrast is None:
        s_p = s_n = np.zeros(1)
        has = np.zeros(1)
    else:
        same, other = anchor_contrast
        s_p = sim_forward(state, positive, same)
        s_n = sim_forward(state, positive, other)
        has = np.ones(1)
    (lf, lcs, lsim), _ = _icse_terms(f[:1], f[None, 1:], np.array([weights], float),
                                     c[:1], c[None, 1:], s_p, s_n, has, cfg)
    lf, lcs, lsim = float(lf[0]), float(lcs[0]), float(lsim[0])
    return lf + cfg.alpha1 * lcs + cfg.alpha2 * lsim, lf, lcs, lsim


# -- optimizers --------------------------------------------------------------

class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, state: ModelState, grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            getattr(state, name)[...] -= self.lr * g


class Adam:
    def __init__(self, lr: float, state: ModelState, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in state.blocks().items()}
        self.v = {k: np.zeros_like(v) for k, v in state.blocks().items()}

    def step(self, state: ModelState, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for name, param in state.blocks().items():
            g = grads.get(name)
            m, v = self.m[name], self.v[name]
            m *= b1
            v *= b2
            if g is not None:
                m += (1 - b1) * g
                v += (1 - b2) * g * g
            param -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg: TrainConfig, state: ModelState):
    if cfg.optimizer is OptimizerKind.SGD:
        return SGD(cfg.learning_rate)
    return Adam(cfg.learning_rate, state)


def enforce_constraints(state: ModelState) -> None:
    """Wrap rotation phases into [-pi, pi) and re-normalise hyperplanes."""
    if state.model_kind is ModelKind.ROTATION:
        state.relation_emb[...] = np.mod(state.relation_emb + np.pi, 2 * np.pi) - np.pi
    if state.relation_hyperplane is not None:
        norms = np.linalg.norm(state.relation_hyperplane, axis=1, keepdims=True)
        state.relation_hyperplane /= np.where(norms == 0, 1.0, norms)


def _merge(total: dict, part: dict, scale: float = 1.0) -> None:
    for k, v in part.items():
        if k in total:
            total[k] += scale * v
        else:
            total[k] = scale * v


# -- per-batch objectives ----------------------------------------------------

def ecse_batch(state: ModelState, negs: NegativeBatch, cfg: TrainConfig):
    """Mean ECSE loss over the batch and its dense gradients."""
    pos = negs.positives
    B = pos.shape[0]
    allt = np.concatenate([pos, negs.triples().reshape(-1, 3)])
    scores, grads, _ = fact_forward(state, allt[:, 0], allt[:, 1], allt[:, 2], grad=True)
    p, n = scores[:B], scores[B:].reshape(B, -1)
    terms = _margin_terms if cfg.loss_kind is LossKind.MARGIN else _logsigmoid_terms
    loss, d_pos, d_neg = terms(p, n, negs.weights, cfg.margin)
    coef = np.concatenate([d_pos, d_neg.ravel()]) / B
    return float(loss.mean()), {"L": float(loss.mean())}, accumulate(state, grads, coef)


class AnchorSampler:
    """Draws, per positive, one other triple of the same relation and one of a different relation."""

    def __init__(self, kg: KnowledgeGraph):
        self.train = kg.train
        rel = kg.train[:, 1]
        self.same = {r: idx for r, idx in kg.by_relation.items()}
        self.other = {r: np.flatnonzero(rel != r) for r in kg.by_relation}

    def draw(self, idx: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        B = idx.size
        same = np.zeros((B, 3), dtype=np.int64)
        other = np.zeros((B, 3), dtype=np.int64)
        ok = np.zeros(B, dtype=bool)
        for i, j in enumerate(idx.tolist()):
            r = int(self.train[j, 1])
            pool, others = self.same[r], self.other[r]
            if pool.size < 2 or others.size == 0:
                continue
            cand = pool[pool != j]
            same[i] = self.train[cand[rng.integers(cand.size)]]
            other[i] = self.train[others[rng.integers(others.size)]]
            ok[i] = True
        return same, other, ok


def icse_batch(state: ModelState, negs: NegativeBatch, anchors, cfg: TrainConfig):
    pos = negs.positives
    B = pos.shape[0]
    allt = np.concatenate([pos, negs.triples().reshape(-1, 3)])
    f, f_grads, _ = fact_forward(state, allt[:, 0], allt[:, 1], allt[:, 2], grad=True)
    c, c_grads, _ = cs_forward(state, allt[:, 0], allt[:, 1], allt[:, 2], grad=True)
    same, other, ok = anchors
    anchor = (pos[:, 0], pos[:, 1], pos[:, 2])
    s_p, sp_grads, _ = sim_forward(state, anchor, (same[:, 0], same[:, 1], same[:, 2]), grad=True)
    s_n, sn_grads, _ = sim_forward(state, anchor, (other[:, 0], other[:, 1], other[:, 2]), grad=True)
    (lf, lcs, lsim), (d_fpos, d_fneg, d_cpos, d_cneg, d_sp, d_sn) = _icse_terms(
        f[:B], f[B:].reshape(B, -1), negs.weights, c[:B], c[B:].reshape(B, -1),
        s_p, s_n, ok.astype(float), cfg)
    grads: dict = {}
    _merge(grads, accumulate(state, f_grads, np.concatenate([d_fpos, d_fneg.ravel()]) / B))
    if cfg.alpha1 > 0:
        _merge(grads, accumulate(state, c_grads, np.concatenate([d_cpos, d_cneg.ravel()]) / B), cfg.alpha1)
    if cfg.alpha2 > 0 and ok.any():
        _merge(grads, accumulate(state, sp_grads, d_sp / B), cfg.alpha2)
        _merge(grads, accumulate(state, sn_grads, d_sn / B), cfg.alpha2)
    total = lf + cfg.alpha1 * lcs + cfg.alpha2 * lsim
    comps = {"L_f": float(lf.mean()), "L_cs": float(lcs.mean()), "L_sim": float(lsim.mean())}
    return float(total.mean()), comps, grads


# -- training loop -----------------------------------------------------------

def make_sampler(kg, cfg: TrainConfig, cmap=None, store=None):
    kind = cfg.sampler_kind
    if kind is SamplerKind.CGNS:
        if cmap is None or store is None:
            raise ValueError("CGNS sampling needs a concept map and a common-sense store")
        return CGNSSampler(kg, store, cmap, profile_relations(kg), cfg.filter_known)
    if kind is SamplerKind.UNIFORM:
        return UniformSampler(kg, cfg.filter_known)
    return SelfAdversarialSampler(kg, cfg.filter_known)


def initial_state(kg: KnowledgeGraph, cfg: TrainConfig) -> ModelState:
    """The seeded initialisation ``fit`` starts from."""
    init_seq = np.random.SeedSequence(cfg.seed).spawn(2)[0]
    return init_state(cfg.model_kind, cfg.mode, kg.n_entities, kg.n_relations, cfg.d_e,
                      cfg.d_c if cfg.mode is Mode.ICSE else None, np.random.default_rng(init_seq))


def fit(
    kg: KnowledgeGraph,
    cfg: TrainConfig,
    cmap: ConceptMap | None = None,
    store: CommonSenseStore | None = None,
    callbacks: Iterable[Callable] = (),
    eval_config=None,
    state: ModelState | None = None,
) -> tuple[ModelState, TrainReport]:
    """Train a model state on ``kg.train``.

    Each callback is called as ``cb(epoch, state, report)`` after every epoch.
    With ``cfg.eval_every > 0`` the validation MRR is recorded every that many
    epochs (``eval_config`` selects the inference mode); ``cfg.keep_best``
    returns the state with the best validation MRR. A given ``state`` is
    trained in place of a fresh initialisation (and is not modified).
    """
    cfg.validate()
    state = initial_state(kg, cfg) if state is None else state.copy()
    sample_seq = np.random.SeedSequence(cfg.seed).spawn(2)[1]
    report = TrainReport()
    if cfg.epochs == 0:
        return state, report
    if len(kg.train) == 0:
        raise ValueError("training split is empty")

    rng = np.random.default_rng(sample_seq)
    sampler = make_sampler(kg, cfg, cmap, store)
    optimizer = make_optimizer(cfg, state)
    anchor_sampler = AnchorSampler(kg) if cfg.mode is Mode.ICSE else None
    best = (-np.inf, None)
    start = time.perf_counter()
    n_train = len(kg.train)

    for epoch in range(cfg.epochs):
        order = rng.permutation(n_train)
        sums: dict[str, float] = {}
        total = 0.0
        for b, lo in enumerate(range(0, n_train, cfg.batch_size)):
            idx = order[lo:lo + cfg.batch_size]
            pos = kg.train[idx]
            negs = sampler.sample_batch(pos, cfg.n_negatives, state, cfg.temperature, rng)
            if cfg.mode is Mode.ECSE:
                loss, comps, grads = ecse_batch(state, negs, cfg)
            else:
                anchors = anchor_sampler.draw(idx, rng)
                report.sim_skipped += int((~anchors[2]).sum())
                loss, comps, grads = icse_batch(state, negs, anchors, cfg)
            for name, value in comps.items():
                if not np.isfinite(value):
                    raise TrainingDivergedError(
                        f"non-finite {name} loss at epoch {epoch} batch {b}")
                sums[name] = sums.get(name, 0.0) + value * len(idx)
            total += loss * len(idx)
            optimizer.step(state, grads)
            enforce_constraints(state)

        report.epoch_loss.append(total / n_train)
        if cfg.mode is Mode.ICSE:
            report.loss_f.append(sums["L_f"] / n_train)
            report.loss_cs.append(sums["L_cs"] / n_train)
            report.loss_sim.append(sums["L_sim"] / n_train)
        if cfg.eval_every and (epoch + 1) % cfg.eval_every == 0 and len(kg.valid):
            from .inference import EvalConfig, evaluate

            ec = eval_config or EvalConfig.for_mode(cfg.mode, alpha1=cfg.alpha1, store=store, cmap=cmap)
            mrr = evaluate(state, kg, "valid", ec).mrr
            report.valid_mrr.append(mrr)
            if cfg.keep_best and mrr > best[0]:
                best = (mrr, state.copy())
        for cb in callbacks:
            cb(epoch, state, report)

    report.wall_time = time.perf_counter() - start
    if cfg.keep_best and best[1] is not None:
        state = best[1]
    return state, report
