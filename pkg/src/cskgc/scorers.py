"""Score kernels with analytic gradients.

Three model kinds are supported at two levels:

* fact level: translation ``-||h + r - t||``, rotation ``-||h o r - t||`` and
  tensor decomposition ``Re(<h, r, conj(t)>)``; in ICSE mode the rotation model
  first projects ``h`` and ``t`` onto a relation-specific hyperplane.
* concept level (ICSE only): the same three forms applied to relation-aware
  concept embeddings ``M_r c_e`` (translation) or ``p_r o c_e`` (complex kinds).

Complex vectors are stored as interleaved ``(re, im)`` float64 pairs, so a row
of width ``2d`` views as ``d`` complex128 values without copying.

Batch kernels return gradients as a list of ``(block, ids, rows)`` triples;
:func:`accumulate` scatters them into dense arrays shaped like the parameters.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

BLOCKS = (
    "entity_emb",
    "relation_emb",
    "relation_hyperplane",
    "meta_concept_emb",
    "concept_relation_emb",
    "concept_projection",
)


class ModelKind(str, enum.Enum):
    TRANSLATION = "TRANSLATION"
    ROTATION = "ROTATION"
    TENSOR_DECOMP = "TENSOR_DECOMP"


class Mode(str, enum.Enum):
    ECSE = "ECSE"
    ICSE = "ICSE"


@dataclass(eq=False)
class ModelState:
    """Fact-level parameters plus the ICSE concept-level blocks.

    ``relation_emb`` holds phase angles for the rotation kind (unit modulus by
    construction). ``relation_hyperplane`` exists only for ICSE rotation.
    ``concept_projection`` is ``(n_rel, d_c, d_c)`` for translation and
    ``(n_rel, 2 d_c)`` complex for the other kinds.
    """

    model_kind: ModelKind
    mode: Mode
    d_e: int
    d_c: int | None
    entity_emb: np.ndarray
    relation_emb: np.ndarray
    relation_hyperplane: np.ndarray | None = None
    meta_concept_emb: np.ndarray | None = None
    concept_relation_emb: np.ndarray | None = None
    concept_projection: np.ndarray | None = None

    def __post_init__(self):
        self.model_kind = ModelKind(self.model_kind)
        self.mode = Mode(self.mode)

    @property
    def is_complex(self) -> bool:
        return self.model_kind is not ModelKind.TRANSLATION

    @property
    def n_entities(self) -> int:
        return self.entity_emb.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relation_emb.shape[0]

    def blocks(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in BLOCKS if getattr(self, name) is not None}

    def copy(self) -> "ModelState":
        kw = {name: (None if a is None else a.copy()) for name, a in
              ((n, getattr(self, n)) for n in BLOCKS)}
        return ModelState(self.model_kind, self.mode, self.d_e, self.d_c, **kw)


def init_state(
    model_kind: ModelKind | str,
    mode: Mode | str,
    n_entities: int,
    n_relations: int,
    d_e: int,
    d_c: int | None = None,
    rng: np.random.Generator | int | None = None,
) -> ModelState:
    kind, mode = ModelKind(model_kind), Mode(mode)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    cplx = kind is not ModelKind.TRANSLATION
    width = 2 * d_e if cplx else d_e
    bound = 6.0 / np.sqrt(d_e)
    ent = rng.uniform(-bound, bound, (n_entities, width))
    if kind is ModelKind.ROTATION:
        rel = rng.uniform(-np.pi, np.pi, (n_relations, d_e))
    else:
        rel = rng.uniform(-bound, bound, (n_relations, width))
    state = ModelState(kind, mode, d_e, d_c, ent, rel)
    if mode is Mode.ICSE:
        if d_c is None or not 0 < d_c < d_e:
            raise ValueError(f"ICSE requires 0 < d_c < d_e, got d_c={d_c}, d_e={d_e}")
        cwidth = 2 * d_c if cplx else d_c
        cbound = 6.0 / np.sqrt(d_c)
        state.meta_concept_emb = rng.uniform(-cbound, cbound, (n_entities, cwidth))
        state.concept_relation_emb = rng.uniform(-cbound, cbound, (n_relations, cwidth))
        if cplx:
            proj = np.zeros((n_relations, d_c, 2))
            proj[..., 0] = 1.0
            proj = proj.reshape(n_relations, cwidth) + 0.01 * rng.standard_normal((n_relations, cwidth))
        else:
            proj = np.eye(d_c)[None] + 0.01 * rng.standard_normal((n_relations, d_c, d_c))
        state.concept_projection = proj
        if kind is ModelKind.ROTATION:
            w = rng.standard_normal((n_relations, width))
            state.relation_hyperplane = w / np.linalg.norm(w, axis=1, keepdims=True)
    return state


# -- helpers -----------------------------------------------------------------

def _c(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64).view(np.complex128)


def _r(z: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(z, dtype=np.complex128).view(np.float64)


def _ids(*arrays) -> list[np.ndarray]:
    arrays = [np.atleast_1d(np.asarray(a, dtype=np.int64)) for a in arrays]
    return list(np.broadcast_arrays(*arrays))


def _neg_unit(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(-||x||, d(-||x||)/dx, degenerate)`` along the last axis."""
    n = np.sqrt(np.sum(np.abs(x) ** 2, axis=-1))
    degenerate = n == 0
    safe = np.where(degenerate, 1.0, n)[..., None]
    u = -x / safe
    u[degenerate] = 0
    return -n, u, degenerate


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=-1, keepdims=True)


def _check_range(state: ModelState, ents=(), rels=()) -> None:
    for e in ents:
        e = np.asarray(e)
        if e.size and (e.min() < 0 or e.max() >= state.n_entities):
            raise IndexError(f"entity id out of range [0, {state.n_entities})")
    for r in rels:
        r = np.asarray(r)
        if r.size and (r.min() < 0 or r.max() >= state.n_relations):
            raise IndexError(f"relation id out of range [0, {state.n_relations})")


def _require_icse(state: ModelState) -> None:
    if state.mode is not Mode.ICSE:
        raise ValueError("concept-level scores need an ICSE model state")


# -- fact level --------------------------------------------------------------

def fact_forward(state: ModelState, h, r, t, grad: bool = False):
    """Batched fact scores.

    Returns ``scores`` or, with ``grad=True``, ``(scores, grads, degenerate)``
    where ``grads`` lists per-row derivatives of each score.
    """
    h, r, t = _ids(h, r, t)
    H, T = state.entity_emb[h], state.entity_emb[t]
    kind = state.model_kind
    degenerate = np.zeros(h.shape, dtype=bool)

    if kind is ModelKind.TRANSLATION:
        score, u, degenerate = _neg_unit(H + state.relation_emb[r] - T)
        if not grad:
            return score
        grads = [("entity_emb", h, u), ("relation_emb", r, u), ("entity_emb", t, -u)]

    elif kind is ModelKind.ROTATION:
        rot = np.exp(1j * state.relation_emb[r])
        project = state.mode is Mode.ICSE
        if project:
            W = state.relation_hyperplane[r]
            Hp, Tp = H - _dot(W, H) * W, T - _dot(W, T) * W
        else:
            Hp, Tp = H, T
        hr = _c(Hp) * rot
        score, U, degenerate = _neg_unit(hr - _c(Tp))
        if not grad:
            return score
        g_hp = _r(np.conj(rot) * U)
        g_tp = -_r(U)
        g_phase = np.real(np.conj(U) * 1j * hr)
        if project:
            g_h = g_hp - _dot(W, g_hp) * W
            g_t = g_tp - _dot(W, g_tp) * W
            g_w = -(_dot(W, H) * g_hp + _dot(g_hp, W) * H + _dot(W, T) * g_tp + _dot(g_tp, W) * T)
            grads = [("entity_emb", h, g_h), ("entity_emb", t, g_t),
                     ("relation_emb", r, g_phase), ("relation_hyperplane", r, g_w)]
        else:
            grads = [("entity_emb", h, g_hp), ("entity_emb", t, g_tp), ("relation_emb", r, g_phase)]

    else:
        hc, rc, tc = _c(H), _c(state.relation_emb[r]), _c(T)
        score = np.real(np.sum(hc * rc * np.conj(tc), axis=-1))
        if not grad:
            return score
        grads = [("entity_emb", h, _r(np.conj(rc) * tc)),
                 ("relation_emb", r, _r(np.conj(hc) * tc)),
                 ("entity_emb", t, _r(hc * rc))]
    return score, grads, degenerate


# -- concept level -----------------------------------------------------------

def project_forward(state: ModelState, e, r) -> np.ndarray:
    """Relation-aware concept embeddings ``c_{e,r}`` (real layout)."""
    e, r = _ids(e, r)
    C = state.meta_concept_emb[e]
    if state.is_complex:
        return _r(_c(state.concept_projection[r]) * _c(C))
    return np.einsum("bij,bj->bi", state.concept_projection[r], C)


def project_backward(state: ModelState, e, r, g: np.ndarray) -> list:
    """Pull ``dE/dc_{e,r}`` back to the meta-concept and projection blocks."""
    e, r = _ids(e, r)
    C = state.meta_concept_emb[e]
    P = state.concept_projection[r]
    if state.is_complex:
        G = _c(g)
        return [("meta_concept_emb", e, _r(np.conj(_c(P)) * G)),
                ("concept_projection", r, _r(np.conj(_c(C)) * G))]
    return [("meta_concept_emb", e, np.einsum("bij,bi->bj", P, g)),
            ("concept_projection", r, np.einsum("bi,bj->bij", g, C))]


def cs_forward(state: ModelState, h, r, t, grad: bool = False):
    h, r, t = _ids(h, r, t)
    A, B = project_forward(state, h, r), project_forward(state, t, r)
    CR = state.concept_relation_emb[r]
    kind = state.model_kind
    degenerate = np.zeros(h.shape, dtype=bool)

    if kind is ModelKind.TRANSLATION:
        score, u, degenerate = _neg_unit(A + CR - B)
        if not grad:
            return score
        g_a, g_cr, g_b = u, u, -u
    elif kind is ModelKind.ROTATION:
        a, cr = _c(A), _c(CR)
        score, U, degenerate = _neg_unit(a * cr - _c(B))
        if not grad:
            return score
        g_a, g_cr, g_b = _r(np.conj(cr) * U), _r(np.conj(a) * U), -_r(U)
    else:
        a, cr, b = _c(A), _c(CR), _c(B)
        score = np.real(np.sum(a * cr * np.conj(b), axis=-1))
        if not grad:
            return score
        g_a, g_cr, g_b = _r(np.conj(cr) * b), _r(np.conj(a) * b), _r(a * cr)

    grads = [("concept_relation_emb", r, g_cr)]
    grads += project_backward(state, h, r, g_a)
    grads += project_backward(state, t, r, g_b)
    return score, grads, degenerate


def sim_forward(state: ModelState, first, second, grad: bool = False):
    """Concept similarity of two triple batches: ``-0.5 (||dA|| + ||dB||)``."""
    h1, r1, t1, h2, r2, t2 = _ids(*first, *second)
    A1, A2 = project_forward(state, h1, r1), project_forward(state, h2, r2)
    B1, B2 = project_forward(state, t1, r1), project_forward(state, t2, r2)
    sa, ua, da = _neg_unit(A1 - A2)
    sb, ub, db = _neg_unit(B1 - B2)
    score = 0.5 * (sa + sb)
    if not grad:
        return score
    ua, ub = 0.5 * ua, 0.5 * ub
    grads = (project_backward(state, h1, r1, ua) + project_backward(state, h2, r2, -ua)
             + project_backward(state, t1, r1, ub) + project_backward(state, t2, r2, -ub))
    return score, grads, da | db


def accumulate(state: ModelState, grads: list, coef: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Scatter-add ``coef[i] * row_i`` into zero arrays shaped like the parameters."""
    out: dict[str, np.ndarray] = {}
    for block, ids, rows in grads:
        if block not in out:
            out[block] = np.zeros_like(getattr(state, block))
        if coef is not None:
            rows = rows * coef.reshape((-1,) + (1,) * (rows.ndim - 1))
        np.add.at(out[block], ids, rows)
    return out


# -- single-triple API -------------------------------------------------------

@dataclass
class Gradient:
    """Full-shape gradient for every parameter block of a state."""

    blocks: dict[str, np.ndarray] = field(default_factory=dict)
    degenerate: bool = False

    def __getitem__(self, name: str) -> np.ndarray:
        return self.blocks[name]


def _full_gradient(state: ModelState, grads: list, degenerate) -> Gradient:
    dense = accumulate(state, grads)
    blocks = {name: dense.get(name, np.zeros_like(arr)) for name, arr in state.blocks().items()}
    return Gradient(blocks, bool(np.any(degenerate)))


def fact_score(state: ModelState, h: int, r: int, t: int) -> float:
    _check_range(state, (h, t), (r,))
    return float(fact_forward(state, h, r, t)[0])


def fact_grad(state: ModelState, h: int, r: int, t: int) -> Gradient:
    """Gradient of :func:`fact_score`; ``degenerate`` flags a zero-norm point."""
    _check_range(state, (h, t), (r,))
    _, grads, deg = fact_forward(state, h, r, t, grad=True)
    return _full_gradient(state, grads, deg)


def project_concept(state: ModelState, e: int, r: int) -> np.ndarray:
    _require_icse(state)
    _check_range(state, (e,), (r,))
    return project_forward(state, e, r)[0]


def cs_score(state: ModelState, h: int, r: int, t: int) -> float:
    _require_icse(state)
    _check_range(state, (h, t), (r,))
    return float(cs_forward(state, h, r, t)[0])


def cs_grad(state: ModelState, h: int, r: int, t: int) -> Gradient:
    _require_icse(state)
    _check_range(state, (h, t), (r,))
    _, grads, deg = cs_forward(state, h, r, t, grad=True)
    return _full_gradient(state, grads, deg)


def sim_score(state: ModelState, t1, t2) -> float:
    _require_icse(state)
    _check_range(state, (t1[0], t1[2], t2[0], t2[2]), (t1[1], t2[1]))
    return float(sim_forward(state, t1, t2)[0])


def sim_grad(state: ModelState, t1, t2) -> Gradient:
    _require_icse(state)
    _check_range(state, (t1[0], t1[2], t2[0], t2[2]), (t1[1], t2[1]))
    _, grads, deg = sim_forward(state, t1, t2, grad=True)
    return _full_gradient(state, grads, deg)


def dual_score(state: ModelState, h: int, r: int, t: int, alpha1: float) -> float:
    """Fact score plus ``alpha1`` times the concept score."""
    return fact_score(state, h, r, t) + alpha1 * cs_score(state, h, r, t)


def candidate_scores(state: ModelState, anchor: int, r: int, side: str,
                     alpha1: float | None = None, candidates=None) -> np.ndarray:
    """Scores of ``(anchor, r, e)`` (side ``"TAIL"``) or ``(e, r, anchor)`` for every candidate ``e``."""
    if candidates is None:
        candidates = np.arange(state.n_entities)
    if side == "TAIL":
        h, t = anchor, candidates
    else:
        h, t = candidates, anchor
    scores = fact_forward(state, h, r, t)
    if alpha1 is not None and state.mode is Mode.ICSE and alpha1 != 0:
        scores = scores + alpha1 * cs_forward(state, h, r, t)
    return scores
