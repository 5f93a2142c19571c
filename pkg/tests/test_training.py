import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cskgc.checkpoint import (
    BadMagicError,
    ChecksumError,
    TruncatedCheckpointError,
    VersionMismatchError,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from cskgc.commonsense import generate
from cskgc.kgdata import ConceptMap, KnowledgeGraph
from cskgc.negsampling import NegativeBatch
from cskgc.scorers import ModelKind, init_state, sim_score
from cskgc.training import (
    TrainConfig,
    TrainingDivergedError,
    ecse_batch,
    fit,
    icse_batch,
    icse_loss,
    initial_state,
    logsigmoid_loss,
    margin_loss,
)

from conftest import random_kg
from fdcheck import finite_difference, relative_error


def test_margin_examples():
    assert margin_loss(-1.0, [(-1.0, 1.0)], 1.0) == 1.0
    assert margin_loss(5.0, [(0.0, 1.0), (1.0, 0.5)], 1.0) == 0.0
    assert margin_loss(0.0, [(3.0, 0.0), (-7.0, 0.0)], 1.0) == 2.0


def test_logsigmoid_examples():
    assert logsigmoid_loss(0.0, [(0.0, 1.0)], 0.0) == pytest.approx(2 * math.log(2), abs=1e-12)
    assert logsigmoid_loss(50.0, [(-50.0, 1.0)], 1.0) < 1e-9
    only_pos = logsigmoid_loss(0.3, [], 1.0)
    assert logsigmoid_loss(0.3, [(4.0, 0.0)], 1.0) == only_pos


scores = st.floats(-20, 20)
negs = st.lists(st.tuples(scores, st.floats(0, 1)), min_size=1, max_size=5)


@settings(max_examples=100, deadline=None)
@given(scores, negs, st.floats(0.1, 10))
def test_losses_nonnegative(pos, neg, gamma):
    assert margin_loss(pos, neg, gamma) >= 0
    assert logsigmoid_loss(pos, neg, gamma) > 0


def _batch(kg, n, rng):
    pos = kg.train
    B = len(pos)
    heads = rng.integers(kg.n_entities, size=(B, n))
    tails = rng.integers(kg.n_entities, size=(B, n))
    w = rng.uniform(0, 1, (B, 2 * n))
    return NegativeBatch(pos, heads, tails, w, w.copy(), np.zeros((B, 2), bool))


def _anchors(kg, rng):
    B = len(kg.train)
    same = kg.train[rng.integers(B, size=B)]
    other = kg.train[rng.integers(B, size=B)]
    ok = rng.uniform(size=B) < 0.7
    return same, other, ok


@pytest.mark.parametrize("kind", list(ModelKind))
@pytest.mark.parametrize("loss_kind", ["MARGIN", "LOGSIGMOID"])
def test_ecse_batch_gradient(kind, loss_kind):
    rng = np.random.default_rng(5)
    kg, _ = random_kg(rng, n_entities=6, n_relations=2, n_triples=8)
    cfg = TrainConfig(model_kind=kind, loss_kind=loss_kind, margin=3.0)
    state = init_state(kind, "ECSE", kg.n_entities, kg.n_relations, 3, rng=rng)
    negs = _batch(kg, 2, rng)
    _, _, grads = ecse_batch(state, negs, cfg)
    numeric = finite_difference(state, lambda: ecse_batch(state, negs, cfg)[0])
    for name, g in numeric.items():
        assert relative_error(grads.get(name, np.zeros_like(g)), g) < 1e-5, name


@pytest.mark.parametrize("kind", list(ModelKind))
def test_icse_batch_gradient(kind):
    rng = np.random.default_rng(7)
    kg, _ = random_kg(rng, n_entities=6, n_relations=2, n_triples=6)
    cfg = TrainConfig(mode="ICSE", model_kind=kind, d_e=3, d_c=2, margin_f=2.0, margin_cs=8.0,
                      margin_sim=8.0, alpha1=0.7, alpha2=0.4)
    state = init_state(kind, "ICSE", kg.n_entities, kg.n_relations, 3, 2, rng=rng)
    negs, anchors = _batch(kg, 2, rng), _anchors(kg, rng)
    _, _, grads = icse_batch(state, negs, anchors, cfg)
    numeric = finite_difference(state, lambda: icse_batch(state, negs, anchors, cfg)[0])
    for name, g in numeric.items():
        assert relative_error(grads.get(name, np.zeros_like(g)), g) < 1e-5, name


def test_icse_batch_matches_single_positive_loss():
    rng = np.random.default_rng(2)
    kg, _ = random_kg(rng, n_entities=8, n_relations=2, n_triples=10)
    cfg = TrainConfig(mode="ICSE", d_e=4, d_c=2, alpha1=0.3, alpha2=0.2)
    state = init_state("TRANSLATION", "ICSE", kg.n_entities, kg.n_relations, 4, 2, rng=rng)
    negs, (same, other, ok) = _batch(kg, 2, rng), _anchors(kg, rng)
    mean, comps, _ = icse_batch(state, negs, (same, other, ok), cfg)
    totals = []
    for i in range(len(kg.train)):
        anchor = (same[i], other[i]) if ok[i] else None
        totals.append(icse_loss(state, kg.train[i], negs.samples(i), anchor, cfg)[0])
    assert mean == pytest.approx(np.mean(totals), rel=1e-12)


def _icse_state():
    return init_state("ROTATION", "ICSE", 5, 2, 4, 2, rng=3)


def test_icse_loss_examples():
    state = _icse_state()
    pos, negs = (0, 0, 1), [((2, 0, 1), 0.4), ((0, 0, 3), 0.6)]
    base = TrainConfig(mode="ICSE", d_e=4, d_c=2, alpha1=0.0, alpha2=0.0)
    total, lf, lcs, lsim = icse_loss(state, pos, negs, ((1, 0, 2), (3, 1, 4)), base)
    assert total == lf
    # skipping the similarity term leaves L_f and L_cs untouched
    cfg = TrainConfig(mode="ICSE", d_e=4, d_c=2, alpha1=0.5, alpha2=0.5)
    with_sim = icse_loss(state, pos, negs, ((1, 0, 2), (3, 1, 4)), cfg)
    without = icse_loss(state, pos, negs, None, cfg)
    assert with_sim[1:3] == without[1:3] and without[3] == 0.0


def test_icse_sim_hinge_by_hand():
    state = _icse_state()
    pos = (0, 0, 1)
    other = (2, 1, 3)
    # make sim(anchor, other) equal -1 by choosing margin relative to the actual value
    s_other = sim_score(state, pos, other)
    assert sim_score(state, pos, pos) == 0.0
    cfg = TrainConfig(mode="ICSE", d_e=4, d_c=2, margin_sim=-s_other, alpha1=0.0, alpha2=1.0)
    _, _, _, lsim = icse_loss(state, pos, [((2, 0, 1), 1.0)], (pos, other), cfg)
    assert lsim == 0.0
    cfg = TrainConfig(mode="ICSE", d_e=4, d_c=2, margin_sim=1.0 - s_other, alpha1=0.0, alpha2=1.0)
    assert icse_loss(state, pos, [((2, 0, 1), 1.0)], (pos, other), cfg)[3] == pytest.approx(1.0)


def test_icse_cs_hinge_inactive():
    state = _icse_state()
    cfg = TrainConfig(mode="ICSE", d_e=4, d_c=2, margin_cs=1e-9)
    from cskgc.scorers import cs_score
    pos, neg = (0, 0, 1), (2, 0, 3)
    if cs_score(state, *pos) < cs_score(state, *neg):
        pos, neg = neg, pos
    assert icse_loss(state, pos, [(neg, 1.0)], None, cfg)[2] == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(list(ModelKind)), st.sampled_from(["ECSE", "ICSE"]))
def test_small_sgd_step_decreases_loss(seed, kind, mode):
    rng = np.random.default_rng(seed)
    kg, _ = random_kg(rng, n_entities=8, n_relations=2, n_triples=10)
    kg = KnowledgeGraph(kg.entities, kg.relations, kg.train[:1], kg.valid, kg.test)
    cfg = TrainConfig(mode=mode, model_kind=kind, d_e=4, d_c=2, margin=2.0, margin_f=2.0, alpha1=0.5, alpha2=0.5)
    state = init_state(kind, mode, kg.n_entities, kg.n_relations, 4, 2 if mode == "ICSE" else None, rng=rng)
    negs = _batch(kg, 2, rng)
    anchors = (kg.train, kg.train[:, [0, 1, 2]] * 0, np.ones(1, bool))
    step = (lambda: ecse_batch(state, negs, cfg)) if mode == "ECSE" else \
        (lambda: icse_batch(state, negs, anchors, cfg))
    before, _, grads = step()
    if sum(float(np.sum(g * g)) for g in grads.values()) == 0:
        return
    for name, g in grads.items():
        getattr(state, name)[...] -= 1e-4 * g
    assert step()[0] < before


def forced_toy():
    # two concepts make every CGNS pool a singleton, so negatives are fixed
    kg = KnowledgeGraph.from_labels([("a", "r", "b"), ("b", "r", "c"), ("c", "r", "d")])
    cmap = ConceptMap.from_dict(kg, {"a": ["X"], "b": ["X"], "c": ["Y"], "d": ["Y"]})
    return kg, cmap, generate(kg, cmap)


def test_toy_loss_strictly_decreases():
    kg, cmap, store = forced_toy()
    cfg = TrainConfig(d_e=4, margin=1.0, learning_rate=0.1, epochs=50, batch_size=3,
                      optimizer="SGD", loss_kind="LOGSIGMOID", seed=0)
    _, report = fit(kg, cfg, cmap, store)
    assert len(report.epoch_loss) == 50
    assert np.all(np.diff(report.epoch_loss) < 0)


def test_zero_epochs_returns_initial_state():
    kg, cmap, store = forced_toy()
    cfg = TrainConfig(d_e=4, epochs=0, seed=3)
    state, report = fit(kg, cfg, cmap, store)
    init = initial_state(kg, cfg)
    for name, arr in init.blocks().items():
        np.testing.assert_array_equal(arr, getattr(state, name))
    assert report.epoch_loss == []


@pytest.mark.parametrize("mode, kind", [("ECSE", "TRANSLATION"), ("ICSE", "ROTATION"), ("ICSE", "TENSOR_DECOMP")])
def test_seeded_runs_are_bit_identical(mode, kind):
    kg, cmap = random_kg(np.random.default_rng(0), n_entities=15, n_triples=40)
    store = generate(kg, cmap)
    cfg = TrainConfig(mode=mode, model_kind=kind, d_e=6, d_c=3, epochs=3, batch_size=8, seed=11)
    a, ra = fit(kg, cfg, cmap, store)
    b, rb = fit(kg, cfg, cmap, store)
    for name, arr in a.blocks().items():
        assert arr.tobytes() == getattr(b, name).tobytes()
    assert ra.epoch_loss == rb.epoch_loss


def test_constraints_hold_after_every_epoch():
    kg, _ = random_kg(np.random.default_rng(1), n_entities=15, n_triples=40)
    cfg = TrainConfig(mode="ICSE", model_kind="ROTATION", d_e=6, d_c=3, epochs=4, batch_size=8,
                      learning_rate=0.5)
    seen = []

    def check(epoch, state, report):
        assert np.all(state.relation_emb >= -np.pi) and np.all(state.relation_emb < np.pi)
        np.testing.assert_allclose(np.linalg.norm(state.relation_hyperplane, axis=1), 1.0, atol=1e-9)
        assert len(report.loss_sim) == epoch + 1
        seen.append(epoch)

    fit(kg, cfg, callbacks=[check])
    assert seen == [0, 1, 2, 3]


def test_non_finite_loss_names_batch_and_component():
    kg, cmap, store = forced_toy()
    cfg = TrainConfig(mode="ICSE", d_e=4, d_c=2, epochs=1)
    state = initial_state(kg, cfg)
    state.entity_emb[:] = np.nan
    with pytest.raises(TrainingDivergedError, match=r"L_f.*batch 0"):
        fit(kg, cfg, state=state)


def test_ecse_cgns_needs_concepts():
    kg, _, _ = forced_toy()
    with pytest.raises(ValueError, match="concept map"):
        fit(kg, TrainConfig(epochs=1))


@pytest.mark.parametrize("kwargs", [
    dict(margin=0.0), dict(learning_rate=-1.0), dict(alpha1=-0.1),
    dict(mode="ICSE", d_e=4, d_c=4), dict(mode="ICSE", sampler_kind="CGNS"), dict(epochs=-1),
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs).validate()


def test_config_dict_round_trip():
    cfg = TrainConfig(mode="ICSE", model_kind="ROTATION", d_c=4, optimizer="SGD")
    assert cfg.sampler_kind.value == "SELF_ADVERSARIAL"
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"bogus": 1})


# -- checkpoints -------------------------------------------------------------

@pytest.mark.parametrize("mode, kind", [("ECSE", "TRANSLATION"), ("ICSE", "ROTATION"), ("ICSE", "TENSOR_DECOMP")])
def test_checkpoint_round_trip(tmp_path, mode, kind):
    cfg = TrainConfig(mode=mode, model_kind=kind, d_e=5, d_c=2, seed=4)
    state = init_state(kind, mode, 7, 3, 5, 2 if mode == "ICSE" else None, rng=0)
    path = save_checkpoint(state, cfg, tmp_path / "m.ckpt")
    loaded, cfg2 = load_checkpoint(path)
    assert cfg2 == cfg
    assert loaded.mode.value == mode and loaded.model_kind.value == kind
    for name, arr in state.blocks().items():
        np.testing.assert_array_equal(arr.astype(np.float32), getattr(loaded, name).astype(np.float32))
    assert encode_checkpoint(loaded, cfg.to_dict()) == path.read_bytes()
    assert path.read_bytes()[:4] == b"KGCE"


def _saved(tmp_path):
    state = init_state("TRANSLATION", "ECSE", 4, 1, 3, rng=0)
    return save_checkpoint(state, TrainConfig(), tmp_path / "m.ckpt")


def test_checkpoint_errors(tmp_path):
    path = _saved(tmp_path)
    raw = bytearray(path.read_bytes())

    bad = bytearray(raw)
    bad[-10] ^= 0xFF
    path.write_bytes(bytes(bad))
    with pytest.raises(ChecksumError):
        load_checkpoint(path)

    path.write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(BadMagicError):
        load_checkpoint(path)

    path.write_bytes(bytes(raw[:4]) + struct.pack("<I", 2) + bytes(raw[8:]))
    with pytest.raises(VersionMismatchError):
        load_checkpoint(path)

    for cut in (6, 30, len(raw) - 2):
        path.write_bytes(bytes(raw[:cut]))
        with pytest.raises(TruncatedCheckpointError):
            load_checkpoint(path)
