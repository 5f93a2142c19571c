import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cskgc.kgdata import (
    UNK_CONCEPT,
    DatasetError,
    KnowledgeGraph,
    RelationCategory,
    known_triple,
    load_concept_map,
    load_dataset,
    profile_relations,
    write_dataset,
)


def test_minimal_dataset(dataset_dir):
    kg = load_dataset(dataset_dir([("a", "r", "b")]))
    assert kg.n_entities == 2 and kg.n_relations == 1
    assert kg.train.shape == (1, 3) and kg.valid.shape == (0, 3)


def test_ids_by_first_appearance(dataset_dir):
    kg = load_dataset(dataset_dir([("x", "p", "y")], [("z", "q", "x")], [("w", "p", "z")]))
    assert kg.entities.labels == ["x", "y", "z", "w"]
    assert kg.relations.labels == ["p", "q"]


def test_duplicate_within_split_is_error(dataset_dir):
    with pytest.raises(DatasetError, match="duplicate"):
        load_dataset(dataset_dir([("a", "r", "b"), ("a", "r", "b")]))


def test_duplicate_across_splits_warns(dataset_dir):
    with pytest.warns(UserWarning):
        kg = load_dataset(dataset_dir([("a", "r", "b")], test=[("a", "r", "b")]))
    assert kg.cross_split_duplicates == 1


def test_malformed_line_names_file_and_line(dataset_dir, tmp_path):
    root = dataset_dir([("a", "r", "b")])
    (root / "train.txt").write_text("a\tr\tb\nbroken line\n")
    with pytest.raises(DatasetError, match=r"train.txt:2"):
        load_dataset(root)


def test_missing_file(tmp_path):
    with pytest.raises(DatasetError, match="missing"):
        load_dataset(tmp_path)


def test_known_triple(dataset_dir):
    kg = load_dataset(dataset_dir([("a", "r", "b")], [("b", "r", "c")], [("c", "r", "a")]))
    a, b, c = (kg.entities.id_of(x) for x in "abc")
    assert known_triple(kg, (a, 0, b))
    assert not known_triple(kg, (b, 0, a))
    assert known_triple(kg, (b, 0, c))
    assert not known_triple(kg, (b, 0, c), splits="train")
    np.testing.assert_array_equal(kg.is_known(np.array([[a, 0, b], [b, 0, a], [b, 0, c]])),
                                  [True, False, True])


def test_concept_map_loading(dataset_dir, tmp_path):
    kg = load_dataset(dataset_dir([("David", "Nationality", "France"), ("X", "r", "David")]))
    path = tmp_path / "concepts.txt"
    path.write_text("David\tPerson\nFrance\t Country , Nation \n")
    cmap = load_concept_map(path, kg)
    assert cmap.labels_of(kg.entities.id_of("David")) == ["Person"]
    assert cmap.labels_of(kg.entities.id_of("France")) == ["Country", "Nation"]
    assert cmap.labels_of(kg.entities.id_of("X")) == [UNK_CONCEPT]
    assert cmap.n_fallback == 1


@pytest.mark.parametrize("content, msg", [
    ("Nobody\tPerson\n", "unknown entity"),
    ("David\t , \n", "empty concept"),
])
def test_concept_map_errors(dataset_dir, tmp_path, content, msg):
    kg = load_dataset(dataset_dir([("David", "r", "France")]))
    path = tmp_path / "concepts.txt"
    path.write_text(content)
    with pytest.raises(DatasetError, match=msg):
        load_concept_map(path, kg)


def _profile(rows):
    kg = KnowledgeGraph.from_labels(rows)
    return profile_relations(kg)[0]


def test_profile_single_triple():
    p = _profile([("a", "r", "x")])
    assert (p.avg_tails_per_head, p.avg_heads_per_tail) == (1.0, 1.0)
    assert p.category is RelationCategory.ONE_ONE


def test_profile_one_to_many():
    p = _profile([("a", "r", "x"), ("a", "r", "y")])
    assert (p.avg_tails_per_head, p.avg_heads_per_tail) == (2.0, 1.0)
    assert p.category is RelationCategory.ONE_N
    assert p.head_unique and not p.tail_unique


def test_profile_many_to_many():
    p = _profile([("a", "r", "x"), ("b", "r", "x"), ("a", "r", "y"), ("b", "r", "y")])
    assert (p.avg_tails_per_head, p.avg_heads_per_tail) == (2.0, 2.0)
    assert p.category is RelationCategory.N_N


def test_profile_boundary_counts_as_many():
    # 3 pairs over 2 heads -> ah_t = 1.5 exactly
    p = _profile([("a", "r", "x"), ("a", "r", "y"), ("b", "r", "z")])
    assert p.avg_tails_per_head == 1.5
    assert p.category is RelationCategory.ONE_N


def test_profile_uses_train_only():
    kg = KnowledgeGraph.from_labels([("a", "r", "x")], test=[("a", "r", "y"), ("a", "s", "y")])
    profiles = profile_relations(kg)
    assert profiles[0].category is RelationCategory.ONE_ONE
    assert 1 not in profiles


triples = st.lists(
    st.tuples(st.integers(0, 6), st.integers(0, 2), st.integers(0, 6)), min_size=1, max_size=40, unique=True
)


@settings(max_examples=60, deadline=None)
@given(triples, st.randoms(use_true_random=False))
def test_profile_properties(rows, rnd):
    labelled = [(f"e{h}", f"r{r}", f"e{t}") for h, r, t in rows]
    kg = KnowledgeGraph.from_labels(labelled)
    profiles = profile_relations(kg)
    for r, p in profiles.items():
        sub = kg.train[kg.train[:, 1] == r]
        n_heads, n_tails = len(set(sub[:, 0])), len(set(sub[:, 2]))
        assert p.avg_tails_per_head * n_heads == pytest.approx(len(sub))
        assert p.avg_heads_per_tail * n_tails == pytest.approx(len(sub))
        assert p.avg_tails_per_head >= 1 and p.avg_heads_per_tail >= 1
        assert p.category is RelationCategory.classify(p.avg_tails_per_head, p.avg_heads_per_tail)
    # by_relation partitions the training triples
    idx = np.sort(np.concatenate(list(kg.by_relation.values())))
    np.testing.assert_array_equal(idx, np.arange(len(kg.train)))
    # order independence, compared by label
    shuffled = list(labelled)
    rnd.shuffle(shuffled)
    kg2 = KnowledgeGraph.from_labels(shuffled)
    by_label = lambda g, ps: {g.relations[r]: (p.avg_tails_per_head, p.avg_heads_per_tail, p.category)
                              for r, p in ps.items()}
    assert by_label(kg, profiles) == by_label(kg2, profile_relations(kg2))


@settings(max_examples=30, deadline=None)
@given(triples, triples)
def test_write_reload_round_trip(tmp_path_factory, train, test):
    train = [(f"e{h}", f"r{r}", f"e{t}") for h, r, t in train]
    test = [(f"e{h}", f"r{r}", f"e{t}") for h, r, t in test if (f"e{h}", f"r{r}", f"e{t}") not in train]
    kg = KnowledgeGraph.from_labels(train, test=test)
    root = tmp_path_factory.mktemp("rt")
    write_dataset(kg, root)
    kg2 = load_dataset(root)
    assert kg2.entities == kg.entities and kg2.relations == kg.relations
    for name in ("train", "valid", "test"):
        np.testing.assert_array_equal(kg.split(name), kg2.split(name))
