import numpy as np
import pytest

from cskgc.kgdata import ConceptMap, KnowledgeGraph


def write_split(root, name, rows):
    (root / f"{name}.txt").write_text("".join("\t".join(r) + "\n" for r in rows), encoding="utf-8")


@pytest.fixture
def dataset_dir(tmp_path):
    def make(train, valid=(), test=()):
        write_split(tmp_path, "train", train)
        write_split(tmp_path, "valid", valid)
        write_split(tmp_path, "test", test)
        return tmp_path
    return make


@pytest.fixture
def located_in():
    kg = KnowledgeGraph.from_labels([
        ("SanFrancisco", "LocatedIn", "California"),
        ("GoogleInc", "LocatedIn", "California"),
    ])
    cmap = ConceptMap.from_dict(kg, {
        "SanFrancisco": ["City"], "GoogleInc": ["Company"], "California": ["State"],
    })
    return kg, cmap


def random_kg(rng, n_entities=20, n_relations=3, n_triples=60, n_concepts=4, split=(0.8, 0.1)):
    """Random labelled KG and concept map (1-2 concepts per entity)."""
    seen = set()
    while len(seen) < n_triples:
        h, t = rng.integers(n_entities, size=2)
        r = rng.integers(n_relations)
        seen.add((f"e{h}", f"r{r}", f"e{t}"))
    rows = sorted(seen)
    rng.shuffle(rows)
    a = int(split[0] * len(rows))
    b = a + int(split[1] * len(rows))
    kg = KnowledgeGraph.from_labels(rows[:a], rows[a:b], rows[b:])
    mapping = {}
    for e in kg.entities.labels:
        k = int(rng.integers(1, 3))
        mapping[e] = [f"c{c}" for c in rng.choice(n_concepts, size=k, replace=False)]
    return kg, ConceptMap.from_dict(kg, mapping)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
