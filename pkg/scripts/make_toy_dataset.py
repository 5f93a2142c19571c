"""Write the synthetic concept-structured KG as a dataset directory for the CLI.

    python3 scripts/make_toy_dataset.py toy/
    cskgc train --dataset toy --concepts toy/concepts.txt --checkpoint toy/model.kgce
"""

import argparse
from pathlib import Path

from cskgc.kgdata import write_dataset
from cskgc.synthetic import concept_structured_kg


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--entities", type=int, default=200)
    args = p.parse_args()
    kg, cmap, pairs = concept_structured_kg(n_entities=args.entities, seed=args.seed)
    write_dataset(kg, args.out)
    # entities outside every triple are dropped by the text format, so list only those that remain
    used = {int(e) for split in (kg.train, kg.valid, kg.test) for e in split[:, [0, 2]].ravel()}
    lines = [f"{kg.entities[e]}\t{','.join(cmap.labels_of(e))}\n" for e in sorted(used)]
    (args.out / "concepts.txt").write_text("".join(lines), encoding="utf-8")
    for r, (a, b) in pairs.items():
        print(f"{r}: {a} -> {b}")
    print(f"{len(kg.train)} train / {len(kg.valid)} valid / {len(kg.test)} test triples, {len(used)} entities")


if __name__ == "__main__":
    main()
