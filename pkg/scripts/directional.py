"""Run the synthetic directional comparison and print per-seed and mean metrics.

    python3 scripts/directional.py --seeds 5 --out directional.json
"""

import argparse
import json

import numpy as np

from cskgc.experiments import DirectionalConfig, directional_run


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=DirectionalConfig.epochs)
    p.add_argument("--margin-cs", type=float, default=DirectionalConfig.margin_cs)
    p.add_argument("--out", help="write all runs as JSON")
    args = p.parse_args()
    cfg = DirectionalConfig(epochs=args.epochs, margin_cs=args.margin_cs)
    runs = []
    for seed in range(args.seeds):
        run = directional_run(seed, cfg)
        runs.append(run)
        for name, m in run.items():
            print(f"seed {seed} {name:<12} MRR {m['mrr']:.3f} Hits@1 {m['hits'][1]:.3f} "
                  f"Hits@10 {m['hits'][10]:.3f} in-pool {m['in_pool']:.2f} ({m['seconds']:.1f}s)")
    print()
    for name in runs[0]:
        mrr = np.mean([r[name]["mrr"] for r in runs])
        h1 = np.mean([r[name]["hits"][1] for r in runs])
        h10 = np.mean([r[name]["hits"][10] for r in runs])
        print(f"mean {name:<12} MRR {mrr:.3f} Hits@1 {h1:.3f} Hits@10 {h10:.3f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"config": vars(cfg), "runs": runs}, fh, indent=2, default=str)


if __name__ == "__main__":
    main()
