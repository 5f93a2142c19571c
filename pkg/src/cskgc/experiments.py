"""Scaled-down directional comparison on the synthetic concept-structured KG."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np

from .commonsense import generate
from .inference import EvalConfig, evaluate
from .synthetic import concept_structured_kg
from .training import TrainConfig, fit


@dataclass
class DirectionalConfig:
    epochs: int = 200
    d_e: int = 32
    d_c: int = 4
    learning_rate: float = 0.01
    batch_size: int = 128
    margin: float = 9.0
    margin_cs: float = 1.0
    alpha1: float = 0.5
    kg_seed: int = 0


def directional_run(seed: int, cfg: DirectionalConfig | None = None) -> dict:
    """Train the four variants for one seed and return their test metrics.

    Variants: ``ecse`` (CGNS negatives, coarse-to-fine ranking), ``uniform``
    (uniform negatives, plain ranking), ``icse`` (dual score with
    ``cfg.alpha1``) and ``icse_alpha0`` (the same with alpha1 = 0).
    """
    cfg = cfg or DirectionalConfig()
    kg, cmap, _ = concept_structured_kg(seed=cfg.kg_seed)
    store = generate(kg, cmap)
    base = TrainConfig(d_e=cfg.d_e, d_c=cfg.d_c, epochs=cfg.epochs, batch_size=cfg.batch_size,
                       learning_rate=cfg.learning_rate, margin=cfg.margin, margin_f=cfg.margin,
                       margin_cs=cfg.margin_cs, seed=seed)
    variants = {
        "ecse": (dataclasses.replace(base, sampler_kind="CGNS"),
                 EvalConfig.for_mode("ECSE", store=store, cmap=cmap)),
        "uniform": (dataclasses.replace(base, sampler_kind="UNIFORM"), EvalConfig("ECSE")),
        "icse": (dataclasses.replace(base, mode="ICSE", sampler_kind=None, alpha1=cfg.alpha1),
                 EvalConfig.for_mode("ICSE", alpha1=cfg.alpha1)),
        "icse_alpha0": (dataclasses.replace(base, mode="ICSE", sampler_kind=None, alpha1=0.0),
                        EvalConfig.for_mode("ICSE", alpha1=0.0)),
    }
    out = {}
    for name, (tcfg, ecfg) in variants.items():
        start = time.perf_counter()
        state, _ = fit(kg, tcfg, cmap, store)
        results: list = []
        report = evaluate(state, kg, "test", ecfg, results)
        out[name] = {
            "mrr": report.mrr,
            "mr": report.mr,
            "hits": dict(report.hits),
            "in_pool": float(np.mean([r.in_concept_pool for r in results])),
            "seconds": time.perf_counter() - start,
        }
    return out
