"""Command-line front end: ``cskgc {generate-cs,train,eval,predict,sample-negatives}``.

Every command reads an optional flat JSON config (``--config``) whose keys
are the dotted names of :class:`RunConfig` fields, e.g. ``"dataset"`` or
``"train.learning_rate"``. Any key can be overridden on the command line as
``--train.learning_rate 0.01`` (``--train.lr`` is an alias). Precedence is
flags, then file, then defaults.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .commonsense import generate, load_store, save_store
from .inference import EvalConfig, evaluate, predict
from .ioutil import atomic_write_text
from .kgdata import DatasetError, load_concept_map, load_dataset, profile_relations
from .negsampling import CGNSSampler
from .scorers import Mode
from .training import SamplerKind, TrainConfig, TrainingDivergedError, fit

log = logging.getLogger("cskgc")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: str | None = None
    concepts: str | None = None
    cs_dir: str | None = None
    checkpoint: str | None = None
    report: str | None = None
    split: str = "test"
    deterministic: bool = True
    workers: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_flat(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "train"}
        out.update({f"train.{k}": v for k, v in self.train.to_dict().items()})
        return dict(sorted(out.items()))

    @classmethod
    def from_flat(cls, flat: dict) -> "RunConfig":
        top, train = {}, {}
        for key, value in flat.items():
            key = ALIASES.get(key, key)
            if key.startswith("train."):
                train[key[len("train."):]] = value
            else:
                top[key] = value
        top_names = {f.name for f in dataclasses.fields(cls)} - {"train"}
        unknown = sorted(set(top) - top_names)
        if unknown:
            raise ConfigError(f"unknown config key(s): {unknown}")
        try:
            return cls(**top, train=TrainConfig.from_dict(train))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


ALIASES = {"train.lr": "train.learning_rate", "seed": "train.seed"}


def _field_types() -> dict:
    types = {f.name: f.type for f in dataclasses.fields(RunConfig) if f.name != "train"}
    types.update({f"train.{f.name}": f.type for f in dataclasses.fields(TrainConfig)})
    return types


def _coerce(key: str, raw: str):
    kind = str(_field_types().get(key, "str"))
    if kind.startswith("bool"):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc
    if "None" in kind and raw.lower() in ("none", "null"):
        return None
    return raw


def _parse_overrides(extra: list[str]) -> dict:
    out, i = {}, 0
    types = _field_types()
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument: {tok}")
        key, eq, value = tok[2:].partition("=")
        key = ALIASES.get(key, key)
        if key not in types:
            raise ConfigError(f"unknown option: {tok.split('=')[0]}")
        if not eq:
            if i + 1 >= len(extra):
                raise ConfigError(f"{tok} needs a value")
            value = extra[i + 1]
            i += 1
        out[key] = _coerce(key, value)
        i += 1
    return out


def resolve_config(args, extra: list[str]) -> RunConfig:
    """Defaults, then the JSON file, then named flags and dotted overrides."""
    flat = RunConfig().to_flat()
    # left unset so the default follows the final mode
    flat["train.sampler_kind"] = None
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        flat.update({ALIASES.get(k, k): v for k, v in data.items()})
    named = {"dataset": "dataset", "concepts": "concepts", "cs_dir": "cs_dir", "checkpoint": "checkpoint",
             "report": "report", "split": "split", "workers": "workers", "seed": "train.seed"}
    for attr, key in named.items():
        value = getattr(args, attr, None)
        if value is not None:
            flat[key] = value
    if getattr(args, "deterministic", False):
        flat["deterministic"] = True
    flat.update(_parse_overrides(extra))
    cfg = RunConfig.from_flat(flat)
    try:
        cfg.train.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _require(cfg: RunConfig, *names: str) -> None:
    for name in names:
        if getattr(cfg, name) in (None, ""):
            raise ConfigError(f"missing required field: {name}")


def _concepts(cfg: RunConfig, kg):
    """Concept map and store, generating common sense when no cs_dir is given."""
    if cfg.concepts is None:
        return None, None
    cmap = load_concept_map(cfg.concepts, kg)
    store = load_store(cfg.cs_dir, kg, cmap) if cfg.cs_dir else generate(kg, cmap)
    return cmap, store


def _load_model(cfg: RunConfig, kg):
    state, tcfg = load_checkpoint(cfg.checkpoint)
    if (state.n_entities, state.n_relations) != (kg.n_entities, kg.n_relations):
        raise ConfigError(
            f"checkpoint has {state.n_entities} entities / {state.n_relations} relations, "
            f"dataset has {kg.n_entities} / {kg.n_relations}")
    return state, tcfg or TrainConfig()


def _eval_config(state, tcfg: TrainConfig, cmap, store) -> EvalConfig:
    if state.mode is Mode.ICSE:
        return EvalConfig.for_mode(Mode.ICSE, alpha1=tcfg.alpha1)
    return EvalConfig.for_mode(Mode.ECSE, store=store, cmap=cmap)


# -- commands ----------------------------------------------------------------

def cmd_generate_cs(args, cfg: RunConfig) -> int:
    _require(cfg, "dataset", "concepts", "cs_dir")
    kg = load_dataset(cfg.dataset)
    cmap = load_concept_map(cfg.concepts, kg)
    store = generate(kg, cmap)
    save_store(store, cfg.cs_dir, kg, cmap)
    print(f"individual\t{len(store.individual)}")
    print(f"setform_relations\t{len(store.setform)}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    _require(cfg, "dataset", "checkpoint")
    tcfg = cfg.train
    if tcfg.mode is Mode.ECSE and tcfg.sampler_kind is SamplerKind.CGNS:
        _require(cfg, "concepts")
    print(json.dumps(cfg.to_flat(), indent=2, sort_keys=True))
    kg = load_dataset(cfg.dataset)
    cmap, store = _concepts(cfg, kg)

    def progress(epoch, state, report):
        log.info("epoch %d loss %.6f", epoch + 1, report.epoch_loss[-1])

    state, report = fit(kg, tcfg, cmap, store, callbacks=[progress])
    save_checkpoint(state, tcfg, cfg.checkpoint)
    report_path = cfg.report or str(Path(cfg.checkpoint).with_suffix(".report.json"))
    atomic_write_text(report_path, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    log.info("wrote %s and %s", cfg.checkpoint, report_path)
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    _require(cfg, "dataset", "checkpoint")
    kg = load_dataset(cfg.dataset)
    state, tcfg = _load_model(cfg, kg)
    cmap, store = _concepts(cfg, kg)
    report = evaluate(state, kg, cfg.split, _eval_config(state, tcfg, cmap, store))
    if not args.by_category:
        report.breakdown = {}
    print(report.to_table())
    if cfg.report:
        atomic_write_text(cfg.report, report.to_json() + "\n")
    return EXIT_OK


def cmd_predict(args, cfg: RunConfig) -> int:
    _require(cfg, "dataset", "checkpoint")
    if (args.head is None) == (args.tail is None):
        raise ConfigError("give exactly one of --head or --tail")
    kg = load_dataset(cfg.dataset)
    state, tcfg = _load_model(cfg, kg)
    cmap, store = _concepts(cfg, kg)
    answers = predict(state, kg, args.relation, head=args.head, tail=args.tail, k=args.k,
                      config=_eval_config(state, tcfg, cmap, store))
    for rank, (label, score, concepts) in enumerate(answers, start=1):
        print(f"{rank}\t{label}\t{score:.6f}\t{','.join(concepts)}")
    return EXIT_OK


def cmd_sample_negatives(args, cfg: RunConfig) -> int:
    _require(cfg, "dataset", "checkpoint", "concepts")
    kg = load_dataset(cfg.dataset)
    state, tcfg = _load_model(cfg, kg)
    cmap, store = _concepts(cfg, kg)
    parts = args.triple.split(",")
    if len(parts) != 3:
        raise ConfigError(f"--triple needs h,r,t; got {args.triple!r}")
    h, r, t = (p.strip() for p in parts)
    unknown = [x for x, vocab in ((h, kg.entities), (r, kg.relations), (t, kg.entities)) if x not in vocab]
    if unknown:
        raise ConfigError(f"unknown label(s): {', '.join(unknown)}")
    pos = np.array([[kg.entities.id_of(h), kg.relations.id_of(r), kg.entities.id_of(t)]])
    sampler = CGNSSampler(kg, store, cmap, profile_relations(kg), tcfg.filter_known)
    batch = sampler.sample_batch(pos, args.n, state, tcfg.temperature, np.random.default_rng(cfg.train.seed))
    for s in batch.samples(0):
        hl, rl, tl = kg.label_triple(s.triple)
        print(f"{hl}\t{rl}\t{tl}\t{s.corrupted_side.value}\t{s.weight!r}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, *flags: str) -> None:
    p.add_argument("--config", help="flat JSON config file with dotted keys")
    p.add_argument("--seed", type=int, help="random seed (train.seed)")
    p.add_argument("--deterministic", action="store_true", help="fixed-order accumulation (always on)")
    p.add_argument("--workers", type=int, help="worker count (evaluation runs in one process)")
    helps = {
        "dataset": "directory with train.txt, valid.txt, test.txt",
        "concepts": "entity<TAB>concept,... file",
        "cs_dir": "directory for cs_individual.txt / cs_setform.txt",
        "checkpoint": "checkpoint path",
        "report": "JSON report path",
        "split": "valid or test",
    }
    for name in flags:
        p.add_argument("--" + name.replace("_", "-"), dest=name, help=helps[name])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cskgc", description=__doc__.split("\n\n")[0],
        epilog="Any config key may also be passed as --KEY VALUE, e.g. --train.epochs 50 --train.lr 0.01.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-cs", help="mine common-sense triples from the training split")
    _common(p, "dataset", "concepts", "cs_dir")
    p.set_defaults(func=cmd_generate_cs)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _common(p, "dataset", "concepts", "cs_dir", "checkpoint", "report")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="filtered ranking metrics on a split")
    _common(p, "dataset", "concepts", "cs_dir", "checkpoint", "report", "split")
    p.add_argument("--by-category", action="store_true", help="add Hits@10 per side and relation category")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="top-k answers for (h, r, ?) or (?, r, t)")
    _common(p, "dataset", "concepts", "cs_dir", "checkpoint")
    p.add_argument("--head")
    p.add_argument("--tail")
    p.add_argument("--relation", required=True)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sample-negatives", help="print CGNS negatives for one triple")
    _common(p, "dataset", "concepts", "cs_dir", "checkpoint")
    p.add_argument("--triple", required=True, help="h,r,t labels")
    p.add_argument("--n", type=int, default=2)
    p.set_defaults(func=cmd_sample_negatives)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args, extra)
        return args.func(args, cfg)
    except (ConfigError, DatasetError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyError as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDivergedError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
