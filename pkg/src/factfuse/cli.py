"""Command-line entry point: ``factfuse {synth,train,eval,predict,gradcheck}``.

Reports go to stdout as one JSON object per line; diagnostics go to stderr.
Set ``FACTFUSE_LOG_LEVEL`` (DEBUG, INFO, WARNING, ...) to control verbosity.

Exit codes: 0 success, 1 runtime failure (missing files, failed gradient
check, training error), 2 configuration error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

from factfuse.data import load_dataset
from factfuse.errors import ConfigError, FactFuseError
from factfuse.fusion import FusionConfig
from factfuse.model import ModelConfig, VerifierModel
from factfuse.nn import Tape, compare_gradients
from factfuse.synth import SynthConfig, generate, label_histogram, write_splits
from factfuse.vocab import Vocabulary
from factfuse.training import (
    Checkpoint,
    TrainConfig,
    corpus_texts,
    evaluate,
    history_lines,
    predict,
    train,
)
from factfuse.transformer import EncoderConfig

log = logging.getLogger("factfuse")

LOG_ENV = "FACTFUSE_LOG_LEVEL"
EFFECTIVE_CONFIG = "effective_config.json"
GRADCHECK_TOLERANCE = 1e-4

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


# -- config handling -------------------------------------------------------------

_NESTED = {
    ModelConfig: {"text": EncoderConfig, "table": EncoderConfig, "fusion": FusionConfig},
    TrainConfig: {"model": ModelConfig},
}


def check_keys(cls, values: dict, where: str) -> None:
    """Reject keys that are not fields of ``cls``, recursing into nested configs."""
    if not isinstance(values, dict):
        raise ConfigError(f"{where}: expected an object, got {type(values).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"{where}: unknown key {key!r}")
        sub = _NESTED.get(cls, {}).get(key)
        if sub is not None and isinstance(value, dict):
            check_keys(sub, value, f"{where}.{key}")


def build(cls, values: dict, where: str):
    check_keys(cls, values, where)
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def read_config(path: str | None) -> tuple[dict, Path]:
    """Parsed JSON object and the directory relative paths resolve against."""
    if path is None:
        return {}, Path.cwd()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be an object")
    return data, p.parent.resolve()


def split_keys(data: dict, allowed: set[str], where: str) -> tuple[dict, dict]:
    """Separate run-level keys (paths, output dir) from the rest."""
    run = {k: v for k, v in data.items() if k in allowed}
    rest = {k: v for k, v in data.items() if k not in allowed}
    for k, v in run.items():
        if v is not None and not isinstance(v, str):
            raise ConfigError(f"{where}: {k!r} must be a path string")
    return run, rest


def resolve(value: str | None, base: Path) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return (p if p.is_absolute() else base / p).resolve()


def override(values: dict, **flags) -> dict:
    out = dict(values)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, separators=(",", ":"), sort_keys=False) + "\n")
    sys.stdout.flush()


def echo_config(out_dir: Path, effective: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / EFFECTIVE_CONFIG).write_text(json.dumps(effective, indent=2) + "\n", encoding="utf-8")


def require_file(path: Path | None, what: str) -> Path:
    if path is None:
        raise ConfigError(f"no {what} given")
    if not path.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


# -- subcommands ---------------------------------------------------------------------

def cmd_synth(args) -> int:
    data, base = read_config(args.config)
    run, rest = split_keys(data, {"output_dir"}, "synth config")
    rest = override(rest, seed=args.seed, task=args.task)
    cfg = build(SynthConfig, rest, "synth config")
    out_dir = resolve(args.out, Path.cwd()) or resolve(run.get("output_dir"), base)
    if out_dir is None:
        raise ConfigError("synth needs an output directory (--out or output_dir)")
    datasets = generate(cfg)
    write_splits(datasets, out_dir)
    echo_config(out_dir, {"output_dir": str(out_dir), **cfg.to_dict()})
    for split, ds in datasets.items():
        emit({"split": split, "n": len(ds), "labels": label_histogram(ds)})
    return EXIT_OK


def cmd_train(args) -> int:
    data, base = read_config(args.config)
    run, rest = split_keys(data, {"train", "dev", "output_dir"}, "train config")
    rest = override(rest, seed=args.seed, learning_rate=args.lr, max_epochs=args.epochs,
                    modality=args.modality)
    cfg = build(TrainConfig, rest, "train config")
    cwd = Path.cwd()
    train_path = resolve(args.train, cwd) or resolve(run.get("train"), base)
    dev_path = resolve(args.dev, cwd) or resolve(run.get("dev"), base)
    out_dir = resolve(args.out, cwd) or resolve(run.get("output_dir"), base)
    if out_dir is None:
        raise ConfigError("train needs an output directory (--out or output_dir)")
    require_file(train_path, "training set")
    require_file(dev_path, "dev set")

    echo_config(out_dir, {"train": str(train_path), "dev": str(dev_path),
                          "output_dir": str(out_dir), **cfg.to_dict()})
    train_set = load_dataset(train_path, "train")
    dev_set = load_dataset(dev_path, "dev")
    start = time.perf_counter()
    result = train(cfg, train_set, dev_set)
    log.info("training took %.1fs", time.perf_counter() - start)
    result.checkpoint.save(out_dir / "checkpoint.json")
    (out_dir / "history.jsonl").write_text(history_lines(result.history), encoding="utf-8")
    emit({"best_epoch": result.checkpoint.epoch, "epochs_run": len(result.history),
          "initial_dev_loss": result.initial_dev_loss, **result.checkpoint.dev_metrics})
    return EXIT_OK


def _modality(args) -> str:
    if args.text_only:
        return "text"
    if args.table_only:
        return "table"
    return "both"


def cmd_eval(args) -> int:
    ckpt = Checkpoint.load(require_file(Path(args.checkpoint), "checkpoint"))
    ds = load_dataset(require_file(Path(args.dataset), "dataset"), args.split)
    report = evaluate(ckpt, ds, _modality(args))
    emit({"modality": _modality(args), **report.to_dict()})
    return EXIT_OK


def cmd_predict(args) -> int:
    ckpt = Checkpoint.load(require_file(Path(args.checkpoint), "checkpoint"))
    ds = load_dataset(require_file(Path(args.dataset), "dataset"), "test")
    for row in predict(ckpt, ds, _modality(args)):
        emit(row)
    return EXIT_OK


@dataclasses.dataclass
class GradcheckConfig:
    seed: int = 0
    h: float = 1e-5
    limit: int = 48
    tolerance: float = GRADCHECK_TOLERANCE
    corrupt_gradient: str | None = None
    model: ModelConfig = dataclasses.field(default_factory=lambda: gradcheck_model())

    def __post_init__(self):
        if isinstance(self.model, dict):
            base = gradcheck_model().to_dict()
            for part in ("text", "table", "fusion"):
                base[part].update(self.model.get(part, {}))
            base.update({k: v for k, v in self.model.items() if k not in ("text", "table", "fusion")})
            self.model = ModelConfig(**base)
        if self.h <= 0 or self.limit < 1 or self.tolerance <= 0:
            raise ConfigError("h, limit and tolerance must be positive")


_NESTED[GradcheckConfig] = {"model": ModelConfig}


def gradcheck_model() -> ModelConfig:
    """Toy 2-layer / 4-head / width-64 model used by the gradient check."""
    enc = dict(dim=64, heads=4, layers=2, max_seq_len=32, max_rows=8, max_cols=4)
    return ModelConfig(
        text=EncoderConfig(kind="learned", **enc),
        table=EncoderConfig(kind="structural", **enc),
        fusion=FusionConfig(hidden=64, heads=4, dropout=0.0),
        vocab_size=512,
    )


def gradcheck_batch(cfg: GradcheckConfig, model_cfg: ModelConfig):
    """A fixed one-claim batch drawn from the joint synthetic task."""
    synth = SynthConfig(seed=cfg.seed, task="joint", n_train=3, n_dev=1, n_test=1)
    record = generate(synth)["train"].records[0]
    vocab = Vocabulary.build(corpus_texts([record]), model_cfg.vocab_size)
    model = VerifierModel(model_cfg, vocab, seed=cfg.seed)
    return model, [model.featurize(record, "both")]


def run_gradcheck(cfg: GradcheckConfig):
    model, batch = gradcheck_batch(cfg, cfg.model)
    if cfg.corrupt_gradient is not None and cfg.corrupt_gradient not in model.store:
        raise ConfigError(f"corrupt_gradient: no parameter named {cfg.corrupt_gradient!r}")

    def loss_and_backward(store):
        t = Tape(store)
        loss = model.loss(t, batch)
        t.backward(loss)
        return float(loss.value)

    def loss_only(store):
        return float(model.loss(Tape(store, grad=False), batch).value)

    return compare_gradients(loss_and_backward, loss_only, model.store, h=cfg.h, limit=cfg.limit,
                             seed=cfg.seed, corrupt=cfg.corrupt_gradient,
                             tolerance=cfg.tolerance)


def cmd_gradcheck(args) -> int:
    data, base = read_config(args.config)
    run, rest = split_keys(data, {"output_dir"}, "gradcheck config")
    rest = override(rest, seed=args.seed, corrupt_gradient=args.corrupt_gradient)
    cfg = build(GradcheckConfig, rest, "gradcheck config")
    out_dir = resolve(args.out, Path.cwd()) or resolve(run.get("output_dir"), base)
    effective = {k: v for k, v in dataclasses.asdict(cfg).items() if k != "model"}
    effective["model"] = cfg.model.to_dict()
    if out_dir is not None:
        echo_config(out_dir, {"output_dir": str(out_dir), **effective})
    start = time.perf_counter()
    results = run_gradcheck(cfg)
    for r in results:
        emit({"group": r.name, "checked": r.checked, "size": r.size,
              "max_rel_error": r.max_rel_error, "passed": r.passed(cfg.tolerance)})
    worst = max(results, key=lambda r: r.max_rel_error)
    ok = all(r.passed(cfg.tolerance) for r in results)
    emit({"summary": "gradcheck", "groups": len(results), "passed": ok,
          "max_rel_error": worst.max_rel_error, "worst_group": worst.name,
          "tolerance": cfg.tolerance, "seconds": round(time.perf_counter() - start, 3)})
    return EXIT_OK if ok else EXIT_FAIL


# -- wiring ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="factfuse", description="Claim verification over text and tables.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic train/dev/test files")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--task")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a verifier and write a checkpoint")
    p.add_argument("--config")
    p.add_argument("--train")
    p.add_argument("--dev")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--modality", choices=["both", "text", "table"])
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "score a checkpoint on a labelled dataset"),
                                 ("predict", cmd_predict, "predict verdicts for a dataset")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("checkpoint")
        p.add_argument("dataset")
        group = p.add_mutually_exclusive_group()
        group.add_argument("--text-only", action="store_true")
        group.add_argument("--table-only", action="store_true")
        group.add_argument("--both", action="store_true")
        if name == "eval":
            p.add_argument("--split", default="dev", choices=["train", "dev", "test"])
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", help="compare backward against finite differences")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--corrupt-gradient", dest="corrupt_gradient")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def setup_logging() -> tuple[logging.Handler, int]:
    """Attach a stderr handler to the package logger; returns what to undo."""
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    previous = log.level
    log.setLevel(getattr(logging, level, logging.WARNING))
    log.addHandler(handler)
    return handler, previous


def main(argv: list[str] | None = None) -> int:
    handler, previous = setup_logging()
    try:
        return _run(argv)
    finally:
        log.removeHandler(handler)
        log.setLevel(previous)


def _run(argv: list[str] | None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, FactFuseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
