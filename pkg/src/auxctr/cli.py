"""Command-line entry points: data generation, training, evaluation, ablations and the case study.

Configs are flat ``key = value`` text files; command-line flags win over the
file. Every command writes a ``manifest.json`` with the resolved config, seeds,
input digests and artifact paths next to its outputs.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__
from .data import Dataset
from .embedding import Schema
from .errors import (
    ConfigError,
    CorruptCheckpointError,
    LabelError,
    NumericError,
    OutOfVocabularyError,
    ParseError,
    SchemaError,
    UndefinedMetricError,
    UsageError,
)
from .experiments import MODELS, ablate_sampling, ablate_weights, write_rows, write_summary, write_weight_rows
from .metrics import evaluate, relevance_case_study
from .seeding import Seeds
from .synthetic import SyntheticConfig, generate, write_synthetic
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train, write_run_log

log = logging.getLogger("auxctr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
OUT_ENV = "AUXCTR_OUT"

DRIVER_KEYS = {"ratios", "models", "seeds", "lambda_uim_grid", "lambda_nip_grid"}


class CliUsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliUsageError(f"{self.prog}: {message}")


# -- config files -------------------------------------------------------------

def _parse_value(raw: str):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    if "," in raw:
        return [_parse_value(part) for part in raw.split(",") if part.strip()]
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


def read_config(path: str | Path | None) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; dashes in keys become underscores."""
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CliUsageError(f"config file not found: {path}")
    out = {}
    for n, line in enumerate(p.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliUsageError(f"{path}:{n}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = _parse_value(value)
    return out


def _split(cfg: dict, cls) -> tuple[dict, dict]:
    known = {f.name for f in fields(cls)}
    return {k: v for k, v in cfg.items() if k in known}, {k: v for k, v in cfg.items() if k not in known}


def _train_config(base: dict, args) -> TrainConfig:
    overrides = {
        "lambda_uim": args.lambda_uim, "lambda_nip": args.lambda_nip, "sampling_ratio": args.sampling_ratio,
        "seed": args.seed, "epochs": args.epochs, "lr": args.lr, "batch_size": args.batch_size,
    }
    merged = {**base, **{k: v for k, v in overrides.items() if v is not None}}
    known, extra = _split(merged, TrainConfig)
    extra = {k: v for k, v in extra.items() if k not in DRIVER_KEYS}
    if extra:
        raise ConfigError(f"unknown training options: {sorted(extra)}")
    return TrainConfig.from_dict(known)


def _as_list(value, cast) -> list:
    if value is None:
        return []
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    if not isinstance(value, list):
        value = [value]
    return [cast(v) for v in value]


# -- io helpers ---------------------------------------------------------------

def _out_dir(args, command: str) -> Path:
    out = Path(args.out) if args.out else Path(os.environ.get(OUT_ENV, "runs")) / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, config: dict, inputs: dict, artifacts: dict, seeds=None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "seeds": seeds,
        "inputs": {k: {"path": str(p), "sha256": _digest(Path(p))} for k, p in inputs.items()},
        "artifacts": {k: str(p) for k, p in artifacts.items()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _data_paths(data_dir: str) -> dict[str, Path]:
    root = Path(data_dir)
    paths = {"schema": root / "schema.txt", "train": root / "train.tsv", "test": root / "test.tsv"}
    missing = [str(p) for p in paths.values() if not p.is_file()]
    if missing:
        raise FileNotFoundError(f"missing data files: {', '.join(missing)}")
    return paths


def _load(paths: dict[str, Path], split: str, m_max: int) -> tuple[Schema, Dataset]:
    schema = Schema.load(paths["schema"])
    return schema, Dataset.load(paths[split], schema, m_max)


# -- commands -----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = read_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    syn = SyntheticConfig.from_dict(cfg)
    out = _out_dir(args, "gen-data")
    data = generate(syn)
    paths = write_synthetic(data, out)
    inputs = {"config": args.config} if args.config else {}
    _write_manifest(out, "gen-data", syn.to_dict(), inputs, paths, seeds={"seed": syn.seed})
    n_pos = sum(i.label for i in data.train)
    print(f"wrote {len(data.train)} train / {len(data.test)} test impressions to {out} "
          f"(train positive rate {n_pos / max(len(data.train), 1):.4f})")
    return EXIT_OK


def cmd_train(args) -> int:
    base = read_config(args.config)
    if args.resume and not args.config:
        _, _, meta = load_checkpoint(args.resume)
        base = meta.get("train") or {}
    cfg = _train_config(base, args)
    paths = _data_paths(args.data)
    schema, train_ds = _load(paths, "train", cfg.m_max)
    out = _out_dir(args, "train")
    ckpt = out / "model.ckpt"
    run_log = out / "run_log.jsonl"
    result = train(cfg, train_ds, schema, resume=args.resume, max_steps=args.max_steps)
    save_checkpoint(result.params, result.state, ckpt, step=result.step, train_config=cfg)
    write_run_log(result.log, run_log, append=args.resume is not None and run_log.exists())
    inputs = {k: paths[k] for k in ("schema", "train")}
    if args.resume:
        inputs["resume"] = args.resume
    _write_manifest(out, "train", cfg.to_dict(), inputs, {"checkpoint": ckpt, "run_log": run_log},
                    seeds={"seed": cfg.seed})
    last = result.log[-1] if result.log else None
    msg = f"trained {len(result.log)} steps (total {result.step}) on {result.train_size} rows -> {ckpt}"
    if last is not None:
        msg += f"; last L_total {last.L_total:.5f}"
    print(msg)
    return EXIT_OK


def cmd_eval(args) -> int:
    params, _, meta = load_checkpoint(args.checkpoint)
    m_max = int((meta.get("train") or {}).get("m_max", TrainConfig().m_max))
    paths = _data_paths(args.data)
    schema, ds = _load(paths, args.split, m_max)
    if schema != params.schema:
        raise SchemaError("data schema does not match the checkpoint's schema")
    report = evaluate(params, ds, calibrate_ratio=args.calibrate)
    out = _out_dir(args, "eval")
    report_path = out / "report.json"
    report.save(report_path)
    _write_manifest(out, "eval", {"split": args.split, "calibrate": args.calibrate, "m_max": m_max},
                    {"checkpoint": args.checkpoint, "schema": paths["schema"], args.split: paths[args.split]},
                    {"report": report_path})
    print(report.to_json())
    return EXIT_OK


def _driver_setup(args, command):
    base = read_config(args.config)
    cfg = _train_config(base, args)
    paths = _data_paths(args.data)
    schema, train_ds = _load(paths, "train", cfg.m_max)
    _, test_ds = _load(paths, "test", cfg.m_max)
    seeds = _as_list(args.seeds if args.seeds is not None else base.get("seeds", [0]), int)
    return base, cfg, paths, schema, train_ds, test_ds, seeds, _out_dir(args, command)


def cmd_ablate_sampling(args) -> int:
    base, cfg, paths, schema, train_ds, test_ds, seeds, out = _driver_setup(args, "ablate-sampling")
    ratios = _as_list(args.ratios if args.ratios is not None else base.get("ratios", [0.1, 0.3, 0.5, 1.0]), float)
    models = _as_list(args.models if args.models is not None else base.get("models", list(MODELS)), str)
    for m in models:
        if m not in MODELS:
            raise ConfigError(f"unknown model {m!r}; expected one of {MODELS}")
    rows = ablate_sampling(cfg, train_ds, test_ds, schema, ratios, models, seeds)
    results, summary = out / "results.tsv", out / "summary.tsv"
    write_rows(rows, results)
    write_summary(rows, summary)
    config = {**cfg.to_dict(), "ratios": ratios, "models": models, "seeds": seeds}
    _write_manifest(out, "ablate-sampling", config, paths, {"results": results, "summary": summary},
                    seeds={"seeds": seeds})
    print(summary.read_text(), end="")
    return EXIT_OK


def cmd_ablate_weights(args) -> int:
    base, cfg, paths, schema, train_ds, test_ds, seeds, out = _driver_setup(args, "ablate-weights")
    grid_default = [0.0, 0.01, 0.05, 0.1, 0.5]
    uim_grid = _as_list(args.lambda_uim_grid if args.lambda_uim_grid is not None
                        else base.get("lambda_uim_grid", grid_default), float)
    nip_grid = _as_list(args.lambda_nip_grid if args.lambda_nip_grid is not None
                        else base.get("lambda_nip_grid", grid_default), float)
    rows = ablate_weights(cfg, train_ds, test_ds, schema, uim_grid, nip_grid, seeds)
    results, summary = out / "results.tsv", out / "summary.tsv"
    write_weight_rows(rows, results)
    write_summary(rows, summary)
    config = {**cfg.to_dict(), "lambda_uim_grid": uim_grid, "lambda_nip_grid": nip_grid, "seeds": seeds}
    _write_manifest(out, "ablate-weights", config, paths, {"results": results, "summary": summary},
                    seeds={"seeds": seeds})
    print(summary.read_text(), end="")
    return EXIT_OK


def cmd_case_study(args) -> int:
    paths = _data_paths(args.data)
    out = _out_dir(args, "case-study")
    artifacts, means = {}, {}
    used = set()
    for i, ckpt in enumerate(args.checkpoints):
        params, _, meta = load_checkpoint(ckpt)
        m_max = int((meta.get("train") or {}).get("m_max", TrainConfig().m_max))
        schema, ds = _load(paths, args.split, m_max)
        if schema != params.schema:
            raise SchemaError(f"{ckpt}: data schema does not match the checkpoint's schema")
        # same sample of positives for every checkpoint
        hist = relevance_case_study(params, ds, args.k, Seeds(args.seed)("case-study"))
        name = Path(ckpt).stem
        if name in used:
            name = f"{name}_{i}"
        used.add(name)
        path = out / f"hist_{name}.tsv"
        path.write_text(hist.to_tsv())
        artifacts[name] = path
        means[name] = {"checkpoint": str(ckpt), "mean_cosine": hist.mean, "n": int(hist.counts.sum())}
    summary = out / "summary.json"
    summary.write_text(json.dumps(means, indent=2, sort_keys=True) + "\n")
    inputs = {f"checkpoint_{i}": c for i, c in enumerate(args.checkpoints)}
    inputs.update({"schema": paths["schema"], args.split: paths[args.split]})
    _write_manifest(out, "case-study", {"k": args.k, "split": args.split}, inputs,
                    {**artifacts, "summary": summary}, seeds={"seed": args.seed})
    for name, m in means.items():
        print(f"{name}\tmean_cosine={m['mean_cosine']:.6f}\tn={m['n']}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--data", required=True, help="directory with schema.txt, train.tsv, test.tsv")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command>)")
    p.add_argument("--lambda-uim", type=float)
    p.add_argument("--lambda-nip", type=float)
    p.add_argument("--sampling-ratio", type=float, help="negative keep-rate, training data only")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="auxctr", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic dataset with planted affinity")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model")
    _train_flags(p)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--max-steps", type=int, help="stop after this many total steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="AUC and logloss of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--calibrate", type=float, metavar="W", help="re-calibrate for negative keep-rate W")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate-sampling", help="AUC over sampling ratios x model variants x seeds")
    _train_flags(p)
    p.add_argument("--ratios", help="comma list, e.g. 0.1,0.3,0.5,1.0")
    p.add_argument("--models", help=f"comma list from {','.join(MODELS)}")
    p.add_argument("--seeds", help="comma list of seeds")
    p.set_defaults(func=cmd_ablate_sampling)

    p = sub.add_parser("ablate-weights", help="AUC over match-loss weight grids x seeds")
    _train_flags(p)
    p.add_argument("--lambda-uim-grid", help="comma list")
    p.add_argument("--lambda-nip-grid", help="comma list")
    p.add_argument("--seeds", help="comma list of seeds")
    p.set_defaults(func=cmd_ablate_weights)

    p = sub.add_parser("case-study", help="user-item cosine histograms, one per checkpoint")
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--k", type=int, default=2000, help="positives to sample")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_case_study)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except CliUsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        build_parser().print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliUsageError, ConfigError, UsageError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, SchemaError, LabelError, OutOfVocabularyError, CorruptCheckpointError,
            UndefinedMetricError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
