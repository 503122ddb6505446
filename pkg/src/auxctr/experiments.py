"""Ablation drivers: train/eval grids over sampling ratios, model variants and loss weights.

Every cell is a fresh single-threaded training run from its own seed, so a
grid is reproducible cell by cell and cells can be rerun in any order.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import Dataset
from .embedding import Schema
from .errors import ConfigError
from .metrics import evaluate
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)

MODELS = ("base", "uim", "uim_nip")


def variant(cfg: TrainConfig, model: str) -> TrainConfig:
    """The base model keeps its (untrained) match heads so the case study can read them."""
    if model == "base":
        return replace(cfg, lambda_uim=0.0, lambda_nip=0.0)
    if model == "uim":
        return replace(cfg, lambda_nip=0.0)
    if model == "uim_nip":
        return cfg
    raise ConfigError(f"unknown model {model!r}; expected one of {MODELS}")


def run_cell(cfg: TrainConfig, train_ds: Dataset, test_ds: Dataset, schema: Schema):
    result = train(cfg, train_ds, schema)
    return result, evaluate(result.params, test_ds)


@dataclass
class Row:
    group: str
    setting: float
    model: str
    seed: int
    auc: float
    logloss: float


def ablate_sampling(
    cfg: TrainConfig, train_ds: Dataset, test_ds: Dataset, schema: Schema,
    ratios: Sequence[float], models: Sequence[str], seeds: Sequence[int],
) -> list[Row]:
    rows = []
    for ratio in ratios:
        for model in models:
            for seed in seeds:
                run = replace(variant(cfg, model), sampling_ratio=ratio, seed=seed)
                _, rep = run_cell(run, train_ds, test_ds, schema)
                log.info("ratio=%g model=%s seed=%d auc=%.5f", ratio, model, seed, rep.auc)
                rows.append(Row("sampling", ratio, model, seed, rep.auc, rep.logloss))
    return rows


def ablate_weights(
    cfg: TrainConfig, train_ds: Dataset, test_ds: Dataset, schema: Schema,
    uim_grid: Sequence[float], nip_grid: Sequence[float], seeds: Sequence[int],
) -> list[Row]:
    """Sweep each weight with the other one held at its configured value."""
    rows = []
    for task, grid in (("lambda_uim", uim_grid), ("lambda_nip", nip_grid)):
        for lam in grid:
            for seed in seeds:
                run = replace(cfg, seed=seed, **{task: lam})
                _, rep = run_cell(run, train_ds, test_ds, schema)
                log.info("%s=%g seed=%d auc=%.5f", task, lam, seed, rep.auc)
                rows.append(Row(task, lam, "uim_nip", seed, rep.auc, rep.logloss))
    return rows


def summarize(rows: Iterable[Row]) -> list[tuple[str, float, str, int, float, float]]:
    """Seed-averaged (group, setting, model, n_seeds, mean auc, mean logloss), first-seen order."""
    cells: dict[tuple, list[Row]] = {}
    for r in rows:
        cells.setdefault((r.group, r.setting, r.model), []).append(r)
    return [
        (g, s, m, len(rs), float(np.mean([r.auc for r in rs])), float(np.mean([r.logloss for r in rs])))
        for (g, s, m), rs in cells.items()
    ]


def write_rows(rows: Sequence[Row], path: str | Path, setting_name: str = "ratio") -> None:
    with open(path, "w") as fh:
        fh.write(f"{setting_name}\tmodel\tseed\tauc\tlogloss\n")
        for r in rows:
            fh.write(f"{r.setting!r}\t{r.model}\t{r.seed}\t{r.auc!r}\t{r.logloss!r}\n")


def write_weight_rows(rows: Sequence[Row], path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write("task\tlambda\tseed\tauc\tlogloss\n")
        for r in rows:
            fh.write(f"{r.group}\t{r.setting!r}\t{r.seed}\t{r.auc!r}\t{r.logloss!r}\n")


def write_summary(rows: Sequence[Row], path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write("group\tsetting\tmodel\tn_seeds\tmean_auc\tmean_logloss\n")
        for g, s, m, k, a, ll in summarize(rows):
            fh.write(f"{g}\t{s!r}\t{m}\t{k}\t{a!r}\t{ll!r}\n")

