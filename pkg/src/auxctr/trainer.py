"""Adam, the joint training loop and checkpoint save/load."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .checkpoint import read_segments, write_segments
from .data import Batch, Dataset
from .embedding import Schema
from .errors import ConfigError, CorruptCheckpointError, DimensionError, NumericError
from .losses import AuxLoss, bce_loss, nip_loss, total_loss, uim_loss
from .model import LossGrads, ModelConfig, ModelParams, backward, forward
from .seeding import Seeds

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    dim: int = 16
    m_max: int = 20
    tau_uim: float = 0.07
    tau_nip: float = 0.1
    lambda_uim: float = 0.1
    lambda_nip: float = 0.05
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 8
    sampling_ratio: float = 1.0
    seed: int = 0
    tower_widths: tuple[int, ...] = (128, 64)
    proj_dim: int = 32
    shuffle_buffer: int = 100_000
    aux_heads: bool = True

    def __post_init__(self):
        self.tower_widths = tuple(int(w) for w in self.tower_widths)
        self.validate()

    def validate(self) -> None:
        if self.tau_uim <= 0 or self.tau_nip <= 0:
            raise ConfigError("temperatures must be positive")
        if self.lambda_uim < 0 or self.lambda_nip < 0:
            raise ConfigError("loss weights must be non-negative")
        if not 0.0 < self.sampling_ratio <= 1.0:
            raise ConfigError(f"sampling ratio must lie in (0, 1], got {self.sampling_ratio}")
        if self.batch_size < 2:
            raise ConfigError("batch size must be >= 2 for in-batch negatives")
        if self.dim < 1 or self.proj_dim < 1 or self.m_max < 1 or self.epochs < 0 or self.lr <= 0:
            raise ConfigError("dim, proj_dim, m_max must be >= 1; epochs >= 0; lr > 0")

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.dim, self.proj_dim, self.tower_widths, self.aux_heads)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tower_widths"] = list(self.tower_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def _adam_update(param, grad, m, v, state: AdamState, bc1: float, bc2: float) -> None:
    m *= state.beta1
    m += (1.0 - state.beta1) * grad
    v *= state.beta2
    v += (1.0 - state.beta2) * (grad * grad)
    param -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam step, in place.

    Embedding tables update only their touched rows; untouched rows and their
    moment buffers are left bit-for-bit alone. Table gradients are cleared.
    """
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.named_dense():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        _adam_update(p, g, state.m[name], state.v[name], state, bc1, bc2)
    for name, table in params.tables.items():
        key = f"table/{name}"
        if key not in state.m:
            state.m[key] = np.zeros_like(table.weight)
            state.v[key] = np.zeros_like(table.weight)
        rows = table.touched
        if rows.size:
            w, m, v = table.weight[rows], state.m[key][rows], state.v[key][rows]
            _adam_update(w, table.grad[rows], m, v, state, bc1, bc2)
            table.weight[rows], state.m[key][rows], state.v[key][rows] = w, m, v
        table.zero_grad()


@dataclass
class StepRecord:
    step: int
    L_main: float
    L_UIM: float
    L_NIP: float
    L_total: float
    n: int
    n_plus: int
    skip_uim: bool
    skip_nip: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self))


_SKIPPED = AuxLoss(0.0, None, None, True)


def _forward_losses(params: ModelParams, batch: Batch, cfg: TrainConfig, step: int = 0, with_grad: bool = True):
    art = forward(params, batch, mode="train")
    l_main, dp = bce_loss(art.p, batch.labels)
    uim = _SKIPPED
    nip = _SKIPPED
    if art.r_user is not None:
        uim = uim_loss(art.r_user, art.r_item, batch.labels, cfg.tau_uim, with_grad)
    if art.prefix is not None:
        nip = nip_loss(art.prefix, art.next_emb, art.position_valid, cfg.tau_nip, with_grad)
    l_total = total_loss(l_main, uim.value, nip.value, cfg.lambda_uim, cfg.lambda_nip)
    for term, value in (("L_main", l_main), ("L_UIM", uim.value), ("L_NIP", nip.value), ("L_total", l_total)):
        if not math.isfinite(value):
            raise NumericError(f"non-finite {term} = {value} at step {step}")
    record = StepRecord(step, l_main, uim.value, nip.value, l_total, batch.n, batch.n_plus, uim.skipped, nip.skipped)
    return record, art, dp, uim, nip


def batch_loss(params: ModelParams, batch: Batch, cfg: TrainConfig) -> StepRecord:
    """Losses at the current parameters, without touching any gradient buffer."""
    return _forward_losses(params, batch, cfg, with_grad=False)[0]


def loss_and_grads(params: ModelParams, batch: Batch, cfg: TrainConfig, step: int = 0):
    """Forward, all three losses, and backward for one batch.

    Auxiliary losses are always evaluated for the log; their gradients are
    only propagated when their weight is positive and the batch is not skipped.
    """
    record, art, dp, uim, nip = _forward_losses(params, batch, cfg, step)
    up = LossGrads(dp)
    if cfg.lambda_uim > 0 and not uim.skipped:
        up.d_r_user = cfg.lambda_uim * uim.grad_a
        up.d_r_item = cfg.lambda_uim * uim.grad_b
    if cfg.lambda_nip > 0 and not nip.skipped:
        up.d_prefix = cfg.lambda_nip * nip.grad_a
        up.d_next = cfg.lambda_nip * nip.grad_b
    grads = backward(params, batch, art, up)
    return record, grads


@dataclass
class TrainResult:
    params: ModelParams
    state: AdamState
    log: list[StepRecord]
    config: TrainConfig
    step: int
    train_size: int


def _training_rows(cfg: TrainConfig, data: Dataset) -> Dataset:
    if cfg.sampling_ratio < 1.0:
        return data.downsample(cfg.sampling_ratio, Seeds(cfg.seed)("downsample"))
    return data


def train(
    cfg: TrainConfig,
    data: Dataset,
    schema: Schema,
    *,
    resume: str | Path | None = None,
    max_steps: int | None = None,
    on_step: Callable[[StepRecord], None] | None = None,
) -> TrainResult:
    """Train from scratch or resume from a checkpoint.

    The down-sampled training set, each epoch's shuffle and the parameter
    init come from independent named sub-streams of ``cfg.seed``, so a resumed
    run replays the exact batch order of an uninterrupted one.
    """
    cfg.validate()
    if resume is not None:
        params, state, meta = load_checkpoint(resume)
        start_step = int(meta["step"])
    else:
        params = ModelParams(schema, cfg.model_config(), seed=cfg.seed)
        state = AdamState(lr=cfg.lr)
        start_step = 0
    rows = _training_rows(cfg, data)
    per_epoch = rows.num_batches(cfg.batch_size, training=True)
    if per_epoch == 0:
        raise ConfigError(f"{len(rows)} training rows cannot fill a batch of {cfg.batch_size}")
    seeds = Seeds(cfg.seed)
    records: list[StepRecord] = []
    step = start_step
    total_steps = per_epoch * cfg.epochs
    for epoch in range(start_step // per_epoch, cfg.epochs):
        order_rng = seeds("shuffle", epoch)
        for i, batch in enumerate(rows.iter_batches(cfg.batch_size, order_rng, cfg.shuffle_buffer)):
            if epoch * per_epoch + i < start_step:
                continue
            if max_steps is not None and step >= max_steps:
                break
            record, grads = loss_and_grads(params, batch, cfg, step)
            adam_step(params, grads, state)
            records.append(record)
            if on_step is not None:
                on_step(record)
            step += 1
        if step % max(per_epoch, 1) == 0 or step >= total_steps:
            log.info("epoch %d done, step %d", epoch, step)
        if max_steps is not None and step >= max_steps:
            break
    return TrainResult(params, state, records, cfg, step, len(rows))


def write_run_log(records: Iterable[StepRecord], path: str | Path, append: bool = False) -> None:
    with open(path, "a" if append else "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def save_checkpoint(
    params: ModelParams, state: AdamState, path: str | Path, *, step: int = 0, train_config: TrainConfig | None = None
) -> None:
    arrays = {f"dense/{k}": v for k, v in params.dense.items()}
    arrays.update({f"table/{k}": t.weight for k, t in params.tables.items()})
    arrays.update({f"adam.m/{k}": v for k, v in state.m.items()})
    arrays.update({f"adam.v/{k}": v for k, v in state.v.items()})
    arrays["adam/t"] = np.array([state.t], dtype=np.float64)
    arrays["meta/step"] = np.array([step], dtype=np.float64)
    doc = {
        "schema": params.schema.to_text(),
        "model": params.config.to_dict(),
        "adam": {"lr": state.lr, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps},
        "train": train_config.to_dict() if train_config is not None else None,
    }
    write_segments(path, arrays, {"meta/config": doc})


def load_checkpoint(path: str | Path) -> tuple[ModelParams, AdamState, dict]:
    arrays, docs = read_segments(path)
    try:
        doc = docs["meta/config"]
        schema = Schema.from_text(doc["schema"])
        params = ModelParams(schema, ModelConfig.from_dict(doc["model"]))
        for k, v in params.dense.items():
            v[...] = arrays[f"dense/{k}"]
        for k, t in params.tables.items():
            t.weight[...] = arrays[f"table/{k}"]
        state = AdamState(t=int(arrays["adam/t"][0]), **doc["adam"])
        for key, arr in arrays.items():
            if key.startswith("adam.m/"):
                state.m[key[len("adam.m/"):]] = arr.copy()
            elif key.startswith("adam.v/"):
                state.v[key[len("adam.v/"):]] = arr.copy()
        meta = {"step": int(arrays["meta/step"][0]), "train": doc.get("train")}
    except (KeyError, ValueError) as exc:
        raise CorruptCheckpointError(f"{path}: missing or malformed segment ({exc})") from None
    return params, state, meta
