"""The CTR network: shared embeddings, main tower, and the two match heads.

The main tower is ``sigmoid(MLP(concat(e_UP, e_US, e_I, e_C)))`` with
``e_US`` the mean-pooled output of its own self-attention encoder. The
user-item match head projects ``concat(e_UP, pool(SA_uim(X)))`` and ``e_I``
into a shared space; the next-item head runs causal attention over the
behavior sequence. Only the main tower runs at inference.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import kernels as K
from .data import Batch, check_schema_matches
from .embedding import EmbeddingLayer, Schema
from .encoder import (
    AttentionParams,
    causal_self_attention,
    causal_self_attention_backward,
    mean_pool,
    mean_pool_backward,
    self_attention,
    self_attention_backward,
)
from .errors import ConfigError, UsageError
from .seeding import Seeds


@dataclass
class ModelConfig:
    dim: int = 16
    proj_dim: int = 32
    tower_widths: tuple[int, ...] = (128, 64)
    aux_heads: bool = True

    def to_dict(self) -> dict:
        return {"dim": self.dim, "proj_dim": self.proj_dim,
                "tower_widths": list(self.tower_widths), "aux_heads": self.aux_heads}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(int(d["dim"]), int(d["proj_dim"]), tuple(int(w) for w in d["tower_widths"]), bool(d["aux_heads"]))


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class ModelParams:
    """All trainable state. Dense tensors live in ``dense`` keyed by name.

    Attention parameter objects are views onto arrays in ``dense``, so any
    in-place update through either handle is seen by both.
    """

    def __init__(self, schema: Schema, config: ModelConfig, seed: int = 0):
        self.schema = schema
        self.config = config
        seeds = Seeds(seed)
        d = config.dim
        self.embeddings = EmbeddingLayer(schema, d, seeds=lambda name: seeds("init/" + name))
        self.dense: dict[str, np.ndarray] = {}

        def attn(owner: str) -> AttentionParams:
            p = AttentionParams.init(owner, d, seeds(f"init/attn.{owner}"))
            for k, v in p.named().items():
                self.dense[f"attn.{owner}.{k}"] = v
            return p

        def mlp(prefix: str, widths: list[int]) -> int:
            for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
                self.dense[f"{prefix}.{i}.W"] = _glorot(seeds(f"init/{prefix}.{i}.W"), a, b)
                self.dense[f"{prefix}.{i}.b"] = np.zeros(b)
            return len(widths) - 1

        emb = self.embeddings
        self.main_attn = attn("main-tower")
        tower_in = emb.profile_width + d + emb.item_width + emb.context_width
        self.tower_layers = mlp("tower", [tower_in, *config.tower_widths, 1])
        self.uim_attn = self.nip_attn = None
        if config.aux_heads:
            self.uim_attn = attn("uim")
            self.nip_attn = attn("nip")
            dp = config.proj_dim
            mlp("proj_user", [emb.profile_width + d, 2 * dp, dp])
            mlp("proj_item", [emb.item_width, 2 * dp, dp])

    @property
    def dim(self) -> int:
        return self.config.dim

    @property
    def tables(self):
        return self.embeddings.tables

    def named_dense(self) -> Iterator[tuple[str, np.ndarray]]:
        yield from self.dense.items()

    def zero_grad(self) -> None:
        self.embeddings.zero_grad()


def _mlp_forward(params: ModelParams, prefix: str, n_layers: int, x: np.ndarray, final_relu: bool = False):
    cache = []
    h = x
    for i in range(n_layers):
        W, b = params.dense[f"{prefix}.{i}.W"], params.dense[f"{prefix}.{i}.b"]
        a = K.affine(h, W, b)
        cache.append((h, a))
        h = K.relu(a) if (i < n_layers - 1 or final_relu) else a
    return h, cache


def _mlp_backward(params: ModelParams, prefix: str, cache, dout: np.ndarray, grads: dict) -> np.ndarray:
    g = dout
    n_layers = len(cache)
    for i in reversed(range(n_layers)):
        h, a = cache[i]
        if i < n_layers - 1:
            g = K.relu_backward(g, a)
        W = params.dense[f"{prefix}.{i}.W"]
        g, dW, db = K.affine_backward(g, h, W)
        grads[f"{prefix}.{i}.W"] = dW
        grads[f"{prefix}.{i}.b"] = db
    return g


@dataclass
class ForwardArtifacts:
    p: np.ndarray
    mode: str
    r_user: np.ndarray | None = None
    r_item: np.ndarray | None = None
    prefix: np.ndarray | None = None
    next_emb: np.ndarray | None = None
    position_valid: np.ndarray | None = None
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_plus(self) -> int:
        return int(self.cache["labels"].sum())


@dataclass
class LossGrads:
    """Upstream gradients (already weighted) for the three heads."""

    dp: np.ndarray
    d_r_user: np.ndarray | None = None
    d_r_item: np.ndarray | None = None
    d_prefix: np.ndarray | None = None
    d_next: np.ndarray | None = None


def forward(params: ModelParams, batch: Batch, mode: str = "train", heads=("uim", "nip")) -> ForwardArtifacts:
    if mode not in ("train", "inference"):
        raise UsageError(f"mode must be 'train' or 'inference', got {mode!r}")
    check_schema_matches(batch, params.schema)
    emb = params.embeddings
    valid = batch.valid
    X = emb.behaviors(batch.beh_item, batch.beh_cat, valid)
    e_up = emb.profile(batch.profile)
    e_i = emb.item(batch.item)
    e_c = emb.context(batch.context)

    H, attn_cache = self_attention(X, params.main_attn, valid)
    e_us = mean_pool(H, valid)
    parts = [e_up, e_us, e_i, e_c]
    z = K.concat_cols(parts)
    logits, tower_cache = _mlp_forward(params, "tower", params.tower_layers, z)
    logits = logits[:, 0]
    p = K.sigmoid(logits)
    cache = {
        "X": X, "valid": valid, "main_attn": attn_cache, "widths": [q.shape[1] for q in parts],
        "tower": tower_cache, "labels": batch.labels, "e_up_width": e_up.shape[1],
    }
    art = ForwardArtifacts(p=p, mode=mode, cache=cache)
    if mode == "inference" or not params.config.aux_heads:
        return art

    if "uim" in heads:
        Hu, uim_attn_cache = self_attention(X, params.uim_attn, valid)
        e_u = K.concat_cols([e_up, mean_pool(Hu, valid)])
        art.r_user, cache["proj_user"] = _mlp_forward(params, "proj_user", 2, e_u)
        art.r_item, cache["proj_item"] = _mlp_forward(params, "proj_item", 2, e_i)
        cache["uim_attn"] = uim_attn_cache
    if "nip" in heads and batch.m >= 2:
        art.prefix, cache["nip_attn"] = causal_self_attention(X, params.nip_attn, valid)
        art.next_emb = X[:, 1:, :]
        art.position_valid = valid[:, 1:]
    return art


def backward(params: ModelParams, batch: Batch, art: ForwardArtifacts, grads: LossGrads) -> dict[str, np.ndarray]:
    """Dense gradients by name; embedding gradients land in the tables' buffers."""
    if art.mode != "train":
        raise UsageError("backward needs a train-mode forward pass")
    cache = art.cache
    valid = cache["valid"]
    emb = params.embeddings
    out = {name: np.zeros_like(v) for name, v in params.dense.items()}

    dlogit = K.sigmoid_backward(grads.dp, art.p)[:, None]
    dz = _mlp_backward(params, "tower", cache["tower"], dlogit, out)
    d_eup, d_eus, d_ei, d_ec = K.concat_cols_backward(dz, cache["widths"])
    dH = mean_pool_backward(d_eus, valid)
    dX, g = self_attention_backward(dH, cache["main_attn"])
    for k, v in g.items():
        out[f"attn.main-tower.{k}"] = v

    if grads.d_r_user is not None and "proj_user" in cache:
        de_u = _mlp_backward(params, "proj_user", cache["proj_user"], grads.d_r_user, out)
        d_eup2, d_pool = K.concat_cols_backward(de_u, [cache["e_up_width"], params.dim])
        d_eup = d_eup + d_eup2
        dXu, g = self_attention_backward(mean_pool_backward(d_pool, valid), cache["uim_attn"])
        dX = dX + dXu
        for k, v in g.items():
            out[f"attn.uim.{k}"] = v
        d_ei = d_ei + _mlp_backward(params, "proj_item", cache["proj_item"], grads.d_r_item, out)

    if grads.d_prefix is not None and "nip_attn" in cache:
        dXn, g = causal_self_attention_backward(grads.d_prefix, cache["nip_attn"])
        dX = dX + dXn
        dX[:, 1:, :] += grads.d_next
        for k, v in g.items():
            out[f"attn.nip.{k}"] = v

    emb.profile_backward(batch.profile, d_eup)
    emb.item_backward(batch.item, d_ei)
    emb.context_backward(batch.context, d_ec)
    emb.behaviors_backward(batch.beh_item, batch.beh_cat, valid, dX)
    return out


def calibrate(p: np.ndarray, w: float) -> np.ndarray:
    """Undo negative down-sampling at rate ``w``: ``q = p / (p + (1 - p) / w)``."""
    if not 0.0 < w <= 1.0:
        raise ConfigError(f"sampling ratio must lie in (0, 1], got {w}")
    p = np.asarray(p, dtype=np.float64)
    return p / (p + (1.0 - p) / w)


def predict(params: ModelParams, batch: Batch) -> np.ndarray:
    return forward(params, batch, mode="inference").p


def predict_calibrated(params: ModelParams, batch: Batch, w: float) -> np.ndarray:
    if not 0.0 < w <= 1.0:
        raise ConfigError(f"sampling ratio must lie in (0, 1], got {w}")
    return calibrate(predict(params, batch), w)


def user_item_vectors(params: ModelParams, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
    """User side ``e_UP ++ pool(SA_uim(X))`` and item side ``e_I``.

    When the two concatenations differ in width they are mapped through the
    projection heads so the cosine is defined.
    """
    if not params.config.aux_heads:
        raise UsageError("model has no match heads; user/item vectors are undefined")
    emb = params.embeddings
    valid = batch.valid
    X = emb.behaviors(batch.beh_item, batch.beh_cat, valid)
    Hu, _ = self_attention(X, params.uim_attn, valid)
    user = np.concatenate([emb.profile(batch.profile), mean_pool(Hu, valid)], axis=1)
    item = emb.item(batch.item)
    if user.shape[1] != item.shape[1]:
        user, _ = _mlp_forward(params, "proj_user", 2, user)
        item, _ = _mlp_forward(params, "proj_item", 2, item)
    return user, item
