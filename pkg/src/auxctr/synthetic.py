"""Synthetic impressions with a planted user-item affinity.

Users and items get standard-normal latent vectors. A user's behavior history
is drawn with probability proportional to ``softmax(affinity)`` over all
items, and each impression is clicked with probability
``sigmoid(affinity + offset + position bias + noise)``. The behavior history
therefore carries the same signal the click labels do.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .data import Instance, write_dataset
from .embedding import FieldSchema, Schema
from .errors import ConfigError
from .seeding import Seeds


@dataclass
class SyntheticConfig:
    num_users: int = 4000
    num_items: int = 2000
    num_categories: int = 40
    latent_dim: int = 8
    context_noise_scale: float = 0.3
    base_click_logit_offset: float = -3.4
    behaviors_per_user: int = 20
    impressions: int = 220_000
    test_impressions: int = 20_000
    affinity_scale: float = 2.5
    num_user_groups: int = 20
    num_positions: int = 10
    position_bias: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            if f.name in ("num_users", "num_items", "num_categories", "latent_dim", "behaviors_per_user",
                          "impressions", "num_user_groups", "num_positions"):
                if int(getattr(self, f.name)) < 1:
                    raise ConfigError(f"{f.name} must be >= 1")
        if not 0 <= self.test_impressions < self.impressions:
            raise ConfigError("test_impressions must lie in [0, impressions)")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown synthetic options: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def synthetic_schema(cfg: SyntheticConfig) -> Schema:
    # behavior fields share the target item's tables
    return Schema([
        FieldSchema("user_id", "user-profile", cfg.num_users),
        FieldSchema("user_group", "user-profile", cfg.num_user_groups),
        FieldSchema("beh_item", "behavior-item", cfg.num_items, "item_id"),
        FieldSchema("beh_cat", "behavior-category", cfg.num_categories, "item_cat"),
        FieldSchema("item_id", "item", cfg.num_items),
        FieldSchema("item_cat", "item", cfg.num_categories),
        FieldSchema("position", "context", cfg.num_positions),
    ])


@dataclass
class SyntheticData:
    schema: Schema
    train: list[Instance]
    test: list[Instance]
    users: np.ndarray
    items: np.ndarray
    probs: np.ndarray
    impression_user: np.ndarray
    impression_item: np.ndarray
    user_latent: np.ndarray
    item_latent: np.ndarray


def generate(cfg: SyntheticConfig) -> SyntheticData:
    seeds = Seeds(cfg.seed)
    rng = seeds("synthetic/latent")
    u = rng.standard_normal((cfg.num_users, cfg.latent_dim))
    v = rng.standard_normal((cfg.num_items, cfg.latent_dim))
    scale = cfg.affinity_scale / math.sqrt(cfg.latent_dim)

    cat_centers = rng.standard_normal((cfg.num_categories, cfg.latent_dim))
    item_cat = np.argmax(v @ cat_centers.T, axis=1)
    group_centers = rng.standard_normal((cfg.num_user_groups, cfg.latent_dim))
    user_group = np.argmax(u @ group_centers.T, axis=1)

    hist_rng = seeds("synthetic/history")
    histories = np.empty((cfg.num_users, cfg.behaviors_per_user), dtype=np.int64)
    for uid in range(cfg.num_users):
        logits = scale * (v @ u[uid])
        w = np.exp(logits - logits.max())
        histories[uid] = hist_rng.choice(cfg.num_items, size=cfg.behaviors_per_user, p=w / w.sum())

    imp_rng = seeds("synthetic/impressions")
    n = cfg.impressions
    users = imp_rng.integers(cfg.num_users, size=n)
    items = imp_rng.integers(cfg.num_items, size=n)
    positions = imp_rng.integers(cfg.num_positions, size=n)
    noise = cfg.context_noise_scale * imp_rng.standard_normal(n)
    affinity = scale * np.einsum("ij,ij->i", u[users], v[items])
    logit = affinity + cfg.base_click_logit_offset - cfg.position_bias * positions + noise
    probs = 1.0 / (1.0 + np.exp(-logit))
    labels = (imp_rng.random(n) < probs).astype(np.int64)

    instances = []
    for i in range(n):
        uid, iid = int(users[i]), int(items[i])
        hist = histories[uid]
        instances.append(Instance(
            label=int(labels[i]),
            user_profile=(uid, int(user_group[uid])),
            behaviors=[(int(h), int(item_cat[h])) for h in hist],
            item=(iid, int(item_cat[iid])),
            context=(int(positions[i]),),
        ))
    split = n - cfg.test_impressions
    return SyntheticData(
        schema=synthetic_schema(cfg),
        train=instances[:split],
        test=instances[split:],
        users=users, items=items, probs=probs,
        impression_user=users, impression_item=items,
        user_latent=u, item_latent=v,
    )


def write_synthetic(data: SyntheticData, out_dir: str | Path) -> dict[str, str]:
    """Write train/test TSV, schema, ground-truth sidecar and latent vectors."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "schema": out / "schema.txt",
        "train": out / "train.tsv",
        "test": out / "test.tsv",
        "sidecar": out / "sidecar.tsv",
        "latents": out / "latents.tsv",
    }
    data.schema.save(paths["schema"])
    write_dataset(data.train, paths["train"], data.schema)
    write_dataset(data.test, paths["test"], data.schema)
    n_train = len(data.train)
    with open(paths["sidecar"], "w") as fh:
        fh.write("split\tuser\titem\tprob\n")
        for i, (uid, iid, p) in enumerate(zip(data.users, data.items, data.probs)):
            fh.write(f"{'train' if i < n_train else 'test'}\t{uid}\t{iid}\t{p!r}\n")
    with open(paths["latents"], "w") as fh:
        dims = data.user_latent.shape[1]
        fh.write("kind\tid\t" + "\t".join(f"z{j}" for j in range(dims)) + "\n")
        for kind, mat in (("user", data.user_latent), ("item", data.item_latent)):
            for i, row in enumerate(mat):
                fh.write(f"{kind}\t{i}\t" + "\t".join(repr(float(x)) for x in row) + "\n")
    return {k: str(p) for k, p in paths.items()}


def read_sidecar(path: str | Path, split: str | None = None) -> np.ndarray:
    """Ground-truth click probabilities, optionally restricted to one split."""
    probs = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            s, _, _, p = line.rstrip("\n").split("\t")
            if split is None or s == split:
                probs.append(float(p))
    return np.array(probs)
