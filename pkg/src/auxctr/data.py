"""Instances, the TSV wire format, negative down-sampling and batch assembly.

Dataset line format (one impression per line)::

    label TAB profile TAB behaviors TAB item TAB context

Within a column, per-field indices are joined by ``|`` in schema order.
Behaviors are ``item:category`` pairs joined by ``|``, oldest first. A leading
``#`` line is a header naming the fields of each column.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .embedding import Schema
from .encoder import SequenceMask
from .errors import ConfigError, LabelError, ParseError, SchemaError

_INDEX_RE = re.compile(r"^[A-Za-z_]*(\d+)$")


@dataclass
class Instance:
    label: int
    user_profile: tuple[int, ...]
    behaviors: list[tuple[int, int]]
    item: tuple[int, ...]
    context: tuple[int, ...] = ()


@dataclass
class Batch:
    """Padded stack of instances; behaviors are left-aligned and right-padded."""

    profile: np.ndarray
    beh_item: np.ndarray
    beh_cat: np.ndarray
    lengths: np.ndarray
    item: np.ndarray
    context: np.ndarray
    labels: np.ndarray

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_plus(self) -> int:
        return int(self.labels.sum())

    @property
    def m(self) -> int:
        return int(self.beh_item.shape[1])

    @property
    def valid(self) -> np.ndarray:
        return np.arange(self.m) < self.lengths[:, None]

    @property
    def mask(self) -> SequenceMask:
        return SequenceMask(self.valid)


def header_line(schema: Schema) -> str:
    beh = schema.behavior_item.name
    if schema.behavior_category is not None:
        beh += ":" + schema.behavior_category.name
    cols = [
        "#label",
        "|".join(f.name for f in schema.profile),
        beh,
        "|".join(f.name for f in schema.item),
        "|".join(f.name for f in schema.context),
    ]
    return "\t".join(cols)


def _check_header(line: str, schema: Schema, line_no: int) -> None:
    cols = line.lstrip("#").rstrip("\r\n").split("\t")
    names = []
    for col in cols[1:]:
        for tok in col.split("|"):
            names.extend(t for t in tok.split(":") if t)
    for name in names:
        schema.field(name)  # raises SchemaError on an unknown field
    if len(cols) != 5:
        raise ParseError(f"header has {len(cols)} columns, expected 5", line_no)


def _index(tok: str, line_no: int, what: str) -> int:
    match = _INDEX_RE.match(tok.strip())
    if match is None:
        raise ParseError(f"{what}: {tok!r} is not an integer index", line_no)
    return int(match.group(1))


def _group(col: str, fields, line_no: int, what: str) -> tuple[int, ...]:
    toks = col.split("|") if col else []
    if len(toks) != len(fields):
        raise ParseError(f"{what} column has {len(toks)} values, schema expects {len(fields)}", line_no)
    out = []
    for tok, f in zip(toks, fields):
        idx = _index(tok, line_no, f.name)
        if idx >= f.cardinality:
            raise ParseError(f"{f.name}: index {idx} >= cardinality {f.cardinality}", line_no)
        out.append(idx)
    return tuple(out)


def parse_line(line: str, schema: Schema, line_no: int | None = None) -> Instance:
    cols = line.rstrip("\r\n").split("\t")
    if len(cols) != 5:
        raise ParseError(f"expected 5 tab-separated columns, got {len(cols)}", line_no)
    label_tok, prof, beh, item, ctx = cols
    if label_tok.strip() not in ("0", "1"):
        raise ParseError(f"label must be 0 or 1, got {label_tok!r}", line_no)
    it_f = schema.behavior_item
    cat_f = schema.behavior_category
    behaviors = []
    for tok in (beh.split("|") if beh else []):
        parts = tok.split(":")
        if cat_f is None:
            if len(parts) != 1:
                raise ParseError(f"behavior {tok!r}: schema has no category field", line_no)
            i, c = _index(parts[0], line_no, it_f.name), 0
        else:
            if len(parts) != 2:
                raise ParseError(f"behavior {tok!r} is not item:category", line_no)
            i = _index(parts[0], line_no, it_f.name)
            c = _index(parts[1], line_no, cat_f.name)
            if c >= cat_f.cardinality:
                raise ParseError(f"{cat_f.name}: index {c} >= cardinality {cat_f.cardinality}", line_no)
        if i >= it_f.cardinality:
            raise ParseError(f"{it_f.name}: index {i} >= cardinality {it_f.cardinality}", line_no)
        behaviors.append((i, c))
    return Instance(
        label=int(label_tok),
        user_profile=_group(prof, schema.profile, line_no, "profile"),
        behaviors=behaviors,
        item=_group(item, schema.item, line_no, "item"),
        context=_group(ctx, schema.context, line_no, "context"),
    )


def parse_dataset(path: str | Path, schema: Schema) -> Iterator[Instance]:
    """Yield instances in file order; errors carry the 1-based line number."""
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            if line.startswith("#"):
                _check_header(line, schema, line_no)
                continue
            yield parse_line(line, schema, line_no)


def format_instance(inst: Instance, schema: Schema) -> str:
    if schema.behavior_category is None:
        beh = "|".join(str(i) for i, _ in inst.behaviors)
    else:
        beh = "|".join(f"{i}:{c}" for i, c in inst.behaviors)
    return "\t".join([
        str(inst.label),
        "|".join(map(str, inst.user_profile)),
        beh,
        "|".join(map(str, inst.item)),
        "|".join(map(str, inst.context)),
    ])


def write_dataset(instances: Iterable[Instance], path: str | Path, schema: Schema, header: bool = True) -> int:
    count = 0
    with open(path, "w") as fh:
        if header:
            fh.write(header_line(schema) + "\n")
        for inst in instances:
            fh.write(format_instance(inst, schema) + "\n")
            count += 1
    return count


def downsample_negatives(stream: Iterable[Instance], ratio: float, rng: np.random.Generator) -> Iterator[Instance]:
    """Keep every positive; keep each negative independently with probability ``ratio``."""
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"sampling ratio must lie in [0, 1], got {ratio}")
    for inst in stream:
        if inst.label == 1 or rng.random() < ratio:
            yield inst


def shuffle_buffer(items: Iterable, size: int, rng: np.random.Generator) -> Iterator:
    """Seeded buffered shuffle: emit a random buffered element as each new one arrives."""
    if size <= 1:
        yield from items
        return
    buf = []
    for item in items:
        if len(buf) < size:
            buf.append(item)
            continue
        j = int(rng.integers(size))
        yield buf[j]
        buf[j] = item
    for j in rng.permutation(len(buf)):
        yield buf[j]


def collate(instances: Sequence[Instance], m_max: int, schema: Schema | None = None) -> Batch:
    n = len(instances)
    n_prof = len(instances[0].user_profile) if n else (len(schema.profile) if schema else 0)
    n_item = len(instances[0].item) if n else (len(schema.item) if schema else 0)
    n_ctx = len(instances[0].context) if n else (len(schema.context) if schema else 0)
    beh_item = np.zeros((n, m_max), dtype=np.int64)
    beh_cat = np.zeros((n, m_max), dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    for r, inst in enumerate(instances):
        recent = inst.behaviors[-m_max:] if m_max > 0 else []
        lengths[r] = len(recent)
        for t, (i, c) in enumerate(recent):
            beh_item[r, t] = i
            beh_cat[r, t] = c
    return Batch(
        profile=np.array([inst.user_profile for inst in instances], dtype=np.int64).reshape(n, n_prof),
        beh_item=beh_item,
        beh_cat=beh_cat,
        lengths=lengths,
        item=np.array([inst.item for inst in instances], dtype=np.int64).reshape(n, n_item),
        context=np.array([inst.context for inst in instances], dtype=np.int64).reshape(n, n_ctx),
        labels=np.array([inst.label for inst in instances], dtype=np.int64),
    )


def batches(
    stream: Iterable[Instance],
    batch_size: int,
    shuffle_buffer_size: int,
    m_max: int,
    rng: np.random.Generator,
    training: bool = True,
) -> Iterator[Batch]:
    """Assemble padded batches; a trailing short batch is kept only for evaluation."""
    if training and batch_size < 2:
        raise ConfigError("training batches need at least 2 instances for in-batch negatives")
    if batch_size < 1:
        raise ConfigError("batch size must be >= 1")
    pending: list[Instance] = []
    for inst in shuffle_buffer(stream, shuffle_buffer_size, rng):
        pending.append(inst)
        if len(pending) == batch_size:
            yield collate(pending, m_max)
            pending = []
    if pending and not training:
        yield collate(pending, m_max)


@dataclass
class Dataset:
    """Columnar, pre-padded copy of an instance list for fast batching."""

    profile: np.ndarray
    beh_item: np.ndarray
    beh_cat: np.ndarray
    lengths: np.ndarray
    item: np.ndarray
    context: np.ndarray
    labels: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @classmethod
    def from_instances(cls, instances: Iterable[Instance], m_max: int, schema: Schema) -> "Dataset":
        b = collate(list(instances), m_max, schema)
        return cls(b.profile, b.beh_item, b.beh_cat, b.lengths, b.item, b.context, b.labels)

    @classmethod
    def load(cls, path: str | Path, schema: Schema, m_max: int) -> "Dataset":
        return cls.from_instances(parse_dataset(path, schema), m_max, schema)

    def take(self, idx: np.ndarray) -> Batch:
        return Batch(
            self.profile[idx], self.beh_item[idx], self.beh_cat[idx], self.lengths[idx],
            self.item[idx], self.context[idx], self.labels[idx],
        )

    def subset(self, idx: np.ndarray) -> "Dataset":
        b = self.take(idx)
        return Dataset(b.profile, b.beh_item, b.beh_cat, b.lengths, b.item, b.context, b.labels, dict(self.meta))

    def downsample(self, ratio: float, rng: np.random.Generator) -> "Dataset":
        """Same draws, in the same order, as ``downsample_negatives`` over the rows."""
        if not 0.0 <= ratio <= 1.0:
            raise ConfigError(f"sampling ratio must lie in [0, 1], got {ratio}")
        keep = self.labels == 1
        neg = np.flatnonzero(~keep)
        keep[neg] = rng.random(neg.size) < ratio
        return self.subset(np.flatnonzero(keep))

    def iter_batches(
        self, batch_size: int, rng: np.random.Generator | None = None,
        shuffle_buffer_size: int = 0, training: bool = True,
    ) -> Iterator[Batch]:
        if training and batch_size < 2:
            raise ConfigError("training batches need at least 2 instances for in-batch negatives")
        order = range(len(self))
        if rng is not None and shuffle_buffer_size > 1:
            order = list(shuffle_buffer(order, shuffle_buffer_size, rng))
        order = np.fromiter(order, dtype=np.int64, count=len(self))
        stop = len(order) - len(order) % batch_size if training else len(order)
        for start in range(0, stop, batch_size):
            yield self.take(order[start:start + batch_size])

    def num_batches(self, batch_size: int, training: bool = True) -> int:
        if training:
            return len(self) // batch_size
        return -(-len(self) // batch_size)


def validate_labels(labels: np.ndarray) -> None:
    if not np.isin(labels, (0, 1)).all():
        raise LabelError("labels must be 0 or 1")


def check_schema_matches(batch: Batch, schema: Schema) -> None:
    for arr, fields, what in (
        (batch.profile, schema.profile, "profile"),
        (batch.item, schema.item, "item"),
        (batch.context, schema.context, "context"),
    ):
        if arr.ndim != 2 or arr.shape[1] != len(fields):
            raise SchemaError(f"batch {what} has {arr.shape[-1]} columns, schema expects {len(fields)}")
