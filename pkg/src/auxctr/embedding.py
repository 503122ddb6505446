"""Per-field embedding tables and the feature schema that maps fields to them."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DimensionError, OutOfVocabularyError, SchemaError

ROLES = ("user-profile", "behavior-item", "behavior-category", "item", "context")


@dataclass(frozen=True)
class FieldSchema:
    name: str
    role: str
    cardinality: int
    # fields naming the same table share one embedding matrix
    table: str = ""

    def __post_init__(self):
        if self.role not in ROLES:
            raise SchemaError(f"field {self.name!r}: unknown role {self.role!r}")
        if self.cardinality < 1:
            raise SchemaError(f"field {self.name!r}: cardinality must be >= 1")
        if not self.table:
            object.__setattr__(self, "table", self.name)


class Schema:
    """An ordered set of fields grouped by role."""

    def __init__(self, fields: Iterable[FieldSchema]):
        self.fields = list(fields)
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate field names in schema: {names}")
        tables: dict[str, int] = {}
        for f in self.fields:
            if tables.setdefault(f.table, f.cardinality) != f.cardinality:
                raise SchemaError(f"table {f.table!r} is shared by fields with different cardinalities")
        self.table_sizes = tables
        if len(self.by_role("behavior-item")) != 1:
            raise SchemaError("schema needs exactly one behavior-item field")
        if len(self.by_role("behavior-category")) > 1:
            raise SchemaError("schema allows at most one behavior-category field")
        if not self.by_role("item"):
            raise SchemaError("schema needs at least one item field")

    def by_role(self, role: str) -> list[FieldSchema]:
        return [f for f in self.fields if f.role == role]

    @property
    def profile(self) -> list[FieldSchema]:
        return self.by_role("user-profile")

    @property
    def item(self) -> list[FieldSchema]:
        return self.by_role("item")

    @property
    def context(self) -> list[FieldSchema]:
        return self.by_role("context")

    @property
    def behavior_item(self) -> FieldSchema:
        return self.by_role("behavior-item")[0]

    @property
    def behavior_category(self) -> FieldSchema | None:
        found = self.by_role("behavior-category")
        return found[0] if found else None

    def field(self, name: str) -> FieldSchema:
        for f in self.fields:
            if f.name == name:
                return f
        raise SchemaError(f"unknown field {name!r}")

    def to_text(self) -> str:
        lines = []
        for f in self.fields:
            cols = [f.name, f.role, str(f.cardinality)]
            if f.table != f.name:
                cols.append(f.table)
            lines.append("\t".join(cols))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Schema":
        fields = []
        for line_no, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            cols = line.split()
            if len(cols) not in (3, 4):
                raise SchemaError(f"schema line {line_no}: expected 'name role cardinality [table]'")
            try:
                card = int(cols[2])
            except ValueError:
                raise SchemaError(f"schema line {line_no}: cardinality {cols[2]!r} is not an integer") from None
            fields.append(FieldSchema(cols[0], cols[1], card, cols[3] if len(cols) == 4 else ""))
        return cls(fields)

    @classmethod
    def load(cls, path: str | Path) -> "Schema":
        return cls.from_text(Path(path).read_text())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    def __eq__(self, other):
        return isinstance(other, Schema) and self.fields == other.fields


class EmbeddingTable:
    """K x d embedding matrix with a sparse gradient buffer.

    Gradient rows outside ``touched`` are always exactly zero.
    """

    def __init__(self, name: str, cardinality: int, dim: int, rng: np.random.Generator | None = None):
        if cardinality < 1 or dim < 1:
            raise SchemaError(f"table {name!r}: cardinality and dim must be >= 1")
        self.name = name
        bound = 1.0 / math.sqrt(dim)
        if rng is None:
            self.weight = np.zeros((cardinality, dim))
        else:
            self.weight = rng.uniform(-bound, bound, size=(cardinality, dim))
        self.grad = np.zeros_like(self.weight)
        self._touched = np.zeros(cardinality, dtype=bool)

    @property
    def shape(self) -> tuple[int, int]:
        return self.weight.shape

    @property
    def touched(self) -> np.ndarray:
        """Sorted indices of rows holding a pending gradient."""
        return np.flatnonzero(self._touched)

    def _check(self, indices: np.ndarray) -> None:
        if indices.size == 0:
            return
        lo, hi = indices.min(), indices.max()
        if lo < 0 or hi >= self.weight.shape[0]:
            bad = int(hi if hi >= self.weight.shape[0] else lo)
            raise OutOfVocabularyError(self.name, bad, self.weight.shape[0])

    def lookup(self, index: int) -> np.ndarray:
        self._check(np.asarray([index]))
        return self.weight[index].copy()

    def gather(self, indices: np.ndarray) -> np.ndarray:
        indices = np.asarray(indices, dtype=np.int64)
        self._check(indices)
        return self.weight[indices]

    def accumulate(self, indices: np.ndarray, grads: np.ndarray) -> None:
        indices = np.asarray(indices, dtype=np.int64).reshape(-1)
        grads = grads.reshape(-1, self.weight.shape[1])
        if grads.shape[0] != indices.shape[0]:
            raise DimensionError(f"{indices.shape[0]} indices but {grads.shape[0]} gradient rows")
        np.add.at(self.grad, indices, grads)
        self._touched[indices] = True

    def zero_grad(self) -> None:
        rows = self.touched
        self.grad[rows] = 0.0
        self._touched[rows] = False


class EmbeddingLayer:
    """Embedding lookups for every field group, with matching backward passes.

    Index arrays are batched: profile ``(n, P)``, item ``(n, I)``, context
    ``(n, C)``, behaviors ``(n, m)``. Concatenated outputs follow schema order.
    """

    def __init__(self, schema: Schema, dim: int, rng: np.random.Generator | None = None, *, seeds=None):
        self.schema = schema
        self.dim = dim
        self.tables: dict[str, EmbeddingTable] = {}
        for name, card in schema.table_sizes.items():
            table_rng = seeds(f"embedding/{name}") if seeds is not None else rng
            self.tables[name] = EmbeddingTable(name, card, dim, table_rng)

    def _table(self, f: FieldSchema) -> EmbeddingTable:
        return self.tables[f.table]

    def _concat(self, fields: list[FieldSchema], idx: np.ndarray) -> np.ndarray:
        n = idx.shape[0]
        if idx.ndim != 2 or idx.shape[1] != len(fields):
            raise SchemaError(f"expected {len(fields)} index columns, got shape {idx.shape}")
        if not fields:
            return np.zeros((n, 0))
        for j, f in enumerate(fields):
            try:
                self._table(f)._check(idx[:, j])
            except OutOfVocabularyError as exc:
                raise OutOfVocabularyError(f.name, exc.index, exc.cardinality) from None
        parts = [self._table(f).weight[idx[:, j]] for j, f in enumerate(fields)]
        return np.concatenate(parts, axis=1)

    def _concat_backward(self, fields: list[FieldSchema], idx: np.ndarray, grad: np.ndarray) -> None:
        d = self.dim
        for j, f in enumerate(fields):
            self._table(f).accumulate(idx[:, j], grad[:, j * d:(j + 1) * d])

    def profile(self, idx: np.ndarray) -> np.ndarray:
        return self._concat(self.schema.profile, idx)

    def item(self, idx: np.ndarray) -> np.ndarray:
        return self._concat(self.schema.item, idx)

    def context(self, idx: np.ndarray) -> np.ndarray:
        return self._concat(self.schema.context, idx)

    def profile_backward(self, idx, grad):
        self._concat_backward(self.schema.profile, idx, grad)

    def item_backward(self, idx, grad):
        self._concat_backward(self.schema.item, idx, grad)

    def context_backward(self, idx, grad):
        self._concat_backward(self.schema.context, idx, grad)

    def behaviors(self, items: np.ndarray, cats: np.ndarray | None, valid: np.ndarray) -> np.ndarray:
        """Position representation = item-id row + category-id row; padding gives zeros."""
        it_field = self.schema.behavior_item
        table = self._table(it_field)
        safe_items = np.where(valid, items, 0)
        try:
            table._check(safe_items)
        except OutOfVocabularyError as exc:
            raise OutOfVocabularyError(it_field.name, exc.index, exc.cardinality) from None
        out = table.weight[safe_items]
        cat_field = self.schema.behavior_category
        if cat_field is not None and cats is not None:
            ctable = self._table(cat_field)
            safe_cats = np.where(valid, cats, 0)
            try:
                ctable._check(safe_cats)
            except OutOfVocabularyError as exc:
                raise OutOfVocabularyError(cat_field.name, exc.index, exc.cardinality) from None
            out = out + ctable.weight[safe_cats]
        return out * valid[..., None]

    def behaviors_backward(self, items, cats, valid, grad) -> None:
        rows = np.nonzero(valid)
        g = grad[rows]
        self._table(self.schema.behavior_item).accumulate(items[rows], g)
        cat_field = self.schema.behavior_category
        if cat_field is not None and cats is not None:
            self._table(cat_field).accumulate(cats[rows], g)

    def zero_grad(self) -> None:
        for t in self.tables.values():
            t.zero_grad()

    @property
    def profile_width(self) -> int:
        return len(self.schema.profile) * self.dim

    @property
    def item_width(self) -> int:
        return len(self.schema.item) * self.dim

    @property
    def context_width(self) -> int:
        return len(self.schema.context) * self.dim
