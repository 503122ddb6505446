import numpy as np
import pytest

from auxctr.data import Batch, Dataset
from auxctr.embedding import FieldSchema, Schema
from auxctr.synthetic import SyntheticConfig, generate


def tiny_schema() -> Schema:
    return Schema([
        FieldSchema("user_id", "user-profile", 6),
        FieldSchema("age", "user-profile", 3),
        FieldSchema("beh_item", "behavior-item", 8, "item_id"),
        FieldSchema("beh_cat", "behavior-category", 3, "item_cat"),
        FieldSchema("item_id", "item", 8),
        FieldSchema("item_cat", "item", 3),
        FieldSchema("pos", "context", 2),
    ])


def random_batch(rng: np.random.Generator, n: int = 4, m: int = 3, lengths=None, labels=None, schema=None) -> Batch:
    schema = schema or tiny_schema()
    if lengths is None:
        lengths = rng.integers(1, m + 1, size=n)
    lengths = np.asarray(lengths)
    valid = np.arange(m) < lengths[:, None]
    if labels is None:
        labels = rng.integers(0, 2, size=n)
        labels[0] = 1

    def draw(fields):
        return np.stack([rng.integers(f.cardinality, size=n) for f in fields], axis=1)

    beh_item = np.where(valid, rng.integers(schema.behavior_item.cardinality, size=(n, m)), 0)
    cat_card = schema.behavior_category.cardinality if schema.behavior_category else 1
    return Batch(
        profile=draw(schema.profile),
        beh_item=beh_item,
        beh_cat=np.where(valid, rng.integers(cat_card, size=(n, m)), 0),
        lengths=lengths,
        item=draw(schema.item),
        context=draw(schema.context),
        labels=np.asarray(labels),
    )


@pytest.fixture
def schema():
    return tiny_schema()


SMALL_SYNTH = SyntheticConfig(
    num_users=300, num_items=150, num_categories=8, latent_dim=4,
    impressions=6000, test_impressions=1000, behaviors_per_user=8, seed=3,
)


@pytest.fixture(scope="session")
def small_synth():
    data = generate(SMALL_SYNTH)
    train = Dataset.from_instances(data.train, 8, data.schema)
    test = Dataset.from_instances(data.test, 8, data.schema)
    return data, train, test


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
