import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from auxctr.data import Dataset, Instance
from auxctr.embedding import FieldSchema, Schema
from auxctr.errors import ConfigError, UndefinedMetricError
from auxctr.losses import bce_loss
from auxctr.metrics import (
    HIST_BINS,
    MetricsReport,
    auc,
    evaluate,
    logloss,
    relevance_case_study,
    relevance_histogram,
)
from auxctr.model import ModelConfig, ModelParams, calibrate
from helpers import pairwise_auc


def test_auc_examples():
    assert auc([0.9, 0.1], [1, 0]) == 1.0
    assert auc([0.1, 0.9], [1, 0]) == 0.0
    assert auc([0.5, 0.5], [1, 0]) == 0.5


def test_auc_single_class():
    with pytest.raises(UndefinedMetricError):
        auc([0.1, 0.2], [1, 1])
    with pytest.raises(UndefinedMetricError):
        auc([0.1, 0.2], [0, 0])


def auc_oracle_errors(cases: int = 1000, seed: int = 0) -> tuple[float, float]:
    """Worst |rank AUC - pairwise AUC|, and worst AUC shift under calibration."""
    rng = np.random.default_rng(seed)
    worst_pair = worst_cal = 0.0
    for case in range(cases):
        n = int(rng.integers(2, 200))
        labels = rng.integers(0, 2, size=n)
        labels[0], labels[1] = 1, 0
        if case % 2:
            # coarse grid forces ties and duplicates
            scores = rng.integers(0, 5, size=n) / 4.0
        else:
            scores = rng.random(n)
        a = auc(scores, labels)
        worst_pair = max(worst_pair, abs(a - pairwise_auc(scores.tolist(), labels.tolist())))
        w = float(rng.uniform(1e-3, 1.0))
        worst_cal = max(worst_cal, abs(auc(calibrate(scores, w), labels) - a))
    return worst_pair, worst_cal


def test_auc_matches_pairwise_oracle_and_calibration():
    pair, cal = auc_oracle_errors(cases=300)
    assert pair <= 1e-12 and cal <= 1e-12


# scores on a 1e-6 grid: a monotone map can merge adjacent doubles into a tie
@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 10**6), min_size=2, max_size=40), st.floats(1e-3, 1.0), st.integers(0, 2**31 - 1))
def test_auc_invariant_under_monotone_transform(ticks, w, seed):
    rng = np.random.default_rng(seed)
    scores = np.array(ticks) / 10**6
    labels = rng.integers(0, 2, size=scores.size)
    labels[0], labels[-1] = 1, 0
    a = auc(scores, labels)
    assert abs(auc(np.exp(3.0 * scores), labels) - a) <= 1e-12
    assert abs(auc(calibrate(scores, w), labels) - a) <= 1e-12


def test_logloss_examples():
    assert logloss([0.8, 0.4], [1, 0]) == pytest.approx(-(math.log(0.8) + math.log(0.6)) / 2, abs=1e-12)
    assert round(logloss([0.8, 0.4], [1, 0]), 6) == 0.366985
    assert logloss([0.5, 0.5, 0.5], [1, 0, 1]) == pytest.approx(math.log(2), abs=1e-12)
    assert logloss([1.0, 0.0], [1, 0]) < 1e-6
    p = np.random.default_rng(0).random(50)
    y = (p > 0.3).astype(int)
    assert logloss(p, y) == bce_loss(p, y)[0]


def test_calibration_closed_form_and_monotone():
    assert abs(calibrate(np.array([0.5]), 0.1)[0] - 1 / 11) <= 1e-12
    grid = np.linspace(0.0, 1.0, 1000)
    for w in (0.01, 0.1, 0.5, 1.0):
        q = calibrate(grid, w)
        assert np.all(np.diff(q) > 0)
    with pytest.raises(ConfigError):
        calibrate(grid, 0.0)


def test_histogram_counts_and_edges():
    cos = np.array([-1.0, -0.5, 0.0, 0.999, 1.0 + 1e-16])
    h = relevance_histogram(cos)
    assert h.counts.sum() == cos.size
    assert h.edges.size == HIST_BINS + 1 and h.edges[0] == -1.0 and h.edges[-1] == 1.0
    rows = h.to_tsv().splitlines()
    assert rows[0] == "bin_left\tbin_right\tcount" and len(rows) == HIST_BINS + 1
    with pytest.raises(UndefinedMetricError):
        relevance_histogram(np.zeros(0))


def identity_setup():
    """Model and data whose user-side and item-side vectors coincide per instance."""
    d, n = 3, 6
    schema = Schema([
        FieldSchema("user", "user-profile", n),
        FieldSchema("beh", "behavior-item", n, "item"),
        FieldSchema("item", "item", n),
        FieldSchema("item2", "item", n),
    ])
    params = ModelParams(schema, ModelConfig(dim=d, proj_dim=4, tower_widths=(4,)), seed=0)
    p = params.uim_attn
    p.W_Q[...] = 0.0
    p.W_K[...] = 0.0
    p.W_V[...] = np.eye(d)
    tables = params.tables
    # instance r: user r, one behavior on item (r + 1) % n, target item r, item2 row (r + 1) % n
    for r in range(n):
        tables["user"].weight[r] = tables["item"].weight[r]
        tables["item2"].weight[(r + 1) % n] = tables["item"].weight[(r + 1) % n]
    insts = [Instance(1, (r,), [((r + 1) % n, 0)], (r, (r + 1) % n)) for r in range(n)]
    return params, Dataset.from_instances(insts, 4, schema)


def test_identical_embeddings_give_unit_cosine():
    params, data = identity_setup()
    h = relevance_case_study(params, data, k=100, rng=np.random.default_rng(0))
    np.testing.assert_allclose(h.cosines, 1.0, atol=1e-12)
    assert h.counts.sum() == len(data) and h.counts[-1] == len(data)


def test_case_study_samples_k_positives(small_synth):
    data, _, test = small_synth
    params = ModelParams(data.schema, ModelConfig(dim=4, proj_dim=4, tower_widths=(8,)), seed=1)
    h = relevance_case_study(params, test, k=50, rng=np.random.default_rng(0))
    assert h.counts.sum() == 50
    again = relevance_case_study(params, test, k=50, rng=np.random.default_rng(0))
    np.testing.assert_array_equal(h.counts, again.counts)
    empty = test.subset(np.flatnonzero(test.labels == 0))
    with pytest.raises(UndefinedMetricError):
        relevance_case_study(params, empty, k=5, rng=np.random.default_rng(0))


def test_evaluate_report(small_synth, tmp_path):
    data, _, test = small_synth
    params = ModelParams(data.schema, ModelConfig(dim=4, proj_dim=4, tower_widths=(8,)), seed=2)
    rep = evaluate(params, test)
    cal = evaluate(params, test, calibrate_ratio=0.1)
    assert rep.n_eval == len(test) and rep.n_pos == int(test.labels.sum())
    assert abs(rep.auc - cal.auc) <= 1e-12 and rep.logloss != cal.logloss
    rep.save(tmp_path / "r.json")
    loaded = json.loads((tmp_path / "r.json").read_text())
    assert MetricsReport(**loaded) == rep
