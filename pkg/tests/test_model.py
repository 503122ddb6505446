import numpy as np
import pytest

from auxctr.data import Batch
from auxctr.embedding import FieldSchema, Schema
from auxctr.errors import ConfigError, SchemaError, UsageError
from auxctr.metrics import auc
from auxctr.model import (
    LossGrads,
    ModelConfig,
    ModelParams,
    backward,
    calibrate,
    forward,
    predict_calibrated,
)
from auxctr.trainer import TrainConfig, batch_loss, loss_and_grads
from conftest import random_batch
from helpers import max_rel_error, numeric_grad

GRAD_CFG = dict(dim=4, proj_dim=4, m_max=3, tower_widths=(4,), tau_uim=0.5, tau_nip=0.5,
                lambda_uim=0.7, lambda_nip=0.3)


def grad_schema() -> Schema:
    """Smallest schema that still shares the item table between sequence and target."""
    return Schema([
        FieldSchema("user_id", "user-profile", 5),
        FieldSchema("beh_item", "behavior-item", 6, "item_id"),
        FieldSchema("beh_cat", "behavior-category", 3),
        FieldSchema("item_id", "item", 6),
        FieldSchema("pos", "context", 2),
    ])


def make_params(schema, seed=0, **kw):
    cfg = ModelConfig(**{"dim": 4, "proj_dim": 4, "tower_widths": (8,), **kw})
    return ModelParams(schema, cfg, seed=seed)


def test_inference_shapes_and_range(schema):
    params = make_params(schema)
    batch = random_batch(np.random.default_rng(0), n=6, m=3)
    art = forward(params, batch, mode="inference")
    assert art.p.shape == (6,)
    assert np.all((art.p > 0) & (art.p < 1))
    assert art.r_user is None and art.prefix is None


def test_zero_tower_gives_half(schema):
    params = make_params(schema)
    for name, v in params.dense.items():
        if name.startswith("tower."):
            v[...] = 0.0
    p = forward(params, random_batch(np.random.default_rng(1)), mode="inference").p
    np.testing.assert_array_equal(p, 0.5)


def test_train_artifact_shapes(schema):
    params = make_params(schema, proj_dim=5)
    art = forward(params, random_batch(np.random.default_rng(2), n=4, m=3), mode="train")
    assert art.r_user.shape == (4, 5) and art.r_item.shape == (4, 5)
    assert art.prefix.shape == (4, 2, 4) and art.next_emb.shape == (4, 2, 4)


def test_inference_matches_train_bitwise(schema):
    params = make_params(schema)
    batch = random_batch(np.random.default_rng(3), n=5)
    np.testing.assert_array_equal(forward(params, batch, "train").p, forward(params, batch, "inference").p)


def test_schema_mismatch_and_mode_errors(schema):
    params = make_params(schema)
    batch = random_batch(np.random.default_rng(4))
    bad = Batch(batch.profile[:, :1], batch.beh_item, batch.beh_cat, batch.lengths, batch.item, batch.context, batch.labels)
    with pytest.raises(SchemaError):
        forward(params, bad)
    art = forward(params, batch, mode="inference")
    with pytest.raises(UsageError):
        backward(params, batch, art, LossGrads(np.zeros(batch.n)))
    with pytest.raises(UsageError):
        forward(params, batch, mode="serve")


def test_attention_owners_disjoint(schema):
    params = make_params(schema)
    mats = [params.main_attn.W_Q, params.uim_attn.W_Q, params.nip_attn.W_Q]
    assert len({id(m) for m in mats}) == 3
    assert not np.shares_memory(mats[0], mats[1])


def test_zero_weights_leave_aux_attention_gradients_zero(schema):
    params = make_params(schema)
    cfg = TrainConfig(**{**GRAD_CFG, "lambda_uim": 0.0, "lambda_nip": 0.0})
    _, grads = loss_and_grads(params, random_batch(np.random.default_rng(5)), cfg)
    for owner in ("uim", "nip"):
        for w in ("W_Q", "W_K", "W_V"):
            assert not grads[f"attn.{owner}.{w}"].any()
    for name in grads:
        if name.startswith("proj_"):
            assert not grads[name].any()


def relu_margin(params: ModelParams, batch: Batch) -> float:
    """Smallest |pre-activation| at any ReLU; central differences need it clear of the kink."""
    cache = forward(params, batch, mode="train").cache
    margins = [np.abs(a).min() for key in ("tower", "proj_user", "proj_item") for _, a in cache[key][:-1]]
    return float(min(margins))


def random_point(schema, cfg: TrainConfig, rng, seed: int, margin: float = 1e-3):
    """Random parameters and batch, redrawn until every ReLU is differentiable there.

    Parameters are drawn off the init: zero biases behind a dead hidden layer
    put the match vectors at the cosine singularity, and short init rows make
    the O(h^2) truncation of the differences itself exceed the tolerance.
    """
    while True:
        params = ModelParams(schema, cfg.model_config(), seed=seed)
        for v in params.dense.values():
            v[...] = rng.normal(scale=0.5, size=v.shape)
        for table in params.tables.values():
            table.weight[...] = rng.normal(size=table.weight.shape)
        batch = random_batch(rng, n=4, m=3, schema=schema)
        if relu_margin(params, batch) > margin:
            return params, batch


def end_to_end_gradient_error(trials: int = 100, seed: int = 0) -> float:
    """Central differences on L_total over every parameter of a 4-instance batch."""
    rng = np.random.default_rng(seed)
    schema = grad_schema()
    cfg = TrainConfig(**GRAD_CFG)
    worst = 0.0
    for trial in range(trials):
        params, batch = random_point(schema, cfg, rng, seed * 1000 + trial)
        params.zero_grad()
        _, grads = loss_and_grads(params, batch, cfg)

        def f():
            return batch_loss(params, batch, cfg).L_total

        for name, p in params.dense.items():
            worst = max(worst, max_rel_error(grads[name], numeric_grad(f, p)))
        for table in params.tables.values():
            touched = table.touched
            # rows outside the batch cannot move the loss: their gradient must be exactly zero
            if np.delete(table.grad, touched, axis=0).any():
                return np.inf
            numeric = np.stack([numeric_grad(f, table.weight[r]) for r in touched])
            worst = max(worst, max_rel_error(table.grad[touched], numeric))
        params.zero_grad()
    return worst


def test_end_to_end_gradients():
    assert end_to_end_gradient_error(trials=20, seed=1) < 1e-4


def test_shared_row_gradient_sums_both_heads():
    # the user row feeds the tower and the UIM user head
    schema = grad_schema()
    with_uim = TrainConfig(**{**GRAD_CFG, "lambda_nip": 0.0})
    main_only = TrainConfig(**{**GRAD_CFG, "lambda_uim": 0.0, "lambda_nip": 0.0})
    params, batch = random_point(schema, with_uim, np.random.default_rng(12), 11)
    table = params.tables["user_id"]
    row = int(batch.profile[0, 0])
    per_path = []
    for cfg in (with_uim, main_only):
        params.zero_grad()
        loss_and_grads(params, batch, cfg)
        analytic = table.grad[row].copy()
        fd = numeric_grad(lambda: batch_loss(params, batch, cfg).L_total, table.weight[row])
        assert max_rel_error(analytic, fd) < 1e-4
        per_path.append(analytic)
    uim_part = per_path[0] - per_path[1]
    assert np.abs(uim_part).max() > 1e-6
    lam = with_uim.lambda_uim
    fd_uim = numeric_grad(lambda: lam * batch_loss(params, batch, with_uim).L_UIM, table.weight[row])
    assert max_rel_error(uim_part, fd_uim) < 1e-4


def test_calibration_examples():
    assert calibrate(np.array([0.5]), 1.0)[0] == 0.5
    assert calibrate(np.array([0.5]), 0.1)[0] == pytest.approx(1 / 11, abs=1e-12)
    np.testing.assert_array_equal(calibrate(np.array([0.0, 1.0]), 0.3), [0.0, 1.0])
    for w in (0.0, -0.5, 1.5):
        with pytest.raises(ConfigError):
            calibrate(np.array([0.5]), w)


def test_calibration_preserves_auc(schema):
    params = make_params(schema)
    rng = np.random.default_rng(7)
    batch = random_batch(rng, n=40, m=3)
    p = forward(params, batch, "inference").p
    q = predict_calibrated(params, batch, 0.1)
    assert auc(q, batch.labels) == pytest.approx(auc(p, batch.labels), abs=1e-12)
