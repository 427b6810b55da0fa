import math

import numpy as np
import pytest

from leporid.dlr2 import (
    Architecture,
    Batch,
    DLR2Model,
    DLR2Recommender,
    LossConfig,
    TrainConfig,
    TrainingDivergedError,
    activation_pattern,
    disc_term,
    forward,
    gen_term,
    init_params,
    load_model,
    loss_and_grads,
    rank_items,
    save_model,
    train,
    training_examples,
)
from leporid.dlr2.layers import conv1d_backward, conv1d_forward, conv_output_length
from leporid.dlr2.model import features
from leporid.dlr2.train import context_window
from leporid.evalharness import evaluate
from leporid.interactions import split_log


def small_arch(variant="resnet", merge="sequence", dim=6):
    return Architecture(n_users=4, n_items=9, dim=dim, feature_variant=variant, user_merge=merge)


def random_params(arch, seed=0, bias_scale=0.1):
    rng = np.random.default_rng(seed)
    p = init_params(arch, rng.normal(size=(arch.n_users, arch.dim)), rng.normal(size=(arch.n_items, arch.dim)), rng)
    for k in p:
        if k.endswith(".b"):
            p[k] = rng.normal(scale=bias_scale, size=p[k].shape)
    return p


def random_batch(arch, rng, B=5):
    ctx = rng.integers(-1, arch.n_items, size=(B, arch.history))
    return Batch(rng.integers(0, arch.n_users, B), ctx, rng.integers(0, arch.n_items, B),
                 rng.integers(0, arch.n_items, B))


def toy_split():
    events = []
    for u in range(6):
        for t in range(8):
            events.append((f"u{u}", f"i{(u % 2) * 6 + (t % 6)}", t))
    return split_log(events)


# ---------------------------------------------------------------- layers

def test_conv_output_lengths():
    assert conv_output_length(6, 3, 1) == 6
    assert conv_output_length(6, 3, 2) == 3
    assert conv_output_length(6, 1, 2) == 3


def test_conv_matches_loop(rng):
    x = rng.normal(size=(2, 6, 3))
    W = rng.normal(size=(3, 3, 4))
    b = rng.normal(size=4)
    for stride in (1, 2):
        y, _ = conv1d_forward(x, W, b, stride)
        xp = np.pad(x, ((0, 0), (1, 1), (0, 0)))
        ref = np.stack([sum(xp[:, o * stride + j] @ W[j] for j in range(3)) + b
                        for o in range(conv_output_length(6, 3, stride))], axis=1)
        np.testing.assert_allclose(y, ref, atol=1e-12)


def test_conv_backward_is_adjoint(rng):
    x = rng.normal(size=(2, 6, 3))
    W = rng.normal(size=(3, 3, 4))
    y, cache = conv1d_forward(x, W, np.zeros(4), 2)
    dy = rng.normal(size=y.shape)
    dx, dW, db = conv1d_backward(dy, cache, W)
    # <dy, conv(x)> is linear in x and in W
    assert np.sum(dy * y) == pytest.approx(np.sum(dx * x), rel=1e-12)
    assert np.sum(dy * y) == pytest.approx(np.sum(dW * W), rel=1e-12)
    np.testing.assert_allclose(db, dy.sum(axis=(0, 1)))


# ---------------------------------------------------------------- forward

def test_zero_params_give_zero_outputs():
    arch = small_arch()
    p = {k: np.zeros_like(v) for k, v in random_params(arch).items()}
    out = forward(arch, p, random_batch(arch, np.random.default_rng(1)))
    assert np.all(out["disc_pos"] == 0) and np.all(out["disc_neg"] == 0)
    assert np.all(out["gen"] == 0)


def test_outputs_reproducible_and_nonnegative():
    arch = small_arch()
    a = forward(arch, random_params(arch, 3), random_batch(arch, np.random.default_rng(2)))
    b = forward(arch, random_params(arch, 3), random_batch(arch, np.random.default_rng(2)))
    for k in a:
        assert np.array_equal(a[k], b[k])
    assert np.all(a["disc_pos"] >= 0) and np.all(np.abs(a["gen"]) <= 1)


def test_block1_identity_skip_at_d64():
    # with zero conv weights, block 1 passes its input through the skip and the
    # block-2 output is the downsampled input (all relus see nonnegative inputs)
    arch = Architecture(n_users=2, n_items=5, dim=64, history=5)
    p = random_params(arch)
    assert "b1proj.W" not in p
    for k in ("b1c1", "b1c2", "b2c1", "b2c2"):
        p[k + ".W"][:] = 0
        p[k + ".b"][:] = 0
    p["b2ds.b"][:] = 0
    p["b2ds.W"][:] = 0
    p["b2ds.W"][0, np.arange(64), np.arange(64)] = 1.0
    p["item_table"] = np.abs(p["item_table"])
    p["user_table"] = np.abs(p["user_table"])
    users = np.array([1])
    ctx = np.array([[0, 1, 2, 3, 4]])
    seq = np.concatenate([p["item_table"][ctx[0]], p["user_table"][users]])  # (6, 64)
    trunk = np.zeros((3, 128))
    trunk[:, :64] = seq[::2]
    flat = trunk.reshape(-1)
    s, _ = features(arch, p, users, ctx)
    np.testing.assert_allclose(s[0], flat @ p["fc.W"] + p["fc.b"], atol=1e-10)


def test_context_shape_mismatch():
    arch = small_arch()
    with pytest.raises(ValueError):
        features(arch, random_params(arch), np.array([0]), np.zeros((1, 4), dtype=int))


@pytest.mark.parametrize("variant,merge", [("none", "sequence"), ("conv", "concat"), ("resnet", "concat")])
def test_variants_run(variant, merge):
    arch = small_arch(variant, merge)
    out = forward(arch, random_params(arch), random_batch(arch, np.random.default_rng(0)))
    assert out["s"].shape == (5, arch.dim)


# ---------------------------------------------------------------- loss

def test_loss_terms_hand_values():
    assert disc_term(0.0, 1.0, 1.0) == 0.0
    assert disc_term(0.5, 0.1, 1.0) == pytest.approx(1.06, abs=1e-15)
    G = np.array([[0.0, 0.0]])
    assert gen_term(G, np.array([[1.0, 0]]), np.array([[0, 1.0]]), 0.0)[0] == 0.0
    assert gen_term(G, np.array([[3.0, 4]]), np.array([[1.0, 0]]), 0.5)[0] == pytest.approx(4.5)


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(w_s=0, w_g=0)
    with pytest.raises(ValueError):
        LossConfig(margin_s=-1)


# ---------------------------------------------------------------- gradients

def gradient_check(arch, params, batch, loss, n_coords, rng, h=1e-5):
    """Max relative error over coordinates whose +-h stencil stays on one smooth piece."""
    _, grads = loss_and_grads(arch, params, batch, loss)
    base = activation_pattern(arch, params, batch, loss)
    keys = [k for k in params if params[k].size]
    sizes = np.array([params[k].size for k in keys], dtype=float)
    worst, checked, attempts = 0.0, 0, 0
    while checked < n_coords and attempts < 50 * n_coords:
        attempts += 1
        k = keys[rng.choice(len(keys), p=np.sqrt(sizes) / np.sqrt(sizes).sum())]
        idx = np.unravel_index(rng.integers(params[k].size), params[k].shape)
        orig = params[k][idx]
        vals, same = [], True
        for sign in (1, -1):
            params[k][idx] = orig + sign * h
            same &= np.array_equal(activation_pattern(arch, params, batch, loss), base)
            vals.append(loss_and_grads(arch, params, batch, loss, need_grads=False)[0])
        params[k][idx] = orig
        if not same:
            continue
        fd = (vals[0] - vals[1]) / (2 * h)
        g = grads[k][idx]
        worst = max(worst, abs(g - fd) / max(abs(g), abs(fd), 1e-6))
        checked += 1
    return worst, checked


@pytest.mark.parametrize("variant,merge,dim", [("resnet", "sequence", 6), ("conv", "concat", 5),
                                               ("none", "sequence", 4), ("resnet", "concat", 64)])
def test_gradients_match_finite_differences(variant, merge, dim):
    rng = np.random.default_rng(11)
    arch = small_arch(variant, merge, dim)
    params = random_params(arch, 4)
    batch = random_batch(arch, rng, B=4)
    loss = LossConfig(margin_s=1.0, margin_g=1.0)
    worst, checked = gradient_check(arch, params, batch, loss, 60, rng)
    assert checked == 60
    assert worst < 1e-4


def test_zero_loss_region_has_zero_generative_gradients():
    arch = small_arch()
    params = random_params(arch, 2)
    rng = np.random.default_rng(0)
    batch = random_batch(arch, rng, 3)
    batch.negatives = batch.positives.copy()  # equal distances: the hinge sits at 0 with m_G = 0
    loss = LossConfig(margin_s=0.0, margin_g=0.0, w_s=0.0, w_g=1.0)
    value, grads = loss_and_grads(arch, params, batch, loss)
    assert value == 0.0
    for k in params:
        if k.startswith("gen"):
            assert np.all(grads[k] == 0)


def test_padding_gradient_dropped():
    arch = small_arch()
    params = random_params(arch, 1)
    batch = Batch(np.array([0]), np.full((1, arch.history), -1), np.array([2]), np.array([3]))
    _, grads = loss_and_grads(arch, params, batch, LossConfig(margin_s=1.0))
    touched = np.flatnonzero(np.abs(grads["item_table"]).sum(axis=1))
    assert set(touched.tolist()) <= {2, 3}


# ---------------------------------------------------------------- training

def test_training_examples_cover_every_position():
    split = toy_split()
    users, ctx, pos = training_examples(split, 5)
    assert len(users) == len(split.train)
    assert np.all(ctx[users == 0][0] == -1)


def test_context_window_padding():
    assert context_window([7, 8], 2, 5).tolist() == [-1, -1, -1, 7, 8]
    assert context_window([1, 2, 3, 4, 5, 6, 7], 6, 5).tolist() == [2, 3, 4, 5, 6]


def test_one_step_decreases_batch_loss():
    events = [("a", f"i{k}", k) for k in range(6)] + [("b", f"i{k}", k) for k in range(3, 9)]
    split = split_log(events)
    rng = np.random.default_rng(0)
    D = 8
    arch = Architecture(split.n_users, split.n_items, D)
    params = init_params(arch, rng.normal(scale=0.1, size=(split.n_users, D)),
                         rng.normal(scale=0.1, size=(split.n_items, D)), rng)
    users, ctx, pos = training_examples(split)
    from leporid.dlr2.train import Adam, NegativeSampler
    batch = Batch(users, ctx, pos, NegativeSampler(split).sample(users, rng))
    loss = LossConfig(margin_s=1.0, margin_g=0.5)
    before, grads = loss_and_grads(arch, params, batch, loss)
    Adam(params, 1e-3).step(params, grads)
    after, _ = loss_and_grads(arch, params, batch, loss, need_grads=False)
    assert after < before


def test_train_is_deterministic_and_logs_curve():
    split = toy_split()
    rng = np.random.default_rng(0)
    U, I = rng.normal(size=(split.n_users, 4)), rng.normal(size=(split.n_items, 4))
    cfg = TrainConfig(steps=6, batch_size=8, margin_s=1.0)
    a = train(split, U, I, cfg)
    b = train(split, U, I, cfg)
    for k in a.model.params:
        assert np.array_equal(a.model.params[k], b.model.params[k])
    assert len(a.curve) == 6
    assert not math.isnan(a.curve[-1][2])
    assert a.curve_tsv().startswith("step\tloss\tval_hr10\n")


def test_disc_only_training_leaves_gen_head_untouched():
    split = toy_split()
    rng = np.random.default_rng(0)
    U, I = rng.normal(size=(split.n_users, 4)), rng.normal(size=(split.n_items, 4))
    res = train(split, U, I, TrainConfig(steps=4, batch_size=8, w_g=0.0, margin_s=1.0, eval_every_epoch=False))
    ref = init_params(res.model.arch, U, I, np.random.default_rng(123))
    for k in res.model.params:
        if k.startswith("gen"):
            assert np.array_equal(res.model.params[k], ref[k])


def test_nan_loss_aborts():
    split = toy_split()
    U = np.full((split.n_users, 4), np.nan)
    I = np.zeros((split.n_items, 4))
    with pytest.raises(TrainingDivergedError, match="step 1"):
        train(split, U, I, TrainConfig(steps=2, batch_size=4))


def test_embedding_dim_mismatch():
    split = toy_split()
    with pytest.raises(ValueError):
        train(split, np.zeros((split.n_users, 4)), np.zeros((split.n_items, 3)), TrainConfig(steps=1))


# ---------------------------------------------------------------- ranking

def single_item_model(keys_by_item, head="disc"):
    """A model whose disc pre-activation equals item_table[:, 0] (everything else zero)."""
    n = len(keys_by_item)
    arch = Architecture(1, n, dim=2, feature_variant="none")
    p = {k: np.zeros_like(v) for k, v in init_params(arch, np.zeros((1, 2)), np.zeros((n, 2)),
                                                      np.random.default_rng(0)).items()}
    p["item_table"][:, 0] = keys_by_item
    # disc: [s; e] -> e_0 passed through three relu layers of width >= 1, then out
    p["disc1.W"][2, 0] = 1.0
    p["disc2.W"][0, 0] = 1.0
    p["disc3.W"][0, 0] = 1.0
    p["disc4.W"][0, 0] = 1.0
    return DLR2Model(arch, p)


def test_disc_ranking_ascending():
    model = single_item_model([0.1, 0.9])
    assert rank_items(model, 0, 0, [0, 1], "disc", N=2) == [0, 1]
    model = single_item_model([0.9, 0.1])
    assert rank_items(model, 0, 0, [0, 1], "disc", N=2) == [1, 0]


def test_gen_ranking_item_at_output_first():
    model = single_item_model([0.5, 0.0, -0.3])
    # all-zero gen head outputs tanh(0) = 0, which is exactly item 1
    model.params["item_table"][:, 1] = [0.2, 0.0, 0.1]
    assert rank_items(model, 0, 0, [0, 1, 2], "gen", N=1) == [1]


@pytest.mark.parametrize("head", ["disc", "gen"])
def test_ranking_matches_brute_force(head):
    rng = np.random.default_rng(5)
    arch = Architecture(3, 30, dim=6)
    model = DLR2Model(arch, random_params(arch, 9))
    seq = [4, 8, 15, 16, 23, 7]
    cands = rng.choice(30, 20, replace=False)
    got = rank_items(model, 1, 5, cands, head, N=20, sequence=seq)
    s = model.features(np.array([1]), context_window(seq, 5, 5)[None])[0]
    ref = sorted(cands.tolist(), key=lambda j: (
        model.disc_scores(s, [j], preactivation=True)[0] if head == "disc" else model.gen_distances(s, [j])[0], j))
    assert got == ref


def test_recommender_adapter_and_checkpoint(tmp_path):
    split = toy_split()
    rng = np.random.default_rng(0)
    res = train(split, rng.normal(size=(split.n_users, 4)), rng.normal(size=(split.n_items, 4)),
                TrainConfig(steps=3, batch_size=8, eval_every_epoch=False))
    save_model(res.model, tmp_path / "m.lepo")
    back = load_model(tmp_path / "m.lepo")
    assert back.arch == res.model.arch and back.config == res.model.config
    for k in res.model.params:
        assert np.array_equal(back.params[k], res.model.params[k])
    r1 = evaluate(DLR2Recommender(res.model), split, cutoffs=(10,), stage="validation")
    r2 = evaluate(DLR2Recommender(back), split, cutoffs=(10,), stage="validation")
    assert r1.metrics == r2.metrics
