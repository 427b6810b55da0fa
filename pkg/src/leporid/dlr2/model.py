"""The dual-loss residual network: parameters, forward pass, loss and gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import (
    conv1d_backward,
    conv1d_forward,
    conv_output_length,
    dense_backward,
    dense_forward,
    relu_backward,
    relu_forward,
    tanh_backward,
    tanh_forward,
)

HISTORY = 5
BLOCK1_CHANNELS = 64
BLOCK2_CHANNELS = 128
HEAD_WIDTHS = (256, 256, 128)
FEATURE_VARIANTS = ("none", "conv", "resnet")
USER_MERGES = ("sequence", "concat")
PAD = -1


@dataclass(frozen=True)
class Architecture:
    n_users: int
    n_items: int
    dim: int = 64
    history: int = HISTORY
    feature_variant: str = "resnet"
    user_merge: str = "sequence"

    def __post_init__(self):
        if self.feature_variant not in FEATURE_VARIANTS:
            raise ValueError(f"feature_variant must be one of {FEATURE_VARIANTS}")
        if self.user_merge not in USER_MERGES:
            raise ValueError(f"user_merge must be one of {USER_MERGES}")
        if min(self.n_users, self.n_items, self.dim, self.history) < 1:
            raise ValueError("sizes must be positive")

    @property
    def seq_len(self) -> int:
        return self.history + (1 if self.user_merge == "sequence" else 0)

    @property
    def trunk_len(self) -> int:
        return conv_output_length(self.seq_len, 3, 2)

    def as_dict(self) -> dict:
        return dict(n_users=self.n_users, n_items=self.n_items, dim=self.dim, history=self.history,
                    feature_variant=self.feature_variant, user_merge=self.user_merge)


@dataclass
class Batch:
    """Training examples: context holds item indices, oldest first, PAD = -1."""

    users: np.ndarray
    context: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray | None = None

    def __len__(self):
        return len(self.users)


def _he(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def _glorot(rng, shape, fan_in, fan_out):
    return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=shape)


def init_params(arch: Architecture, user_init: np.ndarray, item_init: np.ndarray,
                rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Embedding tables are copied from the given initialisers; other weights are He/Glorot normal."""
    D = arch.dim
    user_init = np.asarray(user_init, dtype=np.float64)
    item_init = np.asarray(item_init, dtype=np.float64)
    if user_init.shape != (arch.n_users, D) or item_init.shape != (arch.n_items, D):
        raise ValueError(f"initial embeddings must be {(arch.n_users, D)} and {(arch.n_items, D)}, "
                         f"got {user_init.shape} and {item_init.shape}")
    p = {"user_table": user_init.copy(), "item_table": item_init.copy()}
    c1, c2 = BLOCK1_CHANNELS, BLOCK2_CHANNELS
    if arch.feature_variant == "none":
        flat = arch.seq_len * D
    else:
        p["b1c1.W"] = _he(rng, (3, D, c1), 3 * D)
        p["b1c1.b"] = np.zeros(c1)
        p["b1c2.W"] = _he(rng, (3, c1, c1), 3 * c1)
        p["b1c2.b"] = np.zeros(c1)
        p["b2c1.W"] = _he(rng, (3, c1, c2), 3 * c1)
        p["b2c1.b"] = np.zeros(c2)
        p["b2c2.W"] = _he(rng, (3, c2, c2), 3 * c2)
        p["b2c2.b"] = np.zeros(c2)
        if arch.feature_variant == "resnet":
            if D != c1:
                p["b1proj.W"] = _glorot(rng, (1, D, c1), D, c1)
                p["b1proj.b"] = np.zeros(c1)
            p["b2ds.W"] = _glorot(rng, (1, c1, c2), c1, c2)
            p["b2ds.b"] = np.zeros(c2)
        flat = arch.trunk_len * c2
    if arch.user_merge == "concat":
        flat += D
    p["fc.W"] = _glorot(rng, (flat, D), flat, D)
    p["fc.b"] = np.zeros(D)
    for prefix, fan_in0 in (("disc", 2 * D), ("gen", D)):
        fan_in = fan_in0
        for k, width in enumerate(HEAD_WIDTHS, start=1):
            p[f"{prefix}{k}.W"] = _he(rng, (fan_in, width), fan_in)
            p[f"{prefix}{k}.b"] = np.zeros(width)
            fan_in = width
        out = 1 if prefix == "disc" else D
        p[f"{prefix}4.W"] = _glorot(rng, (fan_in, out), fan_in, out)
        p[f"{prefix}4.b"] = np.zeros(out)
    return p


def context_embeddings(params, context: np.ndarray) -> np.ndarray:
    """(B, l, D) item embeddings with PAD positions fixed at zero."""
    context = np.asarray(context, dtype=np.int64)
    valid = context >= 0
    emb = params["item_table"][np.where(valid, context, 0)]
    return emb * valid[..., None]


def features(arch: Architecture, params, users, context):
    """The feature network: returns s (B, D) and a cache for ``features_backward``."""
    users = np.asarray(users, dtype=np.int64)
    context = np.asarray(context, dtype=np.int64)
    if context.ndim != 2 or context.shape[1] != arch.history or context.shape[0] != len(users):
        raise ValueError(f"context must have shape ({len(users)}, {arch.history}), got {context.shape}")
    u = params["user_table"][users]
    X = context_embeddings(params, context)
    if arch.user_merge == "sequence":
        X = np.concatenate([X, u[:, None, :]], axis=1)
    cache = {"users": users, "context": context}
    B = len(users)
    if arch.feature_variant == "none":
        trunk = X
    else:
        a1, cache["c1"] = conv1d_forward(X, params["b1c1.W"], params["b1c1.b"], 1)
        h1, cache["r1"] = relu_forward(a1)
        a2, cache["c2"] = conv1d_forward(h1, params["b1c2.W"], params["b1c2.b"], 1)
        h2, cache["r2"] = relu_forward(a2)
        if arch.feature_variant == "resnet":
            if "b1proj.W" in params:
                skip, cache["proj"] = conv1d_forward(X, params["b1proj.W"], params["b1proj.b"], 1)
            else:
                skip = X
            H1 = h2 + skip
        else:
            H1 = h2
        a3, cache["c3"] = conv1d_forward(H1, params["b2c1.W"], params["b2c1.b"], 2)
        h3, cache["r3"] = relu_forward(a3)
        a4, cache["c4"] = conv1d_forward(h3, params["b2c2.W"], params["b2c2.b"], 1)
        h4, cache["r4"] = relu_forward(a4)
        if arch.feature_variant == "resnet":
            ds, cache["ds"] = conv1d_forward(H1, params["b2ds.W"], params["b2ds.b"], 2)
            trunk = h4 + ds
        else:
            trunk = h4
    cache["trunk_shape"] = trunk.shape
    flat = trunk.reshape(B, -1)
    if arch.user_merge == "concat":
        flat = np.concatenate([flat, u], axis=1)
    s, cache["fc"] = dense_forward(flat, params["fc.W"], params["fc.b"])
    return s, cache


def features_backward(arch: Architecture, params, ds_, cache, grads) -> None:
    """Accumulate gradients of the feature network (and both tables) into ``grads``."""
    D = arch.dim
    dflat, dW, db = dense_backward(ds_, cache["fc"], params["fc.W"])
    grads["fc.W"] += dW
    grads["fc.b"] += db
    B = ds_.shape[0]
    du = np.zeros((B, D))
    if arch.user_merge == "concat":
        du += dflat[:, -D:]
        dflat = dflat[:, :-D]
    dtrunk = dflat.reshape(cache["trunk_shape"])
    if arch.feature_variant == "none":
        dX = dtrunk
    else:
        dh4 = dtrunk
        if arch.feature_variant == "resnet":
            dH1, dW, db = conv1d_backward(dtrunk, cache["ds"], params["b2ds.W"])
            grads["b2ds.W"] += dW
            grads["b2ds.b"] += db
        else:
            dH1 = 0.0
        da4 = relu_backward(dh4, cache["r4"])
        dh3, dW, db = conv1d_backward(da4, cache["c4"], params["b2c2.W"])
        grads["b2c2.W"] += dW
        grads["b2c2.b"] += db
        da3 = relu_backward(dh3, cache["r3"])
        dx, dW, db = conv1d_backward(da3, cache["c3"], params["b2c1.W"])
        grads["b2c1.W"] += dW
        grads["b2c1.b"] += db
        dH1 = dH1 + dx
        dX = 0.0
        if arch.feature_variant == "resnet":
            if "b1proj.W" in params:
                dX, dW, db = conv1d_backward(dH1, cache["proj"], params["b1proj.W"])
                grads["b1proj.W"] += dW
                grads["b1proj.b"] += db
            else:
                dX = dH1
        da2 = relu_backward(dH1, cache["r2"])
        dh1, dW, db = conv1d_backward(da2, cache["c2"], params["b1c2.W"])
        grads["b1c2.W"] += dW
        grads["b1c2.b"] += db
        da1 = relu_backward(dh1, cache["r1"])
        dx, dW, db = conv1d_backward(da1, cache["c1"], params["b1c1.W"])
        grads["b1c1.W"] += dW
        grads["b1c1.b"] += db
        dX = dX + dx
    if arch.user_merge == "sequence":
        du += dX[:, -1, :]
        dX = dX[:, :-1, :]
    np.add.at(grads["user_table"], cache["users"], du)
    context = cache["context"]
    valid = context >= 0
    # padding positions are not parameters: their gradient is dropped here
    np.add.at(grads["item_table"], context[valid], dX[valid])


def _mlp_forward(params, prefix, x, final):
    caches = []
    h = x
    for k in range(1, len(HEAD_WIDTHS) + 1):
        a, c = dense_forward(h, params[f"{prefix}{k}.W"], params[f"{prefix}{k}.b"])
        h, m = relu_forward(a)
        caches.append((c, m))
    z, c = dense_forward(h, params[f"{prefix}4.W"], params[f"{prefix}4.b"])
    caches.append((c, None))
    out, fcache = final(z)
    return out, z, (caches, fcache)


def _mlp_backward(params, prefix, dout, cache, final_backward, grads):
    caches, fcache = cache
    dz = final_backward(dout, fcache)
    c, _ = caches[-1]
    dh, dW, db = dense_backward(dz, c, params[f"{prefix}4.W"])
    grads[f"{prefix}4.W"] += dW
    grads[f"{prefix}4.b"] += db
    for k in range(len(HEAD_WIDTHS), 0, -1):
        c, m = caches[k - 1]
        da = relu_backward(dh, m)
        dh, dW, db = dense_backward(da, c, params[f"{prefix}{k}.W"])
        grads[f"{prefix}{k}.W"] += dW
        grads[f"{prefix}{k}.b"] += db
    return dh


def disc_forward(params, s, e):
    """Discriminative head on [s; e]; returns scores >= 0 (B,), pre-activations and cache."""
    out, z, cache = _mlp_forward(params, "disc", np.concatenate([s, e], axis=1), relu_forward)
    return out[:, 0], z[:, 0], cache


def disc_backward(params, dscore, cache, grads):
    dx = _mlp_backward(params, "disc", dscore[:, None], cache, relu_backward, grads)
    D = dx.shape[1] // 2
    return dx[:, :D], dx[:, D:]


def gen_forward(params, s):
    out, _, cache = _mlp_forward(params, "gen", s, tanh_forward)
    return out, cache


def gen_backward(params, dout, cache, grads):
    return _mlp_backward(params, "gen", dout, cache, tanh_backward, grads)


@dataclass(frozen=True)
class LossConfig:
    margin_s: float = 0.0
    margin_g: float = 0.0
    w_s: float = 1.0
    w_g: float = 1.0

    def __post_init__(self):
        if min(self.margin_s, self.margin_g) < 0:
            raise ValueError("margins must be >= 0")
        if min(self.w_s, self.w_g) < 0 or max(self.w_s, self.w_g) <= 0:
            raise ValueError("loss weights must be >= 0 with at least one > 0")


def disc_term(s_pos, s_neg, margin_s):
    return s_pos ** 2 + np.maximum(margin_s - s_neg, 0.0) ** 2


def gen_term(gen_out, e_pos, e_neg, margin_g):
    d_pos = np.linalg.norm(gen_out - e_pos, axis=-1)
    d_neg = np.linalg.norm(gen_out - e_neg, axis=-1)
    return np.maximum(d_pos - d_neg + margin_g, 0.0)


def _unit(v):
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    return np.divide(v, norm, out=np.zeros_like(v), where=norm > 0)


def forward(arch: Architecture, params, batch: Batch):
    """Per-example outputs: s, disc scores for positive and negative items, generator output."""
    s, _ = features(arch, params, batch.users, batch.context)
    e_pos = params["item_table"][batch.positives]
    out = {"s": s, "disc_pos": disc_forward(params, s, e_pos)[0], "gen": gen_forward(params, s)[0]}
    if batch.negatives is not None:
        out["disc_neg"] = disc_forward(params, s, params["item_table"][batch.negatives])[0]
    return out


def loss_and_grads(arch: Architecture, params, batch: Batch, loss: LossConfig, need_grads: bool = True):
    """Batch-mean loss and, optionally, gradients for every parameter."""
    if batch.negatives is None:
        raise ValueError("training batches need negatives")
    B = len(batch)
    table = params["item_table"]
    s, fcache = features(arch, params, batch.users, batch.context)
    e_pos = table[batch.positives]
    e_neg = table[batch.negatives]
    two_s = np.concatenate([s, s])
    scores, _, dcache = disc_forward(params, two_s, np.concatenate([e_pos, e_neg]))
    s_pos, s_neg = scores[:B], scores[B:]
    G, gcache = gen_forward(params, s)
    diff_pos = G - e_pos
    diff_neg = G - e_neg
    hinge = np.linalg.norm(diff_pos, axis=1) - np.linalg.norm(diff_neg, axis=1) + loss.margin_g
    neg_gap = np.maximum(loss.margin_s - s_neg, 0.0)
    per_example = loss.w_s * (s_pos ** 2 + neg_gap ** 2) + loss.w_g * np.maximum(hinge, 0.0)
    value = float(per_example.mean())
    if not need_grads:
        return value, None
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dscores = np.concatenate([2.0 * loss.w_s * s_pos, -2.0 * loss.w_s * neg_gap]) / B
    ds_two, de_two = disc_backward(params, dscores, dcache, grads)
    ds_ = ds_two[:B] + ds_two[B:]
    de_pos = de_two[:B].copy()
    de_neg = de_two[B:].copy()
    active = (loss.w_g * (hinge > 0) / B)[:, None]
    u_pos = _unit(diff_pos) * active
    u_neg = _unit(diff_neg) * active
    dG = u_pos - u_neg
    de_pos -= u_pos
    de_neg += u_neg
    ds_ += gen_backward(params, dG, gcache, grads)
    features_backward(arch, params, ds_, fcache, grads)
    np.add.at(grads["item_table"], batch.positives, de_pos)
    np.add.at(grads["item_table"], batch.negatives, de_neg)
    return value, grads


def activation_pattern(arch: Architecture, params, batch: Batch, loss: LossConfig) -> np.ndarray:
    """Every rectifier and hinge on/off flag for a batch, flattened.

    Two parameter settings with the same pattern lie in the same smooth
    piece of the loss, which is what a finite-difference check needs.
    """
    s, fcache = features(arch, params, batch.users, batch.context)
    table = params["item_table"]
    flags = [fcache[k].ravel() for k in ("r1", "r2", "r3", "r4") if k in fcache]
    e_pos, e_neg = table[batch.positives], table[batch.negatives]
    scores, z, (dcaches, _) = disc_forward(params, np.concatenate([s, s]), np.concatenate([e_pos, e_neg]))
    flags += [m.ravel() for _, m in dcaches[:-1]]
    flags.append(z > 0)
    flags.append(scores[len(batch):] < loss.margin_s)
    G, (gcaches, _) = gen_forward(params, s)
    flags += [m.ravel() for _, m in gcaches[:-1]]
    hinge = np.linalg.norm(G - e_pos, axis=1) - np.linalg.norm(G - e_neg, axis=1) + loss.margin_g
    flags.append(hinge > 0)
    return np.concatenate(flags)
