"""Training loop, ranking and checkpoints for the dual-loss network."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import container
from ..evalharness import Recommender, _history, evaluate, rank_candidates
from ..interactions import Split, interaction_matrix
from .model import (
    HISTORY,
    PAD,
    Architecture,
    Batch,
    LossConfig,
    disc_forward,
    features,
    gen_forward,
    init_params,
    loss_and_grads,
)

HEADS = ("disc", "gen")


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    margin_s: float = 0.0
    margin_g: float = 0.0
    w_s: float = 1.0
    w_g: float = 1.0
    lr: float = 1e-3
    weight_decay: float = 0.0
    steps: int = 2000
    batch_size: int = 64
    seed: int = 123
    feature_variant: str = "resnet"
    user_merge: str = "sequence"
    history: int = HISTORY
    eval_every_epoch: bool = True
    head: str = "disc"

    def __post_init__(self):
        self.loss_config()
        if self.steps < 0 or self.batch_size < 1 or self.history < 1:
            raise ValueError("steps >= 0, batch_size >= 1 and history >= 1 required")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("lr must be > 0 and weight_decay >= 0")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")

    def loss_config(self) -> LossConfig:
        return LossConfig(self.margin_s, self.margin_g, self.w_s, self.w_g)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in params:
            g = grads[k]
            if self.weight_decay:
                g = g + self.weight_decay * params[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            denom = np.sqrt(v / c2)
            denom += self.eps
            params[k] -= (self.lr / c1) * m / denom


def context_window(sequence, t: int, history: int) -> np.ndarray:
    """The ``history`` items before position t, oldest first, left-padded with PAD."""
    seq = np.asarray(sequence, dtype=np.int64)[:max(t, 0)]
    recent = seq[-history:] if history else seq[:0]
    out = np.full(history, PAD, dtype=np.int64)
    if len(recent):
        out[history - len(recent):] = recent
    return out


def training_examples(split: Split, history: int = HISTORY):
    """(users, contexts, positives) for every train position of every user."""
    users, contexts, positives = [], [], []
    for u, seq in enumerate(split.train.user_sequences()):
        for t in range(len(seq)):
            users.append(u)
            contexts.append(context_window(seq, t, history))
            positives.append(seq[t])
    if not users:
        raise ValueError("the train split has no events")
    return (np.array(users, dtype=np.int64), np.array(contexts, dtype=np.int64).reshape(-1, history),
            np.array(positives, dtype=np.int64))


class NegativeSampler:
    """Uniform items outside each user's train set, by rejection."""

    def __init__(self, split: Split):
        self.T = interaction_matrix(split.train).tocsr()
        self.n_items = split.n_items
        full = np.flatnonzero(np.diff(self.T.indptr) >= self.n_items)
        if len(full):
            raise ValueError(f"user {split.user_ids[full[0]]} has interacted with every item; "
                             "no negatives can be sampled")

    def _seen(self, users, items):
        return np.asarray(self.T[users, items]).ravel() > 0

    def sample(self, users, rng):
        users = np.asarray(users, dtype=np.int64)
        items = rng.integers(0, self.n_items, size=len(users))
        bad = np.flatnonzero(self._seen(users, items))
        while len(bad):
            items[bad] = rng.integers(0, self.n_items, size=len(bad))
            bad = bad[self._seen(users[bad], items[bad])]
        return items


@dataclass
class DLR2Model:
    arch: Architecture
    params: dict
    config: TrainConfig = field(default_factory=TrainConfig)

    def features(self, users, context):
        return features(self.arch, self.params, users, context)[0]

    def disc_scores(self, s_row, items, preactivation: bool = False):
        """Discriminative output for one feature vector against many items."""
        items = np.asarray(items, dtype=np.int64)
        e = self.params["item_table"][items]
        out, z, _ = disc_forward(self.params, np.broadcast_to(s_row, (len(items), len(s_row))), e)
        return z if preactivation else out

    def gen_distances(self, s_row, items):
        G, _ = gen_forward(self.params, s_row[None, :])
        return np.linalg.norm(self.params["item_table"][np.asarray(items, dtype=np.int64)] - G, axis=1)


def _ranking_key(model: DLR2Model, s_row, items, head):
    """Smaller key ranks higher.

    For the discriminative head the key is the pre-rectifier output: it
    orders exactly like the head's output wherever that output is positive
    and also separates the items whose output is clamped at zero.
    """
    if head == "disc":
        return model.disc_scores(s_row, items, preactivation=True)
    if head == "gen":
        return model.gen_distances(s_row, items)
    raise ValueError(f"head must be one of {HEADS}")


def rank_items(model: DLR2Model, user: int, t: int, candidates, head: str = "disc", N: int = 10,
               sequence=None) -> list[int]:
    """Top-N candidates for ``user`` at position t of ``sequence`` (ascending head output).

    ``sequence`` is the user's chronological item list; t indexes into it and
    only items before t form the context.  Ties go to the smaller item index.
    """
    if sequence is None:
        sequence = []
    ctx = context_window(sequence, t, model.arch.history)
    s = model.features(np.array([user]), ctx[None, :])[0]
    candidates = np.asarray(list(candidates), dtype=np.int64)
    key = np.empty(model.arch.n_items)
    key[candidates] = _ranking_key(model, s, candidates, head)
    return rank_candidates(-key, candidates, N).tolist()


class DLR2Recommender(Recommender):
    """Adapter for ``evaluate``: the context is the last l items of the stage's history."""

    kind = "dlr2"

    def __init__(self, model: DLR2Model, head: str = "disc"):
        if head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")
        self.model = model
        self.head = head
        self._contexts = {}

    def fit(self, split):
        super().fit(split)
        if (split.n_users, split.n_items) != (self.model.arch.n_users, self.model.arch.n_items):
            raise ValueError("model was trained on a different user/item universe")
        self._contexts = {}
        return self

    def _context(self, stage):
        if stage not in self._contexts:
            seqs = _history(self.split, stage).user_sequences()
            l = self.model.arch.history
            self._contexts[stage] = np.array([context_window(s, len(s), l) for s in seqs]).reshape(-1, l)
        return self._contexts[stage]

    def score(self, users, stage="test"):
        users = self._check_users(users)
        S = self.model.features(users, self._context(stage)[users])
        items = np.arange(self.n_items)
        return -np.stack([_ranking_key(self.model, s, items, self.head) for s in S]) \
            if len(users) else np.zeros((0, self.n_items))


@dataclass
class TrainResult:
    model: DLR2Model
    curve: list = field(default_factory=list)   # (step, loss, val_hr10 or nan)

    def curve_tsv(self) -> str:
        lines = ["step\tloss\tval_hr10"]
        for step, loss, hr in self.curve:
            lines.append(f"{step}\t{loss:.10g}\t{'nan' if math.isnan(hr) else f'{hr:.6f}'}")
        return "\n".join(lines) + "\n"

    @property
    def final_val_hr10(self) -> float:
        hrs = [hr for _, _, hr in self.curve if not math.isnan(hr)]
        return hrs[-1] if hrs else math.nan


def validation_hr10(model: DLR2Model, split: Split, head: str = "disc") -> float:
    report = evaluate(DLR2Recommender(model, head), split, cutoffs=(10,), stage="validation")
    return report.get("hr", 10)


def _as_array(e):
    return getattr(e, "values", e)


def train(split: Split, init_user, init_item, config: TrainConfig = TrainConfig(),
          log=None) -> TrainResult:
    """Adam on the dual loss with one uniform negative per positive.

    The loss curve gets one row per step; validation HR@10 is filled in at
    the end of every epoch (and after the final step).  Deterministic given
    ``config.seed``.
    """
    init_user, init_item = _as_array(init_user), _as_array(init_item)
    dim = np.shape(init_item)[1]
    if np.shape(init_user)[1] != dim:
        raise ValueError("user and item embeddings differ in dimension")
    arch = Architecture(split.n_users, split.n_items, dim, config.history,
                        config.feature_variant, config.user_merge)
    rng = np.random.default_rng(config.seed)
    params = init_params(arch, init_user, init_item, rng)
    model = DLR2Model(arch, params, config)
    loss_cfg = config.loss_config()
    users, contexts, positives = training_examples(split, config.history)
    sampler = NegativeSampler(split)
    optim = Adam(params, config.lr, weight_decay=config.weight_decay)
    steps_per_epoch = max(1, math.ceil(len(users) / config.batch_size))
    result = TrainResult(model)
    for step in range(1, config.steps + 1):
        pick = rng.integers(0, len(users), size=config.batch_size)
        batch = Batch(users[pick], contexts[pick], positives[pick], sampler.sample(users[pick], rng))
        loss, grads = loss_and_grads(arch, params, batch, loss_cfg)
        if not math.isfinite(loss):
            norms = {k: float(np.linalg.norm(v)) for k, v in params.items()}
            worst = max(norms, key=lambda k: norms[k] if math.isfinite(norms[k]) else math.inf)
            raise TrainingDivergedError(f"loss became {loss} at step {step}; largest parameter norm "
                                        f"{worst}={norms[worst]:.3g}; try a smaller learning rate")
        optim.step(params, grads)
        hr = math.nan
        if config.eval_every_epoch and (step % steps_per_epoch == 0 or step == config.steps):
            hr = validation_hr10(model, split, config.head)
            if log is not None:
                print(f"step {step}: loss {loss:.5f} val HR@10 {hr:.4f}", file=log)
        result.curve.append((step, loss, hr))
    return result


def save_model(model: DLR2Model, path, provenance: dict | None = None) -> None:
    prov = {"arch": model.arch.as_dict(), "config": asdict(model.config)}
    prov.update(provenance or {})
    container.write_bytes(path, container.encode_checkpoint(model.params, prov))


def load_model(path) -> DLR2Model:
    sections, prov = container.decode_checkpoint(container.read_bytes(path), path)
    try:
        arch = Architecture(**prov["arch"])
        config = TrainConfig(**prov.get("config", {}))
    except (KeyError, TypeError) as exc:
        raise container.ContainerError(f"{path}: checkpoint lacks architecture metadata ({exc})") from None
    return DLR2Model(arch, sections, config)

