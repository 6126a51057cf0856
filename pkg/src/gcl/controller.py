"""LSTM policy over per-layer ADD/DEL counts, trained with REINFORCE.

A rollout emits ``2 * layers`` tokens in layer-major order
(ADD_1, DEL_1, ADD_2, DEL_2, ...). Each position has its own value set,
output projection and token embedding; the LSTM input at position ``k`` is
the embedding of the token sampled at ``k - 1`` (a learned start vector at
``k = 0``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor
from .childnet import ChildNet, glorot
from .errors import ContractError


@dataclass(frozen=True)
class ActionSpace:
    add_values: tuple[int, ...] = (0, 2, 4, 6, 8)
    del_values: tuple[int, ...] = (0, 1, 2, 3)
    layers: int = 2

    def __post_init__(self):
        object.__setattr__(self, "add_values", tuple(int(v) for v in self.add_values))
        object.__setattr__(self, "del_values", tuple(int(v) for v in self.del_values))
        for name in ("add_values", "del_values"):
            vals = getattr(self, name)
            if not vals or 0 not in vals:
                raise ContractError(f"{name} must be non-empty and contain 0")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ContractError(f"{name} must be strictly increasing")
            if vals[0] < 0:
                raise ContractError(f"{name} must be non-negative")
        if self.layers < 1:
            raise ContractError("layers must be >= 1")

    @property
    def length(self) -> int:
        return 2 * self.layers

    def position_values(self) -> list[tuple[int, ...]]:
        return [self.add_values, self.del_values] * self.layers

    def decode(self, tokens) -> tuple[int, ...]:
        """Token indices -> action counts."""
        return tuple(vals[int(t)] for vals, t in zip(self.position_values(), tokens))

    def size(self) -> int:
        return (len(self.add_values) * len(self.del_values)) ** self.layers


@dataclass
class EpisodeRecord:
    tokens: tuple[int, ...]
    actions: tuple[int, ...]
    log_probs: Tensor
    reward: float | None = None
    architecture: tuple[int, ...] | None = None

    def set_reward(self, reward: float):
        if self.reward is not None:
            raise ContractError("reward already recorded for this episode")
        self.reward = float(reward)

    @property
    def total_log_prob(self) -> float:
        return float(self.log_probs.values.sum())


@dataclass
class Baseline:
    """Running mean of every reward observed so far (0 before the first)."""

    mean: float = 0.0
    count: int = 0
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def value(self) -> float:
        return self.mean

    def update(self, rewards):
        for r in rewards:
            self.count += 1
            self.mean += (float(r) - self.mean) / self.count
            self.history.append(float(r))


class LstmPolicy:
    def __init__(self, space: ActionSpace | None = None, embed_dim: int = 32, hidden_dim: int = 64,
                 lr: float = 3.5e-4, rng: np.random.Generator | None = None):
        self.space = space or ActionSpace()
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        rng = rng if rng is not None else np.random.default_rng()
        e, h = embed_dim, hidden_dim
        vals = self.space.position_values()
        self.w_x = ad.parameter(glorot(rng, e, 4 * h))
        self.w_h = ad.parameter(glorot(rng, h, 4 * h))
        self.b = ad.parameter(np.zeros((1, 4 * h)))
        self.start = ad.parameter(rng.uniform(-0.1, 0.1, size=(1, e)))
        self.embeddings = [ad.parameter(rng.uniform(-0.1, 0.1, size=(len(v), e))) for v in vals[:-1]]
        self.out_w = [ad.parameter(glorot(rng, h, len(v))) for v in vals]
        self.out_b = [ad.parameter(np.zeros((1, len(v)))) for v in vals]
        self.optimizer = Adam(self.parameters(), lr=lr)

    def parameters(self) -> list[Tensor]:
        return [self.w_x, self.w_h, self.b, self.start, *self.embeddings, *self.out_w, *self.out_b]

    def _cell(self, x: Tensor, h: Tensor, c: Tensor):
        hd = self.hidden_dim
        gates = ad.add(ad.add(ad.matmul(x, self.w_x), ad.matmul(h, self.w_h)), self.b)
        i = ad.sigmoid(ad.slice_cols(gates, 0, hd))
        f = ad.sigmoid(ad.slice_cols(gates, hd, 2 * hd))
        g = ad.tanh(ad.slice_cols(gates, 2 * hd, 3 * hd))
        o = ad.sigmoid(ad.slice_cols(gates, 3 * hd, 4 * hd))
        c = ad.add(ad.mul(f, c), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
        return h, c

    def rollout(self, batch: int = 1, rng: np.random.Generator | None = None, tokens=None):
        """Run the LSTM over ``batch`` sequences.

        With ``tokens`` (batch x length indices) the sequence is teacher-forced;
        otherwise each token is sampled from the policy with ``rng``.
        Returns (token matrix, per-token log-prob tensor of shape batch x length).
        """
        if tokens is not None:
            tokens = np.asarray(tokens, dtype=np.int64).reshape(-1, self.space.length)
            batch = tokens.shape[0]
        else:
            rng = rng if rng is not None else np.random.default_rng()
            tokens = np.zeros((batch, self.space.length), dtype=np.int64)
            draws = rng.random((batch, self.space.length))
        h = ad.constant(np.zeros((batch, self.hidden_dim)))
        c = ad.constant(np.zeros((batch, self.hidden_dim)))
        x = ad.gather_rows(self.start, np.zeros(batch, dtype=np.int64))
        picked = None
        sampling = rng is not None
        for k in range(self.space.length):
            h, c = self._cell(x, h, c)
            logits = ad.add(ad.matmul(h, self.out_w[k]), self.out_b[k])
            logp = ad.log_softmax_rows(logits)
            if sampling:
                cdf = np.cumsum(np.exp(logp.values), axis=1)
                idx = (cdf < draws[:, k:k + 1] * cdf[:, -1:]).sum(axis=1)
                tokens[:, k] = np.minimum(idx, logits.shape[1] - 1)
            col = ad.take_per_row(logp, tokens[:, k])
            picked = col if picked is None else ad.concat_cols(picked, col)
            if k + 1 < self.space.length:
                x = ad.gather_rows(self.embeddings[k], tokens[:, k])
        return tokens, picked

    def sequence_log_probs(self, tokens) -> np.ndarray:
        """Total log-probability of each given token sequence."""
        _, lp = self.rollout(tokens=tokens)
        return lp.values.sum(axis=1)


def sample(policy: LstmPolicy, rng: np.random.Generator, batch: int = 1) -> list[EpisodeRecord]:
    """Draw ``batch`` independent action sequences (rewards unset)."""
    tokens, lp = policy.rollout(batch=batch, rng=rng)
    records = []
    for r in range(batch):
        toks = tuple(int(t) for t in tokens[r])
        records.append(EpisodeRecord(tokens=toks, actions=policy.space.decode(toks),
                                     log_probs=ad.gather_rows(lp, [r])))
    return records


def reinforce_step(policy: LstmPolicy, episodes, baseline: Baseline):
    """Ascend sum_e sum_t log pi(a_t) * (R_e - baseline), then fold the batch's
    rewards into the baseline. A batch whose advantages are all exactly zero
    leaves the parameters (and optimizer state) untouched."""
    episodes = list(episodes)
    if not episodes:
        raise ContractError("reinforce_step needs at least one episode")
    if any(ep.reward is None for ep in episodes):
        raise ContractError("every episode needs a reward before the policy update")
    b = baseline.value
    advantages = [ep.reward - b for ep in episodes]
    if any(a != 0.0 for a in advantages):
        loss = None
        for ep, adv in zip(episodes, advantages):
            term = ad.mul(ad.sum_all(ep.log_probs), -adv)
            loss = term if loss is None else ad.add(loss, term)
        policy.optimizer.zero_grad()
        ad.backward(loss)
        policy.optimizer.step()
    baseline.update(ep.reward for ep in episodes)


def apply_actions(net: ChildNet, actions, rng: np.random.Generator | None = None):
    """Resize every hidden layer by its (ADD, DEL) pair of action counts."""
    actions = tuple(int(a) for a in actions)
    if len(actions) != 2 * len(net.layers):
        raise ContractError(f"need {2 * len(net.layers)} action values, got {len(actions)}")
    for i in range(len(net.layers)):
        net.resize_layer(i, add=actions[2 * i], delete=actions[2 * i + 1], rng=rng)


def best_architecture(records) -> EpisodeRecord:
    records = list(records)
    if not records:
        raise ContractError("best_architecture needs at least one record")
    best = records[0]
    for rec in records[1:]:
        if rec.reward > best.reward:
            best = rec
    return best
