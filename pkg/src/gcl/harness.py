"""Continual training loop over a task schedule, with R-matrix bookkeeping.

The first task trains the child network directly. Every later task runs
``controller_steps`` episodes: restore the pre-task weights, apply a sampled
ADD/DEL action sequence, train, score by validation accuracy, and update the
controller. The best-scoring actions are then applied once more to the
pre-task weights and the network is retrained, feeding the replay buffer
once per epoch.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor
from .childnet import VARIANTS, ChildNet
from .controller import (ActionSpace, Baseline, EpisodeRecord, LstmPolicy, apply_actions,
                         best_architecture, reinforce_step, sample)
from .errors import ConfigError, ContractError
from .graph import CsrGraph, ego_subgraph
from .replay import BufferSlot, Reservoir

log = logging.getLogger(__name__)

MODES = ("task", "class")


@dataclass
class TrainConfig:
    variant: str = "gcn"
    mode: str = "task"
    epochs: int = 250
    controller_steps: int = 4
    controller_batch: int = 1
    alpha: float = 0.5
    beta: float = 0.5
    buffer_capacity: int = 1000
    lr: float = 5e-3
    controller_lr: float = 3.5e-4
    hidden: tuple[int, int] = (20, 20)
    trials: int = 5
    seed: int = 123
    classes_per_task: int = 2
    class_order: tuple[int, ...] | None = None
    min_class_size: int = 0
    add_values: tuple[int, ...] = (0, 2, 4, 6, 8)
    del_values: tuple[int, ...] = (0, 1, 2, 3)
    controller_embed: int = 32
    controller_hidden: int = 64
    ego_seeds: int = 8
    ego_hops: int = 2
    ego_budget: int = 200
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.add_values = tuple(int(v) for v in self.add_values)
        self.del_values = tuple(int(v) for v in self.del_values)
        self.split = tuple(float(s) for s in self.split)
        if self.class_order is not None:
            self.class_order = tuple(int(c) for c in self.class_order)
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant: expected one of {VARIANTS}, got {self.variant!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode: expected one of {MODES}, got {self.mode!r}")
        for name in ("epochs", "controller_batch", "trials", "classes_per_task", "ego_seeds", "ego_budget"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be positive, got {getattr(self, name)}")
        for name in ("controller_steps", "buffer_capacity", "alpha", "beta", "min_class_size", "ego_hops"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be non-negative, got {getattr(self, name)}")
        if self.lr <= 0 or self.controller_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if len(self.hidden) != 2 or min(self.hidden) < 1:
            raise ConfigError(f"hidden: need two positive widths, got {self.hidden}")
        if len(self.split) != 3 or min(self.split) <= 0 or abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError(f"split: need three positive fractions summing to 1, got {self.split}")
        try:
            ActionSpace(self.add_values, self.del_values)
        except ContractError as exc:
            raise ConfigError(f"action space: {exc}") from None

    @property
    def action_space(self) -> ActionSpace:
        return ActionSpace(self.add_values, self.del_values, layers=len(self.hidden))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    classes: tuple[int, ...]
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


# ---------------------------------------------------------------- task schedule


def stratified_split(labels, rng: np.random.Generator, fractions=(0.6, 0.2, 0.2)) -> dict[str, np.ndarray]:
    """Per-class shuffled train/val/test partition."""
    labels = np.asarray(labels)
    parts = {"train": [], "val": [], "test": []}
    for c in np.unique(labels):
        nodes = rng.permutation(np.flatnonzero(labels == c))
        n_train = int(round(fractions[0] * nodes.size))
        n_val = int(round(fractions[1] * nodes.size))
        parts["train"].append(nodes[:n_train])
        parts["val"].append(nodes[n_train:n_train + n_val])
        parts["test"].append(nodes[n_train + n_val:])
    return {k: np.sort(np.concatenate(v)) for k, v in parts.items()}


def split_into_tasks(labels, classes_per_task: int, class_order=None, *, min_class_size: int = 0,
                     splits: dict | None = None, rng: np.random.Generator | None = None) -> list[TaskSpec]:
    """Chunk classes into tasks of ``classes_per_task``; a trailing partial chunk is dropped."""
    if classes_per_task < 1:
        raise ContractError("classes_per_task must be >= 1")
    labels = np.asarray(labels)
    present, counts = np.unique(labels, return_counts=True)
    size = dict(zip(present.tolist(), counts.tolist()))
    order = sorted(size) if class_order is None else [int(c) for c in class_order]
    order = [c for c in order if size.get(c, 0) >= max(min_class_size, 1)]
    n_tasks = len(order) // classes_per_task
    if n_tasks == 0:
        raise ContractError(f"{len(order)} usable classes cannot fill a task of {classes_per_task}")
    if splits is None:
        splits = stratified_split(labels, rng if rng is not None else np.random.default_rng(0))
    tasks = []
    for t in range(n_tasks):
        cls = tuple(order[t * classes_per_task:(t + 1) * classes_per_task])
        member = np.isin(labels, cls)
        tasks.append(TaskSpec(
            task_id=t,
            classes=cls,
            train=np.intersect1d(splits["train"], np.flatnonzero(member)),
            val=np.intersect1d(splits["val"], np.flatnonzero(member)),
            test=np.intersect1d(splits["test"], np.flatnonzero(member)),
        ))
    return tasks


# ---------------------------------------------------------------- losses


def _targets(net: ChildNet, labels, task_id: int, mode: str):
    """(column subset or None, per-node target index into that subset)."""
    labels = np.asarray(labels)
    if mode == "task":
        cols = net.task_columns(task_id)
        lookup = {c: i for i, c in enumerate(np.asarray(net.head.classes)[cols])}
        return cols, np.array([lookup.get(int(l), -1) for l in labels], dtype=np.int64)
    return None, net.column_of(labels)


def task_loss(net: ChildNet, logits: Tensor, labels, nodes, task_id: int, mode: str) -> Tensor:
    """Cross-entropy over ``nodes``. Task-incremental mode restricts the softmax
    to the columns of ``task_id``."""
    cols, target = _targets(net, labels, task_id, mode)
    if cols is not None:
        logits = ad.gather_cols(logits, cols)
    return ad.masked_cross_entropy(logits, target, nodes)


@dataclass
class Problem:
    """Immutable data shared by every training call of a trial."""

    graph: CsrGraph
    features: np.ndarray
    labels: np.ndarray
    tasks: list[TaskSpec]
    mode: str = "task"


def joint_loss(net: ChildNet, problem: Problem, task: TaskSpec, buffer: Reservoir | None,
               alpha: float, beta: float, rng: np.random.Generator) -> Tensor:
    """Current-task cross-entropy plus alpha * logit MSE and beta * label
    cross-entropy on two independent replay draws. Replay terms vanish when the
    buffer is empty or both weights are zero."""
    logits = net.forward(problem.graph, problem.features)
    loss = task_loss(net, logits, problem.labels, task.train, task.task_id, problem.mode)
    if buffer is None or buffer.is_empty() or (alpha == 0 and beta == 0):
        return loss
    slot_i, slot_j = buffer.sample_two(rng)
    if alpha > 0:
        out = net.forward(slot_i.subgraph.graph, slot_i.subgraph.features)
        out = ad.gather_cols(out, net.column_of(slot_i.columns))
        loss = ad.add(loss, ad.mul(ad.mse(out, slot_i.logits), alpha))
    if beta > 0 and slot_j.train_mask.size:
        sub = slot_j.subgraph
        out = net.forward(sub.graph, sub.features)
        replay = task_loss(net, out, sub.labels, slot_j.train_mask, slot_j.task_id, problem.mode)
        loss = ad.add(loss, ad.mul(replay, beta))
    return loss


def make_slot(net: ChildNet, problem: Problem, task: TaskSpec, config: TrainConfig,
              rng: np.random.Generator) -> BufferSlot:
    """Ego-subgraph around a few training nodes of ``task`` plus the network's
    current logits on it."""
    k = min(config.ego_seeds, task.train.size, config.ego_budget)
    seeds = rng.choice(task.train, size=k, replace=False)
    sub = ego_subgraph(problem.graph, problem.features, problem.labels, seeds,
                       hops=config.ego_hops, budget=config.ego_budget, rng=rng)
    logits = net.forward(sub.graph, sub.features).values
    return BufferSlot(subgraph=sub, logits=logits, task_id=task.task_id,
                      train_mask=np.flatnonzero(np.isin(sub.nodes, task.train)),
                      columns=tuple(net.head.classes))


def train_network(net: ChildNet, problem: Problem, task: TaskSpec, buffer: Reservoir | None,
                  config: TrainConfig, rng: np.random.Generator, insert: bool = False) -> list[float]:
    """``config.epochs`` full-graph Adam epochs on the joint loss. With
    ``insert`` the buffer receives one insertion attempt per epoch."""
    opt = Adam(net.parameters(), lr=config.lr)
    losses = []
    for _ in range(config.epochs):
        loss = joint_loss(net, problem, task, buffer, config.alpha, config.beta, rng)
        ad.backward(loss)
        opt.step()
        losses.append(loss.item())
        if insert and buffer is not None and buffer.capacity > 0:
            buffer.insert_from(lambda: make_slot(net, problem, task, config, rng))
    return losses


# ---------------------------------------------------------------- evaluation


def accuracy(net: ChildNet, problem: Problem, task: TaskSpec, split: str, mode: str,
             logits: np.ndarray | None = None) -> float:
    nodes = getattr(task, split)
    if nodes.size == 0:
        raise ContractError(f"task {task.task_id} has an empty {split} set")
    if logits is None:
        logits = net.forward(problem.graph, problem.features).values
    pred = net.predict_from_logits(logits[nodes], task.task_id if mode == "task" else None)
    return float(np.mean(pred == problem.labels[nodes]))


def reward(net: ChildNet, problem: Problem, tasks_seen) -> float:
    """Mean validation accuracy over every task seen so far."""
    logits = net.forward(problem.graph, problem.features).values
    return float(np.mean([accuracy(net, problem, t, "val", problem.mode, logits) for t in tasks_seen]))


def new_r_matrix(n_tasks: int) -> np.ndarray:
    return np.full((n_tasks, n_tasks), np.nan)


def evaluate_and_record(net: ChildNet, R: np.ndarray, i: int, problem: Problem, mode: str | None = None):
    """Fill row ``i`` of ``R`` with test accuracy on tasks 0..i."""
    mode = mode or problem.mode
    logits = net.forward(problem.graph, problem.features).values
    for j in range(i + 1):
        R[i, j] = accuracy(net, problem, problem.tasks[j], "test", mode, logits)


def aa(R) -> float:
    R = np.asarray(R, dtype=float)
    T = R.shape[0]
    return float(np.mean(R[T - 1, :T]))


def af(R) -> float:
    R = np.asarray(R, dtype=float)
    T = R.shape[0]
    if T < 2:
        return 0.0
    return float(np.mean([R[j, j] - R[T - 1, j] for j in range(T - 1)]))


# ---------------------------------------------------------------- one task


@dataclass
class TaskReport:
    task_id: int
    episodes: list[EpisodeRecord] = field(default_factory=list)
    chosen_actions: tuple[int, ...] | None = None
    widths: tuple[int, int] | None = None
    episode_start_digests: list[str] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)


def weights_digest(net: ChildNet) -> str:
    h = hashlib.sha256()
    for name, p in net.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.values).tobytes())
    return h.hexdigest()


def _restore(net: ChildNet, snapshot: ChildNet):
    net.__dict__.update(snapshot.copy().__dict__)


def train_task(net: ChildNet, policy: LstmPolicy | None, baseline: Baseline, task: TaskSpec,
               problem: Problem, buffer: Reservoir | None, config: TrainConfig,
               rngs: dict[str, np.random.Generator]) -> TaskReport:
    """Train ``net`` in place on ``task`` (tasks before it already seen)."""
    for split in ("train", "val", "test"):
        if getattr(task, split).size == 0:
            raise ContractError(f"task {task.task_id}: empty {split} set")
    report = TaskReport(task.task_id)
    net.expand_head(task.classes, task.task_id, rngs["init"])
    seen = problem.tasks[:task.task_id + 1]

    if task.task_id == 0 or policy is None or config.controller_steps == 0:
        report.losses = train_network(net, problem, task, buffer, config, rngs["train"], insert=True)
        report.widths = net.widths
        return report

    snapshot = net.copy()
    seeds = {}
    for step in range(config.controller_steps):
        batch = sample(policy, rngs["controller"], config.controller_batch)
        for ep in batch:
            seeds[id(ep)] = int(rngs["train"].integers(2**63))
            _restore(net, snapshot)
            report.episode_start_digests.append(weights_digest(net))
            ep_rng = np.random.default_rng(seeds[id(ep)])
            apply_actions(net, ep.actions, ep_rng)
            scratch = None if buffer is None else buffer.copy()
            train_network(net, problem, task, scratch, config, ep_rng, insert=True)
            ep.architecture = net.widths
            ep.set_reward(reward(net, problem, seen))
            log.debug("task %d step %d actions %s widths %s reward %.4f",
                      task.task_id, step, ep.actions, ep.architecture, ep.reward)
        reinforce_step(policy, batch, baseline)
        report.episodes.extend(batch)

    # replaying the winner's seed against the untouched buffer reproduces the
    # exact run its reward was measured on
    best = best_architecture(report.episodes)
    _restore(net, snapshot)
    final_rng = np.random.default_rng(seeds[id(best)])
    apply_actions(net, best.actions, final_rng)
    report.losses = train_network(net, problem, task, buffer, config, final_rng, insert=True)
    report.chosen_actions = best.actions
    report.widths = net.widths
    return report


# ---------------------------------------------------------------- one trial


@dataclass
class TrialResult:
    seed: int
    R: np.ndarray
    R_task: np.ndarray
    R_class: np.ndarray
    tasks: list[TaskSpec]
    reports: list[TaskReport]
    buffer_size: int
    buffer_seen: int

    @property
    def aa(self) -> float:
        return aa(self.R)

    @property
    def af(self) -> float:
        return af(self.R)

    @property
    def final_accuracies(self) -> np.ndarray:
        return self.R[-1].copy()


def trial_streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("split", "init", "controller_init", "controller", "buffer", "train")
    seqs = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(s) for name, s in zip(names, seqs)}


def run_trial(bundle, config: TrainConfig, seed: int | None = None) -> TrialResult:
    """One full pass over the task schedule of ``bundle``."""
    seed = config.seed if seed is None else seed
    rngs = trial_streams(seed)
    splits = bundle.masks or stratified_split(bundle.labels, rngs["split"], config.split)
    tasks = split_into_tasks(bundle.labels, config.classes_per_task, config.class_order,
                             min_class_size=config.min_class_size, splits=splits)
    problem = Problem(bundle.graph, bundle.features, bundle.labels, tasks, config.mode)
    net = ChildNet(config.variant, bundle.features.shape[1], config.hidden, rng=rngs["init"])
    policy = None
    if config.controller_steps > 0:
        policy = LstmPolicy(config.action_space, config.controller_embed, config.controller_hidden,
                            lr=config.controller_lr, rng=rngs["controller_init"])
    baseline = Baseline()
    buffer = Reservoir(config.buffer_capacity, rng=rngs["buffer"])

    R_task, R_class = new_r_matrix(len(tasks)), new_r_matrix(len(tasks))
    reports = []
    for task in tasks:
        reports.append(train_task(net, policy, baseline, task, problem, buffer, config, rngs))
        evaluate_and_record(net, R_task, task.task_id, problem, "task")
        evaluate_and_record(net, R_class, task.task_id, problem, "class")
        log.info("seed %d task %d widths %s R_task %s R_class %s", seed, task.task_id,
                 net.widths, np.round(R_task[task.task_id, :task.task_id + 1], 3),
                 np.round(R_class[task.task_id, :task.task_id + 1], 3))
    R = R_task if config.mode == "task" else R_class
    return TrialResult(seed, R, R_task, R_class, tasks, reports, len(buffer), buffer.seen)


def summarize(results) -> dict:
    """Mean and sample standard deviation of AA/AF across trials."""
    out = {}
    for key in ("aa", "af"):
        vals = np.array([getattr(r, key) for r in results])
        out[key] = {
            "per_trial": vals.tolist(),
            "mean": float(vals.mean()),
            "std": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
        }
    out["seeds"] = [r.seed for r in results]
    return out


def run_trials(bundle, config: TrainConfig) -> list[TrialResult]:
    return [run_trial(bundle, config, config.seed + k) for k in range(config.trials)]
