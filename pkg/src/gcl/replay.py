"""Reservoir-sampled store of past-task subgraphs and the logits recorded on them."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyBufferError
from .graph import Subgraph


@dataclass(frozen=True)
class BufferSlot:
    subgraph: Subgraph
    logits: np.ndarray          # frozen copy, nodes x classes-at-storage-time
    task_id: int
    train_mask: np.ndarray      # local indices whose labels are replayed
    columns: tuple[int, ...]    # class ids behind each logit column

    def __post_init__(self):
        logits = np.array(self.logits, dtype=np.float64, copy=True)
        logits.setflags(write=False)
        object.__setattr__(self, "logits", logits)
        mask = np.array(self.train_mask, dtype=np.int64, copy=True)
        mask.setflags(write=False)
        object.__setattr__(self, "train_mask", mask)
        object.__setattr__(self, "columns", tuple(int(c) for c in self.columns))
        if logits.shape[0] != self.subgraph.n:
            raise ValueError(f"logits have {logits.shape[0]} rows for a {self.subgraph.n}-node subgraph")


@dataclass
class Reservoir:
    capacity: int = 1000
    rng: np.random.Generator = field(default_factory=np.random.default_rng, repr=False)
    slots: list = field(default_factory=list, repr=False)
    seen: int = 0

    def __len__(self) -> int:
        return len(self.slots)

    def is_empty(self) -> bool:
        return not self.slots

    def will_keep(self) -> int | None:
        """Advance the insertion counter and return the slot index the next
        item lands in, or None when it is discarded."""
        self.seen += 1
        if len(self.slots) < self.capacity:
            return len(self.slots)
        j = int(self.rng.integers(0, self.seen))
        return j if j < self.capacity else None

    def insert(self, slot):
        self.insert_from(lambda: slot)

    def insert_from(self, make_slot) -> bool:
        """Like ``insert`` but only builds the slot when the reservoir keeps it."""
        index = self.will_keep()
        if index is None:
            return False
        slot = make_slot()
        if index == len(self.slots):
            self.slots.append(slot)
        else:
            self.slots[index] = slot
        return True

    def insert_many(self, items):
        """Insert a sequence in one pass. Consumes the RNG exactly as repeated
        ``insert`` calls would, so the resulting slots are identical."""
        items = list(items)
        free = max(0, min(self.capacity - len(self.slots), len(items)))
        self.slots.extend(items[:free])
        self.seen += free
        rest = items[free:]
        if not rest:
            return
        highs = np.arange(self.seen + 1, self.seen + len(rest) + 1)
        draws = self.rng.integers(0, highs)
        self.seen += len(rest)
        for k in np.flatnonzero(draws < self.capacity).tolist():
            self.slots[int(draws[k])] = rest[k]

    def copy(self) -> "Reservoir":
        """Independent reservoir with the same slots, counter and RNG state."""
        return Reservoir(self.capacity, rng=copy.deepcopy(self.rng), slots=list(self.slots), seen=self.seen)

    def sample_two(self, rng: np.random.Generator | None = None):
        """Two independent uniform draws with replacement."""
        if not self.slots:
            raise EmptyBufferError("replay buffer is empty")
        rng = rng if rng is not None else self.rng
        i, j = rng.integers(0, len(self.slots), size=2)
        return self.slots[int(i)], self.slots[int(j)]
