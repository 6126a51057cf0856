"""The evolvable child network: two message-passing layers plus a linear head.

Hidden widths change between tasks through ``resize_layer``. Growth appends
units whose outgoing weights are exactly zero, so the network computes the
same function immediately after growing.
"""

from __future__ import annotations

import copy

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, ShapeError, VariantError
from .graph import CsrGraph

VARIANTS = ("gcn", "gat", "sage")
GAT_HEADS = 2
GAT_SLOPE = 0.2


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / max(fan_in + fan_out, 1))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class Layer:
    """One message-passing layer of a given variant.

    GCN keeps one weight ``in x out``; GraphSAGE one weight ``2*in x out``
    (self rows first, neighbour-mean rows second); GAT one weight and a pair
    of ``out x 1`` attention halves per head.
    """

    def __init__(self, variant: str, in_dim: int, out_dim: int, rng: np.random.Generator):
        if variant not in VARIANTS:
            raise VariantError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        self.variant = variant
        self.in_dim = in_dim
        self.out_dim = out_dim
        rows = 2 * in_dim if variant == "sage" else in_dim
        n_heads = GAT_HEADS if variant == "gat" else 1
        self.weights = [ad.parameter(glorot(rng, rows, out_dim)) for _ in range(n_heads)]
        self.att_src, self.att_dst = [], []
        if variant == "gat":
            for _ in range(n_heads):
                a = glorot(rng, 2 * out_dim, 1)
                self.att_src.append(ad.parameter(a[:out_dim]))
                self.att_dst.append(ad.parameter(a[out_dim:]))
        self.bias = ad.parameter(np.zeros((1, out_dim)))

    def named_parameters(self):
        out = [(f"weight{k}", w) for k, w in enumerate(self.weights)]
        out += [(f"att_src{k}", a) for k, a in enumerate(self.att_src)]
        out += [(f"att_dst{k}", a) for k, a in enumerate(self.att_dst)]
        out.append(("bias", self.bias))
        return out

    def forward(self, g: CsrGraph, h: Tensor) -> Tensor:
        if h.shape[1] != self.in_dim:
            raise ShapeError(f"layer expects {self.in_dim} input features, got {h.shape[1]}")
        if self.variant == "gcn":
            out = ad.spmm(g.gcn_operator, ad.matmul(h, self.weights[0]))
        elif self.variant == "sage":
            agg = ad.spmm(g.mean_operator, h)
            out = ad.matmul(ad.concat_cols(h, agg), self.weights[0])
        else:
            src, dst = g.attention_edges
            heads = []
            for w, a_src, a_dst in zip(self.weights, self.att_src, self.att_dst):
                z = ad.matmul(h, w)
                score = ad.add(ad.gather_rows(ad.matmul(z, a_dst), dst),
                               ad.gather_rows(ad.matmul(z, a_src), src))
                alpha = ad.segment_softmax(ad.leaky_relu(score, GAT_SLOPE), dst, g.n)
                heads.append(ad.edge_aggregate(alpha, z, src, dst, g.n))
            out = heads[0]
            for extra in heads[1:]:
                out = ad.add(out, extra)
            out = ad.mul(out, 1.0 / len(heads))
        return ad.add(out, self.bias)

    # -- surgery on output units (columns)

    def keep_outputs(self, keep: np.ndarray):
        for w in self.weights:
            w.values = w.values[:, keep]
        for a in self.att_src + self.att_dst:
            a.values = a.values[keep]
        self.bias.values = self.bias.values[:, keep]
        self.out_dim = len(keep)
        self._reset_grads()

    def append_outputs(self, count: int, rng: np.random.Generator):
        new_out = self.out_dim + count
        for w in self.weights:
            fresh = glorot(rng, w.shape[0], new_out, shape=(w.shape[0], count))
            w.values = np.hstack([w.values, fresh])
        # zero attention entries: new units must not perturb existing attention scores
        for a in self.att_src + self.att_dst:
            a.values = np.vstack([a.values, np.zeros((count, 1))])
        self.bias.values = np.hstack([self.bias.values, np.zeros((1, count))])
        self.out_dim = new_out
        self._reset_grads()

    # -- surgery on input units (rows)

    def _input_rows(self, units: np.ndarray) -> np.ndarray:
        if self.variant == "sage":
            return np.concatenate([units, units + self.in_dim])
        return units

    def keep_inputs(self, keep: np.ndarray):
        rows = self._input_rows(np.asarray(keep, dtype=np.int64))
        for w in self.weights:
            w.values = w.values[rows]
        self.in_dim = len(keep)
        self._reset_grads()

    def append_inputs(self, count: int):
        for w in self.weights:
            zeros = np.zeros((count, w.shape[1]))
            if self.variant == "sage":
                top, bottom = w.values[:self.in_dim], w.values[self.in_dim:]
                w.values = np.vstack([top, zeros, bottom, zeros])
            else:
                w.values = np.vstack([w.values, zeros])
        self.in_dim += count
        self._reset_grads()

    def incoming_sq_norms(self) -> np.ndarray:
        """Squared L2 norm of the weights reading each input unit."""
        total = np.zeros(self.in_dim)
        for w in self.weights:
            sq = (w.values ** 2).sum(axis=1)
            total += sq[:self.in_dim]
            if self.variant == "sage":
                total += sq[self.in_dim:]
        return total

    def attention_sq_norms(self) -> np.ndarray:
        total = np.zeros(self.out_dim)
        for a in self.att_src + self.att_dst:
            total += a.values[:, 0] ** 2
        return total

    def _reset_grads(self):
        for _, p in self.named_parameters():
            p.zero_grad()


class OutputHead:
    """Linear classifier over every class seen so far, one column per class."""

    def __init__(self, in_dim: int):
        self.in_dim = in_dim
        self.weight = ad.parameter(np.zeros((in_dim, 0)))
        self.bias = ad.parameter(np.zeros((1, 0)))
        self.classes: list[int] = []
        self.task_of: list[int] = []

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def named_parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def keep_inputs(self, keep):
        self.weight.values = self.weight.values[np.asarray(keep, dtype=np.int64)]
        self.in_dim = len(keep)
        self.weight.zero_grad()

    def append_inputs(self, count: int):
        self.weight.values = np.vstack([self.weight.values, np.zeros((count, self.weight.shape[1]))])
        self.in_dim += count
        self.weight.zero_grad()

    def incoming_sq_norms(self) -> np.ndarray:
        return (self.weight.values ** 2).sum(axis=1)


class ChildNet:
    """Two hidden message-passing layers (ELU between) and a growing head."""

    def __init__(self, variant: str, in_dim: int, hidden=(20, 20), rng: np.random.Generator | None = None):
        if variant not in VARIANTS:
            raise VariantError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        rng = rng if rng is not None else np.random.default_rng()
        if min(hidden) < 1:
            raise ContractError("hidden widths must be >= 1")
        self.variant = variant
        self.in_dim = in_dim
        w1, w2 = hidden
        self.layers = [Layer(variant, in_dim, w1, rng), Layer(variant, w1, w2, rng)]
        self.head = OutputHead(w2)

    @property
    def widths(self) -> tuple[int, int]:
        return tuple(layer.out_dim for layer in self.layers)

    @property
    def classes(self) -> list[int]:
        return list(self.head.classes)

    def named_parameters(self):
        out = []
        for i, layer in enumerate(self.layers):
            out += [(f"layer{i}.{name}", p) for name, p in layer.named_parameters()]
        out += [(f"head.{name}", p) for name, p in self.head.named_parameters()]
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def copy(self) -> "ChildNet":
        return copy.deepcopy(self)

    def check_invariants(self):
        l1, l2 = self.layers
        assert l1.out_dim >= 1 and l2.out_dim >= 1
        assert l2.in_dim == l1.out_dim and self.head.in_dim == l2.out_dim
        assert self.head.weight.shape == (l2.out_dim, self.head.num_classes)

    # ------------------------------------------------------------ forward / predict

    def embed(self, g: CsrGraph, x) -> Tensor:
        h = x if isinstance(x, Tensor) else ad.constant(x)
        if h.shape[0] != g.n:
            raise ShapeError(f"features have {h.shape[0]} rows but graph has {g.n} nodes")
        for layer in self.layers:
            h = ad.elu(layer.forward(g, h))
        return h

    def forward(self, g: CsrGraph, x) -> Tensor:
        """Logits for every node over every class seen so far (n x C_total)."""
        h = self.embed(g, x)
        return ad.add(ad.matmul(h, self.head.weight), self.head.bias)

    def task_columns(self, task_id: int) -> np.ndarray:
        cols = np.flatnonzero(np.asarray(self.head.task_of) == task_id)
        if cols.size == 0:
            raise ContractError(f"no classes registered for task {task_id}")
        return cols

    def column_of(self, class_ids) -> np.ndarray:
        """Head column index for each class id (-1 for unknown classes)."""
        lookup = {c: i for i, c in enumerate(self.head.classes)}
        return np.array([lookup.get(int(c), -1) for c in np.atleast_1d(class_ids)], dtype=np.int64)

    def predict_from_logits(self, logits: np.ndarray, task_id: int | None = None) -> np.ndarray:
        cols = np.arange(self.head.num_classes) if task_id is None else self.task_columns(task_id)
        class_ids = np.asarray(self.head.classes)[cols]
        order = np.argsort(class_ids, kind="stable")
        cols, class_ids = cols[order], class_ids[order]
        return class_ids[np.argmax(logits[:, cols], axis=1)]

    def predict(self, g: CsrGraph, x, task_id: int | None = None) -> np.ndarray:
        """Class id per node. ``task_id=None`` is class-incremental (argmax over all
        columns); otherwise the argmax is restricted to that task's columns.
        Ties go to the lowest class id."""
        logits = self.forward(g, x).values
        return self.predict_from_logits(logits, task_id)

    # ------------------------------------------------------------ surgery

    def _consumer(self, layer_index: int):
        return self.layers[layer_index + 1] if layer_index + 1 < len(self.layers) else self.head

    def unit_scores(self, layer_index: int) -> np.ndarray:
        """Squared outgoing norm per unit of ``layer_index`` (GAT adds the unit's
        own attention entries, which also feed other units)."""
        layer = self.layers[layer_index]
        scores = self._consumer(layer_index).incoming_sq_norms()
        if layer.variant == "gat":
            scores = scores + layer.attention_sq_norms()
        return scores

    def select_prune_units(self, layer_index: int, count: int) -> np.ndarray:
        width = self.layers[layer_index].out_dim
        if count >= width:
            raise ContractError(f"cannot prune {count} of {width} units")
        if count <= 0:
            return np.zeros(0, dtype=np.int64)
        order = np.argsort(self.unit_scores(layer_index), kind="stable")
        return np.sort(order[:count])

    def resize_layer(self, layer_index: int, add: int = 0, delete: int = 0,
                     rng: np.random.Generator | None = None):
        """Prune ``delete`` units (clamped to keep at least one), then append ``add``."""
        layer = self.layers[layer_index]
        consumer = self._consumer(layer_index)
        delete = max(0, min(int(delete), layer.out_dim - 1))
        if delete:
            drop = self.select_prune_units(layer_index, delete)
            keep = np.setdiff1d(np.arange(layer.out_dim), drop)
            layer.keep_outputs(keep)
            consumer.keep_inputs(keep)
        if add > 0:
            rng = rng if rng is not None else np.random.default_rng()
            layer.append_outputs(int(add), rng)
            consumer.append_inputs(int(add))

    def expand_head(self, new_classes, task_id: int, rng: np.random.Generator | None = None):
        new_classes = [int(c) for c in new_classes]
        if not new_classes:
            return
        dupes = set(new_classes) & set(self.head.classes)
        if dupes or len(set(new_classes)) != len(new_classes):
            raise ContractError(f"classes already present in head: {sorted(dupes) or new_classes}")
        rng = rng if rng is not None else np.random.default_rng()
        k = len(new_classes)
        hidden = self.head.in_dim
        self.head.weight.values = np.hstack([self.head.weight.values, glorot(rng, hidden, k)])
        self.head.bias.values = np.hstack([self.head.bias.values, np.zeros((1, k))])
        self.head.weight.zero_grad()
        self.head.bias.zero_grad()
        self.head.classes.extend(new_classes)
        self.head.task_of.extend([int(task_id)] * k)
