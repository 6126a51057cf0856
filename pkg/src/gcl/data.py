"""Dataset directories, the stochastic-block-model generator and checkpoints.

Dataset directory layout (all node ids 0-indexed)::

    edges.tsv      src<TAB>dst, one undirected edge per line
    features.csv   header "n,f", then one comma-separated row per node
    labels.tsv     node<TAB>class
    meta.json      optional {"nodes", "features", "classes", "edges"} counts
    splits.tsv     optional node<TAB>{train,val,test}
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .childnet import ChildNet
from .errors import IntegrityError, MissingFileError, ParseError, VariantError, VersionError
from .graph import CsrGraph, from_edge_list

DATA_DIR_ENV = "GCL_DATA_DIR"
SPLIT_NAMES = ("train", "val", "test")


@dataclass
class DatasetBundle:
    graph: CsrGraph
    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    masks: dict[str, np.ndarray] | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.graph.n
        if self.features.shape[0] != n or self.labels.shape[0] != n:
            raise IntegrityError(
                f"{self.name}: graph has {n} nodes, features {self.features.shape[0]} rows, "
                f"labels {self.labels.shape[0]} entries")
        self.metadata = {**self.metadata, **self.counts()}

    @property
    def num_nodes(self) -> int:
        return self.graph.n

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def counts(self) -> dict:
        return {
            "nodes": self.num_nodes,
            "features": self.num_features,
            "classes": int(self.classes.size),
            "edges": self.graph.num_edges // 2,
        }


def default_data_root() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


# ---------------------------------------------------------------- SBM generator


@dataclass(frozen=True)
class SbmParams:
    classes: int = 6
    nodes_per_class: int = 100
    p_in: float = 0.05
    p_out: float = 0.005
    feature_dim: int = 16
    signal: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_out <= self.p_in <= 1.0:
            raise ValueError("need 0 <= p_out <= p_in <= 1")
        if min(self.classes, self.nodes_per_class, self.feature_dim) < 1:
            raise ValueError("classes, nodes_per_class and feature_dim must be positive")


def generate_sbm(params: SbmParams = SbmParams()) -> DatasetBundle:
    """Planted-partition graph with Gaussian features.

    Each class mean has i.i.d. ``N(0, signal^2)`` coordinates, so ``signal`` is
    the per-dimension spread of class means in units of the unit-variance
    feature noise.
    """
    rng = np.random.default_rng(params.seed)
    n = params.classes * params.nodes_per_class
    labels = np.repeat(np.arange(params.classes), params.nodes_per_class)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], params.p_in, params.p_out)
    hit = rng.random(iu.size) < prob
    edges = np.stack([iu[hit], ju[hit]], axis=1)
    means = params.signal * rng.standard_normal((params.classes, params.feature_dim))
    features = means[labels] + rng.standard_normal((n, params.feature_dim))
    return DatasetBundle(
        graph=from_edge_list(n, edges),
        features=features,
        labels=labels,
        name=f"sbm-c{params.classes}-s{params.seed}",
    )


# ---------------------------------------------------------------- directory format


def atomic_write_text(path: Path, text: str):
    """Write via a sibling temp file and rename, so readers never see a partial file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def save_dataset(bundle: DatasetBundle, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rows, cols = bundle.graph.edge_arrays()
    upper = rows < cols
    atomic_write_text(d / "edges.tsv", "".join(f"{u}\t{v}\n" for u, v in zip(rows[upper], cols[upper])))
    n, f = bundle.features.shape
    lines = [f"{n},{f}\n"]
    lines += [",".join(repr(float(v)) for v in row) + "\n" for row in bundle.features]
    atomic_write_text(d / "features.csv", "".join(lines))
    atomic_write_text(d / "labels.tsv", "".join(f"{i}\t{c}\n" for i, c in enumerate(bundle.labels)))
    meta = {**bundle.metadata, "name": bundle.name, **bundle.counts()}
    atomic_write_text(d / "meta.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if bundle.masks:
        split_lines = []
        for split in SPLIT_NAMES:
            split_lines += [f"{i}\t{split}\n" for i in np.asarray(bundle.masks.get(split, []))]
        atomic_write_text(d / "splits.tsv", "".join(split_lines))
    return d


def _require(path: Path) -> Path:
    if not path.is_file():
        raise MissingFileError(f"missing dataset file: {path}")
    return path


def _read_pairs(path: Path, n: int, what: str):
    out = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(path, line_no, f"expected 2 tab-separated fields, got {len(parts)}")
            try:
                a = int(parts[0])
                b = parts[1] if what == "split" else int(parts[1])
            except ValueError:
                raise ParseError(path, line_no, f"non-integer field in {line!r}") from None
            if not 0 <= a < n:
                raise ParseError(path, line_no, f"node id {a} outside [0, {n})")
            if what == "edge" and not 0 <= b < n:
                raise ParseError(path, line_no, f"node id {b} outside [0, {n})")
            if what == "split" and b not in SPLIT_NAMES:
                raise ParseError(path, line_no, f"unknown split {b!r}")
            out.append((a, b))
    return out


def _read_features(path: Path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline()
        try:
            n, f = (int(v) for v in header.strip().split(","))
        except ValueError:
            raise ParseError(path, 1, f"header must be 'n,f', got {header.strip()!r}") from None
        x = np.empty((n, f))
        row = 0
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            if row >= n:
                raise ParseError(path, line_no, f"more than {n} feature rows")
            parts = line.rstrip("\n").split(",")
            if len(parts) != f:
                raise ParseError(path, line_no, f"expected {f} values, got {len(parts)}")
            try:
                x[row] = [float(v) for v in parts]
            except ValueError:
                raise ParseError(path, line_no, "non-numeric feature value") from None
            row += 1
    if row != n:
        raise IntegrityError(f"{path}: header declares {n} rows but file has {row}")
    return x


def load_dataset(directory) -> DatasetBundle:
    d = Path(directory)
    features = _read_features(_require(d / "features.csv"))
    n = features.shape[0]
    edges = _read_pairs(_require(d / "edges.tsv"), n, "edge")
    label_pairs = _read_pairs(_require(d / "labels.tsv"), n, "label")
    labels = np.full(n, -1, dtype=np.int64)
    for node, cls in label_pairs:
        if labels[node] != -1:
            raise IntegrityError(f"{d / 'labels.tsv'}: node {node} labelled twice")
        if cls < 0:
            raise IntegrityError(f"{d / 'labels.tsv'}: negative class for node {node}")
        labels[node] = cls
    if np.any(labels < 0):
        raise IntegrityError(f"{d / 'labels.tsv'}: {int(np.sum(labels < 0))} nodes have no label")

    masks = None
    if (d / "splits.tsv").is_file():
        pairs = _read_pairs(d / "splits.tsv", n, "split")
        masks = {s: np.array(sorted(i for i, t in pairs if t == s), dtype=np.int64) for s in SPLIT_NAMES}

    name = d.name
    meta_path = d / "meta.json"
    meta = {}
    if meta_path.is_file():
        try:
            meta = json.loads(meta_path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(meta_path, exc.lineno, exc.msg) from None
        name = meta.get("name", name)

    bundle = DatasetBundle(graph=from_edge_list(n, edges), features=features, labels=labels,
                           name=name, masks=masks, metadata=meta)
    for key, actual in bundle.counts().items():
        if key in meta and int(meta[key]) != actual:
            raise IntegrityError(f"{meta_path}: {key} = {meta[key]} but files contain {actual}")
    return bundle


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"GCLC"
CHECKPOINT_VERSION = 1


def save_checkpoint(net: ChildNet, path) -> Path:
    """Little-endian container: magic, version, JSON header, named float64 blocks, CRC32."""
    meta = {
        "variant": net.variant,
        "in_dim": net.in_dim,
        "widths": list(net.widths),
        "classes": net.head.classes,
        "task_of": net.head.task_of,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    params = net.named_parameters()
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION),
              struct.pack("<I", len(meta_bytes)), meta_bytes, struct.pack("<I", len(params))]
    for name, p in params:
        raw = name.encode()
        rows, cols = p.shape
        chunks += [struct.pack("<H", len(raw)), raw, struct.pack("<II", rows, cols),
                   np.ascontiguousarray(p.values, dtype="<f8").tobytes()]
    body = b"".join(chunks)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    os.replace(tmp, path)
    return path


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise IntegrityError("checkpoint truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expected_variant: str | None = None) -> ChildNet:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise IntegrityError(f"{path}: checkpoint truncated")
    if data[:4] != CHECKPOINT_MAGIC:
        raise IntegrityError(f"{path}: bad magic {data[:4]!r}")
    (version,) = struct.unpack("<I", data[4:8])
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise IntegrityError(f"{path}: checksum mismatch (truncated or corrupt)")

    r = _Reader(body)
    r.take(8)
    (meta_len,) = r.unpack("<I")
    meta = json.loads(r.take(meta_len).decode())
    if expected_variant is not None and meta["variant"] != expected_variant:
        raise VariantError(f"{path}: checkpoint holds a {meta['variant']} network, expected {expected_variant}")
    (count,) = r.unpack("<I")
    blocks = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        rows, cols = r.unpack("<II")
        blocks[name] = np.frombuffer(r.take(8 * rows * cols), dtype="<f8").reshape(rows, cols).astype(np.float64)
    if r.pos != len(body):
        raise IntegrityError(f"{path}: {len(body) - r.pos} trailing bytes")

    net = ChildNet(meta["variant"], meta["in_dim"], tuple(meta["widths"]), rng=np.random.default_rng(0))
    net.head.classes = [int(c) for c in meta["classes"]]
    net.head.task_of = [int(t) for t in meta["task_of"]]
    net.head.weight.values = np.zeros((net.head.in_dim, len(net.head.classes)))
    net.head.bias.values = np.zeros((1, len(net.head.classes)))
    for name, p in net.named_parameters():
        if name not in blocks:
            raise IntegrityError(f"{path}: missing weight block {name!r}")
        if blocks[name].shape != p.shape:
            raise IntegrityError(f"{path}: block {name!r} has shape {blocks[name].shape}, expected {p.shape}")
        p.values = blocks[name]
        p.zero_grad()
    net.check_invariants()
    return net
