"""Fast diagnostics: gradient checks, reservoir statistics, resize invariance."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binom, norm

from . import autodiff as ad
from .childnet import VARIANTS, ChildNet
from .graph import from_edge_list
from .replay import Reservoir

GRAD_TOL = 1e-4
RESIZE_TOL = 1e-12


def _random_graph(rng, n=6, p=0.4):
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p
    return from_edge_list(n, np.stack([iu[keep], ju[keep]], axis=1))


def gradient_cases(rng: np.random.Generator) -> dict:
    """Name -> (scalar function, inputs) for every differentiable operation.

    Shapes are drawn from ``rng`` (each dimension in 2..5)."""
    P = lambda *shape: ad.parameter(rng.standard_normal(shape))  # noqa: E731
    r, k, c = (int(v) for v in rng.integers(2, 6, size=3))
    g = _random_graph(rng, int(rng.integers(4, 8)))
    cases = {}

    a, b = P(r, k), P(k, c)
    cases["matmul"] = (lambda: ad.sum_all(ad.matmul(a, b)), [a, b])
    d = P(g.n, c)
    w = rng.standard_normal((g.n, c))
    cases["spmm"] = (lambda: ad.sum_all(ad.mul(ad.spmm(g.gcn_operator, d), ad.constant(w))), [d])

    def away_from_zero(shape):
        v = rng.standard_normal(shape)
        v[np.abs(v) < 1e-3] = 0.5
        return ad.parameter(v)

    for kind in ("relu", "leaky_relu", "elu", "sigmoid", "tanh"):
        x = away_from_zero((r, k))
        wk = rng.standard_normal((r, k))
        cases[kind] = (lambda x=x, wk=wk, kind=kind: ad.sum_all(ad.mul(ad.ewise(kind, x), ad.constant(wk))), [x])

    s = P(r, k)
    ws = rng.standard_normal((r, k))
    cases["softmax_rows"] = (lambda: ad.sum_all(ad.mul(ad.softmax_rows(s), ad.constant(ws))), [s])
    src, dst = g.attention_edges
    e = P(src.size, 1)
    we = rng.standard_normal((src.size, 1))
    cases["segment_softmax"] = (
        lambda: ad.sum_all(ad.mul(ad.segment_softmax(e, dst, g.n), ad.constant(we))), [e])
    alpha, h = P(src.size, 1), P(g.n, c)
    wh = rng.standard_normal((g.n, c))
    cases["edge_aggregate"] = (
        lambda: ad.sum_all(ad.mul(ad.edge_aggregate(alpha, h, src, dst, g.n), ad.constant(wh))), [alpha, h])
    logits = P(2 * r, c)
    labels = rng.integers(0, c, size=2 * r)
    mask = np.flatnonzero(rng.random(2 * r) < 0.6)
    mask = mask if mask.size else np.array([0])
    cases["masked_cross_entropy"] = (lambda: ad.masked_cross_entropy(logits, labels, mask), [logits])
    m = P(r, c)
    target = rng.standard_normal((r, c))
    cases["mse"] = (lambda: ad.mse(m, target), [m])
    c1, c2 = P(r, k), P(r, c)
    wc = rng.standard_normal((r, k + c))
    cases["concat_cols"] = (lambda: ad.sum_all(ad.mul(ad.concat_cols(c1, c2), ad.constant(wc))), [c1, c2])
    gr = P(r, c)
    idx = rng.integers(0, r, size=r + 1)
    wg = rng.standard_normal((idx.size, c))
    cases["gather_rows"] = (lambda: ad.sum_all(ad.mul(ad.gather_rows(gr, idx), ad.constant(wg))), [gr])
    ls = P(r, k)
    wl = rng.standard_normal((r, k))
    cases["log_softmax_rows"] = (lambda: ad.sum_all(ad.mul(ad.log_softmax_rows(ls), ad.constant(wl))), [ls])
    return cases


def gradient_report(seed: int = 0, corrupt: str | None = None) -> dict[str, float]:
    """Max relative gradient error per operation. ``corrupt`` names an operation
    whose analytic gradient is deliberately scaled (a hook for testing the check)."""
    rng = np.random.default_rng(seed)
    report = {}
    for name, (fn, inputs) in gradient_cases(rng).items():
        for x in inputs:
            x.zero_grad()
        ad.backward(fn())
        worst = 0.0
        for x in inputs:
            analytic = x.grad * (1.5 if name == corrupt else 1.0)
            numeric = ad.numerical_gradient(fn, x)
            worst = max(worst, ad.relative_error(analytic, numeric))
        report[name] = worst
    return report


def retention_statistics(capacity: int, inserts: int, reps: int, rng: np.random.Generator,
                         blocks: int = 10) -> dict:
    """Monte-Carlo retention frequency of every inserted item.

    Per item the retained count over ``reps`` runs is Binomial(reps, p) with
    p = capacity / inserts, so a small fraction of a correct reservoir's items
    fall outside p +/- 3 sigma; that fraction is compared with its exact
    binomial value. Items are also pooled into ``blocks`` contiguous groups by
    insertion position; their z-scores are held to a Bonferroni limit so the
    family of blocks has the false-alarm rate of a single 3 sigma test.
    """
    counts = np.zeros(inserts)
    for _ in range(reps):
        res = Reservoir(capacity, rng=rng)
        res.insert_many(range(inserts))
        counts[np.asarray(res.slots, dtype=np.int64)] += 1
    p = capacity / inserts
    freq = counts / reps
    sigma = np.sqrt(p * (1 - p) / reps)
    within = np.abs(freq - p) <= 3 * sigma
    lo, hi = np.ceil(reps * (p - 3 * sigma) - 1e-9), np.floor(reps * (p + 3 * sigma) + 1e-9)
    expected = float(binom.cdf(hi, reps, p) - binom.cdf(lo - 1, reps, p))
    frac_se = np.sqrt(expected * (1 - expected) / inserts)
    block_freq = freq.reshape(blocks, -1).mean(axis=1)
    block_sigma = sigma / np.sqrt(inserts // blocks)
    block_z = (block_freq - p) / block_sigma
    return {
        "p": p,
        "sigma": float(sigma),
        "frac_within_3sigma": float(within.mean()),
        "expected_frac_within": expected,
        "frac_z": float((within.mean() - expected) / frac_se) if frac_se > 0 else 0.0,
        "freq_var_ratio": float(freq.var() / sigma**2),
        "block_z": block_z.tolist(),
        "block_limit": block_limit(blocks),
    }


def block_limit(blocks: int) -> float:
    """|z| bound per block giving the whole family a 3 sigma two-sided error rate."""
    return float(norm.isf(norm.sf(3.0) / blocks))


def retention_ok(stats: dict) -> bool:
    return (abs(stats["frac_z"]) <= 5
            and abs(stats["freq_var_ratio"] - 1) <= 0.1
            and max(abs(z) for z in stats["block_z"]) <= stats["block_limit"])


def reservoir_report(seed: int = 0, capacity: int = 100, inserts: int = 10_000, reps: int = 200) -> dict:
    """Size invariant on a step-by-step run, then retention statistics."""
    rng = np.random.default_rng(seed)
    res = Reservoir(capacity, rng=rng)
    size_ok = True
    for i in range(3 * capacity):
        res.insert(i)
        size_ok &= len(res) == min(res.seen, capacity)
    stats = retention_statistics(capacity, inserts, reps, rng)
    stats["size_invariant"] = bool(size_ok)
    return stats


def resize_report(seed: int = 0, trials: int = 20) -> float:
    """Worst output change after growth-only resizes over random nets and inputs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(trials):
        variant = VARIANTS[k % len(VARIANTS)]
        g = _random_graph(rng, 7)
        x = rng.standard_normal((7, 4))
        net = ChildNet(variant, 4, tuple(rng.integers(1, 6, size=2)), rng=rng)
        net.expand_head([0, 1, 2], 0, rng)
        before = net.forward(g, x).values
        net.resize_layer(int(rng.integers(0, 2)), add=int(rng.integers(1, 6)), delete=0, rng=rng)
        worst = max(worst, float(np.max(np.abs(net.forward(g, x).values - before))))
    return worst


@dataclass
class SelfCheck:
    gradients: dict[str, float] = field(default_factory=dict)
    reservoir: dict = field(default_factory=dict)
    resize_error: float = 0.0

    @property
    def failures(self) -> list[str]:
        out = [f"gradient:{k}" for k, v in self.gradients.items() if not v < GRAD_TOL]
        if not self.reservoir.get("size_invariant", False):
            out.append("reservoir:size")
        if not self.reservoir or not retention_ok(self.reservoir):
            out.append("reservoir:retention")
        if not self.resize_error < RESIZE_TOL:
            out.append("resize:function-preservation")
        return out

    @property
    def ok(self) -> bool:
        return not self.failures

    def lines(self) -> list[str]:
        out = []
        for name, err in self.gradients.items():
            out.append(f"{'PASS' if err < GRAD_TOL else 'FAIL'}  grad {name:<22} max rel err {err:.2e}")
        r = self.reservoir
        out.append(f"{'FAIL' if any(f.startswith('reservoir') for f in self.failures) else 'PASS'}  reservoir "
                   f"size-invariant={r['size_invariant']} within-3sigma={r['frac_within_3sigma']:.4f} "
                   f"(expected {r['expected_frac_within']:.4f}) max block |z|={max(map(abs, r['block_z'])):.2f}")
        out.append(f"{'PASS' if self.resize_error < RESIZE_TOL else 'FAIL'}  resize max |delta| {self.resize_error:.1e}")
        return out


def run_selfcheck(corrupt: str | None = None, seed: int = 0) -> SelfCheck:
    return SelfCheck(
        gradients=gradient_report(seed, corrupt),
        reservoir=reservoir_report(seed),
        resize_error=resize_report(seed),
    )
