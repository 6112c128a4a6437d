"""Invariant suite run by ``nbsa selfcheck``.

Every check compares the library against something it does not share code
with: finite differences of an independent forward, brute-force loops, or
closed-form counts.  Checks are grouped into named suites and reported one
line each.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import attention as A
from . import cost, metrics, oracles
from . import tensor as T
from .tensor import Tensor

GRAD_TOL = 1e-4


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    detail: str = ""


@dataclass
class Report:
    checks: list[Check] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def counts(self) -> dict[str, tuple[int, int]]:
        out: dict[str, tuple[int, int]] = {}
        for c in self.checks:
            p, n = out.get(c.suite, (0, 0))
            out[c.suite] = (p + c.passed, n + 1)
        return out

    def format(self) -> str:
        lines = [f"[{'PASS' if c.passed else 'FAIL'}] {c.suite}/{c.name} {c.detail}".rstrip() for c in self.checks]
        lines.append("")
        for suite, (p, n) in self.counts().items():
            lines.append(f"{suite}: {p}/{n} passed")
        lines.append("selfcheck " + ("passed" if self.ok else f"FAILED ({len(self.failures())} failing)"))
        return "\n".join(lines)


def _weights(rng, C, d, L=None):
    w = A.init_attention_weights(C, d, rng, relative_positions=L, out_gain=1.0)
    if w.e_rel is not None:
        w.e_rel.data[...] = rng.normal(0.0, 0.5, size=w.e_rel.shape)
    return w


def _fd(f, arr, h=1e-5):
    """Central differences of a plain-numpy scalar function."""
    base = np.array(arr, dtype=float)
    g = np.zeros(base.size)
    flat = base.reshape(-1)
    for i in range(base.size):
        old = flat[i]
        flat[i] = old + h
        up = f(base)
        flat[i] = old - h
        dn = f(base)
        flat[i] = old
        g[i] = (up - dn) / (2 * h)
    return g.reshape(base.shape)


def _oracle_layer(x, mats, bh, bw, sh, sw, e_rel=None):
    return oracles.block_attention_np(x, mats[0], mats[1], mats[2], mats[3], bh, bw, sh, sw, e_rel=e_rel)


def _grad_case(x, layers, B, s, with_rel=False):
    """Worst relative error over the input and every weight of every layer."""
    bh = bw = B
    sh = sw = s
    C, H, W = x.shape
    sched = A.enumerate_blocks(H, W, B, s)
    r = np.random.default_rng(0).normal(size=x.shape)
    xt = Tensor(x, requires_grad=True)
    out = xt
    for w in layers:
        out = A.nbsa_layer(out, w, sched)
    T.backward(T.weighted_sum(out, r))

    mats = [[w.w_theta.data.copy(), w.w_phi.data.copy(), w.w_g.data.copy(), w.w_out.data.copy()] for w in layers]
    rels = [w.e_rel.data.copy() if with_rel else None for w in layers]

    def loss(xv):
        y = xv
        for m, e in zip(mats, rels):
            y = _oracle_layer(y, m, bh, bw, sh, sw, e)
        return float(np.sum(y * r))

    worst = T.relative_gradient_error(xt.grad, _fd(loss, x))
    for li, w in enumerate(layers):
        targets = [(w.w_theta, mats[li], 0), (w.w_phi, mats[li], 1), (w.w_g, mats[li], 2), (w.w_out, mats[li], 3)]
        for param, holder, slot in targets:
            def f(v, holder=holder, slot=slot):
                saved = holder[slot]
                holder[slot] = v
                try:
                    return loss(x)
                finally:
                    holder[slot] = saved

            worst = max(worst, T.relative_gradient_error(param.grad, _fd(f, holder[slot])))
        if with_rel:
            def fe(v, li=li):
                saved = rels[li]
                rels[li] = v
                try:
                    return loss(x)
                finally:
                    rels[li] = saved

            worst = max(worst, T.relative_gradient_error(w.e_rel.grad, _fd(fe, rels[li])))
    return worst


def suite_gradients(quick=False):
    n = 2 if quick else 5
    for seed in range(n):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(4, 6, 6))
        layers = [_weights(rng, 4, 2), _weights(rng, 4, 2)]
        err = _grad_case(x, layers, 4, 2)
        yield f"nested_nbsa[seed={seed}]", err < GRAD_TOL, f"rel_err={err:.2e}"
    for seed in range(n):
        rng = np.random.default_rng(100 + seed)
        x = rng.normal(size=(3, 4, 4))
        err = _grad_case(x, [_weights(rng, 3, 2, L=4)], 2, 1, with_rel=True)
        yield f"relative_nbsa[seed={seed}]", err < GRAD_TOL, f"rel_err={err:.2e}"
    yield from _op_gradients()


def _op_gradients():
    rng = np.random.default_rng(7)
    cases = {}
    w3 = Tensor(rng.normal(size=(3, 2, 3, 3)))
    b3 = Tensor(rng.normal(size=3))
    cases["conv2d_3x3"] = (rng.normal(size=(2, 5, 6)), lambda t: T.conv2d(t, w3, b3))
    w1 = Tensor(rng.normal(size=(4, 2, 1, 1)))
    b1 = Tensor(rng.normal(size=4))
    cases["conv2d_1x1"] = (rng.normal(size=(2, 4, 4)), lambda t: T.conv2d(t, w1, b1))
    cases["maxpool2"] = (rng.normal(size=(2, 4, 6)), T.maxpool2)
    cases["upsample2"] = (rng.normal(size=(2, 3, 3)), T.upsample2)
    cases["softmax_rows"] = (rng.normal(size=(3, 5)), T.softmax_rows)
    target = rng.integers(0, 4, size=(3, 3))
    for name, (x, fn) in cases.items():
        r = rng.normal(size=fn(Tensor(x)).shape)
        xt = Tensor(x, requires_grad=True)
        T.backward(T.weighted_sum(fn(xt), r))
        num = T.finite_diff_gradient(lambda t: T.weighted_sum(fn(t), r), Tensor(x))
        err = T.relative_gradient_error(xt.grad, num)
        yield name, err < GRAD_TOL, f"rel_err={err:.2e}"
    x = rng.normal(size=(4, 3, 3))
    xt = Tensor(x, requires_grad=True)
    T.backward(T.softmax_cross_entropy(xt, target))
    err = T.relative_gradient_error(xt.grad, T.finite_diff_gradient(lambda t: T.softmax_cross_entropy(t, target), Tensor(x)))
    yield "softmax_cross_entropy", err < GRAD_TOL, f"rel_err={err:.2e}"


def suite_equivalence(quick=False):
    n = 5 if quick else 20
    worst = 0.0
    for seed in range(n):
        rng = np.random.default_rng(seed)
        Hs = (4, 8)[seed % 2]
        C = (2, 4, 8)[seed % 3]
        x = rng.normal(size=(C, Hs, Hs))
        w = _weights(rng, C, max(1, C // 2))
        a = A.nbsa_layer(x, w, A.enumerate_blocks(Hs, Hs, Hs, Hs)).data
        b = A.full_self_attention(x, w).data
        worst = max(worst, float(np.abs(a - b).max()))
    yield f"single_block_equals_full[{n} seeds]", worst < 1e-12, f"max_err={worst:.1e}"

    rng = np.random.default_rng(11)
    x = rng.normal(size=(4, 6, 6))
    w = _weights(rng, 4, 2)
    sched = A.enumerate_blocks(6, 6, 4, 2)
    lib = A.nbsa_layer(x, w, sched).data
    loop = oracles.block_attention(x, w.w_theta.data, w.w_phi.data, w.w_g.data, w.w_out.data, 4, 4, 2, 2)
    err = float(np.abs(lib - loop).max())
    yield "nbsa_matches_loop_oracle", err < 1e-12, f"max_err={err:.1e}"
    full = oracles.full_attention(x[:, :4, :4], w.w_theta.data, w.w_phi.data, w.w_g.data, w.w_out.data)
    err = float(np.abs(A.full_self_attention(x[:, :4, :4], w).data - full).max())
    yield "full_sa_matches_loop_oracle", err < 1e-12, f"max_err={err:.1e}"
    ser = A.nbsa_layer(x, w, sched, serial=True).data
    yield "serial_equals_batched", bool(np.array_equal(ser, lib)), ""


def suite_skew(quick=False):
    n = 5 if quick else 20
    bad = 0
    total = 0
    for seed in range(n):
        rng = np.random.default_rng(seed)
        for L in range(1, 17):
            d = 1 + (L + seed) % 8
            q = rng.normal(size=(L, d))
            e = rng.normal(size=(2 * L - 1, d))
            total += 1
            if not np.array_equal(A.relative_logits_skew(Tensor(q), Tensor(e)).data, A.relative_logits_naive(q, e)):
                bad += 1
    yield f"skew_equals_naive[{total} cases]", bad == 0, f"mismatches={bad}"


def _random_mask(rng, H, W, max_fg=64):
    m = np.zeros((H, W), dtype=bool)
    r0, c0 = rng.integers(0, H), rng.integers(0, W)
    h, w = rng.integers(1, 9), rng.integers(1, 9)
    m[r0 : r0 + h, c0 : c0 + w] = True
    m &= rng.random((H, W)) < 0.85
    while m.sum() > max_fg:
        m[tuple(np.argwhere(m)[-1])] = False
    return m


def suite_metrics(quick=False):
    n = 10 if quick else 40
    worst = 0.0
    exact = True
    for seed in range(n):
        rng = np.random.default_rng(seed)
        a, b = _random_mask(rng, 12, 12), _random_mask(rng, 12, 12)
        if not a.any() or not b.any():
            continue
        exact &= metrics.dsc(a, b) == oracles.dsc(a, b)
        exact &= metrics.surface_dsc(a, b, tau=1.5) == oracles.surface_dsc(a, b, 1.5)
        apl, tpl, _ = metrics.apl_tpl_car(a, b)
        exact &= (apl, tpl) == oracles.apl_tpl(a, b)
        worst = max(worst, abs(metrics.hd95(a, b) - oracles.hd95(a, b)))
    yield f"set_metrics_exact[{n} pairs]", bool(exact), ""
    yield f"hd95_matches_oracle[{n} pairs]", worst < 1e-9, f"max_err={worst:.1e}"

    dose = np.full((4, 4), 50.0)
    mask = np.ones((4, 4), dtype=bool)
    ok = metrics.v_x(dose, mask, 30) == 100.0 and metrics.v_x(dose, mask, 60) == 0.0
    yield "uniform_dose_vx", ok, ""


def suite_cost(quick=False):
    cfg = A.AttentionConfig(variant="nbsa", n_layers=2, B=36, s=24)
    led = cost.count_flops(cfg, 64, 32, 252, 252)
    yield "block_count_252_36_24", led.blocks == ((252 - 36) // 24 + 1) ** 2, f"blocks={led.blocks}"
    one = cost.count_flops(A.AttentionConfig(variant="nbsa", n_layers=1, B=8, s=4, overlap=True), 16, 8, 8, 8)
    full = cost.count_flops(A.AttentionConfig(variant="full_sa", n_layers=1), 16, 8, 8, 8)
    yield "single_block_equals_full_count", one.total == full.total, f"{one.total} vs {full.total}"


SUITES = {
    "gradients": suite_gradients,
    "equivalence": suite_equivalence,
    "skew": suite_skew,
    "metrics": suite_metrics,
    "cost": suite_cost,
}


def run(suites=None, quick=False) -> Report:
    """Run the named suites (all by default); a raised exception counts as a failure."""
    report = Report()
    for name in suites or SUITES:
        gen = SUITES[name](quick=quick)
        while True:
            try:
                item = next(gen)
            except StopIteration:
                break
            except Exception as exc:  # noqa: BLE001
                report.checks.append(Check(name, "<error>", False, f"{type(exc).__name__}: {exc}"))
                break
            check, passed, detail = item
            report.checks.append(Check(name, check, bool(passed), detail))
    return report
