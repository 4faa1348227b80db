"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor, backward
from .rng import Rng

__all__ = ["finite_difference_check", "GradCheckReport", "BlockReport"]


@dataclass
class BlockReport:
    name: str
    max_rel_error: float
    checked_entries: int
    passed: bool


@dataclass
class GradCheckReport:
    h: float
    tol: float
    blocks: list[BlockReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(b.passed for b in self.blocks)

    @property
    def max_rel_error(self) -> float:
        return max((b.max_rel_error for b in self.blocks), default=0.0)

    def lines(self) -> list[str]:
        out = []
        for b in self.blocks:
            status = "ok" if b.passed else "FAIL"
            out.append(f"{status:4s} {b.name:40s} max_rel_err={b.max_rel_error:.3e} "
                       f"(checked {b.checked_entries})")
        out.append(f"overall: {'PASS' if self.passed else 'FAIL'} "
                   f"max_rel_err={self.max_rel_error:.3e} (h={self.h}, tol={self.tol})")
        return out


def finite_difference_check(fn, params: dict[str, Tensor], h: float = 1e-5,
                            tol: float = 1e-4, max_entries_per_block: int | None = None,
                            rng: Rng | None = None) -> GradCheckReport:
    """Compare analytic gradients of ``fn()`` against central differences.

    ``fn`` must be a deterministic closure over the tensors in
    ``params`` returning a scalar Tensor.  The error metric per entry is
    |analytic - fd| / max(1, |analytic|, |fd|), so small gradients are
    compared absolutely and large ones relatively.  Large blocks can be
    subsampled with ``max_entries_per_block``.
    """
    if hasattr(params, "items") and not isinstance(params, dict):
        params = dict(params.items())

    for p in params.values():
        p.grad = None
    with Tape():
        loss = fn()
        backward(loss)
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in params.items()}
    for p in params.values():
        p.grad = None

    rng = rng or Rng(0)
    report = GradCheckReport(h=h, tol=tol)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if max_entries_per_block is not None and n > max_entries_per_block:
            idxs = sorted(rng.sample_indices(n, max_entries_per_block))
        else:
            idxs = range(n)
        an_flat = analytic[name].reshape(-1)
        worst = 0.0
        checked = 0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = fn().item()
            flat[i] = orig - h
            f_minus = fn().item()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            an = an_flat[i]
            err = abs(an - fd) / max(1.0, abs(an), abs(fd))
            worst = max(worst, err)
            checked += 1
        report.blocks.append(BlockReport(name, worst, checked, worst < tol))
    return report


def gradient_suite(h: float = 1e-5, tol: float = 1e-4, quick: bool = False):
    """Finite-difference reports for every primitive plus both full nets.

    Returns (list of (name, GradCheckReport), all_passed).  Runs in
    64-bit throughout; ``quick`` trims the random-shape sweep.
    """
    import numpy as np

    from . import autodiff as ad
    from . import nn
    from .corpus import build_vocabulary, default_corpus_config
    from .manager import (ManagerConfig, ManagerNet, records_to_batches,
                          run_hops)
    from .optim import ParameterStore
    from .worker import WorkerConfig, WorkerNet, worker_forward

    rng = Rng(20240)
    reports: list[tuple[str, GradCheckReport]] = []

    def check(name, fn, params, cap=12):
        rep = finite_difference_check(fn, params, h=h, tol=tol,
                                      max_entries_per_block=cap, rng=rng.split(name))
        reports.append((name, rep))

    def t(shape, lo=-1.0, hi=1.0, shift=0.0):
        return Tensor(rng.uniform(lo, hi, shape) + shift, requires_grad=True)

    n_rounds = 2 if quick else 4
    for r in range(n_rounds):
        a = t((2 + r, 3))
        b = t((2 + r, 3))
        m1 = t((2 + r, 4))
        m2 = t((4, 3 + r))
        check(f"add[{r}]", lambda a=a, b=b: ad.mean(ad.add(a, b)), {"a": a, "b": b})
        check(f"sub[{r}]", lambda a=a, b=b: ad.mean(ad.mul(ad.sub(a, b), ad.sub(a, b))),
              {"a": a, "b": b})
        check(f"mul[{r}]", lambda a=a, b=b: ad.mean(ad.mul(a, b)), {"a": a, "b": b})
        check(f"scale[{r}]", lambda a=a: ad.mean(ad.scale(a, 2.5)), {"a": a})
        check(f"matmul[{r}]", lambda m1=m1, m2=m2: ad.mean(ad.matmul(m1, m2)),
              {"m1": m1, "m2": m2})
        check(f"concat[{r}]", lambda a=a, b=b: ad.mean(ad.mul(ad.concat([a, b], 1),
                                                              ad.concat([b, a], 1))),
              {"a": a, "b": b})
        check(f"slice[{r}]", lambda m1=m1: ad.mean(ad.mul(ad.tslice(m1, (slice(0, 2),)),
                                                          ad.tslice(m1, (slice(1, 3),)))),
              {"m1": m1})
        check(f"reshape[{r}]", lambda m1=m1: ad.mean(ad.mul(
            ad.reshape(m1, (m1.size,)), ad.reshape(m1, (m1.size,)))), {"m1": m1})
        check(f"expand[{r}]", lambda a=a: ad.mean(ad.mul(
            ad.expand(ad.reshape(a, (1,) + a.shape), (3,) + a.shape), 1.5)), {"a": a})
        check(f"transpose[{r}]", lambda m1=m1: ad.mean(ad.mul(
            ad.transpose(m1, (1, 0)), ad.transpose(m1, (1, 0)))), {"m1": m1})
        check(f"tanh[{r}]", lambda a=a: ad.mean(ad.tanh(a)), {"a": a})
        check(f"sigmoid[{r}]", lambda a=a: ad.mean(ad.sigmoid(a)), {"a": a})
        relu_in = t((3, 4), shift=0.0)
        relu_in.data[np.abs(relu_in.data) < 0.2] += 0.4  # keep clear of the kink
        check(f"relu[{r}]", lambda x=relu_in: ad.mean(ad.relu(x)), {"x": relu_in})
        check(f"softmax[{r}]", lambda a=a: ad.mean(ad.mul(ad.softmax(a, -1), a)), {"a": a})
        check(f"log_softmax[{r}]", lambda a=a: ad.mean(ad.mul(ad.log_softmax(a, -1), a)),
              {"a": a})
        rm_in = t((3, 5))
        check(f"reduce_max[{r}]", lambda x=rm_in: ad.mean(ad.reduce_max(x, (1,))), {"x": rm_in})
        check(f"reduce_sum[{r}]", lambda a=a: ad.mean(ad.mul(ad.reduce_sum(a, (0,), True), a)),
              {"a": a})
        table = t((7, 4))
        ids = np.array([[1, 2, 0], [3, 3, 6]])
        check(f"embedding[{r}]", lambda tb=table: ad.mean(ad.mul(
            ad.embedding(tb, ids), 1.3)), {"table": table})
        check(f"embedding_bag[{r}]", lambda tb=table: ad.mean(ad.mul(
            ad.embedding_bag(tb, ids[None]), 1.1)), {"table": table})
        logits = t((4, 5))
        targets = np.array([0, 2, 4, 1])
        check(f"softmax_cross_entropy[{r}]", lambda lg=logits: ad.mean(
            ad.softmax_cross_entropy(lg, targets)), {"logits": logits})
        x_seq = t((2, 4, 3))
        w_ih = t((3, 8))
        w_hh = t((2, 8))
        bb = t((8,))
        mask = np.array([[1, 1, 1, 0], [1, 1, 1, 1]], dtype=np.float64)
        check(f"lstm_seq[{r}]", lambda: ad.mean(nn.lstm_seq(x_seq, w_ih, w_hh, bb,
                                                            mask, reverse=r % 2 == 1)),
              {"x": x_seq, "w_ih": w_ih, "w_hh": w_hh, "b": bb})
        xc = t((2, 3, 4, 4))
        wc = t((2, 3, 3, 3))
        bc = t((2,))
        check(f"conv2d[{r}]", lambda: ad.mean(nn.conv2d(xc, wc, bc)),
              {"x": xc, "w": wc, "b": bc})

    # full manager graph (match module + dual path + cross entropy)
    cfg = default_corpus_config()
    vocab = build_vocabulary(cfg)
    store = ParameterStore()
    net = ManagerNet(store, len(vocab), ManagerConfig(d_e=8), rng.split("mgr-init"))
    grng = rng.split("mgr-data")
    records = []
    for _ in range(2):
        records.append({
            "goal_tokens": [grng.integers(3, len(vocab)) for _ in range(4)],
            "wiki_tokens": [grng.integers(3, len(vocab)) for _ in range(12)],
            "objects": [[grng.integers(3, len(vocab)), grng.integers(3, len(vocab)), 0, 0]
                        for _ in range(3)],
            "gold_backward": [0, 2]})
    batch = records_to_batches(records, 2, 4)[0]

    def manager_loss():
        traces = run_hops(net, batch, teacher_gold=batch.gold)
        losses = [ad.reshape(ad.softmax_cross_entropy(tr.logits, batch.gold[:, i]),
                             (batch.size, 1)) for i, tr in enumerate(traces)]
        return ad.mean(ad.concat(losses, axis=1))

    check("manager_graph", manager_loss, dict(store.items()), cap=4 if quick else 8)

    # full worker graph (conv trunk + heads + actor-critic style loss)
    wstore = ParameterStore()
    wnet = WorkerNet(wstore, len(vocab), WorkerConfig(d_e=4, channels=5),
                     rng.split("wrk-init"))
    wrng = rng.split("wrk-data")
    grid_ids = np.array(wrng.integers(0, len(vocab), (2, 6, 6, 4)))
    x_pos = wrng.uniform(-1, 1, (2, 2, 6, 6))
    x_tgt = wrng.uniform(-1, 1, (2, 2, 6, 6))
    actions = np.array([1, 3])
    adv = Tensor(np.array([0.7, -0.4]))
    returns = Tensor(np.array([0.3, -0.9]))

    def worker_loss():
        logits, value = worker_forward(wnet, grid_ids, x_pos, x_tgt)
        ce = ad.softmax_cross_entropy(logits, actions)
        pg = ad.mean(ad.mul(ce, adv))
        diff = ad.sub(returns, value)
        vl = ad.mean(ad.mul(diff, diff))
        p = ad.softmax(logits, -1)
        ent = ad.scale(ad.mean(ad.reduce_sum(ad.mul(p, ad.log_softmax(logits, -1)), (1,))), -1.0)
        return ad.add(ad.add(pg, ad.scale(vl, 0.5)), ad.scale(ent, -0.01))

    check("worker_graph", worker_loss, dict(wstore.items()), cap=4 if quick else 8)

    return reports, all(rep.passed for _, rep in reports)
