"""Multi-hop plan generator: reads the texts, emits sub-goals backward.

The network encodes four sources with one shared bidirectional LSTM
over one shared embedding table: the goal sentence Q, the wiki O
(manual sentences, with each candidate object's name appended for the
grid game), the candidate object names A, and the previous sub-goal
name H (a NULL placeholder on the first hop).  A match module computes
cross-attention features [x, x~-x, x~, x*x~] between two sequences.
Two match paths project the wiki constraints onto the goal and onto the
current state, both results are matched against every candidate name,
concatenated, compressed, encoded, max-pooled and regressed to one
logit per candidate.  The chosen candidate's name becomes the next
hop's H.  Hops run from the final goal backward; execution order is the
reversal.

Two realization choices matter for desk-scale trainability and are
deliberate here:

* The shared encoder never crosses a text-unit boundary: every manual
  sentence and every object name is encoded as its own segment.  With
  one continuous encoding, a token's backward state bleeds the *next*
  sentence's entities into attention values, which measurably cancels
  the relational signal the match module needs.
* Encodings are the BiLSTM output plus the raw word embedding, and the
  default initialization opens the LSTM gates, biases the first-layer
  projections toward passing the attended values, and leans the second
  encoder toward identity.  With plain small random initialization the
  attended values average out to the corpus mean and training plateaus
  at type-level accuracy; the structured start makes the intended
  attention pathway carry signal from the first step.

All paths run batched (leading batch axis) so supervised training stays
within a desk-scale CPU budget.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import NULL_ID, PAD_ID, pad_name
from .nn import BiLstm, EmbeddingTable, Mlp2
from .optim import ParameterStore, adam_step
from .rng import Rng

__all__ = [
    "ManagerConfig", "ManagerNet", "ManagerBatch", "ManagerInputs",
    "ManagerForwardTrace", "Plan", "match_module", "encode_inputs",
    "manager_forward", "generate_plan", "train_manager_supervised",
    "evaluate_manager", "reinforce_manager", "records_to_batches",
    "save_dataset", "load_dataset",
]

_NEG_BIG = 1e9


@dataclass
class ManagerConfig:
    d_e: int = 32
    d_n: int = 4
    hops: int = 2
    lr: float = 1e-3
    batch_size: int = 200
    epochs: int = 30
    order: str = "backward"        # backward | forward (ablation)
    include_names_in_wiki: bool = True
    init_scheme: str = "structured"  # structured | plain
    embed_scale: float = 3.0


class ManagerNet:
    """Parameter bundle for the plan generator.

    The ``structured`` scheme rescales the plain uniform initialization
    so the attention pathway is live from the start: larger embeddings
    (sharp lexical attention), an input encoder with open gates and a
    boosted cell projection (strong context traces in the values), an
    identity-leaning E1/E2, and F1-F3 biased toward passing the
    attended-value and comparison blocks of the match features.
    """

    def __init__(self, store: ParameterStore, vocab_size: int,
                 config: ManagerConfig, rng: Rng, prefix: str = "manager"):
        d = config.d_e
        self.config = config
        self.store = store
        self.embed = EmbeddingTable(store, f"{prefix}.embed", vocab_size, d, rng)
        self.enc_in = BiLstm(store, f"{prefix}.enc_in", d, d, rng)
        self.enc1 = BiLstm(store, f"{prefix}.enc1", d, d, rng)
        self.enc2 = BiLstm(store, f"{prefix}.enc2", d, d, rng)
        self.f1 = Mlp2(store, f"{prefix}.f1", 4 * d, d, d, rng)
        self.f2 = Mlp2(store, f"{prefix}.f2", 4 * d, d, d, rng)
        self.f3 = Mlp2(store, f"{prefix}.f3", 8 * d, d, d, rng)
        self.f4 = Mlp2(store, f"{prefix}.f4", d, d, 1, rng)
        if config.init_scheme == "structured":
            self._structured_init(prefix)
        elif config.init_scheme != "plain":
            raise ValueError(f"unknown init_scheme {config.init_scheme!r}")

    def _structured_init(self, prefix: str) -> None:
        store = self.store
        d = self.config.d_e
        h = d // 2
        table = store[f"{prefix}.embed.table"]
        table.data *= self.config.embed_scale
        table.data[0] = 0.0
        for direction in ("fwd", "bwd"):
            w_ih = store[f"{prefix}.enc_in.{direction}.w_ih"]
            w_ih.data[:, 2 * h:3 * h] *= 3.0
            store[f"{prefix}.enc_in.{direction}.w_hh"].data *= 0.1
            b = store[f"{prefix}.enc_in.{direction}.b"]
            b.data[:h] = 2.0
            b.data[h:2 * h] = 2.0
            b.data[2 * h:3 * h] = 0.0
            b.data[3 * h:] = 2.0
        for enc in ("enc1", "enc2"):
            for direction, rows in (("fwd", slice(0, h)), ("bwd", slice(h, d))):
                w_ih = store[f"{prefix}.{enc}.{direction}.w_ih"]
                w_ih.data[:, 2 * h:3 * h] *= 0.05
                block = np.zeros((d, h))
                block[rows, :] = np.eye(h) * 0.6
                w_ih.data[:, 2 * h:3 * h] += block
                store[f"{prefix}.{enc}.{direction}.w_hh"].data *= 0.05
                b = store[f"{prefix}.{enc}.{direction}.b"]
                b.data[:h] = 2.0
                b.data[h:2 * h] = -2.0
                b.data[3 * h:] = 2.0
        # Match features are [x, x~-x, x~, x*x~] blocks of width d_e:
        # F1/F2 start by passing the attended values (block 2); F3 passes
        # the value and comparison blocks of both paths.
        for name, blocks, gain in ((f"{prefix}.f1", (2,), 2.0),
                                   (f"{prefix}.f2", (2,), 2.0),
                                   (f"{prefix}.f3", (2, 3, 6, 7), 1.0)):
            w1 = store[f"{name}.fc1.w"]
            w2 = store[f"{name}.fc2.w"]
            store[f"{name}.fc1.b"].data *= 0.05
            store[f"{name}.fc2.b"].data *= 0.05
            w1.data *= 0.05
            for blk in blocks:
                w1.data[blk * d:(blk + 1) * d, :] += 0.4 * np.eye(d) / len(blocks)
            w2.data *= 0.05
            w2.data += gain * np.eye(d) / 0.4


def match_module(x: Tensor, y: Tensor, y_mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Cross-attend x over y; returns (features, attention).

    Features along the last axis are [x, x~-x, x~, x*x~] where x~ is
    the attention-weighted sum of y rows; masked y positions receive
    exactly zero attention.  Shapes: x (..., W, d), y (..., Z, d) ->
    features (..., W, 4d), attention (..., W, Z).
    """
    if x.shape[-1] != y.shape[-1]:
        raise ad.ShapeError(
            f"match_module: feature dims differ, {x.shape} vs {y.shape}")
    perm = list(range(y.ndim))
    perm[-1], perm[-2] = perm[-2], perm[-1]
    scores = ad.matmul(x, ad.transpose(y, perm))
    if y_mask is not None:
        bias = (np.asarray(y_mask, dtype=np.float64) - 1.0) * _NEG_BIG
        scores = ad.add(scores, Tensor(bias))
    att = ad.softmax(scores, axis=-1)
    xt = ad.matmul(att, y)
    feats = ad.concat([x, ad.sub(xt, x), xt, ad.mul(x, xt)], axis=-1)
    return feats, att


@dataclass
class ManagerBatch:
    """Padded id arrays for a batch of plan-generation problems.

    The manual is kept sentence-segmented: ``wiki_sent_ids`` is
    (B, S, Ls) with per-token masks, padded with empty sentences where
    manuals differ in length.
    """

    goal_ids: np.ndarray           # (B, N)
    goal_mask: np.ndarray          # (B, N)
    wiki_sent_ids: np.ndarray      # (B, S, Ls), manual tokens only
    wiki_sent_mask: np.ndarray     # (B, S, Ls)
    name_ids: np.ndarray           # (B, U, d_n)
    gold: np.ndarray | None = None  # (B, hops) indices in generation order

    @property
    def size(self) -> int:
        return self.goal_ids.shape[0]

    @property
    def n_objects(self) -> int:
        return self.name_ids.shape[1]


@dataclass
class ManagerInputs:
    """Encoded text sources plus attention masks."""

    q: Tensor                      # (B, N, d_e)
    o: Tensor                      # (B, M, d_e)
    a: Tensor                      # (B, U, d_n, d_e)
    q_mask: np.ndarray             # (B, N)
    o_mask: np.ndarray             # (B, M)
    name_ids: np.ndarray           # (B, U, d_n)

    @property
    def n_objects(self) -> int:
        return self.a.shape[1]


@dataclass
class ManagerForwardTrace:
    """Every intermediate of one dual-path hop."""

    q_matched: Tensor              # (B, N, 4d)
    q_o: Tensor                    # (B, N, d)
    h_matched: Tensor              # (B, d_n, 4d)
    h_o: Tensor                    # (B, d_n, d)
    a_qo: Tensor                   # (B, U, d_n, 4d)
    a_ho: Tensor                   # (B, U, d_n, 4d)
    a_cat: Tensor                  # (B, U, d_n, 8d)
    a_alpha: Tensor                # (B, U, d_n, d)
    a_beta: Tensor                 # (B, U, d)
    logits: Tensor                 # (B, U)
    chosen: np.ndarray             # (B,)
    next_prev_ids: np.ndarray      # (B, d_n)


@dataclass
class Plan:
    """Sub-goal indices in generation order plus execution order."""

    generated: list[int]           # hop-by-hop chosen object indices
    execution: list[int]           # order the worker should fulfil them
    object_eids: list[int]         # eid per observation index
    order: str = "backward"

    def execution_eids(self) -> list[int]:
        return [self.object_eids[i] for i in self.execution]


def null_prev_ids(batch: int, d_n: int) -> np.ndarray:
    """Previous-target ids for the first hop: the NULL name."""
    row = pad_name([NULL_ID], d_n)
    return np.tile(np.asarray(row, dtype=np.int64), (batch, 1))


def _encode_segment(net: ManagerNet, ids: np.ndarray,
                    mask: np.ndarray | None = None) -> Tensor:
    """Shared encoder over one batch of segments, plus the embedding."""
    emb = net.embed.lookup(ids)
    return ad.add(net.enc_in(emb, mask), emb)


def encode_inputs(net: ManagerNet, batch: ManagerBatch) -> ManagerInputs:
    """Embed and encode Q, O and A with the shared encoder.

    Every text unit (the goal, each manual sentence, each object name)
    is its own encoder segment, and the wiki sequence O is the manual
    sentences followed by each name's encoding.  Permuting the candidate
    objects therefore permutes O only as a set of attention keys, and
    no encoder state crosses a sentence or name boundary.
    """
    if batch.n_objects < 1:
        raise ValueError("encode_inputs: empty object list")
    B, U, d_n = batch.name_ids.shape
    q = _encode_segment(net, batch.goal_ids, batch.goal_mask)
    names_flat = batch.name_ids.reshape(B * U, d_n)
    a_flat = _encode_segment(net, names_flat)
    a = ad.reshape(a_flat, (B, U, d_n, a_flat.shape[-1]))
    _, S, Ls = batch.wiki_sent_ids.shape
    sent_flat = batch.wiki_sent_ids.reshape(B * S, Ls)
    sent_mask_flat = batch.wiki_sent_mask.reshape(B * S, Ls)
    sent_enc = _encode_segment(net, sent_flat, sent_mask_flat)
    manual_enc = ad.reshape(sent_enc, (B, S * Ls, sent_enc.shape[-1]))
    manual_mask = batch.wiki_sent_mask.reshape(B, S * Ls)
    if net.config.include_names_in_wiki:
        names_seq = ad.reshape(a_flat, (B, U * d_n, a_flat.shape[-1]))
        o = ad.concat([manual_enc, names_seq], axis=1)
        o_mask = np.concatenate(
            [manual_mask, (names_flat != PAD_ID).reshape(B, U * d_n)], axis=1)
    else:
        o = manual_enc
        o_mask = manual_mask
    return ManagerInputs(q=q, o=o, a=a, q_mask=np.asarray(batch.goal_mask, dtype=np.float64),
                         o_mask=np.asarray(o_mask, dtype=np.float64),
                         name_ids=batch.name_ids)


def manager_forward(net: ManagerNet, inputs: ManagerInputs,
                    prev_ids: np.ndarray,
                    forbidden: np.ndarray | None = None) -> ManagerForwardTrace:
    """One dual-path hop from the encoded inputs and previous target.

    ``prev_ids`` is the (B, d_n) id array of the previous sub-goal's
    name (NULL name on the first hop).  ``forbidden`` optionally masks
    already-chosen candidates out of the argmax (ties break to the
    lowest index).
    """
    B, U, d_n, d = inputs.a.shape
    h = _encode_segment(net, prev_ids)

    q_feats, _ = match_module(inputs.q, inputs.o, inputs.o_mask[:, None, :])
    q_o = ad.add(net.enc1(net.f1(q_feats), inputs.q_mask), inputs.q)
    h_feats, _ = match_module(h, inputs.o, inputs.o_mask[:, None, :])
    h_o = ad.add(net.enc1(net.f2(h_feats)), h)

    n = q_o.shape[1]
    q_bar = ad.expand(ad.reshape(q_o, (B, 1, n, d)), (B, U, n, d))
    h_bar = ad.expand(ad.reshape(h_o, (B, 1, d_n, d)), (B, U, d_n, d))
    prev_mask = (prev_ids != PAD_ID).astype(np.float64)
    a_qo, _ = match_module(inputs.a, q_bar, inputs.q_mask[:, None, None, :])
    a_ho, _ = match_module(inputs.a, h_bar, prev_mask[:, None, None, :])
    a_cat = ad.concat([a_qo, a_ho], axis=-1)
    a_alpha = net.f3(a_cat)
    name_mask = (inputs.name_ids != PAD_ID).astype(np.float64)
    a_alpha = ad.mul(a_alpha, Tensor(name_mask[..., None]))
    enc = net.enc2(ad.reshape(a_alpha, (B * U, d_n, d)))
    a_beta = ad.reshape(ad.reduce_max(enc, axes=1), (B, U, d))
    logits = ad.reshape(net.f4(a_beta), (B, U))

    decide = logits.data.copy()
    if forbidden is not None:
        decide[forbidden] = -np.inf
    chosen = decide.argmax(axis=1)
    next_prev = inputs.name_ids[np.arange(B), chosen]
    return ManagerForwardTrace(q_matched=q_feats, q_o=q_o, h_matched=h_feats,
                               h_o=h_o, a_qo=a_qo, a_ho=a_ho, a_cat=a_cat,
                               a_alpha=a_alpha, a_beta=a_beta, logits=logits,
                               chosen=chosen, next_prev_ids=next_prev)


def run_hops(net: ManagerNet, batch: ManagerBatch, teacher_gold: np.ndarray | None = None,
             hops: int | None = None, no_repeat: bool = False
             ) -> list[ManagerForwardTrace]:
    """Run the hop loop, encoding the shared inputs once.

    With ``teacher_gold`` the previous-target fed to hop t+1 is the
    gold choice (teacher forcing); otherwise the model's own argmax.
    ``no_repeat`` masks out already-chosen candidates at decode time.
    """
    hops = hops if hops is not None else net.config.hops
    if hops < 1:
        raise ValueError(f"hops must be >= 1, got {hops}")
    inputs = encode_inputs(net, batch)
    B = batch.size
    prev = null_prev_ids(B, net.config.d_n)
    forbidden = np.zeros((B, batch.n_objects), dtype=bool)
    traces = []
    for t in range(hops):
        trace = manager_forward(net, inputs, prev,
                                forbidden if no_repeat else None)
        traces.append(trace)
        if teacher_gold is not None:
            gold_t = teacher_gold[:, t]
            prev = batch.name_ids[np.arange(B), gold_t]
            forbidden[np.arange(B), gold_t] = True
        else:
            prev = trace.next_prev_ids
            forbidden[np.arange(B), trace.chosen] = True
    return traces


# ---------------------------------------------------------------------------
# dataset plumbing


def _record_sentences(rec: dict) -> list[list[int]]:
    if "wiki_sentences" in rec:
        return [list(s) for s in rec["wiki_sentences"]]
    return [list(rec["wiki_tokens"])]


def records_to_batches(records: list[dict], batch_size: int,
                       d_n: int, order: str = "backward") -> list[ManagerBatch]:
    """Group records into padded batches (uniform object count each).

    Records may carry ``wiki_sentences`` (list of token lists); without
    it the flat ``wiki_tokens`` become a single segment.
    """
    if not records:
        raise ValueError("empty dataset")
    by_u: dict[int, list[dict]] = {}
    for rec in records:
        by_u.setdefault(len(rec["objects"]), []).append(rec)
    batches = []
    for u, recs in sorted(by_u.items()):
        for lo in range(0, len(recs), batch_size):
            chunk = recs[lo:lo + batch_size]
            b = len(chunk)
            sentences = [_record_sentences(r) for r in chunk]
            n = max(len(r["goal_tokens"]) for r in chunk)
            s_max = max(len(s) for s in sentences)
            ls_max = max(len(sent) for s in sentences for sent in s)
            goal = np.zeros((b, n), dtype=np.int64)
            gmask = np.zeros((b, n))
            wiki = np.zeros((b, s_max, ls_max), dtype=np.int64)
            wmask = np.zeros((b, s_max, ls_max))
            names = np.zeros((b, u, d_n), dtype=np.int64)
            golds = []
            for i, r in enumerate(chunk):
                gt = r["goal_tokens"]
                goal[i, :len(gt)] = gt
                gmask[i, :len(gt)] = 1.0
                for si, sent in enumerate(sentences[i]):
                    wiki[i, si, :len(sent)] = sent
                    wmask[i, si, :len(sent)] = 1.0
                for j, nm in enumerate(r["objects"]):
                    names[i, j] = pad_name(list(nm)[:d_n], d_n)
                if "gold_backward" in r:
                    seq = list(r["gold_backward"])
                    golds.append(seq if order == "backward" else seq[::-1])
            gold = np.asarray(golds, dtype=np.int64) if golds else None
            batches.append(ManagerBatch(goal, gmask, wiki, wmask, names, gold))
    return batches


def save_dataset(records: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_dataset(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as err:
                raise ValueError(f"{path}:{lineno}: malformed dataset line: {err}") from None
    return records


# ---------------------------------------------------------------------------
# training and inference


def _hop_losses(net: ManagerNet, batch: ManagerBatch) -> tuple[Tensor, list[ManagerForwardTrace]]:
    gold = batch.gold
    traces = run_hops(net, batch, teacher_gold=gold)
    losses = [ad.reshape(ad.softmax_cross_entropy(tr.logits, gold[:, t]),
                         (batch.size, 1))
              for t, tr in enumerate(traces)]
    per_step = ad.mean(ad.concat(losses, axis=1))
    return per_step, traces


def train_manager_supervised(net: ManagerNet, train_records: list[dict],
                             val_records: list[dict] | None = None,
                             epochs: int | None = None,
                             lr: float | None = None,
                             batch_size: int | None = None,
                             shuffle_rng: Rng | None = None,
                             log=None,
                             stop_at_exact: float | None = None) -> dict:
    """Teacher-forced cross-entropy training at each hop (Adam).

    Returns the final metrics dict; per-epoch records go to ``log``
    (a callable) when given.  ``stop_at_exact`` ends training early once
    validation exact-match reaches the threshold.
    """
    cfg = net.config
    epochs = epochs if epochs is not None else cfg.epochs
    lr = lr if lr is not None else cfg.lr
    batch_size = batch_size if batch_size is not None else cfg.batch_size
    rng = shuffle_rng or Rng(0)
    metrics = {}
    for epoch in range(epochs):
        order = list(range(len(train_records)))
        rng.shuffle(order)
        shuffled = [train_records[i] for i in order]
        batches = records_to_batches(shuffled, batch_size, cfg.d_n, cfg.order)
        total_loss = 0.0
        for batch in batches:
            net.store.clear_grads()
            with ad.Tape():
                loss, _ = _hop_losses(net, batch)
                ad.backward(loss)
            adam_step(net.store, lr=lr)
            total_loss += loss.item() * batch.size
        metrics = {"epoch": epoch + 1, "train_loss": total_loss / len(train_records)}
        if val_records:
            metrics.update({f"val_{k}": v
                            for k, v in evaluate_manager(net, val_records).items()})
        if log is not None:
            log(dict(metrics))
        if (stop_at_exact is not None and val_records
                and metrics.get("val_exact", 0.0) >= stop_at_exact):
            break
    return metrics


def evaluate_manager(net: ManagerNet, records: list[dict],
                     batch_size: int = 500) -> dict:
    """Teacher-forced per-step accuracy plus free-running exact match."""
    cfg = net.config
    step_hits = np.zeros(cfg.hops)
    exact_hits = 0
    n = 0
    for batch in records_to_batches(records, batch_size, cfg.d_n, cfg.order):
        gold = batch.gold
        teacher = run_hops(net, batch, teacher_gold=gold)
        for t, tr in enumerate(teacher):
            step_hits[t] += (tr.chosen == gold[:, t]).sum()
        free = run_hops(net, batch, no_repeat=True)
        pred = np.stack([tr.chosen for tr in free], axis=1)
        exact_hits += (pred == gold).all(axis=1).sum()
        n += batch.size
    out = {f"step{t + 1}_acc": float(step_hits[t] / n) for t in range(cfg.hops)}
    out["exact"] = float(exact_hits / n)
    return out


def generate_plan(net: ManagerNet, goal_tokens: list[int],
                  wiki_sentences: list[list[int]],
                  object_names: list[list[int]], object_eids: list[int],
                  hops: int | None = None) -> Plan:
    """Plan for one episode: hops in generation order, reversed to execute.

    In backward mode hop 1 names the final sub-goal and execution runs
    the reversed list; the forward-order ablation executes hops as
    generated.  Candidates already chosen are masked at decode time so
    a plan never repeats an object.
    """
    cfg = net.config
    batch = records_to_batches(
        [{"goal_tokens": goal_tokens, "wiki_sentences": wiki_sentences,
          "wiki_tokens": [t for s in wiki_sentences for t in s],
          "objects": object_names}], 1, cfg.d_n, cfg.order)[0]
    traces = run_hops(net, batch, hops=hops, no_repeat=True)
    generated = [int(tr.chosen[0]) for tr in traces]
    execution = generated[::-1] if cfg.order == "backward" else list(generated)
    return Plan(generated=generated, execution=execution,
                object_eids=list(object_eids), order=cfg.order)


def reinforce_manager(net: ManagerNet, batch: ManagerBatch,
                      chosen: np.ndarray, reached: np.ndarray,
                      episode_won: np.ndarray, lr: float | None = None,
                      lambda_worker: float = 1.0, lambda_final: float = 1.0) -> float:
    """Policy-gradient update on the hop choices from played episodes.

    Per hop t the reward is ``lambda_worker * (+-1 for the worker
    reaching that sub-goal) + lambda_final * (+-1 for the episode
    outcome)``; the loss is reward-weighted cross-entropy on the chosen
    candidates, with the previous-hop input replaying the actual
    choices.  Returns the scalar loss value.
    """
    B, hops = chosen.shape
    if reached.shape != (B, hops) or episode_won.shape != (B,):
        raise ValueError("reinforce_manager: mismatched feedback shapes")
    rewards = (lambda_worker * np.where(reached, 1.0, -1.0)
               + lambda_final * np.where(episode_won, 1.0, -1.0)[:, None])
    net.store.clear_grads()
    with ad.Tape():
        traces = run_hops(net, batch, teacher_gold=chosen, hops=hops)
        terms = []
        for t, tr in enumerate(traces):
            ce = ad.softmax_cross_entropy(tr.logits, chosen[:, t])
            terms.append(ad.reshape(ad.mul(ce, Tensor(rewards[:, t])), (B, 1)))
        loss = ad.mean(ad.concat(terms, axis=1))
        ad.backward(loss)
    if lambda_worker == 0.0 and lambda_final == 0.0:
        net.store.clear_grads()
        return 0.0
    adam_step(net.store, lr=lr if lr is not None else net.config.lr)
    return loss.item()
