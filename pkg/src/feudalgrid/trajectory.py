"""Random-walk data collection for supervised plan training.

Random episodes are filtered down to clean wins whose contact order is
exactly [target item, target monster]; reversing that order gives the
gold generation-order labels.  Sequences are replayable from their
episode seed, so records are rebuilt by re-rendering the episode texts
rather than storing them during the walk.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .manager import save_dataset
from .rng import Rng, derive_seed
from .rtfm_env import ACTIONS, GridWorld

__all__ = [
    "VisitSequence", "CollectionStats", "collect_random_walks",
    "to_backward_records", "split_records", "split_and_save",
]


@dataclass
class VisitSequence:
    """Contact history of one random episode, replayable from its seed."""

    episode_seed: int
    contacts: list[tuple[int, str, str]]   # (eid, kind, role) in touch order
    outcome: str                            # won | lost

    def is_clean_win(self) -> bool:
        """Won by touching exactly [target item, target monster]."""
        return (self.outcome == "won"
                and [c[1:] for c in self.contacts]
                == [("item", "target"), ("monster", "target")])


@dataclass
class CollectionStats:
    episodes: int = 0
    wins: int = 0
    clean_wins: int = 0
    label_counts: dict = field(default_factory=dict)

    @property
    def win_fraction(self) -> float:
        return self.wins / max(1, self.episodes)

    @property
    def clean_fraction(self) -> float:
        return self.clean_wins / max(1, self.episodes)


def _contact_events(events, env: GridWorld):
    out = []
    for ev in events:
        if ev.eid is None:
            continue
        e = env.entity[ev.eid]
        out.append((e.eid, e.kind, e.role))
    return out


def collect_random_walks(n_target: int, seed: int, env: GridWorld,
                         max_episodes: int | None = None,
                         keep_all: bool = False,
                         progress=None) -> tuple[list[VisitSequence], CollectionStats]:
    """Run uniform-random episodes until ``n_target`` clean wins.

    Returns the clean-win sequences (all sequences with ``keep_all``)
    plus collection statistics.  Episode seeds derive deterministically
    from ``seed``, so two calls with the same arguments agree exactly.
    """
    if n_target < 1:
        raise ValueError("n_target must be >= 1")
    max_episodes = max_episodes or 400 * n_target
    policy_rng = Rng(derive_seed(seed, "walk-policy"))
    stats = CollectionStats()
    kept: list[VisitSequence] = []
    clean = 0
    ep = 0
    while clean < n_target:
        if ep >= max_episodes:
            raise RuntimeError(
                f"collected only {clean}/{n_target} clean wins in {ep} episodes")
        episode_seed = derive_seed(seed, f"walk-ep{ep}")
        env.reset(episode_seed)
        contacts: list[tuple[int, str, str]] = []
        while True:
            res = env.step(ACTIONS[policy_rng.integers(0, len(ACTIONS))])
            contacts.extend(_contact_events(res.events, env))
            if res.done:
                break
        seq = VisitSequence(episode_seed, contacts,
                            "won" if env.status == "won" else "lost")
        stats.episodes += 1
        stats.wins += seq.outcome == "won"
        if seq.is_clean_win():
            clean += 1
            stats.clean_wins += 1
            kept.append(seq)
        elif keep_all:
            kept.append(seq)
        ep += 1
        if progress is not None and ep % 5000 == 0:
            progress(ep, clean)
    return kept, stats


def _record_hash(record: dict) -> str:
    key = json.dumps({k: record[k] for k in ("goal_tokens", "wiki_tokens", "objects")},
                     sort_keys=True)
    return hashlib.sha256(key.encode("utf-8")).hexdigest()


def to_backward_records(sequences: list[VisitSequence], env: GridWorld,
                        stats: CollectionStats | None = None) -> list[dict]:
    """Reverse clean-win visit orders into generation-order gold labels.

    Each record re-renders its episode from the stored seed and resolves
    the touched entities against that episode's shuffled object list.
    Non-clean sequences are skipped (counted); duplicate (texts, layout)
    records are deduplicated by content hash.
    """
    records: list[dict] = []
    seen: set[str] = set()
    skipped = 0
    for seq in sequences:
        if not seq.is_clean_win():
            skipped += 1
            continue
        obs, manual, goal = env.reset(seq.episode_seed)
        index_of = {o.eid: i for i, o in enumerate(obs.objects)}
        visit_idx = [index_of[eid] for eid, _, _ in seq.contacts]
        gold_backward = visit_idx[::-1]
        record = {
            "goal_tokens": list(goal.tokens),
            "wiki_tokens": list(manual.flat_tokens()),
            "wiki_sentences": [list(s) for s in manual.sentences],
            "objects": [list(o.name_ids) for o in obs.objects],
            "gold_backward": gold_backward,
            "episode_seed": seq.episode_seed,
        }
        h = _record_hash(record)
        if h in seen:
            skipped += 1
            continue
        seen.add(h)
        records.append(record)
        if stats is not None:
            key = tuple(gold_backward)
            stats.label_counts[str(key)] = stats.label_counts.get(str(key), 0) + 1
    if skipped and stats is not None:
        stats.label_counts["_skipped"] = skipped
    return records


def split_records(records: list[dict], ratio: float, seed: int,
                  by_text: bool = False) -> tuple[list[dict], list[dict]]:
    """Deterministic shuffled split; ``by_text`` keeps records sharing a
    (goal, wiki) pair on the same side."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    rng = Rng(derive_seed(seed, "split"))
    if by_text:
        groups: dict[str, list[dict]] = {}
        for rec in records:
            key = json.dumps([rec["goal_tokens"], rec["wiki_tokens"]])
            groups.setdefault(hashlib.sha256(key.encode()).hexdigest(), []).append(rec)
        keys = sorted(groups)
        rng.shuffle(keys)
        train: list[dict] = []
        val: list[dict] = []
        want = ratio * len(records)
        for k in keys:
            (train if len(train) < want else val).extend(groups[k])
        return train, val
    order = list(range(len(records)))
    rng.shuffle(order)
    cut = int(round(ratio * len(records)))
    return [records[i] for i in order[:cut]], [records[i] for i in order[cut:]]


def split_and_save(records: list[dict], ratio: float, train_path, val_path,
                   seed: int = 0, by_text: bool = False) -> tuple[int, int]:
    train, val = split_records(records, ratio, seed, by_text)
    save_dataset(train, train_path)
    save_dataset(val, val_path)
    return len(train), len(val)
