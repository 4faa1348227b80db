"""Courier grid game: fetch the message, deliver it to the goal, dodge the enemy.

Stage 2 fields one enemy, one message holder, and one goal, each with a
stationary/chasing/fleeing movement type described in a per-episode
manual.  Stage 3 adds a distractor message and a distractor goal that
share the true entities' names but move differently, so the initial
observation cannot tell them apart.  Touching the enemy, or the goal
without the message, loses (-1); picking up the message pays +0.5 and
delivering it +1, so every winning episode totals exactly 1.5.

Train/val/test environments differ by disjoint seed ranges and disjoint
manual-template subsets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .corpus import PAD_ID, Vocabulary, pad_name, tokenize, words_of
from .rng import Rng
from .rtfm_env import (ACTIONS, DELTAS, Event, ObjectView, Observation,
                       StepResult, pursuit_moves)

__all__ = [
    "MOVEMENTS", "TASK_SENTENCE", "MessengerConfig", "MessengerEntity",
    "Messenger", "MessengerManual", "build_messenger_vocabulary",
    "flee_moves", "template_indices_for_split",
]

MOVEMENTS = ("stationary", "chasing", "fleeing")
TASK_SENTENCE = "get message then get goal"

ENTITY_NAMES = ("mage", "airplane", "whale", "bird", "queen", "dog",
                "ship", "robot", "knight", "orb", "thief", "scientist")

ENEMY_TEMPLATES = (
    "the {move} {name} is the enemy",
    "the {move} {name} is an enemy to avoid",
    "avoid the enemy which is the {move} {name}",
    "the enemy here is the {move} {name}",
    "watch out the {move} {name} is the enemy",
)
MESSAGE_TEMPLATES = (
    "the {move} {name} carries the message",
    "the {move} {name} holds the message",
    "the message is carried by the {move} {name}",
    "get the message from the {move} {name}",
    "the {move} {name} has the message",
)
GOAL_TEMPLATES = (
    "the {move} {name} is the goal",
    "the {move} {name} is the final goal",
    "the goal is the {move} {name}",
    "bring the message to the {move} {name}",
    "deliver the message to the {move} {name}",
)

_ROLE_TEMPLATES = {
    "enemy": ENEMY_TEMPLATES,
    "message": MESSAGE_TEMPLATES,
    "goal": GOAL_TEMPLATES,
    "distractor_message": MESSAGE_TEMPLATES,
    "distractor_goal": GOAL_TEMPLATES,
}

_SPLIT_TEMPLATES = {"train": (0, 1, 2), "val": (3,), "test": (4,)}


def template_indices_for_split(split: str) -> tuple[int, ...]:
    if split not in _SPLIT_TEMPLATES:
        raise ValueError(f"unknown split {split!r}; use train/val/test")
    return _SPLIT_TEMPLATES[split]


def build_messenger_vocabulary() -> Vocabulary:
    tokens: list[str] = []
    for name in ENTITY_NAMES:
        tokens.extend(words_of(name))
    tokens.extend(MOVEMENTS)
    seen_template_words: list[str] = []
    for tpls in (ENEMY_TEMPLATES, MESSAGE_TEMPLATES, GOAL_TEMPLATES):
        for tpl in tpls:
            for w in words_of(tpl.replace("{move}", " ").replace("{name}", " ")):
                seen_template_words.append(w)
    tokens.extend(sorted(set(seen_template_words)))
    tokens.extend(words_of(TASK_SENTENCE))
    tokens.append("you")
    return Vocabulary(tokens)


@dataclass
class MessengerConfig:
    stage: int = 2
    height: int = 10
    width: int = 10
    max_turns: int = 128
    entity_move_period: int = 2    # entities act every k-th round (speed 1/k)
    name_len: int = 4


@dataclass
class MessengerEntity:
    eid: int
    name: str
    role: str                      # enemy | message | goal | distractor_message | distractor_goal
    movement: str                  # stationary | chasing | fleeing
    row: int
    col: int
    alive: bool = True

    @property
    def pos(self) -> tuple[int, int]:
        return (self.row, self.col)


@dataclass
class MessengerManual:
    sentences: list[list[int]]
    task_tokens: list[int] = field(default_factory=list)

    def flat_tokens(self) -> list[int]:
        out: list[int] = []
        for s in self.sentences:
            out.extend(s)
        return out


def flee_moves(entity_pos: tuple[int, int], player_pos: tuple[int, int],
               height: int, width: int) -> list[str]:
    """In-bounds single-step moves that strictly increase the distance."""
    er, ec = entity_pos
    pr, pc = player_pos
    base = abs(er - pr) + abs(ec - pc)
    out = []
    for action in ("up", "down", "left", "right"):
        dr, dc = DELTAS[action]
        nr, nc = er + dr, ec + dc
        if 0 <= nr < height and 0 <= nc < width \
                and abs(nr - pr) + abs(nc - pc) > base:
            out.append(action)
    return out


class Messenger:
    """One courier episode; see the module docstring for the rules."""

    def __init__(self, config: MessengerConfig, vocab: Vocabulary | None = None):
        if config.stage not in (2, 3):
            raise ValueError(f"stage must be 2 or 3, got {config.stage}")
        self.config = config
        self.vocab = vocab or build_messenger_vocabulary()
        self.status = "idle"

    def reset(self, seed: int, split: str = "train",
              layout: dict[str, tuple[int, int]] | None = None
              ) -> tuple[Observation, MessengerManual, list[int]]:
        """Place the cast, render the manual, return (obs, manual, task).

        ``split`` selects the manual-template subset; the task sentence
        is fixed.  Same (seed, split) reproduces the episode exactly.
        """
        self.rng = Rng(seed)
        self.seed = seed
        cfg = self.config

        names = [ENTITY_NAMES[i] for i in self.rng.sample_indices(len(ENTITY_NAMES), 3)]
        movements = [MOVEMENTS[self.rng.integers(0, 3)] for _ in range(3)]
        cast: list[tuple[str, str, str]] = [
            (names[0], "enemy", movements[0]),
            (names[1], "message", movements[1]),
            (names[2], "goal", movements[2]),
        ]
        if cfg.stage == 3:
            for src_idx, role in ((1, "distractor_message"), (2, "distractor_goal")):
                name = cast[src_idx][0]
                true_move = cast[src_idx][2]
                others = [m for m in MOVEMENTS if m != true_move]
                cast.append((name, role, others[self.rng.integers(0, len(others))]))

        n = len(cast) + 1
        cells = [(r, c) for r in range(cfg.height) for c in range(cfg.width)]
        picked = [cells[i] for i in self.rng.sample_indices(len(cells), n)]
        if layout is not None:
            picked = [layout["player"]] + [layout[role] for _, role, _ in cast]
            if len(set(picked)) != len(picked):
                raise ValueError("layout places two entities on one cell")
        self.player_pos = picked[0]
        self.entities = [MessengerEntity(eid=i + 1, name=nm, role=role, movement=mv,
                                         row=r, col=c)
                         for i, ((nm, role, mv), (r, c)) in enumerate(zip(cast, picked[1:]))]
        self.has_message = False
        self.turn = 0
        self.status = "running"

        indices = template_indices_for_split(split)
        rendered = []
        for e in self.entities:
            tpls = _ROLE_TEMPLATES[e.role]
            tpl = tpls[indices[self.rng.integers(0, len(indices))]]
            rendered.append(tokenize(tpl.format(move=e.movement, name=e.name), self.vocab))
        self.rng.shuffle(rendered)
        manual = MessengerManual(sentences=rendered,
                                 task_tokens=tokenize(TASK_SENTENCE, self.vocab))

        order = [e.eid for e in self.entities]
        self.rng.shuffle(order)
        self.object_order = order
        return self.observe(), manual, manual.task_tokens

    # -- observation ---------------------------------------------------------

    @property
    def entity(self):
        return {e.eid: e for e in self.entities}

    def by_role(self, role: str) -> MessengerEntity:
        return next(e for e in self.entities if e.role == role)

    def observe(self) -> Observation:
        """Names and positions only; roles and movements stay hidden."""
        cfg = self.config
        grid: list[list[list[int]]] = [[[] for _ in range(cfg.width)]
                                       for _ in range(cfg.height)]
        for e in self.entities:
            if e.alive:
                grid[e.row][e.col].extend(tokenize(e.name, self.vocab))
        pr, pc = self.player_pos
        grid[pr][pc].append(self.vocab.id("you"))
        if self.has_message:
            grid[pr][pc].append(self.vocab.id("message"))
        objects = []
        for eid in self.object_order:
            e = self.entity[eid]
            if not e.alive:
                continue
            objects.append(ObjectView(
                name_ids=pad_name(tokenize(e.name, self.vocab), cfg.name_len),
                pos=e.pos, eid=e.eid, kind="entity"))
        inv = pad_name([self.vocab.id("message")] if self.has_message else [],
                       cfg.name_len)
        return Observation(grid=grid, objects=objects, player_pos=self.player_pos,
                           inventory_ids=inv, turn=self.turn)

    # -- dynamics --------------------------------------------------------------

    def _touch(self, entity: MessengerEntity, events: list[Event]) -> float:
        """Resolve player/entity contact; returns the reward delta."""
        if entity.role == "enemy":
            self.status = "lost"
            events.append(Event("combat_lost", entity.eid))
            return -1.0
        if entity.role == "message" and not self.has_message:
            self.has_message = True
            entity.alive = False
            events.append(Event("picked_item", entity.eid))
            return 0.5
        if entity.role == "goal":
            if self.has_message:
                self.status = "won"
                events.append(Event("combat_won", entity.eid))
                return 1.0
            self.status = "lost"
            events.append(Event("combat_lost", entity.eid))
            return -1.0
        return 0.0  # distractors (and a re-touched message cell) are inert

    def step(self, action: str) -> StepResult:
        if self.status != "running":
            raise RuntimeError(f"step on finished episode (status={self.status})")
        if action not in ACTIONS:
            raise ValueError(f"unknown action {action!r}")
        cfg = self.config
        events: list[Event] = []
        reward = 0.0

        dr, dc = DELTAS[action]
        nr, nc = self.player_pos[0] + dr, self.player_pos[1] + dc
        if 0 <= nr < cfg.height and 0 <= nc < cfg.width:
            self.player_pos = (nr, nc)
        for e in list(self.entities):
            if e.alive and e.pos == self.player_pos and self.status == "running":
                reward += self._touch(e, events)

        if self.status == "running" and (self.turn % cfg.entity_move_period
                                         == cfg.entity_move_period - 1):
            for e in self.entities:
                if not e.alive or e.movement == "stationary":
                    continue
                if e.movement == "chasing":
                    options = pursuit_moves(e.pos, self.player_pos)
                else:
                    options = flee_moves(e.pos, self.player_pos, cfg.height, cfg.width)
                if not options:
                    continue
                move = options[self.rng.integers(0, len(options))]
                mr, mc = DELTAS[move]
                dest = (e.row + mr, e.col + mc)
                if any(o.alive and o.pos == dest and o.eid != e.eid
                       for o in self.entities):
                    continue
                e.row, e.col = dest
                if e.pos == self.player_pos and self.status == "running":
                    reward += self._touch(e, events)

        self.turn += 1
        if self.status == "running" and self.turn >= cfg.max_turns:
            self.status = "lost"
            events.append(Event("timeout"))
            reward += -1.0
        return StepResult(reward, self.status != "running", events)
