"""Grid-world game: read the manual, grab the right item, beat the right monster.

One episode places the player, two monsters (target and distractor) and
two items on an open bordered grid.  The player moves first each round;
stepping onto an item swaps it into the single inventory slot, sharing
a cell with a monster resolves combat by the modifier-vs-element rules
of the episode's ``DynamicsAssignment``.  Monsters then move (pursuing
the player with probability ``pursuit_prob``), combat resolves again on
collision, and the round-end check decides the outcome: the game is won
once the target monster is dead and the player still alive, lost on any
lost combat or on timeout.  Rewards are +1 / -1 at termination.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from . import corpus
from .corpus import (CorpusConfig, DynamicsAssignment, Goal, InstanceSpec,
                     Manual, Vocabulary, pad_name)
from .rng import Rng

__all__ = [
    "ACTIONS", "Entity", "StepResult", "Event", "Observation", "ObjectView",
    "RtfmConfig", "GridWorld", "monster_move", "pursuit_moves", "combat_resolve",
]

ACTIONS = ("up", "down", "left", "right", "stay")
DELTAS = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1), "stay": (0, 0)}


@dataclass
class RtfmConfig:
    """Environment knobs.

    Monsters are near-stationary threats: a monster within
    ``aggro_radius`` of the player takes a pursuit-model move
    (``pursuit_prob`` toward the player) with probability
    ``near_act_prob`` per round, while distant monsters take a uniform
    wander step with probability ``wander_act_prob``.  Together with
    the spawn-distance floor these defaults calibrate the scripted
    baselines: a uniform-random policy wins ~12% of full games and the
    pathfinding oracle with true sub-goals ~90%/~96% on 6x6/10x10.
    """

    height: int = 6
    width: int = 6
    max_turns: int = 1000
    pursuit_prob: float = 0.6
    aggro_radius: int = 2
    near_act_prob: float = 0.5
    wander_act_prob: float = 0.05
    min_monster_spawn_distance: int = 4
    max_reset_retries: int = 50


@dataclass
class Entity:
    eid: int
    kind: str                      # monster | item | player
    name_words: tuple[str, ...]
    row: int
    col: int
    role: str = "none"             # target | distractor | none
    weakened: bool = False
    alive: bool = True

    @property
    def pos(self) -> tuple[int, int]:
        return (self.row, self.col)

    @property
    def attribute(self) -> str:
        """Element for monsters, modifier for items (first name word)."""
        return self.name_words[0]


@dataclass
class Event:
    kind: str                      # picked_item | combat_won | combat_lost | timeout
    eid: int | None = None

    def to_json(self) -> dict:
        return {"kind": self.kind, "eid": self.eid}


@dataclass
class StepResult:
    reward: float
    done: bool
    events: list[Event] = field(default_factory=list)


@dataclass
class ObjectView:
    name_ids: list[int]            # padded to name_len
    pos: tuple[int, int]
    eid: int
    kind: str


@dataclass
class Observation:
    grid: list[list[list[int]]]    # [row][col] -> token ids of cell text
    objects: list[ObjectView]      # alive non-player entities, reset-shuffled order
    player_pos: tuple[int, int]
    inventory_ids: list[int]       # padded to name_len; PAD-only when empty
    turn: int


def pursuit_moves(monster_pos: tuple[int, int], player_pos: tuple[int, int]) -> list[str]:
    """Single-step moves that strictly decrease Manhattan distance."""
    mr, mc = monster_pos
    pr, pc = player_pos
    base = abs(mr - pr) + abs(mc - pc)
    out = []
    for action in ("up", "down", "left", "right"):
        dr, dc = DELTAS[action]
        if abs(mr + dr - pr) + abs(mc + dc - pc) < base:
            out.append(action)
    return out


def monster_move(monster_pos: tuple[int, int], player_pos: tuple[int, int], rng: Rng,
                 pursuit_prob: float, height: int, width: int,
                 blocked: set[tuple[int, int]] = frozenset()) -> tuple[int, int]:
    """One monster move: pursue with ``pursuit_prob``, else move randomly.

    Pursuit picks uniformly among distance-decreasing moves (falls
    through to the random branch when there are none).  The random
    branch is uniform over all five actions with border-blocked moves
    resolving to stay.  A destination occupied by another monster also
    resolves to stay.
    """
    chasing = pursuit_moves(monster_pos, player_pos)
    if rng.random() < pursuit_prob and chasing:
        action = chasing[rng.integers(0, len(chasing))]
    else:
        action = ACTIONS[rng.integers(0, len(ACTIONS))]
    dr, dc = DELTAS[action]
    nr = monster_pos[0] + dr
    nc = monster_pos[1] + dc
    if not (0 <= nr < height and 0 <= nc < width):
        return monster_pos
    if (nr, nc) in blocked:
        return monster_pos
    return (nr, nc)


def combat_resolve(inventory: Entity | None, monster: Entity,
                   assignment: DynamicsAssignment) -> str:
    """'win' iff the carried modifier beats the monster's element, or it
    is weakened; 'lose' otherwise."""
    if monster.weakened:
        return "win"
    if inventory is not None and assignment.beats.get(inventory.attribute) == monster.attribute:
        return "win"
    return "lose"


class GridWorld:
    """One episode of the manual-reading grid game.

    ``reset`` draws fresh dynamics, renders the texts, and places the
    cast; ``step`` runs a full round.  The round is also exposed as
    ``player_phase`` / ``monster_phase`` / ``finish_round`` so training
    wrappers can re-score or cut rounds short.
    """

    def __init__(self, config: RtfmConfig, corpus_config: CorpusConfig,
                 vocab: Vocabulary):
        if config.height < 5 or config.width < 5:
            raise ValueError(f"grid must be at least 5x5, got {config.height}x{config.width}")
        self.config = config
        self.corpus_config = corpus_config
        self.vocab = vocab
        self.status = "idle"

    # -- episode setup -----------------------------------------------------

    def reset(self, seed: int, layout: dict[str, tuple[int, int]] | None = None
              ) -> tuple[Observation, Manual, Goal]:
        """Start a new episode; same seed reproduces it exactly.

        ``layout`` optionally pins entity positions by slot name
        (player / target_monster / distractor_monster / target_item /
        distractor_item) for scripted scenarios.
        """
        self.rng = Rng(seed)
        self.seed = seed
        last_err = None
        for _ in range(self.config.max_reset_retries):
            try:
                self.assignment = corpus.sample_assignment(self.rng, self.corpus_config)
                self.instance = self._sample_instance()
                break
            except ValueError as err:
                last_err = err
        else:
            raise RuntimeError(f"could not sample a valid instance: {last_err}")

        inst = self.instance
        self.manual = corpus.render_manual(self.assignment, inst, self.rng,
                                           self.vocab, self.corpus_config)
        self.goal = corpus.render_goal(inst.target_team, self.rng,
                                       self.vocab, self.corpus_config)

        spec = [
            ("player", "player", (corpus.PLAYER_TOKEN,), "none"),
            ("target_monster", "monster", tuple(corpus.words_of(inst.target_monster_name)), "target"),
            ("distractor_monster", "monster",
             tuple(corpus.words_of(inst.distractor_monster_name)), "distractor"),
            ("target_item", "item", tuple(corpus.words_of(inst.target_item_name)), "target"),
            ("distractor_item", "item",
             tuple(corpus.words_of(inst.distractor_item_name)), "distractor"),
        ]
        if layout is None:
            positions = self._sample_positions(len(spec))
        else:
            positions = [layout[slot] for slot, *_ in spec]
            if len(set(positions)) != len(positions):
                raise ValueError("layout places two entities on one cell")
        self.entities = [Entity(eid=i, kind=kind, name_words=words, row=r, col=c, role=role)
                         for i, ((_, kind, words, role), (r, c)) in enumerate(zip(spec, positions))]
        self.player = self.entities[0]
        self.inventory: Entity | None = None
        self.turn = 0
        self.status = "running"

        order = [e.eid for e in self.entities if e.kind != "player"]
        self.rng.shuffle(order)
        self.object_order = order
        return self.observe(), self.manual, self.goal

    def _sample_positions(self, count: int) -> list[tuple[int, int]]:
        """Distinct uniform cells; monsters spawn away from the player.

        The first sampled cell is the player's, the next two are the
        monsters' (rejected until both sit at least
        ``min_monster_spawn_distance`` away), the rest are the items'.
        """
        cells = [(r, c) for r in range(self.config.height)
                 for c in range(self.config.width)]
        for _ in range(max(1, self.config.max_reset_retries) * 20):
            picked = [cells[i] for i in self.rng.sample_indices(len(cells), count)]
            (pr, pc) = picked[0]
            if all(abs(r - pr) + abs(c - pc) >= self.config.min_monster_spawn_distance
                   for (r, c) in picked[1:3]):
                return picked
        raise RuntimeError(
            f"cannot place monsters at distance >= "
            f"{self.config.min_monster_spawn_distance} on a "
            f"{self.config.height}x{self.config.width} grid")

    def _sample_instance(self) -> InstanceSpec:
        inst = corpus.sample_instance(self.assignment, self.rng,
                                      self.corpus_config.item_nouns)
        # Keep the distractor item useless against both cast monsters so
        # that engaging the distractor monster always loses.
        beats = self.assignment.beats
        bad = [m for m in self.assignment.modifiers
               if beats[m] not in (inst.target_element, inst.distractor_element)]
        if not bad:
            raise ValueError("no modifier is ineffective against both cast monsters")
        if beats[inst.distractor_item_modifier] == inst.distractor_element:
            inst = dataclasses.replace(inst, distractor_item_modifier=self.rng.choice(bad))
        return inst

    # -- observation -------------------------------------------------------

    @property
    def entity(self):
        return {e.eid: e for e in self.entities}

    @property
    def target_monster(self) -> Entity:
        return next(e for e in self.entities if e.kind == "monster" and e.role == "target")

    @property
    def distractor_monster(self) -> Entity:
        return next(e for e in self.entities if e.kind == "monster" and e.role == "distractor")

    @property
    def target_item(self) -> Entity:
        return next(e for e in self.entities if e.kind == "item" and e.role == "target")

    @property
    def distractor_item(self) -> Entity:
        return next(e for e in self.entities if e.kind == "item" and e.role == "distractor")

    def alive_monsters(self) -> list[Entity]:
        return [e for e in self.entities if e.kind == "monster" and e.alive]

    def observe(self) -> Observation:
        grid: list[list[list[int]]] = [[[] for _ in range(self.config.width)]
                                       for _ in range(self.config.height)]
        for e in self.entities:
            if e.kind == "player" or not e.alive:
                continue
            grid[e.row][e.col].extend(self.vocab.encode(e.name_words))
        pr, pc = self.player.pos
        grid[pr][pc].append(self.vocab.id(corpus.PLAYER_TOKEN))
        if self.inventory is not None:
            grid[pr][pc].extend(self.vocab.encode(self.inventory.name_words))

        name_len = self.corpus_config.name_len
        objects = []
        for eid in self.object_order:
            e = self.entity[eid]
            if not e.alive:
                continue
            objects.append(ObjectView(
                name_ids=pad_name(self.vocab.encode(e.name_words), name_len),
                pos=e.pos, eid=e.eid, kind=e.kind))
        if self.inventory is not None:
            inv = pad_name(self.vocab.encode(self.inventory.name_words), name_len)
        else:
            inv = [corpus.PAD_ID] * name_len
        return Observation(grid=grid, objects=objects, player_pos=self.player.pos,
                           inventory_ids=inv, turn=self.turn)

    # -- round phases --------------------------------------------------------

    def _resolve_player_cell(self, events: list[Event]) -> None:
        cell = self.player.pos
        here = [e for e in self.entities
                if e.alive and e.kind != "player" and e.pos == cell]
        for e in sorted(here, key=lambda e: (e.kind != "monster", e.eid)):
            if self.status != "running":
                break
            if e.kind == "monster":
                self._combat(e, events)
            else:
                self._pickup(e, events)

    def _combat(self, monster: Entity, events: list[Event]) -> None:
        outcome = combat_resolve(self.inventory, monster, self.assignment)
        if outcome == "win":
            monster.alive = False
            events.append(Event("combat_won", monster.eid))
        else:
            self.status = "lost"
            events.append(Event("combat_lost", monster.eid))

    def _pickup(self, item: Entity, events: list[Event]) -> None:
        item.alive = False  # leaves the grid; previous item is gone forever
        self.inventory = item
        events.append(Event("picked_item", item.eid))

    def player_phase(self, action: str) -> list[Event]:
        """Move the player and resolve its cell; returns the events."""
        if self.status != "running":
            raise RuntimeError(f"step on finished episode (status={self.status})")
        if action not in ACTIONS:
            raise ValueError(f"unknown action {action!r}")
        dr, dc = DELTAS[action]
        nr, nc = self.player.row + dr, self.player.col + dc
        if 0 <= nr < self.config.height and 0 <= nc < self.config.width:
            self.player.row, self.player.col = nr, nc
        events: list[Event] = []
        self._resolve_player_cell(events)
        return events

    def monster_phase(self) -> list[Event]:
        """Move alive monsters per the activity model; resolve collisions.

        A monster within ``aggro_radius`` of the player acts with
        probability ``near_act_prob`` using the pursuit model; a distant
        one takes a uniform wander step with probability
        ``wander_act_prob``; otherwise it stands still this round.
        """
        events: list[Event] = []
        if self.status != "running":
            return events
        pp = self.player.pos
        for e in self.entities:
            if e.kind != "monster" or not e.alive:
                continue
            dist = abs(e.row - pp[0]) + abs(e.col - pp[1])
            if dist <= self.config.aggro_radius:
                if self.rng.random() >= self.config.near_act_prob:
                    continue
                pursue = self.config.pursuit_prob
            else:
                if self.rng.random() >= self.config.wander_act_prob:
                    continue
                pursue = 0.0
            blocked = {m.pos for m in self.alive_monsters() if m.eid != e.eid}
            e.row, e.col = monster_move(e.pos, pp, self.rng, pursue,
                                        self.config.height, self.config.width, blocked)
            if e.pos == pp and self.status == "running":
                self._combat(e, events)
        return events

    def finish_round(self, events: list[Event]) -> StepResult:
        """Round-end check: decide win/loss/timeout and advance the clock."""
        self.turn += 1
        if self.status == "lost":
            return StepResult(-1.0, True, events)
        if not self.target_monster.alive:
            self.status = "won"
            return StepResult(1.0, True, events)
        if self.turn >= self.config.max_turns:
            self.status = "lost"
            events.append(Event("timeout"))
            return StepResult(-1.0, True, events)
        return StepResult(0.0, False, events)

    def step(self, action: str) -> StepResult:
        """One full round: player, monsters, then the round-end check."""
        events = self.player_phase(action)
        events.extend(self.monster_phase())
        return self.finish_round(events)
