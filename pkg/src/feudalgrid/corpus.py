"""World dynamics sampling, templated text rendering, and tokenization.

A game's hidden rules are a ``DynamicsAssignment`` (which monster
fights for which team, which item modifier beats which element).  Each
episode draws an ``InstanceSpec`` naming the target/distractor monsters
and items, renders the rules into a shuffled multi-sentence manual plus
a one-line goal through surface templates, and tokenizes everything
against a closed vocabulary.

The module also carries the deterministic inverse: a rule-based parser
that recovers the facts from any rendered manual, used to audit
generated datasets and as an independent planning oracle.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field

from .rng import Rng

__all__ = [
    "PAD_ID", "NULL_ID", "UNK_ID",
    "Vocabulary", "CorpusConfig", "DynamicsAssignment", "InstanceSpec",
    "Manual", "Goal", "TeamFact", "BeatsFact",
    "default_corpus_config", "build_vocabulary", "sample_assignment",
    "sample_instance", "render_manual", "render_goal", "tokenize",
    "pad_name", "combination_count", "parse_manual", "parse_goal_team",
    "solve_instance",
]

PAD_ID = 0
NULL_ID = 1
UNK_ID = 2
PAD_TOKEN = "<pad>"
NULL_TOKEN = "<null>"
UNK_TOKEN = "<unk>"

TEAM_TEMPLATES = (
    "{monster} belongs to team {team}",
    "the {team} team includes {monster}",
    "{monster} is a member of {team}",
)
BEATS_TEMPLATES = (
    "{mod_a} and {mod_b} are effective against {element}",
    "use {mod_a} or {mod_b} to beat {element} monsters",
    "{element} monsters are defeated by {mod_a} and {mod_b}",
)
GOAL_TEMPLATES = (
    "defeat the {team}",
    "beat the {team}",
    "vanquish the {team}",
)
PLAYER_TOKEN = "you"


class Vocabulary:
    """Bijective token/id map with PAD, NULL, UNK pinned to 0, 1, 2."""

    def __init__(self, tokens):
        self.id_to_token = [PAD_TOKEN, NULL_TOKEN, UNK_TOKEN]
        seen = set(self.id_to_token)
        for tok in tokens:
            if tok not in seen:
                seen.add(tok)
                self.id_to_token.append(tok)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.id_to_token[idx]

    def encode(self, words) -> list[int]:
        return [self.id(w) for w in words]

    def decode(self, ids) -> list[str]:
        return [self.token(i) for i in ids]


@dataclass(frozen=True)
class CorpusConfig:
    teams: tuple[str, ...]
    monsters: tuple[str, ...]
    elements: tuple[str, ...]
    modifiers: tuple[str, ...]
    item_nouns: tuple[str, ...]
    name_len: int = 4
    team_templates: tuple[str, ...] = TEAM_TEMPLATES
    beats_templates: tuple[str, ...] = BEATS_TEMPLATES
    goal_templates: tuple[str, ...] = GOAL_TEMPLATES


def default_corpus_config() -> CorpusConfig:
    return CorpusConfig(
        teams=("star alliance", "order of the forest", "rebel enclave"),
        monsters=("goblin", "jaguar", "lich", "zombie", "wolf", "imp", "ghost", "dragon"),
        elements=("fire", "cold", "poison", "lightning"),
        modifiers=("gleaming", "mysterious", "fanatical", "arcane",
                   "blessed", "shimmering", "grandmasters", "soldiers"),
        item_nouns=("sword", "axe", "staff", "bow", "hammer", "dagger", "wand", "spear"),
    )


_WORD_RE = re.compile(r"[a-z0-9]+")


def words_of(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def _template_words(templates) -> set[str]:
    out: set[str] = set()
    for tpl in templates:
        out.update(words_of(re.sub(r"\{[a-z_]+\}", " ", tpl)))
    return out


def build_vocabulary(config: CorpusConfig, extra_tokens=()) -> Vocabulary:
    """Closed vocabulary over the config's names and template words."""
    tokens: list[str] = []
    for name in (config.teams + config.monsters + config.elements
                 + config.modifiers + config.item_nouns):
        tokens.extend(words_of(name))
    tokens.extend(sorted(_template_words(
        config.team_templates + config.beats_templates + config.goal_templates)))
    tokens.append(PLAYER_TOKEN)
    tokens.extend(extra_tokens)
    return Vocabulary(tokens)


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """Lowercase-alphanumeric tokenization; unknown words become UNK."""
    return vocab.encode(words_of(text))


def pad_name(ids, name_len: int) -> list[int]:
    """Right-pad a name's token ids with PAD to exactly ``name_len``."""
    ids = list(ids)
    if len(ids) > name_len:
        raise ValueError(f"name of {len(ids)} tokens exceeds name_len={name_len}")
    return ids + [PAD_ID] * (name_len - len(ids))


# ---------------------------------------------------------------------------
# dynamics


@dataclass(frozen=True)
class DynamicsAssignment:
    """Hidden rules of one game: team membership and modifier strengths."""

    teams: tuple[str, ...]
    monsters: tuple[str, ...]
    elements: tuple[str, ...]
    modifiers: tuple[str, ...]
    team_of: dict[str, str]
    beats: dict[str, str]

    def modifiers_for(self, element: str) -> tuple[str, ...]:
        return tuple(m for m in self.modifiers if self.beats[m] == element)

    def team_members(self, team: str) -> tuple[str, ...]:
        return tuple(m for m in self.monsters if self.team_of[m] == team)


def sample_assignment(rng: Rng, config: CorpusConfig) -> DynamicsAssignment:
    """Uniform team map plus an even modifier-to-element partition."""
    if not config.teams or not config.monsters or not config.elements:
        raise ValueError("config must list at least one team, monster and element")
    if len(config.modifiers) < len(config.elements):
        raise ValueError(
            f"config too small: {len(config.modifiers)} modifiers cannot cover "
            f"{len(config.elements)} elements")
    for name in config.teams + config.monsters + config.elements + config.modifiers:
        if len(words_of(name)) > config.name_len:
            raise ValueError(f"name {name!r} exceeds name_len={config.name_len}")

    team_of = {m: config.teams[rng.integers(0, len(config.teams))]
               for m in config.monsters}
    mods = list(config.modifiers)
    rng.shuffle(mods)
    beats: dict[str, str] = {}
    n_el = len(config.elements)
    for i, mod in enumerate(mods):
        beats[mod] = config.elements[i % n_el]
    beats = {m: beats[m] for m in config.modifiers}
    return DynamicsAssignment(config.teams, config.monsters, config.elements,
                              config.modifiers, team_of, beats)


def _team_map_count(n_teams: int, n_monsters: int) -> int:
    """Team maps leaving at least two teams occupied (one when impossible)."""
    if n_teams == 1:
        return 1
    return n_teams ** n_monsters - n_teams


def _beats_map_count(n_modifiers: int, n_elements: int) -> int:
    """Even partitions of labeled modifiers over labeled elements."""
    base = n_modifiers // n_elements
    extra = n_modifiers % n_elements
    count = 0
    # Sum the multinomial over which elements take the larger share.
    for combo in itertools.combinations(range(n_elements), extra):
        term = math.factorial(n_modifiers)
        for i in range(n_elements):
            term //= math.factorial(base + (1 if i in combo else 0))
        count += term
    return count


def combination_count(config: CorpusConfig) -> int:
    """Closed-form count of distinct game-dynamics combinations.

    Counts (team assignment with >=2 occupied teams) x (even
    modifier-to-element partitions); the default config yields
    16,526,160 distinct rule sets.
    """
    return (_team_map_count(len(config.teams), len(config.monsters))
            * _beats_map_count(len(config.modifiers), len(config.elements)))


@dataclass(frozen=True)
class InstanceSpec:
    """One episode's cast: targets, distractors, and their attributes."""

    target_team: str
    target_monster: str
    target_element: str
    distractor_monster: str
    distractor_team: str
    distractor_element: str
    target_item_modifier: str
    target_item_noun: str
    distractor_item_modifier: str
    distractor_item_noun: str

    @property
    def target_monster_name(self) -> str:
        return f"{self.target_element} {self.target_monster}"

    @property
    def distractor_monster_name(self) -> str:
        return f"{self.distractor_element} {self.distractor_monster}"

    @property
    def target_item_name(self) -> str:
        return f"{self.target_item_modifier} {self.target_item_noun}"

    @property
    def distractor_item_name(self) -> str:
        return f"{self.distractor_item_modifier} {self.distractor_item_noun}"


def sample_instance(assignment: DynamicsAssignment, rng: Rng,
                    item_nouns: tuple[str, ...]) -> InstanceSpec:
    """Draw targets and distractors consistent with the assignment.

    The distractor item's modifier is never effective against the
    target monster's element; the distractor monster is on a different
    team and carries a different element.
    """
    occupied = [t for t in assignment.teams if assignment.team_members(t)]
    valid_targets = [t for t in occupied
                     if any(assignment.team_of[m] != t for m in assignment.monsters)]
    if not valid_targets:
        raise ValueError("assignment leaves no valid target/distractor team split")
    target_team = rng.choice(valid_targets)
    target_monster = rng.choice(assignment.team_members(target_team))
    outsiders = [m for m in assignment.monsters if assignment.team_of[m] != target_team]
    distractor_monster = rng.choice(outsiders)
    target_element = rng.choice(assignment.elements)
    other_elements = [e for e in assignment.elements if e != target_element]
    distractor_element = rng.choice(other_elements) if other_elements else target_element
    effective = assignment.modifiers_for(target_element)
    if not effective:
        raise ValueError(f"no modifier beats element {target_element!r}")
    ineffective = [m for m in assignment.modifiers if assignment.beats[m] != target_element]
    if not ineffective:
        raise ValueError("no ineffective modifier available for the distractor item")
    return InstanceSpec(
        target_team=target_team,
        target_monster=target_monster,
        target_element=target_element,
        distractor_monster=distractor_monster,
        distractor_team=assignment.team_of[distractor_monster],
        distractor_element=distractor_element,
        target_item_modifier=rng.choice(effective),
        target_item_noun=rng.choice(item_nouns),
        distractor_item_modifier=rng.choice(ineffective),
        distractor_item_noun=rng.choice(item_nouns),
    )


# ---------------------------------------------------------------------------
# rendering


@dataclass(frozen=True)
class TeamFact:
    monster: str
    team: str


@dataclass(frozen=True)
class BeatsFact:
    element: str
    modifiers: tuple[str, ...]


@dataclass
class Manual:
    """Rendered manual: tokenized sentences plus the facts they cover."""

    sentences: list[list[int]]
    facts: list[object] = field(default_factory=list)

    def flat_tokens(self) -> list[int]:
        out: list[int] = []
        for s in self.sentences:
            out.extend(s)
        return out


@dataclass
class Goal:
    tokens: list[int]
    target_team: str


def _fill(template: str, **slots) -> str:
    return template.format(**slots)


def render_manual(assignment: DynamicsAssignment, instance: InstanceSpec,
                  rng: Rng, vocab: Vocabulary, config: CorpusConfig,
                  force_template: int | None = None) -> Manual:
    """Render team facts for both cast monsters and every beats fact.

    Each fact goes through one of the surface templates chosen by the
    rng (``force_template`` pins the choice for golden tests) and the
    sentence order is shuffled.  Beyond the two facts that identify the
    target, the remaining sentences act as distractors.
    """
    rendered: list[tuple[str, object]] = []
    for monster in (instance.target_monster, instance.distractor_monster):
        idx = force_template if force_template is not None \
            else rng.integers(0, len(config.team_templates))
        team = assignment.team_of[monster]
        rendered.append((_fill(config.team_templates[idx], monster=monster, team=team),
                         TeamFact(monster, team)))
    for element in assignment.elements:
        mods = list(assignment.modifiers_for(element))
        if len(mods) < 2:
            mods = mods * 2  # degenerate configs reuse the single modifier
        idx = force_template if force_template is not None \
            else rng.integers(0, len(config.beats_templates))
        pair = mods[:2] if force_template is not None else None
        if pair is None:
            pair = [rng.choice(mods)]
            rest = [m for m in mods if m != pair[0]] or mods
            pair.append(rng.choice(rest))
        rendered.append((_fill(config.beats_templates[idx], mod_a=pair[0],
                               mod_b=pair[1], element=element),
                         BeatsFact(element, tuple(pair))))
    if force_template is None:
        rng.shuffle(rendered)
    sentences = [tokenize(text, vocab) for text, _ in rendered]
    return Manual(sentences=sentences, facts=[fact for _, fact in rendered])


def render_goal(target_team: str, rng: Rng, vocab: Vocabulary,
                config: CorpusConfig, force_template: int | None = None) -> Goal:
    idx = force_template if force_template is not None \
        else rng.integers(0, len(config.goal_templates))
    text = _fill(config.goal_templates[idx], team=target_team)
    return Goal(tokens=tokenize(text, vocab), target_team=target_team)


# ---------------------------------------------------------------------------
# inverse parsing


def _template_regex(template: str, slot_patterns: dict[str, str]) -> re.Pattern:
    parts = []
    pos = 0
    for m in re.finditer(r"\{([a-z_]+)\}", template):
        fixed = " ".join(words_of(template[pos:m.start()]))
        if fixed:
            parts.append(re.escape(fixed))
        parts.append(f"(?P<{m.group(1)}>{slot_patterns[m.group(1)]})")
        pos = m.end()
    tail = " ".join(words_of(template[pos:]))
    if tail:
        parts.append(re.escape(tail))
    return re.compile("^" + r"\ ".join(parts) + "$")


_SLOT_PATTERNS = {
    "monster": r"[a-z0-9]+",
    "team": r"[a-z0-9 ]+?",
    "mod_a": r"[a-z0-9]+",
    "mod_b": r"[a-z0-9]+",
    "element": r"[a-z0-9]+",
}


def parse_manual(manual: Manual, vocab: Vocabulary, config: CorpusConfig) -> list[object]:
    """Recover the facts of a rendered manual, template by template.

    Deterministic rule-based inverse of ``render_manual``: each sentence
    must match exactly one template with captures drawn from the known
    name lists, otherwise parsing fails loudly.
    """
    team_res = [_template_regex(t, _SLOT_PATTERNS) for t in config.team_templates]
    beats_res = [_template_regex(t, _SLOT_PATTERNS) for t in config.beats_templates]
    facts: list[object] = []
    for sent in manual.sentences:
        text = " ".join(vocab.decode(sent))
        fact = None
        for regex in team_res:
            m = regex.match(text)
            if m and m.group("monster") in config.monsters and m.group("team") in config.teams:
                fact = TeamFact(m.group("monster"), m.group("team"))
                break
        if fact is None:
            for regex in beats_res:
                m = regex.match(text)
                if (m and m.group("mod_a") in config.modifiers
                        and m.group("mod_b") in config.modifiers
                        and m.group("element") in config.elements):
                    fact = BeatsFact(m.group("element"), (m.group("mod_a"), m.group("mod_b")))
                    break
        if fact is None:
            raise ValueError(f"unparseable manual sentence: {text!r}")
        facts.append(fact)
    return facts


def parse_goal_team(goal_tokens, vocab: Vocabulary, config: CorpusConfig) -> str:
    """The unique team whose name appears contiguously in the goal."""
    text_words = vocab.decode(goal_tokens)
    matches = []
    for team in config.teams:
        tw = words_of(team)
        for i in range(len(text_words) - len(tw) + 1):
            if text_words[i:i + len(tw)] == tw:
                matches.append(team)
                break
    if len(matches) != 1:
        raise ValueError(f"goal names {len(matches)} teams: {' '.join(text_words)!r}")
    return matches[0]


def solve_instance(goal_tokens, manual: Manual, object_names: list[list[int]],
                   vocab: Vocabulary, config: CorpusConfig) -> tuple[int, int]:
    """Rule-based solver: indices of the target monster and target item.

    Reads the goal's team, finds the listed object whose monster belongs
    to that team, reads its element off the object name, and picks the
    item whose modifier the manual declares effective against it.
    Independent of any learned component.
    """
    team = parse_goal_team(goal_tokens, vocab, config)
    facts = parse_manual(manual, vocab, config)
    team_of = {f.monster: f.team for f in facts if isinstance(f, TeamFact)}
    effective: dict[str, set[str]] = {}
    for f in facts:
        if isinstance(f, BeatsFact):
            effective.setdefault(f.element, set()).update(f.modifiers)

    monster_idx = item_idx = None
    target_element = None
    names = [vocab.decode(n) for n in object_names]
    for i, name_words in enumerate(names):
        content = [w for w in name_words if w != PAD_TOKEN]
        if len(content) == 2 and content[1] in config.monsters:
            if team_of.get(content[1]) == team:
                if monster_idx is not None:
                    raise ValueError("multiple monsters on the goal team")
                monster_idx = i
                target_element = content[0]
    if monster_idx is None or target_element is None:
        raise ValueError("no listed monster belongs to the goal team")
    for i, name_words in enumerate(names):
        content = [w for w in name_words if w != PAD_TOKEN]
        if len(content) == 2 and content[0] in config.modifiers \
                and content[1] in config.item_nouns:
            if content[0] in effective.get(target_element, set()):
                if item_idx is not None:
                    raise ValueError("multiple effective items listed")
                item_idx = i
    if item_idx is None:
        raise ValueError(f"no listed item beats element {target_element!r}")
    return monster_idx, item_idx
