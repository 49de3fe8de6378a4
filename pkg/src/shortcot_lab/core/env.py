"""Synthetic text-to-scene task: prompts, vocabularies, scenes and rewards."""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from shortcot_lab.core.errors import ConfigError, ContractError, DataError

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Catalogs
# ---------------------------------------------------------------------------

OBJECT_KINDS: tuple[str, ...] = (
    "apple", "bench", "car", "cat", "clock", "cup",
    "dog", "horse", "kite", "phone", "tree", "vase",
)
COLORS: tuple[str, ...] = (
    "red", "orange", "yellow", "green", "blue", "purple", "black", "white",
)
COUNTS: tuple[int, ...] = (1, 2, 3, 4)
RELATIONS: tuple[str, ...] = ("left_of", "right_of", "above", "below")
CATEGORIES: tuple[str, ...] = (
    "single_object", "two_objects", "counting", "colors", "color_attr", "position",
)

_COUNT_WORDS = ("one", "two", "three", "four")
_RELATION_WORDS = {"left_of": "left", "right_of": "right", "above": "above", "below": "below"}
_FILLER_WORDS: tuple[str, ...] = (
    "detailed", "bright", "soft", "vivid", "scene", "background", "light", "shadow",
    "texture", "realistic", "photo", "high", "quality", "composition", "warm", "cool",
    "smooth", "elegant", "natural", "clear", "sharp", "beautiful", "subtle", "large",
    "glossy", "calm", "rich", "gentle", "crisp", "balanced",
)

GRID_ROWS = 4
GRID_COLS = 4
SCENE_CELLS = GRID_ROWS * GRID_COLS  # M
MAX_INSTANCES = 8
UNSPECIFIED_COLOR = "any"
NO_RELATION = "none"

DETECTION_RANGE = (0.6, 1.0)
ALIGNMENT_RANGE = (0.2, 0.8)
PREFERENCE_RANGE = (0.26, 0.32)
MODEL_SUM_RANGE = (1.06, 2.12)

# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Vocabulary:
    """Token alphabets laid out in one id space: prompt, semantic, scene."""

    prompt_tokens: tuple[str, ...]
    semantic_tokens: tuple[str, ...]
    scene_tokens: tuple[str, ...]
    _index: dict[str, int] = field(default_factory=dict, repr=False, compare=False)
    _names: list[str] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self) -> None:
        names = (*self.prompt_tokens, *self.semantic_tokens, *self.scene_tokens)
        if len(set(names)) != len(names):
            raise ConfigError("Vocabulary token names must be unique.")
        self._names.extend(names)
        self._index.update({name: i for i, name in enumerate(names)})

    @staticmethod
    def build() -> Vocabulary:
        """Construct the vocabulary from the catalogs."""
        prompt = (
            *(f"<cat:{c}>" for c in CATEGORIES),
            *(f"<kind:{k}>" for k in OBJECT_KINDS),
            *(f"<color:{c}>" for c in COLORS),
            f"<color:{UNSPECIFIED_COLOR}>",
            *(f"<count:{n}>" for n in COUNTS),
            *(f"<rel:{r}>" for r in RELATIONS),
            f"<rel:{NO_RELATION}>",
        )
        semantic = (
            *OBJECT_KINDS,
            *COLORS,
            *_COUNT_WORDS,
            *(_RELATION_WORDS[r] for r in RELATIONS),
            *_FILLER_WORDS,
            "<eoc>",
        )
        scene = (
            *(f"{k}/{c}" for k in OBJECT_KINDS for c in COLORS),
            "<empty>",
        )
        return Vocabulary(prompt, semantic, scene)

    # -- sizes and ranges ------------------------------------------------

    @property
    def prompt_size(self) -> int:
        return len(self.prompt_tokens)

    @property
    def semantic_size(self) -> int:
        return len(self.semantic_tokens)

    @property
    def scene_size(self) -> int:
        return len(self.scene_tokens)

    @property
    def total_size(self) -> int:
        return self.prompt_size + self.semantic_size + self.scene_size

    @property
    def semantic_range(self) -> range:
        start = self.prompt_size
        return range(start, start + self.semantic_size)

    @property
    def scene_range(self) -> range:
        start = self.prompt_size + self.semantic_size
        return range(start, start + self.scene_size)

    # -- lookups ----------------------------------------------------------

    def token_id(self, name: str) -> int:
        """Return the global id of a token name. Raises KeyError if unknown."""
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"Unknown token: {name!r}") from None

    def name(self, token: int) -> str:
        return self._names[token]

    @property
    def eoc_id(self) -> int:
        return self.token_id("<eoc>")

    @property
    def empty_id(self) -> int:
        return self.token_id("<empty>")

    @property
    def filler_ids(self) -> tuple[int, ...]:
        return tuple(self.token_id(w) for w in _FILLER_WORDS)

    def is_semantic(self, token: int) -> bool:
        return token in self.semantic_range

    def is_scene(self, token: int) -> bool:
        return token in self.scene_range

    def scene_token(self, kind: str, color: str) -> int:
        return self.token_id(f"{kind}/{color}")

    def scene_cell(self, token: int) -> tuple[int, int] | None:
        """Return ``(kind_index, color_index)`` for an object token, None for empty."""
        local = token - self.scene_range.start
        if local == len(OBJECT_KINDS) * len(COLORS):
            return None
        return divmod(local, len(COLORS))

    def object_word(self, kind: str) -> int:
        return self.token_id(kind)

    def color_word(self, color: str) -> int:
        return self.token_id(color)

    def count_word(self, count: int) -> int:
        return self.token_id(_COUNT_WORDS[count - 1])

    def relation_word(self, relation: str) -> int:
        return self.token_id(_RELATION_WORDS[relation])


VOCAB = Vocabulary.build()

# ---------------------------------------------------------------------------
# PromptSpec
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObjectRequest:
    """One requested object entry: kind, optional color, instance count."""

    kind: str
    color: str | None = None
    count: int = 1


@dataclass(frozen=True)
class PromptSpec:
    """Symbolic scene request that doubles as verifiable ground truth.

    ``id`` does not take part in equality: two specs with the same content
    compare equal.
    """

    id: str = field(compare=False)
    category: str
    objects: tuple[ObjectRequest, ...]
    relation: str | None = None

    @property
    def total_instances(self) -> int:
        return sum(o.count for o in self.objects)


def validate_spec(spec: PromptSpec) -> None:
    """Raise :class:`ContractError` if *spec* breaks a category invariant."""
    if spec.category not in CATEGORIES:
        raise ContractError(f"Unknown category: {spec.category!r}")
    for obj in spec.objects:
        if obj.kind not in OBJECT_KINDS:
            raise ContractError(f"Unknown object kind: {obj.kind!r}")
        if obj.color is not None and obj.color not in COLORS:
            raise ContractError(f"Unknown color: {obj.color!r}")
        if obj.count not in COUNTS:
            raise ContractError(f"Count {obj.count} outside 1..4")
    if spec.relation is not None and spec.relation not in RELATIONS:
        raise ContractError(f"Unknown relation: {spec.relation!r}")

    n = len(spec.objects)
    counts = [o.count for o in spec.objects]
    match spec.category:
        case "single_object" | "colors":
            ok = n == 1 and counts == [1]
        case "counting":
            ok = n == 1 and counts[0] >= 2
        case "two_objects" | "color_attr":
            ok = n == 2 and spec.relation is None
        case "position":
            ok = n == 2 and spec.relation is not None
        case _:
            ok = False
    if spec.category != "position" and spec.relation is not None:
        ok = False
    if not ok:
        raise ContractError(f"Spec {spec.id!r} violates the {spec.category} layout.")
    if spec.total_instances > MAX_INSTANCES:
        raise ContractError(f"Spec {spec.id!r} requests more than {MAX_INSTANCES} instances.")


def generate_prompt(
    category: str,
    rng: np.random.Generator,
    prompt_id: str | None = None,
) -> PromptSpec:
    """Draw a random :class:`PromptSpec` of the given category.

    The result is a pure function of ``(category, rng state)``; when
    *prompt_id* is omitted the id is drawn from *rng* as well.
    """
    if category not in CATEGORIES:
        raise ConfigError(
            f"Unknown prompt category {category!r}; expected one of {', '.join(CATEGORIES)}."
        )
    two = category in ("two_objects", "color_attr", "position")
    kinds = [OBJECT_KINDS[int(i)] for i in rng.choice(len(OBJECT_KINDS), size=2 if two else 1,
                                                       replace=False)]

    def _color() -> str:
        return COLORS[int(rng.integers(len(COLORS)))]

    relation: str | None = None
    match category:
        case "single_object":
            objects = (ObjectRequest(kinds[0]),)
        case "counting":
            objects = (ObjectRequest(kinds[0], count=int(rng.integers(2, 5))),)
        case "colors":
            objects = (ObjectRequest(kinds[0], color=_color()),)
        case "two_objects":
            objects = (ObjectRequest(kinds[0]), ObjectRequest(kinds[1]))
        case "color_attr":
            objects = (
                ObjectRequest(kinds[0], color=_color()),
                ObjectRequest(kinds[1], color=_color()),
            )
        case _:  # position
            objects = (ObjectRequest(kinds[0]), ObjectRequest(kinds[1]))
            relation = RELATIONS[int(rng.integers(len(RELATIONS)))]

    if prompt_id is None:
        prompt_id = f"{category}-{int(rng.integers(0, 2**32)):08x}"
    return PromptSpec(id=prompt_id, category=category, objects=objects, relation=relation)


def describe_prompt(spec: PromptSpec) -> str:
    """Render a short human-readable description, e.g. ``"2 red cup left_of tree"``."""
    parts = [
        " ".join(p for p in (str(o.count) if o.count > 1 else "", o.color or "", o.kind) if p)
        for o in spec.objects
    ]
    if spec.relation is not None:
        return f"{parts[0]} {spec.relation} {parts[1]}"
    return " and ".join(parts)


# ---------------------------------------------------------------------------
# Prompt encoding
# ---------------------------------------------------------------------------


def encode_prompt(spec: PromptSpec) -> tuple[int, ...]:
    """Encode as: category marker, per-object (kind, color, count), relation."""
    tokens = [VOCAB.token_id(f"<cat:{spec.category}>")]
    for obj in spec.objects:
        tokens.append(VOCAB.token_id(f"<kind:{obj.kind}>"))
        tokens.append(VOCAB.token_id(f"<color:{obj.color or UNSPECIFIED_COLOR}>"))
        tokens.append(VOCAB.token_id(f"<count:{obj.count}>"))
    tokens.append(VOCAB.token_id(f"<rel:{spec.relation or NO_RELATION}>"))
    return tuple(tokens)


def decode_prompt(tokens: Sequence[int], prompt_id: str = "") -> PromptSpec:
    """Inverse of :func:`encode_prompt`."""
    names = [VOCAB.name(t) if 0 <= t < VOCAB.prompt_size else "" for t in tokens]
    if len(names) < 2 or (len(names) - 2) % 3 != 0:
        raise ContractError(f"Malformed prompt encoding of length {len(names)}")

    def _field(name: str, prefix: str) -> str:
        if not name.startswith(prefix):
            raise ContractError(f"Expected a {prefix}...> token, got {name!r}")
        return name[len(prefix):-1]

    category = _field(names[0], "<cat:")
    objects = []
    for i in range(1, len(names) - 1, 3):
        color = _field(names[i + 1], "<color:")
        objects.append(
            ObjectRequest(
                kind=_field(names[i], "<kind:"),
                color=None if color == UNSPECIFIED_COLOR else color,
                count=int(_field(names[i + 2], "<count:")),
            )
        )
    relation = _field(names[-1], "<rel:")
    spec = PromptSpec(
        id=prompt_id,
        category=category,
        objects=tuple(objects),
        relation=None if relation == NO_RELATION else relation,
    )
    validate_spec(spec)
    return spec


# ---------------------------------------------------------------------------
# Scene
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Scene:
    """A 4x4 grid of global scene-token ids, row-major."""

    grid: np.ndarray

    def tokens(self) -> tuple[int, ...]:
        return tuple(int(t) for t in self.grid.ravel())

    def non_empty(self) -> int:
        return int(np.count_nonzero(self.grid != VOCAB.empty_id))

    def instances(self, kind: str, color: str | None = None) -> list[tuple[int, int]]:
        """Return (row, col) of every cell holding *kind* (and *color* if given)."""
        k = OBJECT_KINDS.index(kind)
        c = COLORS.index(color) if color is not None else None
        found: list[tuple[int, int]] = []
        for (row, col), token in np.ndenumerate(self.grid):
            cell = VOCAB.scene_cell(int(token))
            if cell is not None and cell[0] == k and (c is None or cell[1] == c):
                found.append((row, col))
        return found


def decode_scene(tokens: Sequence[int]) -> Scene:
    """Fill a :class:`Scene` row-major from exactly M scene tokens."""
    if len(tokens) != SCENE_CELLS:
        raise ContractError(f"Scene needs {SCENE_CELLS} tokens, got {len(tokens)}")
    grid = np.asarray(tokens, dtype=np.int64).reshape(GRID_ROWS, GRID_COLS)
    scene_range = VOCAB.scene_range
    if grid.min() < scene_range.start or grid.max() >= scene_range.stop:
        raise ContractError("Scene token out of range")
    grid.setflags(write=False)
    return Scene(grid)


def reference_layout(spec: PromptSpec) -> tuple[int, ...]:
    """A reward-maximising scene for *spec*.

    Instances are packed from cell 0; vertical relations start the second
    object on the next row. Unspecified colors use a fixed per-kind color.
    """
    def _token(obj: ObjectRequest) -> int:
        color = obj.color or COLORS[OBJECT_KINDS.index(obj.kind) % len(COLORS)]
        return VOCAB.scene_token(obj.kind, color)

    cells = [VOCAB.empty_id] * SCENE_CELLS
    if spec.relation is None:
        placed = [_token(o) for o in spec.objects for _ in range(o.count)]
        cells[: len(placed)] = placed
        return tuple(cells)

    first, second = spec.objects
    lead, trail = (first, second) if spec.relation in ("left_of", "above") else (second, first)
    cells[0] = _token(lead)
    cells[1 if spec.relation in ("left_of", "right_of") else GRID_COLS] = _token(trail)
    return tuple(cells)


# ---------------------------------------------------------------------------
# Reward ensemble
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RewardBreakdown:
    """The three ensemble scores, their sum and the attached length penalty."""

    detection: float
    alignment: float
    preference: float
    model_sum: float
    length_penalty: float = 0.0
    total: float = 0.0


def reward_detection(scene: Scene, spec: PromptSpec) -> float:
    """0.6 + 0.4 x fraction of object entries present with the exact count."""
    hits = [len(scene.instances(o.kind)) == o.count for o in spec.objects]
    return DETECTION_RANGE[0] + 0.4 * (sum(hits) / len(hits))


def _centroid(cells: list[tuple[int, int]]) -> tuple[float, float]:
    rows, cols = zip(*cells, strict=True)
    return sum(rows) / len(rows), sum(cols) / len(cols)


def _relation_holds(scene: Scene, spec: PromptSpec) -> bool:
    a = scene.instances(spec.objects[0].kind)
    b = scene.instances(spec.objects[1].kind)
    if not a or not b:
        return False
    (ra, ca), (rb, cb) = _centroid(a), _centroid(b)
    match spec.relation:
        case "left_of":
            return ca < cb
        case "right_of":
            return ca > cb
        case "above":
            return ra < rb
        case _:
            return ra > rb


def reward_alignment(scene: Scene, spec: PromptSpec) -> float:
    """0.2 + 0.6 x mean of attribute indicators (1 when nothing is specified)."""
    indicators = [
        len(scene.instances(o.kind, o.color)) >= o.count
        for o in spec.objects
        if o.color is not None
    ]
    if spec.relation is not None:
        indicators.append(_relation_holds(scene, spec))
    fraction = sum(indicators) / len(indicators) if indicators else 1.0
    return ALIGNMENT_RANGE[0] + 0.6 * fraction


def reward_preference(scene: Scene) -> float:
    """0.26 + 0.06 x tidiness; every non-empty cell beyond 8 costs 1/8 tidiness."""
    excess = min(max(0, scene.non_empty() - MAX_INSTANCES), MAX_INSTANCES)
    return PREFERENCE_RANGE[0] + 0.06 * (1.0 - excess / MAX_INSTANCES)


def reward_ensemble(scene: Scene, spec: PromptSpec) -> RewardBreakdown:
    """Unweighted sum of the three scorers; the penalty is attached later."""
    detection = reward_detection(scene, spec)
    alignment = reward_alignment(scene, spec)
    preference = reward_preference(scene)
    model_sum = detection + alignment + preference
    return RewardBreakdown(
        detection=detection,
        alignment=alignment,
        preference=preference,
        model_sum=model_sum,
        length_penalty=0.0,
        total=model_sum,
    )


# ---------------------------------------------------------------------------
# Verbose CoT template
# ---------------------------------------------------------------------------

VERBOSE_LENGTH_RANGE = (52, 63)


def _mention(obj: ObjectRequest) -> list[int]:
    words = [VOCAB.count_word(obj.count)]
    if obj.color is not None:
        words.append(VOCAB.color_word(obj.color))
    words.append(VOCAB.object_word(obj.kind))
    return words


def verbose_cot(spec: PromptSpec, rng: np.random.Generator) -> tuple[int, ...]:
    """An over-long CoT: filler padding, each object mentioned twice, end marker.

    The content length (excluding the end marker) is drawn uniformly from
    :data:`VERBOSE_LENGTH_RANGE`.
    """
    fillers = VOCAB.filler_ids

    def _filler(n: int) -> list[int]:
        return [fillers[int(i)] for i in rng.integers(len(fillers), size=n)]

    core: list[int] = []
    for obj in spec.objects:
        core += _mention(obj) + _filler(int(rng.integers(3, 7)))
    if spec.relation is not None:
        core.append(VOCAB.relation_word(spec.relation))
    for obj in spec.objects:
        core += _mention(obj)

    lo, hi = VERBOSE_LENGTH_RANGE
    target = int(rng.integers(lo, hi + 1))
    return (*_filler(max(0, target - len(core))), *core, VOCAB.eoc_id)


# ---------------------------------------------------------------------------
# Benchmark suites
# ---------------------------------------------------------------------------


def benchmark_suite(counts: Mapping[str, int], seed: int) -> list[PromptSpec]:
    """Deterministic suite with ``counts[category]`` prompts per category."""
    unknown = set(counts) - set(CATEGORIES)
    if unknown:
        raise ConfigError(f"Unknown prompt categories: {', '.join(sorted(unknown))}")
    rng = np.random.default_rng(seed)
    suite: list[PromptSpec] = []
    for category in CATEGORIES:
        n = counts.get(category, 0)
        if n < 0:
            raise ContractError(f"Negative prompt count for {category}: {n}")
        suite.extend(generate_prompt(category, rng, f"{category}-{i:04d}") for i in range(n))
    return suite


def uniform_counts(per_category: int) -> dict[str, int]:
    return {c: per_category for c in CATEGORIES}


def format_prompt_line(spec: PromptSpec) -> str:
    """``id|category|kind:color:count,...|relation``"""
    objects = ",".join(f"{o.kind}:{o.color or UNSPECIFIED_COLOR}:{o.count}" for o in spec.objects)
    return f"{spec.id}|{spec.category}|{objects}|{spec.relation or NO_RELATION}"


def parse_prompt_line(line: str) -> PromptSpec:
    fields = line.strip().split("|")
    if len(fields) != 4:
        raise DataError(f"Expected 4 '|'-separated fields, got {len(fields)}: {line!r}")
    prompt_id, category, objects_part, relation = fields
    objects = []
    for triplet in objects_part.split(","):
        parts = triplet.split(":")
        if len(parts) != 3 or not parts[2].isdigit():
            raise DataError(f"Malformed object triplet {triplet!r}")
        kind, color, count = parts
        objects.append(
            ObjectRequest(kind, None if color == UNSPECIFIED_COLOR else color, int(count))
        )
    spec = PromptSpec(
        id=prompt_id,
        category=category,
        objects=tuple(objects),
        relation=None if relation == NO_RELATION else relation,
    )
    try:
        validate_spec(spec)
    except ContractError as exc:
        raise DataError(str(exc)) from None
    return spec


def write_suite(specs: Iterable[PromptSpec], path: str | Path) -> None:
    lines = [format_prompt_line(s) for s in specs]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_suite(path: str | Path) -> list[PromptSpec]:
    """Read a suite file; blank lines and ``#`` comments are skipped."""
    specs = []
    for line in Path(path).read_text().splitlines():
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            specs.append(parse_prompt_line(stripped))
    logger.info("Read %d prompts from %s", len(specs), path)
    return specs
