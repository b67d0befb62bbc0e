"""Rule-based protocol parsing: free text in, ordered subtask units out.

The reference parser is a deterministic keyword/lexicon engine covering
the bench-task corpus (and close paraphrases): it classifies the intent,
segments the text into one-action clauses, maps each clause into the
closed action vocabulary, resolves object names through the asset
lexicon, and synthesizes machine-checkable pre/postconditions from the
action's effect semantics. A remote backend implementing the same
contract can be swapped in for LLM-backed parsing; its output is
validated against the same plan schema.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import httpx

from .errors import BackendError, ParseError, SchemaError, UnmappableAction
from .types import ActionKind, AtomicAction, Condition
from .world import PREDICATE_VOCABULARY, GRIPPER, WorldState, eval_condition

INTENT_CATEGORIES = ("loading", "unloading", "sorting", "disposal", "twisting", "pouring", "other")

CAP_SUBJECT = "cap"
BIMANUAL_TAG = "capability:bimanual"


@dataclass(frozen=True)
class Protocol:
    """Raw protocol text plus the identifier of where it came from."""

    text: str
    source_id: str = "inline"

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ParseError("protocol text is empty")


@dataclass(frozen=True)
class Intent:
    goal: str
    category: str

    def __post_init__(self) -> None:
        if self.category not in INTENT_CATEGORIES:
            raise ValueError(f"unknown intent category {self.category!r}")


@dataclass
class EntitySet:
    equipment: list[str] = field(default_factory=list)
    consumables: list[str] = field(default_factory=list)
    targets: list[str] = field(default_factory=list)
    locations: list[str] = field(default_factory=list)

    def add(self, bucket: str, name: str) -> None:
        names = getattr(self, bucket)
        name = name.strip().lower()
        if name and name not in names:
            names.append(name)

    def is_empty(self) -> bool:
        return not (self.equipment or self.consumables or self.targets or self.locations)

    def to_dict(self) -> dict:
        return {
            "equipment": list(self.equipment),
            "consumables": list(self.consumables),
            "targets": list(self.targets),
            "locations": list(self.locations),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EntitySet":
        return cls(
            equipment=list(d.get("equipment", [])),
            consumables=list(d.get("consumables", [])),
            targets=list(d.get("targets", [])),
            locations=list(d.get("locations", [])),
        )


@dataclass
class SubtaskUnit:
    id: int
    instruction: str
    precondition: Condition
    postcondition: Condition
    knowledge_index: str
    action: AtomicAction
    entities: EntitySet = field(default_factory=EntitySet)

    def __post_init__(self) -> None:
        if self.id < 1:
            raise ValueError("subtask ids start at 1")
        if not self.instruction.strip():
            raise ValueError("instruction must be non-empty")


@dataclass
class TaskPlan:
    intent: Intent
    subtasks: list[SubtaskUnit]
    raw_parser_output: str = field(default="", compare=False)
    capabilities: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        ids = [s.id for s in self.subtasks]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate subtask ids")

    def subtask(self, subtask_id: int) -> SubtaskUnit:
        for s in self.subtasks:
            if s.id == subtask_id:
                return s
        raise KeyError(subtask_id)


@dataclass
class ParserConfig:
    backend: str = "rule_based"  # "rule_based" | "remote"
    prompt_set: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_PROMPT_SET))
    remote_endpoint: str | None = None
    action_vocabulary: tuple[ActionKind, ...] = tuple(ActionKind)

    def __post_init__(self) -> None:
        if self.backend not in ("rule_based", "remote"):
            raise ValueError(f"unknown parser backend {self.backend!r}")
        if self.backend == "remote" and not self.remote_endpoint:
            raise ValueError("remote parser backend requires remote_endpoint")


# --- asset lexicon ----------------------------------------------------------


@dataclass(frozen=True)
class Asset:
    entity: str  # canonical display name, e.g. "centrifuge tube"
    object_name: str  # world object name, e.g. "tube_15ml_1"
    category: str  # "equipment" | "consumable"
    lidded: bool = False
    container: bool = False


_CENTRIFUGE = Asset("centrifuge", "centrifuge", "equipment", lidded=True, container=True)
_WATER_BATH = Asset("water bath", "water_bath", "equipment", lidded=True, container=True)
_TUBE = Asset("centrifuge tube", "tube_15ml_1", "consumable")
_CRYOTUBE = Asset("cryotube", "cryotube_1", "consumable")
_ORANGE_RACK = Asset("centrifuge tube rack", "tube_rack_orange", "equipment", container=True)
_RED_RACK = Asset("cryotube rack", "cryo_rack_red", "equipment", container=True)
_FLOAT = Asset("water bath float", "float", "consumable")
_SERUM_BOTTLE = Asset("serum bottle", "serum_bottle", "equipment", container=True)
_TRASH = Asset("trash bin", "trash_bin", "equipment", container=True)

ASSETS = (
    _CENTRIFUGE,
    _WATER_BATH,
    _TUBE,
    _CRYOTUBE,
    _ORANGE_RACK,
    _RED_RACK,
    _FLOAT,
    _SERUM_BOTTLE,
    _TRASH,
)

# phrase -> (asset, is_cap_reference); matched longest-first
_LEXICON: dict[str, tuple[Asset, bool]] = {
    "orange centrifuge tube rack": (_ORANGE_RACK, False),
    "centrifuge tube rack": (_ORANGE_RACK, False),
    "orange tube rack": (_ORANGE_RACK, False),
    "orange rack": (_ORANGE_RACK, False),
    "tube rack": (_ORANGE_RACK, False),
    "red cryotube rack": (_RED_RACK, False),
    "cryotube rack": (_RED_RACK, False),
    "cryo rack": (_RED_RACK, False),
    "red rack": (_RED_RACK, False),
    "centrifuge tube cap": (_TUBE, True),
    "tube cap": (_TUBE, True),
    "cap": (_TUBE, True),
    "15 ml centrifuge tube": (_TUBE, False),
    "centrifuge tube": (_TUBE, False),
    "15 ml tube": (_TUBE, False),
    "1.8 ml cryotube": (_CRYOTUBE, False),
    "cryotube": (_CRYOTUBE, False),
    "cryo tube": (_CRYOTUBE, False),
    "by 80c centrifuge": (_CENTRIFUGE, False),
    "centrifuge": (_CENTRIFUGE, False),
    "water bath float": (_FLOAT, False),
    "float": (_FLOAT, False),
    "water bath": (_WATER_BATH, False),
    "waterbath": (_WATER_BATH, False),
    "waste liquid bottle": (_SERUM_BOTTLE, False),
    "25 ml serum bottle": (_SERUM_BOTTLE, False),
    "serum bottle": (_SERUM_BOTTLE, False),
    "waste bottle": (_SERUM_BOTTLE, False),
    "trash can": (_TRASH, False),
    "trash bin": (_TRASH, False),
    "garbage bottle": (_TRASH, False),
    "garbage bin": (_TRASH, False),
    "garbage can": (_TRASH, False),
    "trash": (_TRASH, False),
    "garbage": (_TRASH, False),
    "tube": (_TUBE, False),
}

_LEXICON_RE = re.compile(
    "|".join(rf"\b{re.escape(p)}\b" for p in sorted(_LEXICON, key=len, reverse=True))
)


def _normalize(text: str) -> str:
    return re.sub(r"\s+", " ", text.lower().replace("-", " ")).strip()


@dataclass(frozen=True)
class _AssetMatch:
    asset: Asset
    is_cap: bool
    start: int


def _find_assets(segment_norm: str) -> list[_AssetMatch]:
    return [
        _AssetMatch(asset=_LEXICON[m.group(0)][0], is_cap=_LEXICON[m.group(0)][1], start=m.start())
        for m in _LEXICON_RE.finditer(segment_norm)
    ]


# --- segmentation -----------------------------------------------------------

_VERB_WORDS = {
    "open", "unlock", "close", "shut",
    "place", "insert", "put", "load", "set", "drop",
    "remove", "take", "extract", "withdraw", "unload",
    "discard", "dispose", "throw",
    "grasp", "grab", "pick",
    "move", "bring", "transfer", "carry",
    "press", "push",
    "wait", "pause",
    "unscrew", "loosen", "tighten", "screw", "twist",
    "pour", "empty",
}

# a period splits sentences only when not a decimal point ("1.8 mL")
_SENTENCE_RE = re.compile(r"\.(?=\s|$)|[;!?\n]+")
_COORDINATOR_RE = re.compile(r",\s*and\s+then\s+|,\s*then\s+|,\s*and\s+|\s+and\s+then\s+|\s+then\s+|,\s*", re.IGNORECASE)


def segment_text(text: str) -> list[str]:
    """Split into one-action clauses.

    Splits on sentence punctuation and on the coordinators "then",
    "and then", ", and" — plus a bare comma when the next word is a known
    action verb (covers "open the lid, insert the tube, close the lid").
    """
    segments: list[str] = []
    for sentence in _SENTENCE_RE.split(text):
        if not sentence.strip():
            continue
        cursor = 0
        for m in _COORDINATOR_RE.finditer(sentence):
            tail = sentence[m.end():].lstrip()
            first_word = re.match(r"[A-Za-z]+", tail)
            if first_word and first_word.group(0).lower() in _VERB_WORDS:
                piece = sentence[cursor:m.start()].strip()
                if piece:
                    segments.append(piece)
                cursor = m.end()
        piece = sentence[cursor:].strip()
        if piece:
            segments.append(piece)
    return segments


# --- segment -> action ------------------------------------------------------


@dataclass
class ParseContext:
    """Cross-segment anaphora state ("close the lid", "insert the tube")."""

    last_lidded: str | None = None  # object name of most recent lidded equipment
    last_container: str | None = None  # object name of most recent container


@dataclass
class SegmentMatch:
    action: AtomicAction
    direction: str | None = None  # "loosen" | "tighten" for twist verbs
    assets: list[_AssetMatch] = field(default_factory=list)
    subject_asset: Asset | None = None
    target_asset: Asset | None = None


_PREP_RE = re.compile(r"\b(into|onto|to|in|on)\b")
_FROM_RE = re.compile(r"\bfrom\b")


def _first_asset(matches: list[_AssetMatch], *, after: int = -1, category: str | None = None,
                 lidded: bool | None = None, exclude: Asset | None = None) -> Asset | None:
    for m in matches:
        if m.start <= after:
            continue
        if category is not None and m.asset.category != category:
            continue
        if lidded is not None and m.asset.lidded != lidded:
            continue
        if exclude is not None and m.asset is exclude:
            continue
        return m.asset
    return None


def _asset_after_prep(seg: str, matches: list[_AssetMatch], prep_re: re.Pattern) -> Asset | None:
    m = prep_re.search(seg)
    if not m:
        return None
    return _first_asset(matches, after=m.start())


def _match_segment(segment: str, ctx: ParseContext | None = None) -> SegmentMatch:
    """Map one clause to an atomic action; raises UnmappableAction otherwise."""
    ctx = ctx or ParseContext()
    seg = _normalize(segment)
    if not seg:
        raise UnmappableAction("empty segment")
    assets = _find_assets(seg)
    cap_match = next((m for m in assets if m.is_cap), None)
    plain = [m for m in assets if not m.is_cap]

    def lidded_subject() -> str:
        asset = _first_asset(assets, lidded=True)
        if asset is not None:
            return asset.object_name
        if ctx.last_lidded and ("lid" in seg.split() or not plain):
            return ctx.last_lidded
        raise UnmappableAction(f"cannot resolve which lid in {segment!r}")

    if re.search(r"\b(unscrew|loosen)\b", seg) or re.search(r"\btwist\b.*\bopen\b", seg):
        tube = cap_match.asset if cap_match else (_first_asset(plain, category="consumable") or _TUBE)
        action = AtomicAction(ActionKind.GRASP, subject=CAP_SUBJECT, target=tube.object_name)
        return SegmentMatch(action, direction="loosen", assets=assets, subject_asset=tube)
    if re.search(r"\b(tighten|screw|twist)\b", seg):
        tube = cap_match.asset if cap_match else (_first_asset(plain, category="consumable") or _TUBE)
        action = AtomicAction(ActionKind.GRASP, subject=CAP_SUBJECT, target=tube.object_name)
        return SegmentMatch(action, direction="tighten", assets=assets, subject_asset=tube)
    if re.search(r"\bpour\b", seg):
        from_pos = _FROM_RE.search(seg)
        subject = (_first_asset(plain, after=from_pos.start()) if from_pos else None) or _first_asset(
            plain, category="consumable"
        ) or _TUBE
        target = _asset_after_prep(seg, [m for m in plain if m.asset is not subject], _PREP_RE) or _SERUM_BOTTLE
        action = AtomicAction(ActionKind.MOVE, subject=subject.object_name, target=target.object_name)
        return SegmentMatch(action, assets=assets, subject_asset=subject, target_asset=target)
    if re.search(r"\b(discard|dispose|throw)\b", seg):
        subject = _first_asset(plain, category="consumable") or _first_asset(plain, exclude=_TRASH)
        if subject is None:
            raise UnmappableAction(f"nothing to discard in {segment!r}")
        action = AtomicAction(ActionKind.PLACE, subject=subject.object_name, target=_TRASH.object_name)
        return SegmentMatch(action, assets=assets, subject_asset=subject, target_asset=_TRASH)
    if re.search(r"\b(wait|pause)\b", seg):
        return SegmentMatch(AtomicAction(ActionKind.WAIT), assets=assets)
    if re.search(r"\b(open|unlock)\b", seg):
        subject = lidded_subject()
        return SegmentMatch(AtomicAction(ActionKind.OPEN_LID, subject=subject), assets=assets)
    if re.search(r"\b(close|shut)\b", seg):
        subject = lidded_subject()
        return SegmentMatch(AtomicAction(ActionKind.CLOSE_LID, subject=subject), assets=assets)
    if re.search(r"\b(remove|extract|withdraw|unload)\b", seg) or re.search(r"\btake\b", seg):
        from_pos = _FROM_RE.search(seg)
        target = _first_asset(plain, after=from_pos.start()) if from_pos else None
        subject = _first_asset(plain, exclude=target) if target else _first_asset(plain)
        if subject is None:
            raise UnmappableAction(f"nothing to remove in {segment!r}")
        action = AtomicAction(
            ActionKind.REMOVE, subject=subject.object_name, target=target.object_name if target else None
        )
        return SegmentMatch(action, assets=assets, subject_asset=subject, target_asset=target)
    if re.search(r"\b(place|insert|put|load|set|drop)\b", seg):
        prep = _PREP_RE.search(seg)
        target = _first_asset(plain, after=prep.start()) if prep else None
        subject = _first_asset(plain, exclude=target)
        if subject is None:
            raise UnmappableAction(f"nothing to place in {segment!r}")
        if target is None:
            if ctx.last_container is None:
                raise UnmappableAction(f"cannot resolve placement target in {segment!r}")
            target_name = ctx.last_container
            target_asset = next((a for a in ASSETS if a.object_name == target_name), None)
        else:
            target_name = target.object_name
            target_asset = target
        action = AtomicAction(ActionKind.PLACE, subject=subject.object_name, target=target_name)
        return SegmentMatch(action, assets=assets, subject_asset=subject, target_asset=target_asset)
    if re.search(r"\b(grasp|grab|pick)\b", seg):
        subject = _first_asset(plain)
        if subject is None:
            raise UnmappableAction(f"nothing to grasp in {segment!r}")
        return SegmentMatch(AtomicAction(ActionKind.GRASP, subject=subject.object_name), assets=assets,
                            subject_asset=subject)
    if re.search(r"\b(move|bring|transfer|carry)\b", seg):
        prep = _PREP_RE.search(seg)
        target = _first_asset(plain, after=prep.start()) if prep else None
        subject = _first_asset(plain, exclude=target)
        if subject is None or target is None:
            raise UnmappableAction(f"cannot resolve move endpoints in {segment!r}")
        action = AtomicAction(ActionKind.MOVE, subject=subject.object_name, target=target.object_name)
        return SegmentMatch(action, assets=assets, subject_asset=subject, target_asset=target)
    if re.search(r"\b(press|push)\b", seg):
        subject = _first_asset(plain)
        if subject is not None:
            name = subject.object_name
        else:
            trailing = re.sub(r"^.*?\b(press|push)\b", "", seg).strip()
            trailing = re.sub(r"\bthe\b|\ba\b|\ban\b", "", trailing).strip()
            name = re.sub(r"\s+", "_", trailing) or "button"
        return SegmentMatch(AtomicAction(ActionKind.PRESS_BUTTON, subject=name), assets=assets)
    raise UnmappableAction(f"no action verb recognized in {segment!r}")


def map_action(predicate: str, vocabulary: tuple[ActionKind, ...] | list[ActionKind] = tuple(ActionKind)) -> AtomicAction:
    """Map a verb phrase into the closed action set or raise.

    Never invents an out-of-vocabulary kind: a phrase mapping to a kind
    that was excluded from ``vocabulary`` raises UnmappableAction.
    """
    if not predicate.strip():
        raise UnmappableAction("empty verb phrase")
    match = _match_segment(predicate)
    if match.action.kind not in tuple(vocabulary):
        raise UnmappableAction(f"{match.action.kind.value} is outside the configured vocabulary")
    return match.action


# --- condition synthesis ----------------------------------------------------

_VACUOUS_ARG = "workbench"


def _vacuous(subject: str | None) -> Condition:
    return Condition("discarded", (subject or _VACUOUS_ARG,), False)


def _is_lidded_name(name: str | None) -> bool:
    return any(a.object_name == name and a.lidded for a in ASSETS)


def _is_trash_name(name: str | None) -> bool:
    return name == _TRASH.object_name


def _is_bottle_name(name: str | None) -> bool:
    return name == _SERUM_BOTTLE.object_name


def synthesize_conditions(match: SegmentMatch) -> tuple[Condition, Condition]:
    """Pre/postcondition pair implied by an action's effect semantics."""
    action, direction = match.action, match.direction
    kind, subj, target = action.kind, action.subject, action.target
    if kind is ActionKind.OPEN_LID:
        return Condition("lid_open", (subj,), False), Condition("lid_open", (subj,), True)
    if kind is ActionKind.CLOSE_LID:
        return Condition("lid_open", (subj,), True), Condition("lid_open", (subj,), False)
    if kind is ActionKind.PLACE:
        if _is_trash_name(target):
            return Condition("discarded", (subj,), False), Condition("discarded", (subj,), True)
        if _is_lidded_name(target):
            return Condition("lid_open", (target,), True), Condition("in", (subj, target), True)
        return Condition("in", (subj, target), False), Condition("in", (subj, target), True)
    if kind is ActionKind.REMOVE:
        if target is None:
            return Condition("held", (subj, GRIPPER), False), Condition("held", (subj, GRIPPER), True)
        if _is_lidded_name(target):
            return Condition("lid_open", (target,), True), Condition("in", (subj, target), False)
        return Condition("in", (subj, target), True), Condition("in", (subj, target), False)
    if kind is ActionKind.GRASP:
        if subj == CAP_SUBJECT and target is not None:
            tight_before = direction == "loosen"
            return (
                Condition("cap_tight", (target,), tight_before),
                Condition("cap_tight", (target,), not tight_before),
            )
        return Condition("held", (subj, GRIPPER), False), Condition("held", (subj, GRIPPER), True)
    if kind is ActionKind.MOVE:
        if _is_bottle_name(target):
            return Condition("contains_liquid", (subj,), True), Condition("contains_liquid", (target,), True)
        return Condition("in", (subj, target), False), Condition("in", (subj, target), True)
    # PressButton / Wait: vacuously true conditions keep the loop uniform
    return _vacuous(subj), _vacuous(subj)


# --- canonical task table ---------------------------------------------------


@dataclass(frozen=True)
class TaskRow:
    """One bench-corpus task: action signature, knowledge key, entities."""

    key: str
    kind: ActionKind
    subject: str
    target: str | None
    direction: str | None
    consumables: tuple[str, ...]
    equipment: tuple[str, ...]
    bimanual: bool = False


TASK_ROWS: tuple[TaskRow, ...] = (
    TaskRow("open_centrifuge_lid", ActionKind.OPEN_LID, "centrifuge", None, None, (), ("centrifuge",)),
    TaskRow("close_centrifuge_lid", ActionKind.CLOSE_LID, "centrifuge", None, None, (), ("centrifuge",)),
    TaskRow(
        "insert_tube_to_centrifuge", ActionKind.PLACE, "tube_15ml_1", "centrifuge", None,
        ("centrifuge tube",), ("centrifuge", "centrifuge tube rack"),
    ),
    TaskRow(
        "remove_tube_from_centrifuge", ActionKind.REMOVE, "tube_15ml_1", "centrifuge", None,
        ("centrifuge tube",), ("centrifuge", "centrifuge tube rack"),
    ),
    TaskRow(
        "place_centrifuge_tube_to_orange_rack", ActionKind.PLACE, "tube_15ml_1", "tube_rack_orange", None,
        ("centrifuge tube",), ("centrifuge tube rack",),
    ),
    TaskRow(
        "place_cryotube_to_red_rack", ActionKind.PLACE, "cryotube_1", "cryo_rack_red", None,
        ("cryotube",), ("cryotube rack",),
    ),
    TaskRow(
        "discard_centrifuge_tube", ActionKind.PLACE, "tube_15ml_1", "trash_bin", None,
        ("centrifuge tube",), ("centrifuge tube rack", "trash bin"),
    ),
    TaskRow(
        "discard_cryotube", ActionKind.PLACE, "cryotube_1", "trash_bin", None,
        ("cryotube",), ("cryotube rack", "trash bin"),
    ),
    TaskRow("open_water_bath_lid", ActionKind.OPEN_LID, "water_bath", None, None, (), ("water bath",)),
    TaskRow("close_water_bath_lid", ActionKind.CLOSE_LID, "water_bath", None, None, (), ("water bath",)),
    TaskRow(
        "place_float_to_water_bath", ActionKind.PLACE, "float", "water_bath", None,
        ("water bath float",), ("water bath",),
    ),
    TaskRow(
        "remove_float_from_water_bath", ActionKind.REMOVE, "float", "water_bath", None,
        ("water bath float",), ("water bath",),
    ),
    TaskRow(
        "unscrew_tube_cap", ActionKind.GRASP, CAP_SUBJECT, "tube_15ml_1", "loosen",
        ("centrifuge tube",), ("centrifuge tube rack",), bimanual=True,
    ),
    TaskRow(
        "tighten_tube_cap", ActionKind.GRASP, CAP_SUBJECT, "tube_15ml_1", "tighten",
        ("centrifuge tube",), ("centrifuge tube rack",), bimanual=True,
    ),
    TaskRow(
        "pour_waste_liquid", ActionKind.MOVE, "tube_15ml_1", "serum_bottle", None,
        ("centrifuge tube",), ("centrifuge tube rack", "serum bottle"), bimanual=True,
    ),
)


def _find_task_row(match: SegmentMatch) -> TaskRow | None:
    a = match.action
    for row in TASK_ROWS:
        if (row.kind, row.subject, row.target, row.direction) == (a.kind, a.subject, a.target, match.direction):
            return row
    return None


def _generic_knowledge_key(kind: ActionKind) -> str:
    snake = re.sub(r"(?<!^)([A-Z])", r"_\1", kind.value).lower()
    return f"action_{snake}"


# --- intent and entities ----------------------------------------------------

_INTENT_RULES: tuple[tuple[str, re.Pattern], ...] = (
    ("disposal", re.compile(r"\b(discard|dispose|throw)\b")),
    ("sorting", re.compile(r"\b(tidy|sort)\b|\b(place|put)\b[^.;!?]*\brack\b")),
    ("twisting", re.compile(r"\b(unscrew|loosen|tighten|screw|twist)\b")),
    ("pouring", re.compile(r"\bpour\b")),
    ("unloading", re.compile(r"\b(remove|extract|withdraw|unload)\b|\btake\b[^.;!?]*\bout\b")),
    ("loading", re.compile(r"\b(insert|load)\b|\b(place|put)\b[^.;!?]*\b(into|in|to)\b")),
)


def extract_intent(protocol: Protocol, cfg: ParserConfig | None = None) -> Intent:
    """Classify the high-level objective by keyword table."""
    text = _normalize(protocol.text)
    # decimal points ("1.8 ml") would otherwise stop within-sentence spans
    text = re.sub(r"(?<=\d)\.(?=\d)", " ", text)
    if not text:
        raise ParseError("protocol text is empty")
    goal = re.sub(r"\s+", " ", protocol.text).strip()
    for category, pattern in _INTENT_RULES:
        if pattern.search(text):
            return Intent(goal=goal, category=category)
    if any(w in _VERB_WORDS for w in re.findall(r"[a-z']+", text)):
        return Intent(goal=goal, category="other")
    raise ParseError("no category keyword and no action verb recognized")


def _segment_entities(match: SegmentMatch) -> EntitySet:
    entities = EntitySet()
    for m in match.assets:
        bucket = "consumables" if m.asset.category == "consumable" else "equipment"
        entities.add(bucket, m.asset.entity)
    if match.subject_asset is not None:
        entities.add("targets", match.subject_asset.entity)
    if match.target_asset is not None:
        entities.add("locations", match.target_asset.entity)
    row = _find_task_row(match)
    if row is not None:
        for name in row.consumables:
            entities.add("consumables", name)
        for name in row.equipment:
            entities.add("equipment", name)
    return entities


def extract_entities(protocol: Protocol, intent: Intent | None = None, cfg: ParserConfig | None = None) -> EntitySet:
    """Lexicon-matched entities over the whole protocol; unmatched nouns drop."""
    entities = EntitySet()
    ctx = ParseContext()
    for segment in segment_text(protocol.text):
        try:
            match = _match_segment(segment, ctx)
        except UnmappableAction:
            for m in _find_assets(_normalize(segment)):
                bucket = "consumables" if m.asset.category == "consumable" else "equipment"
                entities.add(bucket, m.asset.entity)
            continue
        seg_entities = _segment_entities(match)
        for bucket in ("equipment", "consumables", "targets", "locations"):
            for name in getattr(seg_entities, bucket):
                entities.add(bucket, name)
        _update_context(ctx, match)
    return entities


def _update_context(ctx: ParseContext, match: SegmentMatch) -> None:
    for m in match.assets:
        if m.asset.lidded:
            ctx.last_lidded = m.asset.object_name
        if m.asset.container:
            ctx.last_container = m.asset.object_name
    if match.action.kind in (ActionKind.OPEN_LID, ActionKind.CLOSE_LID) and match.action.subject:
        ctx.last_lidded = match.action.subject
        ctx.last_container = match.action.subject


# --- plan assembly ----------------------------------------------------------


def parse_protocol(protocol: Protocol, cfg: ParserConfig | None = None) -> TaskPlan:
    """Protocol text -> validated TaskPlan (deterministic for rule_based)."""
    cfg = cfg or ParserConfig()
    if cfg.backend == "remote":
        return _parse_remote(protocol, cfg)
    intent = extract_intent(protocol, cfg)
    segments = segment_text(protocol.text)
    if not segments:
        raise ParseError("protocol contains no actionable sentence")
    ctx = ParseContext()
    subtasks: list[SubtaskUnit] = []
    capabilities: set[str] = set()
    for idx, segment in enumerate(segments, start=1):
        match = _match_segment(segment, ctx)
        if match.action.kind not in cfg.action_vocabulary:
            raise UnmappableAction(
                f"{match.action.kind.value} is outside the configured vocabulary"
            )
        pre, post = synthesize_conditions(match)
        row = _find_task_row(match)
        if row is not None and row.bimanual:
            capabilities.add(BIMANUAL_TAG)
        subtasks.append(
            SubtaskUnit(
                id=idx,
                instruction=segment,
                precondition=pre,
                postcondition=post,
                knowledge_index=row.key if row else _generic_knowledge_key(match.action.kind),
                action=match.action,
                entities=_segment_entities(match),
            )
        )
        _update_context(ctx, match)
    plan = TaskPlan(intent=intent, subtasks=subtasks, capabilities=sorted(capabilities))
    plan.raw_parser_output = plan_to_json(plan)
    return plan


# --- JSON schema ------------------------------------------------------------


def plan_to_dict(plan: TaskPlan) -> dict:
    return {
        "intent": {"goal": plan.intent.goal, "category": plan.intent.category},
        "subtasks": [
            {
                "id": s.id,
                "instruction": s.instruction,
                "action": s.action.to_dict(),
                "precondition": s.precondition.to_dict(),
                "postcondition": s.postcondition.to_dict(),
                "knowledge_index": s.knowledge_index,
                "entities": s.entities.to_dict(),
            }
            for s in plan.subtasks
        ],
        "capabilities": list(plan.capabilities),
    }


def plan_to_json(plan: TaskPlan) -> str:
    return json.dumps(plan_to_dict(plan), indent=2, sort_keys=False)


def plan_from_dict(data: dict, raw: str = "") -> TaskPlan:
    try:
        intent = Intent(goal=data["intent"]["goal"], category=data["intent"]["category"])
        subtasks = []
        for entry in data["subtasks"]:
            subtasks.append(
                SubtaskUnit(
                    id=int(entry["id"]),
                    instruction=entry["instruction"],
                    precondition=Condition.from_dict(entry["precondition"]),
                    postcondition=Condition.from_dict(entry["postcondition"]),
                    knowledge_index=entry["knowledge_index"],
                    action=AtomicAction.from_dict(entry["action"]),
                    entities=EntitySet.from_dict(entry.get("entities", {})),
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"plan document violates the task-plan schema: {exc}") from exc
    ids = [s.id for s in subtasks]
    if ids != list(range(1, len(ids) + 1)):
        raise SchemaError("subtask ids must be consecutive from 1")
    return TaskPlan(
        intent=intent,
        subtasks=subtasks,
        raw_parser_output=raw,
        capabilities=list(data.get("capabilities", [])),
    )


def plan_from_json(text: str) -> TaskPlan:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"plan document is not valid JSON: {exc}") from exc
    return plan_from_dict(data, raw=text)


# --- remote backend ---------------------------------------------------------

DEFAULT_PROMPT_SET: dict[str, str] = {
    "parse": (
        "You are a protocol-parsing assistant for a bench manipulation robot.\n"
        "1. Role: read the procedure below and plan robot-executable steps.\n"
        "2. Objective: state the high-level goal as one of loading, unloading, "
        "sorting, disposal, twisting, pouring, other.\n"
        "3. Entities: list equipment, consumables, targets and locations that the "
        "text references; do not invent objects.\n"
        "4. Actions: every step must use exactly one of OpenLid, CloseLid, Place, "
        "Remove, Grasp, Move, PressButton, Wait.\n"
        "5. Granularity: one atomic manipulation per step, ordered as written.\n"
        "6. Output: a single JSON document with fields intent{goal,category} and "
        "subtasks[{id,instruction,action{kind,subject,target},precondition,"
        "postcondition,knowledge_index,entities}] and nothing else.\n"
    )
}


def _parse_remote(protocol: Protocol, cfg: ParserConfig) -> TaskPlan:
    prompt = cfg.prompt_set.get("parse", DEFAULT_PROMPT_SET["parse"])
    try:
        response = httpx.post(
            cfg.remote_endpoint,
            json={"prompt": prompt, "protocol": protocol.text},
            timeout=30.0,
        )
    except httpx.HTTPError as exc:
        raise BackendError(f"remote parser unreachable: {exc}") from exc
    if response.status_code != 200:
        raise BackendError(f"remote parser returned HTTP {response.status_code}")
    return plan_from_json(response.text)


# --- validation -------------------------------------------------------------


@dataclass(frozen=True)
class ValidationIssue:
    kind: str  # "dangling_knowledge_index" | "unknown_predicate" | "ordering_warning" | "empty_entities" | "empty_plan"
    subtask_id: int | None
    message: str


@dataclass
class ValidationReport:
    issues: list[ValidationIssue] = field(default_factory=list)

    @property
    def fatal(self) -> list[ValidationIssue]:
        return [i for i in self.issues if i.kind in ("dangling_knowledge_index", "unknown_predicate", "empty_plan")]

    @property
    def warnings(self) -> list[ValidationIssue]:
        return [i for i in self.issues if i not in self.fatal]

    @property
    def ok(self) -> bool:
        return not self.fatal


def validate_plan(plan: TaskPlan, kb, world: WorldState) -> ValidationReport:
    """Check knowledge keys, predicate vocabulary, and subtask ordering.

    Ordering problems are warnings, not errors: the scheduler can reorder
    at run time when a pending subtask establishes a failed precondition.
    """
    report = ValidationReport()
    if not plan.subtasks:
        report.issues.append(ValidationIssue("empty_plan", None, "plan has no subtasks"))
        return report
    established: list[Condition] = []
    for s in plan.subtasks:
        if kb is not None and s.knowledge_index not in kb.items:
            report.issues.append(
                ValidationIssue("dangling_knowledge_index", s.id, f"knowledge index {s.knowledge_index!r} not in base")
            )
        bad_predicate = False
        for cond in (s.precondition, s.postcondition):
            if cond.predicate not in PREDICATE_VOCABULARY or len(cond.args) != PREDICATE_VOCABULARY[cond.predicate]:
                report.issues.append(
                    ValidationIssue("unknown_predicate", s.id, f"predicate {cond.predicate!r} with {len(cond.args)} args")
                )
                bad_predicate = True
        if not bad_predicate:
            satisfied = eval_condition(world, s.precondition) or s.precondition in established
            if not satisfied:
                report.issues.append(
                    ValidationIssue(
                        "ordering_warning",
                        s.id,
                        f"precondition {s.precondition.text()} neither holds initially "
                        f"nor is established by an earlier subtask",
                    )
                )
            established.append(s.postcondition)
        if s.entities.is_empty() and s.action.kind is not ActionKind.WAIT:
            report.issues.append(ValidationIssue("empty_entities", s.id, "no entities recognized"))
    return report
