"""Predicate-level bench simulator.

The bench is modeled STRIPS-style: a closed predicate vocabulary over
named objects, action effects that flip predicates, and a per-step
Bernoulli success draw. No geometry or physics — verification conditions
are semantic state checks, so predicates are the whole ground truth.

Rendering produces a deterministic schematic pixmap (fixed colors per
object kind, marker strips for predicate state) so observation bytes are
reproducible and diffable.
"""

from __future__ import annotations

import copy
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IoError, PreconditionViolated, SchemaError, UnknownPredicate
from .types import ActionKind, AtomicAction, Condition, Observation

# predicate name -> arity; the vocabulary is closed
PREDICATE_VOCABULARY: dict[str, int] = {
    "lid_open": 1,
    "in": 2,
    "cap_on": 1,
    "cap_tight": 1,
    "contains_liquid": 1,
    "discarded": 1,
    "held": 2,
}

OBJECT_KINDS = (
    "centrifuge",
    "water_bath",
    "tube_15ml",
    "cryotube_1_8ml",
    "tube_rack_orange",
    "cryo_rack_red",
    "float",
    "serum_bottle",
    "trash_bin",
)

GRIPPER = "gripper"

PredKey = tuple[str, tuple[str, ...]]


@dataclass(frozen=True)
class LabObject:
    name: str
    kind: str
    transparent: bool = False

    def __post_init__(self) -> None:
        if self.kind not in OBJECT_KINDS:
            raise SchemaError(f"unknown object kind {self.kind!r}")


@dataclass
class StepOutcome:
    succeeded: bool
    failure_mode: str | None = None
    rng_draws: int = 1

    def __post_init__(self) -> None:
        if self.succeeded and self.failure_mode is not None:
            raise ValueError("failure_mode only set on failed steps")
        if not self.succeeded and self.failure_mode is None:
            raise ValueError("failed steps must carry a failure_mode")


@dataclass
class WorldState:
    """Value-typed bench state: objects, predicate map, logical tick."""

    objects: dict[str, LabObject] = field(default_factory=dict)
    predicates: dict[PredKey, bool] = field(default_factory=dict)
    tick: int = 0

    def copy(self) -> "WorldState":
        return WorldState(objects=dict(self.objects), predicates=dict(self.predicates), tick=self.tick)

    def get(self, predicate: str, *args: str) -> bool:
        return self.predicates.get((predicate, args), False)

    def set(self, predicate: str, args: tuple[str, ...], value: bool) -> None:
        self.predicates[(predicate, args)] = value

    def kind_of(self, name: str | None) -> str | None:
        if name is None:
            return None
        obj = self.objects.get(name)
        return obj.kind if obj else None

    def true_predicates(self) -> list[PredKey]:
        return sorted(k for k, v in self.predicates.items() if v)

    def to_dict(self) -> dict:
        return {
            "objects": [{"name": o.name, "kind": o.kind, "transparent": o.transparent} for o in self.objects.values()],
            "predicates": [
                {"predicate": p, "args": list(args), "value": v} for (p, args), v in sorted(self.predicates.items())
            ],
            "tick": self.tick,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorldState":
        objects = {
            o["name"]: LabObject(name=o["name"], kind=o["kind"], transparent=bool(o.get("transparent", False)))
            for o in d.get("objects", [])
        }
        world = cls(objects=objects, tick=int(d.get("tick", 0)))
        for entry in d.get("predicates", []):
            _check_predicate(entry["predicate"], tuple(entry["args"]))
            world.set(entry["predicate"], tuple(entry["args"]), bool(entry["value"]))
        return world


@dataclass
class Scenario:
    """Named initial world plus its protocol text and goal conditions."""

    name: str
    initial_world: WorldState
    protocol_text: str
    expected_final: list[Condition] = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        try:
            world = WorldState.from_dict(d)
            return cls(
                name=d["name"],
                initial_world=world,
                protocol_text=d.get("protocol", ""),
                expected_final=[Condition.from_dict(c) for c in d.get("expected_final", [])],
            )
        except KeyError as exc:
            raise SchemaError(f"scenario missing field {exc}") from exc


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read scenario {path}: {exc}") from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"scenario {path} is not valid JSON: {exc}") from exc
    return Scenario.from_dict(data)


def init_world(scenario: Scenario) -> WorldState:
    """Deep-copy the scenario's initial world and reset the tick."""
    world = copy.deepcopy(scenario.initial_world)
    world.tick = 0
    return world


def _check_predicate(predicate: str, args: tuple[str, ...]) -> None:
    arity = PREDICATE_VOCABULARY.get(predicate)
    if arity is None:
        raise UnknownPredicate(f"unknown predicate {predicate!r}")
    if len(args) != arity:
        raise UnknownPredicate(f"{predicate} takes {arity} argument(s), got {len(args)}")


def eval_condition(world: WorldState, cond: Condition) -> bool:
    """Closed-world truth: absent predicate entries evaluate to False."""
    _check_predicate(cond.predicate, cond.args)
    return world.predicates.get((cond.predicate, cond.args), False) == cond.expected


# --- action effects -------------------------------------------------------

# deterministic failure label per action kind (log readability only)
_FAILURE_MODES = {
    ActionKind.GRASP: "grasp_slip",
    ActionKind.PLACE: "misplacement",
    ActionKind.MOVE: "misplacement",
    ActionKind.REMOVE: "grasp_slip",
}
_DEFAULT_FAILURE_MODE = "collision_abort"

CAP_SUBJECT = "cap"


def _is_trash(world: WorldState, name: str) -> bool:
    return world.kind_of(name) == "trash_bin" or name == "trash_bin"


def _is_pour_target(world: WorldState, name: str) -> bool:
    return world.kind_of(name) == "serum_bottle" or name == "serum_bottle"


def _clear_in(world: WorldState, name: str) -> None:
    for key in [k for k in world.predicates if k[0] == "in" and k[1][0] == name]:
        world.predicates[key] = False


def _clear_held(world: WorldState, name: str) -> None:
    for key in [k for k in world.predicates if k[0] == "held" and k[1][0] == name]:
        world.predicates[key] = False


def _require(ok: bool, message: str) -> None:
    if not ok:
        raise PreconditionViolated(message)


def _check_hard_precondition(world: WorldState, action: AtomicAction) -> None:
    kind, subj, target = action.kind, action.subject, action.target
    if kind is ActionKind.OPEN_LID:
        _require(not world.get("lid_open", subj), f"lid of {subj} is already open")
    elif kind is ActionKind.CLOSE_LID:
        _require(world.get("lid_open", subj), f"lid of {subj} is already closed")
    elif kind is ActionKind.PLACE:
        _require(not world.get("discarded", subj), f"{subj} was already discarded")
    elif kind is ActionKind.REMOVE and target is not None:
        _require(world.get("in", subj, target), f"{subj} is not in {target}")
    elif kind is ActionKind.GRASP:
        if subj == CAP_SUBJECT and target is not None:
            _require(world.get("cap_on", target), f"{target} has no cap to twist")
        else:
            _require(not world.get("discarded", subj), f"{subj} was already discarded")
    elif kind is ActionKind.MOVE:
        if _is_pour_target(world, action.target):
            _require(world.get("contains_liquid", subj), f"{subj} holds no liquid to pour")
        else:
            _require(not world.get("discarded", subj), f"{subj} was already discarded")
    # PressButton / Wait admit any world


def _apply_effect(world: WorldState, action: AtomicAction) -> None:
    kind, subj, target = action.kind, action.subject, action.target
    if kind is ActionKind.OPEN_LID:
        world.set("lid_open", (subj,), True)
    elif kind is ActionKind.CLOSE_LID:
        world.set("lid_open", (subj,), False)
    elif kind is ActionKind.PLACE:
        _clear_in(world, subj)
        _clear_held(world, subj)
        if _is_trash(world, target):
            world.set("discarded", (subj,), True)
        else:
            world.set("in", (subj, target), True)
    elif kind is ActionKind.REMOVE:
        if target is not None:
            world.set("in", (subj, target), False)
        world.set("held", (subj, GRIPPER), True)
    elif kind is ActionKind.GRASP:
        if subj == CAP_SUBJECT and target is not None:
            # twist: direction follows from the current state, so one action
            # form serves both loosening and tightening
            world.set("cap_tight", (target,), not world.get("cap_tight", target))
        else:
            world.set("held", (subj, GRIPPER), True)
    elif kind is ActionKind.MOVE:
        if _is_pour_target(world, target):
            world.set("contains_liquid", (subj,), False)
            world.set("contains_liquid", (target,), True)
        else:
            _clear_in(world, subj)
            world.set("in", (subj, target), True)
    # PressButton and Wait leave predicates untouched


def apply_action(
    world: WorldState,
    action: AtomicAction,
    success_prob: float,
    rng: random.Random,
) -> tuple[WorldState, StepOutcome]:
    """One stochastic world transition; draws exactly one rng sample.

    The input world is never mutated. Failed steps advance the tick but
    leave every predicate unchanged.
    """
    _check_hard_precondition(world, action)
    new_world = world.copy()
    new_world.tick += 1
    succeeded = rng.random() < success_prob
    if succeeded:
        _apply_effect(new_world, action)
        outcome = StepOutcome(succeeded=True, failure_mode=None, rng_draws=1)
    else:
        mode = _FAILURE_MODES.get(action.kind, _DEFAULT_FAILURE_MODE)
        outcome = StepOutcome(succeeded=False, failure_mode=mode, rng_draws=1)
    return new_world, outcome


# --- schematic rendering ---------------------------------------------------

IMAGE_SIZE = 128
_BLOCK = 26
_STRIDE = 32
_MARGIN = 3
_COLS = 4

_BACKGROUND = (236, 236, 236)
_KIND_COLORS: dict[str, tuple[int, int, int]] = {
    "centrifuge": (84, 90, 120),
    "water_bath": (70, 120, 170),
    "tube_15ml": (205, 222, 239),
    "cryotube_1_8ml": (216, 201, 239),
    "tube_rack_orange": (238, 142, 44),
    "cryo_rack_red": (198, 44, 44),
    "float": (247, 247, 208),
    "serum_bottle": (180, 219, 199),
    "trash_bin": (96, 96, 96),
}


def render_observation(world: WorldState, camera: str = "main") -> Observation:
    """Deterministic 128x128 schematic of the bench.

    Objects are drawn in name order (one slot each); predicate state is
    encoded as fixed marker strips so that any predicate difference is a
    pixel difference.
    """
    img = np.empty((IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.uint8)
    img[:, :] = _BACKGROUND
    names = sorted(world.objects)
    slots = {name: i for i, name in enumerate(names)}
    for name, i in slots.items():
        row, col = divmod(i, _COLS)
        y0 = _MARGIN + row * _STRIDE
        x0 = _MARGIN + col * _STRIDE
        if y0 + _BLOCK > IMAGE_SIZE or x0 + _BLOCK > IMAGE_SIZE:
            continue  # beyond the grid; scenario worlds stay under 16 objects
        color = np.array(_KIND_COLORS[world.objects[name].kind], dtype=np.uint8)
        if world.get("discarded", name):
            color = color // 3
        img[y0 : y0 + _BLOCK, x0 : x0 + _BLOCK] = color
        if world.get("lid_open", name):
            img[y0 : y0 + 3, x0 : x0 + _BLOCK] = (255, 255, 255)
        if any(v and k[0] == "held" and k[1][0] == name for k, v in world.predicates.items()):
            img[y0 : y0 + _BLOCK, x0 : x0 + 3] = (20, 20, 20)
        if world.get("cap_on", name):
            shade = (10, 10, 10) if world.get("cap_tight", name) else (150, 150, 150)
            img[y0 : y0 + 6, x0 + _BLOCK - 6 : x0 + _BLOCK] = shade
        if world.get("contains_liquid", name):
            img[y0 + _BLOCK - 4 : y0 + _BLOCK, x0 : x0 + _BLOCK] = (40, 90, 200)
    # inset markers for containment, drawn after all blocks
    for (pred, args), value in sorted(world.predicates.items()):
        if pred != "in" or not value:
            continue
        inner, outer = args
        if outer not in slots:
            continue
        row, col = divmod(slots[outer], _COLS)
        y0 = _MARGIN + row * _STRIDE + (_BLOCK - 8) // 2
        x0 = _MARGIN + col * _STRIDE + (_BLOCK - 8) // 2
        inner_kind = world.kind_of(inner)
        inner_color = _KIND_COLORS.get(inner_kind, (0, 0, 0)) if inner_kind else (0, 0, 0)
        img[y0 : y0 + 8, x0 : x0 + 8] = inner_color
    return Observation(image=img, timestamp=world.tick, camera_id=camera)
