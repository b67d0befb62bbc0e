"""Shared domain types: actions, conditions, observations, robot states.

These are the value types exchanged between the parser, the world
simulator, the verifier and the executor, kept in one module so the
subsystems do not import each other for vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class ActionKind(str, Enum):
    """Closed eight-verb action vocabulary every parsed step maps into."""

    OPEN_LID = "OpenLid"
    CLOSE_LID = "CloseLid"
    PLACE = "Place"
    REMOVE = "Remove"
    GRASP = "Grasp"
    MOVE = "Move"
    PRESS_BUTTON = "PressButton"
    WAIT = "Wait"


ALL_ACTION_KINDS: tuple[ActionKind, ...] = tuple(ActionKind)


@dataclass(frozen=True)
class AtomicAction:
    """One vocabulary verb bound to concrete object names.

    ``Place`` and ``Move`` require a target; ``Wait`` takes neither a
    subject nor a target.
    """

    kind: ActionKind
    subject: str | None = None
    target: str | None = None

    def __post_init__(self) -> None:
        if self.kind in (ActionKind.PLACE, ActionKind.MOVE) and not self.target:
            raise ValueError(f"{self.kind.value} requires a non-empty target")
        if self.kind is ActionKind.WAIT and (self.subject or self.target):
            raise ValueError("Wait takes neither subject nor target")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "subject": self.subject, "target": self.target}

    @classmethod
    def from_dict(cls, d: dict) -> "AtomicAction":
        return cls(kind=ActionKind(d["kind"]), subject=d.get("subject"), target=d.get("target"))


@dataclass(frozen=True)
class Condition:
    """Boolean predicate over object names, evaluable against a world."""

    predicate: str
    args: tuple[str, ...]
    expected: bool

    def text(self) -> str:
        return f"{self.predicate}({', '.join(self.args)}) must be {self.expected}"

    def to_dict(self) -> dict:
        return {"predicate": self.predicate, "args": list(self.args), "expected": self.expected}

    @classmethod
    def from_dict(cls, d: dict) -> "Condition":
        return cls(predicate=d["predicate"], args=tuple(d["args"]), expected=bool(d["expected"]))


@dataclass(eq=False)
class Observation:
    """A rendered camera frame plus its logical capture tick."""

    image: np.ndarray  # HxWx3 uint8
    timestamp: int
    camera_id: str = "main"

    def __post_init__(self) -> None:
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError("observation image must be HxWx3")
        if self.image.shape[0] < 1 or self.image.shape[1] < 1:
            raise ValueError("observation image must be at least 1x1")
        if self.image.dtype != np.uint8:
            raise ValueError("observation image must be uint8")


JOINTS_PER_ARM = 6


@dataclass(frozen=True)
class RobotState:
    """Manipulator joint state; 6 joints per arm on the modeled platform."""

    joint_positions: tuple[tuple[float, ...], ...]
    gripper_open: tuple[bool, ...]
    arm_mode: str = "single"  # "single" | "dual"
    pose_tag: str = "home"

    def __post_init__(self) -> None:
        arms = 1 if self.arm_mode == "single" else 2
        if self.arm_mode not in ("single", "dual"):
            raise ValueError(f"unknown arm_mode {self.arm_mode!r}")
        if len(self.joint_positions) != arms or len(self.gripper_open) != arms:
            raise ValueError("joint/gripper vectors must match arm_mode")
        for joints in self.joint_positions:
            if len(joints) != JOINTS_PER_ARM:
                raise ValueError(f"each arm has {JOINTS_PER_ARM} joints")

    @property
    def arms(self) -> int:
        return len(self.joint_positions)

    def to_dict(self) -> dict:
        return {
            "joint_positions": [list(j) for j in self.joint_positions],
            "gripper_open": list(self.gripper_open),
            "arm_mode": self.arm_mode,
            "pose_tag": self.pose_tag,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RobotState":
        return cls(
            joint_positions=tuple(tuple(float(x) for x in arm) for arm in d["joint_positions"]),
            gripper_open=tuple(bool(g) for g in d["gripper_open"]),
            arm_mode=d.get("arm_mode", "single"),
            pose_tag=d.get("pose_tag", "home"),
        )


def home_state(arm_mode: str = "single") -> RobotState:
    arms = 1 if arm_mode == "single" else 2
    return RobotState(
        joint_positions=tuple((0.0,) * JOINTS_PER_ARM for _ in range(arms)),
        gripper_open=tuple(True for _ in range(arms)),
        arm_mode=arm_mode,
        pose_tag="home",
    )
