"""Action-chunk execution seam with a scripted world-sim backend.

The executor turns a verified subtask into a horizon-H chunk of low-level
action frames and a world transition. The scripted backend is the
normative test implementation: its joint waypoints are fixed constants
per action kind (they give chunks, logs and the training loss realistic
shapes but carry no kinematic meaning). A remote policy client shares the
interface for driving an actual policy server.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Protocol as TypingProtocol

import httpx

from .errors import BackendError, ParseError, UnknownInstruction, UnmappableAction
from .protocol import SubtaskUnit, _match_segment
from .types import ActionKind, AtomicAction, Observation, RobotState
from .world import StepOutcome, WorldState, apply_action, render_observation

DEFAULT_HORIZON = 50

Frame = tuple[float, ...]


@dataclass
class ActionChunk:
    """Horizon-H sequence of action frames (joint targets + gripper)."""

    actions: tuple[Frame, ...]
    horizon: int
    instruction_echo: str

    def __post_init__(self) -> None:
        if self.horizon < 1 or len(self.actions) != self.horizon:
            raise ValueError("chunk length must equal its horizon (>= 1)")

    def frame_width(self) -> int:
        return len(self.actions[0])


@dataclass
class ExecutionResult:
    outcome: StepOutcome
    world_after: WorldState
    observation_after: Observation
    robot_state_after: RobotState
    chunk: ActionChunk


class ExecutorBackend(TypingProtocol):
    def predict(self, obs: Observation, state: RobotState, instruction: str, horizon: int) -> ActionChunk: ...


# per-kind waypoint scripts: (6 joint targets, gripper command) per frame
_BASE_WAYPOINTS: dict[ActionKind, tuple[Frame, ...]] = {
    ActionKind.OPEN_LID: (
        (0.0, -0.4, 0.6, 0.0, 0.3, 0.0, 1.0),
        (0.1, -0.2, 0.8, 0.0, 0.5, 0.0, 0.0),
        (0.1, 0.3, 0.8, 0.0, 0.9, 0.0, 0.0),
        (0.0, 0.5, 0.6, 0.0, 1.1, 0.0, 1.0),
    ),
    ActionKind.CLOSE_LID: (
        (0.0, 0.5, 0.6, 0.0, 1.1, 0.0, 1.0),
        (0.1, 0.3, 0.8, 0.0, 0.9, 0.0, 0.0),
        (0.1, -0.2, 0.8, 0.0, 0.5, 0.0, 0.0),
        (0.0, -0.4, 0.6, 0.0, 0.3, 0.0, 1.0),
    ),
    ActionKind.PLACE: (
        (0.2, -0.3, 0.5, 0.1, 0.4, 0.0, 0.0),
        (0.4, -0.1, 0.7, 0.1, 0.6, 0.0, 0.0),
        (0.4, 0.2, 0.9, 0.1, 0.8, 0.0, 1.0),
    ),
    ActionKind.REMOVE: (
        (0.4, 0.2, 0.9, 0.1, 0.8, 0.0, 1.0),
        (0.4, -0.1, 0.7, 0.1, 0.6, 0.0, 0.0),
        (0.2, -0.3, 0.5, 0.1, 0.4, 0.0, 0.0),
    ),
    ActionKind.GRASP: (
        (0.3, -0.2, 0.6, 0.0, 0.5, 0.0, 1.0),
        (0.3, 0.0, 0.7, 0.0, 0.6, 0.0, 0.0),
    ),
    ActionKind.MOVE: (
        (0.3, 0.0, 0.7, 0.0, 0.6, 0.0, 0.0),
        (0.0, 0.1, 0.7, 0.3, 0.6, 0.2, 0.0),
        (-0.3, 0.0, 0.7, 0.5, 0.6, 0.4, 0.0),
    ),
    ActionKind.PRESS_BUTTON: (
        (0.0, -0.5, 1.0, 0.0, 0.5, 0.0, 0.0),
        (0.0, -0.5, 1.2, 0.0, 0.5, 0.0, 0.0),
        (0.0, -0.5, 1.0, 0.0, 0.5, 0.0, 0.0),
    ),
    ActionKind.WAIT: ((0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0),),
}


def instruction_to_kind(instruction: str) -> ActionKind:
    """Resolve an instruction to its action kind via the parser's matcher."""
    try:
        return _match_segment(instruction).action.kind
    except (UnmappableAction, ParseError) as exc:
        raise UnknownInstruction(f"no scripted chunk for {instruction!r}: {exc}") from exc


@dataclass
class ScriptedExecutor:
    """Deterministic canned-chunk backend; pads/truncates to the horizon."""

    arm_mode: str = "single"

    def predict(self, obs: Observation, state: RobotState, instruction: str, horizon: int) -> ActionChunk:
        kind = instruction_to_kind(instruction)
        waypoints = _BASE_WAYPOINTS[kind]
        frames = [waypoints[min(i, len(waypoints) - 1)] for i in range(horizon)]
        if state.arm_mode == "dual":
            frames = [f + f for f in frames]
        return ActionChunk(actions=tuple(frames), horizon=horizon, instruction_echo=instruction)


@dataclass
class RemotePolicyClient:
    """HTTP policy endpoint client mirroring the scripted interface."""

    endpoint: str
    timeout: float = 30.0

    def predict(self, obs: Observation, state: RobotState, instruction: str, horizon: int) -> ActionChunk:
        from .verification import observation_to_base64

        payload = {
            "image_b64": observation_to_base64(obs),
            "state": [x for arm in state.joint_positions for x in arm],
            "instruction": instruction,
            "horizon": horizon,
        }
        try:
            response = httpx.post(self.endpoint, json=payload, timeout=self.timeout)
        except httpx.HTTPError as exc:
            raise BackendError(f"remote policy unreachable: {exc}") from exc
        if response.status_code != 200:
            raise BackendError(f"remote policy returned HTTP {response.status_code}")
        try:
            actions = tuple(tuple(float(x) for x in frame) for frame in response.json()["actions"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"remote policy reply malformed: {exc}") from exc
        if len(actions) != horizon:
            raise BackendError(f"remote policy returned {len(actions)} frames, wanted {horizon}")
        return ActionChunk(actions=actions, horizon=horizon, instruction_echo=instruction)


def predict_chunk(
    backend: ExecutorBackend,
    obs: Observation,
    state: RobotState,
    instruction: str,
    horizon: int = DEFAULT_HORIZON,
) -> ActionChunk:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    return backend.predict(obs, state, instruction, horizon)


@dataclass
class SimulationConfig:
    """Per-action-kind success probabilities plus the chunk horizon."""

    success_prob: dict[str, float] = field(default_factory=lambda: {"default": 1.0})
    horizon: int = DEFAULT_HORIZON

    def prob_for(self, kind: ActionKind) -> float:
        return float(self.success_prob.get(kind.value, self.success_prob.get("default", 1.0)))


def execute(
    subtask: SubtaskUnit,
    world: WorldState,
    state: RobotState,
    backend: ExecutorBackend,
    sim_cfg: SimulationConfig,
    rng: random.Random,
) -> ExecutionResult:
    """Predict a chunk, apply the subtask's action, render the new frame.

    The caller is expected to hold a passed readiness verdict; that
    contract is not re-checked here. The input world is never mutated.
    """
    obs = render_observation(world)
    chunk = predict_chunk(backend, obs, state, subtask.instruction, sim_cfg.horizon)
    world_after, outcome = apply_action(world, subtask.action, sim_cfg.prob_for(subtask.action.kind), rng)
    final_frame = chunk.actions[-1]
    arms = state.arms
    per_arm = len(final_frame) // arms
    gripper_open = tuple(final_frame[(i + 1) * per_arm - 1] >= 0.5 for i in range(arms))
    joints = tuple(tuple(final_frame[i * per_arm : (i + 1) * per_arm - 1]) for i in range(arms))
    if any(len(j) != 6 for j in joints):  # non-scripted frame widths: keep prior joints
        joints = state.joint_positions
    state_after = RobotState(
        joint_positions=joints,
        gripper_open=gripper_open,
        arm_mode=state.arm_mode,
        pose_tag=f"after_{subtask.action.kind.value.lower()}",
    )
    return ExecutionResult(
        outcome=outcome,
        world_after=world_after,
        observation_after=render_observation(world_after),
        robot_state_after=state_after,
        chunk=chunk,
    )
