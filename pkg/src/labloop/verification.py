"""Phase-explicit semantic verification with pluggable verdict backends.

A verification request bundles a condition, its knowledge index and the
check phase (readiness before execution, completion after). The prompt
fusion step renders observation, robot state, condition and retrieved
knowledge into one deterministic prompt whose first line names the phase,
so readiness and completion checks can never be confused.

The normative test backend is a world oracle: it evaluates the condition
against ground-truth predicates and can flip the verdict with a seeded
noise probability (exactly one rng draw per call, so event logs replay).
A remote VLM backend shares the interface and must answer in the
``PASS``/``FAIL`` reply grammar.
"""

from __future__ import annotations

import base64
import io
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Protocol as TypingProtocol

import httpx

from .errors import BackendError, MalformedReply
from .knowledge import KnowledgeBase, RetrievedSet
from .protocol import SubtaskUnit
from .types import Condition, Observation, RobotState
from .world import WorldState, eval_condition


class CheckPhase(str, Enum):
    PRE = "pre"
    POST = "post"


_PHASE_BANNERS = {CheckPhase.PRE: "[READINESS CHECK]", CheckPhase.POST: "[COMPLETION CHECK]"}


@dataclass(frozen=True)
class VerificationRequest:
    condition: Condition
    knowledge_index: str
    phase: CheckPhase
    subtask_id: int

    def __post_init__(self) -> None:
        if not self.knowledge_index:
            raise ValueError("knowledge_index must be non-empty")

    def query_text(self, mode: str = "condition+index") -> str:
        """Retrieval query string; keying is configurable (see mode)."""
        if mode == "condition_only":
            return self.condition.text()
        if mode == "index_only":
            return self.knowledge_index
        return f"{self.condition.text()} {self.knowledge_index}"


@dataclass
class VerificationInput:
    observation_ref: Observation
    robot_state: RobotState
    condition: Condition
    retrieved: RetrievedSet
    phase: CheckPhase
    rendered_prompt: str
    subtask_id: int = 0
    attempt: int = 1


@dataclass(frozen=True)
class Verdict:
    passed: bool
    reason: str
    phase: CheckPhase
    subtask_id: int
    attempt: int = 1

    def __post_init__(self) -> None:
        if not self.passed and not self.reason:
            raise ValueError("failed verdicts must carry a reason")
        if self.attempt < 1:
            raise ValueError("attempt counts from 1")


def build_request(subtask: SubtaskUnit, phase: CheckPhase) -> VerificationRequest:
    condition = subtask.precondition if phase is CheckPhase.PRE else subtask.postcondition
    return VerificationRequest(
        condition=condition,
        knowledge_index=subtask.knowledge_index,
        phase=phase,
        subtask_id=subtask.id,
    )


def fuse_prompt(
    obs: Observation,
    state: RobotState,
    request: VerificationRequest,
    retrieved: RetrievedSet,
    kb: KnowledgeBase | None = None,
    attempt: int = 1,
    allow_empty_retrieval: bool = False,
) -> VerificationInput:
    """Deterministic prompt templating; phase banner comes first.

    Knowledge blocks appear in retrieval order; the observation image is
    referenced symbolically here and attached as base64 on the wire.
    """
    if not retrieved.entries and not allow_empty_retrieval:
        raise ValueError("retrieved set is empty; pass allow_empty_retrieval to permit")
    lines = [
        _PHASE_BANNERS[request.phase],
        f"subtask: {request.subtask_id} attempt: {attempt}",
        f"condition: {request.condition.text()}",
        f"robot: pose={state.pose_tag} arms={state.arm_mode} "
        f"gripper_open={','.join(str(g).lower() for g in state.gripper_open)}",
        f"observation: camera={obs.camera_id} tick={obs.timestamp} (image attached as base64)",
    ]
    for rank, (key, score) in enumerate(retrieved.entries, start=1):
        lines.append(f"knowledge[{rank}] key={key} similarity={score:.4f}")
        item = kb.items.get(key) if kb is not None else None
        if item is not None:
            lines.append(f"  task: {item.task_description}")
            if item.verification_prompt:
                lines.append(f"  check: {item.verification_prompt}")
            if item.success_examples:
                lines.append(f"  success: {' | '.join(item.success_examples)}")
            if item.failure_examples:
                lines.append(f"  failure: {' | '.join(item.failure_examples)}")
    lines.append("Answer PASS or FAIL, then a colon and a short reason.")
    return VerificationInput(
        observation_ref=obs,
        robot_state=state,
        condition=request.condition,
        retrieved=retrieved,
        phase=request.phase,
        rendered_prompt="\n".join(lines),
        subtask_id=request.subtask_id,
        attempt=attempt,
    )


class VerifierBackend(TypingProtocol):
    def assess(self, vinput: VerificationInput) -> Verdict: ...


MALFORMED_REPLY_REASON = "verifier reply malformed"


def verify(vinput: VerificationInput, backend: VerifierBackend) -> Verdict:
    """Obtain a verdict; malformed backend replies become failed verdicts.

    A flaky verifier is recoverable by the scheduler's re-verification
    path, so it must surface as a failure, not a crash.
    """
    try:
        return backend.assess(vinput)
    except MalformedReply:
        return Verdict(
            passed=False,
            reason=MALFORMED_REPLY_REASON,
            phase=vinput.phase,
            subtask_id=vinput.subtask_id,
            attempt=vinput.attempt,
        )


# --- world oracle backend ---------------------------------------------------


def oracle_verify(
    world: WorldState,
    request: VerificationRequest,
    noise_rate: float,
    rng: random.Random,
    attempt: int = 1,
) -> Verdict:
    """Ground-truth verdict with probabilistic flips.

    Draws exactly one rng sample per call — also when noise_rate is 0 —
    so a run's random stream is identical regardless of outcomes.
    """
    if not 0.0 <= noise_rate <= 1.0:
        raise ValueError("noise_rate must be within [0, 1]")
    truth = eval_condition(world, request.condition)
    flip = rng.random() < noise_rate
    passed = truth != flip
    actual = world.predicates.get((request.condition.predicate, request.condition.args), False)
    if truth:
        reason = f"{request.condition.text()}; actual value {actual}"
    else:
        reason = (
            f"{request.condition.predicate}({', '.join(request.condition.args)}) "
            f"expected {request.condition.expected}, actual {actual}"
        )
    if flip:
        reason = f"NOISE: {reason}"
    return Verdict(passed=passed, reason=reason, phase=request.phase, subtask_id=request.subtask_id, attempt=attempt)


@dataclass
class OracleVerifier:
    """Backend adapter around oracle_verify bound to a live world supplier."""

    world_supplier: Callable[[], WorldState]
    noise_rate: float = 0.0
    rng: random.Random = field(default_factory=random.Random)

    def assess(self, vinput: VerificationInput) -> Verdict:
        # the oracle reads ground truth; the knowledge index is irrelevant to it
        request = VerificationRequest(
            condition=vinput.condition,
            knowledge_index="oracle",
            phase=vinput.phase,
            subtask_id=vinput.subtask_id,
        )
        return oracle_verify(self.world_supplier(), request, self.noise_rate, self.rng, attempt=vinput.attempt)


# --- remote VLM backend -----------------------------------------------------

REPLY_GRAMMAR = re.compile(r"^(PASS|FAIL)(: (.*))?$", re.DOTALL)


def parse_reply(reply: str) -> tuple[bool, str]:
    """Parse a PASS/FAIL reply; MalformedReply when the grammar is violated."""
    m = REPLY_GRAMMAR.match(reply.strip())
    if not m:
        raise MalformedReply(f"reply does not match PASS/FAIL grammar: {reply!r}")
    passed = m.group(1) == "PASS"
    reason = (m.group(3) or "").strip()
    if not passed and not reason:
        reason = "verifier gave no reason"
    return passed, reason


def observation_to_base64(obs: Observation) -> str:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(obs.image).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


@dataclass
class RemoteVerifier:
    """HTTP verifier client: POST prompt + image, expect a PASS/FAIL reply."""

    endpoint: str
    timeout: float = 30.0

    def assess(self, vinput: VerificationInput) -> Verdict:
        payload = {
            "prompt": vinput.rendered_prompt,
            "image_b64": observation_to_base64(vinput.observation_ref),
            "phase": vinput.phase.value,
        }
        try:
            response = httpx.post(self.endpoint, json=payload, timeout=self.timeout)
        except httpx.HTTPError as exc:
            raise BackendError(f"remote verifier unreachable: {exc}") from exc
        if response.status_code != 200:
            raise BackendError(f"remote verifier returned HTTP {response.status_code}")
        try:
            reply = response.json()["reply"]
        except (KeyError, ValueError) as exc:
            raise MalformedReply(f"remote verifier reply missing 'reply': {exc}") from exc
        passed, reason = parse_reply(reply)
        return Verdict(
            passed=passed,
            reason=reason or vinput.condition.text(),
            phase=vinput.phase,
            subtask_id=vinput.subtask_id,
            attempt=vinput.attempt,
        )
