"""Closed-loop run scheduling: verify, execute, re-verify, recover.

Each subtask passes through a readiness check, execution and a completion
check. Failures route through a fixed decision policy:

* failed readiness — if a pending subtask's postcondition equals the
  failed precondition, that subtask is pulled to the front (one reorder
  per subtask, which prevents ping-pong on cyclic plans); otherwise a
  second verification is tried; if that also fails, the run escalates.
* failed completion — retry while the subtask's failure count stays
  within max_retries, then escalate.

Escalations resolve per the configured intervention mode: abort, one
forced retry, or suspension until a human submits a decision. Every step
appends exactly one event to the run record, which is the only output
channel and replays byte-identically for a fixed config and seed.
"""

from __future__ import annotations

import json
import random
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .config import SystemConfig
from .errors import (
    InvalidReorderTarget,
    NoSuspendedSubtask,
    PreconditionViolated,
    ValidationFatal,
)
from .events import Event, RunRecord
from .executor import ExecutorBackend, ScriptedExecutor, SimulationConfig, execute
from .knowledge import KnowledgeBase, load_default_knowledge_base, load_knowledge_base, retrieve_topk
from .protocol import ParserConfig, Protocol, TaskPlan, parse_protocol, plan_to_dict, plan_from_dict, validate_plan
from .types import Condition, RobotState
from .verification import (
    CheckPhase,
    OracleVerifier,
    RemoteVerifier,
    Verdict,
    VerifierBackend,
    build_request,
    fuse_prompt,
    verify,
)
from .world import Scenario, WorldState, init_world, render_observation

STATUSES = ("pending", "pre_check", "executing", "post_check", "done", "suspended", "aborted")

Observer = Callable[[str, Event], None]


@dataclass
class SchedulingDecision:
    kind: str  # proceed | reorder | reverify | retry | escalate | abort
    rationale: str
    front_id: int | None = None  # reorder only


@dataclass
class BackendBundle:
    verifier: VerifierBackend
    executor: ExecutorBackend
    kb: KnowledgeBase


@dataclass
class SystemState:
    """All mutable state of one run; owns its world, rng and event log."""

    run_id: str
    config: SystemConfig
    plan: TaskPlan
    world: WorldState
    robot: RobotState
    kb: KnowledgeBase
    scenario_name: str
    expected_final: list[Condition] = field(default_factory=list)
    subtask_status: dict[int, str] = field(default_factory=dict)
    retry_counts: dict[int, int] = field(default_factory=dict)
    pre_attempts: dict[int, int] = field(default_factory=dict)
    reorder_used: set[int] = field(default_factory=set)
    auto_retry_used: set[int] = field(default_factory=set)
    order: list[int] = field(default_factory=list)
    rng: random.Random = field(default_factory=random.Random)
    record: RunRecord = field(default_factory=lambda: RunRecord(run_id=""))

    def append_event(self, kind: str, payload: dict, observer: Observer | None = None) -> Event:
        event = self.record.append(kind, tick=self.world.tick, payload=payload)
        if observer is not None:
            observer(self.run_id, event)
        return event

    def pending_ids(self) -> list[int]:
        return [i for i in self.order if self.subtask_status[i] == "pending"]

    def suspended_id(self) -> int | None:
        for i in self.order:
            if self.subtask_status[i] == "suspended":
                return i
        return None

    def set_status(self, subtask_id: int, status: str) -> None:
        if status not in STATUSES:
            raise ValueError(f"unknown status {status!r}")
        self.subtask_status[subtask_id] = status

    # --- persistence (suspension survives process restarts) ---------------

    def to_json(self) -> str:
        return json.dumps(
            {
                "run_id": self.run_id,
                "config": self.config.to_dict(),
                "plan": plan_to_dict(self.plan),
                "world": self.world.to_dict(),
                "robot": self.robot.to_dict(),
                "scenario_name": self.scenario_name,
                "expected_final": [c.to_dict() for c in self.expected_final],
                "subtask_status": {str(k): v for k, v in self.subtask_status.items()},
                "retry_counts": {str(k): v for k, v in self.retry_counts.items()},
                "pre_attempts": {str(k): v for k, v in self.pre_attempts.items()},
                "reorder_used": sorted(self.reorder_used),
                "auto_retry_used": sorted(self.auto_retry_used),
                "order": list(self.order),
                "rng_state": _rng_state_to_jsonable(self.rng.getstate()),
                "events": [
                    {"seq": e.seq, "tick": e.tick, "kind": e.kind, "payload": e.payload}
                    for e in self.record.events
                ],
                "final_status": self.record.final_status,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "SystemState":
        data = json.loads(text)
        config = SystemConfig.from_dict(data["config"])
        kb = _load_kb(config)
        state = cls(
            run_id=data["run_id"],
            config=config,
            plan=plan_from_dict(data["plan"]),
            world=WorldState.from_dict(data["world"]),
            robot=RobotState.from_dict(data["robot"]),
            kb=kb,
            scenario_name=data["scenario_name"],
            expected_final=[Condition.from_dict(c) for c in data["expected_final"]],
            subtask_status={int(k): v for k, v in data["subtask_status"].items()},
            retry_counts={int(k): v for k, v in data["retry_counts"].items()},
            pre_attempts={int(k): v for k, v in data["pre_attempts"].items()},
            reorder_used=set(data["reorder_used"]),
            auto_retry_used=set(data["auto_retry_used"]),
            order=list(data["order"]),
        )
        state.rng.setstate(_rng_state_from_jsonable(data["rng_state"]))
        record = RunRecord(run_id=state.run_id, final_status=data.get("final_status"))
        for e in data["events"]:
            record.events.append(Event(seq=e["seq"], tick=e["tick"], kind=e["kind"], payload=e["payload"]))
        state.record = record
        return state


def _rng_state_to_jsonable(state: tuple) -> list:
    version, internal, gauss = state
    return [version, list(internal), gauss]


def _rng_state_from_jsonable(data: list) -> tuple:
    version, internal, gauss = data
    return (version, tuple(internal), gauss)


def _load_kb(config: SystemConfig) -> KnowledgeBase:
    if config.knowledge_base_path:
        return load_knowledge_base(config.knowledge_base_path)
    return load_default_knowledge_base()


def _parser_config(config: SystemConfig) -> ParserConfig:
    spec = config.model_selection.get("llm", "rule_based")
    if spec.startswith("remote:"):
        return ParserConfig(backend="remote", remote_endpoint=spec.split(":", 1)[1])
    return ParserConfig(backend="rule_based")


def init_system(protocol: Protocol, cfg: SystemConfig, scenario: Scenario) -> SystemState:
    """Parse, validate and seed: the initialized state shared by all agents."""
    plan = parse_protocol(protocol, _parser_config(cfg))
    kb = _load_kb(cfg)
    world = init_world(scenario)
    report = validate_plan(plan, kb, world)
    if not report.ok:
        details = "; ".join(f"subtask {i.subtask_id}: {i.message}" for i in report.fatal)
        raise ValidationFatal(f"plan cannot run: {details}")
    state = SystemState(
        run_id=uuid.uuid4().hex,
        config=cfg,
        plan=plan,
        world=world,
        robot=cfg.manipulator,
        kb=kb,
        scenario_name=scenario.name,
        expected_final=list(scenario.expected_final),
        subtask_status={s.id: "pending" for s in plan.subtasks},
        retry_counts={s.id: 0 for s in plan.subtasks},
        pre_attempts={s.id: 0 for s in plan.subtasks},
        order=[s.id for s in plan.subtasks],
        rng=random.Random(cfg.seed),
    )
    state.record = RunRecord(run_id=state.run_id)
    return state


def default_backends(state: SystemState) -> BackendBundle:
    cfg = state.config
    vlm = cfg.model_selection.get("vlm", "oracle")
    if vlm.startswith("remote:"):
        verifier: VerifierBackend = RemoteVerifier(endpoint=vlm.split(":", 1)[1])
    else:
        verifier = OracleVerifier(
            world_supplier=lambda: state.world, noise_rate=cfg.noise_rate, rng=state.rng
        )
    vla = cfg.model_selection.get("vla", "scripted")
    if vla.startswith("remote:"):
        from .executor import RemotePolicyClient

        executor: ExecutorBackend = RemotePolicyClient(endpoint=vla.split(":", 1)[1])
    else:
        executor = ScriptedExecutor()
    return BackendBundle(verifier=verifier, executor=executor, kb=state.kb)


# --- failure policy ---------------------------------------------------------


def handle_pre_failure(state: SystemState, subtask_id: int, verdict: Verdict, attempt: int) -> SchedulingDecision:
    """Reorder if a pending subtask establishes the precondition, else
    re-verify once, else escalate."""
    failed_pre = state.plan.subtask(subtask_id).precondition
    if subtask_id not in state.reorder_used:
        for j in state.order:
            if j == subtask_id or state.subtask_status[j] != "pending":
                continue
            if state.plan.subtask(j).postcondition == failed_pre:
                return SchedulingDecision(
                    kind="reorder",
                    rationale=f"subtask {j} establishes {failed_pre.text()}",
                    front_id=j,
                )
    if attempt <= 1:
        return SchedulingDecision(kind="reverify", rationale="second verification to rule out misjudgment")
    return SchedulingDecision(kind="escalate", rationale=f"precondition still failing after {attempt} checks")


def handle_post_failure(state: SystemState, subtask_id: int, verdict: Verdict) -> SchedulingDecision:
    """Retry while the failure count stays within max_retries, else escalate."""
    if state.retry_counts[subtask_id] <= state.config.max_retries:
        return SchedulingDecision(
            kind="retry",
            rationale=f"retry {state.retry_counts[subtask_id]} of {state.config.max_retries}",
        )
    return SchedulingDecision(kind="escalate", rationale="retry budget exhausted")


# --- the run loop -----------------------------------------------------------

_MAX_EVENTS = 100_000  # defensive bound; the policy itself terminates


def _run_verification(
    state: SystemState, backends: BackendBundle, subtask_id: int, phase: CheckPhase, attempt: int
) -> Verdict:
    subtask = state.plan.subtask(subtask_id)
    obs = render_observation(state.world)
    request = build_request(subtask, phase)
    retrieved = retrieve_topk(backends.kb, request.query_text(state.config.retrieval_query_mode), state.config.retrieval_k)
    vinput = fuse_prompt(obs, state.robot, request, retrieved, kb=backends.kb, attempt=attempt)
    return verify(vinput, backends.verifier)


def _finish(state: SystemState, status: str, observer: Observer | None) -> RunRecord:
    done = sum(1 for s in state.subtask_status.values() if s == "done")
    state.append_event("run_finished", {"status": status, "done": done, "tick": state.world.tick}, observer)
    state.record.final_status = status
    return state.record


def _escalate(
    state: SystemState, subtask_id: int, phase: CheckPhase, verdict: Verdict, attempt: int, observer: Observer | None
) -> str:
    """Returns "continue" (forced retry), "suspended" or "aborted"."""
    state.append_event(
        "escalation",
        {"subtask_id": subtask_id, "phase": phase.value, "reason": verdict.reason, "attempt": attempt},
        observer,
    )
    mode = state.config.intervention_mode
    if mode == "auto_retry" and subtask_id not in state.auto_retry_used:
        state.auto_retry_used.add(subtask_id)
        state.append_event(
            "intervention",
            {"subtask_id": subtask_id, "decision": "resume_retry", "operator": "auto_retry"},
            observer,
        )
        state.pre_attempts[subtask_id] = 0
        state.set_status(subtask_id, "pending")
        return "continue"
    if mode in ("console", "api"):
        state.set_status(subtask_id, "suspended")
        return "suspended"
    state.set_status(subtask_id, "aborted")
    return "aborted"


def run_workflow(state: SystemState, backends: BackendBundle | None = None, observer: Observer | None = None) -> RunRecord:
    """Drive the plan to completion, abort or suspension.

    Never raises for task-level failures: everything becomes events plus a
    final status. Safe to call again on a state resumed from suspension.
    """
    backends = backends or default_backends(state)
    if state.record.final_status in ("completed", "aborted"):
        return state.record
    state.record.final_status = None
    if not state.record.events:
        state.append_event(
            "run_started",
            {
                "scenario": state.scenario_name,
                "num_subtasks": len(state.plan.subtasks),
                "order": list(state.order),
                "seed": state.config.seed,
            },
            observer,
        )
    while True:
        if len(state.record.events) > _MAX_EVENTS:
            raise RuntimeError("event budget exceeded; scheduling loop did not terminate")
        if state.suspended_id() is not None:
            state.record.final_status = "suspended"
            return state.record
        pending = state.pending_ids()
        if not pending:
            return _finish(state, "completed", observer)
        outcome = _process_subtask(state, backends, pending[0], observer)
        if outcome == "suspended":
            state.record.final_status = "suspended"
            return state.record
        if outcome == "aborted":
            return _finish(state, "aborted", observer)
        # "continue": pick the next pending subtask


def _process_subtask(state: SystemState, backends: BackendBundle, subtask_id: int, observer: Observer | None) -> str:
    """Run one subtask's verify/execute/verify loop.

    Returns "continue" when the scheduler should pick the next pending
    subtask (done, reordered, or forced-retry), else "suspended"/"aborted".
    """
    subtask = state.plan.subtask(subtask_id)
    while True:
        state.set_status(subtask_id, "pre_check")
        attempt = state.pre_attempts[subtask_id] + 1
        verdict = _run_verification(state, backends, subtask_id, CheckPhase.PRE, attempt)
        state.append_event(
            "pre_verdict",
            {
                "subtask_id": subtask_id,
                "phase": "pre",
                "passed": verdict.passed,
                "reason": verdict.reason,
                "attempt": attempt,
            },
            observer,
        )
        if not verdict.passed:
            state.pre_attempts[subtask_id] = attempt
            decision = handle_pre_failure(state, subtask_id, verdict, attempt)
            if decision.kind == "reorder":
                state.append_event(
                    "reorder",
                    {"subtask_id": subtask_id, "front_id": decision.front_id, "rationale": decision.rationale},
                    observer,
                )
                state.reorder_used.add(subtask_id)
                state.pre_attempts[subtask_id] = 0
                state.set_status(subtask_id, "pending")
                state.order.remove(decision.front_id)
                state.order.insert(state.order.index(subtask_id), decision.front_id)
                return "continue"
            if decision.kind == "reverify":
                state.append_event(
                    "decision",
                    {"subtask_id": subtask_id, "decision": "reverify", "rationale": decision.rationale, "phase": "pre"},
                    observer,
                )
                continue
            return _escalate(state, subtask_id, CheckPhase.PRE, verdict, attempt, observer)

        state.pre_attempts[subtask_id] = 0
        state.set_status(subtask_id, "executing")
        exec_attempt = state.retry_counts[subtask_id] + 1
        try:
            result = execute(
                subtask,
                state.world,
                state.robot,
                backends.executor,
                SimulationConfig(success_prob=state.config.success_prob, horizon=state.config.horizon),
                state.rng,
            )
            state.world = result.world_after
            state.robot = result.robot_state_after
            payload = {
                "subtask_id": subtask_id,
                "succeeded": result.outcome.succeeded,
                "failure_mode": result.outcome.failure_mode,
                "attempt": exec_attempt,
                "chunk_len": result.chunk.horizon,
            }
        except PreconditionViolated as exc:
            # the verifier green-lit an action the world does not admit
            # (possible under noise); log a failed execution, do not crash
            state.world = state.world.copy()
            state.world.tick += 1
            payload = {
                "subtask_id": subtask_id,
                "succeeded": False,
                "failure_mode": "collision_abort",
                "attempt": exec_attempt,
                "error": str(exc),
            }
        state.append_event("execution", payload, observer)

        state.set_status(subtask_id, "post_check")
        post_attempt = state.retry_counts[subtask_id] + 1
        verdict = _run_verification(state, backends, subtask_id, CheckPhase.POST, post_attempt)
        state.append_event(
            "post_verdict",
            {
                "subtask_id": subtask_id,
                "phase": "post",
                "passed": verdict.passed,
                "reason": verdict.reason,
                "attempt": post_attempt,
            },
            observer,
        )
        if verdict.passed:
            state.set_status(subtask_id, "done")
            state.append_event("subtask_done", {"subtask_id": subtask_id}, observer)
            return "continue"
        state.retry_counts[subtask_id] += 1
        decision = handle_post_failure(state, subtask_id, verdict)
        if decision.kind == "retry":
            state.append_event(
                "decision",
                {"subtask_id": subtask_id, "decision": "retry", "rationale": decision.rationale, "phase": "post"},
                observer,
            )
            continue
        return _escalate(state, subtask_id, CheckPhase.POST, verdict, post_attempt, observer)


# --- human intervention ----------------------------------------------------

INTERVENTION_DECISIONS = ("resume_retry", "skip_subtask", "reorder", "abort")


def submit_intervention(
    state: SystemState,
    decision: str,
    operator: str,
    front_id: int | None = None,
    observer: Observer | None = None,
) -> SystemState:
    """Resolve a suspended run; the run loop is then resumed by the caller."""
    suspended = state.suspended_id()
    if suspended is None:
        raise NoSuspendedSubtask("no subtask is awaiting intervention")
    if decision not in INTERVENTION_DECISIONS:
        raise ValueError(f"unknown intervention decision {decision!r}")
    payload = {"subtask_id": suspended, "decision": decision, "operator": operator}
    if decision == "reorder":
        if front_id is None or state.subtask_status.get(front_id) != "pending":
            raise InvalidReorderTarget(f"subtask {front_id!r} is not pending")
        payload["front_id"] = front_id
    state.append_event("intervention", payload, observer)
    if decision == "resume_retry":
        state.retry_counts[suspended] += 1
        state.pre_attempts[suspended] = 0
        state.set_status(suspended, "pending")
    elif decision == "skip_subtask":
        state.set_status(suspended, "aborted")
    elif decision == "reorder":
        state.pre_attempts[suspended] = 0
        state.set_status(suspended, "pending")
        state.order.remove(front_id)
        state.order.insert(state.order.index(suspended), front_id)
    elif decision == "abort":
        state.set_status(suspended, "aborted")
        _finish(state, "aborted", observer)
    return state


def persist_state(state: SystemState, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{state.run_id}.state.json"
    path.write_text(state.to_json(), encoding="utf-8")
    return path


def load_state(path: str | Path) -> SystemState:
    return SystemState.from_json(Path(path).read_text(encoding="utf-8"))
