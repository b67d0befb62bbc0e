"""HTTP gateway: run lifecycle, event streaming, human interventions.

Each run executes on its own thread; its event log is the only shared
output. Subscribers get an ordered server-sent event stream that can be
resumed with ``Last-Event-Id`` (events are replayed from the persisted
log, so reconnects are gap-free). Observer queues are bounded and drop
their oldest entries when a consumer lags — the persisted log is never
dropped. Intervention POSTs are serialized per run; the first valid
decision wins and later ones get 409.
"""

from __future__ import annotations

import io
import json
import queue
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, Header, HTTPException, Request, Response
from fastapi.responses import StreamingResponse

from .config import SystemConfig
from .errors import (
    InvalidReorderTarget,
    LabloopError,
    NoSuspendedSubtask,
    ParseError,
    SchemaError,
    ValidationFatal,
)
from .events import Event
from .orchestrator import (
    SystemState,
    init_system,
    persist_state,
    run_workflow,
    submit_intervention,
)
from .protocol import Protocol
from .world import render_observation
from .cli import resolve_scenario

_SUBSCRIBER_BUFFER = 1000
_STREAM_POLL_SECONDS = 0.2


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class ManagedRun:
    state: SystemState
    runs_dir: Path
    created_at: str = field(default_factory=_utcnow)
    thread: threading.Thread | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)
    subscribers: list[queue.Queue] = field(default_factory=list)
    log_lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def run_id(self) -> str:
        return self.state.run_id

    @property
    def log_path(self) -> Path:
        return self.runs_dir / f"{self.run_id}.jsonl"

    def status(self) -> str:
        final = self.state.record.final_status
        if final in ("completed", "aborted", "suspended"):
            return final
        return "running"

    # --- event fan-out ------------------------------------------------------

    def _observe(self, run_id: str, event: Event) -> None:
        with self.log_lock:
            with self.log_path.open("a", encoding="utf-8") as fh:
                fh.write(event.to_line(run_id) + "\n")
        for q in list(self.subscribers):
            try:
                q.put_nowait(event)
            except queue.Full:
                try:
                    q.get_nowait()  # drop-oldest for slow observers
                except queue.Empty:
                    pass
                try:
                    q.put_nowait(event)
                except queue.Full:
                    pass

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=_SUBSCRIBER_BUFFER)
        self.subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        if q in self.subscribers:
            self.subscribers.remove(q)

    # --- lifecycle ----------------------------------------------------------

    def launch(self) -> None:
        def _run() -> None:
            record = run_workflow(self.state, observer=self._observe)
            if record.final_status == "suspended":
                persist_state(self.state, self.runs_dir)

        self.runs_dir.mkdir(parents=True, exist_ok=True)
        self.thread = threading.Thread(target=_run, name=f"run-{self.run_id[:8]}", daemon=True)
        self.thread.start()

    def intervene(self, decision: str, operator: str, front_id: int | None) -> str:
        with self.lock:
            if self.thread is not None and self.thread.is_alive():
                # still executing; nothing is awaiting a decision
                raise NoSuspendedSubtask("run is not suspended")
            submit_intervention(self.state, decision, operator=operator, front_id=front_id, observer=self._observe)
            if self.state.record.final_status != "aborted":
                self.launch()
            return self.status()


class RunManager:
    def __init__(self, runs_dir: str | Path):
        self.runs_dir = Path(runs_dir)
        self.runs: dict[str, ManagedRun] = {}
        self._lock = threading.Lock()

    def create(self, protocol_text: str | None, scenario_ref: str, config: dict | None) -> ManagedRun:
        scenario = resolve_scenario(scenario_ref)
        cfg = SystemConfig.from_dict(config) if config else SystemConfig()
        text = protocol_text or scenario.protocol_text
        state = init_system(Protocol(text, source_id=scenario.name), cfg, scenario)
        run = ManagedRun(state=state, runs_dir=self.runs_dir)
        with self._lock:
            self.runs[run.run_id] = run
        run.launch()
        return run

    def get(self, run_id: str) -> ManagedRun:
        run = self.runs.get(run_id)
        if run is None:
            raise KeyError(run_id)
        return run


def _handle_payload(run: ManagedRun) -> dict:
    return {
        "run_id": run.run_id,
        "status": run.status(),
        "scenario": run.state.scenario_name,
        "created_at": run.created_at,
    }


def _run_view(run: ManagedRun) -> dict:
    state = run.state
    pending_escalation = None
    if run.status() == "suspended":
        for event in reversed(state.record.events):
            if event.kind == "escalation":
                pending_escalation = {
                    "subtask_id": event.payload["subtask_id"],
                    "reason": event.payload["reason"],
                    "attempt": event.payload["attempt"],
                    "phase": event.payload["phase"],
                }
                break
    return {
        **_handle_payload(run),
        "subtasks": [
            {"id": s.id, "instruction": s.instruction, "status": state.subtask_status[s.id]}
            for s in state.plan.subtasks
        ],
        "pending_escalation": pending_escalation,
        "events_seen": len(state.record.events),
    }


def create_app(runs_dir: str | Path = "runs", token: str | None = None) -> FastAPI:
    app = FastAPI(title="labloop gateway")
    manager = RunManager(runs_dir)
    app.state.manager = manager

    def _auth(request: Request) -> None:
        if token and request.headers.get("authorization") != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or bad bearer token")

    @app.post("/runs", status_code=201)
    async def create_run(request: Request):
        _auth(request)
        body = await request.json()
        try:
            run = manager.create(body.get("protocol"), body["scenario"], body.get("config"))
        except KeyError as exc:
            raise HTTPException(status_code=422, detail=f"missing field {exc}") from exc
        except (ParseError, SchemaError, ValidationFatal, FileNotFoundError, LabloopError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return _handle_payload(run)

    @app.get("/runs")
    async def list_runs(request: Request):
        _auth(request)
        return [_handle_payload(r) for r in manager.runs.values()]

    @app.get("/runs/{run_id}")
    async def get_run(request: Request, run_id: str):
        _auth(request)
        try:
            return _run_view(manager.get(run_id))
        except KeyError as exc:
            raise HTTPException(status_code=404, detail="run not found") from exc

    @app.post("/runs/{run_id}/intervention")
    async def intervene(request: Request, run_id: str):
        _auth(request)
        try:
            run = manager.get(run_id)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail="run not found") from exc
        body = await request.json()
        try:
            status = run.intervene(
                decision=body.get("decision", ""),
                operator=body.get("operator", "operator"),
                front_id=body.get("front_id"),
            )
        except NoSuspendedSubtask as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except (InvalidReorderTarget, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return {"run_id": run_id, "status": status}

    @app.get("/runs/{run_id}/frame")
    async def frame(request: Request, run_id: str):
        _auth(request)
        try:
            run = manager.get(run_id)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail="run not found") from exc
        from PIL import Image

        obs = render_observation(run.state.world)
        buf = io.BytesIO()
        Image.fromarray(obs.image).save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.get("/runs/{run_id}/events")
    async def events(request: Request, run_id: str, last_event_id: str | None = Header(default=None)):
        _auth(request)
        try:
            run = manager.get(run_id)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail="run not found") from exc
        qs_last = request.query_params.get("last_event_id")
        try:
            after_seq = int(qs_last if qs_last is not None else (last_event_id or 0))
        except ValueError:
            after_seq = 0

        def stream():
            q = run.subscribe()
            sent = after_seq
            try:
                while True:
                    # replay anything persisted beyond what we sent so far
                    for event in list(run.state.record.events):
                        if event.seq > sent:
                            sent = event.seq
                            yield f"id: {event.seq}\ndata: {event.to_line(run.run_id)}\n\n"
                    if run.state.record.final_status in ("completed", "aborted"):
                        return
                    try:
                        q.get(timeout=_STREAM_POLL_SECONDS)
                    except queue.Empty:
                        pass
            finally:
                run.unsubscribe(q)

        return StreamingResponse(stream(), media_type="text/event-stream")

    return app
