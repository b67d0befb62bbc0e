"""Command-line surface: parse, run, simulate, augment, report, serve.

Exit codes: 0 success/completed run, 2 aborted run, 3 suspended run,
64 usage error, 66 unreadable config/data file.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .augmentation import CurriculumSchedule, augment_episode
from .config import SystemConfig, load_config
from .errors import LabloopError, SchemaError, IoError
from .events import RunRecord, read_jsonl, write_jsonl
from .metrics import (
    CR_TRIALS,
    CompositeTrial,
    TrialBatch,
    cr_report,
    harvest_from_logs,
    pooled_completion_rate,
    sr_report,
)
from .orchestrator import init_system, persist_state, run_workflow
from .protocol import Protocol, parse_protocol, plan_to_json
from .world import Scenario, load_scenario

EXIT_OK = 0
EXIT_ABORTED = 2
EXIT_SUSPENDED = 3
EXIT_USAGE = 64
EXIT_FILE = 66


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit(2)
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="labloop", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_parse = sub.add_parser("parse", help="parse a protocol file into a task plan")
    p_parse.add_argument("--protocol", required=True, help="protocol text file")

    p_run = sub.add_parser("run", help="run one workflow against a scenario")
    _add_run_flags(p_run)
    p_run.add_argument("--protocol", required=True, help="protocol text file")
    p_run.add_argument("--log", default=None, help="event log output path (JSONL)")
    p_run.add_argument("--state-dir", default="runs", help="directory for suspended-state files")

    p_sim = sub.add_parser("simulate", help="run many seeded workflows and report metrics")
    _add_run_flags(p_sim)
    p_sim.add_argument("--trials", type=int, required=True)
    p_sim.add_argument("--out-logs", default=None, help="directory to write per-run JSONL logs")
    p_sim.add_argument("--trials-per-rep", type=int, default=20)

    p_aug = sub.add_parser("augment", help="write curriculum-perturbed episode frames")
    p_aug.add_argument("--episode", required=True)
    p_aug.add_argument("--epoch", type=int, required=True)
    p_aug.add_argument("--schedule", required=True, help="JSON curriculum schedule file")
    p_aug.add_argument("--seed", type=int, required=True)
    p_aug.add_argument("--out", required=True)

    p_rep = sub.add_parser("report", help="recompute metrics from saved event logs")
    p_rep.add_argument("--logs", nargs="*", default=[], help="JSONL log files")
    p_rep.add_argument("--log-dir", default=None, help="directory of JSONL logs")
    p_rep.add_argument("--task", default=None, help="task name for the report (default: scenario)")
    p_rep.add_argument("--trials-per-rep", type=int, default=20)

    p_srv = sub.add_parser("serve", help="start the HTTP/event-stream service")
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--port", type=int, default=8080)
    p_srv.add_argument("--runs-dir", default="runs")
    p_srv.add_argument("--token", default=None, help="optional static bearer token")
    return parser


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", required=True, help="scenario JSON file or bundled scenario name")
    p.add_argument("--config", default=None, help="JSON file mirroring the system config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--noise", type=float, default=None, help="verifier flip probability")
    p.add_argument("--success-prob", type=float, default=None, help="default per-step success probability")
    p.add_argument("--max-retries", type=int, default=None)
    p.add_argument("--retrieval-k", type=int, default=None)
    p.add_argument("--intervention", default=None, choices=["auto_abort", "auto_retry", "console", "api"])


def resolve_scenario(ref: str) -> Scenario:
    """Accept a path or the name of a bundled scenario."""
    path = Path(ref)
    if not path.exists():
        bundled = Path(__file__).parent / "data" / "scenarios" / f"{ref}.json"
        if bundled.exists():
            path = bundled
    return load_scenario(path)


def _config_from_args(args: argparse.Namespace) -> SystemConfig:
    cfg = load_config(args.config) if args.config else SystemConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.noise is not None:
        cfg.noise_rate = args.noise
    if args.success_prob is not None:
        cfg.success_prob = {"default": args.success_prob}
    if args.max_retries is not None:
        cfg.max_retries = args.max_retries
    if args.retrieval_k is not None:
        cfg.retrieval_k = args.retrieval_k
    if args.intervention is not None:
        cfg.intervention_mode = args.intervention
    cfg.__post_init__()  # re-check bounds after overrides
    return cfg


def _read_protocol(path: str) -> Protocol:
    return Protocol(text=Path(path).read_text(encoding="utf-8"), source_id=str(path))


def _cmd_parse(args: argparse.Namespace) -> int:
    plan = parse_protocol(_read_protocol(args.protocol))
    print(plan_to_json(plan))
    return EXIT_OK


def _cmd_run(args: argparse.Namespace) -> int:
    scenario = resolve_scenario(args.scenario)
    cfg = _config_from_args(args)
    state = init_system(_read_protocol(args.protocol), cfg, scenario)
    record = run_workflow(state)
    log_path = Path(args.log) if args.log else Path(args.state_dir) / f"{state.run_id}.jsonl"
    write_jsonl(record, log_path)
    if record.final_status == "suspended":
        state_path = persist_state(state, args.state_dir)
        print(json.dumps({"run_id": state.run_id, "status": record.final_status, "log": str(log_path),
                          "state": str(state_path)}))
        return EXIT_SUSPENDED
    print(json.dumps({"run_id": state.run_id, "status": record.final_status, "log": str(log_path),
                      "events": len(record.events)}))
    return EXIT_OK if record.final_status == "completed" else EXIT_ABORTED


def _records_to_report(records: list[RunRecord], task: str, plan_len: int, trials_per_rep: int) -> dict:
    harvested = harvest_from_logs(records, plan_len, trials_per_rep=trials_per_rep)
    if plan_len == 1:
        batches = [b for b in harvested if isinstance(b, TrialBatch)]
        if len(batches) == 3:
            report = sr_report(batches)
            return {
                "task": task,
                "sr": {"mean": report.mean, "se": report.std_error, "formatted": report.formatted},
            }
        successes = sum(b.successes for b in batches)
        total = sum(b.total for b in batches)
        return {"task": task, "sr": {"mean": successes / total * 100.0, "se": None, "formatted": None}}
    trials = [t for t in harvested if isinstance(t, CompositeTrial)]
    if len(trials) == CR_TRIALS:
        report = cr_report(trials)
        return {"task": task, "cr": {"mean": report.mean, "per_trial": report.per_trial,
                                     "pooled_check": report.pooled_check}}
    from .metrics import completion_rate

    return {
        "task": task,
        "cr": {"mean": pooled_completion_rate(trials), "per_trial": [completion_rate(t) for t in trials]},
    }


def _print_report(report: dict) -> None:
    print(json.dumps(report))
    from .metrics import round2

    if "sr" in report and report["sr"].get("formatted"):
        print(f"{report['task']}: {report['sr']['formatted']}", file=sys.stderr)
    elif "sr" in report:
        print(f"{report['task']}: {round2(report['sr']['mean'])}%", file=sys.stderr)
    else:
        print(f"{report['task']}: CR {round2(report['cr']['mean'])}%", file=sys.stderr)


def _cmd_simulate(args: argparse.Namespace) -> int:
    if args.trials < 1:
        raise _UsageError("--trials must be >= 1")
    scenario = resolve_scenario(args.scenario)
    cfg = _config_from_args(args)
    records: list[RunRecord] = []
    plan_len = 0
    for i in range(args.trials):
        state = init_system(Protocol(scenario.protocol_text, source_id=scenario.name), cfg.with_seed(cfg.seed + i), scenario)
        plan_len = len(state.plan.subtasks)
        record = run_workflow(state)
        records.append(record)
        if args.out_logs:
            write_jsonl(record, Path(args.out_logs) / f"{scenario.name}_{i:05d}.jsonl")
    report = _records_to_report(records, scenario.name, plan_len, args.trials_per_rep)
    _print_report(report)
    return EXIT_OK


def _cmd_augment(args: argparse.Namespace) -> int:
    sched = CurriculumSchedule.from_dict(json.loads(Path(args.schedule).read_text(encoding="utf-8")))
    manifest = augment_episode(args.episode, args.out, args.epoch, sched, args.seed)
    print(json.dumps({"out": str(args.out), "epoch": manifest["epoch"], "stage": manifest["stage"],
                      "frames": len(manifest["frames"])}))
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    paths = [Path(p) for p in args.logs]
    if args.log_dir:
        paths.extend(sorted(Path(args.log_dir).glob("*.jsonl")))
    if not paths:
        raise _UsageError("report needs --logs or --log-dir")
    records = [read_jsonl(p) for p in paths]
    plan_len = 0
    task = args.task
    for record in records:
        for event in record.events:
            if event.kind == "run_started":
                plan_len = max(plan_len, int(event.payload.get("num_subtasks", 0)))
                task = task or event.payload.get("scenario")
    if plan_len == 0:
        raise SchemaError("logs contain no run_started events")
    report = _records_to_report(records, task or "unknown", plan_len, args.trials_per_rep)
    _print_report(report)
    return EXIT_OK


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(runs_dir=args.runs_dir, token=args.token)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


_COMMANDS = {
    "parse": _cmd_parse,
    "run": _cmd_run,
    "simulate": _cmd_simulate,
    "augment": _cmd_augment,
    "report": _cmd_report,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IoError, FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_FILE
    except (SchemaError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_FILE
    except LabloopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
