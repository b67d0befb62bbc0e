"""Run statistics: success rate (SR), standard error, completion rate (CR).

Single tasks report the mean of three repetition success rates with the
standard error of the mean (sample std over n-1=2, divided by sqrt(3)),
rendered as "XX.XX% ± Y.YY". Composite tasks report per-trial step
completion percentages over 20 trials; the mean of the per-trial rates is
algebraically the pooled proportion of completed steps, and the report
carries both so the identity is checkable.

Display rounding is half-away-from-zero at two decimals; internal values
stay unrounded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

from .errors import ArityError, InconsistentScenario, MixedM
from .events import RunRecord

SR_REPETITIONS = 3
CR_TRIALS = 20
POOLED_IDENTITY_TOL = 1e-9


def round2(value: float) -> str:
    """Two-decimal display rounding, half away from zero."""
    return str(Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class TrialBatch:
    successes: int
    total: int

    def __post_init__(self) -> None:
        if self.total < 1:
            raise ValueError("a batch needs at least one trial")
        if not 0 <= self.successes <= self.total:
            raise ValueError("successes must lie in [0, total]")


def success_rate(batch: TrialBatch) -> float:
    return batch.successes / batch.total * 100.0


@dataclass
class SrReport:
    per_rep: list[float]  # exactly 3 percentages
    mean: float
    sample_std: float
    std_error: float
    formatted: str


def sr_report(reps: list[TrialBatch]) -> SrReport:
    """Three-repetition mean ± standard error, formatted to two decimals."""
    if len(reps) != SR_REPETITIONS:
        raise ArityError(f"sr_report needs exactly {SR_REPETITIONS} batches, got {len(reps)}")
    rates = [success_rate(b) for b in reps]
    mean = sum(rates) / SR_REPETITIONS
    sample_std = math.sqrt(sum((r - mean) ** 2 for r in rates) / (SR_REPETITIONS - 1))
    std_error = sample_std / math.sqrt(SR_REPETITIONS)
    formatted = f"{round2(mean)}% ± {round2(std_error)}"
    return SrReport(per_rep=rates, mean=mean, sample_std=sample_std, std_error=std_error, formatted=formatted)


@dataclass(frozen=True)
class CompositeTrial:
    steps: tuple[bool, ...]
    m: int

    def __post_init__(self) -> None:
        if self.m not in (2, 3):
            raise ValueError("composite tasks have 2 or 3 steps")
        if len(self.steps) != self.m:
            raise ValueError("steps length must equal m")


def completion_rate(trial: CompositeTrial) -> float:
    return sum(trial.steps) / trial.m * 100.0


@dataclass
class CrReport:
    per_trial: list[float]  # exactly 20 percentages
    mean: float
    pooled_check: float


def cr_report(trials: list[CompositeTrial]) -> CrReport:
    """Mean of 20 per-trial completion rates, with the pooled-step identity."""
    if len(trials) != CR_TRIALS:
        raise ArityError(f"cr_report needs exactly {CR_TRIALS} trials, got {len(trials)}")
    m = trials[0].m
    if any(t.m != m for t in trials):
        raise MixedM("all trials in a report must share one step count")
    per_trial = [completion_rate(t) for t in trials]
    mean = sum(per_trial) / CR_TRIALS
    pooled = sum(sum(t.steps) for t in trials) / (CR_TRIALS * m) * 100.0
    if abs(mean - pooled) > POOLED_IDENTITY_TOL:
        raise AssertionError(f"pooled identity violated: {mean} vs {pooled}")
    return CrReport(per_trial=per_trial, mean=mean, pooled_check=pooled)


def pooled_completion_rate(trials: list[CompositeTrial]) -> float:
    """Pooled step proportion over any number of trials (simulation use)."""
    if not trials:
        raise ArityError("no trials")
    m = trials[0].m
    if any(t.m != m for t in trials):
        raise MixedM("all trials must share one step count")
    return sum(sum(t.steps) for t in trials) / (len(trials) * m) * 100.0


# --- bridging run logs to metric inputs --------------------------------------


def _scenario_of(record: RunRecord) -> str:
    for event in record.events:
        if event.kind == "run_started":
            return event.payload.get("scenario", "")
    return ""


def _done_ids(record: RunRecord) -> set[int]:
    return {e.payload["subtask_id"] for e in record.events if e.kind == "subtask_done"}


def trial_from_record(record: RunRecord, plan_len: int) -> CompositeTrial:
    done = _done_ids(record)
    return CompositeTrial(steps=tuple(k in done for k in range(1, plan_len + 1)), m=plan_len)


def harvest_from_logs(
    records: list[RunRecord], plan_len: int, trials_per_rep: int = 20
) -> list[TrialBatch] | list[CompositeTrial]:
    """Turn run records into metric inputs.

    Single-step scenarios yield one TrialBatch per group of
    ``trials_per_rep`` consecutive runs; composite scenarios yield one
    CompositeTrial per run, a step counting as complete when its subtask
    reached "done".
    """
    if not records:
        raise ArityError("no records to harvest")
    scenarios = {_scenario_of(r) for r in records}
    if len(scenarios) != 1:
        raise InconsistentScenario(f"records span scenarios {sorted(scenarios)}")
    if plan_len == 1:
        batches = []
        for start in range(0, len(records), trials_per_rep):
            group = records[start : start + trials_per_rep]
            successes = sum(1 for r in group if 1 in _done_ids(r))
            batches.append(TrialBatch(successes=successes, total=len(group)))
        return batches
    return [trial_from_record(r, plan_len) for r in records]
