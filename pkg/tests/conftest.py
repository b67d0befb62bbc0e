from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import pytest

from labloop.config import SystemConfig
from labloop.events import RunRecord
from labloop.orchestrator import BackendBundle, SystemState, default_backends, init_system
from labloop.protocol import Protocol
from labloop.verification import Verdict, VerificationInput
from labloop.world import Scenario, load_scenario

DATA_DIR = Path(__file__).resolve().parents[1] / "src" / "labloop" / "data"
SCENARIOS_DIR = DATA_DIR / "scenarios"

COMPOSITE_NAMES = (
    "loading_centrifuge_tube",
    "unload_centrifuge_tube",
    "tidy_up_the_desktop",
    "clean_up_waste_materials",
    "loading_float",
    "unload_the_float",
)

SINGLE_TASK_NAMES = (
    "open_centrifuge_lid",
    "close_centrifuge_lid",
    "insert_tube_to_centrifuge",
    "remove_tube_from_centrifuge",
    "place_centrifuge_tube_to_orange_rack",
    "place_cryotube_to_red_rack",
    "discard_centrifuge_tube",
    "discard_cryotube",
    "open_water_bath_lid",
    "close_water_bath_lid",
    "place_float_to_water_bath",
    "remove_float_from_water_bath",
    "unscrew_tube_cap",
    "tighten_tube_cap",
    "pour_waste_liquid",
)


def scenario(name: str) -> Scenario:
    return load_scenario(SCENARIOS_DIR / f"{name}.json")


def make_state(scenario_name: str, protocol_text: str | None = None, **config_kwargs) -> SystemState:
    scen = scenario(scenario_name)
    cfg = SystemConfig(**config_kwargs)
    return init_system(Protocol(protocol_text or scen.protocol_text), cfg, scen)


@dataclass
class ForcedVerifier:
    """Oracle wrapper that forces failures for chosen (subtask, phase) pairs."""

    inner: object
    fail_pre: set[int]
    fail_post: set[int]

    def assess(self, vinput: VerificationInput) -> Verdict:
        phase = vinput.phase.value
        forced = (phase == "pre" and vinput.subtask_id in self.fail_pre) or (
            phase == "post" and vinput.subtask_id in self.fail_post
        )
        verdict = self.inner.assess(vinput)
        if forced:
            return Verdict(
                passed=False,
                reason="forced failure",
                phase=vinput.phase,
                subtask_id=vinput.subtask_id,
                attempt=vinput.attempt,
            )
        return verdict


def forced_backends(state: SystemState, fail_pre: set[int] = frozenset(), fail_post: set[int] = frozenset()) -> BackendBundle:
    bundle = default_backends(state)
    bundle.verifier = ForcedVerifier(inner=bundle.verifier, fail_pre=set(fail_pre), fail_post=set(fail_post))
    return bundle


def assert_safety_invariant(record: RunRecord) -> None:
    """No execution without an immediately-preceding passed readiness verdict.

    "Immediately" means: between the passed pre_verdict for subtask i and
    the execution of i there is no other world-mutating (execution) event.
    """
    for idx, event in enumerate(record.events):
        if event.kind != "execution":
            continue
        sid = event.payload["subtask_id"]
        ok = False
        for prior in reversed(record.events[:idx]):
            if prior.kind == "execution":
                break
            if prior.kind == "pre_verdict" and prior.payload["subtask_id"] == sid:
                ok = prior.payload["passed"]
                break
        assert ok, f"execution of subtask {sid} at seq {event.seq} lacks a fresh passed pre_verdict"


@pytest.fixture
def loading_scenario() -> Scenario:
    return scenario("loading_centrifuge_tube")
