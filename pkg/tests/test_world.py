from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from labloop.errors import PreconditionViolated, SchemaError, UnknownPredicate
from labloop.protocol import Protocol, parse_protocol
from labloop.types import ActionKind, AtomicAction, Condition
from labloop.world import (
    LabObject,
    Scenario,
    WorldState,
    apply_action,
    eval_condition,
    init_world,
    render_observation,
)

from conftest import SINGLE_TASK_NAMES, scenario


def fresh_world(**predicates) -> WorldState:
    objects = {
        "centrifuge": LabObject("centrifuge", "centrifuge"),
        "water_bath": LabObject("water_bath", "water_bath"),
        "tube_15ml_1": LabObject("tube_15ml_1", "tube_15ml", transparent=True),
        "cryotube_1": LabObject("cryotube_1", "cryotube_1_8ml", transparent=True),
        "tube_rack_orange": LabObject("tube_rack_orange", "tube_rack_orange"),
        "cryo_rack_red": LabObject("cryo_rack_red", "cryo_rack_red"),
        "float": LabObject("float", "float"),
        "serum_bottle": LabObject("serum_bottle", "serum_bottle"),
        "trash_bin": LabObject("trash_bin", "trash_bin"),
    }
    return WorldState(objects=objects)


class TestEvalCondition:
    def test_loading_world_lid_closed(self):
        world = init_world(scenario("loading_centrifuge_tube"))
        assert eval_condition(world, Condition("lid_open", ("centrifuge",), False))
        assert eval_condition(world, Condition("in", ("tube_15ml_1", "tube_rack_orange"), True))

    def test_absent_key_defaults_false(self):
        world = fresh_world()
        assert eval_condition(world, Condition("held", ("tube_15ml_1", "gripper"), False))
        assert not eval_condition(world, Condition("held", ("tube_15ml_1", "gripper"), True))

    def test_unknown_predicate_raises(self):
        with pytest.raises(UnknownPredicate):
            eval_condition(fresh_world(), Condition("glowing", ("centrifuge",), True))

    def test_wrong_arity_raises(self):
        with pytest.raises(UnknownPredicate):
            eval_condition(fresh_world(), Condition("lid_open", ("a", "b"), True))


class TestInitWorld:
    def test_loading_scenario_fixture(self):
        world = init_world(scenario("loading_centrifuge_tube"))
        assert world.tick == 0
        assert not world.get("lid_open", "centrifuge")
        assert world.get("in", "tube_15ml_1", "tube_rack_orange")

    def test_empty_scenario(self):
        scen = Scenario(name="empty", initial_world=WorldState(), protocol_text="Wait.")
        world = init_world(scen)
        assert world.objects == {} and world.predicates == {}

    def test_unknown_kind_rejected(self):
        with pytest.raises(SchemaError):
            LabObject("thing", "blender")

    def test_deep_copy_isolation(self):
        scen = scenario("loading_centrifuge_tube")
        world = init_world(scen)
        world.set("lid_open", ("centrifuge",), True)
        assert not scen.initial_world.get("lid_open", "centrifuge")

    def test_two_tubes_one_rack(self):
        world = fresh_world()
        world.objects["tube_15ml_2"] = LabObject("tube_15ml_2", "tube_15ml")
        world.set("in", ("tube_15ml_1", "tube_rack_orange"), True)
        world.set("in", ("tube_15ml_2", "tube_rack_orange"), True)
        assert world.get("in", "tube_15ml_1", "tube_rack_orange")
        assert world.get("in", "tube_15ml_2", "tube_rack_orange")


class TestApplyAction:
    def test_wait_noop(self):
        world = fresh_world()
        new, outcome = apply_action(world, AtomicAction(ActionKind.WAIT), 1.0, random.Random(0))
        assert outcome.succeeded and new.tick == world.tick + 1
        assert new.predicates == world.predicates

    def test_discard_clears_location(self):
        world = fresh_world()
        world.set("in", ("cryotube_1", "cryo_rack_red"), True)
        action = AtomicAction(ActionKind.PLACE, subject="cryotube_1", target="trash_bin")
        new, outcome = apply_action(world, action, 1.0, random.Random(0))
        assert outcome.succeeded
        assert new.get("discarded", "cryotube_1")
        assert not any(v for (p, args), v in new.predicates.items() if p == "in" and args[0] == "cryotube_1")

    def test_failure_leaves_predicates(self):
        world = fresh_world()
        action = AtomicAction(ActionKind.OPEN_LID, subject="centrifuge")
        new, outcome = apply_action(world, action, 0.0, random.Random(0))
        assert not outcome.succeeded and outcome.failure_mode is not None
        assert new.predicates == world.predicates
        assert new.tick == world.tick + 1

    def test_precondition_violated(self):
        world = fresh_world()
        world.set("lid_open", ("centrifuge",), True)
        with pytest.raises(PreconditionViolated):
            apply_action(world, AtomicAction(ActionKind.OPEN_LID, subject="centrifuge"), 1.0, random.Random(0))

    def test_input_world_not_mutated(self):
        world = fresh_world()
        before = dict(world.predicates)
        apply_action(world, AtomicAction(ActionKind.OPEN_LID, subject="centrifuge"), 1.0, random.Random(0))
        assert world.predicates == before and world.tick == 0

    def test_determinism(self):
        world = fresh_world()
        action = AtomicAction(ActionKind.OPEN_LID, subject="centrifuge")
        a = apply_action(world, action, 0.5, random.Random(42))
        b = apply_action(world, action, 0.5, random.Random(42))
        assert a[0].predicates == b[0].predicates
        assert a[1].succeeded == b[1].succeeded

    def test_exactly_one_draw(self):
        world = fresh_world()
        rng = random.Random(7)
        apply_action(world, AtomicAction(ActionKind.WAIT), 0.5, rng)
        # a second generator one draw ahead matches the first afterwards
        ref = random.Random(7)
        ref.random()
        assert rng.random() == ref.random()

    def test_pour_moves_liquid(self):
        world = fresh_world()
        world.set("contains_liquid", ("tube_15ml_1",), True)
        action = AtomicAction(ActionKind.MOVE, subject="tube_15ml_1", target="serum_bottle")
        new, _ = apply_action(world, action, 1.0, random.Random(0))
        assert new.get("contains_liquid", "serum_bottle")
        assert not new.get("contains_liquid", "tube_15ml_1")
        assert not new.get("in", "tube_15ml_1", "serum_bottle")

    def test_twist_toggles_cap(self):
        world = fresh_world()
        world.set("cap_on", ("tube_15ml_1",), True)
        world.set("cap_tight", ("tube_15ml_1",), True)
        action = AtomicAction(ActionKind.GRASP, subject="cap", target="tube_15ml_1")
        new, _ = apply_action(world, action, 1.0, random.Random(0))
        assert not new.get("cap_tight", "tube_15ml_1")
        newer, _ = apply_action(new, action, 1.0, random.Random(0))
        assert newer.get("cap_tight", "tube_15ml_1")


def random_action(rng: random.Random, world: WorldState) -> AtomicAction | None:
    """Sample an action whose hard precondition holds in ``world``."""
    names = sorted(world.objects)
    candidates: list[AtomicAction] = []
    for name in names:
        if world.objects[name].kind in ("centrifuge", "water_bath"):
            kind = ActionKind.CLOSE_LID if world.get("lid_open", name) else ActionKind.OPEN_LID
            candidates.append(AtomicAction(kind, subject=name))
    movables = [n for n in names if world.objects[n].kind in ("tube_15ml", "cryotube_1_8ml", "float")]
    containers = [n for n in names if world.objects[n].kind in ("centrifuge", "water_bath", "tube_rack_orange", "cryo_rack_red", "trash_bin")]
    for m in movables:
        if world.get("discarded", m):
            continue
        for c in containers:
            candidates.append(AtomicAction(ActionKind.PLACE, subject=m, target=c))
            if world.get("in", m, c):
                candidates.append(AtomicAction(ActionKind.REMOVE, subject=m, target=c))
        candidates.append(AtomicAction(ActionKind.GRASP, subject=m))
    candidates.append(AtomicAction(ActionKind.WAIT))
    candidates.append(AtomicAction(ActionKind.PRESS_BUTTON, subject="panel"))
    return rng.choice(candidates) if candidates else None


class TestInvariants:
    def test_single_location_preserved_under_fuzz(self):
        # randomized action sequences never leave an object in two places
        rng = random.Random(2024)
        world = init_world(scenario("clean_up_waste_materials"))
        for _ in range(5000):
            action = random_action(rng, world)
            world, _ = apply_action(world, action, 0.9, rng)
            for name in world.objects:
                locations = [k for k, v in world.predicates.items() if v and k[0] == "in" and k[1][0] == name]
                assert len(locations) <= 1, f"{name} in two places: {locations}"
                if world.get("discarded", name):
                    assert not locations
                    held = [k for k, v in world.predicates.items() if v and k[0] == "held" and k[1][0] == name]
                    assert not held

    def test_effect_condition_duality_all_tasks(self):
        # applying each parsed corpus action from its scenario start state
        # yields a world satisfying the parser's postcondition
        for name in SINGLE_TASK_NAMES:
            scen = scenario(name)
            plan = parse_protocol(Protocol(scen.protocol_text))
            assert len(plan.subtasks) == 1
            subtask = plan.subtasks[0]
            world = init_world(scen)
            assert eval_condition(world, subtask.precondition), name
            new, outcome = apply_action(world, subtask.action, 1.0, random.Random(0))
            assert outcome.succeeded
            assert eval_condition(new, subtask.postcondition), name

    def test_effect_condition_duality_synthetic_kinds(self):
        # PressButton and Wait have no corpus row; cover them directly
        from labloop.protocol import SegmentMatch, synthesize_conditions

        world = fresh_world()
        for action in (AtomicAction(ActionKind.PRESS_BUTTON, subject="panel"), AtomicAction(ActionKind.WAIT)):
            pre, post = synthesize_conditions(SegmentMatch(action=action))
            assert eval_condition(world, pre)
            new, _ = apply_action(world, action, 1.0, random.Random(0))
            assert eval_condition(new, post)


class TestRendering:
    def test_same_world_same_bytes(self):
        world = init_world(scenario("loading_centrifuge_tube"))
        a = render_observation(world)
        b = render_observation(world)
        assert a.image.tobytes() == b.image.tobytes()

    def test_lid_state_changes_pixels(self):
        world = init_world(scenario("loading_centrifuge_tube"))
        opened = world.copy()
        opened.set("lid_open", ("centrifuge",), True)
        assert render_observation(world).image.tobytes() != render_observation(opened).image.tobytes()

    def test_golden_pixmap(self, tmp_path):
        from labloop.augmentation import read_ppm, write_ppm

        world = init_world(scenario("loading_centrifuge_tube"))
        obs = render_observation(world)
        golden_path = (
            __import__("pathlib").Path(__file__).parent / "data" / "loading_world.ppm"
        )
        if not golden_path.exists():  # first generation; inspected by hand
            golden_path.parent.mkdir(exist_ok=True)
            write_ppm(golden_path, obs.image)
        golden = read_ppm(golden_path)
        assert np.array_equal(obs.image, golden)

    def test_shape_and_dtype(self):
        obs = render_observation(fresh_world())
        assert obs.image.shape == (128, 128, 3) and obs.image.dtype == np.uint8


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1), st.floats(min_value=0, max_value=1))
def test_apply_action_deterministic_property(seed, prob):
    world = init_world(scenario("loading_centrifuge_tube"))
    action = AtomicAction(ActionKind.OPEN_LID, subject="centrifuge")
    w1, o1 = apply_action(world, action, prob, random.Random(seed))
    w2, o2 = apply_action(world, action, prob, random.Random(seed))
    assert w1.predicates == w2.predicates and o1.succeeded == o2.succeeded
