"""Regenerate the bundled scenario library and knowledge base.

Run from the repo root:  python scripts/generate_data.py
Writes src/labloop/data/{scenarios/*.json, protocols/*.txt, knowledge_base.json}.
"""

from __future__ import annotations

import json
from pathlib import Path

DATA = Path(__file__).resolve().parents[1] / "src" / "labloop" / "data"

CENTRIFUGE = {"name": "centrifuge", "kind": "centrifuge"}
WATER_BATH = {"name": "water_bath", "kind": "water_bath"}
TUBE = {"name": "tube_15ml_1", "kind": "tube_15ml", "transparent": True}
CRYO = {"name": "cryotube_1", "kind": "cryotube_1_8ml", "transparent": True}
ORANGE_RACK = {"name": "tube_rack_orange", "kind": "tube_rack_orange"}
RED_RACK = {"name": "cryo_rack_red", "kind": "cryo_rack_red"}
FLOAT = {"name": "float", "kind": "float"}
BOTTLE = {"name": "serum_bottle", "kind": "serum_bottle", "transparent": True}
TRASH = {"name": "trash_bin", "kind": "trash_bin"}


def pred(predicate: str, *args: str, value: bool = True) -> dict:
    return {"predicate": predicate, "args": list(args), "value": value}


def cond(predicate: str, *args: str, expected: bool = True) -> dict:
    return {"predicate": predicate, "args": list(args), "expected": expected}


SCENARIOS: list[dict] = [
    # --- single-task scenarios ---
    {
        "name": "open_centrifuge_lid",
        "protocol": "Unlock and open the centrifuge lid.",
        "objects": [CENTRIFUGE],
        "predicates": [pred("lid_open", "centrifuge", value=False)],
        "expected_final": [cond("lid_open", "centrifuge")],
    },
    {
        "name": "close_centrifuge_lid",
        "protocol": "Close the centrifuge lid.",
        "objects": [CENTRIFUGE],
        "predicates": [pred("lid_open", "centrifuge")],
        "expected_final": [cond("lid_open", "centrifuge", expected=False)],
    },
    {
        "name": "insert_tube_to_centrifuge",
        "protocol": "Place the centrifuge tube into the centrifuge.",
        "objects": [CENTRIFUGE, TUBE, ORANGE_RACK],
        "predicates": [pred("lid_open", "centrifuge"), pred("in", "tube_15ml_1", "tube_rack_orange")],
        "expected_final": [cond("in", "tube_15ml_1", "centrifuge")],
    },
    {
        "name": "remove_tube_from_centrifuge",
        "protocol": "Remove the centrifuge tube from the centrifuge.",
        "objects": [CENTRIFUGE, TUBE, ORANGE_RACK],
        "predicates": [pred("lid_open", "centrifuge"), pred("in", "tube_15ml_1", "centrifuge")],
        "expected_final": [cond("in", "tube_15ml_1", "centrifuge", expected=False)],
    },
    {
        "name": "place_centrifuge_tube_to_orange_rack",
        "protocol": "Place the 15 mL centrifuge tube into the orange centrifuge tube rack.",
        "objects": [TUBE, ORANGE_RACK],
        "predicates": [],
        "expected_final": [cond("in", "tube_15ml_1", "tube_rack_orange")],
    },
    {
        "name": "place_cryotube_to_red_rack",
        "protocol": "Place the 1.8 mL cryotube into the red cryotube rack.",
        "objects": [CRYO, RED_RACK],
        "predicates": [],
        "expected_final": [cond("in", "cryotube_1", "cryo_rack_red")],
    },
    {
        "name": "discard_centrifuge_tube",
        "protocol": "Discard the used 15 mL centrifuge tube into the trash can.",
        "objects": [TUBE, ORANGE_RACK, TRASH],
        "predicates": [pred("in", "tube_15ml_1", "tube_rack_orange")],
        "expected_final": [cond("discarded", "tube_15ml_1")],
    },
    {
        "name": "discard_cryotube",
        "protocol": "Discard the used 1.8 mL cryotube into the trash can.",
        "objects": [CRYO, RED_RACK, TRASH],
        "predicates": [pred("in", "cryotube_1", "cryo_rack_red")],
        "expected_final": [cond("discarded", "cryotube_1")],
    },
    {
        "name": "open_water_bath_lid",
        "protocol": "Open the water bath lid.",
        "objects": [WATER_BATH],
        "predicates": [pred("lid_open", "water_bath", value=False)],
        "expected_final": [cond("lid_open", "water_bath")],
    },
    {
        "name": "close_water_bath_lid",
        "protocol": "Close the water bath lid.",
        "objects": [WATER_BATH],
        "predicates": [pred("lid_open", "water_bath")],
        "expected_final": [cond("lid_open", "water_bath", expected=False)],
    },
    {
        "name": "place_float_to_water_bath",
        "protocol": "Place the water bath float into the water bath.",
        "objects": [WATER_BATH, FLOAT],
        "predicates": [pred("lid_open", "water_bath")],
        "expected_final": [cond("in", "float", "water_bath")],
    },
    {
        "name": "remove_float_from_water_bath",
        "protocol": "Remove the water bath float from the water bath.",
        "objects": [WATER_BATH, FLOAT],
        "predicates": [pred("lid_open", "water_bath"), pred("in", "float", "water_bath")],
        "expected_final": [cond("in", "float", "water_bath", expected=False)],
    },
    {
        "name": "unscrew_tube_cap",
        "protocol": "Unscrew the centrifuge tube cap.",
        "objects": [TUBE, ORANGE_RACK],
        "predicates": [
            pred("in", "tube_15ml_1", "tube_rack_orange"),
            pred("cap_on", "tube_15ml_1"),
            pred("cap_tight", "tube_15ml_1"),
        ],
        "expected_final": [cond("cap_tight", "tube_15ml_1", expected=False)],
    },
    {
        "name": "tighten_tube_cap",
        "protocol": "Tighten the centrifuge tube cap.",
        "objects": [TUBE, ORANGE_RACK],
        "predicates": [
            pred("in", "tube_15ml_1", "tube_rack_orange"),
            pred("cap_on", "tube_15ml_1"),
            pred("cap_tight", "tube_15ml_1", value=False),
        ],
        "expected_final": [cond("cap_tight", "tube_15ml_1")],
    },
    {
        "name": "pour_waste_liquid",
        "protocol": "Pour the waste liquid from the centrifuge tube into the waste liquid bottle.",
        "objects": [TUBE, ORANGE_RACK, BOTTLE],
        "predicates": [pred("in", "tube_15ml_1", "tube_rack_orange"), pred("contains_liquid", "tube_15ml_1")],
        "expected_final": [cond("contains_liquid", "serum_bottle")],
    },
    # --- composite scenarios ---
    {
        "name": "loading_centrifuge_tube",
        "protocol": (
            "Unlock and open the centrifuge lid. "
            "Place the centrifuge tube into the centrifuge. "
            "Close the centrifuge lid."
        ),
        "objects": [CENTRIFUGE, TUBE, ORANGE_RACK],
        "predicates": [pred("lid_open", "centrifuge", value=False), pred("in", "tube_15ml_1", "tube_rack_orange")],
        "expected_final": [cond("in", "tube_15ml_1", "centrifuge"), cond("lid_open", "centrifuge", expected=False)],
    },
    {
        "name": "unload_centrifuge_tube",
        "protocol": (
            "Unlock and open the centrifuge lid. "
            "Remove the centrifuge tube from the centrifuge. "
            "Close the centrifuge lid."
        ),
        "objects": [CENTRIFUGE, TUBE, ORANGE_RACK],
        "predicates": [pred("lid_open", "centrifuge", value=False), pred("in", "tube_15ml_1", "centrifuge")],
        "expected_final": [
            cond("in", "tube_15ml_1", "centrifuge", expected=False),
            cond("lid_open", "centrifuge", expected=False),
        ],
    },
    {
        "name": "tidy_up_the_desktop",
        "protocol": (
            "Place the 15 mL centrifuge tube into the orange centrifuge tube rack. "
            "Place the 1.8 mL cryotube into the red cryotube rack."
        ),
        "objects": [TUBE, CRYO, ORANGE_RACK, RED_RACK],
        "predicates": [],
        "expected_final": [cond("in", "tube_15ml_1", "tube_rack_orange"), cond("in", "cryotube_1", "cryo_rack_red")],
    },
    {
        "name": "clean_up_waste_materials",
        "protocol": (
            "Discard the used 15 mL centrifuge tube into the trash can. "
            "Discard the used 1.8 mL cryotube into the trash can."
        ),
        "objects": [TUBE, CRYO, ORANGE_RACK, RED_RACK, TRASH],
        "predicates": [pred("in", "tube_15ml_1", "tube_rack_orange"), pred("in", "cryotube_1", "cryo_rack_red")],
        "expected_final": [cond("discarded", "tube_15ml_1"), cond("discarded", "cryotube_1")],
    },
    {
        "name": "loading_float",
        "protocol": (
            "Open the water bath lid. "
            "Place the water bath float into the water bath. "
            "Close the water bath lid."
        ),
        "objects": [WATER_BATH, FLOAT],
        "predicates": [pred("lid_open", "water_bath", value=False)],
        "expected_final": [cond("in", "float", "water_bath"), cond("lid_open", "water_bath", expected=False)],
    },
    {
        "name": "unload_the_float",
        "protocol": (
            "Open the water bath lid. "
            "Remove the water bath float from the water bath. "
            "Close the water bath lid."
        ),
        "objects": [WATER_BATH, FLOAT],
        "predicates": [pred("lid_open", "water_bath", value=False), pred("in", "float", "water_bath")],
        "expected_final": [
            cond("in", "float", "water_bath", expected=False),
            cond("lid_open", "water_bath", expected=False),
        ],
    },
]

COMPOSITE_NAMES = {
    "loading_centrifuge_tube",
    "unload_centrifuge_tube",
    "tidy_up_the_desktop",
    "clean_up_waste_materials",
    "loading_float",
    "unload_the_float",
}


def item(key: str, desc: str, check: str, good: list[str], bad: list[str]) -> dict:
    return {
        "key": key,
        "task_description": desc,
        "verification_prompt": check,
        "success_examples": good,
        "failure_examples": bad,
    }


KNOWLEDGE_ITEMS = [
    item(
        "open_centrifuge_lid",
        "Release the centrifuge lid latch and raise the lid fully.",
        "Is the centrifuge lid standing fully open with the rotor visible?",
        ["Lid upright, rotor bores visible.", "Latch released, lid resting against its stop."],
        ["Lid still flat against the body.", "Lid lifted halfway and dropped back."],
    ),
    item(
        "close_centrifuge_lid",
        "Lower the centrifuge lid until the latch engages.",
        "Is the centrifuge lid flush with the body and latched?",
        ["Lid flat, latch clicked in."],
        ["Lid resting ajar on the rim.", "Latch not engaged."],
    ),
    item(
        "insert_tube_to_centrifuge",
        "Move a 15 mL tube from its rack into a free centrifuge rotor bore.",
        "Is the tube seated inside a rotor bore rather than in the rack?",
        ["Tube upright inside a rotor bore."],
        ["Tube still in the rack.", "Tube dropped beside the rotor."],
    ),
    item(
        "remove_tube_from_centrifuge",
        "Lift the 15 mL tube out of its rotor bore.",
        "Is the rotor bore empty and the tube held clear of the centrifuge?",
        ["Bore empty, tube held above the rotor."],
        ["Tube still seated in the bore.", "Tube slipped back into the rotor."],
    ),
    item(
        "place_centrifuge_tube_to_orange_rack",
        "Set the 15 mL tube into a slot of the orange rack.",
        "Is the tube standing in an orange-rack slot?",
        ["Tube vertical in a rack slot."],
        ["Tube leaning outside the slot.", "Tube lying on the bench."],
    ),
    item(
        "place_cryotube_to_red_rack",
        "Set the 1.8 mL cryotube into a slot of the red rack.",
        "Is the cryotube standing in a red-rack slot?",
        ["Cryotube vertical in a rack slot."],
        ["Cryotube missed the slot.", "Cryotube lying on the bench."],
    ),
    item(
        "discard_centrifuge_tube",
        "Drop the used 15 mL tube into the trash bin.",
        "Is the tube inside the trash bin and out of the workspace?",
        ["Tube inside the bin."],
        ["Tube still in the rack.", "Tube dropped next to the bin."],
    ),
    item(
        "discard_cryotube",
        "Drop the used 1.8 mL cryotube into the trash bin.",
        "Is the cryotube inside the trash bin and out of the workspace?",
        ["Cryotube inside the bin."],
        ["Cryotube still in the rack.", "Cryotube dropped next to the bin."],
    ),
    item(
        "open_water_bath_lid",
        "Raise the water bath lid fully.",
        "Is the water bath lid standing open with the bath visible?",
        ["Lid upright, water surface visible."],
        ["Lid still covering the bath."],
    ),
    item(
        "close_water_bath_lid",
        "Lower the water bath lid until it covers the bath.",
        "Is the water bath lid flat on the bath?",
        ["Lid flat across the bath rim."],
        ["Lid ajar on one edge."],
    ),
    item(
        "place_float_to_water_bath",
        "Set the tube float onto the open water bath.",
        "Is the float sitting inside the bath basin?",
        ["Float resting on the water surface."],
        ["Float on the bench.", "Float balanced on the bath rim."],
    ),
    item(
        "remove_float_from_water_bath",
        "Lift the tube float out of the water bath.",
        "Is the bath basin empty and the float held clear?",
        ["Float held above the bath, basin clear."],
        ["Float still in the basin."],
    ),
    item(
        "unscrew_tube_cap",
        "Hold the 15 mL tube with one arm and loosen its cap with the other.",
        "Is the cap loose (free to lift) while the tube stays in its rack?",
        ["Cap spins freely on the thread."],
        ["Cap still torqued tight.", "Tube rotated with the cap."],
    ),
    item(
        "tighten_tube_cap",
        "Hold the 15 mL tube with one arm and screw its cap tight with the other.",
        "Is the cap seated and snug on the tube?",
        ["Cap seated, no thread visible."],
        ["Cap cross-threaded.", "Cap still loose on the thread."],
    ),
    item(
        "pour_waste_liquid",
        "Tilt the 15 mL tube so its liquid drains into the serum bottle.",
        "Did the liquid transfer into the serum bottle without spills?",
        ["Bottle holds the liquid, tube empty."],
        ["Liquid spilled on the bench.", "Tube still full."],
    ),
    # generic per-action fallbacks for protocols outside the task corpus
    item(
        "action_open_lid",
        "Open the lid of the named piece of equipment.",
        "Is the named lid fully open?",
        ["Lid open."],
        ["Lid closed."],
    ),
    item(
        "action_close_lid",
        "Close the lid of the named piece of equipment.",
        "Is the named lid fully closed?",
        ["Lid closed."],
        ["Lid open."],
    ),
    item(
        "action_place",
        "Place the named object into the named destination.",
        "Is the object inside its destination?",
        ["Object seated in the destination."],
        ["Object somewhere else."],
    ),
    item(
        "action_remove",
        "Take the named object out of its container.",
        "Is the object out of the container?",
        ["Container empty, object held."],
        ["Object still in the container."],
    ),
    item(
        "action_grasp",
        "Grasp the named object with the gripper.",
        "Is the object secured in the gripper?",
        ["Gripper closed on the object."],
        ["Gripper empty."],
    ),
    item(
        "action_move",
        "Move the named object to the named destination.",
        "Is the object at its destination?",
        ["Object at the destination."],
        ["Object did not move."],
    ),
    item(
        "action_press_button",
        "Press the named button once.",
        "Was the button pressed?",
        ["Button clicked."],
        ["Button untouched."],
    ),
    item(
        "action_wait",
        "Hold position and wait.",
        "Did the robot hold still for the wait?",
        ["No motion during the wait."],
        ["Robot drifted during the wait."],
    ),
]


def main() -> None:
    scenarios_dir = DATA / "scenarios"
    protocols_dir = DATA / "protocols"
    scenarios_dir.mkdir(parents=True, exist_ok=True)
    protocols_dir.mkdir(parents=True, exist_ok=True)
    for scenario in SCENARIOS:
        path = scenarios_dir / f"{scenario['name']}.json"
        path.write_text(json.dumps(scenario, indent=2) + "\n", encoding="utf-8")
        (protocols_dir / f"{scenario['name']}.txt").write_text(scenario["protocol"] + "\n", encoding="utf-8")
    kb = {"embedder": "hash-bow-256", "items": KNOWLEDGE_ITEMS}
    (DATA / "knowledge_base.json").write_text(json.dumps(kb, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(SCENARIOS)} scenarios and {len(KNOWLEDGE_ITEMS)} knowledge items under {DATA}")


if __name__ == "__main__":
    main()
