"""Task families: templates, decompositions, goals, dataset splits."""

from __future__ import annotations

import numpy as np
import pytest

from gridhouse import tasks as TK
from gridhouse.classes import desk_registry
from gridhouse.episodes import Trajectory, run_expert_episode
from gridhouse.scenes import builtin_templates, template_by_id
from gridhouse.skills import Skill, SubGoal
from gridhouse.tasks import (FULL_SPLIT_COUNTS, TEMPLATES, DatasetSplit,
                             InsufficientScenes, TaskInstance,
                             UnsatisfiableTemplate, build_splits, build_vocab,
                             decompose, desk_split_counts, generate_task,
                             instantiate_template, load_split,
                             remaining_fn, split_content_hash,
                             task_initial_state, task_success, tokenize,
                             verify_episode, write_splits)
from gridhouse.world import (Cleanliness, Openness, Temperature, state_hash)

from conftest import REG, make_state

TEMPLATES_ALL = builtin_templates()
TBY = {t["template_id"]: t for t in TEMPLATES_ALL}


def test_template_surface_forms_match_task_table():
    assert TEMPLATES["SHIF"]["clean"] == ["clean {obj}"]
    assert "put a {obj} in {recep}" in TEMPLATES["LHIF"]["pick_place"]
    assert "look at {obj} under the {toggle}" in TEMPLATES["LHIF"]["examine"]
    assert "is the {obj} {state}?" in TEMPLATES["IQA"]["state"]
    assert "pick up {obj}" in TEMPLATES["EXIN"]["pickup"]
    assert len(TEMPLATES["LHIF"]) == 7  # the seven long-horizon task types
    # surface instantiation of the pick&place form
    assert "put a {obj} in {recep}".format(obj="plunger", recep="cabinet") == \
        "put a plunger in cabinet"


def test_instantiate_clean_template():
    rng = np.random.default_rng(0)
    for _ in range(20):
        task = instantiate_template("SHIF", "clean {obj}", TEMPLATES_ALL[0],
                                    int(rng.integers(2 ** 60)), rng)
        assert task.instruction.startswith("clean ")
        obj = REG[task.bindings["obj"]]
        assert task.instruction == f"clean {obj.name.lower()}"
        state = task_initial_state(task, TEMPLATES_ALL[0])
        assert state.agent.held == task.target_iid
        assert state.obj(task.target_iid).cleanliness is Cleanliness.DIRTY
        break


def test_iqa_counting_answer_is_scene_truth():
    rng = np.random.default_rng(4)
    task = generate_task("IQA", "counting", 0, TEMPLATES_ALL[1],
                         987, rng, want_answer="2")
    assert task.answer == "2"
    state = task_initial_state(task, TEMPLATES_ALL[1])
    inside = [o for o in state.instances_of(task.bindings["obj"])
              if TK._inside_iid(state, o, task.target_iid)]
    assert len(inside) == 2


def test_decompose_clean_apple_matches_canonical_chain():
    # apple already in hand, sink/faucet unreached: the canonical sequence
    state = make_state([
        {"class": "Sink", "pos": (4, 3)},
        {"class": "Faucet", "pos": (3, 3)},
        {"class": "Apple", "pos": None, "container": None,
         "cleanliness": Cleanliness.DIRTY},
    ], agent_cell=(8, 11), held=2, width=14, height=14)
    task = TaskInstance(
        family="SHIF", task_type="clean", instruction="clean apple",
        bindings={"obj": REG.id_of("Apple")},
        goal={"kind": "state_held", "cls": REG.id_of("Apple"),
              "require": {"cleanliness": "clean"}},
        scene_template_id="adhoc", scene_seed=0, target_iid=2)
    want = [SubGoal(Skill.GoTo, REG.id_of("Sink")),
            SubGoal(Skill.Put, REG.id_of("Sink")),
            SubGoal(Skill.ToggleOn, REG.id_of("Faucet")),
            SubGoal(Skill.ToggleOff, REG.id_of("Faucet")),
            SubGoal(Skill.Pickup, REG.id_of("Apple")),
            SubGoal(Skill.End)]
    assert decompose(task, state) == want
    # the executed stream may insert extra GoTo hops (dynamic replanning)
    # but must contain the canonical chain in order
    traj = run_expert_episode(state, remaining_fn(task), max_steps=100)
    seq = list(traj.subgoal_sequence)
    it = iter(seq)
    assert all(any(step == w for step in it) for w in want), seq
    assert task_success(task, traj)


def test_decompose_exin_pickup_is_goto_pickup_end():
    rng = np.random.default_rng(7)
    task = generate_task("EXIN", "pickup", 0, TEMPLATES_ALL[0], 41, rng)
    ok, traj = verify_episode(task, TBY)
    assert ok
    skills = [s.skill for s in traj.subgoal_sequence]
    dedup = [s for i, s in enumerate(skills) if i == 0 or skills[i - 1] != s]
    assert dedup in ([Skill.GoTo, Skill.Pickup, Skill.End],
                     [Skill.GoTo, Skill.Open, Skill.GoTo, Skill.Pickup, Skill.End],
                     [Skill.Pickup, Skill.End])


def test_decompose_heat_contains_open_microwave():
    rng = np.random.default_rng(11)
    for seed in range(50):
        task = generate_task("SHIF", "heat", 0, TEMPLATES_ALL[0],
                             1000 + seed, rng)
        state = task_initial_state(task, TEMPLATES_ALL[0])
        micro = REG.id_of("Microwave")
        if state.obj([o for o in state.instances_of(micro)][0].instance_id).openness \
                is Openness.CLOSED:
            subs = decompose(task, state)
            assert SubGoal(Skill.Open, micro) in subs
            ok, traj = verify_episode(task, TBY)
            assert ok
            assert (Skill.Open, micro) in [(s.skill, s.object_class)
                                           for s in traj.subgoal_sequence]
            return
    pytest.skip("no closed-microwave draw")


def test_task_success_iqa_answer_match():
    rng = np.random.default_rng(2)
    task = generate_task("IQA", "existence", 0, TEMPLATES_ALL[2], 77, rng)
    state = task_initial_state(task, TEMPLATES_ALL[2])
    good = Trajectory(final_state=state, answer=task.answer)
    bad = Trajectory(final_state=state,
                     answer="No" if task.answer == "Yes" else "Yes")
    assert task_success(task, good)
    assert not task_success(task, bad)


def test_task_success_pick_two_requires_both():
    rng = np.random.default_rng(3)
    task = None
    for seed in range(60):
        try:
            task = generate_task("LHIF", "pick_two", 0, TEMPLATES_ALL[0],
                                 3000 + seed, rng)
            break
        except UnsatisfiableTemplate:
            continue
    assert task is not None
    state = task_initial_state(task, TEMPLATES_ALL[0])
    # place exactly one instance inside: goal unmet
    recep = state.obj(task.target_iid) if task.target_iid else None
    obj_cls = task.bindings["obj"]
    recep_cls = task.bindings["recep"]
    recep_iid = min(o.instance_id for o in state.instances_of(recep_cls)
                    if o.anchor is not None)
    one = state.instances_of(obj_cls)[0]
    state1 = state.with_object(
        __import__("dataclasses").replace(one, anchor=None, container=recep_iid))
    assert not task_success(task, Trajectory(final_state=state1))
    two = [o for o in state1.instances_of(obj_cls) if o.container != recep_iid][0]
    state2 = state1.with_object(
        __import__("dataclasses").replace(two, anchor=None, container=recep_iid))
    assert task_success(task, Trajectory(final_state=state2))


def test_task_success_heat_predicate_on_built_state():
    # derived: hand-built final state with target hot and held
    state = make_state([{"class": "Potato", "pos": None, "container": None}],
                       agent_cell=(5, 8), held=0)
    hot = state.with_object(
        __import__("dataclasses").replace(state.obj(0),
                                          temperature=Temperature.HOT))
    goal = {"kind": "state_held", "cls": REG.id_of("Potato"),
            "require": {"temperature": "hot"}}
    assert TK.goal_satisfied(goal, hot)
    assert not TK.goal_satisfied(goal, state)


def test_overrides_regenerate_identically():
    rng = np.random.default_rng(8)
    task = generate_task("LHIF", "stack_place", 0, TEMPLATES_ALL[3], 55, rng)
    s1 = task_initial_state(task, TEMPLATES_ALL[3])
    s2 = task_initial_state(TaskInstance.from_json(task.to_json()), TEMPLATES_ALL[3])
    assert state_hash(s1) == state_hash(s2)


# --------------------------------------------------------------------------
# splits


SMALL_COUNTS = {
    "train": {"SHIF": 6, "LHIF": 14, "IQA": 24, "EXIN": 6},
    "val_seen": {"SHIF": 1, "LHIF": 2, "IQA": 8, "EXIN": 1},
    "val_unseen": {"SHIF": 1, "LHIF": 2, "IQA": 8, "EXIN": 1},
    "test_seen": {"SHIF": 2, "LHIF": 2, "IQA": 8, "EXIN": 2},
    "test_unseen": {"SHIF": 2, "LHIF": 2, "IQA": 8, "EXIN": 2},
}


@pytest.fixture(scope="module")
def small_splits():
    return build_splits(TEMPLATES_ALL, counts=SMALL_COUNTS, seed=21)


def test_splits_deterministic(small_splits):
    again = build_splits(TEMPLATES_ALL, counts=SMALL_COUNTS, seed=21)
    for a, b in zip(small_splits, again):
        assert split_content_hash(a) == split_content_hash(b)


def test_unseen_templates_disjoint(small_splits):
    train = next(s for s in small_splits if s.name == "train")
    unseen = next(s for s in small_splits if s.name == "test_unseen")
    train_scenes = {e.scene_template_id for e in train.episodes}
    unseen_scenes = {e.scene_template_id for e in unseen.episodes}
    assert not (train_scenes & unseen_scenes)
    assert unseen_scenes <= set(t["template_id"] for t in TEMPLATES_ALL[-2:])


def test_iqa_balance_within_one(small_splits):
    for split in small_splits:
        cells = {}
        for e in split.episodes:
            if e.family != "IQA":
                continue
            key = (e.task_type, e.instruction.split("{")[0][:12], e.answer)
            # balance is per (surface template, answer): reconstruct the
            # form index from the instruction shape
            cells.setdefault((e.task_type, e.answer), 0)
            cells[(e.task_type, e.answer)] += 1
        per_type = {}
        for (tt, ans), n in cells.items():
            per_type.setdefault(tt, []).append(n)
        for tt, ns in per_type.items():
            assert max(ns) - min(ns) <= 1, (split.name, tt, ns)


def test_desk_scale_counts_preserve_proportions():
    counts = desk_split_counts(30)
    train = counts["train"]
    total = sum(train.values())
    paper_total = sum(FULL_SPLIT_COUNTS["train"].values())
    for fam, n in FULL_SPLIT_COUNTS["train"].items():
        assert abs(train[fam] / total - n / paper_total) < 0.002
    # the documented ratio example: 1000-episode budget gives ~589 IQA
    assert round(1000 * 19728 / 33487) == 589


def test_split_reserved_templates_guard():
    with pytest.raises(InsufficientScenes):
        build_splits(TEMPLATES_ALL[:1], counts=SMALL_COUNTS, seed=0)


def test_splits_roundtrip_and_soundness(small_splits, tmp_path):
    write_splits(small_splits, tmp_path)
    loaded = load_split(tmp_path / "train.jsonl", "train")
    assert len(loaded.episodes) == len(small_splits[0].episodes)
    # every generated episode is expert-verified at generation; replay a few
    for task in loaded.episodes[:10]:
        ok, _ = verify_episode(task, TBY)
        assert ok


def test_shif_precondition_initialized(small_splits):
    train = next(s for s in small_splits if s.name == "train")
    for e in train.episodes:
        if e.family != "SHIF":
            continue
        state = task_initial_state(e, TBY[e.scene_template_id])
        assert state.agent.held == e.target_iid  # pre-condition fulfilled


def test_tokenizer_and_vocab():
    toks = tokenize("Is the fridge open?")
    assert toks == ["is", "the", "fridge", "open"]
    vocab = build_vocab(REG)
    assert vocab["<pad>"] == 0 and vocab["<unk>"] == 1
    for t in toks:
        assert t in vocab
    assert "diningtable" in vocab
