"""Expert planner: BFS optimality vs an independent oracle, scripts,
recovery rules, label consistency."""

from __future__ import annotations

from collections import deque

import numpy as np
import pytest

from gridhouse import world as W
from gridhouse.planner import (ExpertController, Irrecoverable, Plan,
                               Unreachable, WrongEffect, expert_action,
                               recover, shortest_path, single_subgoal_stream)
from gridhouse.scenes import template_by_id
from gridhouse.skills import Skill, SubGoal, sample_skill_episode, skill_success
from gridhouse.world import (Heading, InteractionMode, Openness,
                             PrimitiveAction, cached_geometry, cached_render,
                             randomize_scene, step)

from conftest import REG, make_state


# --------------------------------------------------------------------------
# independent BFS oracle (dict-based, own successor code)


def oracle_bfs_length(state, target_class):
    geom = cached_geometry(state)
    cells = []
    for o in state.instances_of(target_class):
        cells.extend(geom.display_cells.get(o.instance_id, []))
    if not cells:
        return None
    cfg = state.config

    def is_goal(pose):
        ax, ay = pose.cell
        near = any((cx - ax) ** 2 + (cy - ay) ** 2 <= cfg.interaction_range ** 2
                   for cx, cy in cells)
        if not near:
            return False
        return any(W.cell_visible_from(geom, cfg, pose, c) for c in cells)

    start = (state.agent.cell, int(state.agent.heading), state.agent.pitch)
    if is_goal(W.AgentPose(cell=start[0], heading=Heading(start[1]), pitch=start[2])):
        return 0
    seen = {start}
    frontier = deque([(start, 0)])
    while frontier:
        ((x, y), h, p), depth = frontier.popleft()
        nxt = []
        fx, fy = W.HEADING_VEC[Heading(h)]
        if 0 <= x + fx < state.width and 0 <= y + fy < state.height and \
                not geom.blocked[y + fy, x + fx]:
            nxt.append(((x + fx, y + fy), h, p))
        nxt.append(((x, y), (h - 1) % 4, p))
        nxt.append(((x, y), (h + 1) % 4, p))
        if p < 1:
            nxt.append(((x, y), h, p + 1))
        if p > -1:
            nxt.append(((x, y), h, p - 1))
        for node in nxt:
            if node in seen:
                continue
            seen.add(node)
            pose = W.AgentPose(cell=node[0], heading=Heading(node[1]), pitch=node[2])
            if is_goal(pose):
                return depth + 1
            frontier.append((node, depth + 1))
    return None


def test_shortest_path_already_at_goal_is_done():
    state = make_state([{"class": "Apple", "pos": (5, 6)}], agent_cell=(5, 8))
    assert shortest_path(state, REG.id_of("Apple")) == [PrimitiveAction.Done]


def test_shortest_path_three_ahead_is_move_done():
    state = make_state([{"class": "Apple", "pos": (5, 5)}], agent_cell=(5, 8))
    assert shortest_path(state, REG.id_of("Apple")) == \
        [PrimitiveAction.MoveAhead, PrimitiveAction.Done]


def test_shortest_path_matches_oracle_on_random_scenes():
    for seed in range(6):
        state = randomize_scene(template_by_id("kitchen_c"), 40 + seed)
        for cls_name in ("Apple", "Fridge", "Sink", "Knife", "DiningTable"):
            cid = REG.id_of(cls_name)
            want = oracle_bfs_length(state, cid)
            if want is None:
                with pytest.raises(Unreachable):
                    shortest_path(state, cid)
                continue
            got = shortest_path(state, cid)
            assert len(got) - 1 == want, f"{cls_name} seed={seed}"


def test_shortest_path_unreachable():
    state = make_state([])
    with pytest.raises(Unreachable):
        shortest_path(state, REG.id_of("Apple"))


def test_expert_action_open_fridge_in_range():
    state = make_state([{"class": "Fridge", "pos": (4, 6),
                         "openness": Openness.CLOSED}], agent_cell=(5, 8))
    action, point = expert_action(state, SubGoal(Skill.Open, REG.id_of("Fridge")))
    assert action is PrimitiveAction.Open and point is not None
    # the point resolves to the fridge in hard mode
    obs = cached_render(state)
    got = W.resolve_target(state, obs, point, InteractionMode.HARD)
    assert got == 0


def test_expert_action_goto_midroute_is_bfs_move():
    state = make_state([{"class": "Apple", "pos": (5, 3)}], agent_cell=(5, 8))
    action, point = expert_action(state, SubGoal(Skill.GoTo, REG.id_of("Apple")))
    assert action is PrimitiveAction.MoveAhead and point is None


def test_expert_action_answer_is_done():
    state = make_state([])
    assert expert_action(state, SubGoal(Skill.Answer)) == (PrimitiveAction.Done, None)


def test_expert_point_centroid_snaps_to_target():
    state = make_state([{"class": "Fridge", "pos": (4, 6)},
                        {"class": "Apple", "pos": (6, 7)}], agent_cell=(5, 8))
    obs = cached_render(state)
    from gridhouse.planner import expert_point
    for mode in (InteractionMode.HARD, InteractionMode.STANDARD):
        pt = expert_point(state, obs, 1, mode)
        assert W.resolve_target(state, obs, pt, mode) == 1, mode


# --------------------------------------------------------------------------
# recovery


def _orange_pickup_effect(state):
    obs = cached_render(state)
    ocell = obs.visible_instance_cells()[1][0]
    after, res = step(state, PrimitiveAction.Pickup,
                      (ocell[0] + .5, ocell[1] + .5), InteractionMode.HARD)
    assert res.success and res.target == 1
    return after, WrongEffect(action=PrimitiveAction.Pickup, target=1,
                              prior_container=state.obj(1).container,
                              held_before=None)


def test_recover_wrong_pickup_returns_to_source_container():
    state = make_state([
        {"class": "GarbageCan", "pos": (5, 6)},
        {"class": "Orange", "pos": None, "container": 0},
        {"class": "Apple", "pos": (4, 7)},
    ], agent_cell=(5, 7))
    after, effect = _orange_pickup_effect(state)
    plan = Plan(subgoals=[SubGoal(Skill.Pickup, REG.id_of("Apple")),
                          SubGoal(Skill.End)])
    new = recover(plan, effect, after)
    assert new.subgoals[0] == SubGoal(Skill.Put, REG.id_of("GarbageCan"))
    assert new.target_hints[0] == 0
    assert new.subgoals[1].skill is Skill.Pickup  # resumed after restitution


def test_recover_wrong_open_inserts_close():
    state = make_state([{"class": "Cabinet", "pos": (4, 6),
                         "openness": Openness.OPEN}], agent_cell=(5, 8))
    effect = WrongEffect(action=PrimitiveAction.Open, target=0)
    plan = Plan(subgoals=[SubGoal(Skill.GoTo, REG.id_of("Apple")), SubGoal(Skill.End)])
    new = recover(plan, effect, state)
    assert new.subgoals[0] == SubGoal(Skill.Close, REG.id_of("Cabinet"))


def test_recover_wrong_slice_is_irrecoverable():
    state = make_state([{"class": "Bread", "pos": (5, 7), "sliced": True}],
                       agent_cell=(5, 8))
    effect = WrongEffect(action=PrimitiveAction.Slice, target=0)
    with pytest.raises(Irrecoverable):
        recover(Plan(subgoals=[SubGoal(Skill.End)]), effect, state)


def test_controller_recovers_from_injected_wrong_pickup():
    # expert wants the apple; we force-pick the orange first; the label
    # stream must contain the restitution Put before the resumed Pickup
    state = make_state([
        {"class": "GarbageCan", "pos": (5, 6)},
        {"class": "Orange", "pos": None, "container": 0},
        {"class": "Apple", "pos": (4, 6)},
    ], agent_cell=(5, 7))
    sub = SubGoal(Skill.Pickup, REG.id_of("Apple"))
    controller = ExpertController(state, single_subgoal_stream(sub, state),
                                  InteractionMode.HARD)
    ex = controller.expert_action(state)
    assert ex.action is PrimitiveAction.Pickup and ex.target == 2
    obs = cached_render(state)
    ocell = obs.visible_instance_cells()[1][0]
    after, res = step(state, PrimitiveAction.Pickup,
                      (ocell[0] + .5, ocell[1] + .5), InteractionMode.HARD)
    controller.observe(state, PrimitiveAction.Pickup, res, after, ex)
    labels = []
    cur = after
    for _ in range(30):
        ex = controller.expert_action(cur)
        labels.append(ex.subgoal)
        new, res = step(cur, ex.action, ex.point, InteractionMode.HARD)
        assert res.success
        controller.observe(cur, ex.action, res, new, ex)
        cur = new
        if ex.subgoal.skill is Skill.End:
            break
    names = [(s.skill, s.object_class) for s in labels]
    put_at = names.index((Skill.Put, REG.id_of("GarbageCan")))
    pick_at = names.index((Skill.Pickup, REG.id_of("Apple")))
    assert put_at < pick_at
    assert cur.agent.held == 2          # apple finally in hand
    assert cur.obj(1).container == 0    # orange restored


def test_label_consistency_on_sampled_skill_episodes():
    # expert actions never fail from any reachable state
    rng = np.random.default_rng(3)
    for seed in range(3):
        state = randomize_scene(template_by_id("kitchen_d"), 60 + seed)
        for _ in range(8):
            ep = sample_skill_episode(state, rng)
            controller = ExpertController(
                ep.initial_state, single_subgoal_stream(ep.subgoal, ep.initial_state),
                InteractionMode.HARD)
            cur = ep.initial_state
            for _t in range(ep.max_steps):
                ex = controller.expert_action(cur)
                new, res = step(cur, ex.action, ex.point, InteractionMode.HARD)
                assert res.success, (ep.subgoal, ex.action, res.reason)
                controller.observe(cur, ex.action, res, new, ex)
                cur = new
                if skill_success(ep.subgoal, ep.initial_state, cur) or \
                        (ex.action is PrimitiveAction.Done and
                         ex.subgoal.skill is Skill.End):
                    break
