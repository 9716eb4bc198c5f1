"""Full-state expert: BFS navigation, per-sub-goal scripts, recovery.

The expert reads WorldState directly (the learned agent never does).  It
serves per-step labels (a*, p*) for imitation, and the ExpertController
additionally monitors executed interactions so a wrong one can be undone
by inserting a reversing sub-goal.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import world as W
from .skills import (INTERACTION_SKILLS, SKILL_PRIMITIVE, Skill, SubGoal,
                     skill_success)
from .world import (AgentPose, Heading, InteractionMode, Openness, Power,
                    PrimitiveAction, WorldState, build_geometry,
                    cached_geometry, cached_render, cell_visible_from,
                    instance_distance, render)


class Unreachable(RuntimeError):
    pass


class InfeasibleSubgoal(RuntimeError):
    pass


class Irrecoverable(RuntimeError):
    pass


# --------------------------------------------------------------------------
# navigation BFS over (cell, heading, pitch)


def _goal_test(state, geom, pose, cells):
    cfg = state.config
    ax, ay = pose.cell
    near = min(abs(cx - ax) + abs(cy - ay) for cx, cy in cells) if cells else 99
    if near > cfg.interaction_range + 1:
        return False
    if not any((cx - ax) ** 2 + (cy - ay) ** 2 <= cfg.interaction_range ** 2
               for cx, cy in cells):
        return False
    return any(cell_visible_from(geom, cfg, pose, c) for c in cells)


def _bfs(state, geom, cells):
    """Minimal primitive sequence to a pose seeing a target cell in range."""
    start = (state.agent.cell, state.agent.heading, state.agent.pitch)

    def pose_of(node):
        return AgentPose(cell=node[0], heading=node[1], pitch=node[2])

    if _goal_test(state, geom, pose_of(start), cells):
        return []
    seen = {start}
    queue = deque([(start, [])])
    while queue:
        node, path = queue.popleft()
        (x, y), heading, pitch = node
        succs = []
        fx, fy = W.HEADING_VEC[heading]
        nx, ny = x + fx, y + fy
        if 0 <= nx < state.width and 0 <= ny < state.height and not geom.blocked[ny, nx]:
            succs.append((PrimitiveAction.MoveAhead, ((nx, ny), heading, pitch)))
        succs.append((PrimitiveAction.RotateLeft, ((x, y), Heading((heading - 1) % 4), pitch)))
        succs.append((PrimitiveAction.RotateRight, ((x, y), Heading((heading + 1) % 4), pitch)))
        if pitch < 1:
            succs.append((PrimitiveAction.LookUp, ((x, y), heading, pitch + 1)))
        if pitch > -1:
            succs.append((PrimitiveAction.LookDown, ((x, y), heading, pitch - 1)))
        for action, nxt in succs:
            if nxt in seen:
                continue
            seen.add(nxt)
            npath = path + [action]
            if _goal_test(state, geom, pose_of(nxt), cells):
                return npath
            queue.append((nxt, npath))
    raise Unreachable("no pose sees the target in range")


def shortest_path_to_instance(state: WorldState, instance_id,
                              geom=None) -> list[PrimitiveAction]:
    geom = geom or build_geometry(state)
    cells = geom.display_cells.get(instance_id)
    if not cells:
        raise Unreachable(f"instance {instance_id} is not displayed anywhere")
    return _bfs(state, geom, cells) + [PrimitiveAction.Done]


def shortest_path(state: WorldState, target_class, geom=None) -> list[PrimitiveAction]:
    """Minimal action sequence ending with some instance of the class
    visible and in interaction range, terminated by Done."""
    geom = geom or build_geometry(state)
    cells = []
    for o in state.instances_of(target_class):
        cells.extend(geom.display_cells.get(o.instance_id, []))
    if not cells:
        raise Unreachable(f"no displayed instance of class {target_class}")
    return _bfs(state, geom, cells) + [PrimitiveAction.Done]


# --------------------------------------------------------------------------
# target selection and expert points


def _applicable(state, geom, skill, obj) -> bool:
    cls = state.cls(obj)
    displayed = obj.instance_id in geom.display_cells
    if skill is Skill.GoTo:
        return displayed
    if skill is Skill.Pickup:
        return displayed and cls.pickupable
    if skill is Skill.Put:
        if not obj.is_receptacle or not displayed:
            return False
        held = state.agent.held
        if held is None or held == obj.instance_id:
            return False
        cur, seen = obj.container, set()
        while cur is not None and cur not in seen:
            if cur == held:
                return False  # would nest the target inside the held object
            seen.add(cur)
            cur = state.obj(cur).container
        return len(state.contents_of(obj.instance_id)) < W.capacity(obj)
    if skill is Skill.ToggleOn:
        return obj.power is Power.OFF
    if skill is Skill.ToggleOff:
        return obj.power is Power.ON
    if skill is Skill.Open:
        return obj.openness is Openness.CLOSED
    if skill is Skill.Close:
        return obj.openness is Openness.OPEN
    if skill is Skill.Slice:
        held = state.held_object()
        return (displayed and cls.sliceable and not obj.sliced
                and held is not None and state.cls(held).slicer)
    return False


def select_target(state: WorldState, geom, subgoal: SubGoal):
    """Nearest applicable instance of the sub-goal's class."""
    cands = [o for o in state.instances_of(subgoal.object_class)
             if _applicable(state, geom, subgoal.skill, o)
             and o.instance_id in geom.display_cells]
    if not cands:
        raise InfeasibleSubgoal(subgoal.skill.name)
    return min(cands, key=lambda o: (instance_distance(state, geom, o.instance_id),
                                     o.instance_id)).instance_id


def expert_point(state: WorldState, obs, target_iid, mode: InteractionMode):
    """Ground-truth interaction point: the centroid of the target's visible
    cells, snapped into the cell (nearest the centroid) that actually
    resolves to the target in the given mode."""
    cells = obs.visible_instance_cells().get(target_iid)
    if not cells:
        return None
    cx = sum(c[0] + 0.5 for c in cells) / len(cells)
    cy = sum(c[1] + 0.5 for c in cells) / len(cells)
    geom = cached_geometry(state)
    order = sorted(cells, key=lambda c: (c[0] + 0.5 - cx) ** 2 + (c[1] + 0.5 - cy) ** 2)
    for cell in order:
        pt = (cell[0] + 0.5, cell[1] + 0.5)
        if W.resolve_target(state, obs, pt, mode, geom) == target_iid:
            return pt
    return (order[0][0] + 0.5, order[0][1] + 0.5)


def _predict_pose(state, action):
    """Agent pose after a navigation action (for nav-cache validation)."""
    pose = state.agent
    if action is PrimitiveAction.MoveAhead:
        fx, fy = W.HEADING_VEC[pose.heading]
        return replace(pose, cell=(pose.cell[0] + fx, pose.cell[1] + fy))
    if action is PrimitiveAction.RotateLeft:
        return replace(pose, heading=Heading((pose.heading - 1) % 4))
    if action is PrimitiveAction.RotateRight:
        return replace(pose, heading=Heading((pose.heading + 1) % 4))
    if action is PrimitiveAction.LookUp:
        return replace(pose, pitch=pose.pitch + 1)
    if action is PrimitiveAction.LookDown:
        return replace(pose, pitch=pose.pitch - 1)
    return pose


def _script_step(state, geom, obs, subgoal, target_iid, mode, store=None):
    """Next primitive (+ point) advancing the sub-goal for a pinned target.

    `store`, when given, receives the full BFS action tail so callers can
    replay it without replanning while the trajectory stays on-script.
    """
    cfg = state.config
    if subgoal.skill in (Skill.Answer, Skill.End):
        return (PrimitiveAction.Done, None)
    cells = geom.display_cells.get(target_iid)
    if not cells:
        raise InfeasibleSubgoal(f"target {target_iid} not displayed")
    pose = state.agent
    reachable = (_goal_test(state, geom, pose, cells)
                 and instance_distance(state, geom, target_iid) <= cfg.interaction_range)
    if subgoal.skill is Skill.GoTo:
        path = _bfs(state, geom, cells)
        if path and store is not None:
            store(path)
        return (path[0], None) if path else (PrimitiveAction.Done, None)
    if not reachable:
        path = _bfs(state, geom, cells)
        if not path:
            raise InfeasibleSubgoal("goal test and reachability disagree")
        if store is not None:
            store(path)
        return (path[0], None)
    target = state.obj(target_iid)
    if (subgoal.skill is Skill.Put and state.cls(target).enclosed
            and target.openness is not Openness.OPEN):
        return (PrimitiveAction.Open, expert_point(state, obs, target_iid, mode))
    return (SKILL_PRIMITIVE[subgoal.skill], expert_point(state, obs, target_iid, mode))


def expert_action(state: WorldState, subgoal: SubGoal,
                  mode: InteractionMode = InteractionMode.HARD,
                  geom=None, obs=None):
    """Next expert primitive and ground-truth point for a sub-goal."""
    geom = geom or cached_geometry(state)
    obs = obs or cached_render(state)
    if subgoal.skill in (Skill.Answer, Skill.End):
        return (PrimitiveAction.Done, None)
    target = select_target(state, geom, subgoal)
    return _script_step(state, geom, obs, subgoal, target, mode)


# --------------------------------------------------------------------------
# plans and recovery


@dataclass(frozen=True)
class WrongEffect:
    action: PrimitiveAction
    target: int
    prior_container: int | None = None
    held_before: int | None = None


@dataclass
class Plan:
    subgoals: list
    cursor: int = 0
    target_hints: dict = field(default_factory=dict)  # index -> instance id

    def current(self):
        return self.subgoals[self.cursor] if self.cursor < len(self.subgoals) else None


REVERSAL = {
    PrimitiveAction.Open: Skill.Close,
    PrimitiveAction.Close: Skill.Open,
    PrimitiveAction.ToggleOn: Skill.ToggleOff,
    PrimitiveAction.ToggleOff: Skill.ToggleOn,
}


def _reversal_subgoal(effect: WrongEffect, state: WorldState, pending_classes):
    """(SubGoal, target instance) undoing a wrong interaction."""
    if effect.action is PrimitiveAction.Slice:
        raise Irrecoverable("sliced the wrong object")
    if effect.action is PrimitiveAction.Pickup:
        dest = _restitution_receptacle(state, effect, pending_classes)
        return SubGoal(Skill.Put, state.obj(dest).class_id), dest
    if effect.action is PrimitiveAction.Put:
        return SubGoal(Skill.Pickup, state.obj(effect.held_before).class_id), \
            effect.held_before
    skill = REVERSAL[effect.action]
    return SubGoal(skill, state.obj(effect.target).class_id), effect.target


def recover(plan: Plan, effect: WrongEffect, state: WorldState) -> Plan:
    """Insert the sub-goal that reverses a wrong interaction before the
    current one.  Slicing the wrong object cannot be undone."""
    pending = {sg.object_class for sg in plan.subgoals[plan.cursor:]
               if sg.object_class is not None}
    sub, hint = _reversal_subgoal(effect, state, pending)
    subgoals = list(plan.subgoals)
    subgoals.insert(plan.cursor, sub)
    hints = {(i + 1 if i >= plan.cursor else i): v
             for i, v in plan.target_hints.items()}
    hints[plan.cursor] = hint
    return Plan(subgoals=subgoals, cursor=plan.cursor, target_hints=hints)


def _restitution_receptacle(state, effect, pending_classes):
    """Where to put back a wrongly picked object: its previous container,
    else the nearest free receptacle whose class the remaining plan does
    not need (so restitution never eats capacity the task requires)."""
    if effect.prior_container is not None and state.has(effect.prior_container):
        prior = state.obj(effect.prior_container)
        ok = len(state.contents_of(prior.instance_id)) < W.capacity(prior)
        if prior.is_receptacle and ok:
            if not (state.cls(prior).enclosed and prior.openness is not Openness.OPEN):
                return prior.instance_id
    geom = cached_geometry(state)
    cands = []
    for o in state.objects:
        if not o.is_receptacle or o.anchor is None:
            continue
        if state.cls(o).enclosed and o.openness is not Openness.OPEN:
            continue
        if len(state.contents_of(o.instance_id)) >= W.capacity(o):
            continue
        cands.append((o.class_id in pending_classes,
                      instance_distance(state, geom, o.instance_id), o.instance_id))
    if not cands:
        raise Irrecoverable("nowhere to return the wrongly picked object")
    return min(cands)[2]


# --------------------------------------------------------------------------
# controller


@dataclass(frozen=True)
class ExpertStep:
    subgoal: SubGoal
    action: PrimitiveAction
    point: tuple | None
    target: int | None


def _norm_item(item):
    return item if isinstance(item, tuple) else (item, None)


class ExpertController:
    """Serves per-step expert labels for a dynamic sub-goal stream and
    watches executed interactions, inserting reversing sub-goals when the
    agent's interaction diverges from the expert's.

    `remaining_fn(state)` must be Markovian: it returns the sub-goals
    (optionally `(SubGoal, target_instance)` pairs) still needed from the
    given state, ending in End, so a recomputed head stays consistent
    after arbitrary detours.
    """

    def __init__(self, state: WorldState, remaining_fn,
                 mode: InteractionMode = InteractionMode.HARD):
        self.mode = mode
        self.remaining_fn = remaining_fn
        self.recovery: list[tuple[SubGoal, int, WorldState]] = []
        self._pinned: tuple[SubGoal, int] | None = None
        # cached tail of the current BFS script: replanning after a step the
        # plan itself predicted reproduces this suffix exactly
        self._nav: tuple | None = None  # (subgoal, hint, [actions], pose, step_count)
        self.failed = False

    def _pop_completed_recovery(self, state):
        while self.recovery:
            sub, hint, entry = self.recovery[0]
            if skill_success(sub, entry, state):
                self.recovery.pop(0)
                self._pinned = None
            else:
                return

    def _head(self, state):
        remaining = [_norm_item(i) for i in self.remaining_fn(state)]
        return remaining[0] if remaining else (SubGoal(Skill.End), None)

    def plan_view(self, state) -> Plan:
        """Snapshot of the merged recovery + task plan."""
        tail = [_norm_item(i) for i in self.remaining_fn(state)]
        subs = [r[0] for r in self.recovery] + [sub for sub, _ in tail]
        hints = {i: r[1] for i, r in enumerate(self.recovery)}
        for j, (_, hint) in enumerate(tail):
            if hint is not None:
                hints[len(self.recovery) + j] = hint
        return Plan(subgoals=subs, cursor=0, target_hints=hints)

    def current_subgoal(self, state) -> SubGoal:
        self._pop_completed_recovery(state)
        if self.recovery:
            return self.recovery[0][0]
        return self._head(state)[0]

    def _nav_cached(self, state, sub, hint):
        if self._nav is None:
            return None
        csub, chint, actions, pose, count = self._nav
        if csub != sub or chint != hint or not actions:
            return None
        if state.agent != pose or state.step_count != count:
            return None
        action = actions[0]
        self._nav = (csub, chint, actions[1:],
                     _predict_pose(state, action), count + 1)
        return action

    def _nav_store(self, state, sub, hint, actions):
        if actions:
            self._nav = (sub, hint, actions[1:],
                         _predict_pose(state, actions[0]), state.step_count + 1)
        else:
            self._nav = None

    def expert_action(self, state, geom=None, obs=None) -> ExpertStep:
        geom = geom or cached_geometry(state)
        obs = obs or cached_render(state)
        self._pop_completed_recovery(state)
        if self.recovery:
            sub, hint, _entry = self.recovery[0]
            cached = self._nav_cached(state, sub, hint)
            if cached is not None:
                return ExpertStep(sub, cached, None, hint)
            action, point = _script_step(state, geom, obs, sub, hint, self.mode,
                                         store=lambda acts: self._nav_store(state, sub, hint, acts))
            return ExpertStep(sub, action, point, hint)
        sub, hint = self._head(state)
        if sub.skill in (Skill.Answer, Skill.End):
            return ExpertStep(sub, PrimitiveAction.Done, None, None)
        if hint is None or not state.has(hint) \
                or not _applicable(state, geom, sub.skill, state.obj(hint)):
            if self._pinned is not None and self._pinned[0] == sub:
                hint = self._pinned[1]
                ok = (state.has(hint)
                      and _applicable(state, geom, sub.skill, state.obj(hint))
                      and hint in geom.display_cells)
                if not ok:
                    hint = select_target(state, geom, sub)
            else:
                hint = select_target(state, geom, sub)
        self._pinned = (sub, hint)
        cached = self._nav_cached(state, sub, hint)
        if cached is not None:
            return ExpertStep(sub, cached, None, hint)
        action, point = _script_step(state, geom, obs, sub, hint, self.mode,
                                     store=lambda acts: self._nav_store(state, sub, hint, acts))
        return ExpertStep(sub, action, point, hint)

    def observe(self, state_before, action, result, state_after,
                expected: ExpertStep):
        """Record an executed step; queue recovery if a wrong interaction
        succeeded.  Raises Irrecoverable for a wrong Slice."""
        if not result.success or action not in W.INTERACTIVE_ACTIONS:
            return
        if action == expected.action and result.target == expected.target:
            return
        prior_container = None
        if action is PrimitiveAction.Pickup and result.target is not None:
            prior_container = state_before.obj(result.target).container
        effect = WrongEffect(action=action, target=result.target,
                             prior_container=prior_container,
                             held_before=state_before.agent.held)
        pending = [sub for sub, _ in
                   (_norm_item(i) for i in self.remaining_fn(state_after))]
        pending_classes = {sg.object_class for sg in
                           pending + [r[0] for r in self.recovery]
                           if sg.object_class is not None}
        try:
            sub, hint = _reversal_subgoal(effect, state_after, pending_classes)
        except Irrecoverable:
            self.failed = True
            raise
        # entry state is post-effect: the reversal predicate compares against
        # the world as the wrong action left it
        self.recovery.insert(0, (sub, hint, state_after))
        self._pinned = None


def single_subgoal_stream(subgoal: SubGoal, initial_state: WorldState):
    """Remaining-plan callback for one-skill pre-training episodes."""

    def fn(state):
        if subgoal.skill in (Skill.Answer, Skill.End):
            return [SubGoal(Skill.End)]
        if skill_success(subgoal, initial_state, state):
            return [SubGoal(Skill.End)]
        return [subgoal, SubGoal(Skill.End)]

    return fn
