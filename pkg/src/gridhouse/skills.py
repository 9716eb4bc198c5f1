"""Skill vocabulary, per-skill success predicates, pre-training sampler."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from . import world as W
from .world import (Cleanliness, Openness, Power, PrimitiveAction, WorldState,
                    build_geometry, cached_geometry, instance_distance,
                    is_visible)


class Skill(IntEnum):
    GoTo = 0
    Pickup = 1
    Put = 2
    ToggleOn = 3
    ToggleOff = 4
    Open = 5
    Close = 6
    Slice = 7
    Answer = 8
    End = 9


NO_OBJECT_SKILLS = frozenset({Skill.Answer, Skill.End})
INTERACTION_SKILLS = (Skill.Pickup, Skill.Put, Skill.ToggleOn, Skill.ToggleOff,
                      Skill.Open, Skill.Close, Skill.Slice)
PRETRAIN_SKILLS = (Skill.GoTo,) + INTERACTION_SKILLS

SKILL_PRIMITIVE = {
    Skill.Pickup: PrimitiveAction.Pickup,
    Skill.Put: PrimitiveAction.Put,
    Skill.ToggleOn: PrimitiveAction.ToggleOn,
    Skill.ToggleOff: PrimitiveAction.ToggleOff,
    Skill.Open: PrimitiveAction.Open,
    Skill.Close: PrimitiveAction.Close,
    Skill.Slice: PrimitiveAction.Slice,
}


class NoFeasibleSkill(RuntimeError):
    pass


@dataclass(frozen=True)
class SubGoal:
    skill: Skill
    object_class: int | None = None

    def __post_init__(self):
        if self.skill in NO_OBJECT_SKILLS:
            if self.object_class is not None:
                raise ValueError(f"{self.skill.name} takes no target object")
        elif self.object_class is None:
            raise ValueError(f"{self.skill.name} requires a target object class")

    def describe(self, registry) -> str:
        if self.object_class is None:
            return self.skill.name
        return f"{self.skill.name} {registry[self.object_class].name}"


def joint_space_size(num_classes: int) -> int:
    """Skills with objects times C, plus the two object-free skills."""
    return (len(Skill) - len(NO_OBJECT_SKILLS)) * num_classes + len(NO_OBJECT_SKILLS)


# --------------------------------------------------------------------------
# success predicates


def skill_success(subgoal: SubGoal, before: WorldState, after: WorldState,
                  answer=None, expected_answer=None) -> bool:
    if subgoal.skill is Skill.End:
        raise ValueError("End has no success predicate")
    if subgoal.skill is Skill.Answer:
        return answer is not None and answer == expected_answer

    cls_id = subgoal.object_class
    geom = cached_geometry(after)
    rng_limit = after.config.interaction_range

    def in_range(o):
        return instance_distance(after, geom, o.instance_id) <= rng_limit

    if subgoal.skill is Skill.GoTo:
        return any(in_range(o) and is_visible(after, o.instance_id, geom)
                   for o in after.instances_of(cls_id))

    if subgoal.skill is Skill.Pickup:
        held = after.held_object()
        return held is not None and held.class_id == cls_id

    if subgoal.skill is Skill.Put:
        if before.agent.held is None:
            return False
        moved = after.obj(before.agent.held)
        if moved.container is None:
            return False
        return after.obj(moved.container).class_id == cls_id

    if subgoal.skill is Skill.Slice:
        for o in after.instances_of(cls_id):
            if o.sliced and before.has(o.instance_id) and not before.obj(o.instance_id).sliced:
                return True
        return False

    goal_attr = {
        Skill.ToggleOn: ("power", Power.ON),
        Skill.ToggleOff: ("power", Power.OFF),
        Skill.Open: ("openness", Openness.OPEN),
        Skill.Close: ("openness", Openness.CLOSED),
    }[subgoal.skill]
    attr, want = goal_attr
    for o in after.instances_of(cls_id):
        if getattr(o, attr) is not want or not in_range(o):
            continue
        if before.has(o.instance_id) and getattr(before.obj(o.instance_id), attr) is not want:
            return True
    return False


# --------------------------------------------------------------------------
# episode sampling


@dataclass
class SkillEpisode:
    initial_state: WorldState
    subgoal: SubGoal
    max_steps: int
    preconditions_applied: list = field(default_factory=list)


@dataclass
class SamplerConfig:
    teleport_radius: int = 3
    nav_max_steps: int = 60
    interact_max_steps: int = 20


def _teleport_poses(state, geom, target_iid):
    """Traversable poses near the target with the target in view."""
    cells = geom.display_cells.get(target_iid, [])
    cfg = state.config
    out = []
    seen = set()
    for (cx, cy) in cells:
        for dx in range(-3, 4):
            for dy in range(-3, 4):
                p = (cx + dx, cy + dy)
                if p in seen:
                    continue
                seen.add(p)
                if not (0 <= p[0] < state.width and 0 <= p[1] < state.height):
                    continue
                if geom.blocked[p[1], p[0]]:
                    continue
                for h in W.Heading:
                    pose = W.AgentPose(cell=p, heading=h, pitch=0)
                    if any(W.cell_visible_from(geom, cfg, pose, c) for c in cells):
                        out.append(pose)
                        break
    out.sort(key=lambda pose: (pose.cell, int(pose.heading)))
    return out


def _hold(state, iid):
    obj = state.obj(iid)
    new = state.with_object(replace(obj, anchor=None, container=None))
    return replace(new, agent=replace(new.agent, held=iid))


def _feasible_pairs(state, geom):
    """(skill, class_id, target_iid) candidates before teleports/preconditions."""
    reg = state.registry
    pairs = []
    slicers = [o for o in state.objects if reg[o.class_id].slicer]
    pickupables = [o for o in state.objects
                   if reg[o.class_id].pickupable and o.instance_id in geom.display_cells]
    for o in state.objects:
        cls = reg[o.class_id]
        displayed = o.instance_id in geom.display_cells
        if displayed:
            pairs.append((Skill.GoTo, o.class_id, o.instance_id))
        if cls.pickupable and displayed:
            pairs.append((Skill.Pickup, o.class_id, o.instance_id))
            if slicers and cls.sliceable and not o.sliced:
                pairs.append((Skill.Slice, o.class_id, o.instance_id))
        if cls.receptacle and displayed and pickupables:
            pairs.append((Skill.Put, o.class_id, o.instance_id))
        # state-change skills are plausible only when the current state is
        # the goal state's opposite
        if cls.toggleable:
            if o.power is Power.OFF:
                pairs.append((Skill.ToggleOn, o.class_id, o.instance_id))
            elif o.power is Power.ON:
                pairs.append((Skill.ToggleOff, o.class_id, o.instance_id))
        if cls.enclosed:
            if o.openness is Openness.CLOSED:
                pairs.append((Skill.Open, o.class_id, o.instance_id))
            elif o.openness is Openness.OPEN:
                pairs.append((Skill.Close, o.class_id, o.instance_id))
    return pairs


def sample_skill_episode(state: WorldState, rng: np.random.Generator,
                         cfg: SamplerConfig | None = None,
                         skills=PRETRAIN_SKILLS) -> SkillEpisode:
    """Uniform draw over feasible skill-object pairs.

    Interaction episodes teleport the agent near the target; state-change
    skills start from the opposite state; precondition objects (held item
    for Put, a slicer for Slice) are placed in hand.
    """
    cfg = cfg or SamplerConfig()
    geom = cached_geometry(state)
    pairs = [p for p in _feasible_pairs(state, geom) if p[0] in skills]
    order = rng.permutation(len(pairs))
    for k in order:
        skill, cls_id, iid = pairs[int(k)]
        episode = _build_episode(state, geom, rng, cfg, skill, cls_id, iid)
        if episode is not None:
            return episode
    raise NoFeasibleSkill("no feasible skill-object pair in scene")


def _build_episode(state, geom, rng, cfg, skill, cls_id, iid):
    from . import planner  # full-state expert; deferred to avoid an import cycle

    pre = []
    s = replace(state, agent=replace(state.agent, held=None, pitch=0))
    held_before = state.agent.held
    if held_before is not None:
        # return whatever was in hand to a receptacle slot before sampling
        s = _drop_to_any_receptacle(s, held_before)
        if s is None:
            return None
        pre.append(("dropped_held", held_before))

    target = s.obj(iid)
    reg = s.registry

    if skill in (Skill.Open, Skill.Close):
        want = Openness.CLOSED if skill is Skill.Open else Openness.OPEN
        if target.openness is not want:
            return None  # pair was enumerated from a stale state
    elif skill in (Skill.ToggleOn, Skill.ToggleOff):
        want = Power.OFF if skill is Skill.ToggleOn else Power.ON
        if target.power is not want:
            return None
    elif skill is Skill.Put:
        choices = [o for o in s.objects
                   if reg[o.class_id].pickupable and o.instance_id != iid
                   and o.instance_id in geom.display_cells
                   and not _inside(s, o.instance_id, iid)]
        if not choices:
            return None
        pick = choices[int(rng.integers(len(choices)))]
        s = _hold(s, pick.instance_id)
        pre.append(("held", pick.instance_id))
        if reg[target.class_id].enclosed and s.obj(iid).openness is not Openness.OPEN:
            s = s.with_object(replace(s.obj(iid), openness=Openness.OPEN))
            pre.append(("openness", iid, "open"))
        if len(s.contents_of(iid)) >= W.capacity(s.obj(iid)):
            return None
    elif skill is Skill.Slice:
        if target.sliced:
            return None
        slicers = [o for o in s.objects if reg[o.class_id].slicer
                   and o.instance_id != iid]
        if not slicers:
            return None
        knife = slicers[int(rng.integers(len(slicers)))]
        s = _hold(s, knife.instance_id)
        pre.append(("held", knife.instance_id))

    geom2 = build_geometry(s)
    if iid not in geom2.display_cells:
        return None

    if skill is Skill.GoTo:
        free = [(x, y) for y in range(1, s.height - 1) for x in range(1, s.width - 1)
                if not geom2.blocked[y, x]]
        if not free:
            return None
        cell = free[int(rng.integers(len(free)))]
        heading = W.Heading(int(rng.integers(4)))
        s = replace(s, agent=replace(s.agent, cell=cell, heading=heading, pitch=0))
        try:
            planner.shortest_path_to_instance(s, iid)
        except planner.Unreachable:
            return None
        return SkillEpisode(s, SubGoal(skill, cls_id), cfg.nav_max_steps, pre)

    poses = _teleport_poses(s, geom2, iid)
    cells = geom2.display_cells[iid]

    def chebyshev(pose):
        return min(max(abs(pose.cell[0] - cx), abs(pose.cell[1] - cy))
                   for cx, cy in cells)

    near = [p for p in poses if chebyshev(p) <= cfg.teleport_radius]
    if not near:
        return None
    pose = near[int(rng.integers(len(near)))]
    s = replace(s, agent=replace(s.agent, cell=pose.cell, heading=pose.heading, pitch=0))
    return SkillEpisode(s, SubGoal(skill, cls_id), cfg.interact_max_steps, pre)


def _inside(state, container_candidate, item):
    cur = state.obj(item).container
    seen = set()
    while cur is not None and cur not in seen:
        if cur == container_candidate:
            return True
        seen.add(cur)
        cur = state.obj(cur).container
    return False


def _drop_to_any_receptacle(state, iid):
    for r in state.objects:
        if not r.is_receptacle or r.anchor is None:
            continue
        if state.cls(r).enclosed and r.openness is not Openness.OPEN:
            continue
        if len(state.contents_of(r.instance_id)) >= W.capacity(r):
            continue
        new = state.with_object(replace(state.obj(iid), anchor=None,
                                        container=r.instance_id))
        return replace(new, agent=replace(new.agent, held=None))
    return None


# --------------------------------------------------------------------------
# scene sessions and periodic reset


class SceneSession:
    """One worker's environment handle: scene template(s) + a seed stream.

    A template list is cycled across resets so a worker sees every
    training layout."""

    def __init__(self, template, seed, registry=None, config=None):
        self.templates = template if isinstance(template, list) else [template]
        self.registry = registry
        self.config = config
        self._seeds = np.random.SeedSequence(seed)
        self.scene_count = 0
        self.state = None
        self.reset_scene()

    @property
    def template(self):
        return self.templates[(self.scene_count - 1) % len(self.templates)]

    def template_for_next(self):
        return self.templates[self.scene_count % len(self.templates)]

    def reset_scene(self):
        child = self._seeds.spawn(1)[0]
        seed = int(child.generate_state(1, dtype=np.uint64)[0])
        template = self.templates[self.scene_count % len(self.templates)]
        self.state = W.randomize_scene(template, seed,
                                       registry=self.registry, config=self.config)
        self.scene_count += 1
        return self.state


def periodic_reset(session: SceneSession, episode_counter: int, period: int) -> SceneSession:
    """Re-randomize the scene every `period` episodes."""
    if period < 1:
        raise ValueError("period must be >= 1")
    if episode_counter % period == 0:
        session.reset_scene()
    return session
