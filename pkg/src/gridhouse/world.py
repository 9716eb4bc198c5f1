"""Deterministic symbolic household simulator.

World cells are unit squares addressed (x, y) with y growing southward.
The agent observes an egocentric cell grid (default 32x32): a 16x16-cell
world window rendered at 2x2 observation cells per world cell, facing-up,
with occlusion ray casting.  Interaction points are continuous
observation coordinates resolved against the rendered instance map.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum

import numpy as np

from .classes import ClassRegistry, desk_registry

# observation class-map codes below object classes
SENTINEL = 0
FLOOR = 1
WALL = 2
CLASS_BASE = 3  # class k renders as CLASS_BASE + k
NO_INSTANCE = -1


class Heading(IntEnum):
    NORTH = 0
    EAST = 1
    SOUTH = 2
    WEST = 3


HEADING_VEC = {
    Heading.NORTH: (0, -1),
    Heading.EAST: (1, 0),
    Heading.SOUTH: (0, 1),
    Heading.WEST: (-1, 0),
}


class PrimitiveAction(IntEnum):
    MoveAhead = 0
    RotateLeft = 1
    RotateRight = 2
    LookUp = 3
    LookDown = 4
    Open = 5
    Close = 6
    Pickup = 7
    Put = 8
    ToggleOn = 9
    ToggleOff = 10
    Slice = 11
    Done = 12


NAV_ACTIONS = (PrimitiveAction.MoveAhead, PrimitiveAction.RotateLeft,
               PrimitiveAction.RotateRight, PrimitiveAction.LookUp,
               PrimitiveAction.LookDown, PrimitiveAction.Done)
INTERACTIVE_ACTIONS = frozenset({
    PrimitiveAction.Open, PrimitiveAction.Close, PrimitiveAction.Pickup,
    PrimitiveAction.Put, PrimitiveAction.ToggleOn, PrimitiveAction.ToggleOff,
    PrimitiveAction.Slice,
})


class InteractionMode(Enum):
    STANDARD = "standard"
    HARD = "hard"


class Openness(Enum):
    OPEN = "open"
    CLOSED = "closed"
    NOT_OPENABLE = "n/a"


class Power(Enum):
    ON = "on"
    OFF = "off"
    NOT_TOGGLEABLE = "n/a"


class Cleanliness(Enum):
    CLEAN = "clean"
    DIRTY = "dirty"
    NA = "n/a"


class Temperature(Enum):
    HOT = "hot"
    COLD = "cold"
    ROOM = "room"


class FailureReason(Enum):
    BLOCKED = "Blocked"
    NO_TARGET_HIT = "NoTargetHit"
    OUT_OF_RANGE = "OutOfRange"
    PRECONDITION_UNMET = "PreconditionUnmet"
    HANDS_FULL = "HandsFull"
    HANDS_EMPTY = "HandsEmpty"


class InvalidAction(Exception):
    """Interactive action issued without an interaction point."""


class UnknownInstance(KeyError):
    pass


class PlacementInfeasible(RuntimeError):
    pass


@dataclass(frozen=True)
class WorldConfig:
    obs_size: int = 32
    upsample: int = 2           # observation cells per world cell
    view_depth: int = 8         # frustum depth at pitch 0
    pitch_shift: int = 3        # band shift per pitch unit
    interaction_range: float = 2.0
    standard_box: int = 3       # Standard-mode box width, observation cells

    @property
    def window(self):
        return self.obs_size // self.upsample  # world cells per side


@dataclass(frozen=True)
class ObjectInstance:
    instance_id: int
    class_id: int
    anchor: tuple[int, int] | None   # top-level footprint anchor, or None
    container: int | None            # containing instance id, or None
    size: int = 1
    is_receptacle: bool = False
    openness: Openness = Openness.NOT_OPENABLE
    power: Power = Power.NOT_TOGGLEABLE
    cleanliness: Cleanliness = Cleanliness.NA
    sliced: bool = False
    temperature: Temperature = Temperature.ROOM


@dataclass(frozen=True)
class AgentPose:
    cell: tuple[int, int]
    heading: Heading = Heading.NORTH
    pitch: int = 0
    held: int | None = None


@dataclass(frozen=True)
class ActionResult:
    success: bool
    reason: FailureReason | None = None
    target: int | None = None


@dataclass
class WorldState:
    width: int
    height: int
    walls: np.ndarray                 # bool (height, width); treated immutable
    objects: tuple[ObjectInstance, ...]
    agent: AgentPose
    step_count: int = 0
    rng_seed: int = 0
    registry: ClassRegistry = field(default_factory=desk_registry)
    config: WorldConfig = field(default_factory=WorldConfig)

    def obj(self, instance_id) -> ObjectInstance:
        for o in self.objects:
            if o.instance_id == instance_id:
                return o
        raise UnknownInstance(instance_id)

    def has(self, instance_id) -> bool:
        return any(o.instance_id == instance_id for o in self.objects)

    def cls(self, obj_or_id):
        cid = obj_or_id.class_id if isinstance(obj_or_id, ObjectInstance) else obj_or_id
        return self.registry[cid]

    def instances_of(self, class_id):
        return [o for o in self.objects if o.class_id == class_id]

    def contents_of(self, instance_id):
        return [o for o in self.objects if o.container == instance_id]

    def held_object(self) -> ObjectInstance | None:
        return self.obj(self.agent.held) if self.agent.held is not None else None

    def with_object(self, new_obj: ObjectInstance) -> "WorldState":
        objs = tuple(new_obj if o.instance_id == new_obj.instance_id else o
                     for o in self.objects)
        return replace(self, objects=objs)


def capacity(obj: ObjectInstance) -> int:
    return max(1, obj.size - 1)


def footprint_cells(anchor, size):
    x, y = anchor
    w = math.ceil(math.sqrt(size))
    return [(x + i % w, y + i // w) for i in range(size)]


def state_hash(state: WorldState) -> str:
    parts = [state.width, state.height, state.agent.cell, int(state.agent.heading),
             state.agent.pitch, state.agent.held]
    for o in sorted(state.objects, key=lambda o: o.instance_id):
        parts.append((o.instance_id, o.class_id, o.anchor, o.container, o.size,
                      o.openness.value, o.power.value, o.cleanliness.value,
                      o.sliced, o.temperature.value))
    return hashlib.sha256(repr(parts).encode()).hexdigest()


# --------------------------------------------------------------------------
# geometry


@dataclass
class SceneGeometry:
    class_grid: np.ndarray    # int16 (h, w): SENTINEL/FLOOR/WALL/CLASS_BASE+k
    inst_grid: np.ndarray     # int32 (h, w): display instance per cell or -1
    state_grid: np.ndarray    # uint8 (4, h, w): open, on, dirty, sliced bits
    opaque: np.ndarray        # bool (h, w)
    blocked: np.ndarray       # bool (h, w): non-traversable for the agent
    display_cells: dict       # iid -> list[(x, y)]


def build_geometry(state: WorldState) -> SceneGeometry:
    h, w = state.height, state.width
    class_grid = np.full((h, w), FLOOR, dtype=np.int16)
    class_grid[state.walls] = WALL
    inst_grid = np.full((h, w), NO_INSTANCE, dtype=np.int32)
    state_grid = np.zeros((4, h, w), dtype=np.uint8)
    opaque = state.walls.copy()
    blocked = state.walls.copy()
    display: dict[int, list] = {}
    defs = state.registry.defs

    # gather one row per displayed cell, then scatter layer by layer
    rows_x, rows_y, rows_cls, rows_iid = [], [], [], []
    rows_bits, rows_opq = [], []
    children: dict[int, list] = {}
    for o in state.objects:
        if o.container is not None:
            children.setdefault(o.container, []).append(o)

    def paint(obj, cells):
        display.setdefault(obj.instance_id, []).extend(cells)
        cls = defs[obj.class_id]
        opq = cls.occludes and obj.openness is not Openness.OPEN
        bits = (obj.openness is Openness.OPEN, obj.power is Power.ON,
                obj.cleanliness is Cleanliness.DIRTY, obj.sliced)
        for (cx, cy) in cells:
            rows_x.append(cx)
            rows_y.append(cy)
            rows_cls.append(CLASS_BASE + obj.class_id)
            rows_iid.append(obj.instance_id)
            rows_bits.append(bits)
            rows_opq.append(opq)

    for obj in state.objects:
        if obj.anchor is None:
            continue  # contained or held; rendered via its container chain
        cells = footprint_cells(obj.anchor, obj.size)
        blocked[[c[1] for c in cells], [c[0] for c in cells]] = True
        cls = defs[obj.class_id]
        if cls.enclosed and obj.openness is Openness.CLOSED:
            paint(obj, cells)
            continue
        # open/surface receptacle: anchor cell stays the receptacle,
        # contents take the remaining footprint cells in slot order
        contents = sorted(children.get(obj.instance_id, ()),
                          key=lambda o: o.instance_id)
        slots = cells[1:]
        used = set()
        for k, item in enumerate(contents):
            if k < len(slots):
                paint(item, [slots[k]])
                used.add(slots[k])
        paint(obj, [cells[0]] + [c for c in slots if c not in used])

    if rows_x:
        xs = np.array(rows_x)
        ys = np.array(rows_y)
        class_grid[ys, xs] = rows_cls
        inst_grid[ys, xs] = rows_iid
        state_grid[:, ys, xs] = np.array(rows_bits, dtype=np.uint8).T
        opaque[ys, xs] |= np.array(rows_opq, dtype=bool)
    return SceneGeometry(class_grid, inst_grid, state_grid, opaque, blocked, display)


def cached_geometry(state: WorldState) -> SceneGeometry:
    """Geometry memoized on the state instance (states are immutable by
    convention; dataclasses.replace always yields a fresh object)."""
    geom = state.__dict__.get("_geom")
    if geom is None:
        geom = build_geometry(state)
        state.__dict__["_geom"] = geom
    return geom


def cached_render(state: WorldState) -> "Observation":
    obs = state.__dict__.get("_obs")
    if obs is None:
        obs = render(state, cached_geometry(state))
        state.__dict__["_obs"] = obs
    return obs


_RAY_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _ray_offsets(dx, dy):
    """Integer cell offsets strictly between (0,0) and (dx,dy) along the
    center-to-center segment, sampled densely.  This sampling IS the
    visibility rule."""
    key = (dx, dy)
    cached = _RAY_CACHE.get(key)
    if cached is not None:
        return cached
    n = 2 * max(abs(dx), abs(dy), 1)
    pts = []
    for i in range(1, n):
        t = i / n
        ox = math.floor(0.5 + t * dx)
        oy = math.floor(0.5 + t * dy)
        if (ox, oy) not in ((0, 0), (dx, dy)) and (ox, oy) not in pts:
            pts.append((ox, oy))
    arr = np.array(pts, dtype=np.int32).reshape(-1, 2)
    _RAY_CACHE[key] = arr
    return arr


def line_of_sight(opaque, from_cell, to_cell):
    dx, dy = to_cell[0] - from_cell[0], to_cell[1] - from_cell[1]
    offs = _ray_offsets(dx, dy)
    if offs.size == 0:
        return True
    return not opaque[from_cell[1] + offs[:, 1], from_cell[0] + offs[:, 0]].any()


def right_vec(heading: Heading):
    fx, fy = HEADING_VEC[heading]
    return (-fy, fx)


def depth_band(cfg: WorldConfig, pitch: int):
    lo = max(0, 1 + cfg.pitch_shift * pitch)
    hi = cfg.view_depth + cfg.pitch_shift * pitch
    return lo, hi


_FRUSTUM_CACHE: dict[tuple, list] = {}


def frustum_offsets(cfg: WorldConfig, pitch: int):
    """(r, l) pairs in the view wedge for this pitch (before occlusion)."""
    key = (cfg.view_depth, cfg.pitch_shift, cfg.window, pitch)
    cached = _FRUSTUM_CACHE.get(key)
    if cached is not None:
        return cached
    lo, hi = depth_band(cfg, pitch)
    half = cfg.window // 2
    out = []
    for r in range(lo, min(hi, cfg.window - 1) + 1):
        lmax = min(r, half - 1) if r > 0 else 0
        lmin = -min(r, half)
        for l in range(lmin, lmax + 1):
            out.append((r, l))
    _FRUSTUM_CACHE[key] = out
    return out


def cell_in_frustum(cfg: WorldConfig, pose: AgentPose, cell):
    fx, fy = HEADING_VEC[pose.heading]
    rx, ry = right_vec(pose.heading)
    dx, dy = cell[0] - pose.cell[0], cell[1] - pose.cell[1]
    r = dx * fx + dy * fy
    l = dx * rx + dy * ry
    lo, hi = depth_band(cfg, pose.pitch)
    half = cfg.window // 2
    if not (lo <= r <= min(hi, cfg.window - 1)):
        return False
    if abs(l) > r or l < -half or l > half - 1:
        return False
    return True


def cell_visible_from(geom: SceneGeometry, cfg: WorldConfig, pose: AgentPose, cell):
    return cell_in_frustum(cfg, pose, cell) and line_of_sight(geom.opaque, pose.cell, cell)


# --------------------------------------------------------------------------
# observation


@dataclass
class Observation:
    width: int
    height: int
    class_map: np.ndarray     # int16 (H, W)
    instance_map: np.ndarray  # int32 (H, W), NO_INSTANCE where none
    depth_map: np.ndarray     # float32 (H, W), -1 where not visible
    state_bits: np.ndarray    # uint8 (4, H, W)
    visible_set: frozenset

    def visible_instance_cells(self):
        """iid -> list of (col, row) observation cells."""
        out: dict[int, list] = {}
        rows, cols = np.nonzero(self.instance_map != NO_INSTANCE)
        for row, col in zip(rows.tolist(), cols.tolist()):
            out.setdefault(int(self.instance_map[row, col]), []).append((col, row))
        return out


class _RenderTable:
    """Precomputed frustum geometry for one (config, pitch, heading): cell
    offsets and ray samples in world frame, plus the observation pixels
    each frustum cell paints.  Ray samples are computed directly in world
    frame: flooring does not commute with rotation at exact cell-boundary
    hits, so rotating canonical samples would change visibility."""

    def __init__(self, cfg: WorldConfig, pitch: int, heading: Heading):
        n, up, half = cfg.obs_size, cfg.upsample, cfg.window // 2
        cells = frustum_offsets(cfg, pitch)
        fx, fy = HEADING_VEC[heading]
        rx, ry = right_vec(heading)
        rel = np.array([(r * fx + l * rx, r * fy + l * ry) for (r, l) in cells],
                       dtype=np.int64).reshape(-1, 2)
        self.rel = rel
        self.dist = np.hypot(rel[:, 0], rel[:, 1]).astype(np.float32)
        samples, counts = [], []
        for (dx, dy) in rel:
            if (dx, dy) == (0, 0):
                offs = np.empty((0, 2), dtype=np.int32)
            else:
                offs = _ray_offsets(int(dx), int(dy))
            samples.append(offs)
            counts.append(len(offs))
        self.ray = (np.concatenate(samples, axis=0) if samples
                    else np.empty((0, 2), dtype=np.int32)).astype(np.int64)
        self.counts = np.array(counts, dtype=np.int64)
        self.splits = np.concatenate([[0], np.cumsum(self.counts)])
        pix = []
        for (r, l) in cells:
            v0 = n - up - up * r
            u0 = up * (l + half)
            pix.append([(v0 + dv) * n + (u0 + du)
                        for dv in range(up) for du in range(up)])
        self.pix = np.array(pix, dtype=np.int64).reshape(len(cells), up * up)


_RENDER_TABLES: dict[tuple, _RenderTable] = {}


def _render_table(cfg: WorldConfig, pitch: int, heading: Heading) -> _RenderTable:
    key = (cfg.obs_size, cfg.upsample, cfg.view_depth, cfg.pitch_shift,
           pitch, int(heading))
    table = _RENDER_TABLES.get(key)
    if table is None:
        table = _RenderTable(cfg, pitch, heading)
        _RENDER_TABLES[key] = table
    return table


def render(state: WorldState, geom: SceneGeometry | None = None) -> Observation:
    """Egocentric projection of the agent's view wedge (pure in state)."""
    cfg = state.config
    geom = geom or build_geometry(state)
    n = cfg.obs_size
    table = _render_table(cfg, state.agent.pitch, state.agent.heading)
    ax, ay = state.agent.cell

    wx = table.rel[:, 0] + ax
    wy = table.rel[:, 1] + ay
    ok = (wx >= 0) & (wx < state.width) & (wy >= 0) & (wy < state.height)

    if table.ray.shape[0]:
        sx = np.clip(table.ray[:, 0] + ax, 0, state.width - 1)
        sy = np.clip(table.ray[:, 1] + ay, 0, state.height - 1)
        hit = geom.opaque[sy, sx].astype(np.int64)
        blocked_counts = np.add.reduceat(
            np.concatenate([hit, [0]]), table.splits[:-1])
        blocked_counts[table.counts == 0] = 0
        ok &= blocked_counts == 0

    idx = np.nonzero(ok)[0]
    vx, vy = wx[idx], wy[idx]
    class_map = np.full((n * n,), SENTINEL, dtype=np.int16)
    inst_map = np.full((n * n,), NO_INSTANCE, dtype=np.int32)
    depth = np.full((n * n,), -1.0, dtype=np.float32)
    bits = np.zeros((4, n * n), dtype=np.uint8)
    pix = table.pix[idx]
    repeat = pix.shape[1]
    flat = pix.reshape(-1)
    class_map[flat] = np.repeat(geom.class_grid[vy, vx], repeat)
    inst_map[flat] = np.repeat(geom.inst_grid[vy, vx], repeat)
    depth[flat] = np.repeat(table.dist[idx], repeat)
    for b in range(4):
        bits[b, flat] = np.repeat(geom.state_grid[b, vy, vx], repeat)
    shown = geom.inst_grid[vy, vx]
    visible = frozenset(int(i) for i in np.unique(shown[shown != NO_INSTANCE]))
    return Observation(n, n, class_map.reshape(n, n), inst_map.reshape(n, n),
                       depth.reshape(n, n), bits.reshape(4, n, n), visible)


def obs_cell_to_world(state: WorldState, col, row):
    cfg = state.config
    up = cfg.upsample
    half = cfg.window // 2
    r = (cfg.obs_size - 1 - row) // up
    l = col // up - half
    ax, ay = state.agent.cell
    fx, fy = HEADING_VEC[state.agent.heading]
    rx, ry = right_vec(state.agent.heading)
    return (ax + r * fx + l * rx, ay + r * fy + l * ry)


def instance_distance(state: WorldState, geom: SceneGeometry, instance_id) -> float:
    """Distance from the agent to the object's physical extent: footprint
    for anchored objects (regardless of what its cells currently display),
    the slot cell for contained ones, and the nearest anchored ancestor's
    footprint for objects hidden inside closed containers."""
    obj = state.obj(instance_id)
    seen = set()
    while obj.anchor is None:
        cells = geom.display_cells.get(obj.instance_id)
        if cells:
            break
        if obj.container is None or obj.container in seen:
            return math.inf  # held (or orphaned): no spatial location
        seen.add(obj.container)
        obj = state.obj(obj.container)
    else:
        cells = footprint_cells(obj.anchor, obj.size)
    if obj.anchor is not None:
        cells = footprint_cells(obj.anchor, obj.size)
    ax, ay = state.agent.cell
    return min(math.hypot(cx - ax, cy - ay) for cx, cy in cells)


def is_visible(state: WorldState, instance_id, geom: SceneGeometry | None = None) -> bool:
    if not state.has(instance_id):
        raise UnknownInstance(instance_id)
    geom = geom or build_geometry(state)
    cells = geom.display_cells.get(instance_id, [])
    cfg = state.config
    return any(cell_visible_from(geom, cfg, state.agent, c) for c in cells)


# --------------------------------------------------------------------------
# target resolution


def _point_cell(obs: Observation, x, y):
    col = min(max(int(x), 0), obs.width - 1)
    row = min(max(int(y), 0), obs.height - 1)
    return col, row


def _hit_ignoring_range(state, obs, point):
    col, row = _point_cell(obs, point[0], point[1])
    iid = int(obs.instance_map[row, col])
    return None if iid == NO_INSTANCE else iid


def resolve_target(state: WorldState, obs: Observation, point,
                   mode: InteractionMode, geom: SceneGeometry | None = None):
    """Instance the point selects, or None.

    Hard: exact observation-cell hit, within interaction range.
    Standard: k x k box vote among visible in-range instances; ties broken
    by nearer instance, then lower instance id.
    """
    cfg = state.config
    geom = geom or build_geometry(state)
    if mode is InteractionMode.HARD:
        iid = _hit_ignoring_range(state, obs, point)
        if iid is None:
            return None
        if instance_distance(state, geom, iid) <= cfg.interaction_range:
            return iid
        return None
    col, row = _point_cell(obs, point[0], point[1])
    k = cfg.standard_box // 2
    box = obs.instance_map[max(0, row - k):row + k + 1, max(0, col - k):col + k + 1]
    box_area = box.size
    ids, counts = np.unique(box[box != NO_INSTANCE], return_counts=True)
    visible_sizes = {iid: len(cells) for iid, cells in obs.visible_instance_cells().items()}
    best = None
    for iid, cnt in zip(ids.tolist(), counts.tolist()):
        dist = instance_distance(state, geom, iid)
        if dist > cfg.interaction_range:
            continue
        # overlap scored as IoU between the box and the instance's visible
        # cells, so compact objects beat sprawling receptacles behind them
        iou = cnt / (box_area + visible_sizes[iid] - cnt)
        key = (-iou, dist, iid)
        if best is None or key < best[0]:
            best = (key, iid)
    return best[1] if best else None


# --------------------------------------------------------------------------
# dynamics


def _contains_transitively(state, container_id, item_id):
    seen = set()
    cur = state.obj(item_id).container
    while cur is not None and cur not in seen:
        if cur == container_id:
            return True
        seen.add(cur)
        cur = state.obj(cur).container
    return False


def _propagation_effects(state: WorldState) -> dict:
    """{instance_id: {attr: value}} for heat/cool/clean conditions holding
    in this state configuration."""
    effects: dict[int, dict] = {}

    def mark(iid, attr, value):
        effects.setdefault(iid, {})[attr] = value

    def contents_transitive(iid):
        out = []
        frontier = [iid]
        while frontier:
            cur = frontier.pop()
            for o in state.objects:
                if o.container == cur:
                    out.append(o)
                    frontier.append(o.instance_id)
        return out

    for obj in state.objects:
        cls = state.cls(obj)
        if cls.heats and obj.power is Power.ON:
            for item in contents_transitive(obj.instance_id):
                mark(item.instance_id, "temperature", Temperature.HOT)
        if cls.cools and obj.openness is Openness.CLOSED:
            for item in contents_transitive(obj.instance_id):
                mark(item.instance_id, "temperature", Temperature.COLD)
        if cls.water_source and obj.power is Power.ON and obj.anchor is not None:
            fx, fy = obj.anchor
            for basin in state.objects:
                if basin.anchor is None or not state.cls(basin).sink_basin:
                    continue
                near = any(math.hypot(cx - fx, cy - fy) <= 1.5
                           for cx, cy in footprint_cells(basin.anchor, basin.size))
                if not near:
                    continue
                for item in contents_transitive(basin.instance_id):
                    if item.cleanliness is Cleanliness.DIRTY:
                        mark(item.instance_id, "cleanliness", Cleanliness.CLEAN)
    return effects


def _apply_effects(state: WorldState, effects: dict) -> WorldState:
    changed = False
    new_objs = list(state.objects)
    for i, o in enumerate(new_objs):
        wanted = effects.get(o.instance_id)
        if not wanted:
            continue
        updates = {a: v for a, v in wanted.items() if getattr(o, a) is not v}
        if updates:
            new_objs[i] = replace(o, **updates)
            changed = True
    return replace(state, objects=tuple(new_objs)) if changed else state


def _ok(before: WorldState, after: WorldState, target=None):
    """Successful step: bump the counter and apply heat/cool/clean effects
    from conditions that held when the step began and when it ended."""
    out = replace(after, step_count=before.step_count + 1)
    out = _apply_effects(out, _propagation_effects(before))
    out = _apply_effects(out, _propagation_effects(out))
    return out, ActionResult(True, None, target)


def _fail(state: WorldState, reason: FailureReason):
    return state, ActionResult(False, reason, None)


def step(state: WorldState, action: PrimitiveAction, point=None,
         mode: InteractionMode = InteractionMode.STANDARD,
         geom: SceneGeometry | None = None, obs: Observation | None = None):
    """Apply one primitive action.  Failures never mutate state (the same
    object is returned).  Interactive actions require a point in both
    interaction modes."""
    agent = state.agent
    if action is PrimitiveAction.Done:
        return _ok(state, state)
    if action is PrimitiveAction.RotateLeft:
        return _ok(state, replace(state, agent=replace(agent, heading=Heading((agent.heading - 1) % 4))))
    if action is PrimitiveAction.RotateRight:
        return _ok(state, replace(state, agent=replace(agent, heading=Heading((agent.heading + 1) % 4))))
    if action is PrimitiveAction.LookUp:
        if agent.pitch >= 1:
            return _fail(state, FailureReason.BLOCKED)
        return _ok(state, replace(state, agent=replace(agent, pitch=agent.pitch + 1)))
    if action is PrimitiveAction.LookDown:
        if agent.pitch <= -1:
            return _fail(state, FailureReason.BLOCKED)
        return _ok(state, replace(state, agent=replace(agent, pitch=agent.pitch - 1)))
    if action is PrimitiveAction.MoveAhead:
        fx, fy = HEADING_VEC[agent.heading]
        nx, ny = agent.cell[0] + fx, agent.cell[1] + fy
        if not (0 <= nx < state.width and 0 <= ny < state.height):
            return _fail(state, FailureReason.BLOCKED)
        geom = geom or build_geometry(state)
        if geom.blocked[ny, nx]:
            return _fail(state, FailureReason.BLOCKED)
        return _ok(state, replace(state, agent=replace(agent, cell=(nx, ny))))

    # interactive actions
    if point is None:
        raise InvalidAction(f"{action.name} requires an interaction point")
    geom = geom or build_geometry(state)
    obs = obs or render(state, geom)
    target_id = resolve_target(state, obs, point, mode, geom)
    if target_id is None:
        raw = _hit_ignoring_range(state, obs, point)
        reason = FailureReason.OUT_OF_RANGE if raw is not None else FailureReason.NO_TARGET_HIT
        return _fail(state, reason)
    target = state.obj(target_id)
    cls = state.cls(target)

    if action is PrimitiveAction.Open:
        if target.openness is not Openness.CLOSED:
            return _fail(state, FailureReason.PRECONDITION_UNMET)
        return _ok(state, state.with_object(replace(target, openness=Openness.OPEN)), target_id)

    if action is PrimitiveAction.Close:
        if target.openness is not Openness.OPEN:
            return _fail(state, FailureReason.PRECONDITION_UNMET)
        return _ok(state, state.with_object(replace(target, openness=Openness.CLOSED)), target_id)

    if action is PrimitiveAction.Pickup:
        if agent.held is not None:
            return _fail(state, FailureReason.HANDS_FULL)
        if not cls.pickupable:
            return _fail(state, FailureReason.PRECONDITION_UNMET)
        new = state.with_object(replace(target, anchor=None, container=None))
        return _ok(state, replace(new, agent=replace(agent, held=target_id)), target_id)

    if action is PrimitiveAction.Put:
        if agent.held is None:
            return _fail(state, FailureReason.HANDS_EMPTY)
        if not target.is_receptacle:
            return _fail(state, FailureReason.PRECONDITION_UNMET)
        if state.cls(target).enclosed and target.openness is not Openness.OPEN:
            return _fail(state, FailureReason.PRECONDITION_UNMET)
        if len(state.contents_of(target_id)) >= capacity(target):
            return _fail(state, FailureReason.PRECONDITION_UNMET)
        held = state.obj(agent.held)
        if target_id == held.instance_id or _contains_transitively(state, held.instance_id, target_id):
            return _fail(state, FailureReason.PRECONDITION_UNMET)
        new = state.with_object(replace(held, anchor=None, container=target_id))
        return _ok(state, replace(new, agent=replace(agent, held=None)), target_id)

    if action is PrimitiveAction.ToggleOn:
        if target.power is not Power.OFF:
            return _fail(state, FailureReason.PRECONDITION_UNMET)
        return _ok(state, state.with_object(replace(target, power=Power.ON)), target_id)

    if action is PrimitiveAction.ToggleOff:
        if target.power is not Power.ON:
            return _fail(state, FailureReason.PRECONDITION_UNMET)
        return _ok(state, state.with_object(replace(target, power=Power.OFF)), target_id)

    if action is PrimitiveAction.Slice:
        held = state.held_object()
        if held is None or not state.cls(held).slicer:
            return _fail(state, FailureReason.PRECONDITION_UNMET)
        if not cls.sliceable or target.sliced:
            return _fail(state, FailureReason.PRECONDITION_UNMET)
        return _ok(state, state.with_object(replace(target, sliced=True)), target_id)

    raise InvalidAction(f"unhandled action {action!r}")


# --------------------------------------------------------------------------
# scene templates and randomization


def _border_walls(width, height):
    walls = np.zeros((height, width), dtype=bool)
    walls[0, :] = walls[-1, :] = True
    walls[:, 0] = walls[:, -1] = True
    return walls


def _initial_states(cls, rng, randomize):
    openness = Openness.NOT_OPENABLE
    if cls.enclosed:
        openness = Openness.CLOSED
        if randomize and rng.random() < 0.25:
            openness = Openness.OPEN
    power = Power.NOT_TOGGLEABLE
    if cls.toggleable:
        power = Power.OFF
        if randomize and not cls.water_source and rng.random() < 0.3:
            power = Power.ON
    clean = Cleanliness.NA
    if cls.can_dirty:
        clean = Cleanliness.DIRTY if (randomize and rng.random() < 0.5) else Cleanliness.CLEAN
    return openness, power, clean


def randomize_scene(template: dict, seed: int,
                    registry: ClassRegistry | None = None,
                    config: WorldConfig | None = None) -> WorldState:
    """Instantiate a scene template deterministically from a seed.

    Fixtures keep their listed positions; movables are assigned uniformly
    among receptacles compatible with their placement rules; the agent
    starts at a random traversable cell.
    """
    registry = registry or desk_registry()
    config = config or WorldConfig()
    rng = np.random.default_rng(np.uint64(seed))
    width, height = template["width"], template["height"]
    walls = _border_walls(width, height)
    for (x, y) in template.get("interior_walls", []):
        walls[y, x] = True
    randomize = template.get("randomize_states", True)

    objects: list[ObjectInstance] = []
    occupied = set()
    next_id = 0
    for fx in template["fixtures"]:
        cls_id = registry.id_of(fx["class"])
        cls = registry[cls_id]
        size = fx.get("size", cls.size)
        cells = footprint_cells(tuple(fx["pos"]), size)
        for c in cells:
            if not (0 < c[0] < width - 1 and 0 < c[1] < height - 1) or walls[c[1], c[0]]:
                raise PlacementInfeasible(f"fixture {fx['class']} at {fx['pos']} off-floor")
            if c in occupied:
                raise PlacementInfeasible(f"fixture overlap at {c}")
            occupied.add(c)
        openness, power, clean = _initial_states(cls, rng, randomize)
        objects.append(ObjectInstance(
            instance_id=next_id, class_id=cls_id, anchor=tuple(fx["pos"]),
            container=None, size=size, is_receptacle=cls.receptacle,
            openness=openness, power=power, cleanliness=clean))
        next_id += 1

    recs = [o for o in objects if o.is_receptacle]
    # expand (class, count) specs, most-constrained classes first so tight
    # receptacles are not starved; retry whole assignments on dead ends
    wanted = []
    for spec in template.get("movables", []):
        cls_id = registry.id_of(spec["class"])
        for _ in range(spec.get("count", 1)):
            wanted.append(cls_id)
    wanted.sort(key=lambda cid: (len(registry[cid].placements), registry[cid].name))
    assignment = None
    for _attempt in range(20):
        load = {o.instance_id: 0 for o in recs}
        trial = []
        for cls_id in wanted:
            cls = registry[cls_id]
            slots = [r for r in recs
                     if registry[r.class_id].name in cls.placements
                     and load[r.instance_id] < capacity(r)]
            if not slots:
                trial = None
                break
            pick = slots[int(rng.integers(len(slots)))]
            load[pick.instance_id] += 1
            trial.append((cls_id, pick.instance_id))
        if trial is not None:
            assignment = trial
            break
    if assignment is None and wanted:
        raise PlacementInfeasible("movable placement unsatisfiable for template "
                                  f"{template.get('template_id')}")
    for cls_id, container in assignment or []:
        cls = registry[cls_id]
        openness, power, clean = _initial_states(cls, rng, randomize)
        objects.append(ObjectInstance(
            instance_id=next_id, class_id=cls_id, anchor=None,
            container=container, size=1, is_receptacle=cls.receptacle,
            openness=openness, power=power, cleanliness=clean))
        next_id += 1

    free = [(x, y) for y in range(1, height - 1) for x in range(1, width - 1)
            if not walls[y, x] and (x, y) not in occupied]
    if not free:
        raise PlacementInfeasible("no traversable cell for the agent")
    cell = free[int(rng.integers(len(free)))]
    heading = Heading(int(rng.integers(4)))
    return WorldState(width=width, height=height, walls=walls,
                      objects=tuple(objects),
                      agent=AgentPose(cell=cell, heading=heading),
                      rng_seed=int(seed), registry=registry, config=config)


def load_template(path) -> dict:
    with open(path) as f:
        return json.load(f)


def save_template(template: dict, path):
    with open(path, "w") as f:
        json.dump(template, f, indent=2, sort_keys=True)
