import hashlib
import json
import logging
import math
import os
import tempfile
from typing import Optional

from attrs import frozen
from cattrs import Converter
from cattrs.errors import BaseValidationError
import numpy as np

from .core import Environment, ProblemDefinitionError
from .enums import Metric, StepMode
from .options import LatticeOptions

logger = logging.getLogger(__name__)

CACHE_VERSION = 1
MAX_LAYOUT_ATTEMPTS = 50
CHECKPOINT_CLEARANCE = 3

_converter = Converter()


class PrimitiveConfigError(ValueError):
    """Primitive generation parameters produce no usable table."""


@frozen
class PrimitiveParams:
    headings: int = 8
    steering: tuple[float, ...] = (-0.6, 0.0, 0.6)
    speeds: tuple[float, ...] = (1.0, -1.0)
    wheelbase: float = 1.3
    max_length: int = 3
    substeps: int = 10
    position_tolerance: float = 0.75
    heading_tolerance: Optional[float] = None

    @property
    def heading_bin(self) -> float:
        return 2 * math.pi / self.headings

    def digest(self) -> str:
        payload = json.dumps(_converter.unstructure(self), sort_keys=True)
        return hashlib.sha1(payload.encode()).hexdigest()


@frozen
class MotionPrimitive:
    start_heading: int
    offset: tuple[int, int, int]              # (dx, dy, dheading)
    swept: tuple[tuple[int, int], ...]        # cells entered after leaving the start cell; endpoint last
    duration: int
    steering: float
    speed: float


@frozen
class PrimitiveTable:
    """Primitives per start heading. Action a is valid at heading h iff a < len(by_heading[h])."""
    params: PrimitiveParams
    by_heading: tuple[tuple[MotionPrimitive, ...], ...]

    @property
    def num_actions(self) -> int:
        return max(len(p) for p in self.by_heading)

    @property
    def max_swept(self) -> int:
        return max(len(p.swept) for prims in self.by_heading for p in prims)

    def valid(self, heading: int, a: int) -> bool:
        return 0 <= a < len(self.by_heading[heading])

    def get(self, heading: int, a: int) -> MotionPrimitive:
        return self.by_heading[heading][a]


def _snap(v: float) -> int:
    return int(math.floor(v + 0.5))


def generate_motion_primitives(params: PrimitiveParams) -> PrimitiveTable:
    """
    Roll out every (steering, speed) pair held for 1..max_length steps with unicycle
    kinematics, snap endpoints to the lattice and keep those within tolerance. Primitives with
    the same offset keep the shortest duration.
    """
    if not params.steering or not params.speeds:
        raise PrimitiveConfigError("Steering and speed sets must be non-empty")
    if params.max_length < 1 or params.substeps < 1 or params.headings < 1:
        raise PrimitiveConfigError("max_length, substeps and headings must be positive")
    if params.position_tolerance <= 0 or (params.heading_tolerance is not None and params.heading_tolerance <= 0):
        raise PrimitiveConfigError("Snapping tolerances must be positive")
    if params.wheelbase <= 0:
        raise PrimitiveConfigError(f"Wheelbase must be positive, got {params.wheelbase}")

    bin_width = params.heading_bin
    heading_tol = bin_width / 2 if params.heading_tolerance is None else params.heading_tolerance
    dt = 1.0 / params.substeps

    by_heading = []
    for h in range(params.headings):
        found: dict[tuple[int, int, int], MotionPrimitive] = {}
        for steer in params.steering:
            turn_rate = math.tan(steer) / params.wheelbase
            for speed in params.speeds:
                x, y, theta = 0.0, 0.0, h * bin_width
                swept: list[tuple[int, int]] = []
                for length in range(1, params.max_length + 1):
                    for _ in range(params.substeps):
                        x += speed * math.cos(theta) * dt
                        y += speed * math.sin(theta) * dt
                        theta += speed * turn_rate * dt
                        cell = (_snap(x), _snap(y))
                        if cell != (0, 0) and (not swept or swept[-1] != cell):
                            swept.append(cell)

                    end = (_snap(x), _snap(y))
                    if end == (0, 0):
                        continue
                    k = _snap(theta / bin_width)
                    if math.hypot(x - end[0], y - end[1]) > params.position_tolerance:
                        continue
                    if abs(theta - k * bin_width) > heading_tol:
                        continue

                    offset = (end[0], end[1], (k - h) % params.headings)
                    known = found.get(offset)
                    if known is None or length < known.duration:
                        found[offset] = MotionPrimitive(h, offset, tuple(swept), length, steer, speed)

        if not found:
            raise PrimitiveConfigError(f"No primitive snaps to the lattice for heading {h}")
        by_heading.append(tuple(sorted(found.values(), key=lambda p: (p.duration, p.offset, p.speed, p.steering))))

    table = PrimitiveTable(params, tuple(by_heading))
    logger.info(f"Generated {sum(len(p) for p in by_heading)} primitives over {params.headings} headings")
    return table


def _read_cached_table(path: str) -> Optional[PrimitiveTable]:
    try:
        with open(path) as f:
            return _converter.structure(json.load(f), PrimitiveTable)
    except FileNotFoundError:
        return None
    except (OSError, ValueError, TypeError, KeyError, AttributeError, BaseValidationError) as e:
        logger.warning(f"Ignoring unreadable primitive cache {path}: {e!r}")
        return None


def load_or_generate_primitives(params: PrimitiveParams, cache_dir: Optional[str] = None) -> PrimitiveTable:
    """
    Generate a table, reusing `primitives-v<version>-<digest>.json` under cache_dir when present.

    The cache file is written to a temporary name and moved into place, so concurrent workers
    sharing one cache_dir only ever see a complete table. A corrupt file is regenerated.
    """
    if cache_dir is None:
        return generate_motion_primitives(params)

    path = os.path.join(cache_dir, f"primitives-v{CACHE_VERSION}-{params.digest()}.json")
    table = _read_cached_table(path)
    if table is not None:
        logger.info(f"Loaded primitive table from {path}")
        return table

    table = generate_motion_primitives(params)
    os.makedirs(cache_dir, exist_ok=True)
    with tempfile.NamedTemporaryFile("w", dir=cache_dir, prefix=".primitives-", suffix=".tmp", delete=False) as f:
        tmp_path = f.name
        json.dump(_converter.unstructure(table), f, sort_keys=True)
    try:
        os.replace(tmp_path, path)
    except OSError:
        os.unlink(tmp_path)
        raise
    logger.info(f"Cached primitive table at {path}")
    return table


@frozen
class IcyPatch:
    x0: int
    y0: int
    size: int
    drift: tuple[int, int]

    def contains(self, x: int, y: int) -> bool:
        return self.x0 <= x < self.x0 + self.size and self.y0 <= y < self.y0 + self.size


def ring_track(size_x: int, size_y: int, margin: int, width: int) -> np.ndarray:
    """Boolean (x, y) mask of a rectangular ring track `width` cells wide."""
    xs, ys = np.meshgrid(np.arange(size_x), np.arange(size_y), indexing="ij")
    outer = (xs >= margin) & (xs <= size_x - 1 - margin) & (ys >= margin) & (ys <= size_y - 1 - margin)
    inner = ((xs >= margin + width) & (xs <= size_x - 1 - margin - width)
             & (ys >= margin + width) & (ys <= size_y - 1 - margin - width))
    return outer & ~inner


class LatticeWorld(Environment):
    """
    (x, y, heading) lattice driven by motion primitives.

        The cost of a primitive sums the cost map over the cells it sweeps (1 on the track,
        `off_track_cost` on grass and walls) and is divided by the largest possible primitive
        cost. Endpoints leaving the grid are clamped onto the border wall. When the start cell
        or a swept cell lies in an icy patch, the true endpoint is that cell shifted by the
        patch drift, heading unchanged. Actions not defined for a heading keep the robot in
        place at full cost.
    """

    def __init__(
        self,
        table: PrimitiveTable,
        cost_map: np.ndarray,
        patches: list[IcyPatch],
        start: tuple[int, int, int],
        goal_cells: list[tuple[int, int]],
        name: str = "lattice",
    ) -> None:
        self.table = table
        self.cost_map = np.asarray(cost_map, dtype=float)
        self.size_x, self.size_y = self.cost_map.shape
        self.headings = len(table.by_heading)
        self.patches = list(patches)
        self.goal_cells = list(goal_cells)
        self.max_raw_cost = float(self.cost_map.max()) * table.max_swept

        model_next, true_next, raw = self._build_tables()
        self._raw_costs = raw
        costs = raw / self.max_raw_cost
        goal_ids = [self.state_id(x, y, h) for x, y in self.goal_cells for h in range(self.headings)]
        costs[goal_ids] = 0.0

        xs, ys, hs = np.meshgrid(np.arange(self.size_x), np.arange(self.size_y), np.arange(self.headings), indexing="ij")
        coordinates = np.stack([xs.ravel(), ys.ravel(), hs.ravel()], axis=1).astype(float)

        super().__init__(
            model_next, true_next, costs, goal_ids, self.state_id(*start),
            coordinates=coordinates, metric=Metric.MANHATTAN, optimistic_model=False, name=name,
        )

    def state_id(self, x: int, y: int, h: int) -> int:
        return (x * self.size_y + y) * self.headings + h

    def pose(self, s: int) -> tuple[int, int, int]:
        h = s % self.headings
        xy = s // self.headings
        return (xy // self.size_y, xy % self.size_y, h)

    def raw_cost(self, s: int, a: int) -> float:
        return float(self._raw_costs[s, a])

    def _build_tables(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        nx, ny, nh = self.size_x, self.size_y, self.headings
        num_actions = self.table.num_actions
        xs, ys = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")

        patch_id = np.full((nx, ny), -1, dtype=np.int64)
        for k, patch in enumerate(self.patches):
            patch_id[patch.x0:patch.x0 + patch.size, patch.y0:patch.y0 + patch.size] = k
        drift = np.array([p.drift for p in self.patches], dtype=np.int64).reshape(-1, 2)

        model_next = np.empty((nx, ny, nh, num_actions), dtype=np.int64)
        true_next = np.empty_like(model_next)
        raw = np.empty((nx, ny, nh, num_actions))

        def ids(x, y, h):
            return (x * ny + y) * nh + h

        for h in range(nh):
            here = ids(xs, ys, h)
            for a in range(num_actions):
                if not self.table.valid(h, a):
                    model_next[:, :, h, a] = here
                    true_next[:, :, h, a] = here
                    raw[:, :, h, a] = self.max_raw_cost
                    continue

                prim = self.table.get(h, a)
                dx, dy, dh = prim.offset
                end_x = np.clip(xs + dx, 0, nx - 1)
                end_y = np.clip(ys + dy, 0, ny - 1)
                model_ids = ids(end_x, end_y, (h + dh) % nh)
                model_next[:, :, h, a] = model_ids

                cost = np.zeros((nx, ny))
                for sx, sy in prim.swept:
                    cost += self.cost_map[np.clip(xs + sx, 0, nx - 1), np.clip(ys + sy, 0, ny - 1)]
                raw[:, :, h, a] = cost

                if not self.patches:
                    true_next[:, :, h, a] = model_ids
                    continue
                hit_any = np.zeros((nx, ny), dtype=bool)
                skid_x = np.zeros((nx, ny), dtype=np.int64)
                skid_y = np.zeros((nx, ny), dtype=np.int64)
                # walk the sweep backwards so the earliest patch cell wins
                for sx, sy in reversed(((0, 0),) + prim.swept):
                    cx = np.clip(xs + sx, 0, nx - 1)
                    cy = np.clip(ys + sy, 0, ny - 1)
                    pid = patch_id[cx, cy]
                    hit = pid >= 0
                    skid_x = np.where(hit, np.clip(cx + drift[pid, 0], 0, nx - 1), skid_x)
                    skid_y = np.where(hit, np.clip(cy + drift[pid, 1], 0, ny - 1), skid_y)
                    hit_any |= hit
                true_next[:, :, h, a] = np.where(hit_any, ids(skid_x, skid_y, h), model_ids)

        shape = (nx * ny * nh, num_actions)
        return model_next.reshape(shape), true_next.reshape(shape), raw.reshape(shape)

    @classmethod
    def random(
        cls,
        rng: np.random.Generator,
        table: PrimitiveTable,
        size_x: int = 50,
        size_y: int = 50,
        track_width: int = 6,
        margin: int = 2,
        num_patches: int = 3,
        patch_size: int = 3,
        off_track_cost: float = 100.0,
    ) -> "LatticeWorld":
        """A ring track from checkpoint A (left side, facing +y) to checkpoint B (right side)."""
        if margin < 2:
            raise ProblemDefinitionError("Track margin must be at least 2 so skids stay off the border")
        if 2 * (margin + track_width) >= min(size_x, size_y):
            raise ProblemDefinitionError("Track does not fit the grid")

        track = ring_track(size_x, size_y, margin, track_width)
        cost_map = np.where(track, 1.0, off_track_cost)
        headings = len(table.by_heading)
        a_cell = (margin + track_width // 2, size_y // 2)
        b_cell = (size_x - 1 - margin - track_width // 2, size_y // 2)
        goal_cells = [(b_cell[0] + i, b_cell[1] + j) for i in (-1, 0, 1) for j in (-1, 0, 1)]
        start = (a_cell[0], a_cell[1], headings // 4)

        candidates = []
        for x0 in range(1, size_x - patch_size):
            for y0 in range(1, size_y - patch_size):
                if not track[x0:x0 + patch_size, y0:y0 + patch_size].all():
                    continue
                far = all(
                    max(abs(x0 + i - cx), abs(y0 + j - cy)) > CHECKPOINT_CLEARANCE
                    for cx, cy in (a_cell, b_cell) for i in range(patch_size) for j in range(patch_size)
                )
                if far:
                    candidates.append((x0, y0))
        if len(candidates) < num_patches:
            raise ProblemDefinitionError(f"Room for only {len(candidates)} icy patches, {num_patches} requested")

        directions = ((1, 0), (-1, 0), (0, 1), (0, -1))
        for attempt in range(MAX_LAYOUT_ATTEMPTS):
            patches: list[IcyPatch] = []
            for idx in rng.permutation(len(candidates)):
                if len(patches) == num_patches:
                    break
                x0, y0 = candidates[idx]
                overlaps = any(
                    x0 < p.x0 + p.size + 1 and p.x0 < x0 + patch_size + 1
                    and y0 < p.y0 + p.size + 1 and p.y0 < y0 + patch_size + 1
                    for p in patches
                )
                if not overlaps:
                    patches.append(IcyPatch(x0, y0, patch_size, directions[int(rng.integers(0, 4))]))
            try:
                return cls(table, cost_map, patches, start, goal_cells)
            except ProblemDefinitionError as e:
                logger.debug(f"Lattice layout attempt {attempt} rejected: {e}")
        raise ProblemDefinitionError(f"No valid lattice layout found in {MAX_LAYOUT_ATTEMPTS} attempts")

    @classmethod
    def from_options(cls, opts: LatticeOptions, rng: np.random.Generator) -> "LatticeWorld":
        size_x, size_y, headings, max_length = opts.size_x, opts.size_y, opts.headings, opts.max_length
        if opts.full_scale:
            size_x, size_y, headings, max_length = 100, 100, 16, 15

        params = PrimitiveParams(
            headings=headings,
            steering=tuple(opts.steering),
            speeds=tuple(opts.speeds),
            wheelbase=opts.wheelbase,
            max_length=max_length,
            substeps=opts.substeps,
            position_tolerance=opts.position_tolerance,
            heading_tolerance=opts.heading_tolerance,
        )
        table = load_or_generate_primitives(params, opts.cache_dir)
        return cls.random(
            rng, table, size_x=size_x, size_y=size_y, track_width=opts.track_width, margin=opts.margin,
            num_patches=opts.num_patches, patch_size=opts.patch_size, off_track_cost=opts.off_track_cost,
        )


def lattice_step(world: LatticeWorld, s: int, a: int, mode: StepMode) -> tuple[int, float]:
    """Successor and rescaled cost of running primitive `a` from s."""
    heading = world.pose(s)[2]
    if not world.table.valid(heading, a):
        raise ValueError(f"Primitive {a} is not defined for heading {heading}")
    s_next = world.model_step(s, a) if mode is StepMode.MODEL else world.true_step(s, a)
    return s_next, world.cost(s, a)
