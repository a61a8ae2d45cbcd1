import logging
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import Environment, ProblemDefinitionError
from .enums import Metric, StepMode
from .options import GridNavIceOptions

logger = logging.getLogger(__name__)

UP, DOWN, LEFT, RIGHT = range(4)
ACTION_OFFSETS = ((0, -1), (0, 1), (-1, 0), (1, 0))   # y grows downward, as in the ASCII maps
DRIFT_SYMBOLS = {"^": (0, -1), "v": (0, 1), "<": (-1, 0), ">": (1, 0)}

MAX_LAYOUT_ATTEMPTS = 100

Cell = tuple[int, int]


class GridNavIce(Environment):
    """
    4-connected grid with obstacles and icy cells.

        The model ignores ice. On an icy cell the true dynamics apply the cell's drift whatever
        the action. Moves off the grid or into an obstacle leave the agent in place and still
        cost 1; obstacle cells are never entered from free space. Goal cells cost 0.
    """

    def __init__(
        self,
        width: int,
        height: int,
        obstacles: Iterable[Cell],
        ice: dict[Cell, Cell],
        goals: Iterable[Cell],
        start: Cell,
        optimistic_model: bool = True,
        name: str = "grid-nav-ice",
    ) -> None:
        self.width = width
        self.height = height
        self.obstacles = frozenset(obstacles)
        self.ice = dict(ice)
        goal_cells = list(goals)

        for cell, drift in self.ice.items():
            if drift not in ACTION_OFFSETS:
                raise ProblemDefinitionError(f"Drift {drift} at {cell} must be a unit grid move")
            if cell in self.obstacles:
                raise ProblemDefinitionError(f"Ice cell {cell} is also an obstacle")
        for cell in goal_cells + [start]:
            if not self.in_bounds(cell) or cell in self.obstacles:
                raise ProblemDefinitionError(f"Start/goal cell {cell} is blocked or off the grid")

        n = width * height
        model_next = np.zeros((n, len(ACTION_OFFSETS)), dtype=np.int64)
        true_next = np.zeros_like(model_next)
        costs = np.ones((n, len(ACTION_OFFSETS)))
        coordinates = np.zeros((n, 2))

        for s in range(n):
            cell = self.cell(s)
            coordinates[s] = cell
            for a, offset in enumerate(ACTION_OFFSETS):
                model_next[s, a] = self.state_id(self._move(cell, offset))
                true_offset = self.ice.get(cell, offset)
                true_next[s, a] = self.state_id(self._move(cell, true_offset))

        goal_ids = [self.state_id(c) for c in goal_cells]
        costs[goal_ids] = 0.0

        super().__init__(
            model_next, true_next, costs, goal_ids, self.state_id(start),
            coordinates=coordinates, metric=Metric.MANHATTAN, optimistic_model=optimistic_model, name=name,
        )

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def _move(self, cell: Cell, offset: Cell) -> Cell:
        target = (cell[0] + offset[0], cell[1] + offset[1])
        if not self.in_bounds(target):
            return cell
        if target in self.obstacles and cell not in self.obstacles:
            return cell
        return target

    def state_id(self, cell: Cell) -> int:
        return cell[1] * self.width + cell[0]

    def cell(self, s: int) -> Cell:
        return (s % self.width, s // self.width)

    @classmethod
    def from_ascii(cls, lines: Sequence[str], optimistic_model: bool = True, name: str = "grid-nav-ice") -> "GridNavIce":
        """
        Build from rows of `.` free, `#` obstacle, `S` start, `G` goal and `^ v < >` icy cells
        drifting in the arrow's direction. The first row is y = 0.
        """
        rows = [line.strip() for line in lines if line.strip()]
        if not rows or len({len(r) for r in rows}) != 1:
            raise ProblemDefinitionError("ASCII map rows must be non-empty and of equal length")

        obstacles, goals, ice = set(), [], {}
        start: Optional[Cell] = None
        for y, row in enumerate(rows):
            for x, ch in enumerate(row):
                if ch == "#":
                    obstacles.add((x, y))
                elif ch == "G":
                    goals.append((x, y))
                elif ch == "S":
                    start = (x, y)
                elif ch in DRIFT_SYMBOLS:
                    ice[(x, y)] = DRIFT_SYMBOLS[ch]
                elif ch != ".":
                    raise ProblemDefinitionError(f"Unknown map symbol {ch!r} at {(x, y)}")
        if start is None or not goals:
            raise ProblemDefinitionError("ASCII map needs one S and at least one G")
        return cls(len(rows[0]), len(rows), obstacles, ice, goals, start, optimistic_model=optimistic_model, name=name)

    @classmethod
    def random_bottleneck(cls, rng: np.random.Generator, size: int = 12) -> "GridNavIce":
        """
        A wall across the middle row with a two-cell gap. The first gap cell drifts onto the
        second, which drifts down out of the gap. Start above the wall, goal below.
        """
        if size < 5:
            raise ValueError(f"Bottleneck grids need size >= 5, got {size}")
        wall_y = size // 2
        gap_x = int(rng.integers(1, size - 2))
        if rng.random() < 0.5:
            ice = {(gap_x, wall_y): DRIFT_SYMBOLS[">"], (gap_x + 1, wall_y): DRIFT_SYMBOLS["v"]}
        else:
            ice = {(gap_x + 1, wall_y): DRIFT_SYMBOLS["<"], (gap_x, wall_y): DRIFT_SYMBOLS["v"]}
        obstacles = {(x, wall_y) for x in range(size) if x not in (gap_x, gap_x + 1)}

        start = (int(rng.integers(0, size)), int(rng.integers(0, wall_y)))
        goal = (int(rng.integers(0, size)), int(rng.integers(wall_y + 1, size)))
        return cls(size, size, obstacles, ice, [goal], start, name="grid-nav-ice-bottleneck")

    @classmethod
    def random_open(cls, rng: np.random.Generator, size: int = 15, obstacle_density: float = 0.2) -> "GridNavIce":
        """Random obstacles and no ice, so model and true dynamics agree. Resamples pocketed layouts."""
        for attempt in range(MAX_LAYOUT_ATTEMPTS):
            blocked = rng.random((size, size)) < obstacle_density
            free = [(x, y) for y in range(size) for x in range(size) if not blocked[y, x]]
            if len(free) < 2:
                continue
            start_idx, goal_idx = rng.choice(len(free), size=2, replace=False)
            obstacles = {(x, y) for y in range(size) for x in range(size) if blocked[y, x]}
            try:
                return cls(size, size, obstacles, {}, [free[goal_idx]], free[start_idx], name="grid-nav-open")
            except ProblemDefinitionError:
                logger.debug(f"Open layout attempt {attempt} has unreachable pockets, resampling")
        raise ProblemDefinitionError(f"No connected open layout found in {MAX_LAYOUT_ATTEMPTS} attempts")

    @classmethod
    def from_options(cls, opts: GridNavIceOptions, rng: np.random.Generator) -> "GridNavIce":
        match opts.layout:
            case "ascii":
                if not opts.ascii_map:
                    raise ValueError("layout 'ascii' requires ascii_map")
                return cls.from_ascii(opts.ascii_map, optimistic_model=opts.optimistic_model)
            case "bottleneck":
                return cls.random_bottleneck(rng, opts.size)
            case "open":
                return cls.random_open(rng, opts.size, opts.obstacle_density)
        raise ValueError(f"Unknown grid layout {opts.layout}")


def grid_step(world: GridNavIce, s: int, a: int, mode: StepMode) -> tuple[int, float]:
    """Successor and cost of (s, a) under the model or the true dynamics."""
    s_next = world.model_step(s, a) if mode is StepMode.MODEL else world.true_step(s, a)
    return s_next, world.cost(s, a)
