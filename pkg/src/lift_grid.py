import logging
from typing import Iterable

import numpy as np

from .core import Environment, ProblemDefinitionError
from .enums import Metric
from .options import LiftGridOptions

logger = logging.getLogger(__name__)

LEFT, RIGHT, UP, DOWN = range(4)
LIFT_HEIGHT = 2

MAX_LAYOUT_ATTEMPTS = 100

Cell = tuple[int, int]   # (column, height)


class LiftGrid(Environment):
    """
    Carrying a heavy object up a (column, height) grid.

        The model lifts by two cells from anywhere. Inside the heavy band [band_low, band_high)
        the true lift reaches one cell in a strong column and nothing elsewhere, so every route
        from below the band to the goal row above it executes a lift the model gets wrong.
        Moves cost 1 and obstacles block. A lift climbs cell by cell and stops under the top
        row or an obstacle, so the model never lands below the true lift in the same column.
    """

    def __init__(
        self,
        width: int,
        height: int,
        band_low: int,
        band_high: int,
        strong_columns: Iterable[int],
        start: Cell,
        goal: Cell,
        obstacles: Iterable[Cell] = (),
        name: str = "lift-grid",
    ) -> None:
        if band_high - band_low < LIFT_HEIGHT:
            raise ProblemDefinitionError(
                f"Heavy band [{band_low}, {band_high}) must be at least {LIFT_HEIGHT} cells thick")
        if band_low < 1 or band_high > height - 2:
            raise ProblemDefinitionError("Heavy band must leave room below it and a goal row above it")
        if goal[1] < band_high or start[1] >= band_low:
            raise ProblemDefinitionError("Start must lie below the heavy band and the goal above it")

        self.width = width
        self.height = height
        self.band_low = band_low
        self.band_high = band_high
        self.strong_columns = frozenset(strong_columns)
        self.obstacles = frozenset(obstacles)
        if not self.strong_columns or not all(0 <= c < width for c in self.strong_columns):
            raise ProblemDefinitionError(f"Strong columns {sorted(self.strong_columns)} invalid for width {width}")
        if any(band_low <= h < band_high for _, h in self.obstacles):
            raise ProblemDefinitionError("Obstacles may not sit inside the heavy band")

        n = width * height
        model_next = np.zeros((n, 4), dtype=np.int64)
        true_next = np.zeros_like(model_next)
        costs = np.ones((n, 4))
        coordinates = np.zeros((n, 2))
        for s in range(n):
            c, h = self.cell(s)
            coordinates[s] = (c, h)
            for a in range(4):
                model_next[s, a] = self.state_id(self._move((c, h), a, heavy=False))
                true_next[s, a] = self.state_id(self._move((c, h), a, heavy=True))
        costs[self.state_id(goal)] = 0.0

        super().__init__(
            model_next, true_next, costs, [self.state_id(goal)], self.state_id(start),
            coordinates=coordinates, metric=Metric.MANHATTAN, optimistic_model=True, name=name,
        )

    def in_band(self, h: int) -> bool:
        return self.band_low <= h < self.band_high

    def _move(self, cell: Cell, a: int, heavy: bool) -> Cell:
        c, h = cell
        if a == LEFT:
            target = (c - 1, h)
        elif a == RIGHT:
            target = (c + 1, h)
        elif a == DOWN:
            target = (c, h - 1)
        else:
            lift = LIFT_HEIGHT
            if heavy and self.in_band(h):
                lift = 1 if c in self.strong_columns else 0
            top = h
            for _ in range(lift):
                above = (c, top + 1)
                if above[1] >= self.height or (above in self.obstacles and cell not in self.obstacles):
                    break
                top += 1
            return (c, top)

        if not (0 <= target[0] < self.width and 0 <= target[1] < self.height):
            return cell
        if target in self.obstacles and cell not in self.obstacles:
            return cell
        return target

    def state_id(self, cell: Cell) -> int:
        return cell[1] * self.width + cell[0]

    def cell(self, s: int) -> Cell:
        return (s % self.width, s // self.width)

    @classmethod
    def random(
        cls,
        rng: np.random.Generator,
        width: int = 10,
        height: int = 10,
        band_low: int = 4,
        band_high: int = 6,
        num_strong_columns: int = 2,
        num_obstacles: int = 3,
        min_detour: int = 0,
    ) -> "LiftGrid":
        """
        Seeded layout. Strong columns lie at least `min_detour` columns outside the span between
        the start and goal columns, so the band has to be searched sideways before it can be crossed.
        """
        if not 1 <= num_strong_columns <= width:
            raise ValueError(f"Need between 1 and {width} strong columns, got {num_strong_columns}")
        if min_detour < 0:
            raise ValueError(f"Minimum detour must be nonnegative, got {min_detour}")
        obstacle_rows = list(range(band_high + 1, height - 1))
        for attempt in range(MAX_LAYOUT_ATTEMPTS):
            start = (int(rng.integers(0, width)), 0)
            goal = (int(rng.integers(0, width)), height - 1)
            lo, hi = sorted((start[0], goal[0]))
            candidates = [c for c in range(width) if max(lo - c, c - hi, 0) >= min_detour]
            if len(candidates) < num_strong_columns:
                logger.debug(f"Lift grid attempt {attempt} rejected: {len(candidates)} columns {min_detour} "
                             f"away from [{lo}, {hi}]")
                continue
            strong = rng.choice(candidates, size=num_strong_columns, replace=False)
            cells = [(c, h) for h in obstacle_rows for c in range(width)]
            picks = rng.choice(len(cells), size=min(num_obstacles, len(cells)), replace=False) if cells else []
            obstacles = [cells[i] for i in picks]
            try:
                return cls(width, height, band_low, band_high, strong.tolist(), start, goal, obstacles)
            except ProblemDefinitionError as e:
                logger.debug(f"Lift grid attempt {attempt} rejected: {e}")
        raise ProblemDefinitionError(f"No valid lift grid found in {MAX_LAYOUT_ATTEMPTS} attempts")

    @classmethod
    def from_options(cls, opts: LiftGridOptions, rng: np.random.Generator) -> "LiftGrid":
        return cls.random(
            rng,
            width=opts.width,
            height=opts.height,
            band_low=opts.band_low,
            band_high=opts.band_high,
            num_strong_columns=opts.num_strong_columns,
            num_obstacles=opts.num_obstacles,
            min_detour=opts.min_detour,
        )
