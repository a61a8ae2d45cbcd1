from abc import ABC, abstractmethod
from functools import cached_property
import logging
from typing import Callable, Iterable, Optional, Protocol, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from typing_extensions import override

from .enums import Metric

logger = logging.getLogger(__name__)

OPTIMISM_TOLERANCE = 1e-9


class PlanningError(Exception):
    """Base class for failures raised while planning."""


class UnsolvableUnderModelError(PlanningError):
    """The open list ran empty before a goal or dummy node could be popped."""


class ContractViolationError(PlanningError):
    """A planner was called outside its preconditions."""


class ProblemDefinitionError(ValueError):
    """A problem or environment table breaks a structural invariant."""


class ValueStore(Protocol):
    def value(self, s: int) -> float: ...


class QStore(Protocol):
    def value(self, s: int, a: int) -> float: ...


class IncorrectSetView(Protocol):
    def contains(self, s: int, a: int) -> bool: ...


class Problem(ABC):
    """
    Deterministic shortest-path problem as seen by the planner: states, actions, goals,
    model dynamics and costs.
    """

    @property
    @abstractmethod
    def num_states(self) -> int:
        """Number of enumerable states. Ids run from 0 to num_states - 1."""

    @property
    @abstractmethod
    def num_actions(self) -> int:
        """Number of discrete actions. Every action is defined in every state."""

    @property
    @abstractmethod
    def goals(self) -> frozenset[int]:
        """Non-empty goal set."""

    @abstractmethod
    def model_step(self, s: int, a: int) -> int:
        """Successor predicted by the model."""

    @abstractmethod
    def cost(self, s: int, a: int) -> float:
        """Transition cost."""

    @property
    def actions(self) -> range:
        return range(self.num_actions)

    def is_goal(self, s: int) -> bool:
        return s in self.goals

    def next_table(self) -> np.ndarray:
        """Model successors for every (s, a) as an (S, A) integer array."""
        return np.array(
            [[self.model_step(s, a) for a in self.actions] for s in range(self.num_states)],
            dtype=np.int64,
        ).reshape(self.num_states, self.num_actions)

    def cost_table(self) -> np.ndarray:
        return np.array(
            [[self.cost(s, a) for a in self.actions] for s in range(self.num_states)],
            dtype=float,
        ).reshape(self.num_states, self.num_actions)


class TableProblem(Problem):
    """Problem backed by dense successor and cost tables."""

    def __init__(self, next_states, costs, goals: Iterable[int]) -> None:
        self._next = np.asarray(next_states, dtype=np.int64)
        self._costs = np.asarray(costs, dtype=float)
        self._goals = frozenset(int(g) for g in goals)
        self._validate()

        self._goal_mask = np.zeros(self.num_states, dtype=bool)
        self._goal_mask[list(self._goals)] = True

        self._next.setflags(write=False)
        self._costs.setflags(write=False)

    def _validate(self) -> None:
        if self._next.ndim != 2 or self._next.shape[1] == 0:
            raise ProblemDefinitionError(
                f"Successor table must be (states, actions), got shape {self._next.shape}")
        if self._costs.shape != self._next.shape:
            raise ProblemDefinitionError(
                f"Cost table shape {self._costs.shape} does not match successor table {self._next.shape}")
        num_states = self._next.shape[0]
        if self._next.min() < 0 or self._next.max() >= num_states:
            raise ProblemDefinitionError("Successor table refers to unknown states")
        if not self._goals:
            raise ProblemDefinitionError("Goal set must not be empty")
        if min(self._goals) < 0 or max(self._goals) >= num_states:
            raise ProblemDefinitionError(f"Goal ids out of range: {sorted(self._goals)}")
        if not np.all(np.isfinite(self._costs)) or self._costs.min() < 0 or self._costs.max() > 1:
            raise ProblemDefinitionError("Costs must lie in [0, 1]; rescale before building the problem")

        non_goal = np.ones(num_states, dtype=bool)
        non_goal[list(self._goals)] = False
        if np.any(self._costs[non_goal] <= 0):
            raise ProblemDefinitionError("Every transition out of a non-goal state must have positive cost")

    @property
    def num_states(self) -> int:
        return int(self._next.shape[0])

    @property
    def num_actions(self) -> int:
        return int(self._next.shape[1])

    @property
    def goals(self) -> frozenset[int]:
        return self._goals

    def is_goal(self, s: int) -> bool:
        return bool(self._goal_mask[s])

    def model_step(self, s: int, a: int) -> int:
        return int(self._next[s, a])

    def cost(self, s: int, a: int) -> float:
        return float(self._costs[s, a])

    def next_table(self) -> np.ndarray:
        return self._next

    def cost_table(self) -> np.ndarray:
        return self._costs


class Environment(TableProblem):
    """
    The planning model plus the hidden true dynamics, a start state and state coordinates.

        Construction checks that every state reaches a goal under the true dynamics and, when
        `optimistic_model` is set, that the model's optimal values never exceed the true ones.
    """

    def __init__(
        self,
        model_next,
        true_next,
        costs,
        goals: Iterable[int],
        start: int,
        coordinates=None,
        metric: Metric = Metric.MANHATTAN,
        optimistic_model: bool = False,
        name: str = "environment",
    ) -> None:
        super().__init__(model_next, costs, goals)
        self.name = name
        self._true_next = np.asarray(true_next, dtype=np.int64)
        if self._true_next.shape != self._next.shape:
            raise ProblemDefinitionError(
                f"True successor table shape {self._true_next.shape} does not match model {self._next.shape}")
        if self._true_next.min() < 0 or self._true_next.max() >= self.num_states:
            raise ProblemDefinitionError("True successor table refers to unknown states")
        self._true_next.setflags(write=False)

        if not 0 <= start < self.num_states:
            raise ProblemDefinitionError(f"Start state {start} out of range")
        self.start = int(start)

        if coordinates is None:
            coordinates = np.arange(self.num_states, dtype=float).reshape(-1, 1)
        self._coordinates = np.asarray(coordinates, dtype=float)
        if self._coordinates.ndim == 1:
            self._coordinates = self._coordinates.reshape(-1, 1)
        if self._coordinates.shape[0] != self.num_states:
            raise ProblemDefinitionError("Coordinates must have one row per state")
        self._coordinates.setflags(write=False)

        self.metric = metric
        self.optimistic_model = optimistic_model
        self.verify()

    def __str__(self):
        return f"{self.name}(|S|={self.num_states}, |A|={self.num_actions})"

    def true_step(self, s: int, a: int) -> int:
        return int(self._true_next[s, a])

    def true_table(self) -> np.ndarray:
        return self._true_next

    @property
    def coordinates(self) -> np.ndarray:
        return self._coordinates

    def distance(self, s1: int, s2: int) -> float:
        diff = self._coordinates[s1] - self._coordinates[s2]
        return float(np.linalg.norm(diff, ord=self.metric.p))

    @cached_property
    def _feature_scale(self) -> np.ndarray:
        extent = self._coordinates.max(axis=0) - self._coordinates.min(axis=0)
        return np.where(extent > 0, extent, 1.0)

    @cached_property
    def _goal_centroid(self) -> np.ndarray:
        return self._coordinates[sorted(self.goals)].mean(axis=0)

    def features(self, s: int) -> np.ndarray:
        """Bias, normalized coordinates and normalized offset to the goal centroid."""
        x = self._coordinates[s]
        return np.concatenate((
            [1.0],
            (x - self._coordinates.min(axis=0)) / self._feature_scale,
            (self._goal_centroid - x) / self._feature_scale,
        ))

    @property
    def num_features(self) -> int:
        return 1 + 2 * self._coordinates.shape[1]

    @cached_property
    def model_optimal_values(self) -> np.ndarray:
        return dijkstra_optimal_values(self).as_array()

    @cached_property
    def true_optimal_values(self) -> np.ndarray:
        return dijkstra_optimal_values(self, self._true_next).as_array()

    def verify(self) -> None:
        unreachable = np.flatnonzero(~np.isfinite(self.true_optimal_values))
        if unreachable.size:
            raise ProblemDefinitionError(
                f"{self.name}: {unreachable.size} states cannot reach a goal under the true dynamics, "
                f"e.g. {unreachable[:5].tolist()}")

        if self.optimistic_model:
            excess = self.model_optimal_values - self.true_optimal_values
            if np.any(excess > OPTIMISM_TOLERANCE):
                worst = int(np.argmax(excess))
                raise ProblemDefinitionError(
                    f"{self.name}: model is not optimistic at state {worst} "
                    f"(model {self.model_optimal_values[worst]} > true {self.true_optimal_values[worst]})")
        logger.debug(f"Verified {self}")


class PenalizedCostView(Problem):
    """The model with costs of known-incorrect pairs inflated to `penalty`."""

    def __init__(self, base: Problem, incorrect: IncorrectSetView, penalty: Optional[float] = None) -> None:
        self.base = base
        self.incorrect = incorrect
        self.penalty = float(base.num_states if penalty is None else penalty)
        if self.penalty <= 0:
            raise ValueError(f"Penalty must be positive, got {self.penalty}")

    @property
    @override
    def num_states(self) -> int:
        return self.base.num_states

    @property
    @override
    def num_actions(self) -> int:
        return self.base.num_actions

    @property
    @override
    def goals(self) -> frozenset[int]:
        return self.base.goals

    @override
    def is_goal(self, s: int) -> bool:
        return self.base.is_goal(s)

    @override
    def model_step(self, s: int, a: int) -> int:
        return self.base.model_step(s, a)

    @override
    def cost(self, s: int, a: int) -> float:
        return penalized_cost(self, s, a)

    @override
    def next_table(self) -> np.ndarray:
        return self.base.next_table()


def penalized_cost(view: PenalizedCostView, s: int, a: int) -> float:
    if view.incorrect.contains(s, a):
        return view.penalty
    return view.base.cost(s, a)


def is_discrepant(s_true: int, s_pred: int, xi: float, d: Callable[[int, int], float]) -> bool:
    """True iff the observed successor lies strictly further than xi from the prediction."""
    if xi < 0:
        raise ValueError(f"Discrepancy threshold must be nonnegative, got {xi}")
    if s_true == s_pred:
        return False
    return d(s_true, s_pred) > xi


class TabularValueStore:
    """Cost-to-goal estimates in a numpy vector. Goal entries stay at 0."""

    def __init__(self, values, goals: Iterable[int], check_finite: bool = True) -> None:
        self._values = np.array(values, dtype=float)
        self._goals = frozenset(int(g) for g in goals)
        if self._values.ndim != 1:
            raise ValueError("Value table must be one-dimensional")
        if check_finite and not np.all(np.isfinite(self._values)):
            raise ValueError("Value estimates must be finite")
        if np.any(self._values < 0):
            raise ValueError("Value estimates must be nonnegative")
        self._values[list(self._goals)] = 0.0

    def __len__(self) -> int:
        return len(self._values)

    def value(self, s: int) -> float:
        return float(self._values[s])

    def set(self, s: int, v: float) -> None:
        if s in self._goals:
            return
        if not np.isfinite(v) or v < 0:
            raise ValueError(f"Invalid value {v} for state {s}")
        self._values[s] = v

    def update(self, batch: Iterable[tuple[int, float]]) -> None:
        for s, v in batch:
            self.set(s, v)

    def as_array(self) -> np.ndarray:
        return self._values.copy()

    def copy(self) -> "TabularValueStore":
        return TabularValueStore(self._values, self._goals, check_finite=False)


class TabularQStore:
    """
    Dense Q-table. Entries start unset unless an initial table is given; reading an unset
    entry raises KeyError.
    """

    def __init__(self, num_states: int, num_actions: int, initial: Optional[np.ndarray] = None) -> None:
        if initial is None:
            self._q = np.full((num_states, num_actions), np.nan)
        else:
            self._q = np.array(initial, dtype=float)
            if self._q.shape != (num_states, num_actions):
                raise ValueError(f"Initial Q table has shape {self._q.shape}, expected {(num_states, num_actions)}")
            if not np.all(np.isfinite(self._q)) or np.any(self._q < 0):
                raise ValueError("Initial Q-values must be finite and nonnegative")

    def value(self, s: int, a: int) -> float:
        v = self._q[s, a]
        if np.isnan(v):
            raise KeyError(f"No Q-value stored for ({s}, {a})")
        return float(v)

    def is_set(self, s: int, a: int) -> bool:
        return not np.isnan(self._q[s, a])

    def set(self, s: int, a: int, v: float) -> None:
        if not np.isfinite(v) or v < 0:
            raise ValueError(f"Invalid Q-value {v} for ({s}, {a})")
        self._q[s, a] = v

    def row(self, s: int) -> np.ndarray:
        return self._q[s]

    def as_array(self) -> np.ndarray:
        return self._q.copy()


def model_q_initialization(problem: Problem, values: np.ndarray) -> np.ndarray:
    """Q(s, a) = c(s, a) + V(f̂(s, a)), zero on goal rows."""
    q = problem.cost_table() + values[problem.next_table()]
    q[list(problem.goals)] = 0.0
    return q


def dijkstra_optimal_values(
    problem: Problem,
    dynamics: Union[np.ndarray, Callable[[int, int], int], None] = None,
) -> TabularValueStore:
    """
    Exact optimal cost-to-goal under `dynamics` (the model when omitted) by a backward
    multi-source uniform-cost search from the goal set. Unreachable states get inf.
    """
    if dynamics is None:
        table = np.asarray(problem.next_table())
    elif callable(dynamics):
        table = np.array(
            [[dynamics(s, a) for a in problem.actions] for s in range(problem.num_states)],
            dtype=np.int64,
        ).reshape(problem.num_states, problem.num_actions)
    else:
        table = np.asarray(dynamics, dtype=np.int64)

    n = problem.num_states
    costs = np.asarray(problem.cost_table(), dtype=float)
    goal_mask = np.zeros(n, dtype=bool)
    goal_mask[list(problem.goals)] = True

    src = np.repeat(np.arange(n), problem.num_actions)
    dst = table.ravel()
    weights = costs.ravel()
    keep = (dst != src) & ~goal_mask[src]
    src, dst, weights = src[keep], dst[keep], weights[keep]

    # parallel edges collapse to their cheapest cost; a sparse matrix would sum them
    key = dst * n + src
    order = np.lexsort((weights, key))
    _, first = np.unique(key[order], return_index=True)
    chosen = order[first]

    reverse_graph = csr_matrix((weights[chosen], (dst[chosen], src[chosen])), shape=(n, n))
    distances = dijkstra(reverse_graph, directed=True, indices=sorted(problem.goals), min_only=True)
    distances = np.asarray(distances, dtype=float)
    distances[goal_mask] = 0.0
    return TabularValueStore(distances, problem.goals, check_finite=False)
