from abc import ABC, abstractmethod
import copy
import logging
import os
from typing import Any, Callable, Iterable

from attrs import field, frozen
import numpy as np
from typing_extensions import override

logger = logging.getLogger(__name__)

FeatureMap = Callable[[int], np.ndarray]


def _as_targets(values: Iterable[float]) -> np.ndarray:
    return np.asarray(list(values), dtype=float)


@frozen
class TrainingSet:
    """(input, target) pairs; inputs are states for V and (state, action) pairs for Q."""
    inputs: tuple = field(converter=tuple)
    targets: np.ndarray = field(converter=_as_targets, eq=False)

    def __attrs_post_init__(self) -> None:
        if len(self.inputs) != len(self.targets):
            raise ValueError(f"{len(self.inputs)} inputs but {len(self.targets)} targets")
        if not np.all(np.isfinite(self.targets)):
            raise ValueError("Training targets must be finite")
        if np.any(self.targets < 0):
            raise ValueError("Training targets must be nonnegative")

    def __len__(self) -> int:
        return len(self.inputs)


class Approximator(ABC):
    """
    Prediction = base heuristic + linear residual over a feature map. The residual starts at 0,
    so a fresh approximator reproduces its base heuristic.

        Parameters are stored as a (rows, features) matrix; value approximators use one row,
        Q approximators one row per action.
    """

    def __init__(self, features: FeatureMap, num_features: int, rows: int, weight_decay: float = 0.0) -> None:
        if weight_decay < 0:
            raise ValueError(f"Weight decay must be nonnegative, got {weight_decay}")
        self.features = features
        self.num_features = num_features
        self.weight_decay = weight_decay
        self._params = np.zeros((rows, num_features))

    @property
    def params(self) -> np.ndarray:
        return self._params.copy()

    @params.setter
    def params(self, new_params: np.ndarray) -> None:
        new_params = np.asarray(new_params, dtype=float)
        if new_params.shape != self._params.shape:
            raise ValueError(f"Parameter shape {new_params.shape} does not match {self._params.shape}")
        self._params = new_params.copy()

    @abstractmethod
    def _check(self, inp: Any) -> None:
        """Raise ValueError for inputs outside the environment."""

    @abstractmethod
    def _base(self, inp: Any) -> float:
        """Base heuristic for an input."""

    @abstractmethod
    def _row(self, inp: Any) -> int:
        """Parameter row used by an input."""

    @abstractmethod
    def _state(self, inp: Any) -> int:
        """State whose features an input uses."""

    def _is_fixed(self, inp: Any) -> bool:
        """Inputs whose prediction is pinned and excluded from training."""
        return False

    def evaluate(self, inp: Any) -> float:
        self._check(inp)
        if self._is_fixed(inp):
            return 0.0
        phi = self.features(self._state(inp))
        return float(self._base(inp) + self._params[self._row(inp)] @ phi)

    def _design(self, training_set: TrainingSet) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        keep = [i for i, inp in enumerate(training_set.inputs) if not self._is_fixed(inp)]
        inputs = [training_set.inputs[i] for i in keep]
        for inp in inputs:
            self._check(inp)
        phi = np.array([self.features(self._state(inp)) for inp in inputs]).reshape(len(inputs), self.num_features)
        rows = np.array([self._row(inp) for inp in inputs], dtype=np.int64)
        base = np.array([self._base(inp) for inp in inputs], dtype=float)
        return phi, rows, base, training_set.targets[keep]

    def loss(self, training_set: TrainingSet) -> float:
        """(1 / 2|T|) * sum of squared residuals, plus the weight decay term."""
        phi, rows, base, targets = self._design(training_set)
        n = max(len(training_set), 1)
        residual = targets - (base + np.einsum("ij,ij->i", self._params[rows], phi))
        decay = 0.5 * self.weight_decay * float(np.sum(self._params ** 2))
        return float(residual @ residual) / (2 * n) + decay

    def gradient(self, training_set: TrainingSet) -> np.ndarray:
        phi, rows, base, targets = self._design(training_set)
        n = max(len(training_set), 1)
        residual = targets - (base + np.einsum("ij,ij->i", self._params[rows], phi))
        grad = np.zeros_like(self._params)
        np.add.at(grad, rows, -(residual[:, None] * phi) / n)
        return grad + self.weight_decay * self._params

    def fit(self, training_set: TrainingSet, lr: float) -> float:
        """One gradient step. Returns the loss before the step."""
        if len(training_set) == 0:
            raise ValueError("Cannot fit on an empty training set")
        if lr <= 0:
            raise ValueError(f"Learning rate must be positive, got {lr}")
        loss = self.loss(training_set)
        self._params -= lr * self.gradient(training_set)
        return loss

    def copy(self):
        clone = copy.copy(self)
        clone._params = self._params.copy()
        return clone

    def save(self, path: str) -> None:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        np.savez(path, params=self._params)
        logger.debug(f"Saved parameters to {path}")

    def load(self, path: str) -> None:
        with np.load(path) as data:
            self.params = data["params"]


class LinearValueApproximator(Approximator):
    """V(s) = base(s) + w . phi(s); goals are pinned to 0."""

    def __init__(
        self,
        features: FeatureMap,
        base: Callable[[int], float],
        num_states: int,
        num_features: int,
        goals: Iterable[int] = (),
        weight_decay: float = 0.0,
    ) -> None:
        super().__init__(features, num_features, rows=1, weight_decay=weight_decay)
        self.base = base
        self.num_states = num_states
        self.goals = frozenset(goals)

    @override
    def _check(self, inp: int) -> None:
        if not 0 <= inp < self.num_states:
            raise ValueError(f"State {inp} outside [0, {self.num_states})")

    @override
    def _base(self, inp: int) -> float:
        return self.base(inp)

    @override
    def _row(self, inp: int) -> int:
        return 0

    @override
    def _state(self, inp: int) -> int:
        return inp

    @override
    def _is_fixed(self, inp: int) -> bool:
        return inp in self.goals

    def value(self, s: int) -> float:
        return self.evaluate(s)


class LinearQApproximator(Approximator):
    """Q(s, a) = base(s, a) + W[a] . phi(s): one output per action from shared features."""

    def __init__(
        self,
        features: FeatureMap,
        base: Callable[[int, int], float],
        num_states: int,
        num_actions: int,
        num_features: int,
        weight_decay: float = 0.0,
    ) -> None:
        super().__init__(features, num_features, rows=num_actions, weight_decay=weight_decay)
        self.base = base
        self.num_states = num_states
        self.num_actions = num_actions

    @override
    def _check(self, inp: tuple[int, int]) -> None:
        s, a = inp
        if not 0 <= s < self.num_states or not 0 <= a < self.num_actions:
            raise ValueError(f"Pair {inp} outside the state/action ranges")

    @override
    def _base(self, inp: tuple[int, int]) -> float:
        return self.base(*inp)

    @override
    def _row(self, inp: tuple[int, int]) -> int:
        return inp[1]

    @override
    def _state(self, inp: tuple[int, int]) -> int:
        return inp[0]

    def value(self, s: int, a: int) -> float:
        return self.evaluate((s, a))


def one_hot_features(num_states: int) -> FeatureMap:
    eye = np.eye(num_states)
    return lambda s: eye[s]


def polyak_update(target_params: np.ndarray, online_params: np.ndarray, tau: float) -> np.ndarray:
    """tau * online + (1 - tau) * target, elementwise."""
    if not 0 < tau <= 1:
        raise ValueError(f"Polyak coefficient must lie in (0, 1], got {tau}")
    target_params = np.asarray(target_params, dtype=float)
    online_params = np.asarray(online_params, dtype=float)
    if target_params.shape != online_params.shape:
        raise ValueError(f"Shape mismatch: target {target_params.shape} vs online {online_params.shape}")
    return tau * online_params + (1 - tau) * target_params


def merge_into(target: Approximator, online: Approximator, tau: float) -> None:
    target.params = polyak_update(target.params, online.params, tau)

