import logging
from typing import Any, Optional

import numpy as np
from scipy.spatial import cKDTree

from .enums import Metric

logger = logging.getLogger(__name__)

# Slack added to KD-tree query radii; candidates are re-checked exactly afterwards.
QUERY_SLACK = 1e-9


class ExactIncorrectSet:
    """(state, action) pairs known to be modelled wrongly."""

    def __init__(self) -> None:
        self._pairs: set[tuple[int, int]] = set()

    def __len__(self) -> int:
        return len(self._pairs)

    def insert(self, s: int, a: int, delta: Optional[float] = None) -> None:
        if delta is not None:
            raise ValueError("Exact incorrect sets take no radius")
        self._pairs.add((int(s), int(a)))

    def contains(self, s: int, a: int) -> bool:
        return (s, a) in self._pairs

    def snapshot(self) -> dict[str, Any]:
        return {"mode": "exact", "pairs": [list(p) for p in sorted(self._pairs)]}


class _EmptyIncorrectSet:
    """Read-only empty set handed to searches that must not create dummy nodes."""

    def __len__(self) -> int:
        return 0

    def contains(self, s: int, a: int) -> bool:
        return False

    def insert(self, s: int, a: int, delta: Optional[float] = None) -> None:
        raise TypeError("The empty incorrect set is immutable")

    def snapshot(self) -> dict[str, Any]:
        return {"mode": "empty"}


EMPTY_INCORRECT_SET = _EmptyIncorrectSet()


class _SphereBucket:
    """Spheres of one action: a KD-tree over indexed centers plus a linearly scanned tail."""

    def __init__(self, dim: int, metric: Metric, use_index: bool, rebuild_threshold: int) -> None:
        self.metric = metric
        self.use_index = use_index
        self.rebuild_threshold = rebuild_threshold

        self.indexed_centers = np.empty((0, dim))
        self.indexed_radii = np.empty(0)
        self.tree: Optional[cKDTree] = None
        self.max_indexed_radius = 0.0

        self.pending_centers: list[np.ndarray] = []
        self.pending_radii: list[float] = []

    def __len__(self) -> int:
        return len(self.indexed_radii) + len(self.pending_radii)

    def add(self, center: np.ndarray, radius: float) -> None:
        self.pending_centers.append(center)
        self.pending_radii.append(radius)
        if self.use_index and len(self.pending_radii) > max(self.rebuild_threshold, len(self.indexed_radii) // 4):
            self._rebuild()

    def _rebuild(self) -> None:
        self.indexed_centers = np.vstack([self.indexed_centers, np.array(self.pending_centers)])
        self.indexed_radii = np.concatenate([self.indexed_radii, np.array(self.pending_radii)])
        self.pending_centers.clear()
        self.pending_radii.clear()
        self.tree = cKDTree(self.indexed_centers)
        self.max_indexed_radius = float(self.indexed_radii.max())
        logger.debug(f"Rebuilt sphere index with {len(self.indexed_radii)} centers")

    def contains(self, point: np.ndarray) -> bool:
        if self.tree is not None:
            candidates = self.tree.query_ball_point(
                point, r=self.max_indexed_radius + QUERY_SLACK, p=self.metric.p)
            if candidates:
                idx = np.asarray(candidates, dtype=np.int64)
                d = np.linalg.norm(self.indexed_centers[idx] - point, ord=self.metric.p, axis=1)
                if np.any(d <= self.indexed_radii[idx]):
                    return True
        if self.pending_radii:
            d = np.linalg.norm(np.array(self.pending_centers) - point, ord=self.metric.p, axis=1)
            if np.any(d <= np.array(self.pending_radii)):
                return True
        return False

    def spheres(self) -> list[tuple[list[float], float]]:
        centers = list(self.indexed_centers) + self.pending_centers
        radii = list(self.indexed_radii) + self.pending_radii
        return [([float(x) for x in c], float(r)) for c, r in zip(centers, radii)]


class HypersphereSet:
    """
    Per-action unions of metric balls over state coordinates. A pair (s, a) is a member when
    the coordinates of s lie in some ball inserted for a, boundary included.

    Args:
        num_actions (int): size of the action set
        coordinates (np.ndarray | None): (states, dim) coordinates used by insert/contains.
            Without it only the point-level methods are available.
        metric (Metric): distance used for membership
        default_radius (float, optional): radius used when insert() gets none
        use_index (bool): False keeps every sphere in the linear scan
        rebuild_threshold (int): minimum tail length before the KD-tree is rebuilt
    """

    def __init__(
        self,
        num_actions: int,
        coordinates: Optional[np.ndarray] = None,
        metric: Metric = Metric.MANHATTAN,
        default_radius: Optional[float] = None,
        use_index: bool = True,
        rebuild_threshold: int = 32,
        dim: Optional[int] = None,
    ) -> None:
        self.coordinates = None if coordinates is None else np.asarray(coordinates, dtype=float)
        if dim is None:
            if self.coordinates is None:
                raise ValueError("Pass either state coordinates or the point dimension")
            dim = self.coordinates.shape[1]
        if default_radius is not None and default_radius < 0:
            raise ValueError(f"Radius must be nonnegative, got {default_radius}")

        self.num_actions = num_actions
        self.metric = metric
        self.default_radius = default_radius
        self.dim = dim
        self._buckets = [_SphereBucket(dim, metric, use_index, rebuild_threshold) for _ in range(num_actions)]

    def __len__(self) -> int:
        return sum(len(b) for b in self._buckets)

    def _point(self, s: int) -> np.ndarray:
        if self.coordinates is None:
            raise ValueError("This set has no state coordinates; use the point-level methods")
        return self.coordinates[s]

    def insert_point(self, center, a: int, delta: Optional[float] = None) -> None:
        radius = self.default_radius if delta is None else delta
        if radius is None or radius < 0:
            raise ValueError(f"Hypersphere radius must be a nonnegative number, got {radius}")
        center = np.asarray(center, dtype=float).reshape(self.dim)
        self._buckets[a].add(center, float(radius))

    def contains_point(self, point, a: int) -> bool:
        return self._buckets[a].contains(np.asarray(point, dtype=float).reshape(self.dim))

    def insert(self, s: int, a: int, delta: Optional[float] = None) -> None:
        self.insert_point(self._point(s), a, delta)

    def contains(self, s: int, a: int) -> bool:
        return self._buckets[a].contains(self._point(s))

    def snapshot(self) -> dict[str, Any]:
        return {
            "mode": "hypersphere",
            "metric": self.metric.value,
            "spheres": {str(a): bucket.spheres() for a, bucket in enumerate(self._buckets) if len(bucket)},
        }
