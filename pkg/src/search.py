"""
Hybrid limited-expansion search.

A best-first search over the model that expands at most K states. Pairs known to be modelled
wrongly are not expanded through the model; they become dummy leaves priced by Q. After the
search every closed state gets the RTAA*-style update V(s') = p(best) - g(s'), returned as a
batch for the caller to apply.
"""
import heapq
import itertools
import json
import logging
from typing import Optional

from attrs import define, frozen

from .core import ContractViolationError, IncorrectSetView, Problem, QStore, UnsolvableUnderModelError, ValueStore
from .enums import Termination

logger = logging.getLogger(__name__)
trace_logger = logging.getLogger("src.trace")


@define(eq=False)
class SearchNode:
    state: Optional[int]            # None for dummy leaves
    g: float
    priority: float
    parent: Optional["SearchNode"] = None
    arriving_action: Optional[int] = None
    is_dummy: bool = False
    stale: bool = False


@frozen
class SearchResult:
    best_action: int
    best_priority: float
    value_updates: list[tuple[int, float]]
    expansions_used: int
    terminated_on: Termination
    best_node_state: Optional[int] = None


class _OpenList:
    """Binary heap ordered by (priority, larger g first, insertion order) with lazy deletion."""

    def __init__(self) -> None:
        self._heap: list[tuple[float, float, int, SearchNode]] = []
        self._by_state: dict[int, SearchNode] = {}
        self._counter = itertools.count()
        self._live = 0

    def __len__(self) -> int:
        return self._live

    def push(self, node: SearchNode, tie_g: float) -> None:
        if node.state is not None:
            self._by_state[node.state] = node
        heapq.heappush(self._heap, (node.priority, -tie_g, next(self._counter), node))
        self._live += 1

    def get(self, state: int) -> Optional[SearchNode]:
        return self._by_state.get(state)

    def replace(self, old: SearchNode, new: SearchNode) -> None:
        old.stale = True
        self._live -= 1
        self.push(new, new.g)

    def pop(self) -> Optional[SearchNode]:
        while self._heap:
            node = heapq.heappop(self._heap)[3]
            if node.stale:
                continue
            if node.state is not None:
                del self._by_state[node.state]
            node.stale = True
            self._live -= 1
            return node
        return None


def _first_action(node: SearchNode) -> int:
    while node.parent is not None and node.parent.parent is not None:
        node = node.parent
    if node.arriving_action is None:
        raise ContractViolationError("Best node is the search root")
    return node.arriving_action


def search(
    s: int,
    problem: Problem,
    V: ValueStore,
    Q: Optional[QStore],
    X: IncorrectSetView,
    K: int,
    trace: bool = False,
) -> SearchResult:
    """
    Run one limited-expansion search from `s`.

    Args:
        s (int): root state, must not be a goal
        problem (Problem): model used for expansion and costs
        V (ValueStore): heuristic values, read only
        Q (QStore | None): prices for dummy leaves; only read for pairs in X
        X (IncorrectSetView): pairs expanded as dummy leaves
        K (int): expansion budget, at least 1
        trace (bool): emit one structured record per expansion

    Raises:
        ContractViolationError: s is a goal or K < 1
        UnsolvableUnderModelError: the open list empties before a goal, dummy or budget end

    Returns:
        SearchResult: first action towards the best node, its priority and the value batch
    """
    if problem.is_goal(s):
        raise ContractViolationError(f"Search called on goal state {s}")
    if K < 1:
        raise ContractViolationError(f"Expansion budget must be at least 1, got {K}")

    open_list = _OpenList()
    closed: dict[int, SearchNode] = {}
    open_list.push(SearchNode(s, 0.0, V.value(s)), 0.0)

    best: Optional[SearchNode] = None
    terminated_on = Termination.BUDGET

    for _ in range(K):
        node = open_list.pop()
        if node is None:
            raise UnsolvableUnderModelError(f"No goal reachable from {s} under the model")
        if node.is_dummy:
            best, terminated_on = node, Termination.DUMMY
            break
        if problem.is_goal(node.state):
            best, terminated_on = node, Termination.GOAL
            break

        closed[node.state] = node
        if trace:
            trace_logger.info(json.dumps({
                "event": "expand", "root": s, "state": node.state, "g": node.g,
                "priority": node.priority, "open": len(open_list),
            }))

        for a in problem.actions:
            if X.contains(node.state, a):
                if Q is None:
                    raise ContractViolationError(f"Pair ({node.state}, {a}) is incorrect but no Q-values were given")
                dummy = SearchNode(None, node.g, node.g + Q.value(node.state, a), node, a, is_dummy=True)
                open_list.push(dummy, node.g)
                continue

            succ = problem.model_step(node.state, a)
            if succ in closed:
                continue
            g_new = node.g + problem.cost(node.state, a)
            existing = open_list.get(succ)
            if existing is None:
                h = 0.0 if problem.is_goal(succ) else V.value(succ)
                open_list.push(SearchNode(succ, g_new, g_new + h, node, a), g_new)
            elif g_new < existing.g:
                h = existing.priority - existing.g
                open_list.replace(existing, SearchNode(succ, g_new, g_new + h, node, a))
    else:
        best = open_list.pop()
        if best is None:
            raise UnsolvableUnderModelError(f"No goal reachable from {s} under the model")
        if best.is_dummy:
            terminated_on = Termination.DUMMY
        elif problem.is_goal(best.state):
            terminated_on = Termination.GOAL

    assert best is not None
    updates = [(state, best.priority - n.g) for state, n in closed.items()]
    result = SearchResult(
        best_action=_first_action(best),
        best_priority=best.priority,
        value_updates=updates,
        expansions_used=len(closed),
        terminated_on=terminated_on,
        best_node_state=best.state,
    )
    logger.debug(f"search({s}): {result.terminated_on.value} after {result.expansions_used} expansions, "
                 f"{result.best_action=}, {result.best_priority=}")
    return result
