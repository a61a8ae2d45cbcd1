import json
import logging
import math
import time
from typing import Any, Callable, Optional, Sequence, Union

from attrs import define, field, frozen
import numpy as np

from .approximators import (
    LinearQApproximator,
    LinearValueApproximator,
    TrainingSet,
    merge_into,
)
from .core import (
    Environment,
    IncorrectSetView,
    PenalizedCostView,
    Problem,
    QStore,
    TabularQStore,
    TabularValueStore,
    UnsolvableUnderModelError,
    ValueStore,
    is_discrepant,
    model_q_initialization,
)
from .enums import ActionSource, AgentKind, ApproximatorMode, IncorrectSetMode, InitialValues, Metric
from .incorrect_set import EMPTY_INCORRECT_SET, ExactIncorrectSet, HypersphereSet
from .options import ExperimentOptions
from .schedules import AlphaSchedule
from .search import SearchResult, search

logger = logging.getLogger(__name__)
trace_logger = logging.getLogger("src.trace")

IncorrectSet = Union[ExactIncorrectSet, HypersphereSet]


@frozen
class DiscrepancyEvent:
    t: int
    state: int
    action: int
    predicted: int
    observed: int


@frozen
class StepOutcome:
    action: int
    next_state: int
    cost: float
    events: tuple[DiscrepancyEvent, ...]
    source: ActionSource


@define
class RepetitionRecord:
    index: int
    steps: int
    cost: float
    success: bool
    events: list[DiscrepancyEvent] = field(factory=list)
    sources: list[ActionSource] = field(factory=list)
    wall_ms: float = 0.0


@frozen
class Transition:
    state: int
    action: int
    next_state: int
    cost: float


@define
class ReplayBuffers:
    states: list[int] = field(factory=list)
    transitions: list[Transition] = field(factory=list)


@frozen
class LearningSettings:
    batch_size: int = 16
    learning_rate: float = 0.001
    updates_v: int = 3
    updates_q: int = 5
    polyak: float = 0.5


@define
class AgentState:
    """
    Everything an agent carries between steps and repetitions. Nothing here is reset
    between repetitions.

        V_penalized exists only for A-CMAX++. Buffers, learning settings and target copies
        exist only when values are approximated.
    """
    kind: AgentKind
    V: Any
    Q: Any
    X: IncorrectSet
    K: int
    penalty: Optional[float] = None
    V_penalized: Any = None
    buffers: Optional[ReplayBuffers] = None
    learning: Optional[LearningSettings] = None
    V_target: Any = None
    Q_target: Any = None
    xi: float = 0.0
    delta: Optional[float] = None
    rng: np.random.Generator = field(factory=np.random.default_rng)
    t: int = 0
    trace: bool = False

    def __attrs_post_init__(self) -> None:
        if self.K < 1:
            raise ValueError(f"Expansion budget must be at least 1, got {self.K}")
        if (self.V_penalized is not None) != (self.kind is AgentKind.ACMAXPP):
            raise ValueError("Penalized values are kept by A-CMAX++ agents and only by them")
        if (self.buffers is not None) != (self.learning is not None):
            raise ValueError("Replay buffers and learning settings go together")
        if self.kind is AgentKind.QLEARNING and not isinstance(self.Q, TabularQStore):
            raise ValueError("Q-learning needs a tabular Q store")
        if self.kind.plans_with_q and self.Q is None:
            raise ValueError(f"{self.kind.value} agents need a Q store")

    @property
    def approximate(self) -> bool:
        return self.buffers is not None

    @classmethod
    def from_options(cls, options: ExperimentOptions, env: Environment, rng: np.random.Generator) -> "AgentState":
        """Wire an agent for `env` from a validated experiment config."""
        kind = AgentKind(options.agent.kind)
        mode = ApproximatorMode(options.approximator.mode)
        set_mode = IncorrectSetMode(options.discrepancy.incorrect_set)
        metric = Metric(options.discrepancy.metric)

        if InitialValues(options.agent.initial_values) is InitialValues.MODEL:
            # states the model cannot route to a goal get |S|, above any finite optimum
            h = np.where(np.isfinite(env.model_optimal_values), env.model_optimal_values, float(env.num_states))
        else:
            h = np.zeros(env.num_states)
        h[list(env.goals)] = 0.0

        if set_mode is IncorrectSetMode.EXACT:
            X: IncorrectSet = ExactIncorrectSet()
            delta = None
        else:
            X = HypersphereSet(env.num_actions, env.coordinates, metric, default_radius=options.discrepancy.delta)
            delta = options.discrepancy.delta

        common = dict(
            kind=kind, X=X, K=options.agent.expansions, penalty=options.agent.penalty,
            xi=options.discrepancy.xi, delta=delta, rng=rng, trace=options.trace,
        )

        if kind is AgentKind.QLEARNING:
            return cls(V=TabularValueStore(h, env.goals), Q=TabularQStore(
                env.num_states, env.num_actions, model_q_initialization(env, h)), **common)

        if mode is ApproximatorMode.TABULAR:
            V = TabularValueStore(h, env.goals)
            return cls(
                V=V,
                Q=TabularQStore(env.num_states, env.num_actions) if kind.plans_with_q else None,
                V_penalized=V.copy() if kind is AgentKind.ACMAXPP else None,
                **common,
            )

        approx = options.approximator
        V = LinearValueApproximator(
            env.features, lambda s: float(h[s]), env.num_states, env.num_features, env.goals, approx.weight_decay)
        Q = None
        if kind.plans_with_q:
            Q = LinearQApproximator(
                env.features, lambda s, a: env.cost(s, a) + float(h[env.model_step(s, a)]),
                env.num_states, env.num_actions, env.num_features, approx.weight_decay)
        return cls(
            V=V,
            Q=Q,
            V_penalized=V.copy() if kind is AgentKind.ACMAXPP else None,
            buffers=ReplayBuffers(),
            learning=LearningSettings(
                approx.batch_size, approx.learning_rate, approx.updates_v, approx.updates_q, approx.polyak),
            V_target=V.copy(),
            Q_target=None if Q is None else Q.copy(),
            **common,
        )


def penalized_view(agent: AgentState, env: Environment) -> PenalizedCostView:
    return PenalizedCostView(env, agent.X, agent.penalty)


def _plan(agent: AgentState, problem: Problem, V: ValueStore, Q: Optional[QStore], X: IncorrectSetView,
          s: int) -> SearchResult:
    return search(s, problem, V, Q, X, agent.K, trace=agent.trace)


def _apply(store: Any, result: SearchResult) -> None:
    # approximated values learn from the replay buffers instead
    if isinstance(store, TabularValueStore):
        store.update(result.value_updates)


def _is_discrepant(agent: AgentState, env: Environment, s_true: int, s_pred: int) -> bool:
    if isinstance(agent.X, HypersphereSet):
        return is_discrepant(s_true, s_pred, agent.xi, env.distance)
    return s_true != s_pred


def _mark_incorrect(agent: AgentState, env: Environment, s_t: int, a_t: int, s_pred: int, s_next: int,
                    refresh_q: bool) -> DiscrepancyEvent:
    if not (isinstance(agent.X, HypersphereSet) and agent.X.contains(s_t, a_t)):
        agent.X.insert(s_t, a_t, agent.delta)
    if refresh_q and isinstance(agent.Q, TabularQStore):
        agent.Q.set(s_t, a_t, env.cost(s_t, a_t) + agent.V.value(s_next))
    return DiscrepancyEvent(agent.t, s_t, a_t, s_pred, s_next)


def _finish(agent: AgentState, env: Environment, s_t: int, a_t: int, s_pred: int, s_next: int,
            events: list[DiscrepancyEvent], source: ActionSource) -> StepOutcome:
    cost = env.cost(s_t, a_t)
    if agent.approximate:
        _learn(agent, env, Transition(s_t, a_t, s_next, cost))
    if agent.trace:
        trace_logger.info(json.dumps({
            "event": "step", "t": agent.t, "s": s_t, "a": a_t, "s_pred": s_pred, "s_true": s_next,
            "discrepancy": bool(events), "branch": source.value, "V": agent.V.value(s_t),
            "V_penalized": None if agent.V_penalized is None else agent.V_penalized.value(s_t),
        }))
    agent.t += 1
    return StepOutcome(a_t, s_next, cost, tuple(events), source)


def cmaxpp_step(agent: AgentState, env: Environment, s_t: int) -> StepOutcome:
    """Plan on the unpenalized model with Q-priced dummies for known-incorrect pairs, then act."""
    result = _plan(agent, env, agent.V, agent.Q, agent.X, s_t)
    _apply(agent.V, result)

    a_t = result.best_action
    s_next, s_pred = env.true_step(s_t, a_t), env.model_step(s_t, a_t)
    events = []
    if _is_discrepant(agent, env, s_next, s_pred):
        events.append(_mark_incorrect(agent, env, s_t, a_t, s_pred, s_next, refresh_q=True))
    return _finish(agent, env, s_t, a_t, s_pred, s_next, events, ActionSource.CMAXPP)


def choose_branch(v_penalized: float, v: float, alpha: float) -> ActionSource:
    """Penalized (CMAX) action when V_penalized(s) <= alpha * V(s), otherwise the CMAX++ action."""
    if math.isinf(alpha) or v_penalized <= alpha * v:
        return ActionSource.CMAX
    return ActionSource.CMAXPP


def acmaxpp_step(agent: AgentState, env: Environment, s_t: int, alpha: float) -> StepOutcome:
    """Run both searches, update both value stores, and execute the branch the switch selects."""
    if not alpha >= 1:
        raise ValueError(f"alpha must be at least 1, got {alpha}")

    results: dict[ActionSource, Optional[SearchResult]] = {}
    failures: dict[ActionSource, UnsolvableUnderModelError] = {}
    for source, problem, V, Q, X in (
        (ActionSource.CMAXPP, env, agent.V, agent.Q, agent.X),
        (ActionSource.CMAX, penalized_view(agent, env), agent.V_penalized, None, EMPTY_INCORRECT_SET),
    ):
        try:
            results[source] = _plan(agent, problem, V, Q, X, s_t)
            _apply(V, results[source])
        except UnsolvableUnderModelError as e:
            results[source] = None
            failures[source] = e

    source = choose_branch(agent.V_penalized.value(s_t), agent.V.value(s_t), alpha)
    chosen = results[source]
    if chosen is None:
        raise failures[source]

    a_t = chosen.best_action
    s_next, s_pred = env.true_step(s_t, a_t), env.model_step(s_t, a_t)
    events = []
    if _is_discrepant(agent, env, s_next, s_pred):
        events.append(_mark_incorrect(agent, env, s_t, a_t, s_pred, s_next, refresh_q=True))
    return _finish(agent, env, s_t, a_t, s_pred, s_next, events, source)


def cmax_step(agent: AgentState, env: Environment, s_t: int) -> StepOutcome:
    """Plan on the penalized model without dummies; discrepancies only inflate costs."""
    result = _plan(agent, penalized_view(agent, env), agent.V, None, EMPTY_INCORRECT_SET, s_t)
    _apply(agent.V, result)

    a_t = result.best_action
    s_next, s_pred = env.true_step(s_t, a_t), env.model_step(s_t, a_t)
    events = []
    if _is_discrepant(agent, env, s_next, s_pred):
        events.append(_mark_incorrect(agent, env, s_t, a_t, s_pred, s_next, refresh_q=False))
    return _finish(agent, env, s_t, a_t, s_pred, s_next, events, ActionSource.CMAX)


def qlearning_step(agent: AgentState, env: Environment, s_t: int) -> StepOutcome:
    """Greedy deterministic Q-learning; ties go to the lowest action id."""
    a_t = int(np.argmin(agent.Q.row(s_t)))
    s_next, s_pred = env.true_step(s_t, a_t), env.model_step(s_t, a_t)
    future = 0.0 if env.is_goal(s_next) else float(np.min(agent.Q.row(s_next)))
    agent.Q.set(s_t, a_t, env.cost(s_t, a_t) + future)

    events = [DiscrepancyEvent(agent.t, s_t, a_t, s_pred, s_next)] if s_next != s_pred else []
    return _finish(agent, env, s_t, a_t, s_pred, s_next, events, ActionSource.QLEARNING)


def build_q_training_set(transitions: Sequence[Transition], V: ValueStore) -> TrainingSet:
    """Targets c(s, a) + V(s') for each transition."""
    return TrainingSet(
        [(tr.state, tr.action) for tr in transitions],
        [max(0.0, tr.cost + V.value(tr.next_state)) for tr in transitions],
    )


def build_v_training_set(roots: Sequence[int], V: ValueStore, Q: Optional[QStore], X: IncorrectSetView,
                         K: int, problem: Problem) -> TrainingSet:
    """Closed states and their updated values from one search per non-goal root."""
    inputs, targets = [], []
    for s in roots:
        if problem.is_goal(s):
            continue
        try:
            result = search(s, problem, V, Q, X, K)
        except UnsolvableUnderModelError:
            logger.debug(f"Skipping value target from {s}: no goal under the model")
            continue
        for state, value in result.value_updates:
            inputs.append(state)
            targets.append(max(0.0, value))
    return TrainingSet(inputs, targets)


def q_update(Q: LinearQApproximator, V: ValueStore, transitions: Sequence[Transition], batch_size: int,
             lr: float, rng: np.random.Generator) -> float:
    """One gradient step of Q towards c + V(s') on a batch drawn with replacement."""
    if not transitions:
        logger.warning("Transition buffer is empty; skipping Q update")
        return 0.0
    picks = rng.integers(0, len(transitions), size=batch_size)
    return Q.fit(build_q_training_set([transitions[i] for i in picks], V), lr)


def v_update(V: LinearValueApproximator, Q: Optional[QStore], states: Sequence[int], X: IncorrectSetView,
             batch_size: int, lr: float, K: int, problem: Problem, rng: np.random.Generator) -> float:
    """One gradient step of V towards the search updates from a batch of buffered states."""
    if not states:
        logger.warning("State buffer is empty; skipping V update")
        return 0.0
    picks = rng.integers(0, len(states), size=batch_size)
    training_set = build_v_training_set([states[i] for i in picks], V, Q, X, K, problem)
    if len(training_set) == 0:
        return 0.0
    return V.fit(training_set, lr)


def _learn(agent: AgentState, env: Environment, transition: Transition) -> None:
    buffers, settings = agent.buffers, agent.learning
    buffers.states.append(transition.state)
    buffers.transitions.append(transition)

    penalized = penalized_view(agent, env)
    for u in range(max(settings.updates_q, settings.updates_v)):
        if u < settings.updates_q and agent.Q is not None:
            q_update(agent.Q, agent.V_target, buffers.transitions, settings.batch_size, settings.learning_rate,
                     agent.rng)
        if u < settings.updates_v:
            if agent.kind is AgentKind.CMAX:
                v_update(agent.V, None, buffers.states, EMPTY_INCORRECT_SET, settings.batch_size,
                         settings.learning_rate, agent.K, penalized, agent.rng)
            else:
                v_update(agent.V, agent.Q_target, buffers.states, agent.X, settings.batch_size,
                         settings.learning_rate, agent.K, env, agent.rng)
            if agent.V_penalized is not None:
                v_update(agent.V_penalized, None, buffers.states, EMPTY_INCORRECT_SET, settings.batch_size,
                         settings.learning_rate, agent.K, penalized, agent.rng)

        merge_into(agent.V_target, agent.V, settings.polyak)
        if agent.Q is not None:
            merge_into(agent.Q_target, agent.Q, settings.polyak)


def take_step(agent: AgentState, env: Environment, s_t: int, alpha: Optional[float] = None) -> StepOutcome:
    match agent.kind:
        case AgentKind.CMAXPP:
            return cmaxpp_step(agent, env, s_t)
        case AgentKind.ACMAXPP:
            if alpha is None:
                raise ValueError("A-CMAX++ steps need an alpha")
            return acmaxpp_step(agent, env, s_t, alpha)
        case AgentKind.CMAX:
            return cmax_step(agent, env, s_t)
        case AgentKind.QLEARNING:
            return qlearning_step(agent, env, s_t)
    raise ValueError(f"Unknown agent kind {agent.kind}")


Observer = Callable[[AgentState, StepOutcome], None]


def run_repetition(
    agent: AgentState,
    env: Environment,
    step_cap: int,
    index: int = 1,
    alpha: Optional[float] = None,
    observer: Optional[Observer] = None,
) -> RepetitionRecord:
    """Act from env.start until a goal or the step cap. Unsolvable searches end the repetition as a failure."""
    if step_cap < 1:
        raise ValueError(f"Step cap must be at least 1, got {step_cap}")

    started = time.perf_counter()
    record = RepetitionRecord(index=index, steps=0, cost=0.0, success=env.is_goal(env.start))
    s = env.start
    while not record.success and record.steps < step_cap:
        try:
            outcome = take_step(agent, env, s, alpha)
        except UnsolvableUnderModelError as e:
            logger.error(f"Repetition {index} stopped at state {s}: {e}")
            break
        record.steps += 1
        record.cost += outcome.cost
        record.events.extend(outcome.events)
        record.sources.append(outcome.source)
        s = outcome.next_state
        record.success = env.is_goal(s)
        if observer is not None:
            observer(agent, outcome)

    record.wall_ms = (time.perf_counter() - started) * 1000
    logger.info(f"Repetition {index} ({agent.kind.value}): {'success' if record.success else 'failure'} "
                f"after {record.steps} steps, cost {record.cost:.3f}, {len(record.events)} discrepancies")
    return record


def run_task(
    agent: AgentState,
    env: Environment,
    repetitions: int,
    step_cap: int,
    schedule: Optional[AlphaSchedule] = None,
    abort_on_failure: bool = True,
    observer: Optional[Observer] = None,
    on_record: Optional[Callable[[RepetitionRecord], None]] = None,
) -> list[RepetitionRecord]:
    """Run up to `repetitions` repetitions, stopping after the first failure unless told otherwise."""
    if repetitions < 1:
        raise ValueError(f"Need at least one repetition, got {repetitions}")
    if agent.kind is AgentKind.ACMAXPP and schedule is None:
        raise ValueError("A-CMAX++ needs an alpha schedule")

    records = []
    for i in range(1, repetitions + 1):
        alpha = schedule.value(i) if agent.kind is AgentKind.ACMAXPP else None
        record = run_repetition(agent, env, step_cap, index=i, alpha=alpha, observer=observer)
        records.append(record)
        if on_record is not None:
            on_record(record)
        if not record.success and abort_on_failure:
            logger.info(f"Stopping after failed repetition {i} of {repetitions}")
            break
    return records
