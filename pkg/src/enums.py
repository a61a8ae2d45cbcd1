from enum import Enum


class AgentKind(Enum):
    """Agents selectable from an experiment config."""
    CMAX = "cmax"
    CMAXPP = "cmaxpp"
    ACMAXPP = "acmaxpp"
    QLEARNING = "qlearning"

    @property
    def plans_with_q(self) -> bool:
        """True for agents whose search prices incorrect pairs with Q-values."""
        return self in (AgentKind.CMAXPP, AgentKind.ACMAXPP)


class ActionSource(Enum):
    """Which branch produced an executed action."""
    CMAX = "cmax"
    CMAXPP = "cmaxpp"
    QLEARNING = "qlearning"


class Termination(Enum):
    """Why a limited-expansion search stopped."""
    GOAL = "goal"
    DUMMY = "dummy"
    BUDGET = "budget"


class StepMode(Enum):
    MODEL = "model"
    TRUE = "true"


class Metric(Enum):
    """
    Distance used for discrepancy tests and hypersphere membership over state coordinates.
    """
    MANHATTAN = "manhattan"
    EUCLIDEAN = "euclidean"
    CHEBYSHEV = "chebyshev"

    @property
    def p(self) -> float:
        """Minkowski order, as accepted by scipy's KD-tree queries."""
        orders = {
            Metric.MANHATTAN: 1.0,
            Metric.EUCLIDEAN: 2.0,
            Metric.CHEBYSHEV: float("inf"),
        }
        return orders[self]


class ScheduleKind(Enum):
    EXPONENTIAL = "exponential"
    LINEAR = "linear"
    TIME_DECAY = "time-decay"
    STEP = "step"
    LAP_DECREMENT = "lap-decrement"
    CONSTANT = "constant"

    @classmethod
    def _missing_(cls, value):
        # alternate name of the lap-decrement kind
        if value == "paper-nav":
            return cls.LAP_DECREMENT
        return None


class InitialValues(Enum):
    """Where the agent's starting V comes from."""
    MODEL = "model"     # optimal values of the model, admissible under an optimistic model
    ZERO = "zero"


class IncorrectSetMode(Enum):
    EXACT = "exact"
    HYPERSPHERE = "hypersphere"


class ApproximatorMode(Enum):
    TABULAR = "tabular"
    LINEAR = "linear"


def enum_values(enum_cls: type[Enum]) -> list[str]:
    return [e.value for e in enum_cls]
