import logging
import math

from attrs import frozen

from .enums import ScheduleKind
from .options import ScheduleOptions

logger = logging.getLogger(__name__)


@frozen
class AlphaSchedule:
    """
    Non-increasing sequence alpha_i = 1 + beta_i used by A-CMAX++ to switch between the
    penalized and the Q-integrated action.

        exponential: beta_i = beta1 * rho^(i-1)
        linear:      beta falls by a constant amount so that beta_horizon = 0
        time-decay:  beta_i = beta1 / i
        step:        beta falls by beta1 * step_frequency / horizon every `step_frequency` repetitions
        lap-decrement: beta falls by `decrement` every `decrement_every` repetitions
        constant:    alpha_i = alpha
    """
    kind: ScheduleKind
    beta1: float = 100.0
    rho: float = 0.9
    horizon: int = 200
    step_frequency: int = 5
    decrement: float = 2.5
    decrement_every: int = 5
    alpha: float = math.inf

    def __attrs_post_init__(self) -> None:
        if self.beta1 < 0 or math.isnan(self.beta1):
            raise ValueError(f"beta1 must be nonnegative, got {self.beta1}")
        if self.kind is ScheduleKind.EXPONENTIAL and not 0 < self.rho < 1:
            raise ValueError(f"Exponential decay rate must lie in (0, 1), got {self.rho}")
        if self.kind in (ScheduleKind.LINEAR, ScheduleKind.STEP) and self.horizon < 2:
            raise ValueError(f"Horizon must be at least 2 repetitions, got {self.horizon}")
        if self.kind is ScheduleKind.STEP and self.step_frequency < 1:
            raise ValueError(f"Step frequency must be at least 1, got {self.step_frequency}")
        if self.kind is ScheduleKind.LAP_DECREMENT and (self.decrement < 0 or self.decrement_every < 1):
            raise ValueError(f"Invalid decrement {self.decrement} every {self.decrement_every} repetitions")
        if self.kind is ScheduleKind.CONSTANT and not self.alpha >= 1:
            raise ValueError(f"Constant alpha must be at least 1, got {self.alpha}")

    @classmethod
    def from_options(cls, opts: ScheduleOptions) -> "AlphaSchedule":
        kind = ScheduleKind(opts.kind)
        return cls(
            kind=kind,
            beta1=opts.beta1,
            rho=opts.rho,
            horizon=opts.horizon,
            step_frequency=opts.step_frequency,
            decrement=opts.decrement,
            decrement_every=opts.decrement_every,
            alpha=math.inf if opts.alpha is None else opts.alpha,
        )

    def beta(self, i: int) -> float:
        if i < 1:
            raise ValueError(f"Repetitions are numbered from 1, got {i}")

        match self.kind:
            case ScheduleKind.EXPONENTIAL:
                return self.beta1 * self.rho ** (i - 1)
            case ScheduleKind.LINEAR:
                return max(0.0, self.beta1 * (self.horizon - i) / (self.horizon - 1))
            case ScheduleKind.TIME_DECAY:
                return self.beta1 / i
            case ScheduleKind.STEP:
                decrement = self.beta1 * self.step_frequency / self.horizon
                return max(0.0, self.beta1 - decrement * ((i - 1) // self.step_frequency))
            case ScheduleKind.LAP_DECREMENT:
                return max(0.0, self.beta1 - self.decrement * ((i - 1) // self.decrement_every))
            case ScheduleKind.CONSTANT:
                return self.alpha - 1.0
        raise ValueError(f"Unknown schedule kind {self.kind}")

    def value(self, i: int) -> float:
        return 1.0 + self.beta(i)


def alpha_schedule_value(schedule: AlphaSchedule, i: int) -> float:
    return schedule.value(i)
