from dataclasses import dataclass, field
from typing import ClassVar, Optional, Union


@dataclass
class GridNavIceOptions:
    """ Icy grid navigation, from an ASCII map or a seeded layout """
    kind: ClassVar[str] = "grid-nav-ice"

    layout: str = "bottleneck"         # bottleneck | open | ascii
    ascii_map: Optional[list[str]] = None
    size: int = 12
    obstacle_density: float = 0.2
    optimistic_model: bool = True


@dataclass
class LiftGridOptions:
    """ Column/height grid with a heavy band that can only be crossed through strong columns """
    kind: ClassVar[str] = "lift-grid"

    width: int = 10
    height: int = 10
    band_low: int = 4
    band_high: int = 6
    num_strong_columns: int = 2
    num_obstacles: int = 3
    min_detour: int = 0                 # columns between the start-goal span and every strong column


@dataclass
class LatticeOptions:
    """ Track navigation on an x/y/heading lattice with icy patches """
    kind: ClassVar[str] = "lattice"

    size_x: int = 50
    size_y: int = 50
    headings: int = 8
    steering: list[float] = field(default_factory=lambda: [-0.6, 0.0, 0.6])
    speeds: list[float] = field(default_factory=lambda: [1.0, -1.0])
    wheelbase: float = 1.3
    max_length: int = 3
    substeps: int = 10
    position_tolerance: float = 0.75
    heading_tolerance: Optional[float] = None
    track_width: int = 6
    margin: int = 2
    num_patches: int = 3
    patch_size: int = 3
    off_track_cost: float = 100.0
    full_scale: bool = False
    cache_dir: Optional[str] = None


EnvironmentOptions = Union[GridNavIceOptions, LiftGridOptions, LatticeOptions]


@dataclass
class AgentOptions:
    """ Agent kind and planning budget """
    kind: str
    expansions: int
    penalty: Optional[float] = None
    initial_values: str = "model"


@dataclass
class ScheduleOptions:
    """ Alpha schedule for A-CMAX++; ignored by the other agents """
    kind: str = "lap-decrement"
    label: str = ""
    beta1: float = 100.0
    rho: float = 0.9
    horizon: int = 200
    step_frequency: int = 5
    decrement: float = 2.5
    decrement_every: int = 5
    alpha: Optional[float] = None


@dataclass
class DiscrepancyOptions:
    """ How incorrect transitions are detected and generalised """
    incorrect_set: str = "exact"
    metric: str = "manhattan"
    xi: float = 0.0
    delta: float = 3.0


@dataclass
class ApproximatorOptions:
    """ Value representation and large-space update hyperparameters """
    mode: str = "tabular"
    batch_size: int = 16
    learning_rate: float = 0.001
    updates_v: int = 3
    updates_q: int = 5
    polyak: float = 0.5
    weight_decay: float = 0.0


@dataclass
class ExperimentOptions:
    """ One experiment: an environment family, an agent, and the seeds to run it on """
    name: str
    environment: EnvironmentOptions
    agent: AgentOptions
    repetitions: int
    step_cap: int
    seeds: list[int]

    master_seed: int = 0
    schedule: ScheduleOptions = field(default_factory=ScheduleOptions)
    discrepancy: DiscrepancyOptions = field(default_factory=DiscrepancyOptions)
    approximator: ApproximatorOptions = field(default_factory=ApproximatorOptions)

    abort_on_failure: bool = True
    trace: bool = False
    record_wall_time: bool = True
    save_parameters: bool = True
    workers: int = 1


@dataclass
class ConfigFile:
    """ Top level of an experiment file """
    schema_version: int
    experiment: ExperimentOptions


@dataclass
class ScheduleGrid:
    """ Top level of a schedules file used by sweeps """
    schema_version: int
    schedules: list[ScheduleOptions]
