import json
import logging
import math
import os
from typing import Any, Optional

from cattrs import ClassValidationError, Converter, ForbiddenExtraKeysError, transform_error
from cattrs.strategies import configure_tagged_union
from exceptiongroup import ExceptionGroup
import yaml

from .enums import AgentKind, ApproximatorMode, IncorrectSetMode, InitialValues, Metric, enum_values
from .implemented_envs import EnvTypes
from .options import (
    ConfigFile,
    EnvironmentOptions,
    ExperimentOptions,
    GridNavIceOptions,
    LatticeOptions,
    LiftGridOptions,
    ScheduleGrid,
    ScheduleOptions,
)
from .schedules import AlphaSchedule

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
GRID_LAYOUTS = ("bottleneck", "open", "ascii")

"""
    Validation:
    cattrs structuring already rejects unknown keys, missing required fields and wrong types

    requires validation:
    x schema version
    x known agent/schedule/metric/incorrect set/approximator kinds
    x K, step cap, repetitions, workers, batch size >= 1
    x unique nonnegative seeds
    x unique alphanumeric experiment name and schedule labels
    x hypersphere sets only with linear approximators, q-learning only tabular
"""


class ConfigError(ValueError):
    """Invalid configuration, located by a `$.`-rooted field path."""

    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message

    def __reduce__(self):
        return (type(self), (self.path, self.message))


def make_converter() -> Converter:
    converter = Converter(forbid_extra_keys=True)
    configure_tagged_union(EnvironmentOptions, converter, tag_generator=lambda cl: cl.kind, tag_name="kind")
    return converter


def validate_names(names: list, what: str = "Names") -> None:
    """
    Verify unique alphanumeric names (hyphens allowed). Used as directory names and labels.
    """
    if len(set(names)) != len(names):
        raise ValueError(f"{what} must be unique")

    if not all(name and all(c.isalnum() or c == "-" for c in name) for name in names):
        raise ValueError(f"{what} must be non-empty and alphanumeric")


def validate_environment(env: EnvironmentOptions) -> list[ConfigError]:
    """Check the environment kind is registered and its parameters are usable."""
    errors = []
    path = "$.experiment.environment"
    try:
        EnvTypes.from_kind(env.kind)
    except KeyError:
        errors.append(ConfigError(f"{path}.kind", f"environment kind {env.kind} not defined in implemented_envs.EnvTypes"))

    if isinstance(env, GridNavIceOptions):
        if env.layout not in GRID_LAYOUTS:
            errors.append(ConfigError(f"{path}.layout", f"must be one of {list(GRID_LAYOUTS)}, got {env.layout}"))
        if env.layout == "ascii" and not env.ascii_map:
            errors.append(ConfigError(f"{path}.ascii_map", "required when layout is ascii"))
        if not 0 <= env.obstacle_density < 1:
            errors.append(ConfigError(f"{path}.obstacle_density", f"must lie in [0, 1), got {env.obstacle_density}"))
    elif isinstance(env, LiftGridOptions):
        if env.width < 1 or env.height < 1:
            errors.append(ConfigError(path, f"grid must be at least 1x1, got {env.width}x{env.height}"))
        if env.num_obstacles < 0:
            errors.append(ConfigError(f"{path}.num_obstacles", "must be nonnegative"))
        if not 0 <= env.min_detour < env.width:
            errors.append(ConfigError(f"{path}.min_detour", f"must lie in [0, {env.width}), got {env.min_detour}"))
    elif isinstance(env, LatticeOptions):
        if env.headings < 1 or env.max_length < 1 or env.substeps < 1:
            errors.append(ConfigError(path, "headings, max_length and substeps must be at least 1"))
        if not env.steering or not env.speeds:
            errors.append(ConfigError(path, "steering and speeds must be non-empty"))
        if env.off_track_cost <= 0:
            errors.append(ConfigError(f"{path}.off_track_cost", "must be positive"))
    return errors


def _check_enum(errors: list[ConfigError], path: str, enum_cls, value: str) -> None:
    if value not in enum_values(enum_cls):
        errors.append(ConfigError(path, f"must be one of {enum_values(enum_cls)}, got {value}"))


def validate_schedule(schedule: ScheduleOptions, path: str) -> list[ConfigError]:
    try:
        AlphaSchedule.from_options(schedule)
    except ValueError as e:
        return [ConfigError(path, str(e))]
    return []


def validate_options(opts: ExperimentOptions) -> None:
    """Collect every violation; raise one ConfigError, or an ExceptionGroup of several."""
    errors: list[ConfigError] = []
    p = "$.experiment"

    try:
        validate_names([opts.name], "Experiment names")
    except ValueError as e:
        errors.append(ConfigError(f"{p}.name", str(e)))

    errors += validate_environment(opts.environment)

    _check_enum(errors, f"{p}.agent.kind", AgentKind, opts.agent.kind)
    _check_enum(errors, f"{p}.agent.initial_values", InitialValues, opts.agent.initial_values)
    _check_enum(errors, f"{p}.discrepancy.incorrect_set", IncorrectSetMode, opts.discrepancy.incorrect_set)
    _check_enum(errors, f"{p}.discrepancy.metric", Metric, opts.discrepancy.metric)
    _check_enum(errors, f"{p}.approximator.mode", ApproximatorMode, opts.approximator.mode)

    if opts.agent.expansions < 1:
        errors.append(ConfigError(f"{p}.agent.expansions", f"must be at least 1, got {opts.agent.expansions}"))
    if opts.agent.penalty is not None and not opts.agent.penalty > 0:
        errors.append(ConfigError(f"{p}.agent.penalty", f"must be positive, got {opts.agent.penalty}"))
    if opts.step_cap < 1:
        errors.append(ConfigError(f"{p}.step_cap", f"must be at least 1, got {opts.step_cap}"))
    if opts.repetitions < 1:
        errors.append(ConfigError(f"{p}.repetitions", f"must be at least 1, got {opts.repetitions}"))
    if opts.workers < 1:
        errors.append(ConfigError(f"{p}.workers", f"must be at least 1, got {opts.workers}"))

    if not opts.seeds:
        errors.append(ConfigError(f"{p}.seeds", "at least one seed is required"))
    elif len(set(opts.seeds)) != len(opts.seeds):
        errors.append(ConfigError(f"{p}.seeds", "seeds must be unique"))
    if any(s < 0 for s in opts.seeds) or opts.master_seed < 0:
        errors.append(ConfigError(f"{p}.seeds", "seeds and master_seed must be nonnegative"))

    errors += validate_schedule(opts.schedule, f"{p}.schedule")

    d = opts.discrepancy
    if d.xi < 0 or math.isnan(d.xi):
        errors.append(ConfigError(f"{p}.discrepancy.xi", f"must be nonnegative, got {d.xi}"))
    if d.delta < 0 or math.isnan(d.delta):
        errors.append(ConfigError(f"{p}.discrepancy.delta", f"must be nonnegative, got {d.delta}"))

    a = opts.approximator
    if a.batch_size < 1:
        errors.append(ConfigError(f"{p}.approximator.batch_size", f"must be at least 1, got {a.batch_size}"))
    if not a.learning_rate > 0:
        errors.append(ConfigError(f"{p}.approximator.learning_rate", f"must be positive, got {a.learning_rate}"))
    if a.updates_v < 0 or a.updates_q < 0:
        errors.append(ConfigError(f"{p}.approximator", "update counts must be nonnegative"))
    if not 0 < a.polyak <= 1:
        errors.append(ConfigError(f"{p}.approximator.polyak", f"must lie in (0, 1], got {a.polyak}"))
    if a.weight_decay < 0:
        errors.append(ConfigError(f"{p}.approximator.weight_decay", "must be nonnegative"))

    if d.incorrect_set == IncorrectSetMode.HYPERSPHERE.value and a.mode != ApproximatorMode.LINEAR.value:
        errors.append(ConfigError(f"{p}.discrepancy.incorrect_set", "hypersphere sets need approximator mode linear"))
    if opts.agent.kind == AgentKind.QLEARNING.value and a.mode != ApproximatorMode.TABULAR.value:
        errors.append(ConfigError(f"{p}.approximator.mode", "q-learning runs in tabular mode only"))

    if len(errors) == 1:
        raise errors[0]
    if errors:
        raise ExceptionGroup(f"{len(errors)} configuration errors", errors)


def read_json(json_rel_path):
    with open(json_rel_path) as f:
        data = json.load(f)
    return data


def read_yaml(yaml_rel_path):
    with open(yaml_rel_path) as file:
        data = yaml.safe_load(file)
    return data


def read_config(rel_path: str) -> Any:
    logger.info(f"Attempting to read configuration at path {os.path.join(os.getcwd(), rel_path)}")

    if not os.path.exists(rel_path):
        raise FileNotFoundError(f"Config file not found at {os.path.join(os.getcwd(), rel_path)}")
    if rel_path.endswith(".json"):
        return read_json(rel_path)
    if rel_path.endswith((".yaml", ".yml")):
        return read_yaml(rel_path)
    raise ConfigError("$", f"Unsupported filetype {rel_path}")


def _structure(data: Any, cl: type, converter: Optional[Converter] = None):
    converter = converter or make_converter()
    if not isinstance(data, dict):
        raise ConfigError("$", "top level must be a mapping")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError("$.schema_version", f"unsupported schema version {data.get('schema_version')!r}, "
                                              f"expected {SCHEMA_VERSION}")
    try:
        return converter.structure(data, cl)
    except (ClassValidationError, ForbiddenExtraKeysError) as e:
        errors = []
        for message in transform_error(e, path="$"):
            text, _, path = message.rpartition(" @ ")
            errors.append(ConfigError(path or "$", text or message))
        if len(errors) == 1:
            raise errors[0] from e
        raise ExceptionGroup(f"{len(errors)} configuration errors", errors) from e
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError("$", f"could not structure configuration: {e!r}") from e


def load_options(rel_path: str = "config.yaml") -> ConfigFile:
    """Read an experiment file and structure it into options, without semantic validation."""
    return _structure(read_config(rel_path), ConfigFile)


def load_validate_options(rel_path: str = "config.yaml") -> ExperimentOptions:
    """Load and Validate Options"""
    opts = load_options(rel_path).experiment

    validate_options(opts)

    logger.info(f"Successfully read configuration for experiment {opts.name}")
    return opts


def load_schedules(rel_path: str) -> list[ScheduleOptions]:
    """Read and validate a schedules file for sweeps."""
    grid: ScheduleGrid = _structure(read_config(rel_path), ScheduleGrid)
    if not grid.schedules:
        raise ConfigError("$.schedules", "at least one schedule is required")

    errors = []
    try:
        validate_names([s.label for s in grid.schedules], "Schedule labels")
    except ValueError as e:
        errors.append(ConfigError("$.schedules", str(e)))
    for i, schedule in enumerate(grid.schedules):
        errors += validate_schedule(schedule, f"$.schedules[{i}]")

    if len(errors) == 1:
        raise errors[0]
    if errors:
        raise ExceptionGroup(f"{len(errors)} schedule errors", errors)
    return grid.schedules


if __name__ == "__main__":
    import pprint

    opts = load_validate_options("config.yaml")
    pprint.pprint(opts)
