from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
import csv
import dataclasses
import json
import logging
import os
from itertools import repeat
from typing import IO, Iterator, Optional, Sequence

from attrs import astuple, define, field, frozen
from exceptiongroup import ExceptionGroup

from . import __version__
from .agents import AgentState, RepetitionRecord, run_task, trace_logger
from .approximators import Approximator
from .enums import AgentKind
from .helpers import SUB_SEED_RULE, derive_rngs, mean_and_stderr, slugify
from .implemented_envs import build_environment
from .loader import SCHEMA_VERSION, make_converter
from .options import ExperimentOptions, ScheduleOptions
from .schedules import AlphaSchedule

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["seed", "repetition", "steps", "cost", "success", "cumulative_steps", "wall_ms"]
SUMMARY_COLUMNS = ["repetition", "instances", "successes", "success_pct",
                   "mean_steps", "stderr_steps", "mean_cost", "stderr_cost"]
COMPARISON_COLUMNS = ["schedule", "seed", "repetition", "cumulative_steps"]
ORACLE_COLUMNS = ["state", "model_value", "true_value"]


@frozen
class ResultRow:
    seed: int
    repetition: int
    steps: int
    cost: float
    success: bool
    cumulative_steps: int
    wall_ms: float


@frozen
class SummaryRow:
    repetition: int
    instances: int
    successes: int
    success_pct: float
    mean_steps: float
    stderr_steps: float
    mean_cost: float
    stderr_cost: float


@define
class SeedRun:
    """Rows produced for one seed; `error` is set when the seed crashed part way."""
    seed: int
    rows: list[ResultRow] = field(factory=list)
    error: Optional[Exception] = None


@contextmanager
def trace_file(path: str) -> Iterator[None]:
    """Route `src.trace` records to a line-delimited JSON file for the duration of the block."""
    handler = logging.FileHandler(path, mode="w")
    handler.setFormatter(logging.Formatter("%(message)s"))
    previous = trace_logger.level, trace_logger.propagate
    trace_logger.addHandler(handler)
    trace_logger.setLevel(logging.INFO)
    trace_logger.propagate = False
    try:
        yield
    finally:
        trace_logger.removeHandler(handler)
        trace_logger.setLevel(previous[0])
        trace_logger.propagate = previous[1]
        handler.close()


def _save_parameters(agent: AgentState, seed: int, out_dir: str) -> None:
    stores = {"V": agent.V, "Q": agent.Q, "V_penalized": agent.V_penalized}
    for name, store in stores.items():
        if isinstance(store, Approximator):
            store.save(os.path.join(out_dir, "params", f"seed{seed}_{name}.npz"))


def _execute_seed(opts: ExperimentOptions, seed: int, out_dir: str, run: SeedRun) -> None:
    env_rng, agent_rng = derive_rngs(opts.master_seed, seed)
    env = build_environment(opts.environment, env_rng)
    agent = AgentState.from_options(opts, env, agent_rng)
    schedule = AlphaSchedule.from_options(opts.schedule) if agent.kind is AgentKind.ACMAXPP else None
    logger.info(f"Seed {seed}: {env.name} with {env.num_states} states, {env.num_actions} actions")

    cumulative = 0

    def on_record(record: RepetitionRecord) -> None:
        nonlocal cumulative
        cumulative += record.steps
        run.rows.append(ResultRow(
            seed=seed,
            repetition=record.index,
            steps=record.steps,
            cost=record.cost,
            success=record.success,
            cumulative_steps=cumulative,
            wall_ms=record.wall_ms if opts.record_wall_time else 0.0,
        ))

    run_task(agent, env, opts.repetitions, opts.step_cap, schedule,
             abort_on_failure=opts.abort_on_failure, on_record=on_record)

    if opts.trace:
        trace_logger.info(json.dumps({"event": "incorrect_set", "seed": seed, "snapshot": agent.X.snapshot()}))
    if opts.save_parameters:
        _save_parameters(agent, seed, out_dir)


def run_seed(opts: ExperimentOptions, seed: int, out_dir: str) -> SeedRun:
    """Run every repetition for one seed. Failures are captured so other seeds still get written."""
    run = SeedRun(seed)
    try:
        if opts.trace:
            with trace_file(os.path.join(out_dir, f"trace_seed{seed}.jsonl")):
                _execute_seed(opts, seed, out_dir, run)
        else:
            _execute_seed(opts, seed, out_dir, run)
    except Exception as e:
        logger.exception(f"Seed {seed} failed after {len(run.rows)} repetitions")
        run.error = e
    return run


def summarize(rows: Sequence[ResultRow], seeds: Sequence[int], repetitions: int) -> list[SummaryRow]:
    """
    Per-repetition success percentage over all seeds, with mean and standard error of steps
    and cost among the successful instances only.
    """
    summary = []
    for i in range(1, repetitions + 1):
        successful = [r for r in rows if r.repetition == i and r.success]
        mean_steps, stderr_steps = mean_and_stderr([r.steps for r in successful])
        mean_cost, stderr_cost = mean_and_stderr([r.cost for r in successful])
        summary.append(SummaryRow(
            repetition=i,
            instances=len(seeds),
            successes=len(successful),
            success_pct=100.0 * len(successful) / len(seeds) if seeds else 0.0,
            mean_steps=mean_steps,
            stderr_steps=stderr_steps,
            mean_cost=mean_cost,
            stderr_cost=stderr_cost,
        ))
    return summary


def _format(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(stream: IO[str], columns: list[str], rows: Sequence[tuple]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format(v) for v in row])


def _write_file(path: str, columns: list[str], rows: Sequence[tuple]) -> None:
    with open(path, "w", newline="") as f:
        write_csv(f, columns, rows)
    logger.info(f"Wrote {len(rows)} rows to {path}")


def write_manifest(opts: ExperimentOptions, out_dir: str) -> None:
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "config": make_converter().unstructure(opts),
        "seeds": list(opts.seeds),
        "sub_seed_rule": SUB_SEED_RULE,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def execute(opts: ExperimentOptions, out_dir: str) -> tuple[list[ResultRow], list[Exception]]:
    """Run all seeds, write results, summary and manifest, and hand back rows and per-seed failures."""
    os.makedirs(out_dir, exist_ok=True)
    seeds = list(opts.seeds)
    logger.info(f"Running {opts.name}: {opts.agent.kind} on {opts.environment.kind}, "
                f"{len(seeds)} seeds x {opts.repetitions} repetitions, {opts.workers} workers")

    if opts.workers > 1:
        with ProcessPoolExecutor(max_workers=min(opts.workers, len(seeds))) as pool:
            runs = list(pool.map(run_seed, repeat(opts), seeds, repeat(out_dir)))
    else:
        runs = [run_seed(opts, seed, out_dir) for seed in seeds]

    rows = [row for run in runs for row in run.rows]
    _write_file(os.path.join(out_dir, "results.csv"), RESULT_COLUMNS, [astuple(r) for r in rows])
    _write_file(os.path.join(out_dir, "summary.csv"), SUMMARY_COLUMNS,
                [astuple(s) for s in summarize(rows, seeds, opts.repetitions)])
    write_manifest(opts, out_dir)
    return rows, [run.error for run in runs if run.error is not None]


def run_config(opts: ExperimentOptions, out_dir: str) -> list[ResultRow]:
    """Run an experiment into `out_dir`. Seed failures are raised together once every file is written."""
    rows, failures = execute(opts, out_dir)
    if failures:
        raise ExceptionGroup(f"{len(failures)} of {len(opts.seeds)} seeds failed", failures)
    return rows


def sweep_schedules(opts: ExperimentOptions, schedules: Sequence[ScheduleOptions], out_dir: str) -> dict[str, list[ResultRow]]:
    """Run the experiment once per schedule and write the cumulative-steps series side by side."""
    if not schedules:
        raise ValueError("Schedule grid must not be empty")
    if AgentKind(opts.agent.kind) is not AgentKind.ACMAXPP:
        raise ValueError(f"Schedules only affect acmaxpp agents, not {opts.agent.kind}")

    results: dict[str, list[ResultRow]] = {}
    failures: list[Exception] = []
    comparison = []
    for schedule in schedules:
        label = schedule.label or schedule.kind
        rows, seed_failures = execute(dataclasses.replace(opts, schedule=schedule),
                                      os.path.join(out_dir, slugify(label)))
        results[label] = rows
        failures += seed_failures
        comparison += [(label, r.seed, r.repetition, r.cumulative_steps) for r in rows]

    os.makedirs(out_dir, exist_ok=True)
    _write_file(os.path.join(out_dir, "comparison.csv"), COMPARISON_COLUMNS, comparison)
    if failures:
        raise ExceptionGroup(f"{len(failures)} seed runs failed across the sweep", failures)
    return results


def oracle_rows(opts: ExperimentOptions, seed: Optional[int] = None) -> list[tuple[int, float, float]]:
    """Model and true optimal values of every state of one seeded instance (first seed by default)."""
    env_rng, _ = derive_rngs(opts.master_seed, opts.seeds[0] if seed is None else seed)
    env = build_environment(opts.environment, env_rng)
    model, true = env.model_optimal_values, env.true_optimal_values
    return [(s, float(model[s]), float(true[s])) for s in range(env.num_states)]


def write_oracle(rows: Sequence[tuple[int, float, float]], stream: IO[str]) -> None:
    write_csv(stream, ORACLE_COLUMNS, rows)
