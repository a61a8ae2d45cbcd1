import dataclasses
import io
import json
import logging
import math
import os
import tempfile
import unittest
from unittest import mock

from exceptiongroup import ExceptionGroup
import numpy as np
import yaml

from src import __version__
from src.app import LOG_DATEFMT, LOG_FORMAT, main
from src.experiment import (
    RESULT_COLUMNS,
    ResultRow,
    oracle_rows,
    run_config,
    summarize,
    sweep_schedules,
    write_oracle,
)
from src.helpers import derive_rngs, mean_and_stderr
from src.options import AgentOptions, ApproximatorOptions, ExperimentOptions, GridNavIceOptions, ScheduleOptions


def grid_options(ascii_map=("SG",), **overrides) -> ExperimentOptions:
    fields = dict(
        name="tiny",
        environment=GridNavIceOptions(layout="ascii", ascii_map=list(ascii_map)),
        agent=AgentOptions(kind="cmaxpp", expansions=3),
        repetitions=1,
        step_cap=50,
        seeds=[0],
        record_wall_time=False,
    )
    fields.update(overrides)
    return ExperimentOptions(**fields)


def read(path) -> str:
    with open(path) as f:
        return f.read()


def row(seed, steps, success=True, repetition=1) -> ResultRow:
    return ResultRow(seed, repetition, steps, float(steps), success, steps, 0.0)


class TestHelpers(unittest.TestCase):
    def test_sub_seeds_are_stable(self):
        a_env, a_agent = derive_rngs(7, 3)
        b_env, b_agent = derive_rngs(7, 3)
        self.assertEqual(a_env.integers(0, 1 << 30), b_env.integers(0, 1 << 30))
        self.assertEqual(a_agent.integers(0, 1 << 30), b_agent.integers(0, 1 << 30))

    def test_sub_seeds_differ(self):
        env, agent = derive_rngs(0, 0)
        other_env, _ = derive_rngs(0, 1)
        self.assertNotEqual(env.random(), agent.random())
        self.assertNotEqual(derive_rngs(0, 0)[0].random(), other_env.random())

    def test_mean_and_stderr(self):
        self.assertEqual(mean_and_stderr([4.0]), (4.0, 0.0))
        self.assertTrue(all(math.isnan(v) for v in mean_and_stderr([])))


class TestSummary(unittest.TestCase):
    def test_all_successful(self):
        steps = [17, 17, 18, 19, 18]
        rows = [row(seed, s) for seed, s in enumerate(steps)]
        [summary] = summarize(rows, seeds=range(5), repetitions=1)
        self.assertAlmostEqual(summary.mean_steps, 17.8)
        self.assertEqual(summary.success_pct, 100.0)
        self.assertAlmostEqual(summary.stderr_steps, np.std(steps, ddof=1) / math.sqrt(5))

    def test_statistics_over_successes_only(self):
        rows = [row(0, 10), row(1, 20), row(2, 500, success=False), row(3, 500, success=False)]
        [summary] = summarize(rows, seeds=range(4), repetitions=1)
        self.assertEqual(summary.success_pct, 50.0)
        self.assertEqual(summary.successes, 2)
        self.assertEqual(summary.instances, 4)
        self.assertAlmostEqual(summary.mean_steps, 15.0)

    def test_repetitions_without_rows(self):
        summary = summarize([row(0, 3)], seeds=[0], repetitions=2)
        self.assertEqual(summary[1].success_pct, 0.0)
        self.assertTrue(math.isnan(summary[1].mean_cost))


class TestRunConfig(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def out(self, name="out"):
        return os.path.join(self.tmp.name, name)

    def test_single_step_instance(self):
        rows = run_config(grid_options(), self.out())
        self.assertEqual(len(rows), 1)
        self.assertEqual(read(os.path.join(self.out(), "results.csv")),
                         "seed,repetition,steps,cost,success,cumulative_steps,wall_ms\n"
                         "0,1,1,1.0,1,1,0.0\n")

    def test_summary_and_manifest(self):
        run_config(grid_options(), self.out())
        summary = read(os.path.join(self.out(), "summary.csv")).splitlines()
        self.assertEqual(summary[0], "repetition,instances,successes,success_pct,"
                                     "mean_steps,stderr_steps,mean_cost,stderr_cost")
        self.assertEqual(summary[1], "1,1,1,100.0,1.0,0.0,1.0,0.0")

        with open(os.path.join(self.out(), "manifest.json")) as f:
            manifest = json.load(f)
        self.assertEqual(manifest["schema_version"], 1)
        self.assertEqual(manifest["package_version"], __version__)
        self.assertEqual(manifest["seeds"], [0])
        self.assertEqual(manifest["config"]["environment"]["kind"], "grid-nav-ice")
        self.assertIn("SeedSequence", manifest["sub_seed_rule"])

    def test_reruns_are_byte_identical(self):
        opts = grid_options(["S...", ".#..", "...G"], repetitions=3, seeds=[0, 1, 2])
        run_config(opts, self.out("a"))
        run_config(opts, self.out("b"))
        for name in ("results.csv", "summary.csv", "manifest.json"):
            self.assertEqual(read(os.path.join(self.out("a"), name)), read(os.path.join(self.out("b"), name)))

    def test_workers_do_not_change_results(self):
        opts = grid_options(["S.v.", "#...", "...G"], repetitions=3, seeds=[0, 1, 2])
        run_config(opts, self.out("serial"))
        run_config(dataclasses.replace(opts, workers=2), self.out("parallel"))
        self.assertEqual(read(os.path.join(self.out("serial"), "results.csv")),
                         read(os.path.join(self.out("parallel"), "results.csv")))

    def test_failed_repetition_aborts_the_seed(self):
        rows = run_config(grid_options(["S..G"], repetitions=3, step_cap=1, seeds=[0, 1]), self.out())
        self.assertEqual([(r.seed, r.repetition, r.success) for r in rows], [(0, 1, False), (1, 1, False)])
        summary = read(os.path.join(self.out(), "summary.csv")).splitlines()
        self.assertEqual(len(summary), 4)
        self.assertTrue(summary[1].startswith("1,2,0,0.0,nan"))

    def test_failures_continue_when_configured(self):
        opts = grid_options(["S..G"], repetitions=3, step_cap=1, abort_on_failure=False)
        self.assertEqual([r.repetition for r in run_config(opts, self.out())], [1, 2, 3])

    def test_failing_seeds_are_grouped(self):
        # the start is walled off from the goal
        opts = grid_options(["S#G"], seeds=[0, 1])
        with self.assertLogs("src.experiment", level="ERROR"):
            with self.assertRaises(ExceptionGroup) as cm:
                run_config(opts, self.out())
        self.assertEqual(len(cm.exception.exceptions), 2)
        self.assertEqual(read(os.path.join(self.out(), "results.csv")), ",".join(RESULT_COLUMNS) + "\n")

    def test_trace_file(self):
        run_config(grid_options(["S.v.", "#...", "...G"], trace=True, repetitions=2), self.out())
        with open(os.path.join(self.out(), "trace_seed0.jsonl")) as f:
            records = [json.loads(line) for line in f]
        events = {r["event"] for r in records}
        self.assertTrue({"expand", "step", "incorrect_set"} <= events)
        self.assertEqual(records[-1]["snapshot"]["mode"], "exact")

    def test_linear_parameters_are_saved(self):
        opts = grid_options(["S..G"], approximator=ApproximatorOptions(mode="linear"))
        run_config(opts, self.out())
        saved = sorted(os.listdir(os.path.join(self.out(), "params")))
        self.assertEqual(saved, ["seed0_Q.npz", "seed0_V.npz"])


class TestSweep(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.opts = grid_options(["S.v.", "#...", "...G"], agent=AgentOptions("acmaxpp", 3), repetitions=2,
                                 seeds=[0, 1])

    def test_comparison_file(self):
        schedules = [ScheduleOptions(kind="time-decay", label="decay"),
                     ScheduleOptions(kind="exponential", label="Fast Exp")]
        results = sweep_schedules(self.opts, schedules, self.tmp.name)
        self.assertEqual(set(results), {"decay", "Fast Exp"})
        self.assertTrue(os.path.isfile(os.path.join(self.tmp.name, "fast_exp", "results.csv")))

        lines = read(os.path.join(self.tmp.name, "comparison.csv")).splitlines()
        self.assertEqual(lines[0], "schedule,seed,repetition,cumulative_steps")
        self.assertEqual(len(lines), 1 + 2 * 2 * 2)

    def test_rejects_bad_grids(self):
        with self.assertRaises(ValueError):
            sweep_schedules(self.opts, [], self.tmp.name)
        with self.assertRaises(ValueError):
            sweep_schedules(dataclasses.replace(self.opts, agent=AgentOptions("cmax", 3)),
                            [ScheduleOptions()], self.tmp.name)


class TestOracle(unittest.TestCase):
    def test_rows(self):
        rows = oracle_rows(grid_options())
        self.assertEqual(rows, [(0, 1.0, 1.0), (1, 0.0, 0.0)])
        stream = io.StringIO()
        write_oracle(rows, stream)
        self.assertEqual(stream.getvalue(), "state,model_value,true_value\n0,1.0,1.0\n1,0.0,0.0\n")

    def test_ice_raises_true_values(self):
        rows = oracle_rows(grid_options(["S.<.", "#...", "...G"]))
        self.assertTrue(all(model <= true for _, model, true in rows))
        self.assertTrue(any(model < true for _, model, true in rows))


class TestCommandLine(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.config = os.path.join(self.tmp.name, "config.yaml")
        self.write_config({"kind": "cmaxpp", "expansions": 3})

    def write_config(self, agent):
        data = {
            "schema_version": 1,
            "experiment": {
                "name": "cli",
                "environment": {"kind": "grid-nav-ice", "layout": "ascii", "ascii_map": ["S.", ".G"]},
                "agent": agent,
                "repetitions": 2,
                "step_cap": 20,
                "seeds": [0],
            },
        }
        with open(self.config, "w") as f:
            yaml.safe_dump(data, f)

    def test_run(self):
        out = os.path.join(self.tmp.name, "out")
        self.assertEqual(main(["run", "--config", self.config, "--out", out]), 0)
        self.assertTrue(os.path.isfile(os.path.join(out, "results.csv")))

    def test_oracle(self):
        out = os.path.join(self.tmp.name, "oracle.csv")
        self.assertEqual(main(["oracle", "--config", self.config, "--out", out]), 0)
        self.assertEqual(read(out).splitlines()[0], "state,model_value,true_value")
        self.assertEqual(len(read(out).splitlines()), 1 + 4)

    def test_sweep(self):
        self.write_config({"kind": "acmaxpp", "expansions": 3})
        out = os.path.join(self.tmp.name, "sweep")
        self.assertEqual(main(["sweep", "--config", self.config, "--schedules", "configs/schedules.yaml",
                               "--out", out]), 0)
        self.assertTrue(os.path.isfile(os.path.join(out, "comparison.csv")))

    def test_invalid_config(self):
        self.write_config({"kind": "cmaxpp", "expansions": 0})
        self.assertEqual(main(["run", "--config", self.config, "--out", self.tmp.name]), 2)

    def test_missing_config(self):
        missing = os.path.join(self.tmp.name, "missing.yaml")
        self.assertEqual(main(["run", "--config", missing, "--out", self.tmp.name]), 2)

    def test_verbose_flag_sets_debug_logging(self):
        with mock.patch("src.app.logging.basicConfig") as basic_config:
            self.assertEqual(main(["-v", "run", "--config", self.config, "--out", os.path.join(self.tmp.name, "v")]), 0)
            basic_config.assert_called_once_with(level=logging.DEBUG, format=LOG_FORMAT, datefmt=LOG_DATEFMT)
        with mock.patch("src.app.logging.basicConfig") as basic_config:
            main(["run", "--config", self.config, "--out", os.path.join(self.tmp.name, "q")])
            self.assertEqual(basic_config.call_args.kwargs["level"], logging.INFO)


if __name__ == "__main__":
    unittest.main()
