"""
Desk-scale reproductions of the published orderings. Slow; set RUN_ACCEPTANCE=1 to run and
ACCEPTANCE_SEEDS=<n> to keep only the first n seeds of every config.
"""
import dataclasses
import math
import os
import tempfile
import unittest
from collections import defaultdict

from src.experiment import execute, summarize
from src.loader import load_schedules, load_validate_options
from src.options import AgentOptions

RUN_ACCEPTANCE = bool(os.environ.get("RUN_ACCEPTANCE"))
ACCEPTANCE_SEEDS = int(os.environ.get("ACCEPTANCE_SEEDS", "0"))


def load_scaled(rel_path: str):
    opts = load_validate_options(rel_path)
    if ACCEPTANCE_SEEDS > 0:
        opts = dataclasses.replace(opts, seeds=opts.seeds[:ACCEPTANCE_SEEDS])
    return opts


def by_seed(rows):
    grouped = defaultdict(list)
    for row in rows:
        grouped[row.seed].append(row)
    return grouped


@unittest.skipUnless(RUN_ACCEPTANCE, "set RUN_ACCEPTANCE=1 to run the desk-scale reproductions")
class TestLatticeLaps(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        base = load_scaled("configs/lattice_nav.yaml")
        base = dataclasses.replace(
            base, environment=dataclasses.replace(base.environment, cache_dir=os.path.join(cls.tmp.name, "cache")),
            record_wall_time=False, save_parameters=False)
        cls.repetitions = base.repetitions
        cls.rows = {}
        for kind in ("cmax", "cmaxpp", "acmaxpp"):
            opts = dataclasses.replace(base, agent=AgentOptions(kind, base.agent.expansions))
            rows, failures = execute(opts, os.path.join(cls.tmp.name, kind))
            assert not failures, failures
            cls.rows[kind] = by_seed(rows)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_cmaxpp_variants_finish_every_lap(self):
        for kind in ("cmaxpp", "acmaxpp"):
            for seed, rows in self.rows[kind].items():
                self.assertEqual(len(rows), self.repetitions, (kind, seed))
                self.assertTrue(all(r.success for r in rows), (kind, seed))

    def test_cmax_gets_stuck(self):
        fewer = [seed for seed, rows in self.rows["cmax"].items()
                 if sum(r.success for r in rows) < sum(r.success for r in self.rows["cmaxpp"][seed])]
        self.assertGreaterEqual(len(fewer), 1)

    def test_acmaxpp_is_faster_early(self):
        def early(rows):
            return rows[min(len(rows), 10) - 1].cumulative_steps

        faster = [seed for seed, rows in self.rows["acmaxpp"].items()
                  if early(rows) <= early(self.rows["cmaxpp"][seed])]
        self.assertGreaterEqual(len(faster), math.ceil(0.8 * len(self.rows["acmaxpp"])))


@unittest.skipUnless(RUN_ACCEPTANCE, "set RUN_ACCEPTANCE=1 to run the desk-scale reproductions")
class TestLiftGridTrends(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        base = dataclasses.replace(load_scaled("config.yaml"), record_wall_time=False,
                                   abort_on_failure=False)
        cls.summaries = {}
        for kind in ("cmax", "cmaxpp", "qlearning"):
            opts = dataclasses.replace(base, agent=AgentOptions(kind, base.agent.expansions))
            rows, failures = execute(opts, os.path.join(cls.tmp.name, kind))
            assert not failures, failures
            cls.summaries[kind] = summarize(rows, opts.seeds, opts.repetitions)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_cmaxpp_always_succeeds(self):
        self.assertTrue(all(s.success_pct == 100.0 for s in self.summaries["cmaxpp"]))

    def test_qlearning_needs_more_steps_first(self):
        self.assertGreaterEqual(self.summaries["qlearning"][0].mean_steps,
                                2 * self.summaries["cmaxpp"][0].mean_steps)

    def test_cmax_fails_by_the_end(self):
        self.assertLess(self.summaries["cmax"][-1].success_pct, 100.0)


@unittest.skipUnless(RUN_ACCEPTANCE, "set RUN_ACCEPTANCE=1 to run the desk-scale reproductions")
class TestScheduleSweep(unittest.TestCase):
    def test_every_schedule_finishes_and_repeats(self):
        opts = load_scaled("configs/lattice_nav.yaml")
        with tempfile.TemporaryDirectory() as tmp:
            opts = dataclasses.replace(
                opts, environment=dataclasses.replace(opts.environment, cache_dir=os.path.join(tmp, "cache")),
                record_wall_time=False, save_parameters=False, seeds=opts.seeds[:2], repetitions=20)
            for schedule in load_schedules("configs/schedules.yaml"):
                run = dataclasses.replace(opts, schedule=schedule)
                first, failures = execute(run, os.path.join(tmp, schedule.label, "a"))
                again, _ = execute(run, os.path.join(tmp, schedule.label, "b"))
                self.assertFalse(failures)
                self.assertTrue(all(r.success for r in first), schedule.label)
                self.assertEqual([r.cumulative_steps for r in first], [r.cumulative_steps for r in again])


if __name__ == "__main__":
    unittest.main()
