import json
import math
import os
import tempfile
import unittest
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from src.core import ProblemDefinitionError, dijkstra_optimal_values
from src.enums import StepMode
from src.grid_nav import DOWN, LEFT, RIGHT, UP, GridNavIce, grid_step
from src.implemented_envs import EnvTypes, build_environment
from src.lattice import (
    LatticeWorld,
    PrimitiveConfigError,
    PrimitiveParams,
    generate_motion_primitives,
    lattice_step,
    load_or_generate_primitives,
)
from src.lift_grid import UP as LIFT, LiftGrid
from src.options import GridNavIceOptions, LatticeOptions, LiftGridOptions


class TestGridNavIce(unittest.TestCase):
    def setUp(self):
        self.world = GridNavIce.from_ascii([
            "S.v.",
            "#...",
            "...G",
        ])

    def test_plain_cells_agree(self):
        s = self.world.state_id((0, 0))
        self.assertEqual(grid_step(self.world, s, RIGHT, StepMode.MODEL),
                         grid_step(self.world, s, RIGHT, StepMode.TRUE))

    def test_ice_drifts_whatever_the_action(self):
        s = self.world.state_id((2, 0))
        for a in (UP, LEFT, RIGHT):
            s_true, _ = grid_step(self.world, s, a, StepMode.TRUE)
            self.assertEqual(self.world.cell(s_true), (2, 1))
        s_model, _ = grid_step(self.world, s, RIGHT, StepMode.MODEL)
        self.assertEqual(self.world.cell(s_model), (3, 0))

    def test_obstacle_blocks_and_still_costs(self):
        s = self.world.state_id((1, 1))
        s_next, cost = grid_step(self.world, s, LEFT, StepMode.TRUE)
        self.assertEqual(s_next, s)
        self.assertEqual(cost, 1.0)

    def test_off_grid_stays(self):
        s = self.world.state_id((0, 0))
        self.assertEqual(self.world.model_step(s, UP), s)

    def test_goal_costs_nothing(self):
        g = self.world.state_id((3, 2))
        self.assertEqual(self.world.cost(g, DOWN), 0.0)

    def test_model_is_optimistic(self):
        self.assertTrue(np.all(self.world.model_optimal_values <= self.world.true_optimal_values + 1e-9))

    def test_bad_maps(self):
        with self.assertRaises(ProblemDefinitionError):
            GridNavIce.from_ascii(["S..", "..."])
        with self.assertRaises(ProblemDefinitionError):
            GridNavIce.from_ascii(["S.x", "..G"])
        with self.assertRaises(ProblemDefinitionError):
            GridNavIce.from_ascii(["S.", "..G"])

    def test_random_bottleneck(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            world = GridNavIce.random_bottleneck(rng, 12)
            self.assertEqual(world.num_states, 144)
            self.assertEqual(len(world.ice), 2)
            self.assertTrue(world.optimistic_model)
            self.assertTrue(np.isfinite(world.true_optimal_values[world.start]))

    def test_from_options(self):
        world = build_environment(GridNavIceOptions(layout="ascii", ascii_map=["SG"]), np.random.default_rng(0))
        self.assertIsInstance(world, GridNavIce)
        self.assertEqual(world.true_optimal_values[world.start], 1.0)


class TestLiftGrid(unittest.TestCase):
    def setUp(self):
        self.world = LiftGrid(10, 10, band_low=4, band_high=6, strong_columns=[3, 7], start=(0, 0), goal=(5, 9))

    def test_model_lifts_two(self):
        s = self.world.state_id((0, 4))
        self.assertEqual(self.world.cell(self.world.model_step(s, LIFT)), (0, 6))

    def test_weak_column_stalls_in_band(self):
        s = self.world.state_id((0, 4))
        self.assertEqual(self.world.true_step(s, LIFT), s)

    def test_strong_column_lifts_one_in_band(self):
        s = self.world.state_id((3, 4))
        self.assertEqual(self.world.cell(self.world.true_step(s, LIFT)), (3, 5))

    def test_below_band_agrees(self):
        s = self.world.state_id((0, 2))
        self.assertEqual(self.world.true_step(s, LIFT), self.world.model_step(s, LIFT))

    def test_lift_clamps_at_top(self):
        s = self.world.state_id((0, 8))
        self.assertEqual(self.world.cell(self.world.model_step(s, LIFT)), (0, 9))

    def test_lift_stops_under_an_obstacle(self):
        world = LiftGrid(10, 10, 4, 6, [3], (0, 0), (5, 9), obstacles=[(3, 7), (0, 8)])
        s = world.state_id((3, 5))
        self.assertEqual(world.cell(world.true_step(s, LIFT)), (3, 6))
        self.assertEqual(world.cell(world.model_step(s, LIFT)), (3, 6))
        self.assertEqual(world.cell(world.model_step(world.state_id((0, 6)), LIFT)), (0, 7))
        self.assertEqual(world.model_step(world.state_id((3, 6)), LIFT), world.state_id((3, 6)))

    def test_band_can_only_be_crossed_through_strong_columns(self):
        true_table = np.array(self.world.true_table())
        for c in self.world.strong_columns:
            for h in range(self.world.band_low, self.world.band_high):
                s = self.world.state_id((c, h))
                true_table[s, LIFT] = s
        stalled = dijkstra_optimal_values(self.world, true_table)
        self.assertTrue(math.isinf(stalled.value(self.world.start)))

    def test_model_is_optimistic(self):
        self.assertTrue(np.all(self.world.model_optimal_values <= self.world.true_optimal_values + 1e-9))

    def test_invalid_band(self):
        with self.assertRaises(ProblemDefinitionError):
            LiftGrid(10, 10, 4, 5, [3], (0, 0), (5, 9))

    def test_random_is_seeded(self):
        a = LiftGrid.random(np.random.default_rng(5))
        b = LiftGrid.random(np.random.default_rng(5))
        self.assertEqual((a.strong_columns, a.obstacles, a.start), (b.strong_columns, b.obstacles, b.start))
        self.assertTrue(all(h > a.band_high for _, h in a.obstacles))

    def test_random_keeps_strong_columns_off_the_route(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            world = LiftGrid.random(rng, band_high=7, num_strong_columns=1, min_detour=4)
            lo, hi = sorted((world.cell(world.start)[0], world.cell(next(iter(world.goals)))[0]))
            (column,) = world.strong_columns
            self.assertGreaterEqual(max(lo - column, column - hi), 4)
        with self.assertRaises(ValueError):
            LiftGrid.random(rng, min_detour=-1)

    def test_registry(self):
        self.assertIs(EnvTypes.from_kind(LiftGridOptions.kind), EnvTypes.LIFT_GRID)
        world = build_environment(LiftGridOptions(), np.random.default_rng(1))
        self.assertIsInstance(world, LiftGrid)


class TestMotionPrimitives(unittest.TestCase):
    def setUp(self):
        self.table = generate_motion_primitives(PrimitiveParams())

    def test_straight_primitive(self):
        straight = [p for p in self.table.by_heading[0] if p.offset == (1, 0, 0)]
        self.assertEqual(len(straight), 1)
        self.assertEqual((straight[0].steering, straight[0].speed, straight[0].duration), (0.0, 1.0, 1))

    def test_every_heading_has_primitives(self):
        self.assertEqual(len(self.table.by_heading), 8)
        self.assertTrue(all(len(p) > 0 for p in self.table.by_heading))
        self.assertTrue(all(p.swept[-1] == p.offset[:2] for prims in self.table.by_heading for p in prims))

    def test_regeneration_is_identical(self):
        self.assertEqual(generate_motion_primitives(PrimitiveParams()), self.table)

    def test_cache_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            first = load_or_generate_primitives(PrimitiveParams(), tmp)
            files = os.listdir(tmp)
            self.assertEqual(len(files), 1)
            self.assertTrue(files[0].startswith("primitives-v1-"))
            with open(os.path.join(tmp, files[0])) as f:
                self.assertIn("by_heading", json.load(f))
            self.assertEqual(load_or_generate_primitives(PrimitiveParams(), tmp), first)

    def test_corrupt_cache_is_regenerated(self):
        with tempfile.TemporaryDirectory() as tmp:
            load_or_generate_primitives(PrimitiveParams(), tmp)
            path = os.path.join(tmp, os.listdir(tmp)[0])
            for junk in ("", '{"params": {"headings": 8}', "[1, 2]"):
                with self.subTest(junk=junk):
                    with open(path, "w") as f:
                        f.write(junk)
                    with self.assertLogs("src.lattice", "WARNING"):
                        table = load_or_generate_primitives(PrimitiveParams(), tmp)
                    self.assertEqual(table, self.table)
                    with open(path) as f:
                        self.assertIn("by_heading", json.load(f))

    def test_concurrent_workers_share_one_cache(self):
        with tempfile.TemporaryDirectory() as tmp:
            cache_dir = os.path.join(tmp, "cache")
            with ProcessPoolExecutor(max_workers=5) as pool:
                tables = list(pool.map(load_or_generate_primitives, [PrimitiveParams()] * 10, [cache_dir] * 10))
            self.assertTrue(all(t == self.table for t in tables))
            files = os.listdir(cache_dir)
            self.assertEqual(len(files), 1)
            self.assertFalse(files[0].endswith(".tmp"))

    def test_invalid_params(self):
        with self.assertRaises(PrimitiveConfigError):
            generate_motion_primitives(PrimitiveParams(steering=()))
        with self.assertRaises(PrimitiveConfigError):
            generate_motion_primitives(PrimitiveParams(wheelbase=0.0))


class TestLatticeWorld(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.world = LatticeWorld.from_options(
            LatticeOptions(size_x=20, size_y=20, track_width=4, num_patches=2), np.random.default_rng(2))

    def _action(self, heading, offset):
        for a, prim in enumerate(self.world.table.by_heading[heading]):
            if prim.offset == offset:
                return a
        self.fail(f"No primitive with offset {offset} at heading {heading}")

    def test_start_faces_north(self):
        x, y, h = self.world.pose(self.world.start)
        self.assertEqual((x, y, h), (4, 10, 2))

    def test_on_track_raw_cost(self):
        a = self._action(2, (0, 3, 0))
        self.assertEqual(self.world.raw_cost(self.world.start, a), 3.0)

    def test_grass_raw_cost(self):
        s = self.world.state_id(1, 10, 2)
        a = self._action(2, (0, 1, 0))
        self.assertEqual(self.world.raw_cost(s, a), 100.0)

    def test_costs_are_rescaled(self):
        a = self._action(2, (0, 1, 0))
        self.assertAlmostEqual(self.world.cost(self.world.start, a), 1.0 / self.world.max_raw_cost)

    def test_rescaling_keeps_the_cheapest_action(self):
        costs = self.world.cost_table()
        non_goal = [s for s in range(self.world.num_states) if not self.world.is_goal(s)]
        raw = np.array([[self.world.raw_cost(s, a) for a in self.world.actions] for s in non_goal])
        np.testing.assert_array_equal(np.argmin(raw, axis=1), np.argmin(costs[non_goal], axis=1))
        np.testing.assert_allclose(costs[non_goal] * self.world.max_raw_cost, raw)
        self.assertLessEqual(costs.max(), 1.0)

    def test_icy_patch_redirects(self):
        patch = self.world.patches[0]
        x, y = patch.x0 + 1, patch.y0 + 1
        s = self.world.state_id(x, y, 0)
        a = self._action(0, (1, 0, 0))
        s_true, _ = lattice_step(self.world, s, a, StepMode.TRUE)
        s_model, _ = lattice_step(self.world, s, a, StepMode.MODEL)
        self.assertEqual(self.world.pose(s_true), (x + patch.drift[0], y + patch.drift[1], 0))
        self.assertEqual(self.world.pose(s_model), (x + 1, y, 0))

    def test_goal_region(self):
        self.assertEqual(len(self.world.goals), 9 * self.world.headings)
        self.assertTrue(np.isfinite(self.world.true_optimal_values[self.world.start]))

    def test_undefined_primitive(self):
        counts = [len(p) for p in self.world.table.by_heading]
        heading = int(np.argmin(counts))
        if counts[heading] == self.world.num_actions:
            self.skipTest("every heading has the full primitive set")
        with self.assertRaises(ValueError):
            lattice_step(self.world, self.world.state_id(5, 5, heading), self.world.num_actions - 1, StepMode.MODEL)


if __name__ == "__main__":
    unittest.main()
