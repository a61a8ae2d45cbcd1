import math
import unittest

from src.enums import ScheduleKind
from src.options import ScheduleOptions
from src.schedules import AlphaSchedule, alpha_schedule_value


class TestAlphaSchedules(unittest.TestCase):
    def test_exponential(self):
        schedule = AlphaSchedule(ScheduleKind.EXPONENTIAL, beta1=100, rho=0.9)
        self.assertAlmostEqual(alpha_schedule_value(schedule, 1), 101.0)
        self.assertAlmostEqual(alpha_schedule_value(schedule, 2), 91.0)

    def test_linear_reaches_one_at_horizon(self):
        schedule = AlphaSchedule(ScheduleKind.LINEAR, beta1=200, horizon=200)
        self.assertAlmostEqual(schedule.value(1), 201.0)
        self.assertAlmostEqual(schedule.value(200), 1.0)
        self.assertAlmostEqual(schedule.value(250), 1.0)

    def test_time_decay(self):
        self.assertAlmostEqual(AlphaSchedule(ScheduleKind.TIME_DECAY, beta1=100).value(2), 51.0)

    def test_lap_decrement(self):
        schedule = AlphaSchedule(ScheduleKind.LAP_DECREMENT)
        self.assertAlmostEqual(schedule.value(5), 101.0)
        self.assertAlmostEqual(schedule.value(6), 98.5)
        self.assertAlmostEqual(schedule.value(1000), 1.0)

    def test_step_falls_by_a_fixed_share_every_frequency(self):
        schedule = AlphaSchedule(ScheduleKind.STEP, beta1=100, step_frequency=5, horizon=200)
        self.assertEqual(schedule.value(5), schedule.value(1))
        self.assertAlmostEqual(schedule.value(6), 98.5)
        self.assertAlmostEqual(schedule.value(11), 96.0)
        self.assertAlmostEqual(schedule.value(200), 3.5)
        self.assertAlmostEqual(schedule.value(201), 1.0)
        self.assertAlmostEqual(schedule.value(500), 1.0)

    def test_step_decrement_scales_with_frequency_and_horizon(self):
        schedule = AlphaSchedule(ScheduleKind.STEP, beta1=60, step_frequency=3, horizon=30)
        self.assertAlmostEqual(schedule.value(4), 1 + 60 - 6.0)
        self.assertAlmostEqual(schedule.value(28), 1 + 60 - 6.0 * 9)

    def test_nav_alias_is_lap_decrement(self):
        schedule = AlphaSchedule.from_options(ScheduleOptions(kind="paper-nav"))
        self.assertIs(schedule.kind, ScheduleKind.LAP_DECREMENT)
        self.assertAlmostEqual(schedule.value(6), 98.5)

    def test_constant_infinite(self):
        schedule = AlphaSchedule.from_options(ScheduleOptions(kind="constant"))
        self.assertTrue(math.isinf(schedule.value(7)))

    def test_non_increasing(self):
        for kind in ScheduleKind:
            schedule = AlphaSchedule(kind, alpha=3.0)
            values = [schedule.value(i) for i in range(1, 251)]
            self.assertTrue(all(a >= b for a, b in zip(values, values[1:])), kind)
            self.assertTrue(all(v >= 1 for v in values), kind)

    def test_from_options(self):
        opts = ScheduleOptions(kind="exponential", label="pick", beta1=4, rho=0.5)
        schedule = AlphaSchedule.from_options(opts)
        self.assertEqual(schedule.kind, ScheduleKind.EXPONENTIAL)
        self.assertAlmostEqual(schedule.value(2), 3.0)

    def test_invalid_parameters(self):
        with self.assertRaisesRegex(ValueError, "decay rate"):
            AlphaSchedule(ScheduleKind.EXPONENTIAL, rho=1.5)
        with self.assertRaisesRegex(ValueError, "beta1"):
            AlphaSchedule(ScheduleKind.LINEAR, beta1=-1)
        with self.assertRaisesRegex(ValueError, "Horizon"):
            AlphaSchedule(ScheduleKind.STEP, horizon=1)
        with self.assertRaisesRegex(ValueError, "Constant alpha"):
            AlphaSchedule(ScheduleKind.CONSTANT, alpha=0.5)
        with self.assertRaises(ValueError):
            AlphaSchedule(ScheduleKind.LAP_DECREMENT).value(0)


if __name__ == "__main__":
    unittest.main()
