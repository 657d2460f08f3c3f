import os
import pickle
import unittest
from unittest.mock import patch

import numpy as np

from factsim.utils import (ConfigurationError, ExperimentError, InputError, NumericalError, child_seeds, make_rng,
                           resolve_workers, stage)


class TestStage(unittest.TestCase):
    def test_wraps_simulator_errors(self):
        with self.assertRaises(ExperimentError) as ctx:
            with stage("run_protocol", seed=3):
                raise NumericalError("loss is nan")
        error = ctx.exception
        self.assertEqual((error.stage, error.seed), ("run_protocol", 3))
        self.assertIsInstance(error.cause, NumericalError)
        self.assertEqual(str(error), "[seed=3] run_protocol: loss is nan")

    def test_does_not_wrap_twice(self):
        with self.assertRaises(ExperimentError) as ctx:
            with stage("outer", seed=1):
                with stage("inner", seed=1):
                    raise InputError("bad")
        self.assertEqual(ctx.exception.stage, "inner")

    def test_other_exceptions_pass_through(self):
        with self.assertRaises(KeyError):
            with stage("build_clients"):
                raise KeyError("x")

    def test_experiment_error_survives_pickling(self):
        error = ExperimentError("evaluate", 2, InputError("no labels"))
        restored = pickle.loads(pickle.dumps(error))
        self.assertEqual((restored.stage, restored.seed), ("evaluate", 2))
        self.assertEqual(str(restored), str(error))


class TestResolveWorkers(unittest.TestCase):
    @patch.dict(os.environ, {"FACTSIM_WORKERS": "3"})
    def test_environment_variable(self):
        self.assertEqual(resolve_workers(), 3)

    @patch.dict(os.environ, {"FACTSIM_WORKERS": "zero"})
    def test_invalid_environment_variable(self):
        with self.assertRaises(ConfigurationError):
            resolve_workers()

    @patch.dict(os.environ, {"FACTSIM_WORKERS": "0"})
    def test_non_positive_environment_variable(self):
        with self.assertRaises(ConfigurationError):
            resolve_workers()

    @patch.dict(os.environ, {}, clear=True)
    @patch("factsim.utils.psutil.cpu_count", return_value=6)
    def test_physical_cores(self, mock_cpu_count):
        self.assertEqual(resolve_workers(), 6)
        mock_cpu_count.assert_called_once_with(logical=False)

    @patch.dict(os.environ, {}, clear=True)
    @patch("factsim.utils.psutil.cpu_count", return_value=None)
    def test_unknown_core_count(self, mock_cpu_count):
        self.assertEqual(resolve_workers(), 1)
        self.assertEqual(resolve_workers(default=4), 4)


class TestSeeds(unittest.TestCase):
    def test_child_seeds_are_reproducible(self):
        self.assertEqual(child_seeds(make_rng(5), 4), child_seeds(make_rng(5), 4))
        self.assertNotEqual(child_seeds(make_rng(5), 4), child_seeds(make_rng(6), 4))

    def test_child_seeds_are_python_ints(self):
        seeds = child_seeds(make_rng(0), 3)
        self.assertTrue(all(type(s) is int and s >= 0 for s in seeds))

    def test_make_rng(self):
        self.assertEqual(make_rng(1).integers(0, 100, 5).tolist(),
                         np.random.default_rng(1).integers(0, 100, 5).tolist())


if __name__ == '__main__':
    unittest.main()
