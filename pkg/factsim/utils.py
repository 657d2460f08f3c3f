"""Utility functions and exceptions for the FACT simulator."""
import logging
import os
from contextlib import contextmanager
from typing import List, Optional

import numpy as np
import psutil

logger = logging.getLogger(__name__)

WORKERS_ENV_VAR = "FACTSIM_WORKERS"


class FactSimError(Exception):
    """Base class for every error raised by the simulator."""
    pass


class InputError(FactSimError, ValueError):
    """Raised when an operation receives invalid values, shapes or labels."""
    pass


class DimensionError(InputError):
    """Raised when an array does not fit the layer it is fed to."""
    pass


class ConfigurationError(FactSimError, ValueError):
    """Raised when a configuration or a precondition on it is violated."""
    pass


class ProtocolError(FactSimError):
    """Raised when federation participants do not agree on the architecture."""
    pass


class NumericalError(FactSimError, ArithmeticError):
    """Raised when a loss or gradient is not finite."""
    pass


class FormatError(FactSimError, ValueError):
    """Raised when a file does not match its documented binary or text layout."""
    pass


class ExperimentError(FactSimError):
    """Raised by the harness; remembers the stage and seed that failed."""

    def __init__(self, stage: str, seed: Optional[int], cause: BaseException):
        self.stage = stage
        self.seed = seed
        self.cause = cause
        prefix = f"[seed={seed}] " if seed is not None else ""
        super().__init__(f"{prefix}{stage}: {cause}")

    def __reduce__(self):
        return self.__class__, (self.stage, self.seed, self.cause)


@contextmanager
def stage(name: str, seed: Optional[int] = None):
    """Context manager tagging simulator errors with the stage and seed."""
    try:
        yield
    except ExperimentError:
        raise
    except FactSimError as e:
        logger.error(f"Stage '{name}' failed for seed {seed}: {e}")
        raise ExperimentError(name, seed, e) from e


def resolve_workers(default: Optional[int] = None) -> int:
    """Number of worker processes for independent runs.

    Reads FACTSIM_WORKERS; falls back to the physical core count.
    """
    raw = os.environ.get(WORKERS_ENV_VAR)
    if raw:
        try:
            workers = int(raw)
        except ValueError:
            raise ConfigurationError(f"{WORKERS_ENV_VAR} must be an integer, got '{raw}'")
        if workers < 1:
            raise ConfigurationError(f"{WORKERS_ENV_VAR} must be >= 1, got {workers}")
        return workers
    if default is not None:
        return max(1, default)
    return max(1, psutil.cpu_count(logical=False) or 1)


def make_rng(seed: int) -> np.random.Generator:
    """Seeded numpy generator used everywhere randomness is consumed."""
    return np.random.default_rng(seed)


def child_seeds(rng: np.random.Generator, count: int) -> List[int]:
    """Draw independent seeds for sub-tasks from a parent generator."""
    return [int(s) for s in rng.integers(0, 2**63 - 1, size=count, dtype=np.int64)]
