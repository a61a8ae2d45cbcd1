import logging
import math
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

SUB_SEED_RULE = "numpy.random.SeedSequence([master_seed, seed]).spawn(2) -> (environment, agent)"


def slugify(text: str) -> str:
    return text.strip().replace(' ', '_').replace('(', '').replace(')', '').replace('/', '-').replace(':', '').replace('.', '_').lower()


def derive_rngs(master_seed: int, seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (environment, agent) generators for one instance.

    Each instance depends only on (master_seed, seed), so adding seeds never changes existing instances.
    """
    environment_seq, agent_seq = np.random.SeedSequence([master_seed, seed]).spawn(2)
    return np.random.default_rng(environment_seq), np.random.default_rng(agent_seq)


def mean_and_stderr(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation / sqrt(n). NaN for no values, stderr 0 for one."""
    if len(values) == 0:
        return math.nan, math.nan
    arr = np.asarray(values, dtype=float)
    if len(arr) == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(len(arr)))
