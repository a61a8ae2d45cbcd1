from enum import Enum

import numpy as np

from .core import Environment
from .grid_nav import GridNavIce
from .lattice import LatticeWorld
from .lift_grid import LiftGrid
from .options import EnvironmentOptions


class EnvTypes(Enum):
    GRID_NAV_ICE = GridNavIce
    LIFT_GRID = LiftGrid
    LATTICE = LatticeWorld

    @classmethod
    def from_kind(cls, kind: str) -> "EnvTypes":
        """Member for a config kind such as 'grid-nav-ice'."""
        return cls[kind.upper().replace("-", "_")]


def build_environment(opts: EnvironmentOptions, rng: np.random.Generator) -> Environment:
    return EnvTypes.from_kind(opts.kind).value.from_options(opts, rng)
