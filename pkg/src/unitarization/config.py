"""Centralized numeric tolerances and simulator limits."""

from __future__ import annotations

import os
from dataclasses import dataclass

WIDTH_CAP_ENV = "UNITARIZE_WIDTH_CAP"


@dataclass(frozen=True)
class Tolerances:
    """All tolerance constants used by reference computations and checks.

    unitarity: max-norm bound for U†U - I on accepted unitaries.
    degeneracy_floor: Gram-Schmidt residual norm below which a vector is
        considered linearly dependent.
    component_floor: residual amplitude below which an orthogonal component
        is reported as absent.
    merge_rtol: relative closeness required before the structured simulator
        merges two near-identical product terms.
    prune_rtol: terms with coefficient below this fraction of the largest
        are dropped.
    width_cap: largest total register width for dense (2^w) computation.
    """

    unitarity: float = 1e-10
    degeneracy_floor: float = 1e-8
    component_floor: float = 1e-8
    merge_rtol: float = 1e-12
    prune_rtol: float = 1e-15
    width_cap: int = 12


def default_width_cap() -> int:
    """Width cap, overridable through the environment."""
    raw = os.environ.get(WIDTH_CAP_ENV)
    if raw is None:
        return Tolerances.width_cap
    return int(raw)


DEFAULT = Tolerances()
