"""Centralized numerical tolerances.

Every module reads its thresholds from a :class:`Tolerances` record so that
experiment configurations can override them in one place.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace


@dataclass(frozen=True)
class Tolerances:
    hyperboloid: float = 1e-12       # |<x,x> + 1| after construction
    orthogonality: float = 1e-12     # |<p, v>| for tangent vectors
    unit_tangent: float = 1e-10      # | |v| - 1 | accepted by exp_map
    projection: float = 1e-10        # conditional-gradient duality gap
    projection_max_iter: int = 10_000
    membership: float = 1e-9         # polytope cone feasibility slack
    newton: float = 1e-13            # graph-projection step size tolerance
    newton_max_iter: int = 60
    basis_condition_max: float = 1e8
    chi2_flag: float = 4.0
    normality_rel: float = 0.05      # Hessian agreement across scales h, h/2, h/4

    def override(self, **kwargs) -> "Tolerances":
        known = {f.name for f in fields(self)}
        bad = set(kwargs) - known
        if bad:
            raise KeyError(f"unknown tolerance keys: {sorted(bad)}")
        return replace(self, **kwargs)


DEFAULT = Tolerances()
