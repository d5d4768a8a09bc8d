"""Optimal common component of a group from full PSD knowledge.

With ``e_j = Gamma s_j`` the equality constraint ``s_all = Gbar z`` forces
``z_inn_j = e_j - z_c``, so both programs separate per bin:

* sum of innovation l1 norms -> ``z_c[i] = median_j e_j[i]``
* l1 norm of the whole vector -> ``z_c[i] = median{0, e_1[i], ..., e_J[i]}``

For an even number of values every point of the middle interval is optimal;
the value of smallest magnitude is taken.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .jsm import assemble_gbar
from .operators import OperatorSet, edge_of
from .solvers import EqualityL1Problem, SolverConfig, solve_equality_l1

METHODS = ("eq9", "eq10", "eq9_closed", "eq10_closed")


@dataclass(frozen=True)
class CommonEstimate:
    z_c_opt: np.ndarray
    z_inn_opt: np.ndarray  # (J, n)
    objective: float
    method: str

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "objective": self.objective,
            "z_c_opt": self.z_c_opt.tolist(),
            "z_inn_opt": self.z_inn_opt.tolist(),
        }


def tiebreak_median(values: np.ndarray) -> np.ndarray:
    """Column-wise median; even counts pick the smallest-|c| optimal point."""
    v = np.sort(np.asarray(values, dtype=float), axis=0)
    m = v.shape[0]
    if m % 2:
        return v[m // 2].copy()
    lo, hi = v[m // 2 - 1], v[m // 2]
    endpoint = np.where(np.abs(lo) <= np.abs(hi), lo, hi)
    return np.where((lo <= 0) & (hi >= 0), 0.0, endpoint)


def _objective(z_c, z_inn, which):
    obj = float(np.abs(z_inn).sum())
    if which.startswith("eq9"):
        obj += float(np.abs(z_c).sum())
    return obj


def _estimate(psds, z_c, which) -> CommonEstimate:
    edges = np.diff(np.atleast_2d(psds), axis=1, prepend=0.0)
    # enforces z_c + z_inn_j = Gamma s_j on every return path
    z_inn = edges - z_c[None, :]
    return CommonEstimate(z_c, z_inn, _objective(z_c, z_inn, which), which)


def common_eq10_closed(psds, ops: OperatorSet) -> CommonEstimate:
    edges = edge_of(np.atleast_2d(psds), ops)
    return _estimate(psds, tiebreak_median(edges), "eq10_closed")


def common_eq9_closed(psds, ops: OperatorSet) -> CommonEstimate:
    edges = edge_of(np.atleast_2d(psds), ops)
    augmented = np.vstack([np.zeros(ops.n), edges])
    return _estimate(psds, tiebreak_median(augmented), "eq9_closed")


def common_via_solver(psds, ops: OperatorSet, which: str = "eq10",
                      cfg: SolverConfig = SolverConfig()) -> CommonEstimate:
    """Solve the equality-constrained program on ``Gbar`` directly."""
    if which not in ("eq9", "eq10"):
        raise ValueError(f"which must be 'eq9' or 'eq10', got {which!r}")
    psds = np.atleast_2d(np.asarray(psds, dtype=float))
    j, n = psds.shape
    weights = np.ones(n * (j + 1))
    if which == "eq10":
        weights[:n] = 0.0
    problem = EqualityL1Problem(assemble_gbar(ops, j), psds.ravel(), weights)
    report = solve_equality_l1(problem, feas_tol=cfg.feas_tol, obj_tol=cfg.obj_tol)
    return _estimate(psds, report.solution[:n].copy(), which)


def estimate_common(psds, ops: OperatorSet, method: str = "eq10_closed",
                    cfg: SolverConfig = SolverConfig()) -> CommonEstimate:
    if method == "eq10_closed":
        return common_eq10_closed(psds, ops)
    if method == "eq9_closed":
        return common_eq9_closed(psds, ops)
    if method in ("eq9", "eq10"):
        return common_via_solver(psds, ops, method, cfg)
    raise ValueError(f"unknown method {method!r}; use one of {METHODS}")
