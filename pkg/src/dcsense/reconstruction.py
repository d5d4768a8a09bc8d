"""The four fusion-center estimators.

individual
    one BPDN per sensor on ``r_j = Phi_j D z_j``.
jsm
    one BPDN on the stacked system ``r = Psi [z_c; z_inn_1; ...]``.
innovation
    ``z_c`` known; BPDN on ``r - A z_c = H z_I``. ``H`` is block diagonal,
    so this is J decoupled problems, solved in lockstep.
innovation_channel_aware
    as ``innovation`` with every block replaced by ``B_j Phi_j D``.
"""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import DestructiveFilter, build_bbar, channel_aware_operator
from .jsm import StackedSystem, innovation_rhs
from .operators import OperatorSet
from .solvers import (BpdnProblem, LambdaRule, SolverConfig, solve_bpdn,
                      solve_bpdn_batch)

METHODS = ("individual", "jsm", "innovation", "innovation_channel_aware")
RESIDUAL_FLAG_RATIO = 0.05
CANCELLATION_EPS = 1e-12


@dataclass(frozen=True)
class ReconReport:
    method: str
    psd_estimates: np.ndarray  # (J, n)
    z_estimates: dict
    per_sensor_mse: np.ndarray | None
    wall_time: float
    solver_reports: tuple
    flags: tuple = ()
    lambdas: tuple = field(default=())

    @property
    def mean_mse(self) -> float:
        return float(np.mean(self.per_sensor_mse))

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.solver_reports)


def _timed(fn, repeats):
    times = []
    for _ in range(max(1, repeats)):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return out, statistics.median(times)


def _build_report(method, sensor_edges, z_estimates, ops, truth, wall_time,
                  reports, lambdas, flags=()):
    sensor_edges = np.atleast_2d(sensor_edges)
    # recomputed here so the PSDs never come straight from a solver
    psd = (ops.g @ sensor_edges.T).T
    mse = None
    if truth is not None:
        truth = np.atleast_2d(np.asarray(truth, dtype=float))
        if truth.shape != psd.shape:
            raise ValueError(f"truth shape {truth.shape} does not match {psd.shape}")
        mse = np.sum((psd - truth) ** 2, axis=1) / ops.n
    flags = list(flags)
    for jj, rep in enumerate(reports):
        if not rep.converged:
            flags.append(f"solver {jj} did not converge in {rep.iterations} iterations")
    return ReconReport(
        method=method,
        psd_estimates=psd,
        z_estimates=z_estimates,
        per_sensor_mse=mse,
        wall_time=wall_time,
        solver_reports=tuple(reports),
        flags=tuple(flags),
        lambdas=tuple(float(v) for v in lambdas),
    )


def _solve_blocks(blocks, rhs, rule, cfg, repeats):
    lams = [rule.resolve(b, r) for b, r in zip(blocks, rhs)]
    reports, wall = _timed(
        lambda: solve_bpdn_batch(blocks, rhs, lams, tol=cfg.tol, max_iter=cfg.max_iter),
        repeats)
    return reports, lams, wall


def recon_individual(rs: Sequence[np.ndarray], phis: Sequence, ops: OperatorSet,
                     rule: LambdaRule = LambdaRule(), cfg: SolverConfig = SolverConfig(),
                     truth=None, repeats: int = 1) -> ReconReport:
    if len(rs) != len(phis):
        raise ValueError("one received vector per sensing matrix is required")
    blocks = []
    for r, phi in zip(rs, phis):
        phi = np.asarray(getattr(phi, "phi", phi), dtype=float)
        if phi.shape != (np.size(r), ops.n):
            raise ValueError(f"sensing matrix {phi.shape} does not match r ({np.size(r)})")
        blocks.append(phi @ ops.d)
    rhs = [np.asarray(r, dtype=float) for r in rs]
    reports, lams, wall = _solve_blocks(blocks, rhs, rule, cfg, repeats)
    z = np.array([rep.solution for rep in reports])
    return _build_report("individual", z, {"z": z}, ops, truth, wall, reports, lams)


def recon_jsm(sys: StackedSystem, ops: OperatorSet, rule: LambdaRule = LambdaRule(),
              cfg: SolverConfig = SolverConfig(), truth=None, repeats: int = 1
              ) -> ReconReport:
    op = sys.psi_operator()
    lam = rule.resolve(op, sys.r)
    rep, wall = _timed(
        lambda: solve_bpdn(BpdnProblem(op, sys.r, lam), tol=cfg.tol, max_iter=cfg.max_iter),
        repeats)
    n = sys.n
    z_c = rep.solution[:n]
    z_inn = rep.solution[n:].reshape(sys.j_sensors, n)
    return _build_report("jsm", z_c[None, :] + z_inn, {"z_c": z_c, "z_inn": z_inn},
                         ops, truth, wall, [rep], [lam])


def recon_innovation(sys: StackedSystem, z_c, ops: OperatorSet,
                     rule: LambdaRule = LambdaRule(), cfg: SolverConfig = SolverConfig(),
                     truth=None, repeats: int = 1, method: str = "innovation"
                     ) -> ReconReport:
    z_c = np.asarray(z_c, dtype=float)
    r_inn = sys.split_r(innovation_rhs(sys, z_c))
    for jj, (blk, r_j) in enumerate(zip(sys.blocks, sys.split_r())):
        # a difference at the rounding level of its terms is an exact zero
        scale = np.linalg.norm(r_j) + np.linalg.norm(blk @ z_c)
        if np.linalg.norm(r_inn[jj]) <= CANCELLATION_EPS * scale:
            r_inn[jj] = np.zeros_like(r_inn[jj])
    reports, lams, wall = _solve_blocks(list(sys.blocks), r_inn, rule, cfg, repeats)
    z_inn = np.array([rep.solution for rep in reports])

    flags = []
    resid = np.sqrt(sum(rep.residual_norm ** 2 for rep in reports))
    r_norm = np.linalg.norm(sys.r)
    if r_norm > 0 and resid > RESIDUAL_FLAG_RATIO * r_norm:
        flags.append(f"large residual: {resid:.3g} vs ||r|| = {r_norm:.3g}; "
                     "the common component may be wrong")
    return _build_report(method, z_c[None, :] + z_inn, {"z_c": z_c, "z_inn": z_inn},
                         ops, truth, wall, reports, lams, flags)


def recon_innovation_channel_aware(sys: StackedSystem, z_c,
                                   filters: Sequence[DestructiveFilter], ops: OperatorSet,
                                   rule: LambdaRule = LambdaRule(),
                                   cfg: SolverConfig = SolverConfig(), truth=None,
                                   repeats: int = 1) -> ReconReport:
    aware = channel_aware_operator(sys, build_bbar(filters))
    return recon_innovation(aware, z_c, ops, rule, cfg, truth, repeats,
                            method="innovation_channel_aware")
