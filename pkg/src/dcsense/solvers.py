"""Convex solvers: BPDN, equality-constrained weighted l1, circulant least squares."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, aslinearoperator

logger = logging.getLogger(__name__)

POWER_ITERATIONS = 20
OBJECTIVE_WINDOW = 10


class InfeasibleError(ValueError):
    """The equality constraints have no solution."""


class UnidentifiableFilterError(ValueError):
    """A pilot with an all-zero spectrum cannot identify a filter."""


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 20000
    feas_tol: float = 1e-6
    obj_tol: float = 1e-4


@dataclass(frozen=True)
class LambdaRule:
    """``relative``: lam = value * ||A^T b||_inf; ``fixed``: lam = value."""

    kind: str = "relative"
    value: float = 0.01

    def __post_init__(self):
        if self.kind not in ("relative", "fixed"):
            raise ValueError(f"unknown lambda rule {self.kind!r}")
        if self.value <= 0:
            raise ValueError("lambda rule value must be positive")

    @classmethod
    def parse(cls, text: str) -> "LambdaRule":
        """Parse ``relative:0.01`` or ``fixed:1e-3``."""
        kind, _, value = text.strip().partition(":")
        try:
            return cls(kind.strip(), float(value))
        except ValueError as exc:
            raise ValueError(f"bad lambda rule {text!r}: {exc}") from None

    def __str__(self) -> str:
        return f"{self.kind}:{self.value:g}"

    def resolve(self, op, rhs) -> float:
        if self.kind == "fixed":
            return self.value
        corr = np.max(np.abs(_rmatvec(op, rhs)), initial=0.0)
        # A^T b = 0 means zero is the minimiser for every lam > 0
        return self.value * corr if corr > 0 else 1.0


def _rmatvec(op, v):
    if isinstance(op, np.ndarray):
        return op.T @ v
    return op.rmatvec(v)


@dataclass(frozen=True)
class BpdnProblem:
    """min_x 0.5 ||op x - rhs||^2 + lam ||x||_1"""

    op: object
    rhs: np.ndarray
    lam: float

    def __post_init__(self):
        shape = self.op.shape
        if np.shape(self.rhs) != (shape[0],):
            raise ValueError(f"rhs shape {np.shape(self.rhs)} does not match operator {shape}")


@dataclass(frozen=True)
class EqualityL1Problem:
    """min_x sum_i weights_i |x_i|  subject to  op x = rhs"""

    op: object
    rhs: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.op.shape[1],):
            raise ValueError("weights must have one entry per unknown")
        if np.any(w < 0) or not np.any(w > 0):
            raise ValueError("weights must be nonnegative with at least one positive")
        if np.shape(self.rhs) != (self.op.shape[0],):
            raise ValueError("rhs does not match operator")


@dataclass(frozen=True)
class SolverReport:
    solution: np.ndarray
    iterations: int
    final_objective: float
    residual_norm: float
    wall_time: float
    converged: bool = True
    info: dict = field(default_factory=dict)


def soft_threshold(x, thresh):
    return np.sign(x) * np.maximum(np.abs(x) - thresh, 0.0)


def _power_norm_sq(forward, adjoint, batch, d):
    """Largest eigenvalue of A^T A per batch member, deterministic start."""
    v = np.tile(np.random.default_rng(0).standard_normal(d), (batch, 1))
    v /= np.linalg.norm(v[0])
    est = np.zeros(batch)
    for _ in range(POWER_ITERATIONS):
        u = adjoint(forward(v))
        est = np.linalg.norm(u, axis=1)
        nz = est > 0
        v[nz] = u[nz] / est[nz, None]
    return est


def _fista(forward, adjoint, rhs, lam, d, tol, max_iter):
    """Accelerated proximal gradient on a batch of independent BPDN problems.

    Momentum restarts whenever a step would raise the objective, and the step
    size backtracks when the power-method estimate is too small, so every
    member's objective sequence is non-increasing.
    """
    batch = rhs.shape[0]
    lip = _power_norm_sq(forward, adjoint, batch, d)
    lip[lip <= 0] = 1.0

    def smooth(ax):
        return 0.5 * np.sum((ax - rhs) ** 2, axis=1)

    def objective(x, ax):
        return smooth(ax) + lam * np.sum(np.abs(x), axis=1)

    def prox_step(y, ay, rows):
        """Backtracked proximal step from ``y`` for the selected rows."""
        grad = adjoint(ay - rhs)
        fy = smooth(ay)
        while True:
            xn = soft_threshold(y - grad / lip[:, None], (lam / lip)[:, None])
            axn = forward(xn)
            diff = xn - y
            bound = (fy + np.sum(grad * diff, axis=1)
                     + 0.5 * lip * np.sum(diff * diff, axis=1))
            bad = rows & (smooth(axn) > bound + 1e-12 * np.maximum(1.0, np.abs(bound)))
            if not bad.any():
                return xn, axn
            lip[bad] *= 2.0

    x = np.zeros((batch, d))
    ax = forward(x)
    y, ay = x.copy(), ax.copy()
    t = np.ones(batch)
    f = objective(x, ax)
    history = [f.copy()]
    active = np.ones(batch, dtype=bool)
    iterations = np.zeros(batch, dtype=int)
    converged = np.zeros(batch, dtype=bool)

    for k in range(1, max_iter + 1):
        xn, axn = prox_step(y, ay, active)
        fn = objective(xn, axn)
        up = active & (fn > f)
        if up.any():
            y[up], ay[up], t[up] = x[up], ax[up], 1.0
            xr, axr = prox_step(y, ay, up)
            xn[up], axn[up] = xr[up], axr[up]
            fn[up] = objective(xr, axr)[up]
            stuck = up & (fn > f)
            xn[stuck], axn[stuck], fn[stuck] = x[stuck], ax[stuck], f[stuck]

        tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        mom = ((t - 1.0) / tn)[:, None]
        yn = xn + mom * (xn - x)
        ayn = axn + mom * (axn - ax)

        fixed = np.all(xn == x, axis=1)
        upd = active
        x[upd], ax[upd], f[upd] = xn[upd], axn[upd], fn[upd]
        y[upd], ay[upd], t[upd] = yn[upd], ayn[upd], tn[upd]
        iterations[upd] = k
        history.append(f.copy())

        done = fixed.copy()
        if len(history) > OBJECTIVE_WINDOW:
            old = history[-1 - OBJECTIVE_WINDOW]
            done |= (old - f) <= tol * np.maximum(np.abs(f), np.finfo(float).tiny)
        newly = active & done
        converged[newly] = True
        active &= ~done
        if not active.any():
            break
    return x, f, iterations, converged, np.array(history)


def _single_operator(op):
    op = aslinearoperator(op) if not isinstance(op, LinearOperator) else op

    def forward(xb):
        return op.matvec(xb[0])[None, :]

    def adjoint(vb):
        return op.rmatvec(vb[0])[None, :]

    return op, forward, adjoint


def solve_bpdn(problem: BpdnProblem, tol: float = SolverConfig.tol,
               max_iter: int = SolverConfig.max_iter) -> SolverReport:
    if not problem.lam > 0:
        raise ValueError("lambda must be positive")
    op, forward, adjoint = _single_operator(problem.op)
    rhs = np.asarray(problem.rhs, dtype=float)
    start = time.perf_counter()
    x, f, its, conv, hist = _fista(forward, adjoint, rhs[None, :], np.array([problem.lam]),
                                   op.shape[1], tol, max_iter)
    elapsed = time.perf_counter() - start
    sol = x[0]
    if not conv[0]:
        logger.warning("BPDN stopped at max_iter=%d without converging", max_iter)
    return SolverReport(
        solution=sol,
        iterations=int(its[0]),
        final_objective=float(f[0]),
        residual_norm=float(np.linalg.norm(op.matvec(sol) - rhs)),
        wall_time=elapsed,
        converged=bool(conv[0]),
        info={"lambda": float(problem.lam), "objective_history": hist[:, 0]},
    )


def solve_bpdn_batch(mats, rhs, lams, tol: float = SolverConfig.tol,
                     max_iter: int = SolverConfig.max_iter) -> list[SolverReport]:
    """Solve independent dense BPDN problems in lockstep.

    ``mats`` is a sequence of ``m_b x d`` matrices (row counts may differ;
    shorter ones are zero-padded, which leaves each problem unchanged).
    Each member keeps its own step size, momentum and stopping test, so the
    results match separate :func:`solve_bpdn` calls.
    """
    mats = [np.asarray(m, dtype=float) for m in mats]
    d = mats[0].shape[1]
    if any(m.shape[1] != d for m in mats):
        raise ValueError("all problems must share the unknown dimension")
    lams = np.asarray(lams, dtype=float)
    if np.any(lams <= 0):
        raise ValueError("lambda must be positive")
    m_max = max(m.shape[0] for m in mats)
    stack = np.zeros((len(mats), m_max, d))
    b = np.zeros((len(mats), m_max))
    for i, (m, r) in enumerate(zip(mats, rhs)):
        r = np.asarray(r, dtype=float)
        if r.shape != (m.shape[0],):
            raise ValueError(f"rhs {i} does not match its matrix")
        stack[i, :m.shape[0]] = m
        b[i, :m.shape[0]] = r
    stack_t = np.ascontiguousarray(stack.transpose(0, 2, 1))

    def forward(x):
        return np.matmul(stack, x[:, :, None])[:, :, 0]

    def adjoint(v):
        return np.matmul(stack_t, v[:, :, None])[:, :, 0]

    start = time.perf_counter()
    x, f, its, conv, hist = _fista(forward, adjoint, b, lams, d, tol, max_iter)
    elapsed = time.perf_counter() - start
    if not conv.all():
        logger.warning("BPDN batch: %d of %d problems hit max_iter=%d",
                       int((~conv).sum()), len(mats), max_iter)
    reports = []
    for i, m in enumerate(mats):
        rhs_i = b[i, :m.shape[0]]
        reports.append(SolverReport(
            solution=x[i].copy(),
            iterations=int(its[i]),
            final_objective=float(f[i]),
            residual_norm=float(np.linalg.norm(m @ x[i] - rhs_i)),
            wall_time=elapsed,
            converged=bool(conv[i]),
            info={"lambda": float(lams[i]),
                  "objective_history": hist[:its[i] + 1, i]},
        ))
    return reports


def _dense(op) -> np.ndarray:
    if isinstance(op, np.ndarray):
        return op.astype(float)
    op = aslinearoperator(op)
    return op.matmat(np.eye(op.shape[1]))


def solve_equality_l1(problem: EqualityL1Problem, feas_tol: float = SolverConfig.feas_tol,
                      obj_tol: float = SolverConfig.obj_tol, max_iter: int = 50000
                      ) -> SolverReport:
    """ADMM on ``x = v`` with ``x`` projected onto ``{op x = rhs}``.

    The penalty is rebalanced against the primal/dual residual ratio. The
    returned point is the projected iterate, so it is feasible up to rounding.
    """
    a = _dense(problem.op)
    b = np.asarray(problem.rhs, dtype=float)
    w = np.asarray(problem.weights, dtype=float)
    d = a.shape[1]
    start = time.perf_counter()

    a_pinv = scipy.linalg.pinv(a)
    x_ls = a_pinv @ b
    b_norm = np.linalg.norm(b)
    floor = np.linalg.norm(a @ x_ls - b)
    if floor > feas_tol * max(b_norm, np.finfo(float).tiny):
        raise InfeasibleError(
            f"rhs is outside the operator range (residual floor {floor:.3g}, "
            f"||rhs|| = {b_norm:.3g})")

    def objective(x):
        return float(np.sum(w * np.abs(x)))

    if b_norm == 0:
        x = np.zeros(d)
        return SolverReport(x, 0, 0.0, 0.0, time.perf_counter() - start)

    proj = np.eye(d) - a_pinv @ a

    def project(p):
        return proj @ p + x_ls

    scale = max(np.max(np.abs(x_ls)), 1.0)
    eps_abs = 1e-13 * scale * np.sqrt(d)
    eps_rel = min(1e-3 * obj_tol, 1e-8)
    rho = 1.0
    v = x_ls.copy()
    u = np.zeros(d)
    x = x_ls.copy()
    converged = False
    k = 0
    for k in range(1, max_iter + 1):
        x = project(v - u)
        v_old = v
        v = soft_threshold(x + u, w / rho)
        u = u + x - v
        r_pri = np.linalg.norm(x - v)
        r_dual = rho * np.linalg.norm(v - v_old)
        if (r_pri <= eps_abs + eps_rel * max(np.linalg.norm(x), np.linalg.norm(v))
                and r_dual <= eps_abs + eps_rel * rho * np.linalg.norm(u)):
            converged = True
            break
        if k % 10 == 0:
            if r_pri > 10.0 * r_dual:
                rho *= 2.0
                u /= 2.0
            elif r_dual > 10.0 * r_pri:
                rho /= 2.0
                u *= 2.0

    # candidates: the projected iterate, and the projection of the sparse one
    cands = [x, project(v)]
    sol = min(cands, key=objective)
    residual = float(np.linalg.norm(a @ sol - b))
    if residual > feas_tol * b_norm:
        raise InfeasibleError(f"solver could not reach feasibility (residual {residual:.3g})")
    if not converged:
        logger.warning("equality-l1 stopped at max_iter=%d without converging", max_iter)
    return SolverReport(
        solution=sol,
        iterations=k,
        final_objective=objective(sol),
        residual_norm=residual,
        wall_time=time.perf_counter() - start,
        converged=converged,
        info={"rho": rho},
    )


def circular_convolve(x, h) -> np.ndarray:
    """Circular convolution of equal-length real vectors via the FFT."""
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    if x.shape != h.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {h.shape}")
    n = x.shape[-1]
    return np.fft.irfft(np.fft.rfft(x) * np.fft.rfft(h), n=n)


def solve_circulant_ls(y_pilot, r_received, reg: float = 1e-10):
    """Least-squares filter ``beta`` with ``r ~ circulant(y) @ beta``.

    Bins where ``|Y|^2 < reg * max|Y|^2`` get a ridge term of that size.
    Returns ``(beta, residual_norm)``.
    """
    y = np.asarray(y_pilot, dtype=float)
    r = np.asarray(r_received, dtype=float)
    if y.ndim != 1 or y.size < 1 or r.shape != y.shape:
        raise ValueError(f"pilot and received vectors must be equal-length 1-D, "
                         f"got {y.shape} and {r.shape}")
    yf = np.fft.fft(y)
    power = np.abs(yf) ** 2
    if power.max() == 0:
        raise UnidentifiableFilterError("all-zero pilot cannot identify a filter")
    ridge = reg * power.max()
    rf = np.fft.fft(r)
    small = power < ridge
    bf = np.empty_like(rf)
    bf[~small] = rf[~small] / yf[~small]
    bf[small] = np.conj(yf[small]) * rf[small] / (power[small] + ridge)
    beta = np.fft.ifft(bf).real
    residual = float(np.linalg.norm(circular_convolve(y, beta) - r))
    return beta, residual
