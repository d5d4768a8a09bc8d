"""Stacked joint-sparsity systems.

For a group of ``J`` sensors the fusion center sees

    r = Psi z + n,   z = [z_c; z_inn_1; ...; z_inn_J]

with ``Psi = [A | H]``: ``A`` stacks every ``Phi_j D`` in one block column and
``H`` places them on a block diagonal.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.sparse.linalg import LinearOperator

from .operators import OperatorSet
from .scenario import GroupScenario

ENSEMBLES = ("gaussian", "bernoulli")


@dataclass(frozen=True)
class SensingMatrix:
    phi: np.ndarray

    @property
    def rate(self) -> float:
        return self.phi.shape[0] / self.phi.shape[1]

    @property
    def shape(self):
        return self.phi.shape


def draw_sensing_matrix(w: int, n: int, ensemble: str = "gaussian",
                        rng_seed=None) -> SensingMatrix:
    """``w x n`` matrix with i.i.d. N(0, 1/w) or +-1/sqrt(w) entries."""
    if not 1 <= w <= n:
        raise ValueError(f"need 1 <= w <= n, got w={w}, n={n}")
    rng = np.random.default_rng(rng_seed)
    if ensemble == "gaussian":
        phi = rng.normal(0.0, 1.0 / np.sqrt(w), size=(w, n))
    elif ensemble == "bernoulli":
        phi = rng.choice([-1.0, 1.0], size=(w, n)) / np.sqrt(w)
    else:
        raise ValueError(f"unknown ensemble {ensemble!r}; use one of {ENSEMBLES}")
    phi.setflags(write=False)
    return SensingMatrix(phi)


def _as_array(phi) -> np.ndarray:
    return phi.phi if isinstance(phi, SensingMatrix) else np.asarray(phi, dtype=float)


def measure(scenario: GroupScenario, phis: Sequence, ops: OperatorSet) -> list[np.ndarray]:
    """Clean per-sensor measurements ``y_j = Phi_j a_j``."""
    if len(phis) != scenario.j_sensors:
        raise ValueError(f"{len(phis)} sensing matrices for {scenario.j_sensors} sensors")
    ys = []
    for phi, a in zip(phis, scenario.autocorrs):
        phi = _as_array(phi)
        if phi.shape[1] != ops.n:
            raise ValueError("sensing matrix width does not match n")
        ys.append(phi @ a)
    return ys


def sensor_offsets(widths: Sequence[int]) -> list[tuple[int, int]]:
    edges = np.concatenate([[0], np.cumsum(widths)]).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


@dataclass(frozen=True)
class StackedSystem:
    """Assembled ``(r, Psi)`` for one group.

    ``blocks[j]`` is the ``w_j x n`` matrix mapping sensor ``j``'s edge vector
    to its received vector (``Phi_j D``, or ``B_j Phi_j D`` once a channel is
    folded in).
    """

    blocks: tuple
    r: np.ndarray
    sensor_offsets: tuple

    @property
    def n(self) -> int:
        return self.blocks[0].shape[1]

    @property
    def j_sensors(self) -> int:
        return len(self.blocks)

    @property
    def widths(self) -> list[int]:
        return [b.shape[0] for b in self.blocks]

    @property
    def a_block(self) -> np.ndarray:
        return np.vstack(self.blocks)

    @property
    def h_block(self) -> np.ndarray:
        n, rows = self.n, sum(self.widths)
        h = np.zeros((rows, n * self.j_sensors))
        for jj, (blk, (lo, hi)) in enumerate(zip(self.blocks, self.sensor_offsets)):
            h[lo:hi, jj * n:(jj + 1) * n] = blk
        return h

    @property
    def psi(self) -> np.ndarray:
        return np.hstack([self.a_block, self.h_block])

    def split_r(self, r=None) -> list[np.ndarray]:
        r = self.r if r is None else r
        return [r[lo:hi] for lo, hi in self.sensor_offsets]

    @cached_property
    def _padded(self):
        """Blocks zero-padded to a common height, plus the valid-row mask."""
        w_max = max(self.widths)
        stack = np.zeros((self.j_sensors, w_max, self.n))
        mask = np.zeros((self.j_sensors, w_max), dtype=bool)
        for jj, blk in enumerate(self.blocks):
            stack[jj, :blk.shape[0]] = blk
            mask[jj, :blk.shape[0]] = True
        return stack, np.ascontiguousarray(stack.transpose(0, 2, 1)), mask

    def psi_matvec(self, z: np.ndarray) -> np.ndarray:
        stack, _, mask = self._padded
        n = self.n
        per_sensor = z[:n][None, :] + z[n:].reshape(self.j_sensors, n)
        return np.matmul(stack, per_sensor[:, :, None])[:, :, 0][mask]

    def psi_rmatvec(self, v: np.ndarray) -> np.ndarray:
        _, stack_t, mask = self._padded
        padded = np.zeros(mask.shape)
        padded[mask] = v
        parts = np.matmul(stack_t, padded[:, :, None])[:, :, 0]
        return np.concatenate([parts.sum(axis=0), parts.ravel()])

    def psi_operator(self) -> LinearOperator:
        """Matrix-free ``Psi`` for the solver inner loop."""
        rows = sum(self.widths)
        cols = self.n * (self.j_sensors + 1)
        return LinearOperator((rows, cols), matvec=self.psi_matvec,
                              rmatvec=self.psi_rmatvec, dtype=float)


def assemble_stacked(phis: Sequence, ops: OperatorSet, r) -> StackedSystem:
    blocks = []
    for phi in phis:
        phi = _as_array(phi)
        if phi.shape[1] != ops.n:
            raise ValueError("sensing matrix width does not match n")
        blk = phi @ ops.d
        blk.setflags(write=False)
        blocks.append(blk)
    if not blocks:
        raise ValueError("need at least one sensor")
    widths = [b.shape[0] for b in blocks]
    r = np.array(r, dtype=float).ravel()
    if r.size != sum(widths):
        raise ValueError(f"received vector has {r.size} entries, expected {sum(widths)}")
    r.setflags(write=False)
    return StackedSystem(tuple(blocks), r, tuple(sensor_offsets(widths)))


def innovation_rhs(sys: StackedSystem, z_c) -> np.ndarray:
    """``r_inn = r - A z_c``."""
    z_c = np.asarray(z_c, dtype=float)
    if z_c.shape != (sys.n,):
        raise ValueError("common edge vector has the wrong length")
    return sys.r - np.concatenate([blk @ z_c for blk in sys.blocks])


def assemble_gbar(ops: OperatorSet, j: int) -> np.ndarray:
    """``nJ x n(J+1)`` matrix with the layout of ``Psi`` and ``G`` in every block."""
    if j < 1:
        raise ValueError("j must be >= 1")
    n = ops.n
    gbar = np.zeros((n * j, n * (j + 1)))
    for jj in range(j):
        gbar[jj * n:(jj + 1) * n, :n] = ops.g
        gbar[jj * n:(jj + 1) * n, (jj + 1) * n:(jj + 2) * n] = ops.g
    return gbar


def export_csv(matrix, path) -> None:
    np.savetxt(path, np.atleast_2d(matrix), delimiter=",", fmt="%.17g")
