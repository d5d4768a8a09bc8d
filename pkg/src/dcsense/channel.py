"""Imperfect sensor-to-fusion-center links.

Each link circularly convolves the transmitted measurements with a short
destructive filter and adds Gaussian noise. The fusion center estimates the
filters from pilot transmissions of the (already known) common component.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator

from .jsm import StackedSystem, sensor_offsets
from .operators import OperatorSet, autocorr_of
from .solvers import circular_convolve, solve_circulant_ls


@dataclass(frozen=True)
class DestructiveFilter:
    beta: np.ndarray

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float)
        if beta.ndim != 1 or not np.any(beta):
            raise ValueError("a filter must be a nonzero 1-D vector")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

    @property
    def energy(self) -> float:
        return float(np.linalg.norm(self.beta))

    @property
    def circulant(self) -> np.ndarray:
        return scipy.linalg.circulant(self.beta)

    @classmethod
    def impulse(cls, w: int) -> "DestructiveFilter":
        beta = np.zeros(w)
        beta[0] = 1.0
        return cls(beta)


@dataclass(frozen=True)
class ChannelRealization:
    filters: tuple
    noise_sigma: float = 0.0

    @property
    def widths(self) -> list[int]:
        return [f.beta.size for f in self.filters]


def random_filters(widths: Sequence[int], sigma_beta: float, rng_seed=None
                   ) -> list[DestructiveFilter]:
    """Unit impulse plus an i.i.d. N(0, sigma_beta^2 / w) tail on taps 1..w-1."""
    rng = np.random.default_rng(rng_seed)
    out = []
    for w in widths:
        beta = np.zeros(w)
        beta[0] = 1.0
        if w > 1:
            beta[1:] = rng.normal(0.0, sigma_beta / np.sqrt(w), size=w - 1)
        out.append(DestructiveFilter(beta))
    return out


def apply_channel(ys: Sequence[np.ndarray], ch: ChannelRealization, rng_seed=None
                  ) -> np.ndarray:
    """Stacked ``r_j = y_j (*) beta_j + n_j``."""
    if len(ys) != len(ch.filters):
        raise ValueError(f"{len(ys)} measurement vectors for {len(ch.filters)} filters")
    rng = np.random.default_rng(rng_seed)
    parts = []
    for y, f in zip(ys, ch.filters):
        y = np.asarray(y, dtype=float)
        if y.shape != f.beta.shape:
            raise ValueError(f"filter length {f.beta.size} does not match w_j={y.size}")
        r = circular_convolve(y, f.beta)
        if ch.noise_sigma > 0:
            r = r + rng.normal(0.0, ch.noise_sigma, size=y.size)
        parts.append(r)
    return np.concatenate(parts)


def estimate_filters(pilot_y: Sequence[np.ndarray], pilot_r: Sequence[np.ndarray]
                     ) -> list[DestructiveFilter]:
    if len(pilot_y) != len(pilot_r):
        raise ValueError("pilot and received lists differ in length")
    return [DestructiveFilter(solve_circulant_ls(y, r)[0]) for y, r in zip(pilot_y, pilot_r)]


def pilot_signals(phis: Sequence, z_c_opt, ops: OperatorSet) -> list[np.ndarray]:
    """What each sensor transmits for calibration: ``Phi_j autocorr(G z_c)``."""
    a_c = autocorr_of(np.cumsum(np.asarray(z_c_opt, dtype=float)), ops)
    return [np.asarray(getattr(p, "phi", p)) @ a_c for p in phis]


@dataclass(frozen=True)
class BlockCirculant:
    """Block-diagonal matrix of per-sensor circulant filter matrices."""

    filters: tuple

    @property
    def widths(self) -> list[int]:
        return [f.beta.size for f in self.filters]

    @property
    def blocks(self) -> list[np.ndarray]:
        return [f.circulant for f in self.filters]

    @property
    def shape(self):
        w = sum(self.widths)
        return (w, w)

    def toarray(self) -> np.ndarray:
        return scipy.linalg.block_diag(*self.blocks)

    def matvec(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.concatenate([
            circular_convolve(y[lo:hi], f.beta)
            for f, (lo, hi) in zip(self.filters, sensor_offsets(self.widths))
        ])

    def rmatvec(self, v) -> np.ndarray:
        # transpose of a circulant is the circulant of the time-reversed filter
        v = np.asarray(v, dtype=float)
        return np.concatenate([
            circular_convolve(v[lo:hi], np.roll(f.beta[::-1], 1))
            for f, (lo, hi) in zip(self.filters, sensor_offsets(self.widths))
        ])

    def as_operator(self) -> LinearOperator:
        return LinearOperator(self.shape, matvec=self.matvec, rmatvec=self.rmatvec,
                              dtype=float)


def build_bbar(filters: Sequence[DestructiveFilter]) -> BlockCirculant:
    if len(filters) < 1:
        raise ValueError("need at least one filter")
    return BlockCirculant(tuple(filters))


def channel_aware_operator(sys: StackedSystem, bbar: BlockCirculant) -> StackedSystem:
    """System whose blocks are ``B_j Phi_j D``, i.e. ``r = Bbar Psi z``.

    The returned system keeps the received vector ``r``; its ``psi_operator()``
    is the channel-aware linear operator and its ``h_block`` the modified H.
    """
    if bbar.widths != sys.widths:
        raise ValueError(f"filter lengths {bbar.widths} do not match sensors {sys.widths}")
    blocks = []
    for blk, circ in zip(sys.blocks, bbar.blocks):
        b = circ @ blk
        b.setflags(write=False)
        blocks.append(b)
    return StackedSystem(tuple(blocks), sys.r, sys.sensor_offsets)
