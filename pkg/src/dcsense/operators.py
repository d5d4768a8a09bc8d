"""Linear operators linking autocorrelation, PSD and edge-vector domains.

The chain is ``s = W F a`` (smoothing after a real spectral transform),
``z = Gamma s`` (first differences) and ``s = G z`` (cumulative sum), so the
sparsifying dictionary is ``D = (Gamma W F)^-1``.

PSDs, edge vectors and autocorrelations are plain 1-D float arrays of
length ``n``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.linalg

EDGE_EPS = 1e-9


class OperatorError(ValueError):
    """Raised when an operator set cannot be constructed."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class OperatorSet:
    """Matrices for one bin count ``n``.

    Attributes
    ----------
    gamma : (n, n) first-difference matrix, ``z[0] = s[0]``.
    g : (n, n) lower-triangular all-ones matrix, the inverse of ``gamma``.
    w_smooth : (n, n) circulant moving-average smoother.
    f : (n, n) orthonormal DCT-II matrix; the real transform of the
        even-symmetric extension of a length-``n`` sequence.
    d : (n, n) dictionary, ``inv(gamma @ w_smooth @ f)``.
    """

    n: int
    smoothing_len: int
    gamma: np.ndarray
    g: np.ndarray
    w_smooth: np.ndarray
    f: np.ndarray
    d: np.ndarray
    w_column: np.ndarray

    @property
    def d_inv(self) -> np.ndarray:
        return self.gamma @ self.w_smooth @ self.f


def moving_average_column(n: int, smoothing_len: int) -> np.ndarray:
    """First column of the centred circulant moving average of odd length."""
    c = np.zeros(n)
    half = smoothing_len // 2
    for k in range(-half, half + 1):
        c[k % n] += 1.0 / smoothing_len
    return c


def build_operators(n: int, smoothing_len: int = 3) -> OperatorSet:
    if n < 8 or n % 2:
        raise OperatorError(f"bin count must be even and >= 8, got {n}")
    if smoothing_len < 1 or smoothing_len % 2 == 0 or smoothing_len >= n:
        raise OperatorError(
            f"smoothing_len must be odd and in [1, {n}), got {smoothing_len}")

    col = moving_average_column(n, smoothing_len)
    spectrum = np.abs(np.fft.fft(col))
    if spectrum.min() < 1e-10:
        raise OperatorError(
            f"moving average of length {smoothing_len} is singular for n={n} "
            f"(zero DFT coefficient at bin {int(spectrum.argmin())})")

    g = np.tril(np.ones((n, n)))
    gamma = np.eye(n) - np.eye(n, k=-1)
    w = scipy.linalg.circulant(col)
    f = scipy.fft.dct(np.eye(n), type=2, norm="ortho", axis=0)
    # D = F^T W^-1 G since F is orthogonal and G = Gamma^-1
    d = f.T @ scipy.linalg.solve_circulant(col, g)
    return OperatorSet(
        n=n,
        smoothing_len=smoothing_len,
        gamma=_frozen(gamma),
        g=_frozen(g),
        w_smooth=_frozen(w),
        f=_frozen(f),
        d=_frozen(d),
        w_column=_frozen(col),
    )


def _check_len(v: np.ndarray, ops: OperatorSet, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != ops.n:
        raise ValueError(f"{what} has length {v.shape[-1]}, expected {ops.n}")
    return v


def edge_of(s, ops: OperatorSet) -> np.ndarray:
    """Edge vector ``Gamma s``; works row-wise on 2-D input."""
    s = _check_len(s, ops, "PSD")
    return np.diff(s, axis=-1, prepend=0.0)


def psd_of(z, ops: OperatorSet) -> np.ndarray:
    """PSD ``G z``; rejects edge vectors whose running sum goes negative."""
    z = _check_len(z, ops, "edge vector")
    s = np.cumsum(z, axis=-1)
    if np.any(s < -EDGE_EPS):
        raise ValueError("edge vector does not describe a nonnegative PSD")
    return s


def autocorr_of(s, ops: OperatorSet) -> np.ndarray:
    """Autocorrelation ``a = F^T W^-1 s`` such that ``W F a = s``."""
    s = _check_len(s, ops, "PSD")
    return ops.f.T @ scipy.linalg.solve_circulant(ops.w_column, s.T)


def psd_from_autocorr(a, ops: OperatorSet) -> np.ndarray:
    a = _check_len(a, ops, "autocorrelation")
    return (ops.w_smooth @ ops.f @ a.T).T


def sparsity(z, eps: float = EDGE_EPS) -> int:
    return int(np.count_nonzero(np.abs(np.asarray(z)) > eps))
