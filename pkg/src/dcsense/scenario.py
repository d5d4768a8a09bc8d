"""Ground-truth generation for a group of sensors (GoS).

Every sensor in a group sees ``s_j = G (z_c + z_inn_j)``: a sparse common edge
vector shared by the group plus a sparse per-sensor innovation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .operators import OperatorSet, autocorr_of, build_operators

DEFAULT_AMPLITUDES = (0.5, 2.0)


class GenerationError(RuntimeError):
    """Rejection sampling could not produce a nonnegative scenario."""


@dataclass(frozen=True)
class GroupScenario:
    n: int
    j_sensors: int
    seed: int | None
    z_common: np.ndarray
    z_innovations: np.ndarray  # (J, n)
    psds: np.ndarray  # (J, n)
    autocorrs: np.ndarray  # (J, n)
    generator_params: dict = field(default_factory=dict)

    @property
    def s_common(self) -> np.ndarray:
        return np.cumsum(self.z_common)

    @property
    def edges(self) -> np.ndarray:
        """Per-sensor edge vectors ``z_c + z_inn_j``."""
        return self.z_common[None, :] + self.z_innovations

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "j": self.j_sensors,
            "seed": self.seed,
            "z_common": self.z_common.tolist(),
            "z_innovations": self.z_innovations.tolist(),
            "generator_params": dict(self.generator_params),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")


def scenario_from_edges(z_common, z_innovations, ops: OperatorSet,
                        seed: int | None = None,
                        generator_params: dict | None = None) -> GroupScenario:
    z_common = np.asarray(z_common, dtype=float)
    z_innovations = np.atleast_2d(np.asarray(z_innovations, dtype=float))
    if z_common.shape != (ops.n,) or z_innovations.shape[1] != ops.n:
        raise ValueError("edge vectors do not match the operator size")
    psds = np.cumsum(z_common[None, :] + z_innovations, axis=1)
    if np.any(psds < 0):
        raise ValueError("scenario contains a negative PSD")
    for arr in (z_common, z_innovations, psds):
        arr.setflags(write=False)
    autocorrs = autocorr_of(psds, ops).T.copy()
    autocorrs.setflags(write=False)
    return GroupScenario(
        n=ops.n,
        j_sensors=z_innovations.shape[0],
        seed=seed,
        z_common=z_common,
        z_innovations=z_innovations,
        psds=psds,
        autocorrs=autocorrs,
        generator_params=dict(generator_params or {}),
    )


def scenario_from_json(data: dict | str | Path, ops: OperatorSet | None = None
                       ) -> GroupScenario:
    if isinstance(data, (str, Path)):
        data = json.loads(Path(data).read_text())
    params = data.get("generator_params", {})
    if ops is None:
        ops = build_operators(int(data["n"]), int(params.get("smoothing_len", 3)))
    z_inn = np.asarray(data["z_innovations"], dtype=float).reshape(int(data["j"]), int(data["n"]))
    return scenario_from_edges(data["z_common"], z_inn, ops,
                               seed=data.get("seed"), generator_params=params)


def _draw_edges(rng, candidates, k, amplitude_range):
    lo, hi = amplitude_range
    pos = rng.choice(candidates, size=k, replace=False)
    amp = rng.uniform(lo, hi, size=k) * rng.choice([-1.0, 1.0], size=k)
    return pos, amp


def generate_group(n: int, j: int, k_common: int, k_inn: int,
                   amplitude_range=DEFAULT_AMPLITUDES, rng_seed: int | None = 0,
                   *, smoothing_len: int = 3, ops: OperatorSet | None = None,
                   max_tries: int = 1000) -> GroupScenario:
    """Draw one group scenario with exactly ``k_common`` / ``k_inn`` edges.

    Edge positions are uniform; innovation edges avoid the common support.
    Magnitudes are uniform on ``amplitude_range`` with random signs, and each
    component is redrawn until its running sum (the PSD) is nonnegative.
    """
    if j < 1:
        raise ValueError("a group needs at least one sensor")
    if k_common < 0 or k_inn < 0 or 4 * (k_common + k_inn) > n:
        raise ValueError(
            f"k_common + k_inn = {k_common + k_inn} exceeds n/4 = {n / 4:g}")
    lo, hi = amplitude_range
    if not 0 < lo <= hi:
        raise ValueError("amplitude_range must satisfy 0 < lo <= hi")
    if ops is None:
        ops = build_operators(n, smoothing_len)
    elif ops.n != n:
        raise ValueError("operator size does not match n")

    rng = np.random.default_rng(rng_seed)
    all_bins = np.arange(n)

    for _ in range(max_tries):
        pos, amp = _draw_edges(rng, all_bins, k_common, amplitude_range)
        z_c = np.zeros(n)
        z_c[pos] = amp
        s_c = np.cumsum(z_c)
        if s_c.min() >= 0:
            break
    else:
        raise GenerationError(
            f"no nonnegative common PSD after {max_tries} draws "
            f"(k_common={k_common}, amplitude_range={amplitude_range})")

    free = np.setdiff1d(all_bins, pos)
    z_inn = np.zeros((j, n))
    for jj in range(j):
        for _ in range(max_tries):
            p, a = _draw_edges(rng, free, k_inn, amplitude_range)
            zi = np.zeros(n)
            zi[p] = a
            if (s_c + np.cumsum(zi)).min() >= 0:
                z_inn[jj] = zi
                break
        else:
            raise GenerationError(
                f"no nonnegative PSD for sensor {jj} after {max_tries} draws "
                f"(k_inn={k_inn}, amplitude_range={amplitude_range})")

    params = {
        "k_common": k_common,
        "k_inn": k_inn,
        "amplitude_range": [float(lo), float(hi)],
        "smoothing_len": ops.smoothing_len,
    }
    return scenario_from_edges(z_c, z_inn, ops, seed=rng_seed, generator_params=params)
