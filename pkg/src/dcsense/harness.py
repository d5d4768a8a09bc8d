"""End-to-end experiments over an M x M sensor grid split into groups.

One work unit is a (group, hold window) pair. Within a window the channel
filters stay fixed and the fusion center reuses the filters it estimated
from the first round's pilot. Every method in a (trial, rate, sigma_beta)
cell sees the same measurements and channel.
"""
from __future__ import annotations

import configparser
import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .channel import (ChannelRealization, DestructiveFilter, apply_channel,
                      estimate_filters, pilot_signals, random_filters)
from .common import common_eq9_closed, common_eq10_closed
from .jsm import assemble_stacked, draw_sensing_matrix, measure
from .operators import EDGE_EPS, build_operators
from .reconstruction import (ReconReport, recon_individual, recon_innovation,
                             recon_innovation_channel_aware, recon_jsm)
from .scenario import GenerationError, GroupScenario, generate_group
from .solvers import LambdaRule, SolverConfig, UnidentifiableFilterError

logger = logging.getLogger(__name__)

METHODS = ("individual", "jsm", "innovation_eq9", "innovation_eq10",
           "innovation_truth", "innovation_channel_aware")
DEFAULT_METHODS = ("individual", "jsm", "innovation_eq9", "innovation_eq10",
                   "innovation_channel_aware")
CSV_HEADER = ("method", "rho", "sigma_beta", "trial", "mean_mse", "mean_time_s", "support_f1")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GridConfig:
    m: int = 12
    j_per_gos: int = 4
    n: int = 64
    k_common: int = 6
    k_inn: int = 1
    rate_sweep: tuple = (0.125, 0.25, 0.375, 0.5)
    sigma_beta_sweep: tuple = (0.0, 0.1, 0.2, 0.4)
    noise_sigma: float = 1e-3
    trials: int = 1
    seed: int = 0
    amplitude_range: tuple = (0.5, 2.0)
    smoothing_len: int = 3
    ensemble: str = "gaussian"
    max_tries: int = 1000
    pilot_noise_sigma: float | None = None
    hold_rounds: int = 100
    channel_seed: int = 0
    lambda_rule: LambdaRule = field(default_factory=LambdaRule)
    solver: SolverConfig = field(default_factory=SolverConfig)
    methods: tuple = DEFAULT_METHODS
    timing: bool = True
    timing_repeats: int = 3
    workers: int = 1

    def __post_init__(self):
        if self.m < 1 or self.j_per_gos < 1:
            raise ConfigError("m and j_per_gos must be positive")
        if (self.m * self.m) % self.j_per_gos:
            raise ConfigError(f"M^2 = {self.m ** 2} is not divisible by J = {self.j_per_gos}")
        if any(not 0 < r <= 1 for r in self.rate_sweep):
            raise ConfigError(f"every sensing rate must lie in (0, 1], got {self.rate_sweep}")
        if any(s < 0 for s in self.sigma_beta_sweep):
            raise ConfigError("sigma_beta values must be nonnegative")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if min(self.hold_rounds, self.max_tries, self.timing_repeats, self.workers) < 1:
            raise ConfigError("hold_rounds, max_tries, timing_repeats and workers must be >= 1")
        if self.noise_sigma < 0 or (self.pilot_noise_sigma or 0) < 0:
            raise ConfigError("noise levels must be nonnegative")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")

    @property
    def n_gos(self) -> int:
        return self.m * self.m // self.j_per_gos

    @property
    def pilot_sigma(self) -> float:
        return self.noise_sigma if self.pilot_noise_sigma is None else self.pilot_noise_sigma

    def width(self, rho: float) -> int:
        return max(1, int(round(rho * self.n)))


def partition_grid(m: int, j: int) -> list[list[int]]:
    """Sensor indices (row-major on the M x M grid) of each group.

    J = 4 on an even grid uses 2 x 2 tiles; anything else takes contiguous
    row-major chunks.
    """
    if (m * m) % j:
        raise ConfigError(f"M^2 = {m * m} is not divisible by J = {j}")
    if j == 4 and m % 2 == 0:
        return [[r * m + c, r * m + c + 1, (r + 1) * m + c, (r + 1) * m + c + 1]
                for r in range(0, m, 2) for c in range(0, m, 2)]
    idx = list(range(m * m))
    return [idx[i:i + j] for i in range(0, m * m, j)]


@dataclass(frozen=True)
class ExperimentResult:
    rows: tuple  # of dicts keyed by CSV_HEADER
    config: GridConfig | None = None

    def aggregates(self) -> dict:
        """Trial means per (method, rho, sigma_beta)."""
        groups: dict = {}
        for row in self.rows:
            groups.setdefault((row["method"], row["rho"], row["sigma_beta"]), []).append(row)
        out = {}
        for key, rows in sorted(groups.items()):
            out[key] = {
                col: float(np.mean([r[col] for r in rows]))
                for col in ("mean_mse", "mean_time_s", "support_f1")
            }
        return out


def _seed(*key) -> int:
    return int(np.random.SeedSequence(list(key)).generate_state(1)[0])


def metrics(truth: GroupScenario | np.ndarray, report: ReconReport) -> dict:
    """Per-sensor MSE and edge-support F1 against ground truth.

    The estimated support keeps edges above 0.1 times the smallest nonzero
    true edge of that sensor.
    """
    psds = truth.psds if isinstance(truth, GroupScenario) else np.atleast_2d(truth)
    est = np.atleast_2d(report.psd_estimates)
    if est.shape != psds.shape:
        raise ValueError(f"estimate shape {est.shape} does not match truth {psds.shape}")
    n = psds.shape[1]
    mse = np.sum((est - psds) ** 2, axis=1) / n
    true_edges = np.diff(psds, axis=1, prepend=0.0)
    est_edges = np.diff(est, axis=1, prepend=0.0)
    f1 = np.empty(len(psds))
    for jj, (te, ee) in enumerate(zip(true_edges, est_edges)):
        true_supp = np.abs(te) > EDGE_EPS
        thresh = 0.1 * np.abs(te[true_supp]).min() if true_supp.any() else EDGE_EPS
        est_supp = np.abs(ee) > thresh
        tp = np.count_nonzero(true_supp & est_supp)
        denom = true_supp.sum() + est_supp.sum()
        f1[jj] = 1.0 if denom == 0 else 2.0 * tp / denom
    return {"mse": mse, "support_f1": f1}


def _estimate_channel(phis, z_c, filters, ops, cfg, seed):
    """Pilot phase: sensors send ``Phi_j autocorr(G z_c)``, the FC inverts."""
    widths = [f.beta.size for f in filters]
    if not np.any(z_c):
        logger.warning("zero common component: no pilot, assuming ideal links")
        return [DestructiveFilter.impulse(w) for w in widths]
    y_c = pilot_signals(phis, z_c, ops)
    r_c = apply_channel(y_c, ChannelRealization(tuple(filters), cfg.pilot_sigma), seed)
    offsets = np.cumsum([0] + widths)
    try:
        return estimate_filters(y_c, [r_c[a:b] for a, b in zip(offsets[:-1], offsets[1:])])
    except UnidentifiableFilterError:
        logger.warning("pilot has an all-zero spectrum; assuming ideal links")
        return [DestructiveFilter.impulse(w) for w in widths]


def _run_unit(cfg: GridConfig, gos: int, window: int) -> list[tuple]:
    """All trials of one hold window for one group.

    Returns ``(trial, rho_idx, sigma_idx, method, mean_mse, time_s, mean_f1)``.
    """
    ops = build_operators(cfg.n, cfg.smoothing_len)
    first = window * cfg.hold_rounds
    trials = range(first, min(cfg.trials, first + cfg.hold_rounds))
    repeats = cfg.timing_repeats if cfg.timing else 1
    kw = dict(rule=cfg.lambda_rule, cfg=cfg.solver, repeats=repeats)
    out = []
    estimated: dict = {}

    for trial in trials:
        try:
            sc = generate_group(cfg.n, cfg.j_per_gos, cfg.k_common, cfg.k_inn,
                                cfg.amplitude_range, _seed(cfg.seed, 1, trial, gos), ops=ops,
                                max_tries=cfg.max_tries)
        except GenerationError as exc:
            raise GenerationError(f"GoS {gos}, trial {trial}: {exc}") from None
        # full-rate calibration: the FC knows every PSD once per scenario
        z_c = {
            "innovation_eq9": common_eq9_closed(sc.psds, ops).z_c_opt,
            "innovation_eq10": common_eq10_closed(sc.psds, ops).z_c_opt,
            "innovation_truth": np.asarray(sc.z_common),
        }

        for ri, rho in enumerate(cfg.rate_sweep):
            w = cfg.width(rho)
            phis = [draw_sensing_matrix(w, cfg.n, cfg.ensemble,
                                        _seed(cfg.seed, 2, trial, gos, ri, jj))
                    for jj in range(cfg.j_per_gos)]
            ys = measure(sc, phis, ops)

            for si, sigma_beta in enumerate(cfg.sigma_beta_sweep):
                filters = random_filters([w] * cfg.j_per_gos, sigma_beta,
                                         _seed(cfg.channel_seed, 3, window, gos, ri, si))
                if (ri, si) not in estimated:
                    estimated[ri, si] = _estimate_channel(
                        phis, z_c["innovation_eq10"], filters, ops, cfg,
                        _seed(cfg.channel_seed, 4, window, gos, ri, si))
                ch = ChannelRealization(tuple(filters), cfg.noise_sigma)
                r = apply_channel(ys, ch, _seed(cfg.channel_seed, 5, trial, gos, ri, si))
                sys = assemble_stacked(phis, ops, r)

                for method in cfg.methods:
                    if method == "individual":
                        rep = recon_individual(sys.split_r(), phis, ops, **kw)
                    elif method == "jsm":
                        rep = recon_jsm(sys, ops, **kw)
                    elif method == "innovation_channel_aware":
                        rep = recon_innovation_channel_aware(
                            sys, z_c["innovation_eq10"], estimated[ri, si], ops, **kw)
                    else:
                        rep = recon_innovation(sys, z_c[method], ops, **kw)
                    m = metrics(sc, rep)
                    t = rep.wall_time if cfg.timing else math.nan
                    out.append((trial, ri, si, method, float(np.mean(m["mse"])), t,
                                float(np.mean(m["support_f1"]))))
    return out


def run_experiment(cfg: GridConfig) -> ExperimentResult:
    n_windows = -(-cfg.trials // cfg.hold_rounds)
    units = [(g, wdw) for g in range(cfg.n_gos) for wdw in range(n_windows)]
    if not cfg.rate_sweep or not cfg.sigma_beta_sweep or not cfg.methods:
        return ExperimentResult((), cfg)

    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_run_unit, cfg, g, wdw) for g, wdw in units]
            results = [f.result() for f in futures]
    else:
        results = [_run_unit(cfg, g, wdw) for g, wdw in units]

    cells: dict = {}
    for unit in results:
        for trial, ri, si, method, mse, t, f1 in unit:
            cells.setdefault((method, ri, si, trial), []).append((mse, t, f1))
    rows = []
    for (method, ri, si, trial), vals in cells.items():
        vals = np.array(vals)
        rows.append({
            "method": method,
            "rho": float(cfg.rate_sweep[ri]),
            "sigma_beta": float(cfg.sigma_beta_sweep[si]),
            "trial": trial,
            "mean_mse": float(vals[:, 0].mean()),
            "mean_time_s": float(vals[:, 1].mean()),
            "support_f1": float(vals[:, 2].mean()),
        })
    rows.sort(key=lambda r: (r["method"], r["rho"], r["sigma_beta"], r["trial"]))
    return ExperimentResult(tuple(rows), cfg)


def _fmt(v) -> str:
    return f"{v:.9g}" if isinstance(v, float) else str(v)


def emit_csv(res: ExperimentResult, path) -> None:
    rows = sorted(res.rows, key=lambda r: (r["method"], r["rho"], r["sigma_beta"], r["trial"]))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in CSV_HEADER])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for key in ("rho", "sigma_beta", "mean_mse", "mean_time_s", "support_f1"):
            row[key] = float(row[key])
        row["trial"] = int(row["trial"])
    return rows


# --- config files ---------------------------------------------------------

def _floats(text: str) -> tuple:
    text = text.strip()
    return tuple(float(x) for x in text.replace(",", " ").split()) if text else ()


def load_config(path, **overrides) -> GridConfig:
    """Read an INI file with ``[grid]``, ``[solver]``, ``[channel]`` and ``[run]``.

    Missing keys keep their defaults; keyword overrides win over the file.
    """
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    return config_from_parser(parser, **overrides)


def config_from_parser(parser: configparser.ConfigParser, **overrides) -> GridConfig:
    known = {
        "grid": {"m", "j_per_gos", "n", "k_common", "k_inn", "rate_sweep", "trials", "seed",
                 "amplitude_range", "smoothing_len", "ensemble", "max_tries"},
        "solver": {"lambda_rule", "tol", "max_iter", "feas_tol", "obj_tol"},
        "channel": {"sigma_beta", "noise_sigma", "pilot_noise_sigma", "hold_rounds", "seed"},
        "run": {"methods", "timing", "timing_repeats", "workers"},
    }
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown config section [{section}]")
        extra = set(parser[section]) - known[section]
        if extra:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")

    kw: dict = {}
    try:
        if parser.has_section("grid"):
            g = parser["grid"]
            for key in ("m", "j_per_gos", "n", "k_common", "k_inn", "trials", "seed",
                        "smoothing_len", "max_tries"):
                if key in g:
                    kw[key] = g.getint(key)
            if "rate_sweep" in g:
                kw["rate_sweep"] = _floats(g["rate_sweep"])
            if "amplitude_range" in g:
                kw["amplitude_range"] = _floats(g["amplitude_range"])
            if "ensemble" in g:
                kw["ensemble"] = g["ensemble"].strip()
        if parser.has_section("channel"):
            c = parser["channel"]
            if "sigma_beta" in c:
                kw["sigma_beta_sweep"] = _floats(c["sigma_beta"])
            if "noise_sigma" in c:
                kw["noise_sigma"] = c.getfloat("noise_sigma")
            if "pilot_noise_sigma" in c:
                kw["pilot_noise_sigma"] = c.getfloat("pilot_noise_sigma")
            if "hold_rounds" in c:
                kw["hold_rounds"] = c.getint("hold_rounds")
            if "seed" in c:
                kw["channel_seed"] = c.getint("seed")
        if parser.has_section("solver"):
            s = parser["solver"]
            if "lambda_rule" in s:
                kw["lambda_rule"] = LambdaRule.parse(s["lambda_rule"])
            solver = {k: s.getfloat(k) for k in ("tol", "feas_tol", "obj_tol") if k in s}
            if "max_iter" in s:
                solver["max_iter"] = s.getint("max_iter")
            kw["solver"] = replace(SolverConfig(), **solver)
        if parser.has_section("run"):
            r = parser["run"]
            if "methods" in r:
                kw["methods"] = parse_methods(r["methods"])
            if "timing" in r:
                kw["timing"] = r.getboolean("timing")
            for key in ("timing_repeats", "workers"):
                if key in r:
                    kw[key] = r.getint(key)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return GridConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def parse_methods(text: str) -> tuple:
    methods = tuple(m.strip() for m in text.replace(",", " ").split() if m.strip())
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ConfigError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
    return methods


def config_to_ini(cfg: GridConfig) -> str:
    def seq(v: Sequence) -> str:
        return ", ".join(repr(float(x)) for x in v)

    lines = [
        "[grid]",
        f"m = {cfg.m}",
        f"j_per_gos = {cfg.j_per_gos}",
        f"n = {cfg.n}",
        f"k_common = {cfg.k_common}",
        f"k_inn = {cfg.k_inn}",
        f"rate_sweep = {seq(cfg.rate_sweep)}",
        f"trials = {cfg.trials}",
        f"seed = {cfg.seed}",
        f"amplitude_range = {seq(cfg.amplitude_range)}",
        f"smoothing_len = {cfg.smoothing_len}",
        f"ensemble = {cfg.ensemble}",
        f"max_tries = {cfg.max_tries}",
        "",
        "[solver]",
        f"lambda_rule = {cfg.lambda_rule.kind}:{cfg.lambda_rule.value!r}",
        f"tol = {cfg.solver.tol!r}",
        f"max_iter = {cfg.solver.max_iter}",
        f"feas_tol = {cfg.solver.feas_tol!r}",
        f"obj_tol = {cfg.solver.obj_tol!r}",
        "",
        "[channel]",
        f"sigma_beta = {seq(cfg.sigma_beta_sweep)}",
        f"noise_sigma = {cfg.noise_sigma!r}",
    ]
    if cfg.pilot_noise_sigma is not None:
        lines.append(f"pilot_noise_sigma = {cfg.pilot_noise_sigma!r}")
    lines += [
        f"hold_rounds = {cfg.hold_rounds}",
        f"seed = {cfg.channel_seed}",
        "",
        "[run]",
        f"methods = {', '.join(cfg.methods)}",
        f"timing = {'true' if cfg.timing else 'false'}",
        f"timing_repeats = {cfg.timing_repeats}",
        f"workers = {cfg.workers}",
    ]
    return "\n".join(lines) + "\n"
