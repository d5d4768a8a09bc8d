import configparser
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcsense import harness
from dcsense.harness import (CSV_HEADER, ConfigError, GridConfig, config_from_parser,
                             config_to_ini, emit_csv, load_config, metrics, partition_grid,
                             read_csv, run_experiment)
from dcsense.reconstruction import ReconReport
from dcsense.solvers import LambdaRule, SolverConfig


def small(**kw):
    base = dict(m=2, j_per_gos=4, n=16, k_common=2, k_inn=1, rate_sweep=(0.5,),
                sigma_beta_sweep=(0.0, 0.2), trials=2, seed=1, timing=False)
    base.update(kw)
    return GridConfig(**base)


def fake_report(psds):
    return ReconReport("x", np.asarray(psds, dtype=float), {}, None, 0.0, ())


def test_partition_tiles():
    groups = partition_grid(4, 4)
    assert groups[0] == [0, 1, 4, 5] and groups[3] == [10, 11, 14, 15]
    assert sorted(i for g in groups for i in g) == list(range(16))
    assert len(partition_grid(12, 4)) == 36


def test_partition_chunks():
    assert partition_grid(3, 3) == [[0, 1, 2], [3, 4, 5], [6, 7, 8]]
    with pytest.raises(ConfigError):
        partition_grid(3, 4)


@pytest.mark.parametrize("kw", [
    dict(m=3, j_per_gos=4), dict(rate_sweep=(0.0,)), dict(rate_sweep=(1.5,)),
    dict(sigma_beta_sweep=(-0.1,)), dict(trials=0), dict(hold_rounds=0),
    dict(methods=("magic",)), dict(noise_sigma=-1.0),
])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        small(**kw)


def test_metrics_oracle():
    truth = np.array([[1.0, 1.0, 3.0, 3.0]])
    est = np.array([[1.0, 1.05, 3.0, 2.0]])
    m = metrics(truth, fake_report(est))
    assert m["mse"][0] == pytest.approx((0.05 ** 2 + 1.0) / 4)
    # true edges at 0, 2 (min 1.0 -> threshold 0.1); est edges at 0, 2, 3
    # (the 0.05 bump and its drop are below threshold)
    assert m["support_f1"][0] == pytest.approx(2 * 2 / (2 + 3))


def test_metrics_empty_supports():
    m = metrics(np.zeros((1, 4)), fake_report(np.zeros((1, 4))))
    assert m["support_f1"][0] == 1.0 and m["mse"][0] == 0.0
    with pytest.raises(ValueError):
        metrics(np.zeros((2, 4)), fake_report(np.zeros((1, 4))))


def test_run_and_csv(tmp_path):
    cfg = small()
    res = run_experiment(cfg)
    assert len(res.rows) == len(cfg.methods) * 1 * 2 * 2
    path = tmp_path / "out.csv"
    emit_csv(res, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    rows = read_csv(path)
    keys = [(r["method"], r["rho"], r["sigma_beta"], r["trial"]) for r in rows]
    assert keys == sorted(keys)
    assert all(math.isnan(r["mean_time_s"]) for r in rows)
    assert all(0 <= r["support_f1"] <= 1 and r["mean_mse"] >= 0 for r in rows)
    assert set(res.aggregates()) == {(m, 0.5, s) for m in cfg.methods for s in (0.0, 0.2)}


def test_same_seed_same_bytes_and_seed_matters(tmp_path):
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    emit_csv(run_experiment(small()), a)
    emit_csv(run_experiment(small()), b)
    emit_csv(run_experiment(small(seed=2)), c)
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()


def test_timing_does_not_change_estimates():
    off = run_experiment(small(trials=1))
    on = run_experiment(small(trials=1, timing=True, timing_repeats=2))
    for x, y in zip(off.rows, on.rows):
        assert {k: v for k, v in x.items() if k != "mean_time_s"} == \
               {k: v for k, v in y.items() if k != "mean_time_s"}
        assert y["mean_time_s"] > 0


def test_workers_match_serial(tmp_path):
    cfg = small(m=4, trials=1, sigma_beta_sweep=(0.1,))
    emit_csv(run_experiment(cfg), tmp_path / "serial.csv")
    emit_csv(run_experiment(GridConfig(**{**cfg.__dict__, "workers": 2})),
             tmp_path / "pool.csv")
    assert (tmp_path / "serial.csv").read_bytes() == (tmp_path / "pool.csv").read_bytes()


def test_methods_share_measurements(monkeypatch):
    seen = {}

    def spy(name, fn):
        def wrapped(*args, **kw):
            rep = fn(*args, **kw)
            r = np.concatenate(args[0]) if name == "individual" else args[0].r
            seen.setdefault(name, []).append(np.array(r))
            return rep
        return wrapped

    monkeypatch.setattr(harness, "recon_individual",
                        spy("individual", harness.recon_individual))
    monkeypatch.setattr(harness, "recon_jsm", spy("jsm", harness.recon_jsm))
    monkeypatch.setattr(harness, "recon_innovation",
                        spy("innovation", harness.recon_innovation))
    run_experiment(small(methods=("individual", "jsm", "innovation_eq10")))
    assert len(seen["jsm"]) == 4
    for a, b, c in zip(seen["individual"], seen["jsm"], seen["innovation"]):
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(b, c)


def test_filters_estimated_once_per_hold_window(monkeypatch):
    calls = []
    orig = harness._estimate_channel

    def counting(*args):
        calls.append(1)
        return orig(*args)

    monkeypatch.setattr(harness, "_estimate_channel", counting)
    run_experiment(small(trials=4, hold_rounds=2, methods=("innovation_channel_aware",)))
    # 1 group x 2 windows x 1 rate x 2 sigma_beta
    assert len(calls) == 4


def test_zero_common_falls_back_to_ideal_links(caplog):
    cfg = small(k_common=0, trials=1, methods=("innovation_eq10", "innovation_channel_aware"),
                sigma_beta_sweep=(0.0,), noise_sigma=0.0)
    with caplog.at_level(logging.WARNING, logger="dcsense.harness"):
        res = run_experiment(cfg)
    assert "zero common component" in caplog.text
    by_method = {r["method"]: r["mean_mse"] for r in res.rows}
    assert by_method["innovation_eq10"] == by_method["innovation_channel_aware"]


def test_empty_sweep():
    assert run_experiment(small(rate_sweep=())).rows == ()


@pytest.mark.slow
def test_error_falls_with_rate():
    cfg = small(n=32, rate_sweep=(0.25, 0.5, 0.75), sigma_beta_sweep=(0.0,), trials=3,
                noise_sigma=0.0, methods=("individual", "innovation_eq10"))
    agg = run_experiment(cfg).aggregates()
    for method in cfg.methods:
        mse = [agg[method, rho, 0.0]["mean_mse"] for rho in cfg.rate_sweep]
        # once the error hits the lambda-bias floor it can wobble slightly
        assert mse[0] > mse[2]
        assert all(b <= a + 1e-4 for a, b in zip(mse, mse[1:]))


def test_config_file(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[grid]\nm = 4\nrate_sweep = 0.25, 0.5\n[solver]\nlambda_rule = fixed:1e-3\n"
                    "max_iter = 50\n[channel]\nsigma_beta = 0 0.3\nseed = 9\n"
                    "[run]\nmethods = jsm, individual\ntiming = no\n")
    cfg = load_config(path, seed=5)
    assert cfg.m == 4 and cfg.rate_sweep == (0.25, 0.5) and cfg.seed == 5
    assert cfg.lambda_rule == LambdaRule("fixed", 1e-3) and cfg.solver.max_iter == 50
    assert cfg.sigma_beta_sweep == (0.0, 0.3) and cfg.channel_seed == 9
    assert cfg.methods == ("jsm", "individual") and not cfg.timing


@pytest.mark.parametrize("text,msg", [
    ("[grids]\nm = 4\n", "section"),
    ("[grid]\nmm = 4\n", "unknown keys"),
    ("[grid]\nm = four\n", "invalid literal"),
    ("[run]\nmethods = telepathy\n", "unknown methods"),
    ("[grid]\nm = 3\n", "divisible"),
    ("m = 3\n", "malformed"),
])
def test_config_errors(tmp_path, text, msg):
    path = tmp_path / "c.ini"
    path.write_text(text)
    with pytest.raises(ConfigError, match=msg):
        load_config(path)


def test_missing_config(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.ini")


def test_shipped_config_loads():
    from pathlib import Path
    cfg = load_config(Path(__file__).parent.parent / "configs" / "grid12.ini")
    assert (cfg.m, cfg.j_per_gos, cfg.n, cfg.n_gos) == (12, 4, 64, 36)


@settings(max_examples=30, deadline=None)
@given(m=st.sampled_from([2, 4, 6]), n=st.sampled_from([16, 32]),
       rates=st.lists(st.floats(0.01, 1.0), min_size=1, max_size=4),
       noise=st.floats(0, 1), lam=st.floats(1e-9, 1.0), tol=st.floats(1e-15, 1e-3),
       pilot=st.one_of(st.none(), st.floats(0, 1)), timing=st.booleans(),
       methods=st.lists(st.sampled_from(harness.METHODS), min_size=1, unique=True))
def test_config_round_trip(m, n, rates, noise, lam, tol, pilot, timing, methods):
    cfg = GridConfig(m=m, n=n, rate_sweep=tuple(rates), noise_sigma=noise,
                     lambda_rule=LambdaRule("fixed", lam), solver=SolverConfig(tol=tol),
                     pilot_noise_sigma=pilot, timing=timing, methods=tuple(methods))
    parser = configparser.ConfigParser()
    parser.read_string(config_to_ini(cfg))
    assert config_from_parser(parser) == cfg


def test_metrics_examples():
    s = np.array([[1.0, 1.0, 0.0, 0.0]])
    m = metrics(s, fake_report(s))
    assert m["mse"][0] == 0 and m["support_f1"][0] == 1
    m = metrics(s, fake_report(np.zeros((1, 4))))
    assert m["mse"][0] == pytest.approx(0.5) and m["support_f1"][0] == 0
    m = metrics(s, fake_report([[1.0, 0.0, 0.0, 0.0]]))
    assert m["mse"][0] == pytest.approx(0.25)


def test_empty_sweep_writes_header_only(tmp_path):
    path = tmp_path / "e.csv"
    emit_csv(run_experiment(small(sigma_beta_sweep=())), path)
    assert path.read_text() == ",".join(CSV_HEADER) + "\n"


def test_one_group_row_count():
    cfg = small(n=32, rate_sweep=(0.25, 0.5), sigma_beta_sweep=(0.0, 0.1, 0.2), trials=1)
    assert cfg.n_gos == 1
    assert len(run_experiment(cfg).rows) == len(cfg.methods) * 2 * 3


@pytest.mark.slow
def test_full_rate_noiseless_is_exact():
    cfg = small(rate_sweep=(1.0,), sigma_beta_sweep=(0.0,), noise_sigma=0.0, trials=1,
                methods=harness.METHODS, lambda_rule=LambdaRule("fixed", 1e-8),
                solver=SolverConfig(tol=1e-14, max_iter=100000))
    for row in run_experiment(cfg).rows:
        assert row["mean_mse"] < 1e-6, row
