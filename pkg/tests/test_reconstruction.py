import numpy as np
import pytest

from dcsense.channel import ChannelRealization, DestructiveFilter, apply_channel, random_filters
from dcsense.jsm import assemble_stacked, draw_sensing_matrix, measure
from dcsense.operators import build_operators
from dcsense.reconstruction import (recon_individual, recon_innovation,
                                    recon_innovation_channel_aware, recon_jsm)
from dcsense.scenario import generate_group
from dcsense.solvers import LambdaRule, SolverConfig

TIGHT = SolverConfig(tol=1e-14, max_iter=50000)
TINY = LambdaRule("fixed", 1e-8)


def _group(n=16, j=3, rate=0.5, seed=0):
    ops = build_operators(n, 3)
    sc = generate_group(n, j, 2, 1, rng_seed=seed, ops=ops)
    w = int(rate * n)
    phis = [draw_sensing_matrix(w, n, rng_seed=[seed, jj]) for jj in range(j)]
    return ops, sc, phis


def test_individual_exact_at_full_rate():
    ops, sc, phis = _group(rate=1.0)
    rs = measure(sc, phis, ops)
    rep = recon_individual(rs, phis, ops, TINY, TIGHT, truth=sc.psds)
    rel = np.linalg.norm(rep.psd_estimates - sc.psds) / np.linalg.norm(sc.psds)
    assert rel < 1e-6
    assert rep.method == "individual" and rep.per_sensor_mse.shape == (3,)


def test_psds_are_cumsum_of_edges():
    ops, sc, phis = _group()
    sys = assemble_stacked(phis, ops, np.concatenate(measure(sc, phis, ops)))
    rep = recon_jsm(sys, ops, truth=sc.psds)
    z = rep.z_estimates["z_c"][None, :] + rep.z_estimates["z_inn"]
    np.testing.assert_array_equal(rep.psd_estimates, (ops.g @ z.T).T)
    mse = np.sum((rep.psd_estimates - sc.psds) ** 2, axis=1) / 16
    np.testing.assert_allclose(rep.per_sensor_mse, mse)
    assert rep.mean_mse == pytest.approx(mse.mean())


def test_innovation_with_true_common_is_accurate():
    ops, sc, phis = _group(n=32, rate=0.5, seed=3)
    sys = assemble_stacked(phis, ops, np.concatenate(measure(sc, phis, ops)))
    rep = recon_innovation(sys, sc.z_common, ops, truth=sc.psds)
    assert rep.mean_mse < 1e-2
    assert not rep.flags


def test_zero_common_innovation_equals_individual():
    ops, sc, phis = _group(seed=4)
    rs = measure(sc, phis, ops)
    sys = assemble_stacked(phis, ops, np.concatenate(rs))
    inn = recon_innovation(sys, np.zeros(16), ops, truth=sc.psds)
    ind = recon_individual(rs, phis, ops, truth=sc.psds)
    np.testing.assert_allclose(inn.psd_estimates, ind.psd_estimates, atol=1e-12)


def test_spurious_common_edge_is_flagged():
    ops, sc, phis = _group(n=32, rate=0.5, seed=5)
    sys = assemble_stacked(phis, ops, np.concatenate(measure(sc, phis, ops)))
    delta = np.zeros(32)
    delta[np.flatnonzero(sc.z_common == 0)[0]] = 1.0
    # lambda above ||H^T r_inn||_inf keeps every innovation at zero
    rep = recon_innovation(sys, sc.z_common + delta, ops, LambdaRule("fixed", 1e6),
                           truth=sc.psds)
    assert not rep.z_estimates["z_inn"].any()
    expect = np.sum((np.cumsum(delta)[None, :] - np.cumsum(sc.z_innovations, axis=1)) ** 2,
                    axis=1) / 32
    np.testing.assert_allclose(rep.per_sensor_mse, expect, rtol=1e-12)
    assert any("large residual" in f for f in rep.flags)


def test_channel_aware_with_identity_is_bitwise_innovation():
    ops, sc, phis = _group(seed=6)
    sys = assemble_stacked(phis, ops, np.concatenate(measure(sc, phis, ops)))
    ident = [DestructiveFilter.impulse(p.shape[0]) for p in phis]
    a = recon_innovation(sys, sc.z_common, ops, truth=sc.psds)
    b = recon_innovation_channel_aware(sys, sc.z_common, ident, ops, truth=sc.psds)
    np.testing.assert_array_equal(a.psd_estimates, b.psd_estimates)
    assert b.method == "innovation_channel_aware"


def test_channel_aware_undoes_filter():
    ops, sc, phis = _group(n=32, rate=0.5, seed=7)
    filters = random_filters([p.shape[0] for p in phis], 0.4, rng_seed=1)
    r = apply_channel(measure(sc, phis, ops), ChannelRealization(tuple(filters)))
    sys = assemble_stacked(phis, ops, r)
    aware = recon_innovation_channel_aware(sys, sc.z_common, filters, ops, truth=sc.psds)
    blind = recon_innovation(sys, sc.z_common, ops, truth=sc.psds)
    assert aware.mean_mse < 1e-2 < blind.mean_mse


def test_non_convergence_reported():
    ops, sc, phis = _group()
    rep = recon_individual(measure(sc, phis, ops), phis, ops, cfg=SolverConfig(max_iter=2))
    assert not rep.converged
    assert any("did not converge" in f for f in rep.flags)


def test_no_truth_means_no_mse():
    ops, sc, phis = _group()
    rep = recon_individual(measure(sc, phis, ops), phis, ops)
    assert rep.per_sensor_mse is None


def test_input_validation():
    ops, sc, phis = _group()
    rs = measure(sc, phis, ops)
    with pytest.raises(ValueError):
        recon_individual(rs[:2], phis, ops)
    with pytest.raises(ValueError):
        recon_individual([np.ones(3)] * 3, phis, ops)
    with pytest.raises(ValueError, match="truth shape"):
        recon_individual(rs, phis, ops, truth=np.zeros((2, 16)))


def test_repeats_time_the_same_solve():
    ops, sc, phis = _group()
    rs = measure(sc, phis, ops)
    a = recon_individual(rs, phis, ops, repeats=3)
    b = recon_individual(rs, phis, ops, repeats=1)
    np.testing.assert_array_equal(a.psd_estimates, b.psd_estimates)
    assert a.wall_time > 0


def test_zero_measurements_give_zero_psds():
    ops, sc, phis = _group()
    rs = [np.zeros(p.shape[0]) for p in phis]
    sys = assemble_stacked(phis, ops, np.concatenate(rs))
    for rep in (recon_individual(rs, phis, ops), recon_jsm(sys, ops),
                recon_innovation(sys, np.zeros(16), ops)):
        assert not rep.psd_estimates.any()


def test_single_sensor_joint_matches_individual():
    ops, sc, phis = _group(n=32, j=1, rate=0.5, seed=9)
    rs = measure(sc, phis, ops)
    sys = assemble_stacked(phis, ops, np.concatenate(rs))
    rule = LambdaRule("fixed", 1e-4)
    joint = recon_jsm(sys, ops, rule, TIGHT)
    ind = recon_individual(rs, phis, ops, rule, TIGHT)
    rel = np.linalg.norm(joint.psd_estimates - ind.psd_estimates) / np.linalg.norm(
        ind.psd_estimates)
    assert rel < 0.05


@pytest.mark.slow
def test_joint_beats_individual_on_shared_scenarios():
    ops = build_operators(64, 3)
    better = 0
    for t in range(100):
        sc = generate_group(64, 4, 6, 1, rng_seed=[21, t], ops=ops)
        phis = [draw_sensing_matrix(20, 64, rng_seed=[22, t, j]) for j in range(4)]
        rs = measure(sc, phis, ops)
        sys = assemble_stacked(phis, ops, np.concatenate(rs))
        better += (recon_jsm(sys, ops, truth=sc.psds).mean_mse
                   < recon_individual(rs, phis, ops, truth=sc.psds).mean_mse)
    assert better >= 80


def test_no_innovation_returns_common():
    ops = build_operators(64, 3)
    sc = generate_group(64, 4, 6, 0, rng_seed=4, ops=ops)
    phis = [draw_sensing_matrix(16, 64, rng_seed=j) for j in range(4)]
    sys = assemble_stacked(phis, ops, np.concatenate(measure(sc, phis, ops)))
    rep = recon_innovation(sys, sc.z_common, ops)
    assert not rep.z_estimates["z_inn"].any()
    np.testing.assert_allclose(rep.psd_estimates[0], ops.g @ sc.z_common, rtol=1e-15, atol=1e-15)


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="unweighted l1 misses weak high-bin innovation edges "
                   "at w=8: measured 62/100 trials (375/400 sensors)")
def test_innovation_support_with_few_measurements():
    ops = build_operators(64, 3)
    hits = 0
    for t in range(100):
        sc = generate_group(64, 4, 6, 1, rng_seed=[31, t], ops=ops)
        phis = [draw_sensing_matrix(8, 64, rng_seed=[32, t, j]) for j in range(4)]
        sys = assemble_stacked(phis, ops, np.concatenate(measure(sc, phis, ops)))
        z_inn = recon_innovation(sys, sc.z_common, ops).z_estimates["z_inn"]
        ok = True
        for est, true in zip(z_inn, sc.z_innovations):
            supp = true != 0
            thresh = 0.1 * np.abs(true[supp]).min()
            ok &= np.array_equal(np.abs(est) > thresh, supp)
        hits += ok
    assert hits >= 95


def test_filter_strength_sweep_with_true_filters():
    ops, sc, phis = _group(n=64, j=4, rate=0.25, seed=13)
    ys = measure(sc, phis, ops)
    base = recon_innovation(assemble_stacked(phis, ops, np.concatenate(ys)), sc.z_common, ops,
                            truth=sc.psds).mean_mse
    blind = []
    for sb in (0.1, 0.3, 0.6):
        filters = random_filters([16] * 4, sb, rng_seed=[14, int(sb * 10)])
        sys = assemble_stacked(phis, ops,
                               apply_channel(ys, ChannelRealization(tuple(filters))))
        aware = recon_innovation_channel_aware(sys, sc.z_common, filters, ops, truth=sc.psds)
        if sb == 0.3:
            assert aware.mean_mse <= 10 * max(base, 1e-12)
        blind.append(recon_innovation(sys, sc.z_common, ops, truth=sc.psds).mean_mse)
    assert blind[0] < blind[1] < blind[2]
    assert blind[2] > 100 * base


def test_estimated_filters_match_true_filters():
    from dcsense.channel import estimate_filters, pilot_signals
    ops, sc, phis = _group(n=64, j=4, rate=0.25, seed=15)
    filters = random_filters([16] * 4, 0.3, rng_seed=16)
    pilots = pilot_signals(phis, sc.z_common, ops)
    pr = apply_channel(pilots, ChannelRealization(tuple(filters)))
    est = estimate_filters(pilots, np.split(pr, 4))
    sys = assemble_stacked(phis, ops, apply_channel(measure(sc, phis, ops),
                                                    ChannelRealization(tuple(filters))))
    a = recon_innovation_channel_aware(sys, sc.z_common, filters, ops, truth=sc.psds)
    b = recon_innovation_channel_aware(sys, sc.z_common, est, ops, truth=sc.psds)
    np.testing.assert_allclose(b.psd_estimates, a.psd_estimates, atol=1e-6)
