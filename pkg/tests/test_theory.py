import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cmalab import theory
from cmalab.theory import (
    AscendPracticalWsd, AscendSwa, AscendWsmd, TheoryConfig, UniformSampling, estimate_loss, final_losses,
    fit_scaling, gen_dataset, harmonic_wsd_eta, oracle_moments, practical_t0, practical_wsd_eta, run_sgd,
    run_streams, simulate, strategy_etas, swa_tail, wsmd_eta, wsmd_t0,
)

ALL = [UniformSampling(), UniformSampling("practical_wsd"), AscendPracticalWsd(), AscendWsmd(), AscendSwa()]


def test_dataset_signal_grid():
    data = gen_dataset(4, 1.0, 0)
    assert list(data[:, 0]) == [0, 0.25, 0.5, 0.75]
    assert gen_dataset(37, 2.5, 1)[0, 0] == 0.0


def test_dataset_noise_moments():
    L = 2.0
    noise = gen_dataset(100_000, L, 11)[:, 1]
    assert np.all(np.abs(noise) <= L)
    assert abs(noise.mean()) <= 3 * L / math.sqrt(3 * 100_000)


def test_full_step_lands_on_sample():
    data = np.array([[0.3, -0.7], [0.0, 0.0]])
    traj = run_sgd(data, [0], [1.0], w0=(5.0, 5.0))
    assert list(traj[-1]) == [0.3, -0.7]


def test_rejects_lr_above_one():
    with pytest.raises(ValueError):
        run_sgd(gen_dataset(3, 1.0), "ascend", [0.5, 1.2, 0.5])


def _ascend_closed_form(M, T0, d, w0):
    # unrolled ascending-order recursion with a 1/2 plateau and harmonic tail
    x = lambda j: (j - 1) * d
    return (w0 / (T0 * 2.0 ** (M - T0 + 1))
            + sum(x(j) for j in range(1, T0)) / T0
            + sum(x(j) / 2.0 ** (j - T0 + 1) for j in range(T0, M + 1)) / T0)


@pytest.mark.parametrize("M,T0", [(50, 5), (200, 34), (1000, 100), (1000, 2)])
def test_ascending_signal_matches_closed_form(M, T0):
    L = 1.0
    data = gen_dataset(M, L, 0)
    data[:, 1] = 0.0
    etas = [harmonic_wsd_eta(t, M, T0) for t in range(1, M + 1)]
    w = run_sgd(data, "ascend", etas, w0=(L, 0.0))[-1]
    assert w[0] == pytest.approx(_ascend_closed_form(M, T0, L / M, L), rel=1e-12)
    assert w[1] == 0.0


def test_uniform_constant_signal_mean_tends_to_dataset_mean():
    M = 400
    cfg = TheoryConfig(M, 1.0, UniformSampling("constant", 0.5), 0)
    m = oracle_moments(cfg)
    assert m.mean1 == pytest.approx((M - 1) / M / 2, rel=1e-9)


def test_schedule_endpoints():
    M = 1000
    assert practical_t0(M) == 100
    T0 = practical_t0(M)
    assert practical_wsd_eta(M, M) == pytest.approx(1 / T0)
    assert practical_wsd_eta(M - T0 + 2, M) == 0.5
    assert practical_wsd_eta(M - T0 + 1, M) == 0.5
    assert wsmd_t0(M) == 100
    assert wsmd_eta(10_000, 10_000) == pytest.approx(1 / wsmd_t0(10_000))
    with pytest.raises(ValueError):
        harmonic_wsd_eta(0, M, T0)


def test_strategy_etas_match_scalar_functions():
    cfg = TheoryConfig(300, 1.0, AscendWsmd(), 0)
    assert list(strategy_etas(cfg)) == [wsmd_eta(t, 300) for t in range(1, 301)]
    cfg = TheoryConfig(300, 1.0, AscendPracticalWsd(), 0)
    assert list(strategy_etas(cfg)) == [practical_wsd_eta(t, 300) for t in range(1, 301)]


def test_swa_tail():
    traj = np.array([[5.0, 5.0], [0.0, 0.0], [2.0, 2.0]])
    assert list(swa_tail(traj, 1)) == [2.0, 2.0]
    assert list(swa_tail(traj, 2)) == [1.0, 1.0]
    assert list(swa_tail(np.ones((4, 2)), 3)) == [1.0, 1.0]
    with pytest.raises(ValueError):
        swa_tail(traj, 0)


def test_config_validation():
    with pytest.raises(ValueError):
        TheoryConfig(1)
    with pytest.raises(ValueError):
        TheoryConfig(10, 0.0)
    with pytest.raises(ValueError):
        TheoryConfig(10, 1.0, AscendSwa(eta0=1.5))


def test_fit_scaling():
    Ms = [1e3, 1e4, 1e5]
    assert fit_scaling([(M, M ** (-2 / 3)) for M in Ms]) == pytest.approx(-2 / 3, abs=1e-9)
    assert fit_scaling([(M, 0.3) for M in Ms]) == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(ValueError):
        fit_scaling([(1e3, 1.0), (1e4, 0.0), (1e5, 1.0)])
    with pytest.raises(ValueError):
        fit_scaling([(1e3, 1.0), (1e4, 1.0)])


# -- batched Monte Carlo vs single-run reference -------------------------------

@pytest.mark.parametrize("strategy", ALL, ids=lambda s: repr(s))
def test_batched_runs_equal_single_runs(strategy):
    cfg = TheoryConfig(60, 1.3, strategy, seed=4)
    batched = final_losses(cfg, 7)
    single = [0.5 * float(np.sum(simulate(cfg, g)[1] ** 2)) for g in run_streams(4, 7)]
    assert np.allclose(batched, single, rtol=1e-12, atol=0)


def test_runs_are_reproducible_and_independent():
    cfg = TheoryConfig(80, 1.0, UniformSampling(), seed=9)
    a, b = final_losses(cfg, 50), final_losses(cfg, 50)
    assert np.array_equal(a, b)
    assert len(np.unique(a)) == 50
    # a run's result does not depend on how many runs accompany it
    assert np.array_equal(final_losses(cfg, 10), a[:10])


# -- exact oracle ----------------------------------------------------------------

def test_noise_axis_one_step():
    eta, L = 0.3, 2.0
    cfg = TheoryConfig(2, L, UniformSampling("constant", eta), 0)
    # restrict to one step by using the coefficient helper directly
    a, c = theory._final_coefficients(np.array([eta]), None)
    assert a == pytest.approx(1 - eta)
    assert c[0] ** 2 * L * L / 3 == pytest.approx(eta ** 2 * L ** 2 / 3)
    assert cfg.d == 1.0


@pytest.mark.parametrize("strategy", [AscendPracticalWsd(), AscendWsmd(), AscendSwa()], ids=repr)
def test_ascending_oracle_mean_is_the_deterministic_run(strategy):
    cfg = TheoryConfig(200, 1.0, strategy, 0)
    _, final = simulate(cfg, run_streams(0, 1)[0])
    assert oracle_moments(cfg).mean1 == pytest.approx(final[0], rel=1e-12)


def test_oracle_signal_matches_moment_recursion():
    # independent check of the coefficient form against the first/second moment recursions
    M, L = 120, 1.0
    d = L / M
    cfg = TheoryConfig(M, L, UniformSampling("practical_wsd"), 0)
    etas = strategy_etas(cfg)
    ex = (M - 1) * d / 2
    ex2 = d * d * (M - 1) * (2 * M - 1) / 6
    m, m2 = L, L * L
    for eta in etas:
        m, m2 = (1 - eta) * m + eta * ex, (1 - eta) ** 2 * m2 + 2 * eta * (1 - eta) * m * ex + eta ** 2 * ex2
    got = oracle_moments(cfg)
    assert got.mean1 == pytest.approx(m, rel=1e-12)
    assert got.second1 == pytest.approx(m2, rel=1e-12)


@pytest.mark.parametrize("strategy", ALL, ids=repr)
def test_oracle_matches_exhaustive_small_case(strategy):
    # M = 3: enumerate every index sequence (uniform) and integrate the noise
    # second moment exactly through the linear coefficients
    M, L = 3, 1.0
    cfg = TheoryConfig(M, L, strategy, 0)
    etas = strategy_etas(cfg)
    n = theory._swa_n(cfg) or 1
    seqs = [tuple(range(M - 1, -1, -1))] if cfg.ascending else list(np.ndindex(*(M,) * M))
    s1 = s1sq = s2sq = 0.0
    for seq in seqs:
        # coefficient of each dataset point in the final estimate
        coef = np.zeros(M)
        w0 = L
        ws, cs = [], []
        cur, cc = w0, np.zeros(M)
        for eta, i in zip(etas, seq):
            cur = (1 - eta) * cur + eta * i * (L / M)
            cc = (1 - eta) * cc
            cc[i] += eta
            ws.append(cur)
            cs.append(cc.copy())
        w1 = np.mean(ws[-n:])
        coef = np.mean(cs[-n:], axis=0)
        s1 += w1
        s1sq += w1 * w1
        s2sq += (coef ** 2).sum() * L * L / 3
    k = len(seqs)
    got = oracle_moments(cfg)
    assert got.mean1 == pytest.approx(s1 / k, rel=1e-12)
    assert got.second1 == pytest.approx(s1sq / k, rel=1e-12)
    assert got.second2 == pytest.approx(s2sq / k, rel=1e-12)


@pytest.mark.parametrize("strategy", ALL, ids=repr)
def test_monte_carlo_agrees_with_oracle(strategy):
    cfg = TheoryConfig(40, 1.0, strategy, seed=123)
    est = estimate_loss(cfg, 20_000)
    assert abs(est.mean - oracle_moments(cfg).expected_loss) <= 4 * est.stderr


# -- invariants ------------------------------------------------------------------

@given(st.sampled_from(ALL), st.integers(2, 80), st.floats(0.1, 10), st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_iterates_stay_in_the_hull(strategy, M, L, seed):
    cfg = TheoryConfig(M, L, strategy, seed)
    traj, _ = simulate(cfg, run_streams(seed, 1)[0])
    hi = max((M - 1) * L / M, L)
    assert np.all(traj[:, 0] >= -1e-12) and np.all(traj[:, 0] <= hi * (1 + 1e-12))
    assert np.all(np.abs(traj[:, 1]) <= L * (1 + 1e-12))


@given(st.sampled_from(ALL), st.integers(2, 60), st.integers(0, 10_000), st.sampled_from([2.0, 0.25, 3.0]))
@settings(max_examples=40, deadline=None)
def test_scale_equivariance(strategy, M, seed, c):
    a = TheoryConfig(M, 1.0, strategy, seed)
    b = TheoryConfig(M, c, strategy, seed)
    la, lb = final_losses(a, 3), final_losses(b, 3)
    if c in (2.0, 0.25):  # powers of two scale exactly
        assert np.array_equal(lb, la * c * c)
    else:
        assert np.allclose(lb, la * c * c, rtol=1e-12)


# -- loss-level behaviour ----------------------------------------------------------

def test_uniform_sampling_loss_floor():
    cfg = TheoryConfig(1000, 1.0, UniformSampling("practical_wsd"), 5)
    assert estimate_loss(cfg, 10_000).mean >= 0.1


def _exact(M, strategy):
    return oracle_moments(TheoryConfig(M, 1.0, strategy, 0)).expected_loss


@pytest.mark.xfail(strict=True, reason="exact loss ratio between M=1e3 and M=1e4 is 2.04: the L^2/(6 T0) "
                                       "noise term is still shrinking at M=1e3")
def test_practical_wsd_does_not_shrink_with_M():
    a = estimate_loss(TheoryConfig(1_000, 1.0, AscendPracticalWsd(), 1), 400).mean
    b = estimate_loss(TheoryConfig(10_000, 1.0, AscendPracticalWsd(), 1), 400).mean
    assert 0.5 <= a / b <= 2


def test_practical_wsd_plateaus():
    assert _exact(1_000, AscendPracticalWsd()) / _exact(10_000, AscendPracticalWsd()) == pytest.approx(2.04, abs=0.01)
    assert 0.5 <= _exact(10_000, AscendPracticalWsd()) / _exact(100_000, AscendPracticalWsd()) <= 2
    # the plateau is set by the signal offset: roughly 0.5 * (T0 * d / 2)^2 = L^2 / 800
    assert _exact(1_000_000, AscendPracticalWsd()) == pytest.approx(1 / 800, rel=0.02)


def test_swa_slope_near_two_thirds():
    pts = [(M, oracle_moments(TheoryConfig(M, 1.0, AscendSwa(), 0)).expected_loss) for M in (1_000, 10_000, 100_000)]
    assert -0.85 <= fit_scaling(pts) <= -0.5
