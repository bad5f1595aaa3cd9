"""E-step attributions, M-step updates, and the outer EM loop."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tipas import (
    EventRecord,
    FitConfig,
    InvalidInputError,
    ModelParams,
    ModelStructure,
    SyntheticSpec,
    UserHistory,
    e_step,
    fit,
    generate_synthetic,
    m_step_closed,
    m_step_newton,
    m_step_rate,
)
from tipas.inference import GaussianSlice, gaussian_slices, select_n_mixtures, shape_slices

from conftest import random_histories, random_params


def build_params(n_actions=1, n_mixtures=1, horizon=100.0, users=("u",), **over):
    s = ModelStructure(n_actions=n_actions, n_mixtures=n_mixtures, horizon=horizon)
    a, z, c = n_actions, n_mixtures, s.n_categories
    base = dict(
        alpha=np.zeros((len(users), a)),
        beta=np.zeros((a, z)),
        mu=np.full((a, z), 12.0),
        sigma=np.ones((a, z)),
        theta=np.zeros((a, a)),
        omega=np.ones((a, a)),
        phi=np.zeros((c, a)),
        gamma=np.full((c, a), 0.1),
        kappa=np.ones((c, a)),
    )
    for key, val in over.items():
        base[key] = np.asarray(val, dtype=float).reshape(base[key].shape)
    return ModelParams(structure=s, users=users, **base)


class TestEStep:
    def test_pure_preference(self):
        p = build_params(alpha=0.3)
        resp = e_step(p, [UserHistory("u", (EventRecord(0, 1.0), EventRecord(0, 5.0)))])
        np.testing.assert_allclose(resp.p0, 1.0)
        assert resp.pz.sum() == 0.0
        assert resp.q.sum() == 0.0

    def test_equal_sources_split_evenly(self):
        # alpha 0.2 against a background component worth 0.2 at the event
        peak = 0.2 * math.sqrt(2 * math.pi) * 1.0
        p = build_params(alpha=0.2, beta=peak, mu=12.0, sigma=1.0)
        resp = e_step(p, [UserHistory("u", (EventRecord(0, 12.0),))])
        assert resp.p0[0] == pytest.approx(0.5, rel=1e-12)
        assert resp.pz[0, 0] == pytest.approx(0.5, rel=1e-12)

    def test_preference_vs_short_term(self):
        # short-term kernel tuned to contribute exactly 0.3 at the event
        p = build_params(alpha=0.1, theta=0.3, omega=2.0)
        gap = math.log(2.0) / 2.0  # theta * omega * exp(-omega gap) = 0.3
        h = UserHistory("u", (EventRecord(0, 1.0), EventRecord(0, 1.0 + gap)))
        resp = e_step(p, [h])
        assert resp.p0[1] == pytest.approx(0.25, rel=1e-10)
        assert resp.q[0] == pytest.approx(0.75, rel=1e-10)

    def test_normalization_bulk(self):
        rng = np.random.default_rng(17)
        total_events = 0
        while total_events < 2000:
            p = random_params(rng, users=("u1", "u2", "u3"))
            hs = random_histories(rng, n_users=3, max_events=25)
            n = sum(len(h) for h in hs)
            if n == 0:
                continue
            resp = e_step(p, hs)
            np.testing.assert_allclose(resp.event_totals(), 1.0, atol=1e-12)
            total_events += n


class TestMStepClosed:
    def test_alpha_update(self):
        # all mass on preference, 5 events, T=10 -> alpha = 0.5
        p = build_params(alpha=0.3, horizon=10.0)
        h = [UserHistory("u", tuple(EventRecord(0, float(t)) for t in range(1, 6)))]
        resp = e_step(p, h)
        alpha, _, _, _ = m_step_closed(resp, p, 10.0)
        assert alpha[0, 0] == pytest.approx(0.5, rel=1e-12)

    def test_empty_mixture_floored(self):
        p = build_params(alpha=0.3, horizon=10.0)
        h = [UserHistory("u", (EventRecord(0, 1.0),))]
        resp = e_step(p, h)
        _, beta, _, _ = m_step_closed(resp, p, 10.0, param_floor=1e-8)
        assert beta[0, 0] == 1e-8

    def test_theta_large_horizon_limit(self):
        # with T - t huge the denominator approaches the source-event count
        p = build_params(
            n_actions=2,
            horizon=1e7,
            alpha=[[1e-12, 1e-12]],
            theta=[[1e-12, 0.5], [1e-12, 1e-12]],
            omega=[[1.0, 2.0], [1.0, 1.0]],
        )
        events = (
            EventRecord(0, 1.0),
            EventRecord(1, 1.2),
            EventRecord(0, 50.0),
            EventRecord(1, 50.1),
        )
        resp = e_step(p, [UserHistory("u", events)])
        q_mass = resp.q.sum()
        _, _, theta, _ = m_step_closed(resp, p, 1e7)
        assert theta[0, 1] == pytest.approx(q_mass / 2.0, rel=1e-3)


class TestMStepRate:
    def test_omega_single_pair(self):
        # one triggered pair with gap 2, negligible tail -> omega = 1/2
        p = build_params(alpha=1e-14, theta=0.5, omega=1.0, horizon=1e9)
        resp = e_step(p, [UserHistory("u", (EventRecord(0, 1.0), EventRecord(0, 3.0)))])
        assert resp.q[0] == pytest.approx(1.0, rel=1e-9)
        omega, _ = m_step_rate(resp, p, 1e9)
        assert omega[0, 0] == pytest.approx(0.5, rel=1e-6)

    def test_gamma_single_pair_shape_one(self):
        p = build_params(alpha=1e-14, phi=[[0.5]] * 4, gamma=[[1.0]] * 4, horizon=1e9)
        resp = e_step(p, [UserHistory("u", (EventRecord(0, 1.0), EventRecord(0, 5.0)))])
        assert resp.r[0] == pytest.approx(1.0, rel=1e-9)
        _, gamma = m_step_rate(resp, p, 1e9)
        assert gamma[0, 0] == pytest.approx(0.25, rel=1e-6)

    def test_no_mass_keeps_previous(self):
        p = build_params(alpha=0.3, omega=1.7, gamma=[[0.31]] * 4)
        resp = e_step(p, [UserHistory("u", (EventRecord(0, 1.0),))])
        omega, gamma = m_step_rate(resp, p, 100.0)
        assert omega[0, 0] == 1.7
        assert gamma[0, 0] == 0.31


class TestMStepNewton:
    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(42)
        checked = 0
        while checked < 25:
            p = random_params(rng, users=("u1", "u2"))
            hs = random_histories(rng, n_users=2, max_events=15)
            if sum(len(h) for h in hs) == 0:
                continue
            resp = e_step(p, hs)
            T = p.structure.horizon
            for (a, z), sl in gaussian_slices(resp, p, T).items():
                mu, sg = float(p.mu[a, z]), float(p.sigma[a, z])
                g = sl.grad(mu, sg)
                h = 1e-5
                fd = np.array(
                    [
                        (sl.value(mu + h, sg) - sl.value(mu - h, sg)) / (2 * h),
                        (sl.value(mu, sg + h) - sl.value(mu, sg - h)) / (2 * h),
                    ]
                )
                np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-7)
            for (c, a), sl in shape_slices(resp, p, T).items():
                k = float(p.kappa[c, a])
                g = sl.grad(k)
                h = 1e-6
                fd = (sl.value(k + h) - sl.value(k - h)) / (2 * h)
                assert abs(g - fd) / max(1.0, abs(fd)) < 1e-4
            checked += 1

    def test_mu_converges_to_weighted_mean(self):
        # negligible compensator weight: the slice optimum is the weighted
        # mean of the event hours (10) with their spread as sigma
        sl = GaussianSlice(sw=2.0, swl=20.0, swll=200.02, kz=1e-12, day_length=24.0)
        p = build_params(beta=1e-12, mu=9.0, sigma=1.0, alpha=1e-6, horizon=48.0)
        h = [UserHistory("u", (EventRecord(0, 9.9), EventRecord(0, 10.1)))]
        resp = e_step(p, h)
        # force all mass onto the mixture for a clean stationary point
        resp.pz[:, 0] = 1.0
        resp.p0[:] = 0.0
        cfg = FitConfig(n_mixtures=1, newton_max_steps=40)
        kappa, mu, sigma = m_step_newton(resp, p, 48.0, cfg)[:3]
        assert mu[0, 0] == pytest.approx(10.0, abs=1e-3)
        assert sigma[0, 0] == pytest.approx(0.1, rel=1e-2)


class TestFit:
    def test_poisson_rate_recovery(self):
        # constant-rate data with every structural component disabled
        rng = np.random.default_rng(3)
        times = np.sort(rng.uniform(0, 720.0, 400))
        h = [UserHistory("u", tuple(EventRecord(0, float(t)) for t in times))]
        cfg = FitConfig(
            n_mixtures=1,
            include_background=False,
            include_short=False,
            include_long=False,
            horizon=720.0,
            max_iterations=20,
        )
        params, _ = fit(h, cfg)
        assert params.alpha[0, 0] == pytest.approx(400 / 720.0, rel=0.02)

    def test_trace_is_monotone(self):
        truth = build_params(
            n_actions=2,
            horizon=240.0,
            users=("t",),
            alpha=[[0.03, 0.03]],
            beta=[[0.3], [0.3]],
            mu=[[9.0], [15.0]],
            sigma=[[1.5], [2.0]],
            theta=[[0.1, 0.2], [0.1, 0.1]],
            omega=[[2.0, 2.0], [2.0, 2.0]],
            phi=[[0.2, 0.2]] * 4,
            gamma=[[0.2, 0.2]] * 4,
        )
        hs = generate_synthetic(SyntheticSpec(n_users=6, params=truth, horizon=240.0, seed=4))
        _, report = fit(hs, FitConfig(n_mixtures=2, rng_seed=1, max_iterations=60, horizon=240.0))
        totals = [v.total for v in report.ll_trace]
        for prev, nxt in zip(totals, totals[1:]):
            assert nxt >= prev - 1e-8 * abs(prev)

    def test_seed_determinism_bitwise(self):
        rng = np.random.default_rng(8)
        hs = random_histories(rng, n_users=3, max_events=20, horizon=48.0)
        cfg = FitConfig(n_mixtures=2, rng_seed=5, max_iterations=15, horizon=48.0)
        _, r1 = fit(hs, cfg)
        _, r2 = fit(hs, cfg)
        assert [v.total for v in r1.ll_trace] == [v.total for v in r2.ll_trace]

    def test_empty_data_rejected(self):
        with pytest.raises(InvalidInputError):
            fit([UserHistory("u", ())], FitConfig())

    def test_convergence_flag(self):
        rng = np.random.default_rng(12)
        hs = random_histories(rng, n_users=2, max_events=15, horizon=48.0)
        cfg = FitConfig(
            n_mixtures=1, rng_seed=0, max_iterations=500, rel_ll_tolerance=1e-4, horizon=48.0
        )
        params, report = fit(hs, cfg)
        assert report.converged
        assert report.iterations_run < 500
        assert report.ll_trace[-1].total >= report.ll_trace[0].total

    def test_lookback_cap_limits_pairs(self):
        hs = [
            UserHistory(
                "u", tuple(EventRecord(i % 2, 1.0 + i * 1.5) for i in range(30))
            )
        ]
        from tipas._panel import build_panel

        s = ModelStructure(n_actions=2, n_mixtures=1, horizon=48.0)
        full = build_panel(hs, s, 48.0)
        capped = build_panel(hs, s, 48.0, lookback_cap=3)
        assert capped.sp_src.size < full.sp_src.size
        assert np.all(capped.sp_dst - capped.sp_src <= 3)
        # the fit accepts the cap end to end
        cfg = FitConfig(n_mixtures=1, rng_seed=0, max_iterations=5, lookback_cap=3, horizon=48.0)
        fit(hs, cfg)

    def test_degenerate_event_error_names_offender(self):
        from tipas import DegenerateEventError, zero_params

        p = zero_params(ModelStructure(n_actions=1, n_mixtures=1, horizon=10.0), users=("u",))
        with pytest.raises(DegenerateEventError, match="u"):
            e_step(p, [UserHistory("u", (EventRecord(0, 1.0),))])

    def test_disabled_components_stay_zero(self):
        rng = np.random.default_rng(13)
        hs = random_histories(rng, n_users=2, max_events=15, horizon=48.0)
        cfg = FitConfig(
            n_mixtures=1,
            rng_seed=0,
            max_iterations=10,
            include_short=False,
            include_long=False,
            horizon=48.0,
        )
        params, _ = fit(hs, cfg)
        assert np.all(params.theta == 0.0)
        assert np.all(params.phi == 0.0)

    def test_small_recovery(self):
        # the full-scale recovery run lives in the acceptance suite
        s = ModelStructure(n_actions=2, n_mixtures=1, tod_edges=(0.0, 12.0, 24.0), horizon=720.0)
        truth = ModelParams(
            structure=s,
            users=("t",),
            alpha=np.zeros((1, 2)),
            beta=np.array([[0.3], [0.3]]),
            mu=np.array([[9.0], [15.0]]),
            sigma=np.array([[2.0], [2.5]]),
            theta=np.array([[0.10, 0.25], [0.15, 0.10]]),
            omega=np.array([[12.0, 3.0], [2.5, 12.0]]),
            phi=np.full((2, 2), 0.35),
            gamma=np.full((2, 2), 0.25),
            kappa=np.ones((2, 2)),
        )
        hs = generate_synthetic(SyntheticSpec(n_users=60, params=truth, horizon=720.0, seed=11))
        cfg = FitConfig(
            n_mixtures=1,
            rng_seed=3,
            tod_edges=(0.0, 12.0, 24.0),
            max_iterations=400,
            rel_ll_tolerance=1e-7,
            horizon=720.0,
        )
        params, _ = fit(hs, cfg)
        assert np.max(np.abs(params.beta - truth.beta) / truth.beta) < 0.35
        assert np.max(np.abs(params.mu - truth.mu) / truth.mu) < 0.1
        assert np.max(np.abs(params.theta - truth.theta) / truth.theta) < 0.5


class TestMixtureSelection:
    def test_select_runs_and_returns_grid_member(self):
        truth = build_params(
            n_actions=1,
            horizon=480.0,
            users=("t",),
            alpha=[[0.02]],
            beta=[[0.6]],
            mu=[[9.0]],
            sigma=[[1.5]],
        )
        hs = generate_synthetic(SyntheticSpec(n_users=6, params=truth, horizon=480.0, seed=6))
        cfg = FitConfig(rng_seed=0, max_iterations=40, horizon=480.0)
        z = select_n_mixtures(hs, cfg, grid=(1, 2))
        assert z in (1, 2)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_responsibilities_normalize(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, users=("u1", "u2"))
    hs = random_histories(rng, n_users=2, max_events=15)
    if sum(len(h) for h in hs) == 0:
        return
    resp = e_step(p, hs)
    np.testing.assert_allclose(resp.event_totals(), 1.0, atol=1e-12)
