"""Exact data log-likelihood: event term plus analytic compensator.

The log-likelihood of histories observed on [0, T] is

    sum_events log lam_u(t_n, a_n)  -  sum_u int_0^T sum_a lam_u(t, a) dt

The integral (compensator) has a closed form: the preference part is
``T * sum alpha``, each Gaussian mixture component contributes its truncated
day mass ``beta/2 * (erf(mu / (sqrt(2) sigma)) + erf((D - mu) / (sqrt(2) sigma)))``
once per user-day, and each event leaves partially-integrated kernel tails
``theta * (1 - exp(-omega (T - t)))`` and ``phi * (1 - exp(-gamma (T - t)^kappa))``.

``quadrature_compensator`` recomputes the same integral numerically and is
kept deliberately independent of the closed form so the two can be used as
oracles for each other.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate
from scipy.special import erf

from ._panel import EventPanel, build_panel
from .errors import InvalidInputError, NumericalFailureError
from .model import (
    ModelParams,
    UserHistory,
    _intensity_vector_arrays,
    exp_kernel,
    gaussian_density,
    weibull_kernel,
)

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class LogLikValue:
    """Event term, compensator and their difference.

    ``total == event_term - compensator`` always; ``offenders`` names up to
    five (user, event index) pairs whose intensity was zero or floored.
    """

    event_term: float
    compensator: float
    total: float
    n_floored: int = 0
    offenders: tuple[tuple[str, int], ...] = ()


def _alpha_matrix(params: ModelParams, panel: EventPanel) -> np.ndarray:
    """Per-panel-user alpha rows, zeros for users unknown to the params."""
    if panel.n_users == 0:
        return np.zeros((0, params.structure.n_actions))
    return np.stack([params.alpha_row(u) for u in panel.users])


def event_contributions(
    params: ModelParams, panel: EventPanel
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Additive intensity pieces at every observed event.

    Returns ``(a0, bg, q_raw, r_raw, lam)`` where ``a0`` (N,) is the
    preference term, ``bg`` (N, Z) the per-mixture background, ``q_raw`` (P,)
    and ``r_raw`` (L,) the per-pair kernel values, and ``lam`` (N,) their sum
    per event, i.e. the intensity at (t_n, a_n).
    """
    n = panel.n_events
    alpha_panel = _alpha_matrix(params, panel)
    a0 = alpha_panel[panel.ev_user, panel.ev_a] if n else np.zeros(0)
    mu = params.mu[panel.ev_a]
    sigma = params.sigma[panel.ev_a]
    bg = params.beta[panel.ev_a] * gaussian_density(panel.ev_tod[:, None], mu, sigma)
    q_raw = exp_kernel(
        panel.sp_dt,
        params.theta[panel.sp_a_src, panel.sp_a_dst],
        params.omega[panel.sp_a_src, panel.sp_a_dst],
    )
    r_raw = weibull_kernel(
        panel.lp_dt,
        params.phi[panel.lp_c_src, panel.lp_a],
        params.gamma[panel.lp_c_src, panel.lp_a],
        params.kappa[panel.lp_c_src, panel.lp_a],
    )
    lam = a0 + bg.sum(axis=1)
    lam += np.bincount(panel.sp_dst, weights=q_raw, minlength=n)
    lam += np.bincount(panel.lp_dst, weights=r_raw, minlength=n)
    return a0, bg, q_raw, r_raw, lam


def day_mass(beta: np.ndarray, mu: np.ndarray, sigma: np.ndarray, day_length: float) -> np.ndarray:
    """Integral of each background component over one day, elementwise."""
    s = math.sqrt(2.0) * sigma
    return beta / 2.0 * (erf(mu / s) + erf((day_length - mu) / s))


def compensator_from_panel(params: ModelParams, panel: EventPanel) -> float:
    s = params.structure
    alpha_panel = _alpha_matrix(params, panel)
    total = panel.T * float(alpha_panel.sum())
    total += (
        panel.n_users
        * (panel.T / s.day_length)
        * float(day_mass(params.beta, params.mu, params.sigma, s.day_length).sum())
    )
    if panel.n_events:
        tail = panel.ev_tail[:, None]
        th = params.theta[panel.ev_a]
        om = params.omega[panel.ev_a]
        total += float((th * -np.expm1(-om * tail)).sum())
        ph = params.phi[panel.ev_cat, panel.ev_a]
        ga = params.gamma[panel.ev_cat, panel.ev_a]
        ka = params.kappa[panel.ev_cat, panel.ev_a]
        with np.errstate(over="ignore"):
            powered = panel.ev_tail**ka
        total += float((ph * -np.expm1(-ga * powered)).sum())
    return total


def log_likelihood(
    params: ModelParams, histories: Sequence[UserHistory], T: float
) -> LogLikValue:
    """Exact log-likelihood of ``histories`` on [0, T] under ``params``."""
    panel = build_panel(histories, params.structure, T)
    return log_likelihood_from_panel(params, panel)


def log_likelihood_from_panel(params: ModelParams, panel: EventPanel) -> LogLikValue:
    _, _, _, _, lam = event_contributions(params, panel)
    return _assemble_loglik(params, panel, lam)


def _assemble_loglik(
    params: ModelParams, panel: EventPanel, lam: np.ndarray
) -> LogLikValue:
    if np.any(np.isnan(lam)):
        bad = int(np.flatnonzero(np.isnan(lam))[0])
        raise NumericalFailureError(
            f"NaN intensity at event {panel.event_label(bad)}"
        )
    offenders: tuple[tuple[str, int], ...] = ()
    n_floored = 0
    if lam.size and lam.min() < LOG_FLOOR:
        low = np.flatnonzero(lam < LOG_FLOOR)
        n_floored = int(low.size)
        offenders = tuple(panel.event_label(i) for i in low[:5])
        if np.any(lam[low] <= 0.0):
            logger.warning(
                "zero intensity at %d observed event(s), first %s; "
                "log-likelihood is -inf",
                n_floored,
                offenders[0],
            )
            event_term = -math.inf
        else:
            logger.warning(
                "floored %d event intensit(ies) below %.0e, first %s",
                n_floored,
                LOG_FLOOR,
                offenders[0],
            )
            event_term = float(np.log(np.maximum(lam, LOG_FLOOR)).sum())
    else:
        event_term = float(np.log(lam).sum()) if lam.size else 0.0
    comp = compensator_from_panel(params, panel)
    if math.isnan(event_term) or math.isnan(comp):
        raise NumericalFailureError("log-likelihood evaluated to NaN")
    return LogLikValue(
        event_term=event_term,
        compensator=comp,
        total=event_term - comp,
        n_floored=n_floored,
        offenders=offenders,
    )


def analytic_compensator(
    params: ModelParams, histories: Sequence[UserHistory], T: float
) -> float:
    """Closed-form integral of the total intensity over [0, T], all users.

    The background term counts ``T / day_length`` day masses; it is exact
    whenever T is a whole number of days and a proportional approximation
    otherwise.
    """
    panel = build_panel(histories, params.structure, T)
    return compensator_from_panel(params, panel)


def quadrature_compensator(
    params: ModelParams,
    histories: Sequence[UserHistory],
    T: float,
    n_panels: int = 2000,
) -> float:
    """Numeric integral of the total intensity; independent check of the closed form.

    The integrand is only piecewise smooth (it jumps at events and at
    midnight because the background is not wrapped), so integration panels
    are aligned to those breakpoints and adaptively refined inside each.
    """
    if n_panels < 1:
        raise InvalidInputError("n_panels must be >= 1")
    total = 0.0
    err_budget = 0.0
    for hist in histories:
        times = hist.times()
        actions = hist.actions()
        if times.size and times.max() > T:
            raise InvalidInputError(
                f"user {hist.user!r} has events beyond T={T}"
            )
        cats = _cats_of(params, times)
        alpha_row = params.alpha_row(hist.user)
        day = params.structure.day_length
        breaks = np.unique(
            np.concatenate(
                [
                    np.array([0.0, T]),
                    times[times < T],
                    np.arange(day, T, day),
                ]
            )
        )

        def rate(t: float, k: int) -> float:
            lam = _intensity_vector_arrays(
                params, alpha_row, times[:k], actions[:k], cats[:k], t
            )
            return float(lam.sum())

        for lo, hi in zip(breaks[:-1], breaks[1:]):
            k = int(np.searchsorted(times, lo, side="right"))
            pieces = max(1, int(round(n_panels * (hi - lo) / T)))
            edges = np.linspace(lo, hi, pieces + 1)
            for a, b in zip(edges[:-1], edges[1:]):
                res = integrate.quad(
                    rate, a, b, args=(k,), limit=200, epsabs=1e-12, epsrel=1e-10,
                    full_output=1,
                )
                total += res[0]
                err_budget += res[1]
    if err_budget > 1e-6 * max(1.0, abs(total)):
        raise NumericalFailureError(
            f"quadrature error estimate {err_budget:.3e} too large for "
            f"compensator {total:.6e}"
        )
    return total


def _cats_of(params: ModelParams, times: np.ndarray) -> np.ndarray:
    s = params.structure
    edges = np.asarray(s.tod_edges)
    return np.clip(
        np.searchsorted(edges, times % s.day_length, side="right") - 1,
        0,
        s.n_categories - 1,
    ).astype(np.int64)


def integrated_total_intensity(
    params: ModelParams, history: UserHistory, upto: float
) -> float:
    """Exact integral of the user's total intensity over [0, upto].

    Unlike :func:`analytic_compensator` this handles fractional days exactly
    (the partial day contributes its true truncated-Gaussian mass), which is
    what goodness-of-fit transforms need.
    """
    if upto < 0 or not math.isfinite(upto):
        raise InvalidInputError(f"upto must be finite and >= 0, got {upto}")
    s = params.structure
    total = upto * float(params.alpha_row(history.user).sum())

    full_days, rem = divmod(upto, s.day_length)
    sq = math.sqrt(2.0) * params.sigma
    full_mass = day_mass(params.beta, params.mu, params.sigma, s.day_length)
    partial = params.beta / 2.0 * (erf((rem - params.mu) / sq) + erf(params.mu / sq))
    total += float((full_days * full_mass + partial).sum())

    times = history.times()
    actions = history.actions()
    k = int(np.searchsorted(times, upto, side="left"))
    if k:
        times, actions = times[:k], actions[:k]
        cats = _cats_of(params, times)
        tail = (upto - times)[:, None]
        th = params.theta[actions]
        om = params.omega[actions]
        total += float((th * -np.expm1(-om * tail)).sum())
        ph = params.phi[cats, actions]
        ga = params.gamma[cats, actions]
        ka = params.kappa[cats, actions]
        with np.errstate(over="ignore"):
            powered = (upto - times) ** ka
        total += float((ph * -np.expm1(-ga * powered)).sum())
    return total


def rescaled_interarrivals(params: ModelParams, history: UserHistory) -> np.ndarray:
    """Compensator increments between consecutive events of one user.

    Under the generating model these are i.i.d. Exp(1) (time-rescaling), so
    they feed straight into a Kolmogorov-Smirnov goodness-of-fit test.
    """
    times = history.times()
    out = np.empty(times.size)
    prev = 0.0
    for i, t in enumerate(times):
        cur = integrated_total_intensity(params, history, float(t))
        out[i] = cur - prev
        prev = cur
    return out
