"""Exact sampling of the process by thinning, plus synthetic-data generation.

A dominating rate valid over a short look-ahead window is rebuilt after
every candidate: the preference and background parts use global peaks, the
exponential part its (decreasing) current value, and each Weibull term its
current value or its mode peak when the mode still lies ahead.  Candidates
arrive at the dominating rate and are accepted with probability
``lam(t) / lam_bar``; accepted candidates pick their action proportionally
to the per-action intensities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    InvalidInputError,
    SimulationOverflowError,
    ThinningBoundError,
)
from .model import (
    TIE_EPSILON,
    EventRecord,
    ModelParams,
    UserHistory,
    _intensity_vector_arrays,
    _prefix_arrays,
    clamp_gaps,
    weibull_kernel,
)

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class SimConfig:
    """Simulation controls; ``bound_window`` is the dominating-rate horizon."""

    horizon: float
    seed: int = 0
    max_events: int = 10**6
    bound_window: float = 1.0

    def __post_init__(self) -> None:
        if self.horizon <= 0 or not math.isfinite(self.horizon):
            raise InvalidInputError("horizon must be positive and finite")
        if self.bound_window <= 0:
            raise InvalidInputError("bound_window must be positive")
        if self.max_events < 1:
            raise InvalidInputError("max_events must be >= 1")


@dataclass(frozen=True)
class SyntheticSpec:
    """Ground truth for generated datasets.

    ``params.users`` may list exactly ``n_users`` users, a single template
    user whose alpha row is shared by everyone, or nobody (all cold users).
    """

    n_users: int
    params: ModelParams
    horizon: float
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_users < 0:
            raise InvalidInputError("n_users must be >= 0")
        if self.horizon <= 0:
            raise InvalidInputError("horizon must be positive")
        if len(self.params.users) not in (0, 1, self.n_users):
            raise InvalidInputError(
                "params must define 0, 1 or n_users alpha rows, got "
                f"{len(self.params.users)} for n_users={self.n_users}"
            )


def _stream_rng(seed: int, *salt: int) -> np.random.Generator:
    # Counter-based streams: any (seed, salt...) tuple opens the same stream
    # regardless of scheduling or call order.
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, *salt))))


def _bound_arrays(
    params: ModelParams,
    alpha_row: np.ndarray,
    times: np.ndarray,
    actions: np.ndarray,
    cats: np.ndarray,
    t: float,
    window: float,
) -> float:
    bound = float(alpha_row.sum())
    bound += float((params.beta / (params.sigma * _SQRT_2PI)).sum())
    if times.size:
        dt = clamp_gaps(t - times)
        om = params.omega[actions]
        bound += float(
            (params.theta[actions] * om * np.exp(-om * dt[:, None])).sum()
        )
        ph = params.phi[cats, actions]
        ga = params.gamma[cats, actions]
        ka = params.kappa[cats, actions]
        h_now = weibull_kernel(dt, ph, ga, ka)
        safe_ga = np.where(ga > 0, ga, 1.0)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            raw_mode = ((ka - 1.0) / (safe_ga * ka)) ** (1.0 / ka)
        mode = np.where((ka > 1.0) & (ga > 0) & np.isfinite(raw_mode), raw_mode, 0.0)
        peak = weibull_kernel(np.maximum(mode, TIE_EPSILON), ph, ga, ka)
        # decreasing beyond the mode, so the window sup sits at the left edge
        bound += float(np.where(dt < mode, peak, h_now).sum())
    return bound


def intensity_upper_bound(
    params: ModelParams,
    user: str,
    history: Sequence[EventRecord],
    t: float,
    window: float,
) -> float:
    """A rate dominating the total intensity everywhere in [t, t + window]."""
    if window <= 0:
        raise InvalidInputError("window must be positive")
    times, actions, cats = _prefix_arrays(params.structure, history, t)
    return _bound_arrays(params, params.alpha_row(user), times, actions, cats, t, window)


def _simulate_stream(
    params: ModelParams,
    alpha_row: np.ndarray,
    seed_times: np.ndarray,
    seed_actions: np.ndarray,
    seed_cats: np.ndarray,
    start: float,
    horizon: float,
    rng: np.random.Generator,
    *,
    max_events: int = 10**6,
    window: float = 1.0,
    stop_after: int | None = None,
) -> tuple[list[float], list[int]]:
    s = params.structure
    edges = np.asarray(s.tod_edges)
    times = np.asarray(seed_times, dtype=np.float64)
    actions = np.asarray(seed_actions, dtype=np.int64)
    cats = np.asarray(seed_cats, dtype=np.int64)
    out_t: list[float] = []
    out_a: list[int] = []
    end = start + horizon
    t = start
    while t < end:
        lam_bar = _bound_arrays(params, alpha_row, times, actions, cats, t, window)
        if lam_bar <= 0.0:
            t += window
            continue
        gap = rng.exponential() / lam_bar
        if gap > window:
            t += window
            continue
        t_cand = t + gap
        if t_cand > end:
            break
        lam_vec = _intensity_vector_arrays(params, alpha_row, times, actions, cats, t_cand)
        lam_tot = float(lam_vec.sum())
        if lam_tot > lam_bar * (1.0 + 1e-9):
            raise ThinningBoundError(
                f"intensity {lam_tot:.6g} exceeded dominating rate {lam_bar:.6g} "
                f"at t={t_cand:.6f}"
            )
        if lam_tot > 0.0 and rng.random() * lam_bar < lam_tot:
            a = int(
                np.searchsorted(np.cumsum(lam_vec), rng.random() * lam_tot, side="right")
            )
            a = min(a, s.n_actions - 1)
            if len(out_t) + 1 > max_events:
                raise SimulationOverflowError(
                    f"simulation produced more than {max_events} events "
                    f"(explosive parameters?)"
                )
            out_t.append(t_cand)
            out_a.append(a)
            times = np.append(times, t_cand)
            actions = np.append(actions, a)
            cat = int(np.searchsorted(edges, t_cand % s.day_length, side="right")) - 1
            cats = np.append(cats, min(max(cat, 0), s.n_categories - 1))
            if stop_after is not None and len(out_t) >= stop_after:
                return out_t, out_a
        t = t_cand
    return out_t, out_a


def simulate(
    params: ModelParams,
    user: str,
    seed_history: UserHistory,
    config: SimConfig,
) -> list[EventRecord]:
    """Draw events on (t_last, t_last + horizon] given ``seed_history``."""
    start = seed_history.events[-1].t if len(seed_history) else 0.0
    times, actions, cats = _prefix_arrays(
        params.structure, seed_history.events, math.inf
    )
    rng = _stream_rng(config.seed)
    out_t, out_a = _simulate_stream(
        params,
        params.alpha_row(user),
        times,
        actions,
        cats,
        start,
        config.horizon,
        rng,
        max_events=config.max_events,
        window=config.bound_window,
    )
    return [EventRecord(action=a, t=t) for t, a in zip(out_t, out_a)]


def params_for_users(params: ModelParams, users: Sequence[str]) -> ModelParams:
    """Rebind ground-truth parameters to concrete user keys.

    A single template alpha row is tiled across all users; an empty user
    list means everyone is cold (zero alpha).  Needed when scoring generated
    data against the generating parameters.
    """
    users = tuple(users)
    if params.users == users:
        return params
    n_rows = len(params.users)
    if n_rows == 1:
        alpha = np.tile(params.alpha[0], (len(users), 1))
    elif n_rows == 0:
        alpha = np.zeros((len(users), params.structure.n_actions))
    else:
        raise InvalidInputError(
            f"cannot rebind {n_rows} alpha rows to {len(users)} users"
        )
    return ModelParams(
        structure=params.structure,
        users=users,
        alpha=alpha,
        beta=params.beta,
        mu=params.mu,
        sigma=params.sigma,
        theta=params.theta,
        omega=params.omega,
        phi=params.phi,
        gamma=params.gamma,
        kappa=params.kappa,
    )


def generate_synthetic(spec: SyntheticSpec) -> list[UserHistory]:
    """Independent per-user draws from the ground truth; reproducible per
    (seed, user index)."""
    params = spec.params
    n_rows = len(params.users)
    histories = []
    empty = np.empty(0)
    empty_i = np.empty(0, dtype=np.int64)
    for i in range(spec.n_users):
        if n_rows == spec.n_users:
            user = params.users[i]
            alpha_row = params.alpha[i]
        else:
            user = f"u{i:05d}"
            alpha_row = params.alpha[0] if n_rows == 1 else np.zeros(
                params.structure.n_actions
            )
        rng = _stream_rng(spec.seed, i)
        out_t, out_a = _simulate_stream(
            params, alpha_row, empty, empty_i, empty_i, 0.0, spec.horizon, rng
        )
        histories.append(
            UserHistory(
                user=user,
                events=tuple(EventRecord(action=a, t=t) for t, a in zip(out_t, out_a)),
            )
        )
    return histories
