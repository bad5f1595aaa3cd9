"""Domain types and conditional-intensity evaluation.

The rate at which user ``u`` performs action ``a`` at time ``t`` (hours) is

    lam_u(t, a) = alpha[u, a]                                   (preference)
                + sum_z beta[a, z] * N(tod(t); mu[a, z], sigma[a, z]^2)
                + sum_{t' < t} theta[a', a] * omega[a', a] * exp(-omega[a', a] * d)
                + sum_{t' < t, a' = a} phi[c', a] * gamma[c', a] * kappa[c', a]
                      * d^(kappa[c', a] - 1) * exp(-gamma[c', a] * d^kappa[c', a])

where ``d = t - t'``, ``tod(t)`` is the hour-of-day of ``t``, ``N`` is the
Gaussian density (not wrapped at midnight), and ``c'`` is the time-of-day
category of the earlier event.  All times are hours, all rates per hour.

Everything here is immutable and side-effect free, so evaluations are safe
to run from any number of threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError

# Floor on event-time gaps: two events logged at the same instant would make
# the Weibull kernel diverge for kappa < 1, so ties are pushed apart by this
# much (hours).
TIE_EPSILON = 1e-6

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _check_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise InvalidInputError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class EventRecord:
    """One (action, timestamp) observation; ``t`` is hours since stream start."""

    action: int
    t: float

    def __post_init__(self) -> None:
        if self.action < 0:
            raise InvalidInputError(f"action index must be >= 0, got {self.action}")
        t = _check_finite("event time", self.t)
        if t < 0:
            raise InvalidInputError(f"event time must be >= 0, got {t}")


@dataclass(frozen=True)
class UserHistory:
    """A user's chronologically sorted event sequence.

    Ties are allowed and keep their input order.
    """

    user: str
    events: tuple[EventRecord, ...]

    def __post_init__(self) -> None:
        events = tuple(self.events)
        object.__setattr__(self, "events", events)
        for prev, nxt in zip(events, events[1:]):
            if nxt.t < prev.t:
                raise InvalidInputError(
                    f"history for user {self.user!r} is not sorted by time "
                    f"({prev.t} followed by {nxt.t})"
                )

    def __len__(self) -> int:
        return len(self.events)

    def times(self) -> np.ndarray:
        return np.array([e.t for e in self.events], dtype=np.float64)

    def actions(self) -> np.ndarray:
        return np.array([e.action for e in self.events], dtype=np.int64)


@dataclass(frozen=True)
class ModelStructure:
    """Structural constants: action count, mixture count, day layout, horizon.

    ``tod_edges`` are the boundaries of the half-open time-of-day windows;
    they must start at 0 and end at ``day_length`` so the windows partition
    one day exactly.
    """

    n_actions: int
    n_mixtures: int
    tod_edges: tuple[float, ...] = (0.0, 6.0, 12.0, 18.0, 24.0)
    day_length: float = 24.0
    horizon: float = 720.0

    def __post_init__(self) -> None:
        if self.n_actions < 1:
            raise InvalidInputError("n_actions must be >= 1")
        if self.n_mixtures < 1:
            raise InvalidInputError("n_mixtures must be >= 1")
        if self.day_length <= 0 or not math.isfinite(self.day_length):
            raise InvalidInputError("day_length must be positive and finite")
        if self.horizon <= 0 or not math.isfinite(self.horizon):
            raise InvalidInputError("horizon must be positive and finite")
        edges = tuple(float(e) for e in self.tod_edges)
        object.__setattr__(self, "tod_edges", edges)
        if len(edges) < 2 or edges[0] != 0.0 or edges[-1] != self.day_length:
            raise InvalidInputError(
                f"tod_edges must run from 0 to day_length, got {edges}"
            )
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise InvalidInputError(f"tod_edges must be strictly increasing, got {edges}")

    @property
    def n_categories(self) -> int:
        return len(self.tod_edges) - 1


def time_of_day(t: float, day_length: float = 24.0) -> float:
    """Hours since the most recent midnight, in [0, day_length)."""
    t = _check_finite("time", t)
    if t < 0:
        raise InvalidInputError(f"time must be >= 0, got {t}")
    return t % day_length


def tod_category(t: float, structure: ModelStructure) -> int:
    """Index of the time-of-day window containing ``time_of_day(t)``."""
    tod = time_of_day(t, structure.day_length)
    edges = np.asarray(structure.tod_edges)
    c = int(np.searchsorted(edges, tod, side="right")) - 1
    return min(max(c, 0), structure.n_categories - 1)


@dataclass(frozen=True)
class ModelParams:
    """All model parameters plus the structural constants.

    Shapes: ``alpha`` (U, A) with ``users`` giving the row order; ``beta``,
    ``mu``, ``sigma`` (A, Z); ``theta``, ``omega`` (A, A) indexed
    [source action, target action]; ``phi``, ``gamma``, ``kappa`` (C, A)
    indexed [source time-of-day category, action].

    Users absent from ``users`` get a zero ``alpha`` row (cold start) and
    share every other parameter.  Instances are immutable; the arrays are
    marked read-only.
    """

    structure: ModelStructure
    users: tuple[str, ...]
    alpha: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    phi: np.ndarray
    gamma: np.ndarray
    kappa: np.ndarray

    _user_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        s = self.structure
        a, z, c = s.n_actions, s.n_mixtures, s.n_categories
        users = tuple(str(u) for u in self.users)
        object.__setattr__(self, "users", users)
        shapes = {
            "alpha": (len(users), a),
            "beta": (a, z),
            "mu": (a, z),
            "sigma": (a, z),
            "theta": (a, a),
            "omega": (a, a),
            "phi": (c, a),
            "gamma": (c, a),
            "kappa": (c, a),
        }
        for name, shape in shapes.items():
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise InvalidInputError(
                    f"{name} must have shape {shape}, got {arr.shape}"
                )
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name} contains non-finite entries")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        for name in ("alpha", "beta", "theta", "omega", "phi", "gamma"):
            if np.any(getattr(self, name) < 0):
                raise InvalidInputError(f"{name} must be non-negative")
        if np.any(self.sigma <= 0):
            raise InvalidInputError("sigma must be strictly positive")
        if np.any(self.kappa <= 0):
            raise InvalidInputError("kappa must be strictly positive")
        if np.any(self.mu <= 0) or np.any(self.mu >= s.day_length):
            raise InvalidInputError("mu must lie strictly inside (0, day_length)")
        if len(set(users)) != len(users):
            raise InvalidInputError("duplicate user keys")
        object.__setattr__(self, "_user_index", {u: i for i, u in enumerate(users)})

    def alpha_row(self, user: str) -> np.ndarray:
        """Per-action preference rates for ``user``; zeros when unseen."""
        idx = self._user_index.get(user)
        if idx is None:
            return np.zeros(self.structure.n_actions)
        return self.alpha[idx]

    def user_id(self, user: str) -> int | None:
        return self._user_index.get(user)


def zero_params(
    structure: ModelStructure, users: Sequence[str] = ()
) -> ModelParams:
    """All-zero parameter set (mu centered, sigma/kappa at 1) for tests and builders."""
    a, z, c = structure.n_actions, structure.n_mixtures, structure.n_categories
    mu = np.full((a, z), structure.day_length / 2.0)
    return ModelParams(
        structure=structure,
        users=tuple(users),
        alpha=np.zeros((len(users), a)),
        beta=np.zeros((a, z)),
        mu=mu,
        sigma=np.ones((a, z)),
        theta=np.zeros((a, a)),
        omega=np.zeros((a, a)),
        phi=np.zeros((c, a)),
        gamma=np.zeros((c, a)),
        kappa=np.ones((c, a)),
    )


# ---------------------------------------------------------------------------
# kernel evaluation on raw arrays (shared by the public ops, the EM engine,
# the simulator and the predictors)
# ---------------------------------------------------------------------------


def gaussian_density(x: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Elementwise N(x; mu, sigma^2)."""
    z = (x - mu) / sigma
    return np.exp(-0.5 * z * z) / (sigma * _SQRT_2PI)


def exp_kernel(dt: np.ndarray, theta: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Short-term kernel theta * omega * exp(-omega * dt)."""
    return theta * omega * np.exp(-omega * dt)


def weibull_kernel(
    dt: np.ndarray, phi: np.ndarray, gamma: np.ndarray, kappa: np.ndarray
) -> np.ndarray:
    """Long-term kernel phi * gamma * kappa * dt^(kappa-1) * exp(-gamma * dt^kappa).

    Evaluated in log space so that huge dt^kappa underflows to zero instead
    of producing inf * 0.  ``dt`` must be strictly positive.
    """
    log_dt = np.log(dt)
    with np.errstate(over="ignore"):
        power = np.exp(np.minimum(kappa * log_dt, 709.0))
    return phi * gamma * kappa * np.exp((kappa - 1.0) * log_dt - gamma * power)


def clamp_gaps(dt: np.ndarray) -> np.ndarray:
    """Push zero/negative gaps (timestamp ties) up to TIE_EPSILON."""
    return np.maximum(dt, TIE_EPSILON)


def _background_vector(params: ModelParams, t: float) -> np.ndarray:
    """Background intensity of every action at time t, shape (A,)."""
    tod = time_of_day(t, params.structure.day_length)
    dens = gaussian_density(tod, params.mu, params.sigma)  # (A, Z)
    return (params.beta * dens).sum(axis=1)


def _intensity_vector_arrays(
    params: ModelParams,
    alpha_row: np.ndarray,
    times: np.ndarray,
    actions: np.ndarray,
    cats: np.ndarray,
    t: float,
) -> np.ndarray:
    """Total intensity of every action at time t given an array-form prefix."""
    lam = alpha_row + _background_vector(params, t)
    if times.size:
        dt = clamp_gaps(t - times)  # (n,)
        om = params.omega[actions]  # (n, A)
        lam = lam + (params.theta[actions] * om * np.exp(-om * dt[:, None])).sum(axis=0)
        h = weibull_kernel(
            dt,
            params.phi[cats, actions],
            params.gamma[cats, actions],
            params.kappa[cats, actions],
        )
        np.add.at(lam, actions, h)
    return lam


def _prefix_arrays(
    structure: ModelStructure, prefix: Iterable[EventRecord], t: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    times, actions = [], []
    last = -math.inf
    for ev in prefix:
        if ev.t < last:
            raise InvalidInputError("history prefix is not sorted by time")
        if ev.t > t:
            raise InvalidInputError(
                f"prefix event at t={ev.t} lies after evaluation time t={t}"
            )
        if ev.action >= structure.n_actions:
            raise InvalidInputError(
                f"action {ev.action} out of range for {structure.n_actions} actions"
            )
        last = ev.t
        times.append(ev.t)
        actions.append(ev.action)
    times_arr = np.asarray(times, dtype=np.float64)
    actions_arr = np.asarray(actions, dtype=np.int64)
    edges = np.asarray(structure.tod_edges)
    tods = times_arr % structure.day_length
    cats = np.clip(
        np.searchsorted(edges, tods, side="right") - 1, 0, structure.n_categories - 1
    )
    return times_arr, actions_arr, cats


# ---------------------------------------------------------------------------
# public intensity operations
# ---------------------------------------------------------------------------


def background_intensity(params: ModelParams, a: int, t: float) -> float:
    """Gaussian-mixture background rate of action ``a`` at time ``t``."""
    _check_action(params, a)
    return float(_background_vector(params, t)[a])


def short_term_intensity(
    params: ModelParams, history_prefix: Iterable[EventRecord], a: int, t: float
) -> float:
    """Cross-excitation rate at ``t`` from all earlier events.

    Every prefix event contributes ``theta[a', a] * omega[a', a] *
    exp(-omega[a', a] * (t - t'))``.
    """
    _check_action(params, a)
    times, actions, _ = _prefix_arrays(params.structure, history_prefix, t)
    if not times.size:
        return 0.0
    dt = clamp_gaps(t - times)
    vals = exp_kernel(dt, params.theta[actions, a], params.omega[actions, a])
    return float(vals.sum())


def long_term_intensity(
    params: ModelParams, history_prefix: Iterable[EventRecord], a: int, t: float
) -> float:
    """Periodic-recurrence rate at ``t`` from earlier events of the same action.

    Each same-action event contributes a Weibull hazard whose parameters are
    selected by the time-of-day category of that earlier event.
    """
    _check_action(params, a)
    times, actions, cats = _prefix_arrays(params.structure, history_prefix, t)
    mask = actions == a
    if not mask.any():
        return 0.0
    dt = clamp_gaps(t - times[mask])
    c = cats[mask]
    vals = weibull_kernel(dt, params.phi[c, a], params.gamma[c, a], params.kappa[c, a])
    return float(vals.sum())


def total_intensity(
    params: ModelParams,
    user: str,
    history_prefix: Iterable[EventRecord],
    a: int,
    t: float,
) -> float:
    """Full conditional intensity of action ``a`` for ``user`` at time ``t``."""
    _check_action(params, a)
    times, actions, cats = _prefix_arrays(params.structure, history_prefix, t)
    lam = _intensity_vector_arrays(params, params.alpha_row(user), times, actions, cats, t)
    return float(lam[a])


def intensity_vector(
    params: ModelParams, user: str, history_prefix: Iterable[EventRecord], t: float
) -> np.ndarray:
    """Conditional intensity of every action at time ``t``, shape (A,)."""
    times, actions, cats = _prefix_arrays(params.structure, history_prefix, t)
    return _intensity_vector_arrays(
        params, params.alpha_row(user), times, actions, cats, t
    )


def _check_action(params: ModelParams, a: int) -> None:
    if not 0 <= a < params.structure.n_actions:
        raise InvalidInputError(
            f"action {a} out of range for {params.structure.n_actions} actions"
        )
