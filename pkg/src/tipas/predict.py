"""Next-action / next-time prediction and the rolling-window evaluation driver."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import CensoredPredictionError, InvalidInputError
from .inference import FitConfig, fit
from .metrics import (
    EvalReport,
    WindowResult,
    accuracy,
    finalize_report,
    macro_recall,
    per_action_recall,
)
from .model import (
    EventRecord,
    ModelParams,
    UserHistory,
    _intensity_vector_arrays,
    _prefix_arrays,
)
from .simulate import _simulate_stream, _stream_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PredictionTask:
    """One next-action query: the prefix plus the known query time."""

    user: str
    history_prefix: tuple[EventRecord, ...]
    t: float
    horizon_filter: float = 12.0

    def __post_init__(self) -> None:
        if any(e.t > self.t for e in self.history_prefix):
            raise InvalidInputError("prefix events must precede the query time")


@dataclass(frozen=True)
class ActionPrediction:
    action: int
    degenerate: bool
    intensities: np.ndarray


@dataclass(frozen=True)
class TimePrediction:
    time: float
    n_censored: int


def predict_next_action(params: ModelParams, task: PredictionTask) -> ActionPrediction:
    """Most intense action at the query time; ties break to the lowest id.

    When every action has zero intensity the prediction degenerates to
    action 0 and is flagged.
    """
    times, actions, cats = _prefix_arrays(params.structure, task.history_prefix, task.t)
    lam = _intensity_vector_arrays(
        params, params.alpha_row(task.user), times, actions, cats, task.t
    )
    return ActionPrediction(
        action=int(np.argmax(lam)),
        degenerate=not bool(np.any(lam > 0)),
        intensities=lam,
    )


def predict_next_time(
    params: ModelParams,
    user: str,
    history: UserHistory | Sequence[EventRecord],
    n_samples: int = 100,
    seed: int | tuple = 0,
    horizon_filter: float = 12.0,
    censor_factor: float = 10.0,
    bound_window: float = 1.0,
) -> TimePrediction:
    """Average first-arrival time (any action) over thinning simulations.

    Each sample restarts the process from the end of the history; samples
    with no event within ``censor_factor * horizon_filter`` hours contribute
    that cap.  If every sample is censored there is no usable prediction.
    """
    if n_samples < 1:
        raise InvalidInputError("n_samples must be >= 1")
    events = history.events if isinstance(history, UserHistory) else tuple(history)
    times, actions, cats = _prefix_arrays(params.structure, events, math.inf)
    start = float(times[-1]) if times.size else 0.0
    span = censor_factor * horizon_filter
    entropy = seed if isinstance(seed, tuple) else (seed,)
    alpha_row = params.alpha_row(user)

    total = 0.0
    censored = 0
    for i in range(n_samples):
        rng = _stream_rng(*entropy, i)
        out_t, _ = _simulate_stream(
            params,
            alpha_row,
            times,
            actions,
            cats,
            start,
            span,
            rng,
            window=bound_window,
            stop_after=1,
        )
        if out_t:
            total += out_t[0]
        else:
            censored += 1
            total += start + span
    if censored == n_samples:
        raise CensoredPredictionError(
            f"all {n_samples} samples ran {span:.1f}h without an event"
        )
    return TimePrediction(time=total / n_samples, n_censored=censored)


class TipasPredictor:
    """Fitted model wrapped in the evaluation-driver interface."""

    supports_action = True
    supports_time = True
    parallel_safe = True  # stateless predictions with per-call RNG streams

    def __init__(
        self,
        params: ModelParams,
        name: str = "tipas",
        n_samples: int = 100,
        horizon_filter: float = 12.0,
        censor_factor: float = 10.0,
        bound_window: float = 1.0,
    ) -> None:
        self.params = params
        self.name = name
        self.n_samples = n_samples
        self.horizon_filter = horizon_filter
        self.censor_factor = censor_factor
        self.bound_window = bound_window

    def _cats(self, times: np.ndarray) -> np.ndarray:
        s = self.params.structure
        edges = np.asarray(s.tod_edges)
        return np.clip(
            np.searchsorted(edges, times % s.day_length, side="right") - 1,
            0,
            s.n_categories - 1,
        ).astype(np.int64)

    def predict_action(self, user, times, actions, t) -> int:
        times = np.asarray(times, dtype=float)
        actions = np.asarray(actions, dtype=np.int64)
        lam = _intensity_vector_arrays(
            self.params, self.params.alpha_row(user), times, actions, self._cats(times), t
        )
        return int(np.argmax(lam))

    def predict_time(self, user, times, actions, seed=0) -> float:
        events = tuple(
            EventRecord(action=int(a), t=float(t)) for t, a in zip(times, actions)
        )
        try:
            pred = predict_next_time(
                self.params,
                user,
                events,
                n_samples=self.n_samples,
                seed=seed,
                horizon_filter=self.horizon_filter,
                censor_factor=self.censor_factor,
                bound_window=self.bound_window,
            )
        except CensoredPredictionError:
            return math.nan
        return pred.time


def make_tipas_factory(
    config: FitConfig,
    name: str = "tipas",
    n_samples: int = 100,
    horizon_filter: float = 12.0,
    censor_factor: float = 10.0,
):
    """Factory for the evaluation driver: fits on each training window."""

    def factory(train: Sequence[UserHistory], T: float) -> TipasPredictor:
        params, _ = fit(train, replace(config, horizon=T))
        return TipasPredictor(
            params,
            name=name,
            n_samples=n_samples,
            horizon_filter=horizon_filter,
            censor_factor=censor_factor,
        )

    return factory


def _run_time_tasks(model, tasks: list[tuple], n_workers: int) -> list[float]:
    def run(task):
        u, times, acts, seed, _, _ = task
        return model.predict_time(u, times, acts, seed=seed)

    if n_workers > 1 and getattr(model, "parallel_safe", False):
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            return list(pool.map(run, tasks))
    return [run(task) for task in tasks]


def make_windows(start: float, end: float, width: float) -> list[tuple[float, float]]:
    """Consecutive fixed-width windows covering [start, end]."""
    if width <= 0 or end <= start:
        raise InvalidInputError("need width > 0 and end > start")
    out = []
    s = start
    while s + width <= end + 1e-9:
        out.append((s, s + width))
        s += width
    return out


def rolling_window_eval(
    histories: Sequence[UserHistory],
    model_factory: Callable[[Sequence[UserHistory], float], object],
    windows: Sequence[tuple[float, float]],
    *,
    n_actions: int,
    horizon_filter: float = 12.0,
    with_time: bool = True,
    time_seed: int = 0,
    n_workers: int = 1,
) -> EvalReport:
    """Fit on window k, score window k+1, for every consecutive pair.

    Predictions for a test event condition on every earlier event from the
    training window onward (test events included) without refitting; the
    time axis is shifted so each training window starts at zero.  Windows
    should start on day boundaries or the time-of-day structure would shift.
    """
    if len(windows) < 2:
        raise InvalidInputError("need at least two windows")
    day = 24.0
    report = EvalReport(horizon_filter=horizon_filter, n_actions=n_actions)
    user_order = sorted({h.user for h in histories})
    user_idx = {u: i for i, u in enumerate(user_order)}
    by_user = {h.user: h for h in histories}

    all_preds: list[int] = []
    all_truths: list[int] = []
    all_errors: list[float] = []

    for pair_idx, ((tr_s, tr_e), (te_s, te_e)) in enumerate(
        zip(windows[:-1], windows[1:])
    ):
        if tr_s % day != 0:
            logger.warning(
                "window start %.3f is not a day boundary; time-of-day patterns shift",
                tr_s,
            )
        shift = tr_s
        train = []
        train_users = set()
        for u in user_order:
            evs = tuple(
                EventRecord(e.action, e.t - shift)
                for e in by_user[u].events
                if tr_s <= e.t < tr_e
            )
            if evs:
                train.append(UserHistory(u, evs))
                train_users.add(u)
        n_test = sum(
            1 for h in histories for e in h.events if te_s <= e.t < te_e
        )
        if not train or not n_test:
            logger.warning(
                "skipping window pair %d: %d training users, %d test events",
                pair_idx,
                len(train),
                n_test,
            )
            continue
        model = model_factory(train, tr_e - tr_s)

        w = WindowResult(train_start=tr_s, train_end=tr_e, test_end=te_e)
        w_preds: list[int] = []
        w_truths: list[int] = []
        w_errors: list[float] = []
        does_action = getattr(model, "supports_action", False)
        does_time = with_time and getattr(model, "supports_time", False)
        time_tasks: list[tuple] = []  # (user, times, acts, seed, t_loc, last_t)

        for u in user_order:
            test_events = [e for e in by_user[u].events if te_s <= e.t < te_e]
            if not test_events:
                continue
            if u not in train_users:
                w.n_coldstart += 1
            prefix_t = [e.t - shift for e in by_user[u].events if tr_s <= e.t < tr_e]
            prefix_a = [e.action for e in by_user[u].events if tr_s <= e.t < tr_e]
            for eidx, ev in enumerate(test_events):
                t_loc = ev.t - shift
                times = np.asarray(prefix_t)
                acts = np.asarray(prefix_a, dtype=np.int64)
                if does_action:
                    w_preds.append(int(model.predict_action(u, times, acts, t_loc)))
                    w_truths.append(ev.action)
                if does_time and len(prefix_t):
                    seed = (time_seed, pair_idx, user_idx[u], eidx)
                    time_tasks.append((u, times, acts, seed, t_loc, prefix_t[-1]))
                prefix_t.append(t_loc)
                prefix_a.append(ev.action)

        # time predictions run as a second pass so they can fan out over
        # threads; gathering by task order keeps the report deterministic
        if time_tasks:
            w.n_time_predictions = len(time_tasks)
            results = _run_time_tasks(model, time_tasks, n_workers)
            for (u, _, _, _, t_loc, last_t), pred_t in zip(time_tasks, results):
                if pred_t is None or math.isnan(pred_t):
                    w.n_censored += 1
                elif t_loc - last_t <= horizon_filter:
                    w_errors.append(abs(pred_t - t_loc))

        if w_preds:
            w.n_predictions = len(w_preds)
            w.accuracy = accuracy(w_preds, w_truths)
            w.macro_recall = macro_recall(w_preds, w_truths, n_actions)
            w.per_action_recall = [
                float(r) for r in per_action_recall(w_preds, w_truths, n_actions)
            ]
        if w_errors:
            w.mae_hours = float(np.mean(w_errors))
        w.n_filtered = len(w_errors)
        report.windows.append(w)
        all_preds.extend(w_preds)
        all_truths.extend(w_truths)
        all_errors.extend(w_errors)
        report.n_censored += w.n_censored
        report.n_coldstart += w.n_coldstart

    return finalize_report(report, all_preds, all_truths, all_errors)
