"""Flattened event/pair arrays shared by the likelihood and EM engines.

Event pairs (m < n within one user) drive both the short-term kernel sums
and the latent-attribution bookkeeping, so they are materialized once per
dataset: ``sp_*`` arrays hold every ordered pair, ``lp_*`` the same-action
subset used by the long-term kernel.  All gaps are pre-clamped for ties.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .model import ModelStructure, UserHistory, clamp_gaps


@dataclass(frozen=True)
class EventPanel:
    structure: ModelStructure
    T: float
    users: tuple[str, ...]

    # per event, length N
    ev_user: np.ndarray  # int user index
    ev_t: np.ndarray
    ev_a: np.ndarray
    ev_tod: np.ndarray
    ev_cat: np.ndarray
    ev_tail: np.ndarray  # T - t
    ev_pos: np.ndarray  # index of the event inside its own history

    # every (earlier m, later n) pair within a user, length P
    sp_src: np.ndarray
    sp_dst: np.ndarray
    sp_dt: np.ndarray
    sp_a_src: np.ndarray
    sp_a_dst: np.ndarray

    # same-action subset, length L
    lp_src: np.ndarray
    lp_dst: np.ndarray
    lp_dt: np.ndarray
    lp_c_src: np.ndarray
    lp_a: np.ndarray

    @property
    def n_events(self) -> int:
        return int(self.ev_t.size)

    @property
    def n_users(self) -> int:
        return len(self.users)

    def event_label(self, n: int) -> tuple[str, int]:
        """(user key, index within that user's history) for diagnostics."""
        return self.users[int(self.ev_user[n])], int(self.ev_pos[n])


def build_panel(
    histories: Sequence[UserHistory],
    structure: ModelStructure,
    T: float,
    lookback_cap: int | None = None,
) -> EventPanel:
    if T <= 0:
        raise InvalidInputError(f"observation horizon must be positive, got {T}")
    if lookback_cap is not None and lookback_cap < 1:
        raise InvalidInputError(f"lookback_cap must be >= 1, got {lookback_cap}")

    users: list[str] = []
    ev_user, ev_t, ev_a, ev_pos = [], [], [], []
    sp_src, sp_dst = [], []
    offset = 0
    for hist in histories:
        if hist.user in users:
            raise InvalidInputError(f"duplicate history for user {hist.user!r}")
        uid = len(users)
        users.append(hist.user)
        n = len(hist.events)
        if n == 0:
            continue
        t = hist.times()
        a = hist.actions()
        if t[-1] > T:
            raise InvalidInputError(
                f"user {hist.user!r} has an event at t={t[-1]} beyond T={T}"
            )
        if a.max() >= structure.n_actions:
            raise InvalidInputError(
                f"user {hist.user!r} uses action {a.max()} but the model has "
                f"{structure.n_actions} actions"
            )
        ev_user.append(np.full(n, uid, dtype=np.int64))
        ev_t.append(t)
        ev_a.append(a)
        ev_pos.append(np.arange(n, dtype=np.int64))
        if n > 1:
            src_i, dst_i = np.triu_indices(n, k=1)
            if lookback_cap is not None:
                keep = (dst_i - src_i) <= lookback_cap
                src_i, dst_i = src_i[keep], dst_i[keep]
            sp_src.append(src_i + offset)
            sp_dst.append(dst_i + offset)
        offset += n

    def cat_int(parts, dtype=np.int64):
        if parts:
            return np.ascontiguousarray(np.concatenate(parts), dtype=dtype)
        return np.empty(0, dtype=dtype)

    ev_user_arr = cat_int(ev_user)
    ev_t_arr = cat_int(ev_t, np.float64)
    ev_a_arr = cat_int(ev_a)
    ev_pos_arr = cat_int(ev_pos)
    sp_src_arr = cat_int(sp_src)
    sp_dst_arr = cat_int(sp_dst)

    edges = np.asarray(structure.tod_edges)
    ev_tod = ev_t_arr % structure.day_length
    ev_cat = np.clip(
        np.searchsorted(edges, ev_tod, side="right") - 1, 0, structure.n_categories - 1
    ).astype(np.int64)

    sp_dt = clamp_gaps(ev_t_arr[sp_dst_arr] - ev_t_arr[sp_src_arr])
    sp_a_src = ev_a_arr[sp_src_arr]
    sp_a_dst = ev_a_arr[sp_dst_arr]

    same = sp_a_src == sp_a_dst
    lp_src = sp_src_arr[same]
    lp_dst = sp_dst_arr[same]

    arrays = dict(
        ev_user=ev_user_arr,
        ev_t=ev_t_arr,
        ev_a=ev_a_arr,
        ev_tod=ev_tod,
        ev_cat=ev_cat,
        ev_tail=T - ev_t_arr,
        ev_pos=ev_pos_arr,
        sp_src=sp_src_arr,
        sp_dst=sp_dst_arr,
        sp_dt=sp_dt,
        sp_a_src=sp_a_src,
        sp_a_dst=sp_a_dst,
        lp_src=lp_src,
        lp_dst=lp_dst,
        lp_dt=sp_dt[same],
        lp_c_src=ev_cat[lp_src],
        lp_a=ev_a_arr[lp_dst],
    )
    for arr in arrays.values():
        arr.flags.writeable = False
    return EventPanel(structure=structure, T=float(T), users=tuple(users), **arrays)
