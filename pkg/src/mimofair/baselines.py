"""Comparison transceiver designs: sum-rate WMMSE, sum-MSE, log-sum-exp
max-min smoothing, and a geometric-mean weight schedule.

All four alternate MMSE receiver updates, a per-kind weight rule, and the
same power-constrained beamformer update with uniform user multipliers; the
kind's weighting is folded into the weight matrices.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .model import (
    ChannelSet,
    ConfigError,
    NetworkTopology,
    TransceiverState,
    UserId,
    check_power_feasible,
    weight_update,
)
from .maxmin import MaxminOptions, SolverTrace, _record, initial_state
from .model import mmse_receiver
from .qv import weighted_v_update

GEOMEAN_RATE_FLOOR = 1e-3  # bits; keeps the 1/rate weight bounded


class BaselineKind(str, Enum):
    SUM_RATE_WMMSE = "wmmse"
    SUM_MSE = "mmse"
    LOG_SUM_EXP = "lse"
    GEOMEAN_WMMSE = "gwmmse"


def _kind_weights(
    kind: BaselineKind,
    topology: NetworkTopology,
    errors: dict[UserId, np.ndarray],
    rates: np.ndarray,
) -> dict[UserId, np.ndarray]:
    users = topology.users()
    if kind is BaselineKind.SUM_MSE:
        return {
            u_: np.eye(topology.stream_count(u_), dtype=complex) for u_ in users
        }
    if kind is BaselineKind.SUM_RATE_WMMSE:
        return {u_: weight_update(errors[u_]) for u_ in users}
    if kind is BaselineKind.LOG_SUM_EXP:
        raw = np.power(2.0, -rates)
        scaled = raw * (len(users) / raw.sum())  # renormalized for comparability
        return {
            u_: s * weight_update(errors[u_]) for u_, s in zip(users, scaled)
        }
    if kind is BaselineKind.GEOMEAN_WMMSE:
        return {
            u_: weight_update(errors[u_]) / max(float(r), GEOMEAN_RATE_FLOOR)
            for u_, r in zip(users, rates)
        }
    raise ConfigError(f"unknown baseline kind {kind!r}")


def _objective(kind: BaselineKind, errors: dict[UserId, np.ndarray], rates) -> float:
    if kind is BaselineKind.SUM_MSE:
        return float(sum(np.trace(e).real for e in errors.values()))
    if kind is BaselineKind.SUM_RATE_WMMSE:
        return -float(np.sum(rates))
    if kind is BaselineKind.LOG_SUM_EXP:
        return float(np.log2(np.sum(np.power(2.0, -rates))))
    return -float(np.sum(np.log2(np.maximum(rates, GEOMEAN_RATE_FLOOR))))


def run_baseline(
    kind: BaselineKind | str,
    topology: NetworkTopology,
    channels: ChannelSet,
    init: TransceiverState | None = None,
    options: MaxminOptions | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[TransceiverState, SolverTrace]:
    """Run a baseline design; trace rows carry the kind's own objective.

    Sum-MSE and log-sum-exp operate on scalar MSEs and therefore require a
    single stream per user.  Stopping mirrors the max-min solver: relative
    change of the kind's objective.
    """
    kind = BaselineKind(kind)
    opts = options or MaxminOptions()
    if kind in (BaselineKind.SUM_MSE, BaselineKind.LOG_SUM_EXP):
        if any(topology.stream_count(u_) != 1 for u_ in topology.users()):
            raise ConfigError(f"{kind.value} baseline requires one stream per user")

    state = init.copy() if init is not None else initial_state(topology, channels, rng=rng)
    check_power_feasible(topology, state.v)

    users = topology.users()
    n = len(users)
    mu_uniform = np.full(n, 1.0 / n)
    trace = SolverTrace(kind=kind.value)

    v = state.v
    obj_prev = None
    for it in range(opts.max_iters + 1):
        receivers: dict[UserId, np.ndarray] = {}
        errors: dict[UserId, np.ndarray] = {}
        rates = np.empty(n)
        for j, u_ in enumerate(users):
            receivers[u_], stats = mmse_receiver(topology, channels, v, u_)
            errors[u_] = stats.e_mmse
            rates[j] = stats.rate
        rec = _record(topology, v, rates, it)
        obj = _objective(kind, errors, rates)
        rec.objective = obj
        trace.records.append(rec)
        if obj_prev is not None and abs(obj - obj_prev) <= opts.rel_tol * (
            1.0 + abs(obj_prev)
        ):
            trace.converged = True
            break
        obj_prev = obj
        if it == opts.max_iters:
            break
        weights = _kind_weights(kind, topology, errors, rates)
        v, _ = weighted_v_update(topology, channels, receivers, weights, mu_uniform)

    u_final, w_final = {}, {}
    for u_ in users:
        u_final[u_], stats = mmse_receiver(topology, channels, v, u_)
        w_final[u_] = weight_update(stats.e_mmse)
    final_rates = trace.records[-1].rates
    state = TransceiverState(v=v, u=u_final, w=w_final, worst_rate=min(final_rates))
    return state, trace
