"""Alternating max-min transceiver design with convergence and KKT monitoring.

One iteration solves the min-max beamformer subproblem for fixed (U, W), then
refreshes U to the MMSE receivers and W to the inverse MSE matrices.  The
surrogate objective G (bits) is recorded at the refreshed points, where it
equals minus the worst-user rate.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
import scipy.optimize

from .model import (
    LN2,
    ChannelSet,
    FeasibilityError,
    ModelError,
    NetworkTopology,
    ShapeError,
    TransceiverState,
    UserId,
    cell_powers,
    check_power_feasible,
    hermitize,
    refresh_receivers_and_weights,
    user_rate,
)
from .qv import QvOptions, solve_qv


@dataclass
class MaxminOptions:
    max_iters: int = 300
    rel_tol: float = 1e-6
    stop_on: str = "objective"  # "objective" | "min_rate" | "none"
    # the objective plateaus well before the iterate stops moving, so the
    # stop additionally requires a first-order certificate (with bounded
    # patience to keep termination within max_iters)
    stat_tol: float = 5e-5
    stat_patience: int = 80
    # subproblem solves tighter than the outer tolerance: the iterate hovers
    # within ~sqrt(inner gap) of the fixed point, which must stay below the
    # certificate's threshold
    qv: QvOptions = field(
        default_factory=lambda: QvOptions(tol_gap=1e-9, max_outer=4000)
    )


@dataclass
class TraceRecord:
    iteration: int
    objective: float
    min_rate: float
    rates: tuple[float, ...]
    powers: tuple[float, ...]
    event: str = ""


@dataclass
class SolverTrace:
    """Per-iteration history of one run; the exportable contract of a solve."""

    kind: str
    records: list[TraceRecord] = field(default_factory=list)
    converged: bool = False
    qv_failures: int = 0

    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    def min_rates(self) -> np.ndarray:
        return np.array([r.min_rate for r in self.records])

    def csv_header(self) -> list[str]:
        n_users = len(self.records[0].rates)
        n_cells = len(self.records[0].powers)
        return (
            ["kind", "iteration", "G", "min_rate"]
            + [f"rate_{j}" for j in range(n_users)]
            + [f"power_{k}" for k in range(n_cells)]
            + ["event"]
        )

    def csv_rows(self) -> list[list]:
        return [
            [self.kind, r.iteration, r.objective, r.min_rate]
            + list(r.rates)
            + list(r.powers)
            + [r.event]
            for r in self.records
        ]


def initial_state(
    topology: NetworkTopology,
    channels: ChannelSet,
    kind: str = "svd",
    rng: np.random.Generator | None = None,
) -> TransceiverState:
    """Power-feasible starting point with refreshed receivers and weights.

    ``svd`` aligns each precoder with the leading right singular vectors of
    the direct channel; ``random`` draws an isotropic complex Gaussian
    precoder.  Both split the cell budget equally among the cell's users.
    """
    v: dict[UserId, np.ndarray] = {}
    for user in topology.users():
        k = user[0]
        m = topology.tx_antennas[k]
        d = topology.stream_count(user)
        share = topology.power_budgets[k] / topology.users_per_cell[k]
        if kind == "svd":
            _, _, vh = np.linalg.svd(channels.h(user, k))
            v[user] = np.sqrt(share / d) * vh.conj().T[:, :d]
        elif kind == "random":
            if rng is None:
                rng = np.random.default_rng()
            g = rng.standard_normal((m, d)) + 1j * rng.standard_normal((m, d))
            v[user] = g * np.sqrt(share) / np.linalg.norm(g)
        else:
            raise ValueError(f"unknown init kind {kind!r}")
    u, w, rates = refresh_receivers_and_weights(topology, channels, v)
    return TransceiverState(v=v, u=u, w=w, worst_rate=float(rates.min()))


def _record(topology, v, rates, iteration, event="") -> TraceRecord:
    return TraceRecord(
        iteration=iteration,
        objective=-float(rates.min()),
        min_rate=float(rates.min()),
        rates=tuple(float(r) for r in rates),
        powers=tuple(cell_powers(topology, v)),
        event=event,
    )


def maxmin_step(
    topology: NetworkTopology,
    channels: ChannelSet,
    state: TransceiverState,
    qv_options: QvOptions | None = None,
    mu_warm: np.ndarray | None = None,
):
    """One subproblem solve plus MMSE refresh.

    Returns the refreshed state, the per-user rates, and the subproblem
    solution (whose multipliers can warm-start the next step).
    """
    sol = solve_qv(
        topology,
        channels,
        state.u,
        state.w,
        options=qv_options,
        initial_v=state.v,
        initial_mu=mu_warm,
    )
    u, w, rates = refresh_receivers_and_weights(topology, channels, sol.beamformers)
    new_state = TransceiverState(
        v=sol.beamformers, u=u, w=w, worst_rate=float(rates.min())
    )
    return new_state, rates, sol


def run_maxmin(
    topology: NetworkTopology,
    channels: ChannelSet,
    init: TransceiverState | None = None,
    options: MaxminOptions | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[TransceiverState, SolverTrace]:
    """Alternate subproblem solves and MMSE refreshes until G stalls.

    The stop rule is a relative change test on G (or on the min rate when
    ``stop_on='min_rate'``).  The returned state always carries freshly
    refreshed receivers and weights.  A subproblem that exhausts its budget
    is counted in ``trace.qv_failures`` and the run continues with its best
    iterate.
    """
    opts = options or MaxminOptions()
    if init is None:
        state = initial_state(topology, channels, rng=rng)
    else:
        state = init.copy()
        check_power_feasible(topology, state.v)
        u, w, rates0 = refresh_receivers_and_weights(topology, channels, state.v)
        state = TransceiverState(v=state.v, u=u, w=w, worst_rate=float(rates0.min()))

    rates = np.array(
        [user_rate(topology, channels, u_, beamformers=state.v) for u_ in topology.users()]
    )
    trace = SolverTrace(kind="maxmin")
    trace.records.append(_record(topology, state.v, rates, 0))

    # loose, hard-capped subproblem solves while the objective is still
    # moving; full-budget tight solves only for the terminal iterates that
    # get certified
    qv_loose = replace(
        opts.qv,
        tol_gap=max(opts.qv.tol_gap, 1e-6),
        max_outer=min(opts.qv.max_outer, 400),
    )
    tight_phase = False

    mu_warm: np.ndarray | None = None
    g_prev = -float(rates.min())
    patience_start: int | None = None
    best_stat = np.inf
    best_state = state
    cert_stall = 0
    for n in range(1, opts.max_iters + 1):
        state, rates, sol = maxmin_step(
            topology,
            channels,
            state,
            qv_options=opts.qv if tight_phase else qv_loose,
            mu_warm=mu_warm,
        )
        if not sol.converged:
            trace.qv_failures += 1
        mu_warm = sol.dual.mu
        g = -float(rates.min())
        trace.records.append(_record(topology, state.v, rates, n))
        if opts.stop_on in ("objective", "min_rate"):
            plateau = abs(g - g_prev) <= opts.rel_tol * (1.0 + abs(g_prev))
        else:
            plateau = False
        g_prev = g
        if not plateau:
            patience_start = None
            continue
        if not tight_phase:
            tight_phase = True  # one-way switch; redo the tail with tight solves
            continue
        if patience_start is None:
            patience_start = n
        report = kkt_residuals(topology, channels, state)
        if report.stationarity_residual < best_stat:
            best_stat = report.stationarity_residual
            best_state = state
            cert_stall = 0
        else:
            cert_stall += 1
        if report.stationarity_residual <= opts.stat_tol:
            trace.converged = True
            break
        if cert_stall >= 6 or n - patience_start >= opts.stat_patience:
            # certification has stopped improving; keep the best-certified
            # tail iterate (all tail iterates share the plateaued objective)
            state = best_state
            trace.converged = True
            break
    return state, trace


# ---------------------------------------------------------------------------
# KKT certification
# ---------------------------------------------------------------------------

@dataclass
class KktReport:
    active_set: tuple[UserId, ...]
    mu: dict[UserId, float]
    eps: np.ndarray
    stationarity_residual: float
    complementarity_residual: float
    feasibility_residual: float
    kkt_tol: float

    @property
    def passed(self) -> bool:
        return (
            self.stationarity_residual <= self.kkt_tol
            and self.complementarity_residual <= self.kkt_tol
            and self.feasibility_residual <= self.kkt_tol
        )


def rate_gradients(
    topology: NetworkTopology,
    channels: ChannelSet,
    beamformers: Mapping[UserId, np.ndarray],
) -> list[dict[UserId, np.ndarray]]:
    """Conjugate (Wirtinger) gradients of every user rate w.r.t. every precoder.

    For rate R_i = log2 det(J_i) - log2 det(Jbar_i), with J_i the full
    received covariance and Jbar_i the interference-plus-noise part,
    the gradient w.r.t. V_m is H^H (J_i^{-1} - [m != i] Jbar_i^{-1}) H V_m / ln 2.
    """
    users = topology.users()
    grads: list[dict[UserId, np.ndarray]] = []
    for i_user in users:
        n = topology.rx_antenna_count(i_user)
        j_full = topology.noise_power(i_user) * np.eye(n, dtype=complex)
        for m_user in users:
            h = channels.h(i_user, m_user[0])
            hv = h @ beamformers[m_user]
            j_full = j_full + hv @ hv.conj().T
        hv_own = channels.h(i_user, i_user[0]) @ beamformers[i_user]
        j_bar = hermitize(j_full - hv_own @ hv_own.conj().T)
        j_full = hermitize(j_full)
        jinv = np.linalg.inv(j_full)
        jbar_inv = np.linalg.inv(j_bar)
        g_i: dict[UserId, np.ndarray] = {}
        for m_user in users:
            h = channels.h(i_user, m_user[0])
            core = jinv if m_user == i_user else jinv - jbar_inv
            g_i[m_user] = (h.conj().T @ core @ h @ beamformers[m_user]) / LN2
        grads.append(g_i)
    return grads


def kkt_residuals(
    topology: NetworkTopology,
    channels: ChannelSet,
    state: TransceiverState,
    rate_tol: float = 1e-5,
    mu_tol: float = 1e-8,
    kkt_tol: float = 1e-4,
) -> KktReport:
    """Estimate multipliers and report first-order optimality residuals.

    Expects a state with refreshed receivers and weights.  The user
    multipliers are fit by least squares on the stationarity equation
    restricted to users within ``rate_tol`` of the minimum rate, then
    projected to the simplex; the per-cell power multipliers are recovered
    from the fitted gradient sum.  Residuals are relative to the gradient
    scale, so the report is invariant under channel rescaling.
    """
    users = topology.users()
    rates = np.array(
        [user_rate(topology, channels, u_, beamformers=state.v) for u_ in users]
    )
    lam = float(rates.min())
    active = [u_ for u_, r in zip(users, rates) if r <= lam + rate_tol]
    if not active:
        raise ModelError("empty active set; rate_tol must be positive")

    grads = rate_gradients(topology, channels, state.v)
    grad_by_user = dict(zip(users, grads))

    def vec(blocks: Mapping[UserId, np.ndarray]) -> np.ndarray:
        parts = []
        for m_user in users:
            b = blocks[m_user]
            parts.append(b.real.ravel())
            parts.append(b.imag.ravel())
        return np.concatenate(parts)

    g_cols = np.stack([vec(grad_by_user[a]) for a in active], axis=1)
    v_cols = []
    for k in range(topology.num_cells):
        masked = {
            m_user: (state.v[m_user] if m_user[0] == k else np.zeros_like(state.v[m_user]))
            for m_user in users
        }
        v_cols.append(-vec(masked))
    design = np.concatenate([g_cols, np.stack(v_cols, axis=1)], axis=1)

    scale = max(np.abs(design).max(), 1e-12)
    eq_weight = 1e4 * scale
    eq_row = np.concatenate(
        [np.full(len(active), eq_weight), np.zeros(topology.num_cells)]
    )
    a_mat = np.vstack([design, eq_row])
    b_vec = np.concatenate([np.zeros(design.shape[0]), [eq_weight]])
    res = scipy.optimize.lsq_linear(a_mat, b_vec, bounds=(0.0, np.inf))
    mu_active = np.maximum(res.x[: len(active)], 0.0)
    if mu_active.sum() <= 0:
        mu_active = np.full(len(active), 1.0 / len(active))
    mu_active /= mu_active.sum()

    mu = {u_: 0.0 for u_ in users}
    for a, m in zip(active, mu_active):
        mu[a] = float(m)

    # weighted gradient sum, then the best per-cell power multiplier given mu
    g_sum = {
        m_user: sum(
            mu[a] * grad_by_user[a][m_user] for a in active
        )
        for m_user in users
    }
    eps = np.zeros(topology.num_cells)
    for k in range(topology.num_cells):
        num = 0.0
        den = 0.0
        for m_user in users:
            if m_user[0] != k:
                continue
            num += float(np.sum((state.v[m_user].conj() * g_sum[m_user]).real))
            den += float(np.sum(np.abs(state.v[m_user]) ** 2))
        eps[k] = max(0.0, num / den) if den > 0 else 0.0

    resid_sq = 0.0
    gsum_sq = 0.0
    for m_user in users:
        r = g_sum[m_user] - eps[m_user[0]] * state.v[m_user]
        resid_sq += float(np.sum(np.abs(r) ** 2))
        gsum_sq += float(np.sum(np.abs(g_sum[m_user]) ** 2))
    stationarity = np.sqrt(resid_sq) / (1.0 + np.sqrt(gsum_sq))

    comp_users = max(
        mu[u_] * max(r - lam, 0.0) / (1.0 + abs(lam)) for u_, r in zip(users, rates)
    )
    powers = cell_powers(topology, state.v)
    budgets = np.asarray(topology.power_budgets)
    comp_power = float(np.max(eps * np.maximum(budgets - powers, 0.0) / budgets))
    feasibility = float(np.max(np.maximum(powers - budgets, 0.0) / budgets))

    return KktReport(
        active_set=tuple(u_ for u_ in users if mu[u_] > mu_tol),
        mu=mu,
        eps=eps,
        stationarity_residual=float(stationarity),
        complementarity_residual=float(max(comp_users, comp_power)),
        feasibility_residual=feasibility,
        kkt_tol=kkt_tol,
    )


# ---------------------------------------------------------------------------
# Dynamic events
# ---------------------------------------------------------------------------

@dataclass
class UserJoin:
    """A new user enters ``cell``; incumbents give up 1/3 of their power.

    ``channel_gains[l]`` is the joining user's channel from cell l.  The new
    precoder is drawn isotropically within the freed power budget.
    """

    cell: int
    channel_gains: Mapping[int, np.ndarray]
    rx_antennas: int
    streams: int = 1
    noise_power: float = 1.0
    rng: np.random.Generator | None = None


@dataclass
class ChannelChange:
    """The channel set is replaced; the transceiver state is carried over."""

    channels: ChannelSet


def reinitialize_on_event(
    topology: NetworkTopology,
    channels: ChannelSet,
    state: TransceiverState,
    event: UserJoin | ChannelChange,
) -> tuple[NetworkTopology, ChannelSet, TransceiverState]:
    """Apply a dynamic event, returning the updated scenario and warm start."""
    if isinstance(event, ChannelChange):
        event.channels.validate(topology)
        return topology, event.channels, state

    if not isinstance(event, UserJoin):
        raise ValueError(f"unknown event {event!r}")
    k = event.cell
    if not 0 <= k < topology.num_cells:
        raise ShapeError(f"no cell {k} to join")
    old_count = topology.users_per_cell[k]
    new_user: UserId = (k, old_count)

    per_cell = lambda tup, extra: tuple(
        tup[c] + (extra,) if c == k else tup[c] for c in range(topology.num_cells)
    )
    topo2 = NetworkTopology(
        users_per_cell=tuple(
            n + 1 if c == k else n for c, n in enumerate(topology.users_per_cell)
        ),
        tx_antennas=topology.tx_antennas,
        rx_antennas=per_cell(topology.rx_antennas, event.rx_antennas),
        streams=per_cell(topology.streams, event.streams),
        power_budgets=topology.power_budgets,
        noise_powers=per_cell(topology.noise_powers, event.noise_power),
    )
    gains = dict(channels.gains)
    for cell in range(topo2.num_cells):
        gains[(new_user, cell)] = np.asarray(event.channel_gains[cell], dtype=complex)
    ch2 = ChannelSet(gains=gains)
    ch2.validate(topo2)

    v2 = {u_: a.copy() for u_, a in state.v.items()}
    used = 0.0
    for u_ in topology.users():
        if u_[0] == k:
            v2[u_] = v2[u_] * np.sqrt(2.0 / 3.0)
            used += float(np.sum(np.abs(v2[u_]) ** 2))
    residual = topology.power_budgets[k] - used
    if residual <= 0.0:
        raise FeasibilityError("cell has no power left for the joining user")
    rng = event.rng or np.random.default_rng()
    m = topo2.tx_antennas[k]
    g = rng.standard_normal((m, event.streams)) + 1j * rng.standard_normal(
        (m, event.streams)
    )
    v2[new_user] = g * np.sqrt(residual) / np.linalg.norm(g)

    u2, w2, rates = refresh_receivers_and_weights(topo2, ch2, v2)
    return topo2, ch2, TransceiverState(v=v2, u=u2, w=w2, worst_rate=float(rates.min()))
