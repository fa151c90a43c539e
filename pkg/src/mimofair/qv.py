"""Convex min-max beamformer subproblem for fixed receive filters and weights.

Solves, over power-feasible V, the minimization of the worst per-user
weighted-MSE surrogate cost.  Method: Lagrangian dual decomposition --
closed-form per-cell beamformers given simplex multipliers mu and power
multipliers eps (found by a bracketed Newton search on the power equation),
entropic mirror ascent on mu.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .model import (
    LN2,
    ChannelSet,
    NetworkTopology,
    SolverError,
    UserId,
    hermitize,
)

MU_FLOOR = 1e-15
STEP_FLOOR = 1e-6


def hermitize_stack(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


@dataclass
class QvOptions:
    """Tolerances and budgets for the subproblem solver."""

    tol_gap: float = 1e-6
    max_outer: int = 2000
    max_bisect: int = 200
    initial_step: float = 1.0


@dataclass
class DualState:
    """Simplex multipliers, per-cell power multipliers, and the gap estimate."""

    mu: np.ndarray
    eps: np.ndarray
    gap: float


@dataclass
class QvSolution:
    beamformers: dict[UserId, np.ndarray]
    gamma: float
    dual: DualState
    iterations: int
    converged: bool
    dual_values: list[float] | None = None  # accepted (monotone) dual sequence


def _solve_power_multiplier(
    lam: np.ndarray, s_row: np.ndarray, budget: float, max_iters: int
) -> float:
    """Smallest eps >= 0 with sum_j s_row[j] / (lam[j] + eps)^2 <= budget.

    The power is convex and decreasing in eps, so Newton iterates started
    from a left bracket increase monotonically to the root; bisection is the
    fallback whenever a step misbehaves.
    """

    def power(e: float) -> float:
        return float(np.sum(s_row / (lam + e) ** 2))

    hi = max(float(lam[-1]), 1.0)
    doublings = 0
    while power(hi) > budget:
        hi *= 2.0
        doublings += 1
        if doublings > 64:
            raise SolverError("power bisection failed to bracket")
    lo = 0.0
    e = lo
    for _ in range(max_iters):
        denom = lam + e
        with np.errstate(divide="ignore", invalid="ignore"):
            p = float(np.sum(s_row / denom**2))
        if not np.isfinite(p):  # zero modes at e = 0
            lo = e
            e = 0.5 * (lo + hi) if hi > lo else hi
            continue
        resid = p - budget
        if 0.0 <= -resid <= 1e-13 * budget or hi - lo <= 1e-16 * max(hi, 1.0):
            if resid > 0:
                e = hi
            break
        if resid > 0:
            lo = e
        else:
            hi = e
        dp = -2.0 * float(np.sum(s_row / denom**3))
        e_newton = e - resid / dp if dp != 0 else lo
        if lo < e_newton < hi:
            e = e_newton
        else:
            e = 0.5 * (lo + hi)
    else:
        e = hi
    return e


class _QvContext:
    """Quantities that depend only on (topology, channels, U, W).

    The inner Lagrangian separates per cell into a quadratic with matrix
    A_l(mu) = sum_i mu_i T_i^(l) plus linear terms mu_m C_m for the cell's own
    users, so the minimizer is closed form once the power multiplier is fixed.
    """

    def __init__(
        self,
        topology: NetworkTopology,
        channels: ChannelSet,
        receivers: Mapping[UserId, np.ndarray],
        weights: Mapping[UserId, np.ndarray],
    ) -> None:
        self.topology = topology
        self.users = topology.users()
        self.n_users = len(self.users)
        self.index = {u: j for j, u in enumerate(self.users)}
        self.cell_users = [
            [u for u in self.users if u[0] == k] for k in range(topology.num_cells)
        ]
        self.col_of: dict[UserId, int] = {}
        for members in self.cell_users:
            col = 0
            for u_ in members:
                self.col_of[u_] = col
                col += topology.stream_count(u_)

        n_cells = topology.num_cells
        # per cell: stacked T_i^(l) = (H_il^H U_i) W_i (H_il^H U_i)^H over all users
        self.t_stack: list[np.ndarray] = []
        # per cell: unscaled linear coefficients C_m = H_ml^H U_m W_m, own users only
        self.c_own: list[np.ndarray] = []  # (M_l, D_l) column-stacked
        self.own_mu_cols: list[np.ndarray] = []  # user weight index per column
        for k in range(n_cells):
            m = topology.tx_antennas[k]
            stack = np.zeros((self.n_users, m, m), dtype=complex)
            for j, user in enumerate(self.users):
                p = channels.h(user, k).conj().T @ receivers[user]
                stack[j] = hermitize(p @ weights[user] @ p.conj().T)
            self.t_stack.append(stack)
            cols, mu_cols = [], []
            for u_ in self.cell_users[k]:
                c = channels.h(u_, k).conj().T @ receivers[u_] @ weights[u_]
                cols.append(c)
                mu_cols.extend([self.index[u_]] * topology.stream_count(u_))
            self.c_own.append(np.concatenate(cols, axis=1))
            self.own_mu_cols.append(np.array(mu_cols))

        # surrogate pieces (nats): Tr(W E) = affine - 2 Re tr(WUH V_own)
        #   + sum_l ||Gw_l V_l||_F^2, with the noise term folded into affine
        self.affine = np.zeros(self.n_users)
        gw_rows: list[list[np.ndarray]] = [[] for _ in range(n_cells)]
        own_rows: list[list[np.ndarray]] = [[] for _ in range(n_cells)]
        self.user_row_starts: list[np.ndarray] = []
        for j, user in enumerate(self.users):
            w = weights[user]
            u = receivers[user]
            evals, evecs = np.linalg.eigh(hermitize(w))
            w_half = (evecs * np.sqrt(np.maximum(evals, 0.0))) @ evecs.conj().T
            for k in range(n_cells):
                gw_rows[k].append(w_half @ u.conj().T @ channels.h(user, k))
            own_rows[user[0]].append(w @ u.conj().T @ channels.h(user, user[0]))
            noise = topology.noise_power(user) * float(np.trace(w @ u.conj().T @ u).real)
            logdet_w = float(np.sum(np.log(np.maximum(evals, 1e-300))))
            self.affine[j] = (
                float(np.trace(w).real)
                + noise
                - logdet_w
                - topology.stream_count(user)
            )
        # row-block offsets of each user inside the stacked Gw matrices
        d_list = [topology.stream_count(u_) for u_ in self.users]
        self.row_starts = np.concatenate([[0], np.cumsum(d_list)[:-1]]).astype(int)
        self.gw_stack = [np.concatenate(rows, axis=0) for rows in gw_rows]
        self.own_stack = [np.concatenate(rows, axis=0) for rows in own_rows]
        # diagonal-block offsets for the own-trace terms, per cell
        self.own_diag_starts = []
        for members in self.cell_users:
            d_cell = [topology.stream_count(u_) for u_ in members]
            self.own_diag_starts.append(
                np.concatenate([[0], np.cumsum(d_cell)[:-1]]).astype(int)
            )
        self.own_user_index = [
            np.array([self.index[u_] for u_ in members]) for members in self.cell_users
        ]
        self.uniform_m = len(set(topology.tx_antennas)) == 1

    def surrogate(self, v_cat: list[np.ndarray]) -> np.ndarray:
        """Per-user surrogate costs in bits for per-cell column-stacked V."""
        quad = np.zeros(self.n_users)
        own = np.zeros(self.n_users)
        for k in range(self.topology.num_cells):
            gv = self.gw_stack[k] @ v_cat[k]
            rowsum = np.add.reduceat(
                (gv.real**2 + gv.imag**2).sum(axis=1), self.row_starts
            )
            quad += rowsum
            diag = np.einsum("ij,ji->i", self.own_stack[k], v_cat[k])
            own[self.own_user_index[k]] += np.add.reduceat(
                diag.real, self.own_diag_starts[k]
            )
        return (self.affine - 2.0 * own + quad) / LN2

    def cat(self, beamformers: Mapping[UserId, np.ndarray]) -> list[np.ndarray]:
        return [
            np.concatenate(
                [np.asarray(beamformers[u_], dtype=complex) for u_ in members], axis=1
            )
            for members in self.cell_users
        ]

    def split(self, v_cat: list[np.ndarray]) -> dict[UserId, np.ndarray]:
        out: dict[UserId, np.ndarray] = {}
        for k, members in enumerate(self.cell_users):
            for u_ in members:
                col = self.col_of[u_]
                d = self.topology.stream_count(u_)
                out[u_] = v_cat[k][:, col : col + d].copy()
        return out

    def v_update(
        self, mu: np.ndarray, max_bisect: int
    ) -> tuple[list[np.ndarray], np.ndarray]:
        """Per-cell closed-form minimizers of the mu-weighted surrogate sum."""
        n_cells = self.topology.num_cells
        eps = np.zeros(n_cells)
        v_cat: list[np.ndarray] = [None] * n_cells  # type: ignore[list-item]

        if self.uniform_m:
            a_all = hermitize_stack(
                np.stack([np.tensordot(mu, t, axes=1) for t in self.t_stack])
            )
            lam_all, q_all = np.linalg.eigh(a_all)
        for k in range(n_cells):
            if self.uniform_m:
                lam, q = np.maximum(lam_all[k], 0.0), q_all[k]
            else:
                a = hermitize(np.tensordot(mu, self.t_stack[k], axes=1))
                lam, q = np.linalg.eigh(a)
                lam = np.maximum(lam, 0.0)
            c_cat = self.c_own[k] * mu[self.own_mu_cols[k]]
            budget = self.topology.power_budgets[k]
            if not np.any(np.abs(c_cat) > 0.0):
                v_cat[k] = np.zeros_like(c_cat)
                continue
            coords0 = q.conj().T @ c_cat
            s_row = (coords0.real**2 + coords0.imag**2).sum(axis=1)

            null = lam <= max(float(lam[-1]), 0.0) * 1e-14
            if np.any(null & (s_row > 1e-24 * max(float(s_row.max()), 1e-300))):
                p0 = np.inf  # linear term leaves range(A): power blows up at eps=0
            else:
                safe = np.where(null, 1.0, lam)
                p0 = float(np.sum(np.where(null, 0.0, s_row) / safe**2))
            if p0 <= budget:
                eps[k] = 0.0
                scale = np.where(null, 0.0, 1.0 / np.where(null, 1.0, lam))
            else:
                eps[k] = _solve_power_multiplier(lam, s_row, budget, max_bisect)
                scale = 1.0 / (lam + eps[k])
            v_cat[k] = q @ (coords0 * scale[:, None])
        return v_cat, eps


def weighted_v_update(
    topology: NetworkTopology,
    channels: ChannelSet,
    receivers: Mapping[UserId, np.ndarray],
    weights: Mapping[UserId, np.ndarray],
    mu: np.ndarray | Mapping[UserId, float],
    max_bisect: int = 200,
) -> tuple[dict[UserId, np.ndarray], np.ndarray]:
    """Beamformers minimizing the mu-weighted surrogate sum under power budgets.

    Returns the beamformer dict and the per-cell power multipliers; each
    multiplier is the smallest value meeting the cell's budget (0 when the
    unconstrained minimizer is already feasible, by complementary slackness).
    """
    ctx = _QvContext(topology, channels, receivers, weights)
    if isinstance(mu, Mapping):
        mu = np.array([mu[u] for u in ctx.users])
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (ctx.n_users,):
        raise ValueError("mu must have one entry per user")
    if np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-9:
        raise ValueError("mu must lie on the unit simplex")
    v_cat, eps = ctx.v_update(mu, max_bisect)
    return ctx.split(v_cat), eps


class _BoundTracker:
    """Best primal iterate and best dual value seen so far.

    Every evaluated multiplier vector yields a feasible beamformer set (a
    primal upper bound) and a valid dual lower bound, whichever routine
    produced it, so the reported gap is always certified by weak duality.
    """

    def __init__(self, ctx: _QvContext, max_bisect: int) -> None:
        self.ctx = ctx
        self.max_bisect = max_bisect
        self.best_primal = np.inf
        self.best_dual = -np.inf
        self.best_v: list[np.ndarray] | None = None
        self.best_eps = np.zeros(ctx.topology.num_cells)

    def seed(self, v_cat: list[np.ndarray]) -> None:
        primal = float(np.max(self.ctx.surrogate(v_cat)))
        if primal < self.best_primal:
            self.best_primal, self.best_v = primal, v_cat

    def evaluate(self, mu: np.ndarray) -> tuple[np.ndarray, float]:
        """Inner solve at mu; returns (per-user surrogates, dual value)."""
        v_cat, eps = self.ctx.v_update(mu, self.max_bisect)
        f = self.ctx.surrogate(v_cat)
        if float(f.max()) < self.best_primal:
            self.best_primal, self.best_v, self.best_eps = float(f.max()), v_cat, eps
        dual = float(mu @ f)
        self.best_dual = max(self.best_dual, dual)
        return f, dual

    @property
    def gap(self) -> float:
        return self.best_primal - self.best_dual

    def done(self, tol_gap: float) -> bool:
        return self.gap <= tol_gap * (1.0 + abs(self.best_primal))


def _equalization_refine(
    tracker: _BoundTracker, mu: np.ndarray, f: np.ndarray, tol_gap: float
) -> np.ndarray:
    """Gauss-Newton polish of the multipliers on the active set.

    The dual value is flat to second order near the optimum, which caps how
    precisely mirror ascent can localize the multipliers; the equalization
    residuals f_i - mean(f) on the active set remain linearly sensitive, so
    a few damped Newton steps close the remaining primal gap.
    """
    n = len(mu)
    mu = np.maximum(mu, MU_FLOOR)
    mu = mu / mu.sum()
    for _ in range(3):  # active-set correction rounds
        level = float(f.max())
        active = np.nonzero((mu > 1e-5) | (f >= level - 1e-3 * (1.0 + abs(level))))[0]
        if len(active) <= 1:
            return mu
        x = np.log(mu[active])
        f_cur = f
        r = f_cur[active] - f_cur[active].mean()
        for _ in range(10):
            if tracker.done(tol_gap) or np.abs(r).max() <= 1e-13 * (1.0 + abs(level)):
                break
            h = 1e-5
            jac = np.empty((len(active), len(active)))
            for col, j in enumerate(active):
                x_p = x.copy()
                x_p[col] += h
                mu_p = mu.copy()
                mu_p[active] = np.exp(x_p)
                mu_p = np.maximum(mu_p, MU_FLOOR)
                mu_p /= mu_p.sum()
                f_p, _ = tracker.evaluate(mu_p)
                r_p = f_p[active] - f_p[active].mean()
                jac[:, col] = (r_p - r) / h
            damp = 1e-10 * max(float(np.abs(jac).max()) ** 2, 1.0)
            try:
                dx = -np.linalg.solve(
                    jac.T @ jac + damp * np.eye(len(active)), jac.T @ r
                )
            except np.linalg.LinAlgError:
                break
            improved = False
            for t in (1.0, 0.5, 0.25, 0.1):
                x_t = x + t * dx
                mu_t = mu.copy()
                mu_t[active] = np.exp(np.clip(x_t, -60.0, 60.0))
                mu_t = np.maximum(mu_t, MU_FLOOR)
                mu_t /= mu_t.sum()
                f_t, _ = tracker.evaluate(mu_t)
                r_t = f_t[active] - f_t[active].mean()
                if float(np.sum(r_t**2)) < float(np.sum(r**2)):
                    x = np.log(mu_t[active])
                    mu, f_cur, r = mu_t, f_t, r_t
                    improved = True
                    break
            if not improved:
                break
        f = f_cur
        # pull in any user the equalized level left above it
        violated = np.nonzero(f > f[active].mean() + 1e-9 * (1.0 + abs(level)))[0]
        if set(violated).issubset(set(active)):
            break
        mu[violated] = np.maximum(mu[violated], 1e-4)
        mu = mu / mu.sum()
        f, _ = tracker.evaluate(mu)
    return mu


def solve_qv(
    topology: NetworkTopology,
    channels: ChannelSet,
    receivers: Mapping[UserId, np.ndarray],
    weights: Mapping[UserId, np.ndarray],
    options: QvOptions | None = None,
    initial_v: Mapping[UserId, np.ndarray] | None = None,
    initial_mu: np.ndarray | None = None,
) -> QvSolution:
    """Solve the min-max surrogate subproblem by dual ascent on the simplex.

    The dual function g(mu) = min over feasible V of the mu-weighted surrogate
    sum is concave, and f(V(mu)) is a supergradient at mu.  Mirror steps are
    entropic; the step is halved whenever the dual value would decrease
    (floor 1e-6) and may grow without a cap, because near the optimum the
    supergradient spread shrinks with the gap and useful steps are large.
    ``initial_v`` seeds the incumbent, which guarantees the returned
    beamformers never have a worse max-user surrogate than the incoming ones.

    Strong duality holds (convex problem, V = 0 is a Slater point), so the
    reported gap certifies near-optimality.  When the subproblem has several
    optima the dual-ascent limit is returned; no representative is promised.
    """
    opts = options or QvOptions()
    ctx = _QvContext(topology, channels, receivers, weights)
    n = ctx.n_users

    if initial_mu is not None and np.shape(initial_mu) == (n,) and np.all(
        np.asarray(initial_mu) >= 0
    ):
        mu = np.maximum(np.asarray(initial_mu, dtype=float), MU_FLOOR)
        mu /= mu.sum()
    else:
        mu = np.full(n, 1.0 / n)

    tracker = _BoundTracker(ctx, opts.max_bisect)
    if initial_v is not None:
        tracker.seed(ctx.cat(initial_v))
    f, dual = tracker.evaluate(mu)

    step = opts.initial_step
    iterations = 0
    window = 120
    gap_history: list[float] = []
    dual_values = [dual]
    while iterations < opts.max_outer:
        if tracker.done(opts.tol_gap):
            break
        gap_history.append(tracker.gap)
        # saturation guard: hand the endgame to the equalization refinement
        # once the windowed gap stops making geometric progress
        if len(gap_history) > window and tracker.gap > 0.75 * gap_history[-window]:
            break
        iterations += 1
        base = np.maximum(mu, MU_FLOOR)
        g = f - f.max()  # shift is absorbed by normalization; avoids overflow
        trial = base * np.exp(step * g)
        trial /= trial.sum()
        f_t, dual_t = tracker.evaluate(trial)
        # the decrease threshold sits above the solver's numerical noise so
        # the safeguard reacts to genuine overshoot, not round-off
        if dual_t < dual - 1e-9 * (1.0 + abs(dual)):
            step = max(0.5 * step, STEP_FLOOR)
            continue
        mu, f, dual = trial, f_t, dual_t
        dual_values.append(dual)
        # growth is uncapped on purpose: near the optimum the supergradient
        # spread shrinks with the gap, so useful steps are far above one
        step = min(1.5 * step, 1e6 * opts.initial_step)

    # polish only when the mirror stopped of its own accord; an exhausted
    # budget returns the best iterate flagged not-converged, as promised
    if not tracker.done(opts.tol_gap) and iterations < opts.max_outer:
        mu = _equalization_refine(tracker, mu, f, opts.tol_gap)

    assert tracker.best_v is not None
    return QvSolution(
        beamformers=ctx.split(tracker.best_v),
        gamma=tracker.best_primal,
        dual=DualState(mu=mu, eps=tracker.best_eps, gap=tracker.gap),
        iterations=iterations,
        converged=tracker.done(opts.tol_gap),
        dual_values=dual_values,
    )
