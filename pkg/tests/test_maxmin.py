"""Alternating max-min solver: convergence, KKT certification, events."""
import numpy as np
import pytest

from mimofair import (
    ChannelSet,
    FeasibilityError,
    NetworkTopology,
    kkt_residuals,
    run_maxmin,
    user_rate,
)
from mimofair.hardness import build_lemma1_network
from mimofair.maxmin import (
    ChannelChange,
    MaxminOptions,
    UserJoin,
    initial_state,
    rate_gradients,
    reinitialize_on_event,
)
from mimofair.model import cell_powers, check_power_feasible

from oracles import grid_maxmin_beamformers, waterfilling_capacity
from test_model import random_beamformers, random_net


class TestRunMaxmin:
    def test_single_user_reaches_capacity(self):
        topo = NetworkTopology.uniform(1, 1, 2, 2, 2, power=2.0)
        ch = ChannelSet(gains={((0, 0), 0): np.eye(2, dtype=complex)})
        state, trace = run_maxmin(topo, ch)
        oracle = waterfilling_capacity(np.array([1.0, 1.0]), power=2.0)
        assert trace.records[-1].min_rate == pytest.approx(oracle, abs=1e-3)

    def test_gadget_random_starts_reach_one(self):
        topo, ch = build_lemma1_network(streams=1)
        best = -np.inf
        for s in range(20):
            rng = np.random.default_rng(1000 + s)
            init = initial_state(topo, ch, kind="random", rng=rng)
            _, trace = run_maxmin(
                topo, ch, init=init, options=MaxminOptions(max_iters=80)
            )
            best = max(best, trace.records[-1].min_rate)
        assert best == pytest.approx(1.0, abs=1e-3)

    def test_matches_discretized_brute_force(self):
        rng = np.random.default_rng(42)
        topo, ch = random_net(rng, cells=2, users=1, tx=2, rx=2, streams=1)
        _, trace = run_maxmin(topo, ch)
        grid = grid_maxmin_beamformers(topo, ch, n_dir=7, n_phase=8, n_pow=4)
        # the solver must beat any grid point and sit within the grid's
        # resolution of the optimum it brackets
        assert trace.records[-1].min_rate >= grid - 1e-6
        assert trace.records[-1].min_rate <= grid + 0.25

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_trace_invariants(self, seed):
        rng = np.random.default_rng(seed)
        topo, ch = random_net(rng, cells=2, users=2, tx=3, rx=2, streams=1)
        state, trace = run_maxmin(topo, ch)
        g = trace.objectives()
        assert np.all(np.diff(g) <= 1e-9)
        mins = trace.min_rates()
        assert np.all(np.diff(mins) >= -1e-9)
        for rec in trace.records:
            assert rec.objective == pytest.approx(-rec.min_rate, abs=1e-9)
            assert np.all(
                np.asarray(rec.powers)
                <= np.asarray(topo.power_budgets) * (1 + 1e-8)
            )
        # final refresh contract
        for user in topo.users():
            assert user_rate(topo, ch, user, beamformers=state.v) >= 0

    def test_infeasible_init_rejected(self):
        rng = np.random.default_rng(4)
        topo, ch = random_net(rng, cells=1, users=1, tx=2, rx=2, streams=1)
        init = initial_state(topo, ch)
        bad = init.copy()
        bad.v[(0, 0)] = bad.v[(0, 0)] * 10.0
        with pytest.raises(FeasibilityError):
            run_maxmin(topo, ch, init=bad)


class TestKktResiduals:
    def test_converged_run_passes(self):
        rng = np.random.default_rng(5)
        topo, ch = random_net(rng, cells=2, users=2, tx=3, rx=3, streams=1)
        state, _ = run_maxmin(topo, ch)
        report = kkt_residuals(topo, ch, state)
        assert report.passed

    def test_random_point_is_not_stationary(self):
        rng = np.random.default_rng(6)
        topo, ch = random_net(rng, cells=2, users=2, tx=3, rx=2, streams=1)
        v = random_beamformers(topo, rng)
        from mimofair.model import refresh_receivers_and_weights
        from mimofair import TransceiverState

        u, w, rates = refresh_receivers_and_weights(topo, ch, v)
        state = TransceiverState(v=v, u=u, w=w, worst_rate=float(rates.min()))
        report = kkt_residuals(topo, ch, state)
        assert report.stationarity_residual > report.kkt_tol

    def test_gadget_optimum_all_active(self):
        topo, ch = build_lemma1_network(streams=1)
        e1 = np.array([[1.0], [0.0]], dtype=complex)
        v = {(i, 0): e1.copy() for i in range(3)}
        from mimofair.model import refresh_receivers_and_weights
        from mimofair import TransceiverState

        u, w, rates = refresh_receivers_and_weights(topo, ch, v)
        state = TransceiverState(v=v, u=u, w=w, worst_rate=float(rates.min()))
        report = kkt_residuals(topo, ch, state)
        assert report.passed
        assert set(report.active_set) == {(0, 0), (1, 0), (2, 0)}
        assert report.mu[(0, 0)] == pytest.approx(1.0 / 3.0, abs=1e-6)

    @pytest.mark.parametrize("seed", [7, 8])
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        topo, ch = random_net(rng, cells=2, users=1, tx=2, rx=2, streams=1)
        v = random_beamformers(topo, rng)
        grads = rate_gradients(topo, ch, v)
        h = 1e-6
        users = topo.users()
        for gi, i_user in enumerate(users):
            m_user = users[(gi + 1) % len(users)]
            g = grads[gi][m_user]
            r, c = 0, 0
            for part in (1.0, 1.0j):
                vp = {k: a.copy() for k, a in v.items()}
                vm = {k: a.copy() for k, a in v.items()}
                vp[m_user][r, c] += h * part
                vm[m_user][r, c] -= h * part
                fd = (
                    user_rate(topo, ch, i_user, beamformers=vp)
                    - user_rate(topo, ch, i_user, beamformers=vm)
                ) / (2 * h)
                got = g[r, c].real if part == 1.0 else g[r, c].imag
                assert fd / 2.0 == pytest.approx(got, abs=1e-6)


class TestEvents:
    @staticmethod
    def _scenario(rng, cells=2, users=2):
        topo, ch = random_net(rng, cells=cells, users=users, tx=3, rx=2, streams=1)
        state = initial_state(topo, ch)
        return topo, ch, state

    @staticmethod
    def _join_event(topo, rng, cell=0):
        gains = {
            k: (rng.standard_normal((2, topo.tx_antennas[k]))
                + 1j * rng.standard_normal((2, topo.tx_antennas[k]))) / np.sqrt(2)
            for k in range(topo.num_cells)
        }
        return UserJoin(
            cell=cell,
            channel_gains=gains,
            rx_antennas=2,
            streams=1,
            noise_power=topo.noise_powers[0][0],
            rng=rng,
        )

    def test_user_join_power_split(self):
        rng = np.random.default_rng(9)
        topo, ch, state = self._scenario(rng)
        # incumbents of cell 0 at exactly full power
        used = sum(
            float(np.sum(np.abs(state.v[(0, i)]) ** 2)) for i in range(2)
        )
        scale = np.sqrt(topo.power_budgets[0] / used)
        for i in range(2):
            state.v[(0, i)] = state.v[(0, i)] * scale
        topo2, ch2, state2 = reinitialize_on_event(
            topo, ch, state, self._join_event(topo, rng)
        )
        assert topo2.users_per_cell[0] == 3
        for i in range(2):
            old_p = float(np.sum(np.abs(state.v[(0, i)]) ** 2))
            new_p = float(np.sum(np.abs(state2.v[(0, i)]) ** 2))
            assert new_p == pytest.approx(old_p * 2.0 / 3.0)
        new_user_power = float(np.sum(np.abs(state2.v[(0, 2)]) ** 2))
        assert new_user_power == pytest.approx(topo2.power_budgets[0] / 3.0)
        check_power_feasible(topo2, state2.v)

    def test_join_idle_cell_gets_full_budget(self):
        rng = np.random.default_rng(10)
        topo, ch, state = self._scenario(rng)
        for i in range(2):  # cell 0 transmits nothing
            state.v[(0, i)] = np.zeros_like(state.v[(0, i)])
        _, _, state2 = reinitialize_on_event(
            topo, ch, state, self._join_event(topo, rng)
        )
        new_user_power = float(np.sum(np.abs(state2.v[(0, 2)]) ** 2))
        assert new_user_power == pytest.approx(topo.power_budgets[0])

    def test_join_over_budget_rejected(self):
        rng = np.random.default_rng(11)
        topo, ch, state = self._scenario(rng)
        for i in range(2):  # grossly infeasible incumbent state
            state.v[(0, i)] = state.v[(0, i)] * 10.0
        with pytest.raises(FeasibilityError):
            reinitialize_on_event(topo, ch, state, self._join_event(topo, rng))

    def test_channel_change_keeps_state(self):
        rng = np.random.default_rng(12)
        topo, ch, state = self._scenario(rng)
        gains = {
            k: h + 0.1 * (rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape))
            for k, h in ch.gains.items()
        }
        topo2, ch2, state2 = reinitialize_on_event(
            topo, ch, state, ChannelChange(channels=ChannelSet(gains=gains))
        )
        assert topo2 is topo
        for user in topo.users():
            assert np.array_equal(state2.v[user], state.v[user])
        # G is recomputed under the new channels by the caller
        r_old = user_rate(topo, ch, (0, 0), beamformers=state.v)
        r_new = user_rate(topo2, ch2, (0, 0), beamformers=state2.v)
        assert r_old != pytest.approx(r_new, abs=1e-12)
