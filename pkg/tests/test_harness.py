"""Scenario config, channel generation, Monte Carlo drivers, CSV output."""
import json

import numpy as np
import pytest

from mimofair import ConfigError, NetworkTopology, user_rate
from mimofair.harness import (
    EventSpec,
    ScenarioConfig,
    generate_channels,
    load_config,
    run_dynamic,
    run_kkt_report,
    run_minrate_vs_snr,
    run_rate_cdf,
)
from mimofair.maxmin import MaxminOptions, run_maxmin

from oracles import waterfilling_capacity

TINY = dict(
    cells=2,
    users_per_cell=1,
    tx_antennas=2,
    rx_antennas=2,
    streams=1,
    snr_db=(10.0,),
    trials=2,
    seed=7,
    algorithms=("maxmin",),
    max_iters=25,
)


class TestGenerateChannels:
    def test_deterministic_per_trial(self):
        config = ScenarioConfig(**TINY)
        a = generate_channels(config, 1)
        b = generate_channels(config, 1)
        c = generate_channels(config, 2)
        key = ((0, 0), 1)
        assert np.array_equal(a.gains[key], b.gains[key])
        assert not np.array_equal(a.gains[key], c.gains[key])

    def test_moment_statistics(self):
        config = ScenarioConfig(
            cells=1, users_per_cell=1, tx_antennas=500, rx_antennas=200,
            snr_db=(0.0,), trials=1, seed=3,
        )
        h = generate_channels(config, 0).gains[((0, 0), 0)].ravel()
        assert abs(h.mean()) < 0.02                       # 1e5 entries, 5-sigma
        assert np.mean(np.abs(h) ** 2) == pytest.approx(1.0, abs=0.02)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(**{**TINY, "trials": 0})
        with pytest.raises(ConfigError):
            ScenarioConfig(**{**TINY, "snr_db": ()})
        with pytest.raises(ConfigError):
            ScenarioConfig(**{**TINY, "algorithms": ("genie",)})
        with pytest.raises(ConfigError):
            ScenarioConfig(**{**TINY, "experiment": "plot"})

    def test_snr_sets_noise_power(self):
        config = ScenarioConfig(**TINY)
        topo = config.topology(20.0)
        assert topo.noise_powers[0][0] == pytest.approx(0.01)
        assert topo.power_budgets[0] == 1.0

    def test_load_config_toml(self, tmp_path):
        text = """
[topology]
cells = 2
users_per_cell = 1
tx_antennas = 2
rx_antennas = 2

[experiment]
kind = "rate_cdf"
snr_db = [10.0]
trials = 3
seed = 11
algorithms = ["maxmin", "mmse"]

[solver]
max_iters = 40

[[events]]
iteration = 4
kind = "user_join"
cell = 1
"""
        path = tmp_path / "scenario.toml"
        path.write_text(text)
        config = load_config(path)
        assert config.trials == 3
        assert config.algorithms == ("maxmin", "mmse")
        assert config.events == (EventSpec(iteration=4, kind="user_join", cell=1),)

    def test_load_config_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.toml")


class TestRateCdf:
    def test_single_user_degenerate_cdf(self):
        config = ScenarioConfig(
            cells=1, users_per_cell=1, tx_antennas=2, rx_antennas=2, streams=2,
            power=2.0, snr_db=(0.0,), trials=1, seed=5, algorithms=("maxmin",),
            max_iters=40,
        )
        result = run_rate_cdf(config)
        assert len(result.rows) == 1
        rate, cdf = result.rows[0][1], result.rows[0][2]
        assert cdf == pytest.approx(1.0)
        # degenerate CDF at the trial channel's capacity (waterfilling oracle)
        h = generate_channels(config, 0).gains[((0, 0), 0)]
        gains = np.linalg.svd(h, compute_uv=False) ** 2
        noise = config.topology(0.0).noise_powers[0][0]
        oracle = waterfilling_capacity(gains, power=2.0, noise=noise)
        assert rate == pytest.approx(oracle, abs=1e-3)

    def test_rates_round_trip_to_stored_beamformers(self):
        config = ScenarioConfig(**TINY)
        result = run_rate_cdf(config)
        states = result.extras["states"]
        emitted = sorted(result.extras["rates_by_algo"]["maxmin"])
        recomputed = []
        topo = config.topology(config.snr_db[0])
        for trial in range(config.trials):
            ch = generate_channels(config, trial)
            st = states[("maxmin", trial)]
            recomputed.extend(
                user_rate(topo, ch, u, beamformers=st.v) for u in topo.users()
            )
        assert np.allclose(sorted(recomputed), emitted, atol=1e-6)


class TestMinrateVsSnr:
    def test_single_snr_single_row_per_algorithm(self):
        config = ScenarioConfig(**{**TINY, "experiment": "minrate_vs_snr"})
        result = run_minrate_vs_snr(config)
        assert len(result.rows) == 1
        assert result.header == ("algorithm", "snr_db", "mean_min_rate")

    def test_min_rate_grows_with_snr(self):
        config = ScenarioConfig(
            **{**TINY, "experiment": "minrate_vs_snr", "snr_db": (0.0, 10.0, 20.0)}
        )
        result = run_minrate_vs_snr(config)
        means = result.extras["mean_min_rate"]["maxmin"]
        assert means == sorted(means)


class TestDynamic:
    def test_empty_schedule_matches_run_maxmin(self):
        config = ScenarioConfig(
            **{**TINY, "experiment": "dynamic", "trials": 1, "dynamic_iterations": 6}
        )
        result = run_dynamic(config)
        topo = config.topology(config.snr_db[0])
        ch = generate_channels(config, 0)
        _, trace = run_maxmin(
            topo, ch,
            options=MaxminOptions(max_iters=6, stop_on="none", qv=config.solver_options().qv),
        )
        got = [row[1] for row in result.rows]
        want = list(trace.objectives())
        assert np.allclose(got, want, atol=1e-9)

    def test_user_join_event_jump_then_monotone(self):
        config = ScenarioConfig(
            cells=2, users_per_cell=2, tx_antennas=3, rx_antennas=2, streams=1,
            snr_db=(10.0,), trials=1, seed=2, algorithms=("maxmin",),
            experiment="dynamic", dynamic_iterations=10,
            events=(EventSpec(iteration=4, kind="user_join", cell=0),),
        )
        result = run_dynamic(config)
        g = np.array([row[1] for row in result.rows])
        events = [row[3] for row in result.rows]
        assert events[4] == "user_join"
        assert np.all(np.diff(g[:4]) <= 1e-9)     # monotone before the event
        assert np.all(np.diff(g[4:]) <= 1e-9)     # and after it
        assert g[4] > g[3]                        # the join visibly costs rate

    def test_channel_change_dips_then_recovers(self):
        config = ScenarioConfig(
            cells=2, users_per_cell=1, tx_antennas=2, rx_antennas=2, streams=1,
            snr_db=(10.0,), trials=1, seed=4, algorithms=("maxmin",),
            experiment="dynamic", dynamic_iterations=14,
            events=(EventSpec(iteration=7, kind="channel_change", fade_power=0.1),),
        )
        result = run_dynamic(config)
        rows = result.rows
        assert rows[7][3] == "channel_change"
        minrates = np.array([row[2] for row in rows])
        g = np.array([row[1] for row in rows])
        assert np.all(np.diff(g[7:]) <= 1e-9)     # monotone after the event
        assert minrates[-1] >= minrates[7]        # recovers from the dip


class TestResultOutput:
    def test_csv_and_json_written(self, tmp_path):
        config = ScenarioConfig(**{**TINY, "trials": 1})
        result = run_rate_cdf(config)
        csv_path, json_path = result.write(tmp_path / "out" / "run1")
        assert csv_path.read_text().startswith("algorithm,rate,cdf")
        meta = json.loads(json_path.read_text())
        assert meta["config"]["seed"] == 7
        assert meta["rate_units"] == "bits"

    def test_byte_identical_reruns(self, tmp_path):
        config = ScenarioConfig(**TINY)
        a = run_rate_cdf(config).to_csv()
        b = run_rate_cdf(config).to_csv()
        assert a.encode() == b.encode()


class TestKktReport:
    def test_report_rows_and_pass_fraction(self):
        config = ScenarioConfig(**{**TINY, "trials": 2, "max_iters": 100})
        result = run_kkt_report(config)
        assert len(result.rows) == 2
        assert result.extras["pass_fraction"] >= 0.5
