"""Scenario configuration, seeded channel generation, and Monte Carlo drivers.

Experiments are fully deterministic: every random draw comes from a
counter-based stream keyed by (seed, trial, purpose), so trial results do not
depend on execution order.  Results are CSV rows plus a JSON metadata sidecar.
"""
from __future__ import annotations

import json

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .baselines import BaselineKind, run_baseline
from .maxmin import (
    ChannelChange,
    MaxminOptions,
    SolverTrace,
    UserJoin,
    initial_state,
    kkt_residuals,
    maxmin_step,
    run_maxmin,
)
from .model import (
    ChannelSet,
    ConfigError,
    NetworkTopology,
    TransceiverState,
    surrogate_values,
    user_rate,
)
from .qv import QvOptions

ALGORITHMS = ("maxmin", "wmmse", "mmse", "lse", "gwmmse")

_STREAM_CHANNELS = 0
_STREAM_INIT = 1
_STREAM_EVENTS = 2


@dataclass(frozen=True)
class EventSpec:
    iteration: int
    kind: str  # "user_join" | "channel_change"
    cell: int = 0
    fade_power: float = 0.1


@dataclass
class ScenarioConfig:
    """One experiment: topology family, SNR points, trial count, algorithms."""

    cells: int = 2
    users_per_cell: int = 1
    tx_antennas: int = 2
    rx_antennas: int = 2
    streams: int = 1
    power: float = 1.0
    experiment: str = "rate_cdf"  # rate_cdf | minrate_vs_snr | dynamic
    snr_db: tuple[float, ...] = (20.0,)
    trials: int = 1
    seed: int = 0
    algorithms: tuple[str, ...] = ("maxmin",)
    max_iters: int = 300
    rel_tol: float = 1e-6
    qv_tol_gap: float = 1e-9
    qv_max_outer: int = 4000
    qv_max_bisect: int = 200
    qv_initial_step: float = 1.0
    dynamic_iterations: int = 30
    events: tuple[EventSpec, ...] = ()
    out: str = "results"

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ConfigError("trial count must be at least 1")
        if not self.snr_db:
            raise ConfigError("SNR list must be non-empty")
        for name in self.algorithms:
            if name not in ALGORITHMS:
                raise ConfigError(
                    f"unknown algorithm {name!r}; choose from {ALGORITHMS}"
                )
        if self.experiment not in ("rate_cdf", "minrate_vs_snr", "dynamic"):
            raise ConfigError(f"unknown experiment kind {self.experiment!r}")

    def topology(self, snr_db: float) -> NetworkTopology:
        """Uniform topology at a given SNR; the budget is fixed at ``power``
        and the noise power is swept as power / SNR."""
        noise = self.power / (10.0 ** (snr_db / 10.0))
        return NetworkTopology.uniform(
            cells=self.cells,
            users_per_cell=self.users_per_cell,
            tx_antennas=self.tx_antennas,
            rx_antennas=self.rx_antennas,
            streams=self.streams,
            power=self.power,
            noise_power=noise,
        )

    def solver_options(self) -> MaxminOptions:
        return MaxminOptions(
            max_iters=self.max_iters,
            rel_tol=self.rel_tol,
            qv=QvOptions(
                tol_gap=self.qv_tol_gap,
                max_outer=self.qv_max_outer,
                max_bisect=self.qv_max_bisect,
                initial_step=self.qv_initial_step,
            ),
        )


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc

    topo = data.get("topology", {})
    exp = data.get("experiment", {})
    solver = data.get("solver", {})
    output = data.get("output", {})
    dyn = data.get("dynamic", {})
    events = tuple(
        EventSpec(
            iteration=int(ev["iteration"]),
            kind=str(ev["kind"]),
            cell=int(ev.get("cell", 0)),
            fade_power=float(ev.get("fade_power", 0.1)),
        )
        for ev in data.get("events", [])
    )
    try:
        return ScenarioConfig(
            cells=int(topo.get("cells", 2)),
            users_per_cell=int(topo.get("users_per_cell", 1)),
            tx_antennas=int(topo.get("tx_antennas", 2)),
            rx_antennas=int(topo.get("rx_antennas", 2)),
            streams=int(topo.get("streams", 1)),
            power=float(topo.get("power", 1.0)),
            experiment=str(exp.get("kind", "rate_cdf")),
            snr_db=tuple(float(s) for s in exp.get("snr_db", [20.0])),
            trials=int(exp.get("trials", 1)),
            seed=int(exp.get("seed", 0)),
            algorithms=tuple(exp.get("algorithms", ["maxmin"])),
            max_iters=int(solver.get("max_iters", 300)),
            rel_tol=float(solver.get("rel_tol", 1e-6)),
            qv_tol_gap=float(solver.get("qv_tol_gap", 1e-9)),
            qv_max_outer=int(solver.get("qv_max_outer", 4000)),
            qv_max_bisect=int(solver.get("qv_max_bisect", 200)),
            qv_initial_step=float(solver.get("qv_initial_step", 1.0)),
            dynamic_iterations=int(dyn.get("iterations", 30)),
            events=events,
            out=str(output.get("path", "results")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc


def trial_rng(seed: int, trial: int, purpose: int) -> np.random.Generator:
    """Independent stream for one (trial, purpose) pair; order-insensitive."""
    return np.random.default_rng([seed, trial, purpose])


def _draw_channels(
    topology: NetworkTopology, rng: np.random.Generator
) -> ChannelSet:
    gains = {}
    for user in topology.users():
        n = topology.rx_antenna_count(user)
        for cell in range(topology.num_cells):
            m = topology.tx_antennas[cell]
            gains[(user, cell)] = (
                rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))
            ) / np.sqrt(2.0)
    return ChannelSet(gains=gains)


def generate_channels(config: ScenarioConfig, trial_index: int) -> ChannelSet:
    """i.i.d. unit-variance complex Gaussian channels for one trial."""
    topology = config.topology(config.snr_db[0])
    return _draw_channels(topology, trial_rng(config.seed, trial_index, _STREAM_CHANNELS))


@dataclass
class ExperimentResult:
    """CSV rows plus machine-readable metadata; ``extras`` is in-memory only."""

    header: tuple[str, ...]
    rows: list[tuple]
    metadata: dict
    extras: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        def cell(x) -> str:
            if isinstance(x, float):
                return repr(x)
            return str(x)

        lines = [",".join(self.header)]
        lines += [",".join(cell(x) for x in row) for row in self.rows]
        return "\n".join(lines) + "\n"

    def write(self, base: str | Path) -> tuple[Path, Path]:
        base = Path(base)
        base.parent.mkdir(parents=True, exist_ok=True)
        csv_path = base.with_suffix(".csv")
        json_path = base.with_suffix(".json")
        csv_path.write_text(self.to_csv())
        json_path.write_text(json.dumps(self.metadata, indent=2, sort_keys=True) + "\n")
        return csv_path, json_path


def _metadata(config: ScenarioConfig, **extra) -> dict:
    from . import __version__

    meta = {
        "version": __version__,
        "config": asdict(config),
        "snr_definition": "SNR = P_k / sigma^2 with P_k fixed and sigma^2 swept",
        "rate_units": "bits",
    }
    meta.update(extra)
    return meta


def run_algorithm(
    name: str,
    topology: NetworkTopology,
    channels: ChannelSet,
    options: MaxminOptions,
) -> tuple[TransceiverState, SolverTrace]:
    if name == "maxmin":
        return run_maxmin(topology, channels, options=options)
    return run_baseline(BaselineKind(name), topology, channels, options=options)


def run_rate_cdf(config: ScenarioConfig) -> ExperimentResult:
    """Per-user rate CDF of each algorithm at the first configured SNR."""
    snr = config.snr_db[0]
    topology = config.topology(snr)
    options = config.solver_options()
    rates_by_algo: dict[str, list[float]] = {a: [] for a in config.algorithms}
    states: dict[tuple[str, int], TransceiverState] = {}
    for trial in range(config.trials):
        channels = generate_channels(config, trial)
        for name in config.algorithms:
            state, trace = run_algorithm(name, topology, channels, options)
            rates_by_algo[name].extend(trace.records[-1].rates)
            states[(name, trial)] = state
    rows = []
    for name in config.algorithms:
        values = np.sort(np.array(rates_by_algo[name]))
        n = len(values)
        for j, r in enumerate(values):
            rows.append((name, float(r), (j + 1) / n))
    return ExperimentResult(
        header=("algorithm", "rate", "cdf"),
        rows=rows,
        metadata=_metadata(config, experiment="rate_cdf", snr_db=snr),
        extras={"rates_by_algo": rates_by_algo, "states": states},
    )


def run_minrate_vs_snr(config: ScenarioConfig) -> ExperimentResult:
    """Mean worst-user rate of each algorithm across the SNR sweep."""
    options = config.solver_options()
    rows = []
    table: dict[str, list[float]] = {a: [] for a in config.algorithms}
    for snr in config.snr_db:
        topology = config.topology(snr)
        per_algo = {a: [] for a in config.algorithms}
        for trial in range(config.trials):
            channels = generate_channels(config, trial)
            for name in config.algorithms:
                _, trace = run_algorithm(name, topology, channels, options)
                per_algo[name].append(trace.records[-1].min_rate)
        for name in config.algorithms:
            mean = float(np.mean(per_algo[name]))
            table[name].append(mean)
            rows.append((name, float(snr), mean))
    return ExperimentResult(
        header=("algorithm", "snr_db", "mean_min_rate"),
        rows=rows,
        metadata=_metadata(config, experiment="minrate_vs_snr"),
        extras={"mean_min_rate": table},
    )


def run_dynamic(config: ScenarioConfig) -> ExperimentResult:
    """Single time-rolled run with user-join / channel-change events.

    Each event consumes one iteration slot: the trace row carries the
    post-event surrogate objective so the jump is visible, and the regular
    alternating steps resume at the next iteration.
    """
    snr = config.snr_db[0]
    topology = config.topology(snr)
    channels = generate_channels(config, 0)
    options = config.solver_options()
    schedule = {ev.iteration: ev for ev in config.events}
    event_rng = trial_rng(config.seed, 0, _STREAM_EVENTS)

    state = initial_state(topology, channels)
    rows: list[tuple] = [(0, -state.worst_rate, state.worst_rate, "")]
    mu_warm = None
    for it in range(1, config.dynamic_iterations + 1):
        ev = schedule.get(it)
        if ev is not None:
            topology, channels, state = _apply_event(
                topology, channels, state, ev, config, event_rng
            )
            mu_warm = None
            g_event = float(
                np.max(surrogate_values(topology, channels, state.v, state.u, state.w))
            )
            worst = min(
                user_rate(topology, channels, u_, beamformers=state.v)
                for u_ in topology.users()
            )
            rows.append((it, g_event, float(worst), ev.kind))
            continue
        state, rates, sol = maxmin_step(
            topology, channels, state, qv_options=options.qv, mu_warm=mu_warm
        )
        mu_warm = sol.dual.mu
        rows.append((it, -float(rates.min()), float(rates.min()), ""))
    return ExperimentResult(
        header=("iteration", "G", "min_rate", "event"),
        rows=rows,
        metadata=_metadata(config, experiment="dynamic", snr_db=snr),
        extras={"final_state": state, "topology": topology, "channels": channels},
    )


def _apply_event(
    topology: NetworkTopology,
    channels: ChannelSet,
    state: TransceiverState,
    ev: EventSpec,
    config: ScenarioConfig,
    rng: np.random.Generator,
):
    from .maxmin import reinitialize_on_event

    if ev.kind == "user_join":
        new_gains = {
            cell: (
                rng.standard_normal((config.rx_antennas, topology.tx_antennas[cell]))
                + 1j * rng.standard_normal((config.rx_antennas, topology.tx_antennas[cell]))
            )
            / np.sqrt(2.0)
            for cell in range(topology.num_cells)
        }
        event = UserJoin(
            cell=ev.cell,
            channel_gains=new_gains,
            rx_antennas=config.rx_antennas,
            streams=config.streams,
            noise_power=topology.noise_powers[0][0],
            rng=rng,
        )
        return reinitialize_on_event(topology, channels, state, event)
    if ev.kind == "channel_change":
        gains = {}
        for key, h in channels.gains.items():
            fade = (
                rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape)
            ) * np.sqrt(ev.fade_power / 2.0)
            gains[key] = h + fade
        return reinitialize_on_event(
            topology, channels, state, ChannelChange(channels=ChannelSet(gains=gains))
        )
    raise ConfigError(f"unknown event kind {ev.kind!r}")


def run_kkt_report(config: ScenarioConfig) -> ExperimentResult:
    """Run the max-min design on every trial and certify first-order optimality."""
    snr = config.snr_db[0]
    topology = config.topology(snr)
    options = config.solver_options()
    rows = []
    n_pass = 0
    for trial in range(config.trials):
        channels = generate_channels(config, trial)
        state, trace = run_maxmin(topology, channels, options=options)
        report = kkt_residuals(topology, channels, state)
        n_pass += int(report.passed)
        rows.append(
            (
                trial,
                trace.records[-1].min_rate,
                report.stationarity_residual,
                report.complementarity_residual,
                report.feasibility_residual,
                "PASS" if report.passed else "FAIL",
            )
        )
    return ExperimentResult(
        header=(
            "trial",
            "min_rate",
            "stationarity",
            "complementarity",
            "feasibility",
            "verdict",
        ),
        rows=rows,
        metadata=_metadata(config, experiment="kkt", snr_db=snr, passed=n_pass),
        extras={"pass_fraction": n_pass / config.trials},
    )
