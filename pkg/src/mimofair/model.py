"""Network data model and per-user link quantities for the multicell MIMO downlink.

Users are addressed by ``(cell, index)`` pairs.  Beamformer / receiver /
weight collections are plain dicts keyed by user id; all rates are in bits.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

LN2 = math.log(2.0)

#: feasibility slack allowed on per-cell transmit power, relative to the budget
TOL_FEAS = 1e-8

UserId = tuple[int, int]


class ModelError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ModelError):
    """A matrix does not have the dimensions the topology requires."""


class FeasibilityError(ModelError):
    """A beamformer set violates a per-cell power budget."""


class ConditioningError(ModelError):
    """A matrix is too ill-conditioned to invert reliably."""


class SolverError(ModelError):
    """An iterative solver failed structurally (not merely slowly)."""


class ConfigError(ModelError):
    """Invalid scenario or algorithm configuration."""


class BudgetError(ModelError):
    """A brute-force enumeration would exceed its size budget."""


def hermitize(a: np.ndarray) -> np.ndarray:
    """Symmetrize ``(a + a^H) / 2`` to suppress round-off asymmetry."""
    return 0.5 * (a + a.conj().T)


def logdet_hermitian(a: np.ndarray) -> float:
    """log-determinant (natural base) of a Hermitian positive definite matrix."""
    sign, val = np.linalg.slogdet(a)
    return float(val)


@dataclass(frozen=True)
class NetworkTopology:
    """Cell/user/antenna/stream dimensions plus power budgets and noise levels.

    ``users_per_cell[k]`` is I_k, ``tx_antennas[k]`` is M_k, and the per-user
    tuples (``rx_antennas``, ``streams``, ``noise_powers``) are nested by cell.
    Powers are linear watts.
    """

    users_per_cell: tuple[int, ...]
    tx_antennas: tuple[int, ...]
    rx_antennas: tuple[tuple[int, ...], ...]
    streams: tuple[tuple[int, ...], ...]
    power_budgets: tuple[float, ...]
    noise_powers: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        k = len(self.users_per_cell)
        if k < 1:
            raise ShapeError("need at least one cell")
        for name in ("tx_antennas", "rx_antennas", "streams", "power_budgets", "noise_powers"):
            if len(getattr(self, name)) != k:
                raise ShapeError(f"{name} must have one entry per cell")
        for kk in range(k):
            i_k = self.users_per_cell[kk]
            if i_k < 1:
                raise ShapeError(f"cell {kk} must serve at least one user")
            if self.tx_antennas[kk] < 1:
                raise ShapeError(f"cell {kk} needs at least one transmit antenna")
            if self.power_budgets[kk] <= 0:
                raise FeasibilityError(f"cell {kk} power budget must be positive")
            for tup in (self.rx_antennas[kk], self.streams[kk], self.noise_powers[kk]):
                if len(tup) != i_k:
                    raise ShapeError(f"per-user tuples in cell {kk} must have length {i_k}")
            for i in range(i_k):
                n = self.rx_antennas[kk][i]
                d = self.streams[kk][i]
                if n < 1:
                    raise ShapeError(f"user ({kk},{i}) needs at least one receive antenna")
                if not 1 <= d <= min(self.tx_antennas[kk], n):
                    raise ShapeError(
                        f"user ({kk},{i}) stream count {d} must lie in [1, min(M,N)]"
                    )
                if self.noise_powers[kk][i] <= 0:
                    raise FeasibilityError(f"user ({kk},{i}) noise power must be positive")

    @classmethod
    def uniform(
        cls,
        cells: int,
        users_per_cell: int,
        tx_antennas: int,
        rx_antennas: int,
        streams: int = 1,
        power: float = 1.0,
        noise_power: float = 1.0,
    ) -> "NetworkTopology":
        """Topology with identical cells and identical users."""
        per_user = lambda v: tuple(tuple([v] * users_per_cell) for _ in range(cells))
        return cls(
            users_per_cell=tuple([users_per_cell] * cells),
            tx_antennas=tuple([tx_antennas] * cells),
            rx_antennas=per_user(rx_antennas),
            streams=per_user(streams),
            power_budgets=tuple([float(power)] * cells),
            noise_powers=per_user(float(noise_power)),
        )

    @property
    def num_cells(self) -> int:
        return len(self.users_per_cell)

    def users(self) -> tuple[UserId, ...]:
        """All user ids in canonical (cell-major) order."""
        return tuple(
            (k, i) for k in range(self.num_cells) for i in range(self.users_per_cell[k])
        )

    def num_users(self) -> int:
        return sum(self.users_per_cell)

    def rx_antenna_count(self, user: UserId) -> int:
        return self.rx_antennas[user[0]][user[1]]

    def stream_count(self, user: UserId) -> int:
        return self.streams[user[0]][user[1]]

    def noise_power(self, user: UserId) -> float:
        return self.noise_powers[user[0]][user[1]]


@dataclass(frozen=True)
class ChannelSet:
    """All cross-link channel matrices, keyed by ``(user, cell)``.

    ``gains[(user, cell)]`` has shape (N_user, M_cell).  Treat the arrays as
    immutable once the set is built.
    """

    gains: Mapping[tuple[UserId, int], np.ndarray]

    def h(self, user: UserId, cell: int) -> np.ndarray:
        return self.gains[(user, cell)]

    def validate(self, topology: NetworkTopology) -> None:
        """Check completeness over all user/cell pairs and all shapes."""
        for user in topology.users():
            n = topology.rx_antenna_count(user)
            for cell in range(topology.num_cells):
                try:
                    h = self.gains[(user, cell)]
                except KeyError:
                    raise ShapeError(f"missing channel for user {user}, cell {cell}")
                m = topology.tx_antennas[cell]
                if h.shape != (n, m):
                    raise ShapeError(
                        f"channel ({user},{cell}) has shape {h.shape}, expected {(n, m)}"
                    )


@dataclass
class TransceiverState:
    """Transmit beamformers, receive filters, weights and the worst-user rate.

    ``v[user]`` is M_k x d, ``u[user]`` is N x d, ``w[user]`` is d x d
    Hermitian positive definite.  ``worst_rate`` is in bits.
    """

    v: dict[UserId, np.ndarray]
    u: dict[UserId, np.ndarray]
    w: dict[UserId, np.ndarray]
    worst_rate: float = 0.0

    def copy(self) -> "TransceiverState":
        return TransceiverState(
            v={u_: a.copy() for u_, a in self.v.items()},
            u={u_: a.copy() for u_, a in self.u.items()},
            w={u_: a.copy() for u_, a in self.w.items()},
            worst_rate=self.worst_rate,
        )

    def validate(self, topology: NetworkTopology) -> None:
        for user in topology.users():
            m = topology.tx_antennas[user[0]]
            n = topology.rx_antenna_count(user)
            d = topology.stream_count(user)
            if self.v[user].shape != (m, d):
                raise ShapeError(f"beamformer of user {user} has wrong shape")
            if self.u[user].shape != (n, d):
                raise ShapeError(f"receive filter of user {user} has wrong shape")
            if self.w[user].shape != (d, d):
                raise ShapeError(f"weight of user {user} has wrong shape")
            if np.linalg.eigvalsh(hermitize(self.w[user]))[0] <= 0:
                raise ConditioningError(f"weight of user {user} is not positive definite")
        check_power_feasible(topology, self.v)


@dataclass(frozen=True)
class CovarianceSet:
    """Per-user transmit covariances Q = V V^H (M_k x M_k, Hermitian PSD)."""

    q: Mapping[UserId, np.ndarray]

    def validate(self, topology: NetworkTopology, tol: float = 1e-9) -> None:
        for user in topology.users():
            m = topology.tx_antennas[user[0]]
            qm = self.q[user]
            if qm.shape != (m, m):
                raise ShapeError(f"covariance of user {user} has wrong shape")
            if np.linalg.eigvalsh(hermitize(qm))[0] < -tol:
                raise ShapeError(f"covariance of user {user} is not PSD")
        powers = np.array(
            [
                sum(np.trace(self.q[(k, i)]).real for i in range(topology.users_per_cell[k]))
                for k in range(topology.num_cells)
            ]
        )
        budgets = np.asarray(topology.power_budgets)
        if np.any(powers > budgets * (1.0 + TOL_FEAS)):
            raise FeasibilityError("covariance set exceeds a per-cell power budget")


@dataclass(frozen=True)
class UserLinkStats:
    """Received covariance, MMSE error matrix and rate for one user."""

    j_cov: np.ndarray
    e_mmse: np.ndarray
    rate: float


def cell_powers(topology: NetworkTopology, beamformers: Mapping[UserId, np.ndarray]) -> np.ndarray:
    """Transmit power used by each cell: sum of ||V||_F^2 over its users."""
    out = np.zeros(topology.num_cells)
    for (k, i), v in beamformers.items():
        out[k] += float(np.sum(np.abs(v) ** 2))
    return out


def check_power_feasible(
    topology: NetworkTopology,
    beamformers: Mapping[UserId, np.ndarray],
    tol_feas: float = TOL_FEAS,
) -> None:
    powers = cell_powers(topology, beamformers)
    budgets = np.asarray(topology.power_budgets)
    if np.any(powers > budgets * (1.0 + tol_feas)):
        k = int(np.argmax(powers - budgets * (1.0 + tol_feas)))
        raise FeasibilityError(
            f"cell {k} transmits {powers[k]:.6g} W over budget {budgets[k]:.6g} W"
        )


def _check_beamformer_shapes(
    topology: NetworkTopology, beamformers: Mapping[UserId, np.ndarray]
) -> None:
    for user in topology.users():
        m = topology.tx_antennas[user[0]]
        d = topology.stream_count(user)
        if beamformers[user].shape != (m, d):
            raise ShapeError(
                f"beamformer of user {user} has shape {beamformers[user].shape},"
                f" expected {(m, d)}"
            )


def mse_matrix(
    topology: NetworkTopology,
    channels: ChannelSet,
    beamformers: Mapping[UserId, np.ndarray],
    receiver: np.ndarray,
    user: UserId,
) -> np.ndarray:
    """Stream-estimation error covariance of ``user`` for a given receive filter.

    E = (I - U^H H V)(I - U^H H V)^H
        + sum over interferers of U^H H V V^H H^H U + sigma^2 U^H U
    """
    _check_beamformer_shapes(topology, beamformers)
    k, _ = user
    n = topology.rx_antenna_count(user)
    d = topology.stream_count(user)
    if receiver.shape != (n, d):
        raise ShapeError(f"receiver has shape {receiver.shape}, expected {(n, d)}")
    h_own = channels.h(user, k)
    a = np.eye(d, dtype=complex) - receiver.conj().T @ h_own @ beamformers[user]
    e = a @ a.conj().T
    for other in topology.users():
        if other == user:
            continue
        b = receiver.conj().T @ channels.h(user, other[0]) @ beamformers[other]
        e = e + b @ b.conj().T
    e = e + topology.noise_power(user) * (receiver.conj().T @ receiver)
    return hermitize(e)


def _interference_plus_noise(
    topology: NetworkTopology,
    channels: ChannelSet,
    covariances: Mapping[UserId, np.ndarray],
    user: UserId,
) -> np.ndarray:
    n = topology.rx_antenna_count(user)
    j = topology.noise_power(user) * np.eye(n, dtype=complex)
    for other in topology.users():
        if other == user:
            continue
        h = channels.h(user, other[0])
        j = j + h @ covariances[other] @ h.conj().T
    return hermitize(j)


def user_rate(
    topology: NetworkTopology,
    channels: ChannelSet,
    user: UserId,
    beamformers: Mapping[UserId, np.ndarray] | None = None,
    covariances: Mapping[UserId, np.ndarray] | CovarianceSet | None = None,
) -> float:
    """Achievable rate of one user in bits, treating interference as noise.

    Accepts either the beamformer or the covariance parameterization; the two
    agree when Q = V V^H.
    """
    if (beamformers is None) == (covariances is None):
        raise ValueError("pass exactly one of beamformers / covariances")
    if beamformers is not None:
        _check_beamformer_shapes(topology, beamformers)
        q = {u_: v @ v.conj().T for u_, v in beamformers.items()}
    else:
        q = covariances.q if isinstance(covariances, CovarianceSet) else covariances
    j_bar = _interference_plus_noise(topology, channels, q, user)
    h_own = channels.h(user, user[0])
    s = hermitize(h_own @ q[user] @ h_own.conj().T)
    val = (logdet_hermitian(j_bar + s) - logdet_hermitian(j_bar)) / LN2
    return max(val, 0.0)  # mathematically >= 0; clamp log-det cancellation noise


def min_rate(
    topology: NetworkTopology,
    channels: ChannelSet,
    beamformers: Mapping[UserId, np.ndarray] | None = None,
    covariances: Mapping[UserId, np.ndarray] | CovarianceSet | None = None,
) -> float:
    """Worst-user rate in bits."""
    return min(
        user_rate(topology, channels, u, beamformers=beamformers, covariances=covariances)
        for u in topology.users()
    )


def mmse_receiver(
    topology: NetworkTopology,
    channels: ChannelSet,
    beamformers: Mapping[UserId, np.ndarray],
    user: UserId,
) -> tuple[np.ndarray, UserLinkStats]:
    """MMSE receive filter U = J^{-1} H V plus the resulting link statistics.

    J is the full received covariance (desired signal, all interference and
    noise); it is always invertible since the noise power is positive.
    """
    _check_beamformer_shapes(topology, beamformers)
    n = topology.rx_antenna_count(user)
    d = topology.stream_count(user)
    j = topology.noise_power(user) * np.eye(n, dtype=complex)
    for other in topology.users():
        h = channels.h(user, other[0])
        hv = h @ beamformers[other]
        j = j + hv @ hv.conj().T
    j = hermitize(j)
    h_own = channels.h(user, user[0])
    u = np.linalg.solve(j, h_own @ beamformers[user])
    e = hermitize(
        np.eye(d, dtype=complex) - beamformers[user].conj().T @ h_own.conj().T @ u
    )
    rate = max(-float(np.sum(np.log2(np.linalg.eigvalsh(e)))), 0.0)
    return u, UserLinkStats(j_cov=j, e_mmse=e, rate=rate)


def weight_update(e_mmse: np.ndarray) -> np.ndarray:
    """Weight matrix W = inverse of the MMSE error matrix (Hermitian PD)."""
    e = hermitize(e_mmse)
    evals = np.linalg.eigvalsh(e)
    if evals[0] <= 0 or evals[-1] / evals[0] > 1e12:
        raise ConditioningError(
            f"MSE matrix condition number {evals[-1] / max(evals[0], 1e-300):.3g} exceeds 1e12"
        )
    try:
        import scipy.linalg

        c, low = scipy.linalg.cho_factor(e)
        w = scipy.linalg.cho_solve((c, low), np.eye(e.shape[0], dtype=complex))
    except np.linalg.LinAlgError:
        warnings.warn("MSE matrix not numerically PD; regularizing by 1e-12 I")
        w = np.linalg.inv(e + 1e-12 * np.eye(e.shape[0], dtype=complex))
    return hermitize(w)


def wmmse_surrogate_value(w: np.ndarray, e: np.ndarray, d: int) -> float:
    """Weighted-MSE surrogate cost, in bits: (Tr(W E) - log det W - d) / log 2.

    At W = inv(E_mmse) with the MMSE receiver this equals minus the user rate,
    which is the identity the alternating algorithm relies on.
    """
    evals = np.linalg.eigvalsh(hermitize(w))
    if evals[0] <= 0:
        raise ValueError("weight matrix must be Hermitian positive definite")
    return (float(np.trace(w @ e).real) - float(np.sum(np.log(evals))) - d) / LN2


def surrogate_values(
    topology: NetworkTopology,
    channels: ChannelSet,
    beamformers: Mapping[UserId, np.ndarray],
    receivers: Mapping[UserId, np.ndarray],
    weights: Mapping[UserId, np.ndarray],
) -> np.ndarray:
    """Per-user surrogate costs (bits), in canonical user order."""
    vals = []
    for user in topology.users():
        e = mse_matrix(topology, channels, beamformers, receivers[user], user)
        vals.append(
            wmmse_surrogate_value(weights[user], e, topology.stream_count(user))
        )
    return np.array(vals)


def refresh_receivers_and_weights(
    topology: NetworkTopology,
    channels: ChannelSet,
    beamformers: Mapping[UserId, np.ndarray],
) -> tuple[dict[UserId, np.ndarray], dict[UserId, np.ndarray], np.ndarray]:
    """MMSE receivers, matched weights, and per-user rates for a beamformer set."""
    u: dict[UserId, np.ndarray] = {}
    w: dict[UserId, np.ndarray] = {}
    rates = []
    for user in topology.users():
        u[user], stats = mmse_receiver(topology, channels, beamformers, user)
        w[user] = weight_update(stats.e_mmse)
        rates.append(stats.rate)
    return u, w, np.array(rates)
