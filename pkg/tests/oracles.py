"""Independent reference implementations used to cross-check the package.

Everything here is deliberately written in the most literal way possible
(scalar loops, textbook formulas) and shares no code path with the package
beyond the data containers.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

LN2 = math.log(2.0)


def mse_straightline(topology, channels, beamformers, receiver, user):
    """Element-wise expansion of the error covariance, scalar arithmetic only."""
    k = user[0]
    n = topology.rx_antenna_count(user)
    d = topology.stream_count(user)
    h_own = channels.h(user, k)
    v_own = beamformers[user]
    a = [[0j] * d for _ in range(d)]
    for r in range(d):
        for c in range(d):
            acc = 1.0 + 0j if r == c else 0j
            for p in range(n):
                for q in range(h_own.shape[1]):
                    acc -= complex(receiver[p, r]).conjugate() * complex(
                        h_own[p, q]
                    ) * complex(v_own[q, c])
            a[r][c] = acc
    e = [[0j] * d for _ in range(d)]
    for r in range(d):
        for c in range(d):
            acc = 0j
            for t in range(d):
                acc += a[r][t] * a[c][t].conjugate()
            e[r][c] = acc
    for other in topology.users():
        if other == user:
            continue
        h = channels.h(user, other[0])
        v = beamformers[other]
        d_o = v.shape[1]
        b = [[0j] * d_o for _ in range(d)]
        for r in range(d):
            for c in range(d_o):
                acc = 0j
                for p in range(n):
                    for q in range(h.shape[1]):
                        acc += complex(receiver[p, r]).conjugate() * complex(
                            h[p, q]
                        ) * complex(v[q, c])
                b[r][c] = acc
        for r in range(d):
            for c in range(d):
                acc = 0j
                for t in range(d_o):
                    acc += b[r][t] * b[c][t].conjugate()
                e[r][c] += acc
    sigma2 = topology.noise_power(user)
    for r in range(d):
        for c in range(d):
            acc = 0j
            for p in range(n):
                acc += complex(receiver[p, r]).conjugate() * complex(receiver[p, c])
            e[r][c] += sigma2 * acc
    return np.array(e)


def miso_sinr_rate(topology, channels, beamformers, user):
    """log2(1 + SINR) for single-antenna receivers and single streams."""
    k = user[0]
    h_own = channels.h(user, k)[0]  # row vector
    sig = abs(complex(np.dot(h_own, beamformers[user][:, 0]))) ** 2
    interf = 0.0
    for other in topology.users():
        if other == user:
            continue
        h = channels.h(user, other[0])[0]
        interf += abs(complex(np.dot(h, beamformers[other][:, 0]))) ** 2
    return math.log2(1.0 + sig / (topology.noise_power(user) + interf))


def waterfilling_capacity(gains: np.ndarray, power: float, noise: float = 1.0) -> float:
    """Single-user capacity over parallel channels by explicit water level."""
    gains = np.sort(np.asarray(gains, dtype=float))[::-1]
    active = len(gains)
    while active > 0:
        level = (power + np.sum(noise / gains[:active])) / active
        if level >= noise / gains[active - 1]:
            break
        active -= 1
    powers = np.maximum(level - noise / gains[:active], 0.0)
    return float(np.sum(np.log2(1.0 + powers * gains[:active] / noise)))


def surrogate_cost_reference(w, e, d):
    """(Tr(W E) - log det W - d) / log 2, straight from the definition."""
    evals = np.linalg.eigvalsh(0.5 * (w + w.conj().T))
    return (float(np.trace(w @ e).real) - float(np.sum(np.log(evals))) - d) / LN2


def scalar_qv_grid(
    topology, channels, receivers, weights, n_mag=100, n_phase=64
) -> float:
    """Exhaustive min-max surrogate for two single-antenna transceiver pairs.

    Enumerates complex beamformers v = m e^{j p} on a magnitude x phase grid
    per user and returns the smallest maximum surrogate cost.
    """
    users = topology.users()
    assert len(users) == 2
    mags = np.linspace(0.0, 1.0, n_mag) * np.sqrt(
        np.array([topology.power_budgets[u[0]] for u in users])[:, None]
    )
    phases = np.exp(2j * np.pi * np.arange(n_phase) / n_phase)
    grids = [np.outer(mags[j], phases).ravel() for j in range(2)]

    params = []
    for j, u_ in enumerate(users):
        w = float(weights[u_][0, 0].real)
        uu = complex(receivers[u_][0, 0])
        h_own = complex(channels.h(u_, u_[0])[0, 0])
        h_cross = complex(channels.h(u_, users[1 - j][0])[0, 0])
        own_gain = uu.conjugate() * h_own
        cross = abs(uu) ** 2 * abs(h_cross) ** 2
        noise = topology.noise_power(u_) * abs(uu) ** 2
        offset = math.log(w) + 1.0
        params.append((w, own_gain, cross, noise, offset))

    w0, g0, c0, n0, o0 = params[0]
    w1, g1, c1, n1, o1 = params[1]
    v0 = grids[0]
    f0_own = w0 * np.abs(1.0 - g0 * v0) ** 2 + w0 * n0
    v1 = grids[1]
    f1_own = w1 * np.abs(1.0 - g1 * v1) ** 2 + w1 * n1
    p0 = np.abs(v0) ** 2
    p1 = np.abs(v1) ** 2
    best = np.inf
    for idx in range(len(v0)):
        f0 = (f0_own[idx] + w0 * c0 * p1 - o0) / LN2
        f1 = (f1_own + w1 * c1 * p0[idx] - o1) / LN2
        cand = np.maximum(f0, f1).min()
        if cand < best:
            best = float(cand)
    return best


def grid_maxmin_beamformers(topology, channels, n_dir=8, n_phase=8, n_pow=4):
    """Exhaustive max-min rate over unit-direction x power grids (2 antennas,
    single stream, one user per cell)."""
    from mimofair.model import user_rate

    users = topology.users()
    dirs = []
    for phi in np.linspace(0.0, np.pi / 2.0, n_dir):
        for psi in np.linspace(0.0, 2.0 * np.pi, n_phase, endpoint=False):
            dirs.append(np.array([[np.cos(phi)], [np.sin(phi) * np.exp(1j * psi)]]))
    powers = np.linspace(1.0 / n_pow, 1.0, n_pow)
    cands = [
        np.sqrt(p * topology.power_budgets[0]) * d for p in powers for d in dirs
    ]
    best = -np.inf
    for combo in itertools.product(range(len(cands)), repeat=len(users)):
        v = {u_: cands[c] for u_, c in zip(users, combo)}
        val = min(user_rate(topology, channels, u_, beamformers=v) for u_ in users)
        if val > best:
            best = float(val)
    return best


def truth_table_satisfiable(formula) -> bool:
    """Plain truth-table satisfiability check."""
    n = formula.num_vars
    for code in range(1 << n):
        assignment = [(code >> i) & 1 == 1 for i in range(n)]
        ok = True
        for clause in formula.clauses:
            if not any((lit > 0) == assignment[abs(lit) - 1] for lit in clause):
                ok = False
                break
        if ok:
            return True
    return False
