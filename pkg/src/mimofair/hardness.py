"""Gadget networks with discrete optima and the 3-SAT reduction toolkit.

The 3-user and 5-user interference channels built here have known optimal
covariance sets with worst-user rate exactly 1 bit; grid searches and 2^n
enumerations certify those claims numerically and link boolean satisfiability
to the question "is min rate 1 achievable" on the reduced network.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import (
    BudgetError,
    ChannelSet,
    ModelError,
    NetworkTopology,
    UserId,
    user_rate,
)

I2 = np.eye(2, dtype=complex)
CROSS_GAIN = np.array([[0.0, 2.0], [2.0, 0.0]], dtype=complex)
_ZERO22 = np.zeros((2, 2), dtype=complex)  # shared; treat as immutable

# the four optimal rank-one covariances of the 3-user gadget
Q_A = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)
Q_B = np.array([[0.0, 0.0], [0.0, 1.0]], dtype=complex)
Q_C = 0.5 * np.array([[1.0, 1.0j], [-1.0j, 1.0]])
Q_D = 0.5 * np.array([[1.0, -1.0j], [1.0j, 1.0]])


def build_lemma1_network(streams: int = 1) -> tuple[NetworkTopology, ChannelSet]:
    """Three transceiver pairs, identity direct links, antenna-swapping cross
    links of gain 2, unit noise and unit power."""
    topology = NetworkTopology.uniform(
        cells=3, users_per_cell=1, tx_antennas=2, rx_antennas=2, streams=streams
    )
    gains = {}
    for i in range(3):
        for m in range(3):
            gains[((i, 0), m)] = I2 if i == m else CROSS_GAIN
    return topology, ChannelSet(gains=gains)


def build_lemma2_network(streams: int = 1) -> tuple[NetworkTopology, ChannelSet]:
    """Five transceiver pairs: the 3-user gadget plus two watcher users whose
    direct links live on the first antenna only."""
    topology = NetworkTopology.uniform(
        cells=5, users_per_cell=1, tx_antennas=2, rx_antennas=2, streams=streams
    )
    h_watch_dir = np.array([[2.0, 0.0], [0.0, 0.0]], dtype=complex)
    h_4 = np.array([[1.0, 1.0j], [0.0, 0.0]])
    h_5 = np.array([[1.0j, 1.0], [0.0, 0.0]])
    gains = {}
    for i in range(5):
        for m in range(5):
            if i == m:
                gains[((i, 0), m)] = I2 if i < 3 else h_watch_dir
            elif i < 3 and m < 3:
                gains[((i, 0), m)] = CROSS_GAIN
            elif i == 3 and m < 3:
                gains[((i, 0), m)] = h_4
            elif i == 4 and m < 3:
                gains[((i, 0), m)] = h_5
            else:
                gains[((i, 0), m)] = _ZERO22
    return topology, ChannelSet(gains=gains)


def lemma2_assignment_covariances(second_antenna: bool) -> dict[UserId, np.ndarray]:
    """Covariances for the two optimal transmission patterns of the 5-user net.

    The first three users transmit full power on antenna 1 or antenna 2; the
    two watcher users always transmit on antenna 1, the only antenna their
    direct channel passes.
    """
    q = Q_B if second_antenna else Q_A
    cov = {(i, 0): q for i in range(3)}
    cov[(3, 0)] = Q_A
    cov[(4, 0)] = Q_A
    return cov


# ---------------------------------------------------------------------------
# Scalar fairness bound
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FairnessPoint:
    """Point of the scalar bound's domain: eigenvalue splits in [0,1] with
    alpha + beta = 1."""

    theta: float
    alpha: float
    beta: float
    x: float = 1.0

    def __post_init__(self) -> None:
        for name in ("theta", "alpha", "beta", "x"):
            val = getattr(self, name)
            if not -1e-12 <= val <= 1.0 + 1e-12:
                raise ValueError(f"{name}={val} outside [0, 1]")
        if abs(self.alpha + self.beta - 1.0) > 1e-9:
            raise ValueError("alpha + beta must equal 1")


def _f_raw(theta, alpha, beta):
    da = 1.0 + 4.0 * np.asarray(alpha)
    db = 1.0 + 4.0 * np.asarray(beta)
    theta = np.asarray(theta)
    return np.log2(1.0 + theta / da + (1.0 - theta) / db + theta * (1.0 - theta) / (da * db))


def f_value(point: FairnessPoint) -> float:
    """The two-user rate bound in bits; equals 1 exactly at (0,1,0) and (1,0,1)."""
    return float(_f_raw(point.theta, point.alpha, point.beta))


def f_grid_max(n: int = 200) -> tuple[float, list[tuple[float, float, float]]]:
    """Maximize the bound over an n x n grid of (theta, alpha), beta = 1 - alpha.

    Returns the grid maximum and every grid point attaining it within 1e-9.
    """
    theta = np.linspace(0.0, 1.0, n)
    alpha = np.linspace(0.0, 1.0, n)
    vals = _f_raw(theta[:, None], alpha[None, :], 1.0 - alpha[None, :])
    best = float(vals.max())
    hits = np.argwhere(vals >= best - 1e-9)
    points = [
        (float(theta[i]), float(alpha[j]), float(1.0 - alpha[j])) for i, j in hits
    ]
    return best, points


# ---------------------------------------------------------------------------
# Grid verification of the gadget optima
# ---------------------------------------------------------------------------

@dataclass
class Lemma1Options:
    coarse_points: int = 5     # per parameter (alpha, phi, psi) and per user
    fine_alpha: int = 17
    fine_phi: int = 17
    fine_psi: int = 16
    grid_res: float = 0.02
    cell_radius: int = 2       # parameter-space matching radius, in grid cells


@dataclass
class Lemma1Report:
    """Certificate of the 3-user gadget's optimal set.

    The symmetric-subspace maximizers form the rank-one family
    a = (cos phi, +/- j sin phi), a closed curve through the four named
    covariances; ``matched`` states that every grid maximizer sits within
    ``cell_radius`` grid cells of one of the four, ``canonicals_covered``
    that all four are themselves attained.
    """

    best_coarse: float
    best_symmetric: float
    maximizers: list[np.ndarray]
    matched: bool
    canonicals_covered: bool
    inconclusive: bool

    @property
    def ok(self) -> bool:
        return (
            not self.inconclusive
            and self.matched
            and self.canonicals_covered
            and abs(self.best_symmetric - 1.0) <= 1e-9
        )


def covariance_grid(n_alpha: int, n_phi: int, n_psi: int) -> np.ndarray:
    """Trace-one PSD candidates alpha a a^H + (1-alpha) b b^H with
    a = (cos phi, sin phi e^{j psi}) and b its orthogonal complement."""
    alphas = np.linspace(0.0, 1.0, n_alpha)
    phis = np.linspace(0.0, np.pi, n_phi)
    psis = np.linspace(0.0, 2.0 * np.pi, n_psi, endpoint=False)
    out = []
    for al, ph, ps in itertools.product(alphas, phis, psis):
        a = np.array([np.cos(ph), np.sin(ph) * np.exp(1j * ps)])
        b = np.array([-np.sin(ph), np.cos(ph) * np.exp(1j * ps)])
        out.append(al * np.outer(a, a.conj()) + (1.0 - al) * np.outer(b, b.conj()))
    return np.array(out)


def _det2(m: np.ndarray) -> np.ndarray:
    return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]


def _gadget_rate_table(cands: np.ndarray) -> np.ndarray:
    """rate[i, j, k]: own covariance i against gadget interferers j and k."""
    n = len(cands)
    p_swap = CROSS_GAIN / 2.0  # antenna swap; cross gain contributes factor 4
    t = 4.0 * np.einsum("ab,nbc,cd->nad", p_swap, cands, p_swap)
    j_pairs = I2[None, None] + t[:, None] + t[None, :]
    det_j = _det2(j_pairs).real
    rate = np.empty((n, n, n))
    for i in range(n):
        det_js = _det2(j_pairs + cands[i]).real
        rate[i] = np.log2(det_js / det_j)
    return rate


def symmetric_gadget_min_rate(cands: np.ndarray) -> np.ndarray:
    """Worst-user rate when all three gadget users transmit the same candidate."""
    p_swap = CROSS_GAIN / 2.0
    t = 4.0 * np.einsum("ab,nbc,cd->nad", p_swap, cands, p_swap)
    j = I2[None] + 2.0 * t
    return np.log2(_det2(j + cands).real / _det2(j).real)


def verify_lemma1(options: Lemma1Options | None = None) -> Lemma1Report:
    """Brute-force certification of the 3-user gadget's optimal set.

    A coarse full grid over three independent covariances brackets the global
    optimum; a finer grid restricted to the symmetric subspace recovers the
    maximizers, which must match the four canonical rank-one covariances.
    """
    opts = options or Lemma1Options()
    coarse = covariance_grid(opts.coarse_points, opts.coarse_points, opts.coarse_points)
    rate = _gadget_rate_table(coarse)
    minrate = np.minimum(
        rate, np.minimum(rate.transpose(1, 0, 2), rate.transpose(1, 2, 0))
    )
    best_coarse = float(minrate.max())

    fine = covariance_grid(opts.fine_alpha, opts.fine_phi, opts.fine_psi)
    sym = symmetric_gadget_min_rate(fine)
    best_sym = float(sym.max())
    hits = np.nonzero(sym >= best_sym - 1e-9)[0]
    seen: dict[bytes, np.ndarray] = {}
    for idx in hits:
        key = np.round(fine[idx], 9).tobytes()
        seen.setdefault(key, fine[idx])
    maximizers = list(seen.values())

    canonical = [Q_A, Q_B, Q_C, Q_D]
    # grid points carrying one of the four named covariances, as parameter
    # triples (the parameterization is redundant, so each has several)
    def indices(flat: int) -> tuple[int, int, int]:
        ia, rem = divmod(flat, opts.fine_phi * opts.fine_psi)
        ip, ipsi = divmod(rem, opts.fine_psi)
        return ia, ip, ipsi

    canon_flats = [
        i
        for i in range(len(fine))
        if min(np.linalg.norm(fine[i] - q) for q in canonical) <= 1e-9
    ]
    canon_params = [indices(i) for i in canon_flats]

    def near_canonical(flat: int) -> bool:
        ia, ip, ipsi = indices(flat)
        r = opts.cell_radius
        for ca, cp, cpsi in canon_params:
            dpsi = abs(ipsi - cpsi)
            dpsi = min(dpsi, opts.fine_psi - dpsi)
            if abs(ia - ca) <= r and abs(ip - cp) <= r and dpsi <= r:
                return True
        return False

    matched = all(near_canonical(int(i)) for i in hits)
    covered = all(
        any(np.linalg.norm(m - q) <= 1e-6 for m in maximizers) for q in canonical
    )
    return Lemma1Report(
        best_coarse=best_coarse,
        best_symmetric=best_sym,
        maximizers=maximizers,
        matched=matched,
        canonicals_covered=covered,
        inconclusive=best_coarse < 1.0 - 2.0 * opts.grid_res,
    )


@dataclass
class Lemma2Report:
    minrate_first_antenna: float
    minrate_second_antenna: float
    user4_rate_under_qc: float
    user5_rate_under_qd: float

    @property
    def ok(self) -> bool:
        return (
            abs(self.minrate_first_antenna - 1.0) <= 1e-9
            and abs(self.minrate_second_antenna - 1.0) <= 1e-9
            and self.user4_rate_under_qc < 1.0 - 1e-3
            and self.user5_rate_under_qd < 1.0 - 1e-3
        )


def verify_lemma2() -> Lemma2Report:
    """Check the two optimal patterns of the 5-user gadget and that the
    complex-valued gadget covariances knock out one of the watcher users."""
    topology, channels = build_lemma2_network()

    def rates(cov: Mapping[UserId, np.ndarray]) -> np.ndarray:
        return np.array(
            [user_rate(topology, channels, u_, covariances=cov) for u_ in topology.users()]
        )

    r1 = rates(lemma2_assignment_covariances(second_antenna=False))
    r2 = rates(lemma2_assignment_covariances(second_antenna=True))

    cov_qc = lemma2_assignment_covariances(second_antenna=False)
    for i in range(3):
        cov_qc[(i, 0)] = Q_C
    cov_qd = lemma2_assignment_covariances(second_antenna=False)
    for i in range(3):
        cov_qd[(i, 0)] = Q_D
    return Lemma2Report(
        minrate_first_antenna=float(r1.min()),
        minrate_second_antenna=float(r2.min()),
        user4_rate_under_qc=float(rates(cov_qc)[3]),
        user5_rate_under_qd=float(rates(cov_qd)[4]),
    )


# ---------------------------------------------------------------------------
# 3-SAT reduction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CnfFormula:
    """3-CNF formula; clauses are signed 1-based variable indices."""

    num_vars: int
    clauses: tuple[tuple[int, int, int], ...]

    def __post_init__(self) -> None:
        if self.num_vars < 0:
            raise ValueError("variable count must be non-negative")
        for clause in self.clauses:
            if len(clause) != 3:
                raise ValueError(f"clause {clause} must have exactly 3 literals")
            for lit in clause:
                if lit == 0 or abs(lit) > self.num_vars:
                    raise ValueError(f"literal {lit} out of range for n={self.num_vars}")

    @classmethod
    def from_dimacs(cls, text: str) -> "CnfFormula":
        num_vars = None
        tokens: list[int] = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("c") or line.startswith("%"):
                continue
            if line.startswith("p"):
                parts = line.split()
                if len(parts) != 4 or parts[1] != "cnf":
                    raise ValueError(f"bad DIMACS header: {line!r}")
                num_vars = int(parts[2])
                continue
            tokens.extend(int(t) for t in line.split())
        if num_vars is None:
            raise ValueError("missing 'p cnf' header")
        clauses = []
        current: list[int] = []
        for tok in tokens:
            if tok == 0:
                if len(current) != 3:
                    raise ValueError(f"clause {current} must have exactly 3 literals")
                clauses.append(tuple(current))
                current = []
            else:
                current.append(tok)
        if current:
            raise ValueError("trailing clause not terminated by 0")
        return cls(num_vars=num_vars, clauses=tuple(clauses))

    def to_dimacs(self) -> str:
        lines = [f"p cnf {self.num_vars} {len(self.clauses)}"]
        lines += [" ".join(str(l) for l in clause) + " 0" for clause in self.clauses]
        return "\n".join(lines) + "\n"

    def satisfied_by(self, assignment: Sequence[bool]) -> bool:
        return all(
            any((lit > 0) == bool(assignment[abs(lit) - 1]) for lit in clause)
            for clause in self.clauses
        )


@dataclass
class IcInstance:
    """Interference-channel instance produced by the reduction.

    Users come in blocks of five per variable (labels X1_i .. X5_i) followed
    by one user per clause (labels C_j); every user is its own transceiver
    pair with 2 antennas, unit power and unit noise.
    """

    topology: NetworkTopology
    channels: ChannelSet
    labels: tuple[str, ...]
    formula: CnfFormula
    clause_gain: float


def build_3sat_instance(formula: CnfFormula, clause_gain: str = "sqrt3") -> IcInstance:
    """Reduce a 3-CNF formula to a 5n+m user interference channel.

    Literal channels reach the clause user on antenna 1 from positive
    literals and antenna 2 from negated ones; a literal occurring c times in
    the same clause gets gain sqrt(c) so every occurrence contributes unit
    interference power.  ``clause_gain`` picks the clause user's direct gain:
    'sqrt3' makes rate 1 exactly achievable iff at most two of the clause's
    literal occurrences are unsatisfied, 'one' is the weaker variant.
    """
    if clause_gain not in ("sqrt3", "one"):
        raise ValueError("clause_gain must be 'sqrt3' or 'one'")
    g_c = np.sqrt(3.0) if clause_gain == "sqrt3" else 1.0
    n = formula.num_vars
    m = len(formula.clauses)
    total = 5 * n + m
    topology = NetworkTopology.uniform(
        cells=total, users_per_cell=1, tx_antennas=2, rx_antennas=2, streams=1
    )

    _, gadget_channels = build_lemma2_network()
    gains: dict[tuple[UserId, int], np.ndarray] = {}
    labels = []
    for i in range(n):
        for r in range(5):
            labels.append(f"X{r + 1}_{i + 1}")
    for j in range(m):
        labels.append(f"C_{j + 1}")

    for r in range(total):
        for t in range(total):
            gains[((r, 0), t)] = _ZERO22
    for i in range(n):
        for r in range(5):
            for t in range(5):
                gains[((5 * i + r, 0), 5 * i + t)] = gadget_channels.h((r, 0), t)
    for j, clause in enumerate(formula.clauses):
        rcv = 5 * n + j
        gains[((rcv, 0), rcv)] = np.array([[g_c, 0.0], [0.0, 0.0]], dtype=complex)
        for i in range(n):
            pos = sum(1 for lit in clause if lit == i + 1)
            neg = sum(1 for lit in clause if lit == -(i + 1))
            if pos or neg:
                gains[((rcv, 0), 5 * i)] = np.array(
                    [[np.sqrt(pos), np.sqrt(neg)], [0.0, 0.0]], dtype=complex
                )
    return IcInstance(
        topology=topology,
        channels=ChannelSet(gains=gains),
        labels=tuple(labels),
        formula=formula,
        clause_gain=g_c,
    )


def assignment_covariances(
    instance: IcInstance, assignment: Sequence[bool]
) -> dict[UserId, np.ndarray]:
    """Full-power covariances encoding a boolean assignment.

    The first three users of a variable block transmit on antenna 1 for False
    and antenna 2 for True; the watcher users and all clause users transmit
    on antenna 1.
    """
    n = instance.formula.num_vars
    if len(assignment) != n:
        raise ValueError(f"assignment must have {n} values")
    cov: dict[UserId, np.ndarray] = {}
    for i in range(n):
        q = Q_B if assignment[i] else Q_A
        for r in range(3):
            cov[(5 * i + r, 0)] = q
        cov[(5 * i + 3, 0)] = Q_A
        cov[(5 * i + 4, 0)] = Q_A
    for j in range(len(instance.formula.clauses)):
        cov[(5 * n + j, 0)] = Q_A
    return cov


def evaluate_assignment(instance: IcInstance, assignment: Sequence[bool]) -> float:
    """Worst-user rate of the network under one boolean assignment."""
    cov = assignment_covariances(instance, assignment)
    return min(
        user_rate(instance.topology, instance.channels, u_, covariances=cov)
        for u_ in instance.topology.users()
    )


@dataclass
class SatCheckResult:
    satisfiable: bool
    best_min_rate: float
    best_assignment: tuple[bool, ...]


def brute_force_sat_check(instance: IcInstance, max_vars: int = 20) -> SatCheckResult:
    """Maximize the worst-user rate over all 2^n assignments.

    Declares the formula satisfiable iff the best min rate reaches
    1 - 1e-9.  The evaluation is the same physics as
    :func:`evaluate_assignment`, batched over assignments.
    """
    n = instance.formula.num_vars
    if n > max_vars:
        raise BudgetError(f"{n} variables exceed the 2^{max_vars} enumeration budget")
    users = instance.topology.users()
    total = len(users)

    h = np.zeros((total, total, 2, 2), dtype=complex)
    for r in range(total):
        for t in range(total):
            h[r, t] = instance.channels.h(users[r], t)
    col0 = h[..., :, 0]
    col1 = h[..., :, 1]
    contrib0 = col0[..., :, None] * col0[..., None, :].conj()
    contrib1 = col1[..., :, None] * col1[..., None, :].conj()

    var_of = np.full(total, -1, dtype=int)
    for i in range(n):
        var_of[5 * i : 5 * i + 3] = i

    eye = np.eye(2, dtype=complex)
    base = eye[None] + contrib0.sum(axis=1) - contrib0[np.arange(total), np.arange(total)]
    delta = contrib1 - contrib0
    blockdelta = np.zeros((max(n, 1), total, 2, 2), dtype=complex)
    for i in range(n):
        idx = np.nonzero(var_of == i)[0]
        blockdelta[i] = delta[:, idx].sum(axis=1)
        for r in idx:
            blockdelta[i, r] -= delta[r, r]
    s0 = contrib0[np.arange(total), np.arange(total)]
    ds = np.where(
        (var_of >= 0)[:, None, None], delta[np.arange(total), np.arange(total)], 0.0
    )

    best_rate = -np.inf
    best_bits: np.ndarray | None = None
    n_assign = 1 << n
    chunk = 4096
    for start in range(0, n_assign, chunk):
        codes = np.arange(start, min(start + chunk, n_assign), dtype=np.int64)
        bits = (codes[:, None] >> np.arange(max(n, 1))) & 1  # (A, n)
        x = bits[:, :n].astype(float) if n else np.zeros((len(codes), 0))
        if n:
            jbar = base[None] + np.einsum("ai,irjk->arjk", x, blockdelta[:n])
            sel = np.where(var_of >= 0, x[:, np.clip(var_of, 0, None)], 0.0)
            sig = s0[None] + sel[..., None, None] * ds[None]
        else:
            jbar = base[None]
            sig = s0[None]
        det_jbar = _det2(jbar).real
        det_full = _det2(jbar + sig).real
        minrate = np.log2(det_full / det_jbar).min(axis=1)
        j = int(np.argmax(minrate))
        if minrate[j] > best_rate:
            best_rate = float(minrate[j])
            best_bits = bits[j, :n].astype(bool)
    assert best_bits is not None
    return SatCheckResult(
        satisfiable=best_rate >= 1.0 - 1e-9,
        best_min_rate=best_rate,
        best_assignment=tuple(bool(b) for b in best_bits),
    )
