"""Online Dual Descent: a confidence player against a completion-pair player.

The confidence player runs online mirror descent on ``r_t(C) = H(C) -
alpha G(C, M_t)``; the completion player runs matrix multiplicative weights
on ``gamma_t(M) = G(C_t, M) - theta f_t(M)`` in an embedded PSD space.
``G(C, M1, M2) = sum_x C_x (M1_x - M2_x)`` and ``f_t`` is the squared
deviation of both completions from the value revealed at step ``t``.

Embedding layout (0-based, ``p = 2(m+n)``, ``X`` is ``2p x 2p``)::

    X = diag(P, N)
    P, N rows/cols:  [0, m)          rows of M1
                     [m, 2m)         rows of M2
                     [2m, 2m+n)      columns of M1
                     [2m+n, p)       columns of M2

``M1 = (P - N)[0:m, 2m:2m+n]`` and ``M2 = (P - N)[m:2m, 2m+n:p]``. The
descent matrix only touches entries inside the four sub-blocks that pair
the rows and columns of one completion, so every iterate is block diagonal
with blocks ``P1, P2, N1, N2`` of size ``m+n``, and ``N_b = J P_b J`` with
``J = diag(I_m, -I_n)``. The player therefore stores only ``log P1`` and
``log P2``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .completion import ObservationSet
from .core import (
    DomainError,
    FactorizedMatrix,
    MatrixClassSpec,
    TOL_BOX,
    balance_factors,
    bregman_project_simplex,
    entropy,
    project_simplex_euclidean,
    scale_to_class,
    simplex_floor,
)

logger = logging.getLogger(__name__)

SETTINGS = ("H1", "H2")


class RevealEvent(NamedTuple):
    """Index ``(i, j)`` (0-based) and the value revealed there."""

    i: int
    j: int
    value: float


class ProjectionError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# event streams


def events_from_observations(obs: ObservationSet) -> List[RevealEvent]:
    return [RevealEvent(int(i), int(j), float(v)) for i, j, v in zip(obs.rows, obs.cols, obs.values)]


def write_events(path, events: Sequence[RevealEvent]) -> None:
    """CSV ``t,i,j,value`` with 1-based ``t``, ``i`` and ``j``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "i", "j", "value"])
        for t, ev in enumerate(events, start=1):
            w.writerow([t, ev.i + 1, ev.j + 1, repr(float(ev.value))])


def read_events(path, m: int, n: int) -> List[RevealEvent]:
    out = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                i, j, v = int(row[1]), int(row[2]), float(row[3])
            except ValueError:
                if lineno == 1:
                    continue
                raise ValueError(f"{path}:{lineno}: malformed row {row!r}") from None
            if not (1 <= i <= m and 1 <= j <= n):
                raise ValueError(f"{path}:{lineno}: index ({i}, {j}) outside {m}x{n}")
            if not (abs(v) <= 1.0 + TOL_BOX):
                raise ValueError(f"{path}:{lineno}: value {v} outside [-1, 1]")
            out.append(RevealEvent(i - 1, j - 1, v))
    return out


def _as_events(stream) -> List[RevealEvent]:
    if isinstance(stream, ObservationSet):
        return events_from_observations(stream)
    return [e if isinstance(e, RevealEvent) else RevealEvent(int(e[0]), int(e[1]), float(e[2])) for e in stream]


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class OnlineConfig:
    """Game parameters. ``None`` fields take their theoretical defaults.

    Defaults: ``alpha = delta^(-1/6)``; ``theta = 4 delta^(-2/3)`` (times
    ``sqrt(m+n)`` in H2); simplex floor parameter ``beta = 2 log(mn)``;
    ``eta_M = sqrt((m+n) log(2p) / T) / (2 (1 + 8 theta))``;
    ``eta_C = D_R / (G_R sqrt(T))`` with the diameter and gradient bounds of
    the chosen setting. ``eta_C_scale`` and ``eta_M_scale`` multiply the
    default step sizes and keep their ``1/sqrt(T)`` schedule; explicit
    ``eta_C`` and ``eta_M`` override them.
    """

    setting: str = "H1"
    delta: float = 0.1
    alpha: Optional[float] = None
    theta: Optional[float] = None
    eta_C: Optional[float] = None
    eta_M: Optional[float] = None
    eta_C_scale: float = 1.0
    eta_M_scale: float = 1.0
    beta_floor: Optional[float] = None
    K: float = 1.0
    seed: int = 0
    proj_tol: float = 1e-9
    proj_maxiter: int = 500
    regret_checkpoints: Optional[Tuple[int, ...]] = None
    comparator_steps: int = 400
    comparator_restarts: int = 2

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"setting must be one of {SETTINGS}")
        for name in ("alpha", "theta", "eta_C", "eta_M", "eta_C_scale", "eta_M_scale"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not self.K > 0:
            raise ValueError("K must be positive")

    def resolve(self, m: int, n: int, T: int) -> "GameParams":
        if T < 1:
            raise ValueError("horizon must be at least 1")
        mn, q = m * n, m + n
        p = 2 * q
        alpha = self.alpha if self.alpha is not None else self.delta ** (-1.0 / 6.0)
        if self.theta is not None:
            theta = self.theta
        else:
            theta = 4.0 * self.delta ** (-2.0 / 3.0) * (math.sqrt(q) if self.setting == "H2" else 1.0)
        beta = self.beta_floor if self.beta_floor is not None else 2.0 * math.log(mn)
        if self.setting == "H1":
            if mn * simplex_floor(beta) > 1.0:
                raise ValueError(f"simplex floor exp(1-beta) too large for {mn} entries")
            D_R, G_R = math.sqrt(math.log(mn)), beta + 2.0 * alpha
            cap = None
        else:
            D_R, G_R = 1.0 / (2.0 * math.sqrt(q)), (1.0 + 2.0 * alpha) * math.sqrt(mn)
            cap = q ** (-1.5)
        eta_C = self.eta_C if self.eta_C is not None else self.eta_C_scale * D_R / (G_R * math.sqrt(T))
        if self.eta_M is not None:
            eta_M = self.eta_M
        else:
            eta_M = self.eta_M_scale * math.sqrt(q * math.log(2 * p) / T) / (2 * (1 + 8 * theta))
        return GameParams(self.setting, m, n, T, self.K, alpha, theta, beta, eta_C, eta_M, cap, D_R, G_R)


@dataclass(frozen=True)
class GameParams:
    setting: str
    m: int
    n: int
    T: int
    K: float
    alpha: float
    theta: float
    beta: float
    eta_C: float
    eta_M: float
    cap: Optional[float]
    D_R: float
    G_R: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# ---------------------------------------------------------------------------
# rewards


def G_value(C: np.ndarray, M1: np.ndarray, M2: np.ndarray) -> float:
    return float(np.sum(C * (M1 - M2)))


def deviation(M1: np.ndarray, M2: np.ndarray, ev: RevealEvent) -> float:
    """``f_t = (M1_x - o)^2 + (M2_x - o)^2``."""
    a = M1[ev.i, ev.j] - ev.value
    b = M2[ev.i, ev.j] - ev.value
    return float(a * a + b * b)


def _H(C, setting):
    return entropy(C) if setting == "H1" else float(np.sum(C))


def reward_C(C: np.ndarray, M1: np.ndarray, M2: np.ndarray, alpha: float, setting: str = "H1") -> float:
    """``r_t(C) = H(C) - alpha G(C, M1, M2)``."""
    return _H(C, setting) - alpha * G_value(C, M1, M2)


def grad_reward_C(C: np.ndarray, M1: np.ndarray, M2: np.ndarray, alpha: float, setting: str = "H1") -> np.ndarray:
    if setting == "H1":
        if np.any(C <= 0):
            raise DomainError("entropy gradient needs strictly positive C")
        g = -1.0 - np.log(C)
    else:
        g = np.ones_like(C, dtype=float)
    return g - alpha * (M1 - M2)


def reward_M(C: np.ndarray, M1: np.ndarray, M2: np.ndarray, ev: RevealEvent, theta: float) -> float:
    """``gamma_t(M1, M2) = G(C, M1, M2) - theta f_t(M1, M2)``."""
    return G_value(C, M1, M2) - theta * deviation(M1, M2, ev)


def grad_reward_M(C, M1, M2, ev: RevealEvent, theta: float) -> Tuple[np.ndarray, np.ndarray]:
    g1 = np.array(C, dtype=float)
    g2 = -np.array(C, dtype=float)
    g1[ev.i, ev.j] -= 2.0 * theta * (M1[ev.i, ev.j] - ev.value)
    g2[ev.i, ev.j] -= 2.0 * theta * (M2[ev.i, ev.j] - ev.value)
    return g1, g2


def h_value(C, M1, M2, ev: RevealEvent, alpha: float, theta: float, setting: str = "H1") -> float:
    """``h_t = H(C) - alpha G(C, M1, M2) + alpha theta f_t(M1, M2)``, evaluated directly."""
    return _H(C, setting) - alpha * G_value(C, M1, M2) + alpha * theta * deviation(M1, M2, ev)


# ---------------------------------------------------------------------------
# confidence player


def initial_confidence(m: int, n: int, params: GameParams) -> np.ndarray:
    """First output on empty input: ``e^-1`` everywhere then projected (H1), zero (H2)."""
    if params.setting == "H1":
        return bregman_project_simplex(np.full((m, n), math.exp(-1.0)), params.beta)
    return np.zeros((m, n))


def step_AC(C: np.ndarray, M1: np.ndarray, M2: np.ndarray, params: GameParams) -> np.ndarray:
    """One mirror-descent step on ``r_t`` followed by the Bregman projection.

    H1 uses the negative-entropy mirror map, so the unprojected point is
    ``C * exp(eta grad)``, and projects onto the floored simplex by KL. H2
    uses the squared Euclidean norm and projects by clamping to the box.
    """
    g = grad_reward_C(C, M1, M2, params.alpha, params.setting)
    if params.setting == "H1":
        logC = np.log(C) + params.eta_C * g
        return bregman_project_simplex(np.exp(logC - logC.max()), params.beta)
    return np.clip(C + params.eta_C * g, 0.0, params.cap)


# ---------------------------------------------------------------------------
# embedding


def embedding_indices(m: int, n: int):
    """Index slices of the four row/column groups inside ``P`` (or ``N``)."""
    return slice(0, m), slice(m, 2 * m), slice(2 * m, 2 * m + n), slice(2 * m + n, 2 * (m + n))


def _decomposition_factors(M, K: float) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(M, FactorizedMatrix):
        F = balance_factors(M)
        return F.U, F.V
    u, s, vt = np.linalg.svd(np.asarray(M, dtype=float), full_matrices=False)
    F = balance_factors(FactorizedMatrix(u * np.sqrt(s), vt.T * np.sqrt(s)))
    return F.U, F.V


def embed_phi(M1, M2, K: float) -> np.ndarray:
    """Embed a completion pair as ``diag(P, N)`` in ``Sym(2p)``.

    With balanced factors ``M_b = U_b V_b^T`` the Gram blocks are padded on
    the diagonal up to ``K``: ``Y = W W^T + diag(K - |w_i|^2)`` for the
    stacked factor rows ``W``. Then ``P = (1/2)[Y1 M; M^T Y2]`` and ``N`` is
    the same with ``-M``, so the zero pair maps to ``(K/2) I``. Dense input
    is factorized by SVD, which is a valid certificate only when its
    balanced rows fit in the ``sqrt(K)`` ball.

    Raises
    ------
    DomainError
        If the factor rows exceed ``sqrt(K)`` or a decomposition property
        fails after construction.
    """
    U1, V1 = _decomposition_factors(M1, K)
    U2, V2 = _decomposition_factors(M2, K)
    m, n = U1.shape[0], V1.shape[0]
    r = max(U1.shape[1], U2.shape[1])
    pad = lambda A: np.hstack([A, np.zeros((A.shape[0], r - A.shape[1]))])  # noqa: E731
    blocks = []
    for U, V in ((U1, V1), (U2, V2)):
        W = np.vstack([pad(U), pad(V)])
        norms = np.sum(W * W, axis=1)
        if np.max(norms, initial=0.0) > K * (1 + 1e-9):
            raise DomainError("factor rows exceed sqrt(K); pair is not decomposable with these factors")
        blocks.append((W, norms))
    q = m + n
    p = 2 * q
    r1, r2, c1, c2 = embedding_indices(m, n)
    Wrow = np.zeros((p, 2 * r))
    Wrow[r1, :r] = blocks[0][0][:m]
    Wrow[c1, :r] = blocks[0][0][m:]
    Wrow[r2, r:] = blocks[1][0][:m]
    Wrow[c2, r:] = blocks[1][0][m:]
    # P = (1/2)(S W)(S W)^T-style Gram with the column groups sharing sign +, N flips the column groups
    J = np.ones(p)
    J[c1] = -1.0
    J[c2] = -1.0
    gram = Wrow @ Wrow.T
    # keep only within-completion coupling
    mask = np.zeros((p, p), bool)
    idx1 = np.r_[np.arange(p)[r1], np.arange(p)[c1]]
    idx2 = np.r_[np.arange(p)[r2], np.arange(p)[c2]]
    mask[np.ix_(idx1, idx1)] = True
    mask[np.ix_(idx2, idx2)] = True
    gram = np.where(mask, gram, 0.0)
    slack = K - np.diag(gram)
    Y = gram + np.diag(slack)
    P = 0.5 * Y
    N = 0.5 * (J[:, None] * Y * J[None, :])
    X = np.zeros((2 * p, 2 * p))
    X[:p, :p] = P
    X[p:, p:] = N
    props = decomposition_properties(X, m, n, K, np.asarray(_dense(M1)), np.asarray(_dense(M2)))
    bad = [k for k, ok in props.items() if not ok]
    if bad:
        raise DomainError(f"embedding violates decomposition properties: {', '.join(bad)}")
    return X


def _dense(M):
    return M.dense() if isinstance(M, FactorizedMatrix) else np.asarray(M, dtype=float)


def extract_phi_inverse(X: np.ndarray, m: int, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Read the pair back from the off-diagonal blocks of ``P - N``."""
    p = 2 * (m + n)
    D = X[:p, :p] - X[p:, p:]
    r1, r2, c1, c2 = embedding_indices(m, n)
    return D[r1, c1].copy(), D[r2, c2].copy()


def decomposition_properties(X: np.ndarray, m: int, n: int, K: float, M1=None, M2=None, tol: float = 1e-9) -> dict:
    """The four decomposability checks on ``X = diag(P, N)``."""
    p = 2 * (m + n)
    P, N = X[:p, :p], X[p:, p:]
    lo = min(np.linalg.eigvalsh(0.5 * (P + P.T))[0], np.linalg.eigvalsh(0.5 * (N + N.T))[0])
    out = {"psd": lo >= -tol * max(1.0, K)}
    if M1 is not None:
        E1, E2 = extract_phi_inverse(X, m, n)
        out["recovers_pair"] = bool(np.allclose(E1, M1, atol=1e-10) and np.allclose(E2, M2, atol=1e-10))
    out["trace"] = bool(np.trace(P) + np.trace(N) <= 2 * K * (m + n) * (1 + tol))
    out["diagonal"] = bool(max(np.max(np.diag(P)), np.max(np.diag(N))) <= K * (1 + tol))
    return out


def build_descent_matrix(C: np.ndarray, M1: np.ndarray, M2: np.ndarray, ev: RevealEvent, theta: float) -> np.ndarray:
    """Dense symmetric ``L_t = L^G + L^F`` in ``Sym(2p)``.

    ``L^G`` places ``C`` on the M1 row/column block of ``P`` and on the M2
    block of ``N``, ``-C`` on the M2 block of ``P`` and the M1 block of
    ``N``. ``L^F`` places ``-2 theta (M_x - o)`` at the revealed entry of
    each completion in ``P`` and the opposite sign in ``N``.
    """
    m, n = C.shape
    p = 2 * (m + n)
    L = np.zeros((2 * p, 2 * p))
    r1, r2, c1, c2 = embedding_indices(m, n)
    d1 = -2.0 * theta * (M1[ev.i, ev.j] - ev.value)
    d2 = -2.0 * theta * (M2[ev.i, ev.j] - ev.value)
    for off, sign in ((0, 1.0), (p, -1.0)):
        B1 = sign * np.array(C, dtype=float)
        B2 = -sign * np.array(C, dtype=float)
        B1[ev.i, ev.j] += sign * d1
        B2[ev.i, ev.j] += sign * d2
        L[off + r1.start : off + r1.stop, off + c1.start : off + c1.stop] = B1
        L[off + r2.start : off + r2.stop, off + c2.start : off + c2.stop] = B2
    return L + L.T


# ---------------------------------------------------------------------------
# relative-entropy projection onto K_X


def _eig(S):
    return np.linalg.eigh(0.5 * (S + S.T))


def _divided_exp(w):
    d = np.abs(np.subtract.outer(w, w))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(d > 1e-12, -np.expm1(-d) / d, 1.0)
    return np.exp(np.maximum.outer(w, w)) * r


def _kx_dense_constraints(m: int, n: int, K: float):
    """``(A_k, b_k)`` for ``Tr X <= 2K(m+n)``, ``X_ii <= K`` and the box on the extracted pair."""
    p = 2 * (m + n)
    d = 2 * p
    cons = [(np.eye(d), 2 * K * (m + n))]
    for i in range(d):
        E = np.zeros((d, d))
        E[i, i] = 1.0
        cons.append((E, K))
    r1, r2, c1, c2 = embedding_indices(m, n)
    for rs, cs in ((r1, c1), (r2, c2)):
        for i in range(rs.start, rs.stop):
            for j in range(cs.start, cs.stop):
                # <E, X> = (P - N)_ij
                E = np.zeros((d, d))
                E[i, j] = E[j, i] = 0.5
                E[p + i, p + j] = E[p + j, p + i] = -0.5
                cons += [(E, 1.0), (-E, 1.0)]
    return cons


def project_dense(Y: Optional[np.ndarray], m: int, n: int, K: float, tol: float = 1e-11, max_sweeps: int = 5000,
                  logY: Optional[np.ndarray] = None):
    """Relative-entropy projection of ``Y`` onto ``K_X`` on the full ``2p x 2p`` matrix.

    Reference implementation for small sizes, independent of the block
    solver: cyclic exact maximization of the dual one multiplier at a time
    (Hildreth's method in the Bregman geometry). Each coordinate solves the
    monotone scalar equation ``<A_k, exp(S - sum lam A)> = b_k`` by
    safeguarded Newton, clipped so the multiplier stays nonnegative.

    Returns
    -------
    X, logX, info
    """
    S = logY if logY is not None else _sym_log(Y)
    S = 0.5 * (S + S.T)
    cons = _kx_dense_constraints(m, n, K)
    lam = np.zeros(len(cons))
    W = S.copy()
    w, Q = _eig(W)
    X = (Q * np.exp(w)) @ Q.T
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        worst = 0.0
        for k, (A, b) in enumerate(cons):
            g = float(np.sum(A * X)) - b
            kkt = abs(g) if lam[k] > 0 else max(g, 0.0)
            if kkt <= tol * max(1.0, b):
                continue
            worst = max(worst, kkt)
            # solve <A, exp(W - t A)> = b for t >= -lam_k; the left side is decreasing in t
            lo, hi = -lam[k], math.inf
            t = 0.0
            for _ in range(100):
                Rt = Q.T @ A @ Q
                slope = float(np.sum(Rt * _divided_exp(w) * Rt))
                if g > 0:
                    lo = t
                else:
                    hi = t
                nt = t + g / max(slope, 1e-300)
                if not (lo < nt < hi):
                    nt = 0.5 * (lo + hi) if math.isfinite(hi) else max(2 * t + 1.0, lo + 1.0)
                if nt <= -lam[k]:
                    nt = -lam[k]
                t_prev, t = t, nt
                w, Q = _eig(W - t * A)
                Xt = (Q * np.exp(w)) @ Q.T
                g = float(np.sum(A * Xt)) - b
                if abs(g) <= 1e-3 * tol * max(1.0, b) or (t == -lam[k] and g <= 0) or abs(t - t_prev) < 1e-16:
                    break
            W = W - t * A
            lam[k] += t
            X = Xt
        if worst <= tol:
            break
    viol = max(max(float(np.sum(A * X)) - b, 0.0) for A, b in cons)
    return X, W, {"violation": viol, "sweeps": sweeps, "multipliers": lam}


def _sym_log(Y):
    w, Q = np.linalg.eigh(0.5 * (Y + Y.T))
    if w[0] <= 0:
        raise DomainError("projection target must be positive definite")
    return (Q * np.log(w)) @ Q.T


class BlockProjector:
    """Relative-entropy projection onto ``K_X`` using the two-block structure.

    Works on the log-domain ``P``-blocks ``S_1, S_2`` (each ``(m+n)``-square,
    rows of the completion first, then its columns). In these coordinates
    ``Tr X = 2 (Tr P1 + Tr P2)``, the diagonal cap is ``(P_b)_ii <= K`` and
    the extracted pair is ``M_b = 2 P_b[:m, m:]``.

    The trace-only solution is closed form and is returned whenever it is
    feasible. Otherwise the dual is maximized by projected Newton over a
    working set of constraints that grows with every violated constraint
    found; Hessians come from the divided differences of ``exp`` on the
    eigenvalues.
    """

    def __init__(self, m: int, n: int, K: float, tol: float = 1e-9, maxiter: int = 500):
        self.m, self.n, self.K = m, n, K
        self.q = m + n
        self.tol, self.maxiter = tol, maxiter

    # constraints are tuples (kind, block, i, j, sign): <A, P_block> <= bound
    def _values(self, Ps):
        """Slack-free constraint values for every diagonal and box constraint."""
        m = self.m
        out = []
        for b, P in enumerate(Ps):
            d = np.diag(P) - self.K
            off = P[:m, m:]
            out.append((b, d, off - 0.5, -off - 0.5))
        return out

    def _violated(self, Ps, slack):
        found = []
        for b, d, up, lo in self._values(Ps):
            found += [("d", b, int(i), 0, 1.0) for i in np.flatnonzero(d > slack)]
            found += [("x", b, int(i), int(j), 1.0) for i, j in zip(*np.nonzero(up > slack))]
            found += [("x", b, int(i), int(j), -1.0) for i, j in zip(*np.nonzero(lo > slack))]
        return found

    def _bound(self, c):
        if c[0] == "t":
            return self.K * self.q
        return self.K if c[0] == "d" else 0.5

    def _apply(self, cons, lam):
        A = [np.zeros((self.q, self.q)), np.zeros((self.q, self.q))]
        m = self.m
        for c, l in zip(cons, lam):
            kind, b, i, j, s = c
            if kind == "t":
                A[0][np.diag_indices(self.q)] += l
                A[1][np.diag_indices(self.q)] += l
            elif kind == "d":
                A[b][i, i] += l
            else:
                A[b][i, m + j] += 0.5 * s * l
                A[b][m + j, i] += 0.5 * s * l
        return A

    def _rotated(self, c, Qs):
        """``Q^T A Q`` for constraint ``c`` in each block (``None`` where it is absent)."""
        kind, b, i, j, s = c
        if kind == "t":
            return [np.eye(self.q), np.eye(self.q)]
        out = [None, None]
        Q = Qs[b]
        if kind == "d":
            out[b] = np.outer(Q[i], Q[i])
        else:
            x = np.outer(Q[i], Q[self.m + j])
            out[b] = 0.5 * s * (x + x.T)
        return out

    def _state(self, S, cons, lam):
        A = self._apply(cons, lam)
        eigs = [np.linalg.eigh(0.5 * (s + s.T) - a) for s, a in zip(S, A)]
        # overshooting line-search probes may overflow; they are rejected by value
        with np.errstate(over="ignore", invalid="ignore"):
            Ps = [(Q * np.exp(w)) @ Q.T for w, Q in eigs]
            f = sum(float(np.sum(np.exp(w))) for w, _ in eigs)
        f += float(sum(l * self._bound(c) for c, l in zip(cons, lam)))
        g = np.array([self._bound(c) - self._inner(c, Ps) for c in cons])
        return f, g, Ps, eigs, A

    def _inner(self, c, Ps):
        kind, b, i, j, s = c
        if kind == "t":
            return float(np.trace(Ps[0]) + np.trace(Ps[1]))
        if kind == "d":
            return float(Ps[b][i, i])
        return float(s * Ps[b][i, self.m + j])

    def _hessian(self, cons, eigs):
        k = len(cons)
        H = np.zeros((k, k))
        Qs = [Q for _, Q in eigs]
        rot = [self._rotated(c, Qs) for c in cons]
        for blk, (w, _) in enumerate(eigs):
            # divided differences of exp on the eigenvalues
            d = np.abs(np.subtract.outer(w, w))
            with np.errstate(invalid="ignore", divide="ignore"):
                r = np.where(d > 1e-12, -np.expm1(-d) / d, 1.0)
            gam = np.exp(np.maximum.outer(w, w)) * r
            idx = [a for a in range(k) if rot[a][blk] is not None]
            if not idx:
                continue
            R = np.stack([rot[a][blk].ravel() for a in idx])
            H[np.ix_(idx, idx)] += R @ (gam.ravel()[:, None] * R.T)
        return H

    def _newton(self, S, cons, lam, slack):
        """Projected Newton on ``f = -dual`` over ``lam >= 0`` for a fixed constraint list."""
        f, g, Ps, eigs, A = self._state(S, cons, lam)
        tols = slack * np.array([max(1.0, self._bound(c)) for c in cons])
        it = 0
        for it in range(1, self.maxiter + 1):
            # optimality: feasible where lam = 0, tight where lam > 0
            kkt = np.where(lam > 0, np.abs(g), np.maximum(-g, 0.0))
            if np.all(kkt <= tols):
                break
            free = (lam > 0) | (g < 0)
            H = self._hessian([c for c, fr in zip(cons, free) if fr], eigs)
            d = np.zeros_like(lam)
            H += 1e-12 * max(1.0, np.trace(H)) * np.eye(H.shape[0])
            d[free] = -np.linalg.solve(H, g[free])
            step = 1.0
            # below float resolution of f the full step is taken unchecked
            exact = abs(float(g @ d)) > 1e-13 * max(1.0, abs(f))
            while True:
                new = np.maximum(lam + step * d, 0.0)
                f2, g2, P2, e2, A2 = self._state(S, cons, new)
                if not exact or f2 <= f + 1e-4 * float(g @ (new - lam)) or step < 1e-10:
                    break
                step *= 0.5
            lam, f, g, Ps, eigs, A = new, f2, g2, P2, e2, A2
        return lam, Ps, A, it

    def project(self, S1: np.ndarray, S2: np.ndarray):
        """Return ``(logP1, logP2, P1, P2, info)``."""
        K, q = self.K, self.q
        S = [0.5 * (S1 + S1.T), 0.5 * (S2 + S2.T)]
        w1, Q1 = np.linalg.eigh(S[0])
        w2, Q2 = np.linalg.eigh(S[1])
        tr = float(np.sum(np.exp(w1)) + np.sum(np.exp(w2)))
        shift = max(0.0, math.log(tr / (K * q)))
        P1 = (Q1 * np.exp(w1 - shift)) @ Q1.T
        P2 = (Q2 * np.exp(w2 - shift)) @ Q2.T
        slack = self.tol * max(1.0, K)
        extra = self._violated([P1, P2], slack)
        if not extra:
            eye = np.eye(q)
            return S[0] - shift * eye, S[1] - shift * eye, P1, P2, {"fast": True, "iterations": 0, "violation": 0.0}
        cons = [("t", -1, 0, 0, 1.0)]
        lam = np.array([shift])
        total = 0
        while extra:
            cons += extra
            lam = np.concatenate([lam, np.zeros(len(extra))])
            lam, Ps, A, it = self._newton(S, cons, lam, slack)
            total += it
            extra = self._violated(Ps, slack)
            if total >= self.maxiter:
                break
        viol = max(0.0, max((self._inner(c, Ps) - self._bound(c) for c in cons), default=0.0))
        rest = self._violated(Ps, 0.0)
        if rest:
            viol = max(viol, max(self._inner(c, Ps) - self._bound(c) for c in rest))
        if viol > 1e3 * slack:
            logger.warning("K_X projection stopped with violation %.3g after %d iterations", viol, total)
        return (S[0] - A[0], S[1] - A[1], Ps[0], Ps[1],
                {"fast": False, "iterations": total, "violation": viol, "active": len(cons)})


def blocks_to_dense(P1: np.ndarray, P2: np.ndarray, m: int, n: int) -> np.ndarray:
    """Assemble ``X = diag(P, N)`` from the two ``P``-blocks."""
    q = m + n
    p = 2 * q
    r1, r2, c1, c2 = embedding_indices(m, n)
    idx = [np.r_[np.arange(p)[r1], np.arange(p)[c1]], np.r_[np.arange(p)[r2], np.arange(p)[c2]]]
    J = np.r_[np.ones(m), -np.ones(n)]
    X = np.zeros((2 * p, 2 * p))
    for Pb, ix in zip((P1, P2), idx):
        X[np.ix_(ix, ix)] = Pb
        X[np.ix_(ix + p, ix + p)] = J[:, None] * Pb * J[None, :]
    return X


def dense_to_blocks(X: np.ndarray, m: int, n: int) -> Tuple[np.ndarray, np.ndarray]:
    p = 2 * (m + n)
    r1, r2, c1, c2 = embedding_indices(m, n)
    i1 = np.r_[np.arange(p)[r1], np.arange(p)[c1]]
    i2 = np.r_[np.arange(p)[r2], np.arange(p)[c2]]
    return X[np.ix_(i1, i1)].copy(), X[np.ix_(i2, i2)].copy()


# ---------------------------------------------------------------------------
# completion player


class MatrixMWPlayer:
    """Matrix multiplicative weights over ``K_X`` for the completion pair.

    The iterate is kept in the log domain, ``log X_{t+1} = log X_t + eta
    L_t - sum_k lam_k A_k``, so no matrix logarithm is ever taken.
    """

    def __init__(self, m: int, n: int, K: float, eta: float, tol: float = 1e-9, maxiter: int = 500):
        self.m, self.n, self.K, self.eta = m, n, K, eta
        q = m + n
        self.proj = BlockProjector(m, n, K, tol, maxiter)
        self.S = [math.log(K / 2.0) * np.eye(q), math.log(K / 2.0) * np.eye(q)]
        self.P = [0.5 * K * np.eye(q), 0.5 * K * np.eye(q)]
        self.stats = {"fast": 0, "dual": 0, "dual_iterations": 0, "max_violation": 0.0}

    @property
    def pair(self) -> Tuple[np.ndarray, np.ndarray]:
        m = self.m
        return 2.0 * self.P[0][:m, m:], 2.0 * self.P[1][:m, m:]

    def dense(self) -> np.ndarray:
        return blocks_to_dense(self.P[0], self.P[1], self.m, self.n)

    def step(self, C: np.ndarray, ev: RevealEvent, theta: float) -> Tuple[np.ndarray, np.ndarray]:
        m = self.m
        M1, M2 = self.pair
        G1, G2 = grad_reward_M(C, M1, M2, ev, theta)
        new = []
        for S, G in zip(self.S, (G1, G2)):
            B = np.zeros_like(S)
            B[:m, m:] = G
            B[m:, :m] = G.T
            new.append(S + self.eta * B)
        S1, S2, P1, P2, info = self.proj.project(*new)
        self.S, self.P = [S1, S2], [P1, P2]
        if info["fast"]:
            self.stats["fast"] += 1
        else:
            self.stats["dual"] += 1
            self.stats["dual_iterations"] += info["iterations"]
        self.stats["max_violation"] = max(self.stats["max_violation"], info["violation"])
        return self.pair


# ---------------------------------------------------------------------------
# comparators for regret


def best_fixed_confidence_value(S: np.ndarray, T: int, params: GameParams) -> float:
    """``max_C sum_t r_t(C)`` given ``S = sum_t (M1_t - M2_t)``.

    H1 over the full simplex: ``T log sum exp(-alpha S / T)``. H2 over the
    box: ``cap * sum max(0, T - alpha S)``.
    """
    a = params.alpha * S
    if params.setting == "H1":
        z = -a / T
        top = z.max()
        return float(T * (top + math.log(np.sum(np.exp(z - top)))))
    return float(params.cap * np.sum(np.maximum(0.0, T - a)))


def best_fixed_completion_value(Csum: np.ndarray, events: Sequence[RevealEvent], theta: float, K: float,
                                steps: int = 400, restarts: int = 2, seed: int = 0,
                                warm: Sequence[np.ndarray] = ()) -> float:
    """Heuristic ``max sum_t gamma_t(M1, M2)`` over the class, a lower bound on the true maximum.

    The objective separates: ``M1`` maximizes ``<Csum, M> - theta sum_t
    (M_{x_t} - o_t)^2`` and ``M2`` the same with ``-Csum``. Each half is a
    concave program over the max-norm ball, solved by projected Adam ascent
    in full-rank factor space.
    """
    if not events:
        return 0.0
    m, n = Csum.shape
    rows = np.array([e.i for e in events])
    cols = np.array([e.j for e in events])
    vals = np.array([e.value for e in events])
    W = np.zeros((m, n))
    np.add.at(W, (rows, cols), 1.0)
    Ysum = np.zeros((m, n))
    np.add.at(Ysum, (rows, cols), vals)
    const = float(np.sum(vals * vals))
    total = 0.0
    for sign in (1.0, -1.0):
        A = sign * Csum
        best = -math.inf
        for r in range(restarts + len(warm)):
            start = warm[r] if r < len(warm) else None
            best = max(best, _ascend_quadratic(A, W, Ysum, const, theta, K, steps, seed + r, start))
        total += best
    return total


def _ascend_quadratic(A, W, Ysum, const, theta, K, steps, seed, start=None):
    """Maximize ``<A, M> - theta (sum W M^2 - 2 sum Ysum M + const)`` over the class."""
    m, n = A.shape
    k = min(m, n)
    cls = MatrixClassSpec(K)
    rng = np.random.default_rng(seed)

    def value(M):
        return float(np.sum(A * M) - theta * (np.sum(W * M * M) - 2 * np.sum(Ysum * M) + const))

    if start is not None:
        u, s, vt = np.linalg.svd(start, full_matrices=False)
        F = FactorizedMatrix(u[:, :k] * np.sqrt(s[:k]), vt[:k].T * np.sqrt(s[:k]))
    else:
        F = FactorizedMatrix(0.1 * rng.standard_normal((m, k)), 0.1 * rng.standard_normal((n, k)))
    F = scale_to_class(F, cls)
    U, V = F.U.copy(), F.V.copy()
    best = value(U @ V.T)
    mU, vU, mV, vV = (np.zeros_like(U), np.zeros_like(U), np.zeros_like(V), np.zeros_like(V))
    scale = 1.0 + theta * float(W.max())
    lr = 0.05
    for t in range(1, steps + 1):
        M = U @ V.T
        G = (A - 2 * theta * (W * M - Ysum)) / scale
        gU, gV = G @ V, G.T @ U
        mU = 0.9 * mU + 0.1 * gU
        vU = 0.999 * vU + 0.001 * gU * gU
        mV = 0.9 * mV + 0.1 * gV
        vV = 0.999 * vV + 0.001 * gV * gV
        a = lr / math.sqrt(t) * math.sqrt(1 - 0.999**t) / (1 - 0.9**t)
        U = U + a * mU / (np.sqrt(vU) + 1e-12)
        V = V + a * mV / (np.sqrt(vV) + 1e-12)
        F = scale_to_class(FactorizedMatrix(U, V), cls)
        U, V = F.U, F.V
        best = max(best, value(U @ V.T))
    return best


# ---------------------------------------------------------------------------
# the game loop


@dataclass
class GameState:
    C: np.ndarray
    M1: np.ndarray
    M2: np.ndarray
    t: int = 0
    C_sum: np.ndarray = None
    M1_sum: np.ndarray = None
    M2_sum: np.ndarray = None
    D_sum: np.ndarray = None
    reward_C_sum: float = 0.0
    reward_M_sum: float = 0.0

    def __post_init__(self):
        for name, like in (("C_sum", self.C), ("M1_sum", self.M1), ("M2_sum", self.M2), ("D_sum", self.C)):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros_like(like, dtype=float))


@dataclass
class OddResult:
    C_bar: np.ndarray
    M1_bar: np.ndarray
    M2_bar: np.ndarray
    params: GameParams
    trace: List[dict]
    regret_C: float
    regret_M: Optional[float]
    diagnostics: dict = field(default_factory=dict)

    @property
    def game_regret(self) -> Optional[float]:
        if self.regret_M is None:
            return None
        return max(self.regret_C, self.params.alpha * self.regret_M)

    def regret_scale(self) -> float:
        """``K alpha theta sqrt((m+n) T)``."""
        p = self.params
        return p.K * p.alpha * p.theta * math.sqrt((p.m + p.n) * p.T)


def _checkpoints(T, cfg: OnlineConfig):
    if cfg.regret_checkpoints is not None:
        return {t for t in cfg.regret_checkpoints if 1 <= t <= T} | {T}
    pts, t = set(), 1
    while t < T:
        pts.add(t)
        t *= 2
    return pts | {T}


def run_odd(stream, shape: Tuple[int, int], cfg: OnlineConfig = OnlineConfig(), trace_path=None,
            adversary: Optional[Callable[[int, GameState], RevealEvent]] = None, T: Optional[int] = None) -> OddResult:
    """Play the confidence player against the completion player.

    Parameters
    ----------
    stream : ObservationSet or sequence of RevealEvent, optional
        Recorded reveal order. Ignored when ``adversary`` is given.
    shape : (m, n)
        Matrix shape.
    cfg : OnlineConfig
        Game parameters; ``None`` fields resolve to their defaults.
    trace_path : path, optional
        Write one JSON line per step with keys ``t, h_t, r_t, gamma_t,
        coverage, regret_C, regret_M`` (``regret_M`` is null off the
        checkpoints).
    adversary : callable, optional
        ``adversary(t, state) -> RevealEvent`` for live reveal orders; needs ``T``.

    Returns
    -------
    OddResult
        Averaged confidence and completions, the trace and both regrets.
    """
    m, n = shape
    if adversary is None:
        events = _as_events(stream)
        T = len(events)
    else:
        if T is None:
            raise ValueError("a live adversary needs a horizon T")
        events = []
    if T is None or T < 1:
        raise ValueError("the averaged confidence is undefined for an empty stream (T = 0)")
    params = cfg.resolve(m, n, T)
    start = time.perf_counter()

    player = MatrixMWPlayer(m, n, cfg.K, params.eta_M, cfg.proj_tol, cfg.proj_maxiter)
    M1, M2 = player.pair
    state = GameState(initial_confidence(m, n, params), M1.copy(), M2.copy())
    checkpoints = _checkpoints(T, cfg)
    trace = []
    seen: List[RevealEvent] = []
    max_identity_gap = 0.0
    regret_M = None
    fh = open(trace_path, "w") if trace_path is not None else None
    try:
        for t in range(1, T + 1):
            ev = adversary(t, state) if adversary is not None else events[t - 1]
            if not (0 <= ev.i < m and 0 <= ev.j < n):
                raise ValueError(f"event {t} index out of range")
            seen.append(ev)
            C, M1, M2 = state.C, state.M1, state.M2
            r_t = reward_C(C, M1, M2, params.alpha, params.setting)
            f_t = deviation(M1, M2, ev)
            g_t = G_value(C, M1, M2) - params.theta * f_t
            h_t = h_value(C, M1, M2, ev, params.alpha, params.theta, params.setting)
            max_identity_gap = max(max_identity_gap, abs(h_t - (r_t + params.alpha * params.theta * f_t)))

            state.t = t
            state.C_sum += C
            state.M1_sum += M1
            state.M2_sum += M2
            state.D_sum += M1 - M2
            state.reward_C_sum += r_t
            state.reward_M_sum += g_t

            reg_C = best_fixed_confidence_value(state.D_sum, t, params) - state.reward_C_sum
            reg_M = None
            if t in checkpoints:
                comp = best_fixed_completion_value(state.C_sum, seen, params.theta, cfg.K, cfg.comparator_steps,
                                                   cfg.comparator_restarts, cfg.seed,
                                                   warm=[state.M1_sum / t] if t > 1 else ())
                reg_M = comp - state.reward_M_sum
                regret_M = reg_M
            C_bar_t = state.C_sum / t
            cov = float(C_bar_t.sum() / C_bar_t.max()) if C_bar_t.max() > 0 else 0.0
            row = {"t": t, "h_t": h_t, "r_t": r_t, "gamma_t": g_t, "coverage": cov, "regret_C": reg_C,
                   "regret_M": reg_M}
            trace.append(row)
            if fh is not None:
                fh.write(json.dumps(row) + "\n")

            # both players move simultaneously on the current pair
            C_next = step_AC(C, M1, M2, params)
            M1n, M2n = player.step(C, ev, params.theta)
            state.C, state.M1, state.M2 = C_next, M1n.copy(), M2n.copy()
    finally:
        if fh is not None:
            fh.close()

    diag = {
        "identity_gap": max_identity_gap,
        "projection": dict(player.stats),
        "runtime_s": time.perf_counter() - start,
        "final_C": state.C,
    }
    return OddResult(state.C_sum / T, state.M1_sum / T, state.M2_sum / T, params, trace,
                     trace[-1]["regret_C"], regret_M, diag)


# ---------------------------------------------------------------------------
# simplified loop


@dataclass(frozen=True)
class SimplifiedConfig:
    alpha: float = 5.0
    eta: float = 0.05
    T: Optional[int] = None
    refit_every: int = 50
    theta: float = 20.0
    K: float = 1.0
    rank: Optional[int] = None
    fit_steps: int = 60
    lr: float = 0.05
    seed: int = 0
    floor: float = 1e-300

    def __post_init__(self):
        if not (self.alpha > 0 and self.eta > 0):
            raise ValueError("alpha and eta must be positive")
        if self.refit_every < 1:
            raise ValueError("refit_every must be >= 1")


class DisagreementPredictor:
    """Default matrix-predict hook: returns the disagreement ``M1 - M2`` of two fits.

    Both completions are fitted to the revealed entries while pulling apart
    under the current confidence: ``M1`` ascends ``<C, M> - theta loss`` and
    ``M2`` ascends ``-<C, M> - theta loss``. They are refreshed every
    ``refit_every`` steps with warm-started Adam in factor space, projected
    onto the max-norm class after each step.
    """

    def __init__(self, shape, cfg: SimplifiedConfig):
        m, n = shape
        self.cfg = cfg
        self.cls = MatrixClassSpec(cfg.K)
        k = cfg.rank if cfg.rank is not None else min(m, n)
        rng = np.random.default_rng(cfg.seed)
        self.F = [scale_to_class(FactorizedMatrix(0.1 * rng.standard_normal((m, k)),
                                                  0.1 * rng.standard_normal((n, k))), self.cls) for _ in range(2)]
        self.adam = [None, None]
        self.W = np.zeros(shape)
        self.Y = np.zeros(shape)
        self.N = 0
        self.t = 0
        self.current = np.zeros(shape)
        self.steps_done = [0, 0]

    def observe(self, ev: RevealEvent):
        self.W[ev.i, ev.j] += 1.0
        self.Y[ev.i, ev.j] += ev.value
        self.N += 1

    def __call__(self, C: np.ndarray, M: np.ndarray) -> np.ndarray:
        self.t += 1
        if self.t % self.cfg.refit_every == 0:
            for b, sign in enumerate((1.0, -1.0)):
                self.F[b] = self._fit(b, sign, C)
            self.current = self.F[0].dense() - self.F[1].dense()
        return self.current

    def completion(self) -> np.ndarray:
        return 0.5 * (self.F[0].dense() + self.F[1].dense())

    def _fit(self, b, sign, C):
        cfg = self.cfg
        U, V = self.F[b].U.copy(), self.F[b].V.copy()
        if self.adam[b] is None:
            self.adam[b] = [np.zeros_like(U), np.zeros_like(U), np.zeros_like(V), np.zeros_like(V)]
        mU, vU, mV, vV = self.adam[b]
        N = max(self.N, 1)
        for _ in range(cfg.fit_steps):
            self.steps_done[b] += 1
            t = self.steps_done[b]
            M = U @ V.T
            G = sign * C - cfg.theta * 2.0 * (self.W * M - self.Y) / N
            gU, gV = G @ V, G.T @ U
            mU = 0.9 * mU + 0.1 * gU
            vU = 0.999 * vU + 0.001 * gU * gU
            mV = 0.9 * mV + 0.1 * gV
            vV = 0.999 * vV + 0.001 * gV * gV
            a = cfg.lr * math.sqrt(1 - 0.999**t) / (1 - 0.9**t)
            U = U + a * mU / (np.sqrt(vU) + 1e-12)
            V = V + a * mV / (np.sqrt(vV) + 1e-12)
            F = scale_to_class(FactorizedMatrix(U, V), self.cls)
            U, V = F.U, F.V
        self.adam[b] = [mU, vU, mV, vV]
        return FactorizedMatrix(U, V)


@dataclass
class SimplifiedResult:
    C_bar: np.ndarray
    completion: Optional[np.ndarray]
    diagnostics: dict = field(default_factory=dict)


def run_simplified_odd(stream, shape: Tuple[int, int], cfg: SimplifiedConfig = SimplifiedConfig(),
                       predict: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None) -> SimplifiedResult:
    """Entropy-regularized mirror ascent on the confidence with a pluggable matrix predictor.

    Each step reveals an entry, refreshes ``M_{t+1} = predict(C_t, M_t)``,
    takes the mirror step for ``alpha H(C) - <C, M_t>`` under the
    negative-entropy map, ``log C' = (1 - eta alpha) log C - eta alpha - eta
    M_t``, and projects onto the simplex in Frobenius norm by sorting.

    Parameters
    ----------
    stream : ObservationSet or sequence of RevealEvent
        Reveal order. When ``cfg.T`` exceeds its length the stream is cycled.
    shape : (m, n)
    cfg : SimplifiedConfig
    predict : callable, optional
        ``predict(C, M) -> M``. Defaults to ``DisagreementPredictor``, which
        is also told about every revealed entry.

    Returns
    -------
    SimplifiedResult
        Averaged confidence and, for the default hook, the mean of its two
        completions.
    """
    m, n = shape
    events = _as_events(stream)
    if not events:
        raise ValueError("empty event stream")
    T = cfg.T or len(events)
    hook = predict if predict is not None else DisagreementPredictor(shape, cfg)
    observe = getattr(hook, "observe", None)
    C = np.full(shape, 1.0 / (m * n))
    M = np.zeros(shape)
    C_sum = np.zeros(shape)
    for t in range(T):
        ev = events[t % len(events)]
        if observe is not None:
            observe(ev)
        C_sum += C
        M = np.asarray(hook(C, M), dtype=float)
        logC = np.log(np.maximum(C, cfg.floor))
        C_hat = np.exp((1.0 - cfg.eta * cfg.alpha) * logC - cfg.eta * cfg.alpha - cfg.eta * M)
        C = project_simplex_euclidean(C_hat)
    completion = hook.completion() if hasattr(hook, "completion") else None
    return SimplifiedResult(C_sum / T, completion, {"T": T})


# ---------------------------------------------------------------------------
# online to offline


def version_space_extreme(C: np.ndarray, events: Sequence[RevealEvent], delta: float, K: float, sign: float = 1.0,
                          restarts: int = 4, steps: int = 300, seed: int = 0) -> Tuple[np.ndarray, float]:
    """Heuristic ``max sign * <C, M>`` over ``{M in class : mean_t (M_{x_t} - o_t)^2 <= delta}``.

    Penalized Adam ascent in factor space, then a bisection toward the
    least-squares fit (feasible when ``delta`` is large enough) certifies
    membership. Returns the certified matrix and its value.
    """
    m, n = C.shape
    cls = MatrixClassSpec(K)
    rows = np.array([e.i for e in events], dtype=int)
    cols = np.array([e.j for e in events], dtype=int)
    vals = np.array([e.value for e in events], dtype=float)
    T = max(len(events), 1)
    W = np.zeros((m, n))
    Ysum = np.zeros((m, n))
    if len(events):
        np.add.at(W, (rows, cols), 1.0)
        np.add.at(Ysum, (rows, cols), vals)
    const = float(np.sum(vals * vals))

    def loss(M):
        return float((np.sum(W * M * M) - 2 * np.sum(Ysum * M) + const) / T)

    unconstrained = not np.isfinite(delta)
    # feasible anchor: least-squares fit in the class (zero if that is enough)
    anchor = _ascend_anchor(W, Ysum, T, cls, seed) if len(events) else np.zeros((m, n))
    if not unconstrained and loss(anchor) > delta:
        raise DomainError(f"no class member found with empirical loss <= {delta:g}")
    rng = np.random.default_rng(seed)
    k = min(m, n)
    best_M, best_v = anchor, sign * float(np.sum(C * anchor))
    for r in range(restarts):
        F = scale_to_class(FactorizedMatrix(0.5 * rng.standard_normal((m, k)), 0.5 * rng.standard_normal((n, k))), cls)
        U, V = F.U.copy(), F.V.copy()
        mU, vU, mV, vV = (np.zeros_like(U), np.zeros_like(U), np.zeros_like(V), np.zeros_like(V))
        rho = 1.0
        for t in range(1, steps + 1):
            M = U @ V.T
            G = sign * C
            if not unconstrained:
                excess = loss(M) - delta
                if excess > 0:
                    G = G - rho * 2.0 * (W * M - Ysum) / T
                rho = min(rho * 1.02, 1e6)
            gU, gV = G @ V, G.T @ U
            mU = 0.9 * mU + 0.1 * gU
            vU = 0.999 * vU + 0.001 * gU * gU
            mV = 0.9 * mV + 0.1 * gV
            vV = 0.999 * vV + 0.001 * gV * gV
            a = 0.05 / math.sqrt(t) * math.sqrt(1 - 0.999**t) / (1 - 0.9**t)
            U = U + a * mU / (np.sqrt(vU) + 1e-12)
            V = V + a * mV / (np.sqrt(vV) + 1e-12)
            F = scale_to_class(FactorizedMatrix(U, V), cls)
            U, V = F.U, F.V
        M = U @ V.T
        if not unconstrained and loss(M) > delta:
            lo, hi = 0.0, 1.0  # fraction of the way from anchor to M
            for _ in range(50):
                mid = 0.5 * (lo + hi)
                if loss(anchor + mid * (M - anchor)) <= delta:
                    lo = mid
                else:
                    hi = mid
            M = anchor + lo * (M - anchor)
        v = sign * float(np.sum(C * M))
        if v > best_v:
            best_M, best_v = M, v
    return best_M, best_v


def _ascend_anchor(W, Ysum, T, cls, seed, steps=400):
    m, n = W.shape
    k = min(m, n)
    rng = np.random.default_rng(seed + 7919)
    F = scale_to_class(FactorizedMatrix(0.1 * rng.standard_normal((m, k)), 0.1 * rng.standard_normal((n, k))), cls)
    U, V = F.U.copy(), F.V.copy()
    cnt_r = np.maximum(W.sum(axis=1), 1.0)[:, None]
    cnt_c = np.maximum(W.sum(axis=0), 1.0)[:, None]
    for _ in range(steps):
        R = W * (U @ V.T) - Ysum
        U = U - 1.0 * (R @ V) / cnt_r
        F = scale_to_class(FactorizedMatrix(U, V), cls)
        U, V = F.U, F.V
        R = W * (U @ V.T) - Ysum
        V = V - 1.0 * (R.T @ U) / cnt_c
        F = scale_to_class(FactorizedMatrix(U, V), cls)
        U, V = F.U, F.V
    return U @ V.T


def evaluate_online_to_offline(C_bar: np.ndarray, events, delta: float, K: float = 1.0, setting: str = "H1",
                               restarts: int = 4, seed: int = 0, mu: Optional[np.ndarray] = None) -> dict:
    """Report the regularizer value of ``C_bar`` and the certified worst disagreement over the empirical version space.

    ``sup G(C_bar, M1, M2)`` separates into ``sup <C, M1> + sup <C, -M2>``
    over the same space, each found by ``version_space_extreme``. When the
    sampling distribution ``mu`` is known, the same quantities are reported
    for its confidence matrix (``mu`` itself in H1, ``mu / max mu`` times
    the box cap in H2).
    """
    events = _as_events(events)
    m, n = C_bar.shape

    def report(C):
        _, up = version_space_extreme(C, events, delta, K, 1.0, restarts, seed=seed)
        _, down = version_space_extreme(C, events, delta, K, -1.0, restarts, seed=seed + 1)
        H = entropy(C) if setting == "H1" else float(np.sum(C))
        return {"H": H, "coverage": float(np.sum(C)), "sup_G": up + down,
                "sup_G_normalized": (up + down) / float(np.sum(C)) if np.sum(C) > 0 else 0.0}

    out = {"C_bar": report(C_bar)}
    if mu is not None:
        mu = np.asarray(mu, dtype=float)
        if setting == "H1":
            C_mu = mu / mu.sum()
        else:
            C_mu = mu / mu.max() * (m + n) ** (-1.5)
        out["C_mu"] = report(C_mu)
    return out
