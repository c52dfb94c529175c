"""Full completion by empirical risk minimization over the max-norm class."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import numpy as np

from .core import (
    TOL_BOX,
    FactorizedMatrix,
    IndexSpace,
    MatrixClassSpec,
    scale_to_class,
)


class TrainingError(RuntimeError):
    """Raised when optimization diverges."""


@dataclass(frozen=True)
class ObservationSet:
    """Ordered samples ``(i_t, j_t, y_t)`` on an ``m x n`` index space (0-based)."""

    space: IndexSpace
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64).ravel()
        cols = np.asarray(self.cols, dtype=np.int64).ravel()
        values = np.asarray(self.values, dtype=float).ravel()
        if not (rows.size == cols.size == values.size):
            raise ValueError("rows, cols and values must have equal length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= self.space.m or cols.min() < 0 or cols.max() >= self.space.n:
                raise ValueError("observation index out of range")
            if not np.all(np.isfinite(values)) or np.max(np.abs(values)) > 1.0 + TOL_BOX:
                raise ValueError("observation values must lie in [-1, 1]")
        for name, arr in (("rows", rows), ("cols", cols), ("values", values)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_triples(cls, m: int, n: int, triples: Iterable[Tuple[int, int, float]]) -> "ObservationSet":
        t = list(triples)
        if not t:
            return cls(IndexSpace(m, n), np.zeros(0), np.zeros(0), np.zeros(0))
        arr = np.asarray(t, dtype=float)
        return cls(IndexSpace(m, n), arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64), arr[:, 2])

    @property
    def N(self) -> int:
        return int(self.rows.size)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.space.shape

    @property
    def indices(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.rows, self.cols

    def __len__(self) -> int:
        return self.N

    def subset(self, mask_or_idx) -> "ObservationSet":
        return ObservationSet(self.space, self.rows[mask_or_idx], self.cols[mask_or_idx], self.values[mask_or_idx])

    def counts(self) -> np.ndarray:
        W = np.zeros(self.shape)
        np.add.at(W, (self.rows, self.cols), 1.0)
        return W


def write_observations(path, obs: ObservationSet) -> None:
    """Write ``i,j,value`` rows with 1-based indices."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "value"])
        for i, j, v in zip(obs.rows.tolist(), obs.cols.tolist(), obs.values.tolist()):
            w.writerow([i + 1, j + 1, repr(float(v))])


def read_observations(path, m: Optional[int] = None, n: Optional[int] = None) -> ObservationSet:
    """Read an ``i,j,value`` CSV with 1-based indices and an optional header.

    Shape defaults to the largest indices present.
    """
    triples = _parse_triples(Path(path))
    if not triples:
        raise ValueError(f"{path}: no observations")
    arr = np.asarray([(t[1], t[2], t[3]) for t in triples], dtype=float)
    mm = int(arr[:, 0].max()) if m is None else m
    nn = int(arr[:, 1].max()) if n is None else n
    return ObservationSet(IndexSpace(mm, nn), arr[:, 0].astype(np.int64) - 1, arr[:, 1].astype(np.int64) - 1, arr[:, 2])


def _parse_triples(path: Path) -> List[Tuple[int, int, int, float]]:
    out = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                i, j, v = int(row[0]), int(row[1]), float(row[2])
            except ValueError:
                if lineno == 1 and not out:
                    continue  # header
                raise ValueError(f"{path}:{lineno}: malformed row {row!r}") from None
            if i < 1 or j < 1:
                raise ValueError(f"{path}:{lineno}: indices are 1-based, got ({i}, {j})")
            if not math.isfinite(v):
                raise ValueError(f"{path}:{lineno}: non-finite value")
            out.append((lineno, i, j, v))
    return out


def sample_budget_max(eps: float, delta: float, K: float, m: int, n: int, c0: float = 1.0) -> int:
    """``ceil(c0 (K^2 (m+n) + ln(1/delta)) / eps^2)``."""
    _check_eps_delta(eps, delta, c0)
    return int(math.ceil(c0 * (K * K * (m + n) + math.log(1.0 / delta)) / (eps * eps)))


def sample_budget_trace(eps: float, delta: float, tau: float, m: int, n: int, c0: float = 1.0) -> int:
    """``ceil(c0 (tau sqrt(m+n) + ln(1/delta)) / eps^2)``."""
    _check_eps_delta(eps, delta, c0)
    return int(math.ceil(c0 * (tau * math.sqrt(m + n) + math.log(1.0 / delta)) / (eps * eps)))


def _check_eps_delta(eps, delta, c0):
    if not (0 < eps < 1 and 0 < delta < 1):
        raise ValueError("eps and delta must lie in (0, 1)")
    if c0 <= 0:
        raise ValueError("c0 must be positive")


def default_rank(K: float, m: int, n: int) -> int:
    """Rank cap ``k`` with ``K = sqrt(k)``, clipped to ``[1, min(m, n)]``."""
    return int(min(max(1, math.ceil(K * K - 1e-9)), m, n))


@dataclass(frozen=True)
class FullCompConfig:
    K: float = 1.0
    rank: Optional[int] = None
    lr: float = 1.0
    epochs: int = 300
    batch_size: Optional[int] = None
    seed: int = 0
    init_scale: float = 0.1
    tol: float = 1e-10
    eps: Optional[float] = None
    delta: Optional[float] = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.rank is not None and self.rank < 1:
            raise ValueError("rank cap must be >= 1")
        if self.epochs < 1:
            raise ValueError("need at least one epoch")

    @property
    def cls(self) -> MatrixClassSpec:
        return MatrixClassSpec(self.K)


@dataclass
class FullCompResult:
    matrix: FactorizedMatrix
    loss: float
    history: List[float] = field(default_factory=list)
    rejected_epochs: int = 0

    def dense(self) -> np.ndarray:
        return self.matrix.dense()


def _loss(U, V, rows, cols, y):
    r = np.einsum("ij,ij->i", U[rows], V[cols]) - y
    return float(np.mean(r * r))


def full_complete(obs: ObservationSet, cfg: FullCompConfig = FullCompConfig()) -> FullCompResult:
    """Fit ``M = U V^T`` in the max-norm class to the observations.

    Mini-batch gradient descent on the mean squared error over observed
    entries, alternating row and column factor updates. Each factor row's
    gradient is normalized by that row's observation count in the batch,
    which makes one step size work across sampling densities. The class is
    enforced with ``scale_to_class`` after every step and the step size
    decays as ``lr / sqrt(epoch)``. An epoch that would increase the
    training loss is rolled back and the base step halved, so the recorded
    loss sequence is non-increasing.

    Parameters
    ----------
    obs : ObservationSet
        Nonempty training sample; duplicates count with multiplicity.
    cfg : FullCompConfig
        Class bound, rank cap, schedule and seed.

    Returns
    -------
    FullCompResult
        Fitted factors, final training loss and per-epoch loss history.
    """
    if obs.N == 0:
        raise ValueError("full completion needs at least one observation")
    m, n = obs.shape
    r = cfg.rank if cfg.rank is not None else default_rank(cfg.K, m, n)
    r = min(r, m, n)
    cls = cfg.cls
    rng = np.random.default_rng(cfg.seed)
    U = cfg.init_scale * rng.standard_normal((m, r))
    V = cfg.init_scale * rng.standard_normal((n, r))
    M = scale_to_class(FactorizedMatrix(U, V), cls)
    U, V = M.U.copy(), M.V.copy()
    rows, cols, y = obs.rows, obs.cols, obs.values
    N = obs.N
    bs = N if cfg.batch_size is None else max(1, min(cfg.batch_size, N))

    lr0 = cfg.lr
    prev = _loss(U, V, rows, cols, y)
    history = [prev]
    rejected = 0
    for epoch in range(1, cfg.epochs + 1):
        step = lr0 / math.sqrt(epoch)
        U_new, V_new = U.copy(), V.copy()
        order = rng.permutation(N) if bs < N else np.arange(N)
        for start in range(0, N, bs):
            b = order[start : start + bs]
            br, bc, by = rows[b], cols[b], y[b]
            U_new = U_new - step * _row_grad(U_new, V_new, br, bc, by, m)
            V_new = V_new - step * _row_grad(V_new, U_new, bc, br, by, n)
            M = scale_to_class(FactorizedMatrix(U_new, V_new), cls)
            U_new, V_new = M.U, M.V
        cur = _loss(U_new, V_new, rows, cols, y)
        if not math.isfinite(cur):
            raise TrainingError(f"loss became non-finite at epoch {epoch} (step {step:g}, last loss {prev:g})")
        if cur > prev:
            rejected += 1
            lr0 *= 0.5
            continue
        U, V = U_new, V_new
        history.append(cur)
        if prev - cur <= cfg.tol * max(prev, 1e-300) and cur < prev:
            prev = cur
            break
        prev = cur
    return FullCompResult(FactorizedMatrix(U, V), prev, history, rejected)


def _row_grad(A, B, ia, ib, y, size):
    """Count-normalized gradient of the squared loss wrt the rows of ``A``."""
    res = np.einsum("ij,ij->i", A[ia], B[ib]) - y
    G = np.zeros_like(A)
    np.add.at(G, ia, 2.0 * res[:, None] * B[ib])
    cnt = np.bincount(ia, minlength=size).astype(float)
    return G / np.maximum(cnt, 1.0)[:, None]
