"""Matrix representations, norms, version spaces and entropy primitives.

Indices are 0-based everywhere inside the package; files use 1-based
indices and are converted at the I/O boundary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

EIG_FLOOR = 1e-12
TOL_EIG = 1e-8
TOL_BOX = 1e-9
TOL_LOSS = 1e-9


class DomainError(ValueError):
    """Raised when a quantity is requested outside its domain of definition."""


class ConfigurationError(ValueError):
    """Raised when parameters describe an empty or inconsistent feasible set."""


@dataclass(frozen=True)
class IndexSpace:
    m: int
    n: int

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError(f"index space needs m, n >= 1, got {self.m}x{self.n}")

    @property
    def size(self) -> int:
        return self.m * self.n

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.m, self.n)


@dataclass(frozen=True)
class FactorizedMatrix:
    """A matrix held as ``U @ V.T`` with ``U`` of shape (m, r) and ``V`` of shape (n, r)."""

    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        U = np.atleast_2d(np.asarray(self.U, dtype=float))
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        if U.ndim != 2 or V.ndim != 2 or U.shape[1] != V.shape[1]:
            raise ValueError(f"factor shapes {U.shape} and {V.shape} are incompatible")
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(V))):
            raise ValueError("factors must be finite")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.U.shape[0], self.V.shape[0])

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    def dense(self) -> np.ndarray:
        return self.U @ self.V.T

    def __neg__(self) -> "FactorizedMatrix":
        return FactorizedMatrix(-self.U, self.V.copy())

    def scaled(self, s: float) -> "FactorizedMatrix":
        """Return the factorization of ``s * M`` (scale split evenly between factors)."""
        if s < 0:
            return FactorizedMatrix(-np.sqrt(-s) * self.U, np.sqrt(-s) * self.V)
        r = np.sqrt(s)
        return FactorizedMatrix(r * self.U, r * self.V)

    @classmethod
    def zeros(cls, m: int, n: int, r: int = 1) -> "FactorizedMatrix":
        return cls(np.zeros((m, r)), np.zeros((n, r)))


@dataclass(frozen=True)
class MatrixClassSpec:
    """Norm ball intersected with the entry box ``[-1, 1]``.

    ``bound`` is K for the max-norm kind and tau for the trace-norm kind.
    """

    bound: float
    kind: str = "max-norm"

    def __post_init__(self):
        if self.kind not in ("max-norm", "trace-norm"):
            raise ValueError(f"unknown matrix class kind {self.kind!r}")
        if not self.bound >= 0:
            raise ValueError("class bound must be nonnegative")

    @property
    def K(self) -> float:
        return float(self.bound)


IndexLike = Union[Sequence[Tuple[int, int]], np.ndarray, Tuple[np.ndarray, np.ndarray]]


def as_index_arrays(T: IndexLike) -> Tuple[np.ndarray, np.ndarray]:
    """Normalize an index sequence to a pair of integer arrays ``(rows, cols)``."""
    if isinstance(T, tuple) and len(T) == 2 and not np.isscalar(T[0]):
        rows, cols = np.asarray(T[0], dtype=np.int64), np.asarray(T[1], dtype=np.int64)
    else:
        arr = np.asarray(T, dtype=np.int64)
        if arr.size == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        arr = arr.reshape(-1, 2)
        rows, cols = arr[:, 0], arr[:, 1]
    if rows.shape != cols.shape:
        raise ValueError("row and column index arrays differ in length")
    return rows, cols


def count_matrix(T: IndexLike, shape: Tuple[int, int]) -> np.ndarray:
    """Multiplicity of each index in ``T`` as a dense ``shape`` array."""
    rows, cols = as_index_arrays(T)
    W = np.zeros(shape)
    np.add.at(W, (rows, cols), 1.0)
    return W


@dataclass(frozen=True)
class VersionSpaceSpec:
    """Members of a matrix class within empirical loss ``beta`` of ``center`` on ``sample``."""

    sample: Tuple[np.ndarray, np.ndarray]
    beta: float
    cls: MatrixClassSpec
    shape: Tuple[int, int]
    center: Optional[np.ndarray] = None
    _counts: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rows, cols = as_index_arrays(self.sample)
        object.__setattr__(self, "sample", (rows, cols))
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if np.isfinite(self.beta) and rows.size == 0:
            raise ValueError("a finite radius needs a nonempty sample")
        m, n = self.shape
        if rows.size and (rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n):
            raise ValueError("sample index out of range")
        if self.center is not None:
            c = np.asarray(self.center, dtype=float)
            if c.shape != tuple(self.shape):
                raise ValueError("center shape mismatch")
            object.__setattr__(self, "center", c)
        object.__setattr__(self, "_counts", count_matrix((rows, cols), self.shape))

    @property
    def counts(self) -> np.ndarray:
        return self._counts

    @property
    def size(self) -> int:
        return int(self.sample[0].size)

    @property
    def center_dense(self) -> np.ndarray:
        return np.zeros(self.shape) if self.center is None else self.center

    @property
    def zero_centered(self) -> bool:
        return self.center is None or not np.any(self.center)


def _dense(M) -> np.ndarray:
    return M.dense() if isinstance(M, FactorizedMatrix) else np.asarray(M, dtype=float)


def max_row_norm(A: np.ndarray) -> float:
    if A.size == 0:
        return 0.0
    return float(np.max(np.linalg.norm(A, axis=1)))


def max_norm_upper(M: FactorizedMatrix) -> float:
    """Product of the largest row norms of the two factors.

    This upper-bounds the max-norm of ``M``; no minimization over
    factorizations is attempted.
    """
    return max_row_norm(M.U) * max_row_norm(M.V)


def trace_norm(M) -> float:
    """Sum of singular values."""
    A = _dense(M)
    if not np.all(np.isfinite(A)):
        raise DomainError("trace norm of a non-finite matrix")
    return float(np.sum(np.linalg.svd(A, compute_uv=False)))


def coverage(C: np.ndarray) -> float:
    return float(np.sum(np.abs(C)))


def induced_distribution(C: np.ndarray) -> np.ndarray:
    """``nu_C = C / ||C||_1``."""
    cov = coverage(C)
    if cov <= 0:
        raise DomainError("zero-coverage confidence matrix has no induced distribution")
    return np.abs(np.asarray(C, dtype=float)) / cov


def weighted_loss(C: np.ndarray, A, B) -> float:
    """Mean squared deviation between ``A`` and ``B`` under weights ``C``.

    Parameters
    ----------
    C : ndarray
        Nonnegative confidence weights with positive total mass.
    A, B : ndarray or FactorizedMatrix
        Matrices of the same shape as ``C``.

    Returns
    -------
    float
        ``sum_x C_x (A_x - B_x)**2 / ||C||_1``.
    """
    C = np.asarray(C, dtype=float)
    A, B = _dense(A), _dense(B)
    if A.shape != C.shape or B.shape != C.shape:
        raise ValueError("shape mismatch")
    cov = coverage(C)
    if cov <= 0:
        raise DomainError("weighted loss undefined for zero coverage")
    return float(np.sum(np.abs(C) * (A - B) ** 2) / cov)


def empirical_loss(T: IndexLike, A, B) -> float:
    """Mean squared deviation over the index sequence ``T`` (repeats counted)."""
    rows, cols = as_index_arrays(T)
    if rows.size == 0:
        raise DomainError("empirical loss over an empty sample")
    A, B = _dense(A), _dense(B)
    d = A[rows, cols] - B[rows, cols]
    return float(np.mean(d * d))


def class_violation(M: FactorizedMatrix, spec: MatrixClassSpec) -> Tuple[bool, bool]:
    """Return ``(norm_ok, box_ok)`` for the max-norm class checks."""
    norm_ok = max_norm_upper(M) <= spec.K + TOL_BOX
    box_ok = bool(np.max(np.abs(M.dense()), initial=0.0) <= 1.0 + TOL_BOX)
    return norm_ok, box_ok


def version_space_contains(V: VersionSpaceSpec, M: FactorizedMatrix) -> bool:
    if M.shape != tuple(V.shape):
        raise ValueError("shape mismatch")
    norm_ok, box_ok = class_violation(M, V.cls)
    if not (norm_ok and box_ok):
        return False
    if not np.isfinite(V.beta):
        return True
    return empirical_loss(V.sample, M, V.center_dense) <= V.beta + TOL_LOSS


def balance_factors(M: FactorizedMatrix) -> FactorizedMatrix:
    """Rescale ``U -> cU``, ``V -> V/c`` so both factors have the same largest row norm."""
    a, b = max_row_norm(M.U), max_row_norm(M.V)
    if a == 0 or b == 0:
        return FactorizedMatrix(np.zeros_like(M.U), np.zeros_like(M.V))
    c = np.sqrt(b / a)
    return FactorizedMatrix(M.U * c, M.V / c)


def _clip_rows(A: np.ndarray, radius: float) -> np.ndarray:
    norms = np.linalg.norm(A, axis=1, keepdims=True)
    scale = np.minimum(1.0, radius / np.maximum(norms, 1e-300))
    return A * scale


def scale_to_class(M: FactorizedMatrix, spec: MatrixClassSpec) -> FactorizedMatrix:
    """Cheap projection of a factorization into the max-norm class.

    Feasible input is returned unchanged. Otherwise the factors are balanced,
    rows longer than ``sqrt(K)`` are shrunk radially, and if the product still
    leaves the entry box both factors are scaled by ``sqrt(1/max|M|)``.
    """
    if spec.kind != "max-norm":
        raise ValueError("scale_to_class supports the max-norm class only")
    norm_ok, box_ok = class_violation(M, spec)
    if norm_ok and box_ok:
        return M
    out = M
    if not norm_ok:
        out = balance_factors(out)
        r = np.sqrt(spec.K)
        out = FactorizedMatrix(_clip_rows(out.U, r), _clip_rows(out.V, r))
    peak = float(np.max(np.abs(out.dense()), initial=0.0))
    if peak > 1.0:
        s = np.sqrt(1.0 / peak)
        out = FactorizedMatrix(out.U * s, out.V * s)
    return out


def _sym(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValueError("expected a square matrix")
    return 0.5 * (X + X.T)


def matrix_log(X: np.ndarray, floor: float = EIG_FLOOR, return_clamped: bool = False):
    """Matrix logarithm of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues at or below ``floor`` are clamped to ``floor``; the number
    of clamped eigenvalues is returned when ``return_clamped`` is set and is
    logged at debug level otherwise.
    """
    w, Q = np.linalg.eigh(_sym(X))
    low = w <= floor
    n_clamped = int(np.count_nonzero(low))
    if n_clamped:
        if np.min(w) < -np.sqrt(TOL_EIG) * max(1.0, np.max(np.abs(w))):
            logger.debug("matrix_log: clamping negative eigenvalue %g", np.min(w))
        logger.debug("matrix_log: clamped %d eigenvalue(s) to %g", n_clamped, floor)
        w = np.where(low, floor, w)
    L = (Q * np.log(w)) @ Q.T
    L = 0.5 * (L + L.T)
    return (L, n_clamped) if return_clamped else L


def matrix_exp(X: np.ndarray) -> np.ndarray:
    """Matrix exponential of a symmetric matrix via eigendecomposition."""
    w, Q = np.linalg.eigh(_sym(X))
    E = (Q * np.exp(w)) @ Q.T
    return 0.5 * (E + E.T)


def matrix_relative_entropy(X: np.ndarray, Y: np.ndarray) -> float:
    """``Tr(X log X - X log Y - X + Y)`` for symmetric positive definite ``X, Y``."""
    X, Y = _sym(X), _sym(Y)
    for name, A in (("X", X), ("Y", Y)):
        lo = np.linalg.eigvalsh(A)[0]
        if lo < -TOL_EIG * max(1.0, np.trace(np.abs(A))):
            raise DomainError(f"{name} is not positive semidefinite (min eigenvalue {lo:g})")
    val = np.trace(X @ matrix_log(X)) - np.trace(X @ matrix_log(Y)) - np.trace(X) + np.trace(Y)
    return float(val)


def kl_divergence(q: np.ndarray, p: np.ndarray) -> float:
    """Unnormalized KL divergence ``sum q log(q/p) - q + p`` (the negative-entropy Bregman divergence)."""
    q = np.asarray(q, dtype=float).ravel()
    p = np.asarray(p, dtype=float).ravel()
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(q > 0, q * np.log(q / p), 0.0)
    return float(np.sum(t - q + p))


def simplex_floor(beta: float) -> float:
    return float(np.exp(1.0 - beta))


def bregman_project_simplex(p: np.ndarray, beta: float) -> np.ndarray:
    """KL projection onto ``{C : sum C = 1, C_x >= exp(1 - beta)}``.

    The minimizer has the form ``C = max(floor, lam * p)``. Starting from the
    normalized vector, coordinates falling below the floor are pinned to it
    and the remaining mass is renormalized over the free coordinates until
    no new coordinate violates the floor. Pinned coordinates stay pinned.

    Parameters
    ----------
    p : ndarray
        Strictly positive weights of any shape.
    beta : float
        Floor parameter; the floor is ``exp(1 - beta)``.

    Returns
    -------
    ndarray
        Projected weights with the shape of ``p``.
    """
    p = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p)) or np.any(p <= 0):
        raise DomainError("projection input must be finite and strictly positive")
    f = simplex_floor(beta)
    d = p.size
    if d * f > 1.0 + 1e-12:
        raise ConfigurationError(f"empty constrained simplex: {d} * exp(1 - beta) = {d * f:g} > 1")
    flat = p.ravel()
    pinned = np.zeros(d, dtype=bool)
    while True:
        free_mass = 1.0 - f * np.count_nonzero(pinned)
        free = ~pinned
        lam = free_mass / np.sum(flat[free])
        C = np.where(pinned, f, lam * flat)
        new = free & (C < f)
        if not np.any(new):
            break
        pinned |= new
    return C.reshape(p.shape)


def project_simplex_euclidean(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex by sorting."""
    v = np.asarray(v, dtype=float)
    flat = v.ravel()
    u = np.sort(flat)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, flat.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(flat - tau, 0.0).reshape(v.shape)


def entropy(C: np.ndarray) -> float:
    """``-sum C log C`` with ``0 log 0 = 0``."""
    C = np.asarray(C, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(C > 0, C * np.log(C), 0.0)
    return float(-np.sum(t))
