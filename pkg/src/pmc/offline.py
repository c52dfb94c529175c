"""Offline coverage programs: separation oracles, the coverage solver and the end-to-end pipelines.

The coverage program maximizes ``||C||_1`` over ``C in [0,1]^X`` subject to
``E_{nu_C}[F(M)] <= gamma`` for every ``M`` in a zero-centred version space,
where ``F(M) = M`` (linear constraint) or ``F(M) = M**2`` (quadratic
constraint). Because ``E_{nu_C}`` is homogeneous in ``C`` the constraint is
the cone ``<C, F(M) - gamma> <= 0``. The solver is a cutting-plane loop:
a restricted LP over the pooled oracle cuts proposes ``C``, a heuristic
oracle searches for a violated cut at that ``C``, and a final repair phase
shrinks ``C`` until fresh multi-restart oracle calls certify feasibility.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog

from .completion import FullCompConfig, ObservationSet, full_complete
from .core import (
    TOL_LOSS,
    FactorizedMatrix,
    MatrixClassSpec,
    VersionSpaceSpec,
    coverage,
    induced_distribution,
    scale_to_class,
    version_space_contains,
    weighted_loss,
)

logger = logging.getLogger(__name__)

TOY_SIZE = 64


class SizeGuardError(ValueError):
    """Raised when a toy-only routine is called on a large instance."""


class FeasibilityWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# separation oracles


@dataclass(frozen=True)
class OracleConfig:
    restarts: int = 8
    steps: int = 200
    rank: Optional[int] = None
    lr: float = 0.05
    seed: int = 0
    workers: int = 1


@dataclass
class OracleResult:
    matrix: FactorizedMatrix
    value: float

    def __iter__(self):
        return iter((self.matrix, self.value))


def _objective(kind: str, nu: np.ndarray, M: np.ndarray) -> Tuple[float, np.ndarray]:
    if kind == "linear":
        return float(np.sum(nu * M)), nu
    return float(np.sum(nu * M * M)), 2.0 * nu * M


def _repaired_objective(kind, nu, M, W, N, beta_eff):
    """Objective after shrinking ``M`` onto the loss ball, and its gradient in ``M``.

    Shrinking by ``s = sqrt(beta_eff / loss)`` multiplies the linear objective
    by ``s`` and the quadratic one by ``s**2``.
    """
    f, g = _objective(kind, nu, M)
    loss = float(np.sum(W * M * M)) / N if N else 0.0
    if loss <= beta_eff:
        return f, g, 1.0
    dloss = (2.0 / N) * W * M
    if kind == "linear":
        s = math.sqrt(beta_eff / loss)
        return f * s, s * g - 0.5 * f * s / loss * dloss, s
    s2 = beta_eff / loss
    return f * s2, s2 * g - f * s2 / loss * dloss, math.sqrt(s2)


def _pad_rank(M: FactorizedMatrix, r: int) -> FactorizedMatrix:
    k = M.rank
    if k == r:
        return M
    if k > r:
        return FactorizedMatrix(M.U[:, :r], M.V[:, :r])
    m, n = M.shape
    return FactorizedMatrix(np.hstack([M.U, np.zeros((m, r - k))]), np.hstack([M.V, np.zeros((n, r - k))]))


def _initial_points(kind, vs, nu, r, restarts, rng, warm):
    m, n = vs.shape
    K = vs.cls.K
    pts = []
    for M in warm or ():
        pts.append(_pad_rank(M, r))
    free = nu * (vs.counts == 0)
    if np.any(free):
        # unsampled mass scaled up to the box; zero loss on the sample by construction
        u, s, vt = np.linalg.svd(free / free.max())
        k = min(r, s.size)
        U = np.zeros((m, r))
        V = np.zeros((n, r))
        U[:, :k] = u[:, :k] * np.sqrt(s[:k])
        V[:, :k] = vt[:k].T * np.sqrt(s[:k])
        pts.append(FactorizedMatrix(U, V))
    while len(pts) < restarts + len(warm or ()):
        scale = math.sqrt(K / r) * 0.7
        pts.append(FactorizedMatrix(scale * rng.standard_normal((m, r)), scale * rng.standard_normal((n, r))))
    return pts


def _ascend(kind, vs, nu, start: FactorizedMatrix, steps, lr, beta_eff):
    cls = vs.cls
    W = vs.counts
    N = vs.size
    M0 = scale_to_class(start, cls)
    U, V = M0.U.copy(), M0.V.copy()
    if kind == "linear" and np.sum(nu * (U @ V.T)) < 0:
        U = -U
    best = (-math.inf, None)
    mU = np.zeros_like(U)
    vU = np.zeros_like(U)
    mV = np.zeros_like(V)
    vV = np.zeros_like(V)
    b1, b2 = 0.9, 0.999
    for t in range(1, steps + 1):
        M = U @ V.T
        f, G, s = _repaired_objective(kind, nu, M, W, N, beta_eff)
        if f > best[0]:
            best = (f, (U.copy(), V.copy(), s))
        gU = G @ V
        gV = G.T @ U
        mU = b1 * mU + (1 - b1) * gU
        vU = b2 * vU + (1 - b2) * gU * gU
        mV = b1 * mV + (1 - b1) * gV
        vV = b2 * vV + (1 - b2) * gV * gV
        a = lr / math.sqrt(t) * math.sqrt(1 - b2**t) / (1 - b1**t)
        U = U + a * mU / (np.sqrt(vU) + 1e-12)
        V = V + a * mV / (np.sqrt(vV) + 1e-12)
        P = scale_to_class(FactorizedMatrix(U, V), cls)
        U, V = P.U, P.V
    M = U @ V.T
    f, _, s = _repaired_objective(kind, nu, M, W, N, beta_eff)
    if f > best[0]:
        best = (f, (U, V, s))
    U, V, s = best[1]
    return FactorizedMatrix(U * math.sqrt(s), V * math.sqrt(s))


def _certify(kind, vs, nu, M: FactorizedMatrix) -> Tuple[FactorizedMatrix, float]:
    """Shrink until the membership test passes and evaluate the objective."""
    for _ in range(60):
        if version_space_contains(vs, M):
            return M, _objective(kind, nu, M.dense())[0]
        M = M.scaled(0.999 if np.isfinite(vs.beta) else 1.0)
        M = scale_to_class(M, vs.cls)
    return FactorizedMatrix.zeros(*vs.shape), 0.0


def _oracle(kind, vs: VersionSpaceSpec, C, cfg: OracleConfig, warm=None) -> OracleResult:
    if not vs.zero_centered:
        raise ValueError("the separation oracles require a zero-centred version space")
    nu = induced_distribution(C)
    m, n = vs.shape
    r = min(m, n) if cfg.rank is None else min(cfg.rank, m, n)
    rng = np.random.default_rng(cfg.seed)
    # pad the radius by half the membership tolerance so shrinking can land inside
    beta_eff = vs.beta + 0.5 * TOL_LOSS if np.isfinite(vs.beta) else math.inf
    starts = _initial_points(kind, vs, nu, r, cfg.restarts, rng, warm)

    def run(start):
        return _certify(kind, vs, nu, _ascend(kind, vs, nu, start, cfg.steps, cfg.lr, beta_eff))

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            results = list(ex.map(run, starts))
    else:
        results = [run(s) for s in starts]
    best = OracleResult(FactorizedMatrix.zeros(m, n, r), 0.0)
    for M, v in results:
        if v > best.value:
            best = OracleResult(M, v)
    return best


def oracle_linear_max(vs: VersionSpaceSpec, C: np.ndarray, restarts: int = 8, seed: int = 0,
                      steps: int = 200, rank: Optional[int] = None, warm: Optional[Sequence[FactorizedMatrix]] = None,
                      lr: float = 0.05, workers: int = 1) -> OracleResult:
    """Heuristic maximizer of ``E_{nu_C}[M]`` over a zero-centred version space.

    Each restart runs projected Adam ascent in factor space on the objective
    evaluated after shrinking ``M`` onto the empirical-loss ball, projecting
    with ``scale_to_class`` after every step. The best iterate is shrunk
    until it passes ``version_space_contains``, so the returned value is a
    certified lower bound on the supremum.

    Parameters
    ----------
    vs : VersionSpaceSpec
        Zero-centred version space.
    C : ndarray
        Confidence weights with positive coverage.
    restarts, seed, steps, rank, lr
        Search budget. ``rank`` defaults to ``min(m, n)``.
    warm : sequence of FactorizedMatrix, optional
        Extra starting points, tried in addition to the restarts.

    Returns
    -------
    OracleResult
        ``(matrix, value)``; unpacks as a tuple.
    """
    cfg = OracleConfig(restarts=restarts, steps=steps, rank=rank, lr=lr, seed=seed, workers=workers)
    return _oracle("linear", vs, C, cfg, warm)


def oracle_quadratic_max(vs: VersionSpaceSpec, C: np.ndarray, restarts: int = 8, seed: int = 0,
                         steps: int = 200, rank: Optional[int] = None,
                         warm: Optional[Sequence[FactorizedMatrix]] = None, lr: float = 0.05,
                         workers: int = 1, allow_large: bool = False) -> OracleResult:
    """Heuristic maximizer of ``E_{nu_C}[M^2]``; same scheme as the linear oracle.

    Exact maximization is NP-hard, so this is restricted to ``m * n <= 64``
    unless ``allow_large`` is set.
    """
    m, n = vs.shape
    if m * n > TOY_SIZE and not allow_large:
        raise SizeGuardError(f"quadratic oracle is toy-scale only (m*n={m * n} > {TOY_SIZE})")
    cfg = OracleConfig(restarts=restarts, steps=steps, rank=rank, lr=lr, seed=seed, workers=workers)
    return _oracle("quadratic", vs, C, cfg, warm)


# ---------------------------------------------------------------------------
# coverage programs


@dataclass(frozen=True)
class CoverageProgramSpec:
    gamma: float
    vs: VersionSpaceSpec
    mode: str = "linear"

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.mode not in ("linear", "quadratic"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def beta(self) -> float:
        return self.vs.beta


@dataclass(frozen=True)
class SolverBudget:
    iterations: int = 40
    restarts: int = 8
    steps: int = 200
    warm_restarts: int = 2
    rank: Optional[int] = None
    repair_rounds: int = 40
    certify_restarts: int = 16
    tol_feas: float = 1e-3
    seed: int = 0
    workers: int = 1


@dataclass
class CoverageSolution:
    confidence: np.ndarray
    certified_value: float
    feasible: bool
    diagnostics: dict = field(default_factory=dict)


class _CutPool:
    def __init__(self, shape):
        self.shape = shape
        self.mats: List[np.ndarray] = []
        self.factors: List[FactorizedMatrix] = []

    def add(self, M: FactorizedMatrix, F: np.ndarray):
        self.factors.append(M)
        self.mats.append(F)

    def worst(self, nu: np.ndarray) -> Tuple[int, float]:
        if not self.mats:
            return -1, -math.inf
        vals = np.tensordot(np.asarray(self.mats), nu, axes=([1, 2], [0, 1]))
        k = int(np.argmax(vals))
        return k, float(vals[k])


def _F(kind, M: FactorizedMatrix) -> np.ndarray:
    D = M.dense()
    return D if kind == "linear" else D * D


def _restricted_lp(cuts: np.ndarray, gamma: float, shape) -> Tuple[np.ndarray, np.ndarray]:
    """Maximize ``sum C`` over the box subject to ``<C, F_k - gamma> <= 0`` for the pooled cuts.

    Returns the solution and the cut multipliers.
    """
    mn = shape[0] * shape[1]
    A = cuts.reshape(len(cuts), mn) - gamma
    res = linprog(-np.ones(mn), A_ub=A, b_ub=np.zeros(len(cuts)), bounds=(0.0, 1.0), method="highs")
    if res.status != 0:
        raise RuntimeError(f"restricted coverage LP failed: {res.message}")
    duals = -np.asarray(res.ineqlin.marginals)
    return np.clip(res.x, 0.0, 1.0).reshape(shape), duals


def _solve(spec: CoverageProgramSpec, budget: SolverBudget, oracle_fn) -> CoverageSolution:
    kind = spec.mode
    vs = spec.vs
    gamma = spec.gamma
    shape = vs.shape
    if gamma >= 1.0:
        # entries are bounded by one, so the constraint cannot bind
        return CoverageSolution(np.ones(shape), 1.0, True, {"vacuous": True, "oracle_calls": 0})

    pool = _CutPool(shape)
    calls = [0]

    def query(C, restarts, seed, warm_k):
        calls[0] += 1
        warm = pool.factors[-warm_k:] if warm_k else None
        res = oracle_fn(vs, C, restarts=restarts, seed=seed, steps=budget.steps, rank=budget.rank,
                        warm=warm, workers=budget.workers)
        pool.add(res.matrix, _F(kind, res.matrix))
        return res

    tol = gamma * (1.0 + budget.tol_feas)
    C = np.ones(shape)
    query(C, budget.restarts, budget.seed, 0)
    history = []
    feasible = False
    cert = math.inf
    duals = np.zeros(0)
    for it in range(1, budget.iterations + 1):
        C, duals = _restricted_lp(np.asarray(pool.mats), gamma, shape)
        if C.sum() <= 0:
            # no positive coverage satisfies the pooled cuts; the empty matrix is trivially feasible
            feasible, cert = True, 0.0
            break
        res = query(C, budget.warm_restarts, budget.seed + it, budget.warm_restarts)
        history.append((float(C.sum()), float(res.value), len(pool.mats)))
        logger.debug("coverage iter %d: cov=%.3f oracle=%.5f cuts=%d", it, C.sum(), res.value, len(pool.mats))
        if res.value > tol:
            continue
        # cheap search found nothing; confirm with a full multi-restart call
        res = query(C, budget.certify_restarts, budget.seed + 100_000 + it, budget.warm_restarts)
        _, pooled = pool.worst(C / C.sum())
        cert = max(res.value, pooled)
        if cert <= tol:
            feasible = True
            break

    repair_steps = []
    if not feasible and C.sum() > 0:
        for rnd in range(budget.repair_rounds):
            nu = C / C.sum()
            res = query(C, budget.certify_restarts, budget.seed + 200_000 + rnd, budget.warm_restarts)
            k, pooled = pool.worst(nu)
            cert = max(res.value, pooled)
            if cert <= tol:
                feasible = True
                break
            C_new = _shrink_to_level(C, pool.mats[k], gamma)
            after = float(np.sum(C_new * pool.mats[k]) / C_new.sum())
            repair_steps.append((cert, after))
            if not after < cert:
                break
            C = C_new
    if not feasible:
        warnings.warn("oracle budget exhausted before feasibility was certified", FeasibilityWarning, stacklevel=3)
    diag = {
        "oracle_calls": calls[0],
        "cuts": len(pool.mats),
        "active_cuts": int(np.count_nonzero(duals > 1e-9)),
        "repair_steps": repair_steps,
        "trajectory": history,
    }
    return CoverageSolution(C, float(cert), feasible, diag)


def _shrink_to_level(C: np.ndarray, F: np.ndarray, gamma: float) -> np.ndarray:
    """Multiplicatively shrink entries with ``F > gamma`` until ``E_{nu_C}[F] <= gamma``.

    The shrink factor is ``exp(-kappa (F - gamma)_+)`` with ``kappa`` found by
    bisection. Along this path the weighted mean of ``F`` strictly decreases.
    """
    excess = np.maximum(F - gamma, 0.0)

    def level(kappa):
        Ck = C * np.exp(-kappa * excess)
        s = Ck.sum()
        return (float(np.sum(Ck * F) / s) if s > 0 else -math.inf), Ck

    lo, hi = 0.0, 1.0
    while level(hi)[0] > gamma and hi < 1e6:
        hi *= 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if level(mid)[0] > gamma:
            lo = mid
        else:
            hi = mid
    return level(hi)[1]


def solve_mp4(spec: CoverageProgramSpec, budget: SolverBudget = SolverBudget(),
              oracle: Optional[Callable] = None) -> CoverageSolution:
    """Maximize coverage subject to the linear constraint ``E_{nu_C}[M] <= gamma`` over the version space.

    Parameters
    ----------
    spec : CoverageProgramSpec
        Linear-mode program.
    budget : SolverBudget
        Iteration, restart and repair budgets.
    oracle : callable, optional
        Separation oracle with the signature of ``oracle_linear_max``;
        defaults to it.

    Returns
    -------
    CoverageSolution
        Confidence matrix, certified constraint value and feasibility flag.
        A ``FeasibilityWarning`` is issued when the budget runs out first.
    """
    if spec.mode != "linear":
        raise ValueError("solve_mp4 needs a linear-constraint program")
    return _solve(spec, budget, oracle or oracle_linear_max)


def solve_mp3_toy(spec: CoverageProgramSpec, budget: SolverBudget = SolverBudget(),
                  oracle: Optional[Callable] = None) -> CoverageSolution:
    """Maximize coverage subject to ``E_{nu_C}[M^2] <= gamma`` (heuristic, toy sizes only)."""
    if spec.mode != "quadratic":
        raise ValueError("solve_mp3_toy needs a quadratic-constraint program")
    m, n = spec.vs.shape
    if m * n > TOY_SIZE:
        raise SizeGuardError(f"quadratic program is toy-scale only (m*n={m * n} > {TOY_SIZE})")
    return _solve(spec, budget, oracle or oracle_quadratic_max)


# ---------------------------------------------------------------------------
# pipelines


@dataclass
class PmcResult:
    completion: FactorizedMatrix
    confidence: np.ndarray
    coverage: float
    certified_value: float
    gamma: float
    beta: float
    feasible: bool
    diagnostics: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "coverage": self.coverage,
            "certified_value": self.certified_value,
            "gamma": self.gamma,
            "beta": self.beta,
            "feasible": bool(self.feasible),
            "fit_loss": self.diagnostics.get("fit_loss"),
            "oracle_calls": self.diagnostics.get("oracle_calls"),
        }


def algorithm2_parameters(eps: float, K: float) -> dict:
    """Constraint level, version-space radius and fit target for the efficient pipeline."""
    return {
        "gamma": eps / (2 * math.pi * K),
        "beta": eps**2 / (8 * math.pi**2 * K**2),
        "fit_target": eps**2 / (4 * math.pi**2 * K**2),
    }


def algorithm1_parameters(eps: float) -> dict:
    return {"gamma": eps / 4, "beta": eps / 8, "fit_target": eps / 4}


def _version_space(obs: ObservationSet, beta: float, K: float) -> VersionSpaceSpec:
    return VersionSpaceSpec(sample=obs.indices, beta=beta, cls=MatrixClassSpec(K), shape=obs.shape)


def run_algorithm2(obs: ObservationSet, eps: float, delta: float, K: float,
                   fit: FullCompConfig = None, budget: SolverBudget = SolverBudget()) -> PmcResult:
    """Efficient pipeline: fit a completion, then solve the linear coverage program.

    Parameters
    ----------
    obs : ObservationSet
        Training sample.
    eps, delta : float
        Target error and failure probability.
    K : float
        Max-norm bound of the class.
    fit : FullCompConfig, optional
        Completion settings; ``K`` is overridden.
    budget : SolverBudget
        Coverage-solver budget.
    """
    if obs.N == 0:
        raise ValueError("no observations")
    par = algorithm2_parameters(eps, K)
    fit = fit or FullCompConfig(K=K)
    fit = FullCompConfig(**{**asdict(fit), "K": K, "eps": par["fit_target"], "delta": delta / 3})
    comp = full_complete(obs, fit)
    vs = _version_space(obs, par["beta"], K)
    sol = solve_mp4(CoverageProgramSpec(par["gamma"], vs, "linear"), budget)
    diag = dict(sol.diagnostics)
    diag.update(fit_loss=comp.loss, fit_target=par["fit_target"], fit_epochs=len(comp.history) - 1)
    return PmcResult(comp.matrix, sol.confidence, coverage(sol.confidence), sol.certified_value,
                     par["gamma"], par["beta"], sol.feasible, diag)


def run_algorithm1(obs: ObservationSet, eps: float, delta: float, K: float,
                   fit: FullCompConfig = None, budget: SolverBudget = SolverBudget()) -> PmcResult:
    """Quadratic-constraint pipeline at toy scale."""
    par = algorithm1_parameters(eps)
    fit = fit or FullCompConfig(K=K)
    fit = FullCompConfig(**{**asdict(fit), "K": K, "eps": par["fit_target"], "delta": delta / 2})
    comp = full_complete(obs, fit)
    vs = _version_space(obs, par["beta"], K)
    sol = solve_mp3_toy(CoverageProgramSpec(par["gamma"], vs, "quadratic"), budget)
    diag = dict(sol.diagnostics)
    diag.update(fit_loss=comp.loss, fit_target=par["fit_target"])
    return PmcResult(comp.matrix, sol.confidence, coverage(sol.confidence), sol.certified_value,
                     par["gamma"], par["beta"], sol.feasible, diag)


def witness_confidence(mu: np.ndarray) -> np.ndarray:
    """``C^mu = mu / max(mu)``; its coverage is ``1 / max(mu)``."""
    mu = np.asarray(mu, dtype=float)
    top = float(mu.max())
    if top <= 0:
        raise ValueError("distribution has no mass")
    return mu / top


def certified_constraint(vs: VersionSpaceSpec, C: np.ndarray, restarts: int = 16, seed: int = 0,
                         steps: int = 200, mode: str = "linear") -> float:
    """Best oracle value found for ``E_{nu_C}[F(M)]`` (a lower bound on the supremum)."""
    fn = oracle_linear_max if mode == "linear" else oracle_quadratic_max
    return fn(vs, C, restarts=restarts, seed=seed, steps=steps).value


def prediction_error(C: np.ndarray, truth: np.ndarray, completion) -> float:
    return weighted_loss(C, truth, completion)
