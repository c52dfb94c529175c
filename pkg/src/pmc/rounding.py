"""Random-hyperplane sign-flip rounding of factorized matrices."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import FactorizedMatrix


@dataclass(frozen=True)
class RoundingSample:
    w: np.ndarray
    flipped: FactorizedMatrix


def random_unit_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Uniform draw from the unit sphere via a normalized Gaussian."""
    while True:
        g = rng.standard_normal(dim)
        nrm = np.linalg.norm(g)
        if nrm > 0:
            return g / nrm


def _signs(A: np.ndarray, w: np.ndarray) -> np.ndarray:
    s = np.sign(A @ w)
    s[s == 0] = 1.0
    return s


def sign_flip_round(M: FactorizedMatrix, seed=None) -> RoundingSample:
    """Flip each factor row to the positive side of a random hyperplane.

    ``u_i -> sign(w.u_i) u_i`` and ``v_j -> sign(w.v_j) v_j`` with ``w``
    uniform on the sphere; ``sign(0)`` is taken as +1. Entries of the
    product only change sign and row norms are untouched.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    w = random_unit_vector(rng, M.rank)
    U = M.U * _signs(M.U, w)[:, None]
    V = M.V * _signs(M.V, w)[:, None]
    return RoundingSample(w, FactorizedMatrix(U, V))


def angle(u: np.ndarray, v: np.ndarray) -> float:
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("angle undefined for a zero vector")
    return math.acos(float(np.clip(u @ v / (nu * nv), -1.0, 1.0)))


def expected_flip_value(u: np.ndarray, v: np.ndarray) -> float:
    """Closed form of ``E_w[sign(w.u) sign(w.v)] u.v = u.v (1 - 2 theta / pi)``."""
    th = angle(u, v)
    return float(np.dot(u, v)) * (1.0 - 2.0 * th / math.pi)


def flip_value_lower_bound(u: np.ndarray, v: np.ndarray) -> float:
    """``2 (u.v)^2 / (pi |u| |v|)``."""
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    return 2.0 * float(u @ v) ** 2 / (math.pi * np.linalg.norm(u) * np.linalg.norm(v))


def cos_gap(theta):
    """``(1 - 2 theta / pi) - 2 cos(theta) / pi``, nonnegative on ``[-pi/2, pi/2]``.

    Accepts scalars or arrays.
    """
    th = np.asarray(theta, dtype=float)
    if np.any(np.abs(th) > math.pi / 2 + 1e-15):
        raise ValueError("theta must lie in [-pi/2, pi/2]")
    out = (1.0 - 2.0 * th / math.pi) - 2.0 * np.cos(th) / math.pi
    return float(out) if out.ndim == 0 else out


def flip_products(u: np.ndarray, v: np.ndarray, n_draws: int, rng: np.random.Generator) -> np.ndarray:
    """Monte Carlo draws of ``u~ . v~`` for one factor pair."""
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    W = rng.standard_normal((n_draws, u.size))
    su = np.sign(W @ u)
    sv = np.sign(W @ v)
    su[su == 0] = 1.0
    sv[sv == 0] = 1.0
    return su * sv * float(u @ v)


def gw_suite(pairs: int = 100, mc: int = 10_000, dim: int = 3, sweep: int = 10_000, flip_draws: int = 100_000,
             seed: int = 0) -> dict:
    """Run the rounding inequality checks and return a summary dict.

    Three checks: the cosine gap is nonnegative over a sweep of
    ``[-pi/2, pi/2]``; for random factor pairs the Monte Carlo mean of the
    flipped product is at least ``2 (u.v)^2 / (pi |u||v|)`` minus three
    standard errors; and the empirical sign-flip frequency matches
    ``theta / pi`` within three standard errors.
    """
    rng = np.random.default_rng(seed)
    th = np.linspace(-math.pi / 2, math.pi / 2, sweep)
    gaps = cos_gap(th)
    sweep_min = float(np.min(gaps))

    worst_margin = math.inf
    failures = 0
    for _ in range(pairs):
        u, v = rng.standard_normal(dim), rng.standard_normal(dim)
        prods = flip_products(u, v, mc, rng)
        mean = float(np.mean(prods))
        se = float(np.std(prods, ddof=1) / math.sqrt(mc))
        bound = flip_value_lower_bound(u, v)
        margin = (mean - bound + 3 * se)
        worst_margin = min(worst_margin, margin)
        failures += margin < 0

    u = np.array([1.0, 0.0, 0.0])
    v = np.array([math.cos(1.0), math.sin(1.0), 0.0])
    W = rng.standard_normal((flip_draws, 3))
    flips = np.sign(W @ u) != np.sign(W @ v)
    p_hat = float(np.mean(flips))
    p = angle(u, v) / math.pi
    sigma = math.sqrt(p * (1 - p) / flip_draws)
    flip_z = (p_hat - p) / sigma

    return {
        "cos_sweep_min": sweep_min,
        "cos_sweep_ok": sweep_min >= -1e-12,
        "pair_failures": int(failures),
        "pair_worst_margin": worst_margin,
        "pairs_ok": failures == 0,
        "flip_prob_hat": p_hat,
        "flip_prob": p,
        "flip_z": flip_z,
        "flip_ok": abs(flip_z) <= 3.0,
    }
