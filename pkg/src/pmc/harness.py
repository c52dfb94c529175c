"""Synthetic instances, ratings ingestion and evaluation metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from scipy.stats import spearmanr

from .completion import FullCompConfig, ObservationSet, _parse_triples, full_complete
from .core import IndexSpace, coverage, weighted_loss
from .online import SimplifiedConfig, run_simplified_odd

STRUCTURES = ("two-block", "uniform-subset", "full-uniform")


@dataclass(frozen=True)
class SyntheticSpec:
    """Planted low-rank instance with a sampling support ``U``.

    ``two-block`` splits rows and columns into two groups each and samples
    only same-group entries; ``uniform-subset`` samples a random ``c``
    fraction of entries, optionally biased toward popular rows and columns
    by ``popularity_skew``; ``full-uniform`` samples everywhere. Factor rows
    have norms in ``[amplitude/2, amplitude]`` (squared entries bounded by
    ``amplitude^2``), and a random row and column permutation is applied.
    """

    m: int = 40
    n: int = 40
    rank: int = 2
    structure: str = "uniform-subset"
    c: float = 0.5
    noise: float = 0.0
    amplitude: float = 1.0
    N: int = 1000
    seed: int = 0
    popularity_skew: float = 0.0

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise ValueError(f"structure must be one of {STRUCTURES}")
        if not (0 < self.c <= 1):
            raise ValueError("subset fraction c must lie in (0, 1]")
        if self.m < 2 or self.n < 2 or self.rank < 1 or self.N < 0:
            raise ValueError("need m, n >= 2, rank >= 1 and N >= 0")
        if not (0 < self.amplitude <= 1):
            raise ValueError("amplitude must lie in (0, 1]")
        if self.noise < 0 or self.noise > 1.0 - self.amplitude**2 + 1e-12:
            raise ValueError(f"noise bound {self.noise} exceeds 1 - max|M*| = {1 - self.amplitude ** 2:g}")


@dataclass
class SyntheticInstance:
    spec: SyntheticSpec
    truth: np.ndarray
    observations: ObservationSet
    support: np.ndarray
    row_perm: np.ndarray
    col_perm: np.ndarray

    @property
    def mu(self) -> np.ndarray:
        """Sampling distribution, uniform over the support."""
        return self.support / self.support.sum()


def generate(spec: SyntheticSpec) -> SyntheticInstance:
    """Draw a planted matrix, its support and ``N`` iid samples from the uniform law on the support."""
    rng = np.random.default_rng(spec.seed)
    m, n, k = spec.m, spec.n, spec.rank
    U = rng.normal(size=(m, k))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    U *= spec.amplitude * rng.uniform(0.5, 1.0, (m, 1))
    V = rng.normal(size=(n, k))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    V *= spec.amplitude * rng.uniform(0.5, 1.0, (n, 1))
    truth = U @ V.T
    row_perm = rng.permutation(m)
    col_perm = rng.permutation(n)
    if spec.structure == "two-block":
        g_row = (row_perm < m // 2)
        g_col = (col_perm < n // 2)
        support = g_row[:, None] == g_col[None, :]
    elif spec.structure == "full-uniform":
        support = np.ones((m, n), bool)
    else:
        size = max(1, int(round(spec.c * m * n)))
        w = np.exp(spec.popularity_skew * np.add.outer(rng.normal(size=m), rng.normal(size=n))).ravel()
        pick = rng.choice(m * n, size, replace=False, p=w / w.sum())
        support = np.zeros(m * n, bool)
        support[pick] = True
        support = support.reshape(m, n)
    idx = np.flatnonzero(support.ravel())
    draw = rng.choice(idx, spec.N) if spec.N else np.zeros(0, int)
    r, c = np.unravel_index(draw, (m, n))
    vals = truth[r, c]
    if spec.noise > 0:
        vals = np.clip(vals + rng.uniform(-spec.noise, spec.noise, size=vals.size), -1.0, 1.0)
    obs = ObservationSet(IndexSpace(m, n), r, c, vals)
    return SyntheticInstance(spec, truth, obs, support, row_perm, col_perm)


def reveal_support(inst: SyntheticInstance, seed: int = 0) -> ObservationSet:
    """Every support entry observed exactly once, in random order."""
    rng = np.random.default_rng(seed)
    r, c = np.nonzero(inst.support)
    order = rng.permutation(r.size)
    r, c = r[order], c[order]
    vals = inst.truth[r, c]
    if inst.spec.noise > 0:
        vals = np.clip(vals + rng.uniform(-inst.spec.noise, inst.spec.noise, size=vals.size), -1.0, 1.0)
    return ObservationSet(IndexSpace(inst.spec.m, inst.spec.n), r, c, vals)


def fixture_20x20(seed: int = 0) -> SyntheticInstance:
    """Small two-block instance used by the tests and the CLI smoke runs."""
    return generate(SyntheticSpec(m=20, n=20, rank=1, structure="two-block", N=400, seed=seed))


# ---------------------------------------------------------------------------
# ratings


@dataclass(frozen=True)
class RatingScale:
    """Affine map ``x -> a x + b`` from raw ratings into ``[-1, 1]``."""

    lo: float
    hi: float

    @property
    def a(self) -> float:
        return 2.0 / (self.hi - self.lo) if self.hi > self.lo else 0.0

    @property
    def b(self) -> float:
        return -1.0 - self.a * self.lo if self.hi > self.lo else 0.0

    def forward(self, x):
        return self.a * np.asarray(x, dtype=float) + self.b

    def inverse(self, y):
        if self.hi == self.lo:
            return np.full_like(np.asarray(y, dtype=float), self.lo)
        return (np.asarray(y, dtype=float) - self.b) / self.a

    def as_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "a": self.a, "b": self.b}


def ingest_ratings(path, m: Optional[int] = None, n: Optional[int] = None) -> Tuple[ObservationSet, RatingScale]:
    """Read an ``i,j,value`` ratings CSV (1-based) and rescale values into ``[-1, 1]``.

    Raises
    ------
    ValueError
        On an empty file, malformed rows (with line numbers) or indices
        beyond a given shape.
    """
    triples = _parse_triples(Path(path))
    if not triples:
        raise ValueError(f"{path}: empty ratings file")
    lines = np.array([t[0] for t in triples])
    arr = np.asarray([(t[1], t[2], t[3]) for t in triples], dtype=float)
    mm = int(arr[:, 0].max()) if m is None else m
    nn = int(arr[:, 1].max()) if n is None else n
    bad = np.flatnonzero((arr[:, 0] > mm) | (arr[:, 1] > nn))
    if bad.size:
        raise ValueError(f"{path}:{lines[bad[0]]}: index outside {mm}x{nn}")
    scale = RatingScale(float(arr[:, 2].min()), float(arr[:, 2].max()))
    vals = np.clip(scale.forward(arr[:, 2]), -1.0, 1.0)
    obs = ObservationSet(IndexSpace(mm, nn), arr[:, 0].astype(np.int64) - 1, arr[:, 1].astype(np.int64) - 1, vals)
    return obs, scale


def synthetic_ratings(m: int = 250, n: int = 250, N: int = 5189, rank: int = 3, seed: int = 0,
                      popularity_skew: float = 1.0) -> np.ndarray:
    """Distinct ``(i, j, rating)`` rows in the MovieLens format, 1-based, half-star ratings in ``[0.5, 5]``.

    Ratings come from a planted low-rank score with a little noise, and
    entries are picked with popularity-biased row and column weights.
    """
    if N > m * n:
        raise ValueError("more ratings than matrix entries")
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(m, rank)) / np.sqrt(rank)
    V = rng.normal(size=(n, rank)) / np.sqrt(rank)
    w = np.exp(popularity_skew * np.add.outer(rng.normal(size=m), rng.normal(size=n))).ravel()
    pick = rng.choice(m * n, N, replace=False, p=w / w.sum())
    r, c = np.unravel_index(pick, (m, n))
    score = np.einsum("ij,ij->i", U[r], V[c]) + 0.2 * rng.normal(size=N)
    stars = np.clip(np.round((3.0 + 1.5 * score) * 2) / 2, 0.5, 5.0)
    return np.column_stack([r + 1, c + 1, stars])


def write_ratings_csv(path, triples) -> None:
    """Write ``i,j,value`` rows with a header line."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "value"])
        for i, j, v in triples:
            w.writerow([int(i), int(j), repr(float(v))])


def holdout_split(obs: ObservationSet, frac: float = 0.2, seed: int = 0) -> Tuple[ObservationSet, ObservationSet]:
    """Random train/holdout split of the observations."""
    if not (0 <= frac < 1):
        raise ValueError("holdout fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    k = int(round(frac * obs.N))
    perm = rng.permutation(obs.N)
    return obs.subset(np.sort(perm[k:])), obs.subset(np.sort(perm[:k]))


# ---------------------------------------------------------------------------
# metrics


@dataclass
class BucketTable:
    """Per-decile mean confidence, mean squared error and count."""

    confidence: np.ndarray
    mse: np.ndarray
    count: np.ndarray

    def spearman(self) -> float:
        keep = self.count > 0
        if keep.sum() < 2:
            return float("nan")
        return float(spearmanr(self.confidence[keep], self.mse[keep]).statistic)

    def rows(self) -> List[dict]:
        return [{"bucket": b, "confidence": float(c), "mse": float(e), "count": int(k)}
                for b, (c, e, k) in enumerate(zip(self.confidence, self.mse, self.count))]


def bucketed_error(C: np.ndarray, estimate: np.ndarray, rows, cols, values, buckets: int = 10) -> BucketTable:
    """Split held-out entries into confidence quantile buckets and report the MSE of each.

    Entries with tied confidence share one bucket, so a constant ``C`` gives
    a single effective bucket.
    """
    rows, cols = np.asarray(rows, int), np.asarray(cols, int)
    values = np.asarray(values, dtype=float)
    if rows.size == 0:
        raise ValueError("held-out set is empty")
    conf = np.asarray(C)[rows, cols]
    err = (np.asarray(estimate)[rows, cols] - values) ** 2
    edges = np.quantile(conf, np.linspace(0, 1, buckets + 1)[1:-1])
    which = np.searchsorted(edges, conf, side="left")
    cnt = np.bincount(which, minlength=buckets).astype(int)
    with np.errstate(invalid="ignore"):
        mc = np.bincount(which, weights=conf, minlength=buckets) / np.maximum(cnt, 1)
        me = np.bincount(which, weights=err, minlength=buckets) / np.maximum(cnt, 1)
    return BucketTable(mc, me, cnt)


@dataclass
class ConfidenceStudy:
    C_bar: np.ndarray
    estimate: np.ndarray
    buckets: BucketTable
    diagnostics: dict = field(default_factory=dict)


def confidence_error_study(train: ObservationSet, rows, cols, values, sim_cfg: SimplifiedConfig = SimplifiedConfig(),
                           fit_cfg: Optional[FullCompConfig] = None, buckets: int = 10) -> ConfidenceStudy:
    """Confidence from Simplified ODD against the error of an independent completion.

    The confidence is learned from ``train`` alone. The estimate is a
    separate max-norm fit to the same entries, so the pulled-apart pair
    inside the confidence loop never biases the error being bucketed.

    Parameters
    ----------
    train : ObservationSet
        Revealed entries, streamed in their stored order.
    rows, cols, values
        Held-out entries and their true values.
    sim_cfg : SimplifiedConfig
    fit_cfg : FullCompConfig, optional
        Defaults to rank 10 with the class bound of ``sim_cfg``.
    buckets : int

    Returns
    -------
    ConfidenceStudy
    """
    fit_cfg = fit_cfg if fit_cfg is not None else FullCompConfig(K=sim_cfg.K, rank=10, seed=sim_cfg.seed)
    res = run_simplified_odd(train, train.shape, sim_cfg)
    est = full_complete(train, fit_cfg)
    estimate = est.dense()
    table = bucketed_error(res.C_bar, estimate, rows, cols, values, buckets=buckets)
    return ConfidenceStudy(res.C_bar, estimate, table, {"train_loss": est.loss, **res.diagnostics})


@dataclass
class MetricsReport:
    coverage: float
    coverage_ratio: Optional[float]
    weighted_error: Optional[float]
    buckets: Optional[BucketTable] = None
    regret: Optional[dict] = None
    runtime_s: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {"coverage": self.coverage, "coverage_ratio": self.coverage_ratio, "weighted_error": self.weighted_error,
               "buckets": self.buckets.rows() if self.buckets is not None else None,
               "spearman": self.buckets.spearman() if self.buckets is not None else None,
               "regret": self.regret}
        out.update(self.extra)
        return out


def support_mass(C: np.ndarray, support: np.ndarray) -> float:
    """Fraction of the confidence mass on the support."""
    s = float(np.sum(C))
    return float(np.sum(C[support]) / s) if s > 0 else 0.0


def metrics_for(C: np.ndarray, estimate, inst: Optional[SyntheticInstance] = None, runtime_s=None, **extra) -> MetricsReport:
    cov = coverage(C)
    ratio = err = None
    if inst is not None:
        ratio = cov / float(inst.support.sum())
        err = weighted_loss(C, inst.truth, estimate) if np.sum(C) > 0 else 0.0
    return MetricsReport(cov, ratio, err, runtime_s=runtime_s, extra=extra)


def write_table_csv(path, rows: List[dict]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
