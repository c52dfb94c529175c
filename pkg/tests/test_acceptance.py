"""End-to-end acceptance checks, one test per criterion, each printing a PASS/FAIL line."""

import json
import math
import time

import numpy as np
import pytest

from builders import kx_constraints, random_pair, structured_target
from oracles import GRID, grid_sup, grid_version_space, penalized_entropy_projection, rank1_grid
from pmc.cli import main
from pmc.completion import sample_budget_max
from pmc.core import (
    FactorizedMatrix,
    MatrixClassSpec,
    VersionSpaceSpec,
    bregman_project_simplex,
    class_violation,
    empirical_loss,
    kl_divergence,
    matrix_relative_entropy,
    scale_to_class,
    version_space_contains,
)
from pmc.harness import SyntheticSpec, generate
from pmc.offline import algorithm2_parameters, certified_constraint, witness_confidence
from pmc.online import (
    OnlineConfig,
    RevealEvent,
    decomposition_properties,
    embed_phi,
    events_from_observations,
    extract_phi_inverse,
    grad_reward_C,
    grad_reward_M,
    project_dense,
    reward_C,
    reward_M,
    run_odd,
)

SQRT2 = math.sqrt(2.0)
C1_SEEDS = range(5)
C1_EPS, C1_DELTA = 0.25, 0.1


def _c1_budget():
    return sample_budget_max(C1_EPS, C1_DELTA, SQRT2, 40, 40, 1.0)


def _c1_spec(seed):
    return SyntheticSpec(m=40, n=40, rank=2, structure="uniform-subset", c=0.5, N=_c1_budget(), seed=seed)


def _report(out):
    return json.loads((out / "report.json").read_text())


# ---------------------------------------------------------------- 1


def test_criterion1_offline_coverage_and_error(tmp_path, verdict):
    N = _c1_budget()
    rows, good, slowest = [], 0, 0.0
    for seed in C1_SEEDS:
        out = tmp_path / f"seed{seed}"
        argv = ["offline", "--structure", "uniform-subset", "--c", "0.5", "--m", "40", "--n", "40", "--rank", "2",
                "--K", repr(SQRT2), "--eps", str(C1_EPS), "--delta", str(C1_DELTA), "--N", str(N),
                "--seed", str(seed), "--out", str(out), "--quiet", "--no-plots"]
        t0 = time.perf_counter()
        assert main(argv) == 0
        elapsed = time.perf_counter() - t0
        slowest = max(slowest, elapsed)
        rep = _report(out)
        support = rep["data"]["support_size"]
        ok = rep["coverage"] >= 0.9 * support and rep["weighted_error"] <= C1_EPS
        good += ok
        rows.append(f"seed {seed}: |C|={rep['coverage']:.1f}/{support} err={rep['weighted_error']:.2e} {elapsed:.0f}s")
    ok = good >= 4 and slowest < 300
    verdict(1, ok, f"N={N}, {good}/5 seeds meet coverage >= 0.9|U| and error <= {C1_EPS}, slowest {slowest:.0f}s; "
                   + "; ".join(rows))
    assert ok


# ---------------------------------------------------------------- 2


def test_criterion2_witness_feasibility(verdict):
    par = algorithm2_parameters(C1_EPS, SQRT2)
    worst_gap, exact = -math.inf, True
    for seed in C1_SEEDS:
        inst = generate(_c1_spec(seed))
        C = witness_confidence(inst.mu)
        exact &= float(C.sum()) == float(inst.support.sum())
        vs = VersionSpaceSpec(inst.observations.indices, par["beta"], MatrixClassSpec(SQRT2), (40, 40))
        val = certified_constraint(vs, C, seed=seed)
        worst_gap = max(worst_gap, val - par["gamma"])
    ok = exact and worst_gap <= 0.05
    verdict(2, ok, f"coverage of C^mu equals |U| exactly: {exact}; worst certified value - gamma = {worst_gap:.4f} "
                   f"(limit 0.05, gamma = {par['gamma']:.4f})")
    assert ok


# ---------------------------------------------------------------- 3


def test_criterion3_rounding_suite(tmp_path, verdict):
    t0 = time.perf_counter()
    code = main(["gw-check", "--pairs", "100", "--mc", "10000", "--out", str(tmp_path), "--quiet", "--assert"])
    elapsed = time.perf_counter() - t0
    rep = _report(tmp_path)
    ok = code == 0 and rep["cos_sweep_min"] >= -1e-12 and rep["pair_failures"] == 0 and abs(rep["flip_z"]) <= 3 \
        and elapsed < 60
    verdict(3, ok, f"cos sweep min {rep['cos_sweep_min']:.2e}, pair failures {rep['pair_failures']}/100 "
                   f"(worst margin {rep['pair_worst_margin']:.3e}), flip z {rep['flip_z']:.2f}, {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 4


def test_criterion4_relaxation_dominance(verdict):
    mats = rank1_grid(3, 3, GRID)
    space = grid_version_space(mats, np.array([0, 1, 2]), np.array([0, 1, 2]), 0.05, (3, 3))
    rng = np.random.default_rng(0)
    K = 1.0  # rank-1 grid members u v^T with |u_i|, |v_j| <= 1 have max-norm at most 1
    worst = -math.inf
    for _ in range(20):
        C = rng.dirichlet(np.ones(9)).reshape(3, 3)
        q, lin = grid_sup(space, C, "quadratic"), grid_sup(space, C, "linear")
        worst = max(worst, q - math.pi * K / 2 * lin)
    ok = worst <= 1e-9
    verdict(4, ok, f"{len(space)} grid members in the version space; max over 20 C of "
                   f"quadratic sup - (pi K/2) linear sup = {worst:.4f}")
    assert ok


# ---------------------------------------------------------------- 5


def test_criterion5_regret_shape(verdict):
    inst = generate(SyntheticSpec(m=30, n=30, rank=1, structure="full-uniform", N=2048, seed=0))
    events = events_from_observations(inst.observations)
    rows = []
    for T in (256, 512, 1024, 2048):
        res = run_odd(events[:T], (30, 30), OnlineConfig(eta_M_scale=10.0, regret_checkpoints=(T,)))
        rows.append((T, res.regret_C / T, res.regret_M / T, res.game_regret / res.regret_scale()))
    rc = [r[1] for r in rows]
    rm = [r[2] for r in rows]
    ratio = [r[3] for r in rows]
    dec_C = all(b < a for a, b in zip(rc, rc[1:]))
    dec_M = all(b < a for a, b in zip(rm, rm[1:]))
    spread = max(ratio) / min(ratio) if min(ratio) > 0 else math.inf
    ok = dec_C and dec_M and spread < 2
    detail = "; ".join(f"T={T}: RC/T={a:.3g} RM/T={b:.3g} ratio={c:.3g}" for T, a, b, c in rows)
    verdict(5, ok, f"decreasing C: {dec_C}, decreasing M: {dec_M}, ratio spread x{spread:.2f} (limit 2); {detail}")
    assert ok


# ---------------------------------------------------------------- 6


@pytest.fixture(scope="module")
def two_block_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("two_block")
    t0 = time.perf_counter()
    code = main(["online", "--scenario", "two-block", "--m", "60", "--n", "60", "--T", "4096", "--seed", "7",
                 "--out", str(out), "--quiet"])
    return code, _report(out), time.perf_counter() - t0


def test_criterion6_two_block(two_block_run, verdict):
    code, rep, elapsed = two_block_run
    ok = code == 0 and rep["support_mass"] >= 0.8 and rep["weighted_error"] <= 0.1 and elapsed < 600
    verdict(6, ok, f"mass on same-group entries {rep['support_mass']:.3f} (>= 0.8), weighted error "
                   f"{rep['weighted_error']:.4f} (<= 0.1), runtime {elapsed:.0f}s (< 600)")
    assert ok


# ---------------------------------------------------------------- 7


def test_criterion7_confidence_error_correlation(tmp_path, verdict):
    rhos = []
    for seed in range(3):
        out = tmp_path / f"s{seed}"
        assert main(["simplified", "--seed", str(seed), "--out", str(out), "--quiet", "--no-plots"]) == 0
        rep = _report(out)
        assert rep["data"]["synthetic"]["m"] == 100 and rep["data"]["observed"] == 1500
        rhos.append(rep["spearman"])
    ok = all(r < -0.5 for r in rhos)
    verdict(7, ok, "Spearman(bucket confidence, bucket MSE) per seed: " + ", ".join(f"{r:.3f}" for r in rhos)
                   + " (each < -0.5)")
    assert ok


# ---------------------------------------------------------------- 8


def _negation_closure():
    rng = np.random.default_rng(0)
    spec = MatrixClassSpec(1.0)
    for _ in range(100):
        m, n, k = (int(x) for x in rng.integers(2, 7, 3))
        M = scale_to_class(FactorizedMatrix(rng.normal(size=(m, k)), rng.normal(size=(n, k))), spec)
        sample = (rng.integers(0, m, 5), rng.integers(0, n, 5))
        beta = empirical_loss(sample, M.dense(), np.zeros((m, n))) + 1e-9
        vs = VersionSpaceSpec(sample, beta, spec, (m, n))
        neg = -M
        if not (all(class_violation(neg, spec)) and version_space_contains(vs, M) and version_space_contains(vs, neg)):
            return False
    return True


def _entropy_axioms():
    rng = np.random.default_rng(1)
    for _ in range(100):
        d = int(rng.integers(2, 7))
        A, B = rng.normal(size=(2, d, d))
        X, Y = A @ A.T + 1e-3 * np.eye(d), B @ B.T + 1e-3 * np.eye(d)
        if matrix_relative_entropy(X, Y) < -1e-10 or abs(matrix_relative_entropy(X, X)) > 1e-10:
            return False
    return True


def _decomposability():
    rng = np.random.default_rng(2)
    for _ in range(50):
        m, n = (int(x) for x in rng.integers(1, 6, 2))
        K = float(rng.uniform(0.5, 2.0))
        M1, M2 = random_pair(rng, m, n, K)
        X = embed_phi(M1, M2, K)
        E1, E2 = extract_phi_inverse(X, m, n)
        props = decomposition_properties(X, m, n, K, M1.dense(), M2.dense())
        if not (all(props.values()) and np.allclose(E1, M1.dense(), atol=1e-10) and np.allclose(E2, M2.dense(), atol=1e-10)):
            return False
    return True


def _gradient_rel_err():
    rng = np.random.default_rng(3)
    h, worst = 1e-6, 0.0
    m, n, alpha, theta = 4, 5, 1.3, 2.5
    for setting in ("H1", "H2"):
        for _ in range(10):
            C = rng.uniform(0.01, 0.1, (m, n))
            M1, M2 = rng.uniform(-0.9, 0.9, (2, m, n))
            ev = RevealEvent(int(rng.integers(m)), int(rng.integers(n)), float(rng.uniform(-1, 1)))
            gC = grad_reward_C(C, M1, M2, alpha, setting)
            g1, g2 = grad_reward_M(C, M1, M2, ev, theta)
            for i in range(m):
                for j in range(n):
                    E = np.zeros((m, n))
                    E[i, j] = h
                    pairs = [
                        ((reward_C(C + E, M1, M2, alpha, setting) - reward_C(C - E, M1, M2, alpha, setting)) / (2 * h), gC[i, j]),
                        ((reward_M(C, M1 + E, M2, ev, theta) - reward_M(C, M1 - E, M2, ev, theta)) / (2 * h), g1[i, j]),
                        ((reward_M(C, M1, M2 + E, ev, theta) - reward_M(C, M1, M2 - E, ev, theta)) / (2 * h), g2[i, j]),
                    ]
                    for fd, g in pairs:
                        worst = max(worst, abs(fd - g) / abs(g))
    return worst


def _pythagorean():
    rng = np.random.default_rng(4)
    d = 20
    beta = 2 * math.log(d)
    floor = math.exp(1 - beta)
    worst = -math.inf
    for _ in range(100):
        p = np.exp(rng.normal(scale=3.0, size=d))
        C = bregman_project_simplex(p, beta)
        q = rng.dirichlet(np.full(d, 0.3))
        Q = floor + (1 - d * floor) * q
        worst = max(worst, kl_divergence(Q, C) + kl_divergence(C, p) - kl_divergence(Q, p))
    return worst


def _projection_vs_oracle():
    rng = np.random.default_rng(5)
    worst = 0.0
    for m, n in ((1, 2), (2, 2)):  # p = 6 and p = 8
        A, b = kx_constraints(m, n, 1.0)
        for eta in (0.5, 2.0):
            logY = structured_target(rng, m, n, 1.0, eta)
            w, Q = np.linalg.eigh(logY)
            Y = (Q * np.exp(w)) @ Q.T
            Xd, _, _ = project_dense(None, m, n, 1.0, logY=logY)
            Xo = penalized_entropy_projection(Y, A, b)
            worst = max(worst, matrix_relative_entropy(Xd, Xo), matrix_relative_entropy(Xo, Xd))
    return worst


def test_criterion8_structural_suites(two_block_run, verdict):
    _, rep, _ = two_block_run
    grad_err = _gradient_rel_err()
    pyth = _pythagorean()
    proj = _projection_vs_oracle()
    results = {
        "negation closure (100)": _negation_closure(),
        "entropy axioms": _entropy_axioms(),
        "decomposability (50 pairs)": _decomposability(),
        f"h_t identity gap {rep['identity_gap']:.1e}": rep["identity_gap"] <= 1e-12,
        f"gradient rel err {grad_err:.1e}": grad_err < 1e-6,
        f"Pythagorean worst excess {pyth:.1e}": pyth <= 1e-9,
        f"projection vs oracle divergence {proj:.1e}": proj <= 1e-3,
    }
    ok = all(results.values())
    verdict(8, ok, "; ".join(f"{k}: {'ok' if v else 'FAILED'}" for k, v in results.items()))
    assert ok
