"""End-to-end acceptance criteria, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line (also collected
into the terminal summary) before asserting.
"""

import itertools
import math
import time

import numpy as np
from ronchicalib import bench, cli, em, encoder, gp, kernels, optics, testbed
from ronchicalib import identifiability as ident
from ronchicalib.basis import BasisSet
from ronchicalib.em import CandidateSet
from ronchicalib.encoder import VAEParams
from ronchicalib.latent import LatentDataset
from ronchicalib.preprocess import preprocess

import conftest
from conftest import analytic_model


def report(number, ok, detail, started, budget):
    seconds = time.perf_counter() - started
    ok = bool(ok) and seconds < budget
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}  ({seconds:.1f}s, budget {budget:g}s)"
    conftest.ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def dense_loglik(model, ds, x0):
    """Explicit-inverse multivariate normal density, one latent dimension at a time."""
    X = x0[None, :] + ds.S
    M = X.shape[0]
    inv = model.kernel.inv_ls2
    d1 = np.sum((X[:, None] - X[None]) ** 2 * inv, axis=-1)
    d2 = np.sum((X[:, None] + X[None]) ** 2 * inv, axis=-1)
    K = 0.5 * model.kernel.signal_variance * (np.exp(-0.5 * d1) + np.exp(-0.5 * d2))
    mu = model.mean(X)
    total = 0.0
    for j in range(model.latent_dim):
        C = K + model.kernel.noise_variance[j] * np.eye(M)
        r = ds.Z[:, j] - mu[:, j]
        total += -0.5 * (r @ np.linalg.inv(C) @ r + math.log(np.linalg.det(C)) + M * math.log(2 * math.pi))
    return total


def walk(rng, T, n, scale):
    return np.vstack([np.zeros(n), np.cumsum(rng.uniform(-scale, scale, (T, n)), axis=0)])


def test_criterion_01_evenness_chain():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    states = rng.uniform(-200, 200, (10, 3))
    an = optics.SimConfig(mode="analytic_even")
    exact = all(np.array_equal(preprocess(optics.expected_image(x, an)).values,
                               preprocess(optics.expected_image(-x, an)).values) for x in states)
    wave = optics.SimConfig()
    worst = 0.0
    for x in states:
        gp_, gm = optics.expected_image(x, wave), optics.expected_image(-x, wave)
        a = np.mean([preprocess(optics.sample_ronchigram(gp_, rng)).values for _ in range(200)], axis=0)
        b = np.mean([preprocess(optics.sample_ronchigram(gm, rng)).values for _ in range(200)], axis=0)
        worst = max(worst, np.linalg.norm(a - b) / np.linalg.norm(a))
    report(1, exact and worst < 0.05, f"analytic exact={exact}, wave worst rel L2={worst:.4f} (< 0.05)",
           t0, 120)


def test_criterion_02_gp_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(102)
    worst = 0.0
    for i in range(100):
        model, _ = analytic_model(n=3, ell=2, noise=10 ** rng.uniform(-4, -1), sf2=rng.uniform(0.01, 1),
                                  lengthscale=rng.uniform(40, 200), seed=i)
        T = int(rng.integers(0, 8))
        S = walk(rng, T, 3, 80.0)
        ds = LatentDataset(rng.standard_normal((T + 1, 2)), S)
        x0 = rng.uniform(-200, 200, 3)
        worst = max(worst, abs(gp.log_marginal_likelihood(model, ds, x0) - dense_loglik(model, ds, x0)))
    report(2, worst < 1e-8, f"max |loglik - dense| = {worst:.2e} over 100 instances (< 1e-8)", t0, 30)


def test_criterion_03_estep_grid_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(103)
    ax = np.linspace(-200, 200, 21)
    C = np.array(list(itertools.product(ax, ax)))
    mismatches = 0
    for i in range(50):
        model, f = analytic_model(noise=1e-6, seed=i)
        x0 = rng.uniform(-200, 200, 2)
        S = walk(rng, 5, 2, 60.0)
        ds = LatentDataset(f(x0[None] + S), S)
        out = em.e_step(model, ds, CandidateSet.uniform(C))
        brute = int(np.argmax([dense_loglik(model, ds, c) for c in C]))
        mismatches += int(out.map_index != brute)
    report(3, mismatches == 0, f"{mismatches} MAP mismatches on 50 instances, N = 441, T = 5", t0, 120)


def test_criterion_04_sign_logic():
    t0 = time.perf_counter()
    smap, model = testbed.make_scenario("exact-prior", noise_std=0.0)
    step = 2 * model.kernel.lengthscales[0]
    rng = np.random.default_rng(104)
    worst_gap, worst_ratio = 0.0, np.inf
    for _ in range(50):
        x0 = rng.uniform(-200, 200, 3)
        pair = CandidateSet.uniform(np.vstack([x0, -x0]))
        zero = np.zeros((3, 3))
        w = em.e_step(model, LatentDataset(smap.expected(x0[None] + zero), zero), pair).weights
        worst_gap = max(worst_gap, abs(w[0] - w[1]))
        d = rng.standard_normal(3)
        S = np.vstack([np.zeros(3), step * d / np.linalg.norm(d)])
        w = em.e_step(model, LatentDataset(smap.expected(x0[None] + S), S), pair).weights
        worst_ratio = min(worst_ratio, w[0] / max(w[1], 1e-300))
    report(4, worst_gap < 1e-10 and worst_ratio > 10,
           f"s=0 max |w+ - w-| = {worst_gap:.1e} (< 1e-10); min correct-sign ratio = {worst_ratio:.3g} (> 10)",
           t0, 10)


def test_criterion_05_elbo_monotone():
    t0 = time.perf_counter()
    rng = np.random.default_rng(105)
    worst = np.inf
    model, f = analytic_model(noise=1e-2)
    for i in range(1000):
        N = int(rng.integers(2, 40))
        T = int(rng.integers(0, 5))
        S = walk(rng, T, 2, 80.0)
        x0 = rng.uniform(-200, 200, 2)
        ds = LatentDataset(f(x0[None] + S) + 0.1 * rng.standard_normal((T + 1, 2)), S)
        C = rng.uniform(-200, 200, (N, 2))
        w0 = rng.dirichlet(np.full(N, 0.5))
        before = em.elbo(w0, em.candidate_log_likelihoods(model, ds, C))
        cands, _, after = em.em_iterate(model, ds, CandidateSet(C, w0))
        _, _, again = em.em_iterate(model, ds, cands)
        worst = min(worst, after - before, again - after)
    report(5, worst >= -1e-9, f"min ELBO change over 1000 iterations = {worst:.2e} (>= -1e-9)", t0, 120)


def test_criterion_06_identifiability():
    t0 = time.perf_counter()
    periodic = BasisSet("cosine", [[1.0], [2.0]], 1.0, extent=2 * np.pi, meta={"period": 2 * np.pi})
    amb = ident.demonstrate_ambiguity(periodic, [1.0, -0.6])
    gap = abs(amb.objectives[0] - amb.objectives[1])
    sym = BasisSet("sym_gauss", [[0.3], [1.1]], 1.0, extent=4.0)
    theta = np.array([1.0, -0.6])
    checks = ident.check_all(sym, theta)
    xi_grid, theta_grids = ident.uniqueness_grid(0.3, theta, 1.0, 1.0, 41)
    uniq = ident.verify_uniqueness(sym, theta, 0.3, xi_grid, theta_grids)
    ok = gap < 1e-8 and all(c.passed for c in checks) and uniq.passed and len(uniq.matches) == 1
    report(6, ok, f"periodic objective gap = {gap:.1e}; sym_gauss C1-C4 "
           f"{[c.passed for c in checks]}, matching cells = {len(uniq.matches)}", t0, 60)


def test_criterion_07_vae_gradient():
    t0 = time.perf_counter()
    p = VAEParams.initialize(6, 2, (4,), 5)
    p = p.with_vector(p.vector() + 0.3 * np.random.default_rng(105).standard_normal(p.vector().size))
    X = np.random.default_rng(6).standard_normal((7, 6))
    g = np.concatenate([a.ravel() for a in encoder.elbo_gradient(p, X, np.random.default_rng(9))])
    theta = p.vector()
    fd = np.empty_like(theta)
    h = 1e-4
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        fd[i] = (encoder.elbo(p.with_vector(theta + e), X, np.random.default_rng(9))
                 - encoder.elbo(p.with_vector(theta - e), X, np.random.default_rng(9))) / (2 * h)
    rel = float(np.max(np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-6)))
    kl = float(encoder.kl_divergence(np.array([2.0]), np.array([0.0]))[0])
    report(7, rel < 1e-4 and kl == 2.0, f"max relative gradient error = {rel:.2e} (< 1e-4); KL = {kl!r}", t0, 30)


def test_criterion_08_desk_scale_curves(mismatch_benchmark_timed, exact_benchmark_timed):
    t0 = time.perf_counter()
    (mismatch_benchmark, t_mm), (exact_benchmark, t_ex) = mismatch_benchmark_timed, exact_benchmark_timed
    mm = {m: bench.quantile_curves(mismatch_benchmark.errors[m])[:, 0] for m in mismatch_benchmark.methods}
    a = mm["full"][20]
    ratio = mm["full"][-1] / mm["fixed-prior"][-1]
    c = float(np.mean(exact_benchmark.errors["full"][:, 10] < 10.0))
    # the two 100-run benchmarks are session fixtures; their wall time counts here
    elapsed = t_mm + t_ex
    report(8, a < 10 and ratio <= 0.5 and c >= 0.5,
           f"(a) median@20 = {a:.3g} (< 10); (b) full/fixed terminal = {ratio:.3g} (<= 0.5); "
           f"(c) exact-prior share < 10 by step 10 = {c:.2f} (>= 0.5); compute {elapsed:.0f}s",
           t0 - elapsed, 900)


def test_criterion_09_hard_em():
    t0 = time.perf_counter()
    rng = np.random.default_rng(109)
    worst, checked, counts_ok = 0.0, 0, True
    for i in range(200):
        if checked == 20:
            break
        model, f = analytic_model(noise=1e-3, seed=i)
        x0 = rng.uniform(-150, 150, 2)
        S = walk(rng, 3, 2, 80.0)
        ds = LatentDataset(f(x0[None] + S), S)
        C = np.vstack([x0, rng.uniform(-200, 200, (15, 2))])
        start = CandidateSet.uniform(C)
        soft, post_soft, _ = em.em_iterate(model, ds, start)
        if soft.weights.max() <= 0.999:
            continue
        checked += 1
        _, post_hard, _ = em.hard_em_iterate(model, ds, start)
        Q = rng.uniform(-200, 200, (100, 2))
        kernels.factorizations.reset()
        ms = post_soft.mean(Q)
        n_soft = kernels.factorizations.count
        kernels.factorizations.reset()
        mh = post_hard.mean(Q)
        n_hard = kernels.factorizations.count
        counts_ok &= (n_soft, n_hard) == (len(C), 1)
        worst = max(worst, float(np.max(np.abs(ms - mh))))
    report(9, checked == 20 and worst < 1e-3 and counts_ok,
           f"{checked} dominant instances, max |soft - hard| = {worst:.1e} (< 1e-3); "
           f"factorizations N vs 1: {counts_ok}", t0, 60)


def test_criterion_10_cli_reproducible(tmp_path):
    t0 = time.perf_counter()
    args = ["benchmark", "--runs", "20", "--horizon", "30", "--seed", "7"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    same = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
               for n in ("curves.csv", "runs.csv"))
    report(10, same, f"curves.csv and runs.csv byte-identical across two invocations: {same}", t0, 900)
