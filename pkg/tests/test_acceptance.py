"""Acceptance criteria. Each test prints one PASS/FAIL line and asserts it.

Run just this file with ``pytest -s tests/test_acceptance.py`` to see the
lines as they happen; a plain ``pytest`` run lists them in the summary.
"""

import time

import numpy as np

from source_fiction import classifier as clf
from source_fiction import monotonicity as mono
from source_fiction.attack import AttackConfig, build_source_fiction, epsilon_bound
from source_fiction.cli import main
from source_fiction.dataset import (LabeledDataset, crossing_task, generate_gaussian_mixture,
                                    select_labeled_subset)
from source_fiction.ot import (SOLVERS, solve_emd, solve_sinkhorn, solve_sinkhorn_l1l2,
                               solve_sinkhorn_lpl1)
from source_fiction.pipeline import AdaptationConfig, ablate_epsilon, adapt, prepare
from oracles import brute_force_assignment, central_difference


def _sq_half(x, y):
    return 0.5 * ((x[:, None, :] - y[None, :, :]) ** 2).sum(-1)


def test_criterion_1_small_perturbations_are_monotone(verdict):
    rng = np.random.default_rng(20240101)
    t0 = time.perf_counter()
    trials, bad = 1000, 0
    for _ in range(trials):
        n = int(rng.integers(2, 9))
        dim = int(rng.integers(1, 5))
        x, moved = mono.lemma_trial(n, dim, rng)
        assert np.all(np.linalg.norm(moved - x, axis=1) <= epsilon_bound(x) * (1 + 1e-12))
        bad += mono.check_cycles(mono.Pairing(x, moved), tolerance=1e-9) is not None
    seconds = time.perf_counter() - t0
    verdict(1, bad == 0 and seconds < 60,
            f"{bad} violations in {trials} trials (N<=8, radius <= bound, tol 1e-9), {seconds:.1f}s")


def _fiction_instances():
    """100 fictions: 50 with at most 8 points and 50 with exactly 50 points."""
    out = []
    for k in range(10):
        classes = 2 + k % 3
        source = generate_gaussian_mixture(classes, 60, 2, 4.0, 0.8, 100 + k)
        target = generate_gaussian_mixture(classes, 60, 2, 4.0, 0.8, 200 + k)
        params = clf.train(source, clf.default_arch(2, classes), clf.TrainConfig(epochs=60, seed=k))
        for r in range(10):
            small = r < 5
            per_class = (8 // classes if r % 2 else 2) if small else 50 // classes
            lab, _ = select_labeled_subset(target, per_class, 1000 * k + r)
            if not small and lab.n < 50:
                extra, _ = select_labeled_subset(target, per_class + 1, 1000 * k + r)
                lab = extra.subset(np.arange(50))
            z = clf.latent(params, lab.features)
            latent = LabeledDataset(z, lab.labels, lab.mass, classes)
            fiction = build_source_fiction(params, latent, AttackConfig(epsilon=epsilon_bound(z)))
            out.append((z, fiction.data.features))
    return out


def test_criterion_2_fictions_are_monotone(verdict):
    t0 = time.perf_counter()
    instances = _fiction_instances()
    sizes = sorted({z.shape[0] for z, _ in instances})
    bad = 0
    for i, (z, f) in enumerate(instances):
        n = z.shape[0]
        if n <= 8:
            report = mono.check_cycles(mono.Pairing(z, f), tolerance=1e-9)
        else:
            report = mono.check_cycles(mono.Pairing(z, f), tolerance=1e-9, mode="sampled",
                                       seed=i, count=10_000)
        bad += report is not None
    seconds = time.perf_counter() - t0
    verdict(2, len(instances) == 100 and bad == 0 and seconds < 120 and max(sizes) == 50,
            f"{bad} violations over {len(instances)} fictions (sizes {sizes}; exhaustive for "
            f"N<=8, 10^4 sampled cycles for N=50), {seconds:.1f}s")


def test_criterion_3_emd_matches_brute_force(verdict):
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(500):
        n = int(rng.integers(1, 8))
        dim = int(rng.integers(1, 4))
        M = _sq_half(rng.normal(size=(n, dim)), rng.normal(size=(n, dim)))
        a = np.full(n, 1.0 / n)
        got = solve_emd(M, a, a).objective
        ref = brute_force_assignment(M)
        worst = max(worst, abs(got - ref) / max(abs(ref), 1e-300))
    seconds = time.perf_counter() - t0
    verdict(3, worst <= 1e-9 and seconds < 60,
            f"500 instances n=m<=7, worst relative gap {worst:.2e}, {seconds:.1f}s")


def test_criterion_4_sinkhorn_close_to_emd(verdict):
    rng = np.random.default_rng(4)
    gaps, marg, same = [], 0.0, True
    for k in range(500):
        n = int(rng.integers(1, 8))
        M = _sq_half(rng.normal(size=(n, 2)), rng.normal(size=(n, 2)))
        a = np.full(n, 1.0 / n)
        reg = 0.01 * M.max() if M.max() > 0 else 1.0
        exact = solve_emd(M, a, a).objective
        sk = solve_sinkhorn(M, a, a, reg=reg)
        marg = max(marg, sk.coupling.marginal_error())
        if exact > 0:
            gaps.append((sk.objective - exact) / exact)
        if k < 50:
            labels = np.arange(n) % 2
            for solver in (solve_sinkhorn_l1l2, solve_sinkhorn_lpl1):
                other = solver(M, a, a, reg=reg, eta=0.0, x_class_of_row=labels)
                same &= np.array_equal(other.gamma, sk.gamma) and other.objective == sk.objective
    gaps = np.array(gaps)
    over = int(np.sum(gaps > 0.02))
    verdict(4, over == 0 and marg < 1e-6 and same,
            f"objective gap <= 2% in {len(gaps) - over}/{len(gaps)} instances (max "
            f"{gaps.max():.2%}); max marginal L1 error {marg:.1e}; eta=0 identical: {same}")


def test_criterion_5_head_gradient(verdict):
    rng = np.random.default_rng(5)
    worst = 0.0
    for k in range(100):
        classes = int(rng.integers(2, 6))
        width = int(rng.integers(2, 9))
        act = ("relu", "tanh")[k % 2]
        params = clf.init_params([3, int(rng.integers(2, 9)), width, classes], classes, k,
                                 hidden_activation=act)
        z = rng.normal(size=width)
        label = int(rng.integers(classes))
        f = lambda v: float(clf.head_loss(params, v[None], [label])[0])
        g = clf.head_loss_gradient(params, z, label)
        fd = central_difference(f, z, h=1e-5)
        err = np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd), 1e-12)
        worst = max(worst, err)
    verdict(5, worst < 1e-4, f"100 triples, worst relative error {worst:.2e} (central FD, h=1e-5)")


def test_criterion_6_crossing_family(verdict):
    t0 = time.perf_counter()
    wins, emd = 0, []
    for seed in range(20):
        source, target = crossing_task(seed)
        prep = prepare(source, target, AdaptationConfig(seed=seed))
        ok = True
        for solver in SOLVERS:
            rep = adapt(source, target, AdaptationConfig(solver=solver, seed=seed), prep)
            ok &= rep.fiction_accuracy >= rep.plain_accuracy
            if solver == "emd":
                emd.append((rep.plain_accuracy, rep.fiction_accuracy))
        wins += ok
    seconds = time.perf_counter() - t0
    plain, fiction = np.mean(emd, axis=0)
    gain = 100 * (fiction - plain)
    verdict(6, wins >= 19 and gain >= 10 and seconds < 300,
            f"fiction >= plain for all {len(SOLVERS)} solvers in {wins}/20 seeds; EMD mean "
            f"{100 * plain:.1f}% -> {100 * fiction:.1f}% (+{gain:.1f} points); {seconds:.0f}s")


def test_criterion_7_epsilon_ablation(verdict):
    t0 = time.perf_counter()
    mults = [0.25, 0.5, 1.0, 2.0, 4.0]
    acc, rate = [], []
    for seed in range(10):
        source, target = crossing_task(seed)
        rows = ablate_epsilon(source, target, AdaptationConfig(seed=seed), mults)
        acc.append([r.adapted_accuracy for r in rows])
        rate.append([r.fiction_classification_rate for r in rows])
    seconds = time.perf_counter() - t0
    acc, rate = np.array(acc), np.array(rate)
    gap = 100 * (acc[:, 2].mean() - acc[:, 4].mean())
    inner = [i for i, m in enumerate(mults) if m <= 1.0]
    monotone = bool(np.all(np.diff(rate[:, inner], axis=1) >= 0))
    verdict(7, gap >= 5 and monotone and seconds < 300,
            f"mean accuracy at m=1 minus m=4: {gap:+.1f} points (need +5); mean fiction rate "
            f"{np.round(rate.mean(axis=0), 3).tolist()} for m={mults}, non-decreasing for m<=1 in every "
            f"seed: {monotone}; {seconds:.0f}s")


def test_criterion_8_adapt_reports_are_reproducible(verdict, tmp_path):
    assert main(["gen", "--family", "crossing", "--seed", "11", "--out", str(tmp_path / "task"),
                 "--quiet"]) == 0
    args = ["adapt", "--source", str(tmp_path / "task" / "source.csv"), "--target",
            str(tmp_path / "task" / "target.csv"), "--repetitions", "2", "--quiet"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    first = (tmp_path / "a" / "report.csv").read_bytes()
    second = (tmp_path / "b" / "report.csv").read_bytes()
    verdict(8, first == second and len(first) > 0,
            f"two adapt runs wrote byte-identical report.csv ({len(first)} bytes): {first == second}")
