import csv
from dataclasses import replace

import numpy as np
import pytest

from source_fiction import classifier as clf
from source_fiction.attack import AttackConfig, build_source_fiction, epsilon_bound
from source_fiction.dataset import (LabeledDataset, crossing_task, generate_gaussian_mixture,
                                    labeled_subset_indices, uniform_mass)
from source_fiction.errors import ParameterError, StageError
from source_fiction.ot import SOLVERS
from source_fiction.pipeline import (REPORT_COLUMNS, THREADS_ENV, AdaptationConfig, ablate_epsilon,
                                     adapt, benchmark, format_report, prepare, transport_targets,
                                     worker_count, write_ablation_csv, write_report_csv)
from source_fiction.seeding import derive_seed


@pytest.fixture(scope="module")
def mixture():
    return generate_gaussian_mixture(3, 50, 2, 5.0, 0.5, 0)


@pytest.fixture(scope="module")
def crossing():
    source, target = crossing_task(0)
    cfg = AdaptationConfig(seed=0)
    return source, target, prepare(source, target, cfg)


def test_no_shift_keeps_source_accuracy(mixture):
    cfg = AdaptationConfig(seed=1)
    prep = prepare(mixture, mixture, cfg)
    for solver in SOLVERS:
        rep = adapt(mixture, mixture, replace(cfg, solver=solver), prep)
        assert abs(rep.fiction_accuracy - rep.source_only_accuracy) <= 0.02, solver


def test_fiction_beats_plain_on_crossing_shift():
    fiction, plain = [], []
    for seed in range(3):
        source, target = crossing_task(seed)
        rep = adapt(source, target, AdaptationConfig(seed=seed))
        fiction.append(rep.fiction_accuracy)
        plain.append(rep.plain_accuracy)
    assert np.mean(fiction) > np.mean(plain)


def test_report_accounting_and_determinism(crossing):
    source, target, prep = crossing
    cfg = AdaptationConfig(solver="sinkhorn", seed=0)
    a = adapt(source, target, cfg, prep)
    b = adapt(source, target, cfg, prep)
    assert a.evaluated == target.n - 30
    assert np.sum(a.confusion) == a.evaluated
    assert np.trace(a.confusion) / a.evaluated == pytest.approx(a.fiction_accuracy)
    da, db = a.to_dict(), b.to_dict()
    da.pop("timings"), db.pop("timings")
    assert da == db
    assert a.epsilon <= a.bound
    assert a.converged == {"fiction": True, "plain": True}


def test_labeled_targets_follow_their_label(mixture):
    target = generate_gaussian_mixture(3, 50, 2, 5.0, 0.5, 7)
    prep = prepare(mixture, target, AdaptationConfig(seed=0))
    labeled, _ = labeled_subset_indices(target.labels, 10, 3, 3)
    lab_y = target.labels[labeled]
    zl = prep.target_latent[labeled]
    x_l = LabeledDataset(zl, lab_y, uniform_mass(len(labeled)), 3)
    fiction = build_source_fiction(prep.params, x_l,
                                   AttackConfig(epsilon=epsilon_bound(zl)))
    labels = np.full(target.n, -1)
    labels[labeled] = lab_y
    for solver in SOLVERS:
        mapped, result = transport_targets(solver, {}, fiction.data.features, lab_y,
                                           prep.target_latent, labels)
        assert result.converged
        pred = clf.head_predict(prep.params, mapped[labeled])
        # a labeled row lands on a blend of its own class's fiction points, so it is
        # guaranteed to keep its label when those points are all classified correctly
        good = np.array([fiction.correct[lab_y == c].all() for c in lab_y])
        assert good.any()
        assert np.array_equal(pred[good], lab_y[good]), solver


def test_zero_radius_limit_matches_unperturbed_fiction(crossing):
    source, target, prep = crossing
    base = AdaptationConfig(seed=2)
    tiny = adapt(source, target, replace(base, epsilon_multiplier=1e-9), prep)
    none = adapt(source, target, replace(base, attack=AttackConfig(epsilon=0.0)), prep)
    assert tiny.fiction_accuracy == none.fiction_accuracy
    assert tiny.epsilon == pytest.approx(1e-9 * tiny.bound)


def test_ablation_rows(crossing, tmp_path):
    source, target, prep = crossing
    rows = ablate_epsilon(source, target, AdaptationConfig(seed=0), [0.5, 1.0, 2.0], prep)
    assert [r.multiplier for r in rows] == [0.5, 1.0, 2.0]
    assert rows[1].epsilon == pytest.approx(2 * rows[0].epsilon)
    write_ablation_csv(rows, tmp_path / "a.csv")
    lines = list(csv.reader(open(tmp_path / "a.csv")))
    assert lines[0] == ["multiplier", "epsilon", "fiction_classification_rate", "adapted_accuracy"]
    assert len(lines) == 4
    with pytest.raises(ParameterError):
        ablate_epsilon(source, target, AdaptationConfig(), [1.0, 0.5], prep)
    with pytest.raises(ParameterError):
        ablate_epsilon(source, target, AdaptationConfig(), [0.0, 1.0], prep)


def test_plain_baseline_penalty_flag(crossing):
    source, target, prep = crossing
    on = adapt(source, target, AdaptationConfig(seed=0), prep)
    off = adapt(source, target, AdaptationConfig(seed=0, penalize_plain=False), prep)
    assert on.fiction_accuracy == off.fiction_accuracy
    assert on.source_only_accuracy == off.source_only_accuracy


def test_benchmark_table(crossing, tmp_path, monkeypatch):
    source, target, _ = crossing
    monkeypatch.delenv(THREADS_ENV, raising=False)
    rows, reports = benchmark([("cross", source, target)], ["emd", "sinkhorn"], 2, 5)
    assert {(r.solver, r.variant) for r in rows} == {
        (s, v) for s in ("emd", "sinkhorn") for v in ("source_only", "plain", "fiction")}
    assert len(reports) == 4
    fiction = [r for r in rows if r.solver == "emd" and r.variant == "fiction"][0]
    accs = [reports[("cross", "emd", k)].fiction_accuracy for k in range(2)]
    assert fiction.mean_acc == pytest.approx(np.mean(accs))
    assert fiction.std_acc == pytest.approx(np.std(accs))
    # repetitions draw different labeled subsets
    seeds = {reports[("cross", "emd", k)].seed for k in range(2)}
    assert seeds == {derive_seed(5, "benchmark", "cross", k) for k in range(2)}

    monkeypatch.setenv(THREADS_ENV, "2")
    assert worker_count() == 2
    rows2, _ = benchmark([("cross", source, target)], ["emd", "sinkhorn"], 2, 5)
    assert rows2 == rows

    write_report_csv(rows, tmp_path / "r.csv")
    lines = list(csv.reader(open(tmp_path / "r.csv")))
    assert tuple(lines[0]) == REPORT_COLUMNS and len(lines) == 7
    text = format_report(rows)
    assert "emd" in text and "sinkhorn" in text


def test_worker_count_validation(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "zero")
    with pytest.raises(ParameterError):
        worker_count()
    monkeypatch.setenv(THREADS_ENV, "0")
    with pytest.raises(ParameterError):
        worker_count()


def test_config_validation():
    with pytest.raises(ParameterError):
        AdaptationConfig(solver="nope")
    with pytest.raises(ParameterError):
        AdaptationConfig(solver="emd", solver_params={"reg": 1.0})
    with pytest.raises(ParameterError):
        AdaptationConfig(labeled_per_class=0)
    with pytest.raises(ParameterError):
        AdaptationConfig(epsilon_multiplier=-1.0)
    AdaptationConfig(solver="otlin", solver_params={"mu": 2.0, "reg": 1.0})


def test_stage_errors_name_the_stage(mixture):
    small = generate_gaussian_mixture(3, 5, 2, 5.0, 0.5, 1)
    with pytest.raises(StageError) as info:
        adapt(small, small, AdaptationConfig(labeled_per_class=6, train=clf.TrainConfig(epochs=1)))
    assert info.value.stage == "select"
