import json

import numpy as np
import pytest

from source_fiction import classifier as clf
from source_fiction.attack import (AttackConfig, build_source_fiction, epsilon_bound,
                                   inverse_fsgd, save_fiction)
from source_fiction.classifier import ClassifierParams, Layer, TrainConfig
from source_fiction.dataset import (LabeledDataset, generate_gaussian_mixture, load_csv,
                                    select_labeled_subset)
from source_fiction.errors import (BoundViolationError, DegenerateInputError, ParameterError,
                                   PreconditionError)
from oracles import min_half_distance


def _logistic_head(w):
    """1-d latent space; logit(1) - logit(0) = w·z."""
    return ClassifierParams((Layer(np.eye(1), np.zeros(1), "identity"),
                             Layer(np.array([[-w / 2, w / 2]]), np.zeros(2), "identity")), 0, 2)


@pytest.fixture(scope="module")
def trained():
    data = generate_gaussian_mixture(3, 50, 2, 5.0, 0.8, 0)
    params = clf.train(data, clf.default_arch(2, 3), TrainConfig(epochs=40, seed=0))
    target = generate_gaussian_mixture(3, 50, 2, 5.0, 0.8, 1)
    lab, _ = select_labeled_subset(target, 10, 0)
    latent = lab.with_features(clf.latent(params, lab.features))
    return params, latent


def test_bound_examples():
    assert epsilon_bound([[0.0, 0.0], [0.0, 2.0]]) == pytest.approx(1.0)
    assert epsilon_bound([[0.0], [2.0], [5.0]]) == pytest.approx(1.0)


def test_bound_matches_double_loop():
    x = np.random.default_rng(3).normal(size=(100, 16))
    assert epsilon_bound(x) == pytest.approx(min_half_distance(x.tolist()), rel=1e-12)


def test_bound_rejects_duplicates_and_tiny_inputs():
    with pytest.raises(DegenerateInputError):
        epsilon_bound([[1.0, 2.0], [0.0, 0.0], [1.0, 2.0]])
    with pytest.raises(ParameterError):
        epsilon_bound([[1.0, 2.0]])


@pytest.mark.parametrize("cfg", [AttackConfig(epsilon=0.5, iterations=0), AttackConfig(epsilon=0.0)])
def test_no_room_means_no_move(cfg):
    params = _logistic_head(2.0)
    z = np.array([-0.3])
    assert np.array_equal(inverse_fsgd(params, z, 1, cfg), z)


def test_single_logistic_step_moves_toward_the_label():
    params = _logistic_head(2.0)
    z = np.array([-0.3])
    cfg = AttackConfig(epsilon=0.5, alpha=0.1, iterations=1)
    out = inverse_fsgd(params, z, 1, cfg)
    assert out[0] == pytest.approx(z[0] + 0.1)
    before = clf.head_loss(params, z[None], [1])[0]
    after = clf.head_loss(params, out[None], [1])[0]
    assert after < before


def test_attack_config_checks():
    with pytest.raises(ParameterError):
        AttackConfig(epsilon=-1.0)
    with pytest.raises(ParameterError):
        AttackConfig(epsilon=0.1, alpha=0.2)
    with pytest.raises(ParameterError):
        AttackConfig(ball_norm="l1")
    assert AttackConfig(epsilon=1.0, iterations=10).step == pytest.approx(0.25)


def test_perfect_classifier_and_no_iterations_keeps_points(trained):
    params, latent = trained
    assert np.array_equal(clf.head_predict(params, latent.features), latent.labels)
    result = build_source_fiction(params, latent, AttackConfig(epsilon=0.0, iterations=0))
    assert np.array_equal(result.data.features, latent.features)
    assert np.array_equal(result.data.labels, latent.labels)


@pytest.mark.parametrize("ball_norm", ["l2", "linf"])
@pytest.mark.parametrize("fraction", [0.3, 1.0])
def test_displacement_stays_in_the_ball(trained, ball_norm, fraction):
    params, latent = trained
    eps = fraction * epsilon_bound(latent.features)
    result = build_source_fiction(params, latent, AttackConfig(epsilon=eps, ball_norm=ball_norm))
    assert np.all(result.displacement <= eps * (1 + 1e-12))
    assert result.epsilon == eps


def test_fiction_is_classified_at_least_as_well_as_the_raw_points(trained):
    params, latent = trained
    eps = 0.9 * epsilon_bound(latent.features)
    result = build_source_fiction(params, latent, AttackConfig(epsilon=eps, iterations=50))
    raw = np.mean(clf.head_predict(params, latent.features) == latent.labels)
    assert result.classification_rate >= raw
    assert len(result.warnings) == int(np.sum(~result.correct))


def test_bound_violation_quotes_both_values(trained):
    params, latent = trained
    bound = epsilon_bound(latent.features)
    with pytest.raises(BoundViolationError) as info:
        build_source_fiction(params, latent, AttackConfig(epsilon=2 * bound))
    assert repr(2 * bound) in str(info.value) and repr(bound) in str(info.value)
    forced = build_source_fiction(params, latent, AttackConfig(epsilon=2 * bound),
                                  allow_exceed_bound=True)
    assert forced.epsilon == 2 * bound


def test_fiction_needs_labels(trained):
    params, latent = trained
    unlabeled = LabeledDataset(latent.features, np.full(latent.n, -1), latent.mass, 3)
    with pytest.raises(PreconditionError):
        build_source_fiction(params, unlabeled, AttackConfig(epsilon=0.0))


def test_save_fiction_writes_csv_and_sidecar(trained, tmp_path):
    params, latent = trained
    cfg = AttackConfig(epsilon=0.5 * epsilon_bound(latent.features))
    result = build_source_fiction(params, latent, cfg)
    save_fiction(result, cfg, tmp_path / "f.csv", tmp_path / "f.json")
    assert load_csv(tmp_path / "f.csv", 3).allclose(result.data)
    doc = json.loads((tmp_path / "f.json").read_text())
    assert doc["attack"]["epsilon"] == cfg.epsilon
