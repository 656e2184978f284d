import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from source_fiction import monotonicity as mono
from source_fiction.dataset import (UNLABELED, LabeledDataset, ShiftSpec, apply_shift,
                                    labeled_subset_indices, load_csv, save_csv)
from source_fiction.ot import solve_emd, solve_sinkhorn
from oracles import lp_transport

FAST = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@st.composite
def datasets(draw):
    n = draw(st.integers(1, 12))
    d = draw(st.integers(1, 4))
    k = draw(st.integers(1, 4))
    x = draw(arrays(np.float64, (n, d), elements=finite))
    y = np.array(draw(st.lists(st.integers(-1, k - 1), min_size=n, max_size=n)))
    w = np.array(draw(st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n)))
    return LabeledDataset(x, y, w / w.sum(), k)


@st.composite
def histograms(draw, n):
    w = np.array(draw(st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n)))
    return w / w.sum()


@FAST
@given(datasets())
def test_csv_round_trip(tmp_path_factory, data):
    path = tmp_path_factory.mktemp("csv") / "d.csv"
    save_csv(data, path)
    back = load_csv(path, data.num_classes)
    assert np.array_equal(back.features, data.features)
    assert np.array_equal(back.labels, data.labels)
    assert np.array_equal(back.mass, data.mass)


@FAST
@given(datasets(), st.floats(-np.pi, np.pi),
       st.lists(st.floats(-50, 50), min_size=4, max_size=4))
def test_isometric_shift_keeps_pairwise_distances(data, angle, t):
    spec = ShiftSpec(data.dim, angle, tuple(t[:data.dim]))
    moved = apply_shift(data, spec)
    before = np.linalg.norm(data.features[:, None] - data.features[None], axis=-1)
    after = np.linalg.norm(moved.features[:, None] - moved.features[None], axis=-1)
    assert np.allclose(before, after, atol=1e-9 * (1 + before.max()))


@FAST
@given(st.lists(st.integers(0, 3), min_size=4, max_size=60), st.integers(0, 2**31 - 1))
def test_subset_partitions_the_rows(labels, seed):
    labels = np.array(labels)
    per_class = int(min(np.bincount(labels)[np.unique(labels)]))
    chosen, rest = labeled_subset_indices(labels, per_class, seed)
    assert np.array_equal(np.sort(np.concatenate([chosen, rest])), np.arange(len(labels)))
    for c in np.unique(labels):
        assert np.sum(labels[chosen] == c) == per_class
    assert UNLABELED not in labels[chosen]


@FAST
@given(st.data())
def test_emd_matches_lp(data):
    n, m = data.draw(st.integers(1, 6)), data.draw(st.integers(1, 6))
    M = data.draw(arrays(np.float64, (n, m), elements=st.floats(0, 10)))
    a, b = data.draw(histograms(n)), data.draw(histograms(m))
    res = solve_emd(M, a, b)
    assert abs(res.objective - lp_transport(M, a, b)) <= 1e-9 * max(1.0, abs(res.objective))
    assert res.coupling.marginal_error() < 1e-12
    assert np.count_nonzero(res.gamma > 1e-15) <= n + m - 1


@FAST
@given(st.data())
def test_sinkhorn_marginals(data):
    n, m = data.draw(st.integers(1, 8)), data.draw(st.integers(1, 8))
    M = data.draw(arrays(np.float64, (n, m), elements=st.floats(0, 10)))
    a, b = data.draw(histograms(n)), data.draw(histograms(m))
    reg = data.draw(st.floats(0.05, 5.0))
    res = solve_sinkhorn(M, a, b, reg=reg)
    assert res.converged
    assert res.coupling.marginal_error() < 1e-6
    assert np.all(res.gamma >= 0)


@FAST
@given(st.integers(2, 7), st.integers(1, 3), st.integers(0, 2**31 - 1), st.floats(0.0, 1.0))
def test_perturbation_within_the_bound_is_monotone(n, dim, seed, fraction):
    rng = np.random.default_rng(seed)
    x, moved = mono.lemma_trial(n, dim, rng, radius_fraction=fraction)
    assert mono.check_cycles(mono.Pairing(x, moved), tolerance=1e-9) is None
