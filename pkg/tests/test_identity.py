import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from activepose.identity import (
    AppearanceModel,
    build_appearance_model,
    hungarian_assign,
    match_detections,
    matching_cost,
)
from activepose.scenesim import Detection, EstimatorConfig, SceneConfig, generate_scene, instance_feature


def brute_force_min(cost):
    """Exhaustive minimum over injective assignments of the smaller side."""
    r, c = cost.shape
    if r <= c:
        return min(sum(cost[i, p[i]] for i in range(r)) for p in itertools.permutations(range(c), r))
    return brute_force_min(cost.T)


def _det(feat, hint=-1):
    return Detection(hint, np.asarray(feat, dtype=float), np.zeros((15, 3)), 1.0)


# -- appearance models ------------------------------------------------------------


def test_model_of_identical_vectors():
    v = np.arange(16.0)
    assert np.array_equal(build_appearance_model([v] * 10, 2).model_vector, v)


def test_model_single_sample():
    v = np.random.default_rng(0).normal(size=16)
    m = build_appearance_model([v], 4)
    assert m.person_id == 4
    assert np.array_equal(m.model_vector, v)


def test_model_is_middle_order_statistic():
    rng = np.random.default_rng(1)
    s = rng.normal(size=(3, 16))
    m = build_appearance_model(list(s), 0).model_vector
    for k in range(16):
        assert m[k] == sorted(s[:, k])[1]


def test_model_rejects_empty_and_mixed():
    with pytest.raises(ValueError):
        build_appearance_model([], 0)
    with pytest.raises(ValueError):
        build_appearance_model([np.zeros(16), np.zeros(15)], 0)


# -- cost ------------------------------------------------------------------


def test_matching_cost_cases():
    v = np.random.default_rng(2).normal(size=16)
    assert matching_cost(v, v) == 0.0
    e1, e2 = np.eye(16)[0], np.eye(16)[1]
    assert matching_cost(e1, e2) == 2.0
    w = np.random.default_rng(3).normal(size=16)
    assert matching_cost(v, AppearanceModel(0, w)) == pytest.approx(sum((a - b) ** 2 for a, b in zip(v, w)), rel=1e-14)


# -- hungarian ---------------------------------------------------------------


def test_hungarian_small_cases():
    rows, cols, total = hungarian_assign([[0, 1], [1, 0]])
    assert dict(zip(rows, cols)) == {0: 0, 1: 1} and total == 0
    rows, cols, total = hungarian_assign([[0.3]])
    assert total == pytest.approx(0.3)


def test_hungarian_brute_force_1000_square():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n = int(rng.integers(2, 8))
        cost = rng.uniform(0, 10, (n, n))
        rows, cols, total = hungarian_assign(cost)
        assert sorted(cols.tolist()) == list(range(n))
        assert total == pytest.approx(brute_force_min(cost), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_hungarian_rectangular_matches_brute_force(r, c, seed):
    cost = np.random.default_rng(seed).normal(size=(r, c))
    rows, cols, total = hungarian_assign(cost)
    assert len(rows) == min(r, c)
    assert len(set(rows.tolist())) == len(rows) and len(set(cols.tolist())) == len(cols)
    assert total == pytest.approx(brute_force_min(cost), abs=1e-9)
    assert total == pytest.approx(cost[rows, cols].sum(), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (5, 5), elements=st.floats(-1e3, 1e3)))
def test_hungarian_beats_random_permutations(cost):
    _, _, total = hungarian_assign(cost)
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = rng.permutation(5)
        assert total <= cost[np.arange(5), p].sum() + 1e-9


def test_hungarian_rejects_non_finite():
    with pytest.raises(ValueError):
        hungarian_assign([[0.0, np.inf], [1.0, 2.0]])


# -- matching ------------------------------------------------------------------


def test_cost_above_threshold_means_absent():
    model = AppearanceModel(0, np.zeros(16))
    feat = np.zeros(16)
    feat[0] = np.sqrt(0.6)
    a = match_detections([_det(feat)], [model], 0.5)
    assert a.pairs == [] and a.absent_persons == [0] and a.unmatched_detections == [0]


def test_no_detections_means_all_absent():
    models = [AppearanceModel(k, np.full(16, k)) for k in range(3)]
    a = match_detections([], models)
    assert a.absent_persons == [0, 1, 2] and a.pairs == []


def test_matching_recovers_simulator_identities():
    sc = generate_scene(SceneConfig(persons=(3, 3)), 21)
    est = EstimatorConfig()
    rng = np.random.default_rng(0)
    models = [build_appearance_model([instance_feature(rng, p.signature, est) for _ in range(10)], k)
              for k, p in enumerate(sc.persons)]
    for trial in range(50):
        order = rng.permutation(3)
        dets = [_det(instance_feature(rng, sc.persons[k].signature, est), int(k)) for k in order]
        a = match_detections(dets, models)
        assert len(a.pairs) == 3
        for j, pid, c in a.pairs:
            assert dets[j].person_index_hint == pid
            assert c <= 0.5


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6), st.integers(0, 6), st.floats(0.05, 3.0))
def test_assignment_invariants(seed, n_models, n_dets, threshold):
    rng = np.random.default_rng(seed)
    models = [AppearanceModel(k, rng.normal(size=16) * 0.3) for k in range(n_models)]
    dets = [_det(rng.normal(size=16) * 0.3) for _ in range(n_dets)]
    a = match_detections(dets, models, threshold)
    js = [j for j, _, _ in a.pairs]
    ps = [p for _, p, _ in a.pairs]
    assert len(set(js)) == len(js) and len(set(ps)) == len(ps)
    assert all(c <= threshold for _, _, c in a.pairs)
    assert sorted(js + a.unmatched_detections) == list(range(n_dets))
    assert sorted(ps + a.absent_persons) == list(range(n_models))
    for j, p, c in a.pairs:
        assert c == pytest.approx(matching_cost(dets[j].instance_feature, models[p]), rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_permuting_detections_permutes_assignment(seed):
    rng = np.random.default_rng(seed)
    models = [AppearanceModel(k, rng.normal(size=16)) for k in range(4)]
    feats = [m.model_vector + rng.normal(size=16) * 0.05 for m in models]
    dets = [_det(f, k) for k, f in enumerate(feats)]
    perm = rng.permutation(4)
    a = match_detections(dets, models)
    b = match_detections([dets[i] for i in perm], models)
    assert a.total_cost == pytest.approx(b.total_cost, abs=1e-12)
    pairs_a = {(dets[j].person_index_hint, p) for j, p, _ in a.pairs}
    pairs_b = {(dets[perm[j]].person_index_hint, p) for j, p, _ in b.pairs}
    assert pairs_a == pairs_b


def test_assignment_text_form():
    models = [AppearanceModel(k, np.full(16, float(k))) for k in range(2)]
    a = match_detections([_det(np.full(16, 1.0)), _det(np.full(16, 0.2))], models)
    text = str(a)
    assert text.splitlines()[0] == "pair det=0 person=1 cost=0.000000"
    assert "unmatched det=1" in text and "absent person=0" in text
