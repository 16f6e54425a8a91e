import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import best_partition, separated_groups, unit
from foulscope import spherical_kmeans
from foulscope.errors import EmptyDataset, InvalidK
from foulscope.summarize import SKMPSSelector, skmps, summarize_by_class
from foulscope.video import TimelinePoint


def ids(n):
    return [f"fr{i}" for i in range(n)]


def test_c_equals_n_selects_all(rng):
    X = unit(rng.standard_normal((6, 4)))
    sel = skmps(X, ids(6), np.arange(6.0), 6)
    assert [s.frame_id for s in sel] == ids(6)


def test_c_one_is_max_cosine_to_mean(rng):
    X = unit(rng.standard_normal((15, 5)))
    sel = skmps(X, ids(15), np.arange(15.0), 1)
    mean = unit(X.sum(0))
    assert sel[0].frame_id == f"fr{int(np.argmax(X @ mean))}"


def test_two_groups_one_each(rng):
    X, truth = separated_groups(rng, 10, 2)
    sel = skmps(X, ids(10), np.arange(10.0), 2)
    picked = [truth[int(s.frame_id[2:])] for s in sel]
    assert sorted(picked) == [0, 1]


def test_time_order_and_tie_to_earliest():
    v = unit([1.0, 0.0, 0.0])
    X = np.array([v, v, v])
    sel = skmps(X, ["c", "a", "b"], [5.0, 1.0, 3.0], 1)
    assert sel[0].frame_id == "a"
    X2 = unit(np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1.0]]))
    sel2 = skmps(X2, ["x", "y", "z"], [9.0, 2.0, 4.0], 3)
    assert [s.frame_id for s in sel2] == ["y", "z", "x"]


@pytest.mark.parametrize("c", [0, 4])
def test_invalid_c(c):
    with pytest.raises(InvalidK):
        skmps(np.eye(3), ids(3), [0, 1, 2], c)


def test_empty():
    with pytest.raises(EmptyDataset):
        skmps(np.empty((0, 3)), [], [], 1)


def test_rescaling_invariance(rng):
    X = rng.standard_normal((30, 6))
    a = skmps(X, ids(30), np.arange(30.0), 4, seed=2)
    b = skmps(X * rng.uniform(0.1, 10, (30, 1)), ids(30), np.arange(30.0), 4, seed=2)
    assert [s.frame_id for s in a] == [s.frame_id for s in b]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 3), st.integers(3, 8))
def test_medoid_and_micro_optimality(seed, c, n):
    if n < c:
        return
    r = np.random.default_rng(seed)
    X, _ = separated_groups(r, n, c)
    sel = skmps(X, ids(n), np.arange(float(n)), c, seed=seed)
    assert len(sel) == c and {s.frame_id for s in sel} <= set(ids(n))
    assert sorted(s.cluster for s in sel) == list(range(c))
    res = spherical_kmeans(X, c, seed)
    assert abs(res.inertia - best_partition(X, c)[0]) < 1e-12
    for s in sel:
        i = int(s.frame_id[2:])
        members = np.flatnonzero(res.labels == s.cluster)
        assert i in members
        cos = X[members] @ res.centroids[s.cluster]
        assert cos[list(members).index(i)] == cos.max()


def point(i, fouled, hull=True):
    return TimelinePoint(f"fr{i}", float(i), 0.9 if hull else 0.1, hull,
                         0.9 if fouled else 0.0, 0.0, 0.9 if fouled else 0.0, 0.0, fouled and hull)


class TestByClass:
    def test_all_fouled(self, rng):
        tl = [point(i, True) for i in range(20)]
        g = {f"fr{i}": unit(rng.standard_normal(4)) for i in range(20)}
        s = summarize_by_class(tl, g, per_group=8)
        assert len(s.fouling_present) == 8 and s.fouling_absent == ()

    def test_eight_plus_eight(self, rng):
        tl = [point(i, i % 3 == 0) for i in range(200)]
        g = {f"fr{i}": unit(rng.standard_normal(16)) for i in range(200)}
        s = summarize_by_class(tl, g, per_group=8)
        assert len(s.fouling_present) == 8 and len(s.fouling_absent) == 8
        assert all(int(x.frame_id[2:]) % 3 == 0 for x in s.fouling_present)
        assert all(int(x.frame_id[2:]) % 3 != 0 for x in s.fouling_absent)

    def test_small_group_and_no_hull_excluded(self, rng):
        tl = [point(0, True), point(1, True), point(2, False), point(3, True, hull=False)]
        g = {f"fr{i}": unit(rng.standard_normal(4)) for i in range(4)}
        s = summarize_by_class(tl, g, per_group=8)
        assert [x.frame_id for x in s.fouling_present] == ["fr0", "fr1"]
        assert [x.frame_id for x in s.fouling_absent] == ["fr2"]
        assert s.to_dict()["per_group"] == 8


def test_selector_estimator(rng):
    from sklearn.base import clone

    X, truth = separated_groups(rng, 12, 3)
    est = SKMPSSelector(n_clusters=3).fit(X)
    assert len(est.selected_indices_) == 3
    assert sorted(truth[est.selected_indices_]) == [0, 1, 2]
    assert est.transform(X).shape == (3, X.shape[1])
    assert clone(est).get_params() == {"n_clusters": 3, "random_state": 0}
