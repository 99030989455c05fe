import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridload.data import LoadSeries, Scaler, make_windows
from hybridload.features import (
    VARIANTS,
    ClusterModel,
    TimeIndex,
    assemble_sample,
    assign,
    kmeans_fit,
    one_hot,
    similarity,
    stack,
    stat_features,
)


class TestOneHot:
    def test_middle(self):
        np.testing.assert_array_equal(one_hot(2, 7), [0, 0, 1, 0, 0, 0, 0])

    def test_first(self):
        np.testing.assert_array_equal(one_hot(0, 2), [1, 0])

    def test_last(self):
        v = one_hot(23, 24)
        assert v[-1] == 1 and v.sum() == 1

    @pytest.mark.parametrize("code", [-1, 7])
    def test_out_of_range(self, code):
        with pytest.raises(ValueError):
            one_hot(code, 7)

    def test_time_index_encoding(self):
        # Tuesday 13:00, working day
        v = TimeIndex.of(dt.datetime(2020, 3, 3, 13), set()).encode()
        assert v.shape == (33,)
        np.testing.assert_array_equal(np.flatnonzero(v), [1, 7 + 13, 31 + 1])

    def test_holiday_code_is_zero(self):
        assert TimeIndex.of(dt.datetime(2020, 3, 3), {dt.date(2020, 3, 3)}).holiday == 0


class TestStats:
    def test_constant(self):
        np.testing.assert_array_equal(stat_features(np.full(168, 0.5)), [0.5, 0.5, 0.5])

    def test_arithmetic(self):
        np.testing.assert_allclose(stat_features(np.linspace(0, 1, 168)), [1.0, 0.0, 0.5], atol=1e-15)

    def test_random_oracle(self):
        w = np.random.default_rng(4).random(168)
        lo, hi, total = w[0], w[0], 0.0
        for x in w:
            lo, hi, total = min(lo, x), max(hi, x), total + x
        np.testing.assert_allclose(stat_features(w), [hi, lo, total / 168], rtol=1e-13)


def brute_assign(X, C):
    labels = []
    for x in X:
        best, best_d = 0, None
        for j, c in enumerate(C):
            d = sum((a - b) ** 2 for a, b in zip(x, c)) ** 0.5
            if best_d is None or d < best_d:
                best, best_d = j, d
        labels.append(best)
    return np.array(labels)


class TestKMeans:
    def test_two_groups(self):
        rng = np.random.default_rng(0)
        a, b = np.full(168, 0.2), np.full(168, 0.8)
        X = np.vstack([a + 1e-3 * rng.standard_normal((10, 168)), b + 1e-3 * rng.standard_normal((10, 168))])
        m = kmeans_fit(X, 2, seed=1)
        means = sorted([X[:10].mean(axis=0), X[10:].mean(axis=0)], key=lambda v: v[0])
        got = sorted(m.centers, key=lambda v: v[0])
        for g, e in zip(got, means):
            np.testing.assert_allclose(g, e, atol=1e-9)

    def test_noise_free_groups_exact(self):
        X = np.vstack([np.full((5, 168), 0.2), np.full((7, 168), 0.8)])
        m = kmeans_fit(X, 2, seed=3)
        got = sorted(m.centers[:, 0])
        assert got == pytest.approx([0.2, 0.8], abs=1e-9)

    def test_single_cluster_is_mean(self):
        X = np.random.default_rng(2).random((9, 168))
        m = kmeans_fit(X, 1, seed=0)
        np.testing.assert_allclose(m.centers[0], X.mean(axis=0), rtol=1e-13)

    def test_twelve_windows_monotone_and_brute_force(self):
        X = np.random.default_rng(7).random((12, 168))
        m = kmeans_fit(X, 3, seed=5)
        hist = np.array(m.objective_history)
        assert (np.diff(hist) <= 0).all()
        assert m.final_objective == min(hist)
        labels, _ = assign(X, m.centers)
        np.testing.assert_array_equal(labels, brute_assign(X, m.centers))

    def test_fewer_windows_than_clusters(self):
        with pytest.raises(ValueError, match="fewer"):
            kmeans_fit(np.ones((3, 4)), 4)

    def test_tie_goes_to_lowest_index(self):
        C = np.array([[1.0, 0.0], [-1.0, 0.0]])
        labels, _ = assign(np.array([[0.0, 5.0]]), C)
        assert labels[0] == 0

    def test_deterministic(self):
        X = np.random.default_rng(1).random((30, 20))
        a, b = kmeans_fit(X, 4, seed=2), kmeans_fit(X, 4, seed=2)
        assert a.centers.tobytes() == b.centers.tobytes()

    def test_stops_at_max_iter(self):
        X = np.random.default_rng(1).random((40, 6))
        assert kmeans_fit(X, 5, seed=0, max_iter=1).iterations_run == 1

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_objective_non_increasing(self, seed):
        X = np.random.default_rng(seed).random((25, 12))
        m = kmeans_fit(X, 4, seed=seed)
        assert (np.diff(m.objective_history) <= 0).all()


class TestSimilarity:
    def model(self):
        rng = np.random.default_rng(3)
        return ClusterModel(rng.random((4, 168)) + 0.1, 0.0, 0)

    def test_collinear(self):
        m = self.model()
        assert similarity(2 * m.centers[0], m)[0] == pytest.approx(1.0, abs=1e-15)

    def test_orthogonal(self):
        m = ClusterModel(np.eye(3), 0.0, 0)
        assert similarity(np.array([0.0, 1.0, 0.0]), m)[0] == 0.0

    def test_oracle(self):
        m = self.model()
        L = np.random.default_rng(5).random(168)
        expect = [
            sum(a * b for a, b in zip(L, c)) / (sum(a * a for a in L) ** 0.5 * sum(b * b for b in c) ** 0.5)
            for c in m.centers
        ]
        np.testing.assert_allclose(similarity(L, m), expect, atol=1e-12)

    def test_zero_window(self):
        with pytest.raises(ValueError):
            similarity(np.zeros(168), self.model())

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-3, 1e3))
    def test_scale_invariant(self, alpha):
        m = self.model()
        L = np.random.default_rng(6).random(168)
        np.testing.assert_allclose(similarity(alpha * L, m), similarity(L, m), atol=1e-12)


class TestAssemble:
    # 2020-03-02 is a Monday; the first target day is 2020-03-09, also a Monday
    START = dt.datetime(2020, 3, 2)

    def setup_sample(self, holidays=frozenset(), n_c=20, variant="proposed"):
        rng = np.random.default_rng(0)
        series = LoadSeries(self.START, 100.0 + rng.random(24 * 30), frozenset(holidays))
        windows = make_windows(series)
        scaler = Scaler(100.0, 101.0)
        clusters = ClusterModel(rng.random((n_c, 168)) + 0.1, 0.0, 0)
        return windows, scaler, clusters, series

    def test_shapes(self):
        ws, sc, cl, s = self.setup_sample()
        sm = assemble_sample(ws[0], sc, s.holidays, cl)
        assert sm.X.shape == (168, 34)
        assert sm.Q.shape == (32,)
        assert sm.Y.shape == (24,)

    def test_monday_holiday_codes(self):
        ws, sc, cl, s = self.setup_sample(holidays={dt.date(2020, 3, 9)})
        sm = assemble_sample(ws[0], sc, s.holidays, cl)
        np.testing.assert_array_equal(sm.Q[3:10], [1, 0, 0, 0, 0, 0, 0])
        np.testing.assert_array_equal(sm.Q[10:12], [1, 0])

    def test_tuesday_1300_row(self):
        ws, sc, cl, s = self.setup_sample()
        sm = assemble_sample(ws[0], sc, s.holidays, cl)
        row = sm.X[24 + 13]
        nz = np.flatnonzero(row)
        np.testing.assert_array_equal(nz, [0, 1 + 1, 1 + 7 + 13, 1 + 31 + 1])

    def test_one_hots_sum_to_three(self):
        ws, sc, cl, s = self.setup_sample(holidays={dt.date(2020, 3, 4)})
        for w in ws:
            X = assemble_sample(w, sc, s.holidays, cl).X
            assert (X[:, 1:].sum(axis=1) == 3).all()

    def test_q_segments_match_target_date(self):
        ws, sc, cl, s = self.setup_sample(holidays={dt.date(2020, 3, 11)})
        for w in ws:
            sm = assemble_sample(w, sc, s.holidays, cl)
            d = sm.target_date
            np.testing.assert_array_equal(sm.Q[3:10], one_hot(d.weekday(), 7))
            np.testing.assert_array_equal(sm.Q[10:12], one_hot(0 if d in s.holidays else 1, 2))
            L = sc.apply(w.history)
            np.testing.assert_array_equal(sm.Q[:3], stat_features(L))
            np.testing.assert_array_equal(sm.Q[12:], similarity(L, cl))
            np.testing.assert_array_equal(sm.X[:, 0], L)
            np.testing.assert_array_equal(sm.Y, sc.apply(w.target))

    @pytest.mark.parametrize(
        "variant,in_dim,q_dim", [("model1", 1, 0), ("model2", 34, 12), ("model3", 34, 29), ("proposed", 34, 32)]
    )
    def test_variant_dims(self, variant, in_dim, q_dim):
        mask = VARIANTS[variant]
        ws, sc, cl, s = self.setup_sample()
        sm = assemble_sample(ws[0], sc, s.holidays, cl, mask)
        assert sm.X.shape == (168, in_dim) == (168, mask.in_dim)
        assert sm.Q.shape == (q_dim,) == (mask.q_dim(20),)

    def test_stack(self):
        ws, sc, cl, s = self.setup_sample()
        X, Q, Y = stack(assemble_sample(w, sc, s.holidays, cl) for w in ws[:3])
        assert X.shape == (3, 168, 34) and Q.shape == (3, 32) and Y.shape == (3, 24)
