import os
import subprocess
import sys
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_set
from oracles import gmphd_update_scalar
from pddtrack.gm_state import BIRTH_LABEL, TargetSet, gm_integral
from pddtrack.update import (MeasurementSet, SingularInnovationError, UpdateConfig, append_births,
                             clutter_intensity, kalman_update, measurement_volume, select_by_weight)


def _z(boxes, frame=1):
    return MeasurementSet(frame, np.asarray(boxes, float))


class TestMeasurementSet:
    def test_rejects_nonpositive_size(self):
        with pytest.raises(ValueError):
            _z([[1, 1, 0, 5]])

    def test_empty(self):
        assert len(MeasurementSet(3)) == 0


class TestConfig:
    @pytest.mark.parametrize("kw", [{"p_detect": 0.0}, {"p_detect": 1.1}, {"clutter_rate": -1.0},
                                    {"area": 0.0}, {"R": -np.eye(4)}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            UpdateConfig(**kw)


class TestBirths:
    def test_empty_z_unchanged(self):
        pred = make_set([[1, 2, 3, 4]])
        out = append_births(pred, MeasurementSet(1), UpdateConfig())
        np.testing.assert_array_equal(out.means, pred.means)

    def test_three_births(self):
        out = append_births(TargetSet.empty(), _z([[10, 10, 5, 5], [20, 20, 5, 5], [30, 30, 5, 5]]),
                            UpdateConfig())
        assert len(out) == 3
        np.testing.assert_array_equal(out.covs, np.repeat(np.eye(4)[None] * 20, 3, axis=0))
        assert (out.ages == 5).all() and (out.labels == BIRTH_LABEL).all()
        assert (out.weights == 1.0).all() and not out.motions.any()

    def test_order_preserved(self):
        pred = make_set([[1, 1, 1, 1], [2, 2, 1, 1]], labels=[7, 8])
        out = append_births(pred, _z([[5, 5, 1, 1]] * 3), UpdateConfig())
        assert len(out) == 5
        np.testing.assert_array_equal(out.labels, [7, 8, -1, -1, -1])


class TestClutter:
    def test_zero_rate(self):
        assert clutter_intensity(None, UpdateConfig(clutter_rate=0.0)) == 0.0

    def test_direct_ratio(self):
        cfg = UpdateConfig(clutter_rate=10.0, area=10.0, size_span=(10.0, 10.0))
        assert measurement_volume(cfg) == 1000.0
        assert clutter_intensity(np.array([1, 2, 3, 4]), cfg) == pytest.approx(0.01)

    def test_linear_in_rate(self):
        a = clutter_intensity(None, UpdateConfig(clutter_rate=1.5))
        b = clutter_intensity(None, UpdateConfig(clutter_rate=3.0))
        assert b == pytest.approx(2 * a)


@pytest.fixture
def fixture_2x2():
    means = np.array([[30.0, 40.0, 10.0, 20.0], [60.0, 55.0, 12.0, 22.0]])
    a = np.diag([25.0, 16.0, 4.0, 9.0])
    a[0, 1] = a[1, 0] = 3.0
    covs = np.array([a, np.diag([20.0, 20.0, 5.0, 5.0])])
    weights = np.array([0.8, 0.6])
    zs = np.array([[33.0, 38.0, 11.0, 19.0], [58.0, 57.0, 13.0, 21.0]])
    cfg = UpdateConfig(p_detect=0.9, clutter_rate=2.0, area=100.0 * 100.0, size_span=(100.0, 100.0))
    return means, covs, weights, zs, cfg


class TestKalmanUpdate:
    def test_matches_scalar_oracle(self, fixture_2x2):
        means, covs, weights, zs, cfg = fixture_2x2
        out = kalman_update(make_set(means, covs=covs, weights=weights), _z(zs), cfg, prune=False)
        want = gmphd_update_scalar(means, covs, weights, zs, cfg.R, 0.9, clutter_intensity(None, cfg))
        assert len(out) == 6
        for k, (w, m, P) in enumerate(want):
            assert abs(out.weights[k] - w) < 1e-9
            np.testing.assert_allclose(out.means[k], m, atol=1e-9)
            np.testing.assert_allclose(out.covs[k], P, atol=1e-9)
        np.testing.assert_allclose(out.weights[4:], 0.1 * weights, atol=1e-15)
        np.testing.assert_array_equal(out.means[4:], means)

    def test_weights_sum_to_one_without_clutter(self, fixture_2x2):
        means, covs, weights, zs, _ = fixture_2x2
        cfg = UpdateConfig(p_detect=1.0, clutter_rate=0.0)
        out = kalman_update(make_set(means, covs=covs, weights=weights), _z(zs), cfg, prune=False)
        w = out.weights[:4].reshape(2, 2)
        np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-9)
        assert not out.weights[4:].any()

    def test_zero_noise_limit(self):
        cfg = UpdateConfig(R=1e-9 * np.eye(4), p_detect=1.0, clutter_rate=0.0)
        z = np.array([[12.0, 13.0, 5.0, 6.0]])
        out = kalman_update(make_set([[10, 10, 5, 5]]), _z(z), cfg, prune=False)
        np.testing.assert_allclose(out.means[0], z[0], atol=1e-6)
        assert out.weights[0] == pytest.approx(1.0)

    def test_inherits_metadata(self, fixture_2x2):
        means, covs, weights, zs, cfg = fixture_2x2
        s = make_set(means, covs=covs, weights=weights, labels=[4, 9], ages=[6, 11])
        out = kalman_update(s, _z(zs), cfg, prune=False)
        np.testing.assert_array_equal(out.labels, [4, 4, 9, 9, 4, 9])
        np.testing.assert_array_equal(out.ages, [6, 6, 11, 11, 6, 11])

    def test_empty_z_is_missed_branch_only(self):
        s = make_set([[10, 10, 5, 5], [80, 80, 5, 5]], weights=[0.7, 1.2])
        out = kalman_update(s, MeasurementSet(1), UpdateConfig(p_detect=0.9), prune=False)
        np.testing.assert_allclose(out.weights, [0.07, 0.12])
        np.testing.assert_array_equal(out.covs, s.covs)

    def test_empty_targets(self):
        out = kalman_update(TargetSet.empty(), _z([[1, 1, 1, 1]]), UpdateConfig())
        assert len(out) == 0

    def test_singular_innovation(self):
        cfg = UpdateConfig()
        cfg.R = np.zeros((4, 4))
        s = make_set([[10, 10, 5, 5]], covs=np.eye(4))
        s.covs[0] = np.zeros((4, 4))
        with pytest.raises(SingularInnovationError, match="component 0"):
            kalman_update(s, _z([[10, 10, 5, 5]]), cfg)

    def test_prune_merges_duplicates(self):
        s = make_set([[10, 10, 5, 5]], weights=[1.0])
        cfg = UpdateConfig(p_detect=0.9, clutter_rate=0.0)
        out = kalman_update(s, _z([[10.5, 10, 5, 5]]), cfg)
        assert len(out) == 1
        assert out.weights[0] == pytest.approx(1.1)

    def test_jmax_cap_from_rng(self):
        means = np.column_stack([np.arange(6) * 100.0, np.zeros(6), np.ones(6), np.ones(6)])
        s = make_set(means)
        out = kalman_update(s, MeasurementSet(1), UpdateConfig(), j_max=2)
        assert len(out) == 2

    @given(st.integers(1, 4), st.integers(0, 5), st.floats(0.5, 1.0), st.floats(0.0, 5.0),
           st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_spd_and_mass_bound(self, n, nz, p_d, lam, seed):
        r = np.random.default_rng(seed)
        means = np.column_stack([r.uniform(0, 200, (n, 2)), r.uniform(5, 30, (n, 2))])
        weights = r.uniform(0.1, 1.5, n)
        zs = np.column_stack([r.uniform(0, 200, (nz, 2)), r.uniform(5, 30, (nz, 2))])
        cfg = UpdateConfig(p_detect=p_d, clutter_rate=lam)
        s = make_set(means, weights=weights)
        out = kalman_update(s, MeasurementSet(1, zs), cfg, prune=False)
        assert np.linalg.eigvalsh(out.covs)[:, 0].min() > 0
        assert gm_integral(out) <= nz + (1 - p_d) * gm_integral(s) + 1e-9


class TestSelect:
    def test_threshold(self):
        s = make_set([[0, 0, 1, 1], [5, 5, 1, 1]], weights=[0.9, 0.3])
        assert len(select_by_weight(s, 0.5)) == 1

    def test_zero_threshold_keeps_positive(self):
        s = make_set(np.zeros((3, 4)), weights=[0.0, 0.2, 1.0])
        np.testing.assert_array_equal(select_by_weight(s, 0.0).weights, [0.2, 1.0])

    def test_empty(self):
        assert len(select_by_weight(TargetSet.empty(), 0.5)) == 0


def _update_time(n, nz, reps=7):
    r = np.random.default_rng(n)
    s = make_set(np.column_stack([r.uniform(0, 600, (n, 2)), r.uniform(10, 40, (n, 2))]))
    z = MeasurementSet(1, np.column_stack([r.uniform(0, 600, (nz, 2)), r.uniform(10, 40, (nz, 2))]))
    cfg = UpdateConfig()
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        kalman_update(s, z, cfg, prune=False)
        best = min(best, time.perf_counter() - t0)
    return best


def test_update_linear_in_measurements():
    # O(M*N): doubling only N roughly doubles the update cost. Sizes sit above
    # the cache-to-DRAM transition (n*|Z| ~ 1e5) so the ratio is not a cache cliff.
    # A fresh interpreter keeps earlier tests' large frees from shifting glibc's
    # mmap threshold, which would move only some intermediates onto recycled pages.
    tests_dir = os.path.dirname(os.path.abspath(__file__))
    code = ("from test_update import _update_time; "
            "print(_update_time(400, 1600, reps=5) / _update_time(400, 800, reps=5))")
    env = dict(os.environ, PYTHONPATH=os.pathsep.join(filter(None, [tests_dir, os.environ.get("PYTHONPATH")])))
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    ratio = float(out.stdout.strip().splitlines()[-1])
    assert 1.6 <= ratio <= 2.6
