import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_set
from oracles import central_difference, relative_error
from pddtrack import convlstm as cl
from pddtrack.phd_grid import GridSpec, PddMap, pdd, render_phd


def _zero_params(f=2):
    return cl.init_params(f, seed=0).zeros_like()


def _unflatten(like, v):
    out, off = {}, 0
    for k, a in like.arrays().items():
        out[k] = v[off:off + a.size].reshape(a.shape)
        off += a.size
    return cl.ConvLstmParams(**out)


def _moving_pdds(n, grid, speed=6.0):
    """PDD maps of one Gaussian moving at constant velocity."""
    maps = []
    prev = None
    for k in range(n + 1):
        s = make_set([[30 + speed * k, 40, 1, 1]], covs=np.eye(4) * 36.0, frame=k)
        cur = render_phd(s, grid)
        if prev is not None:
            maps.append(pdd(cur, prev))
        prev = cur
    return maps


class TestForward:
    def test_zero_params_give_zero_hidden(self, rng):
        p = _zero_params()
        st_ = cl.forward_step(p, cl.ConvLstmState.zeros(2, (6, 7)), rng.normal(size=(6, 7)))
        assert not st_.h.any()

    def test_biases_only_are_spatially_constant(self):
        p = _zero_params()
        p.b = np.array([0.3, -0.2, 1.0, 0.5, -1.0, 0.7, 0.1, -0.4])
        out = cl.forward_step(p, cl.ConvLstmState.zeros(2, (5, 5)), np.zeros((5, 5)))
        sig = lambda x: 1 / (1 + math.exp(-x))  # noqa: E731
        for ch in range(2):
            i, g, o = sig(p.b[ch]), math.tanh(p.b[4 + ch]), sig(p.b[6 + ch])
            c = i * g
            np.testing.assert_allclose(out.c[ch], c, rtol=1e-12)
            np.testing.assert_allclose(out.h[ch], o * math.tanh(c), rtol=1e-12)

    def test_shift_equivariance(self, rng):
        p = cl.init_params(3, seed=4)
        x = np.zeros((12, 12))
        x[4:8, 3:7] = rng.normal(size=(4, 4))
        a = cl.forward_step(p, cl.ConvLstmState.zeros(3, x.shape), x)
        b = cl.forward_step(p, cl.ConvLstmState.zeros(3, x.shape), np.roll(x, 1, axis=1))
        np.testing.assert_allclose(b.h[:, :, 1:], a.h[:, :, :-1], atol=1e-14)

    def test_shape_mismatch(self):
        p = _zero_params()
        with pytest.raises(ValueError):
            cl.forward_step(p, cl.ConvLstmState.zeros(2, (5, 5)), np.zeros((4, 5)))


class TestPredict:
    def test_zero_params_predict_zero(self, rng):
        assert not cl.predict(_zero_params(), rng.normal(size=(3, 6, 6))).any()

    def test_single_step_is_forward_plus_readout(self, rng):
        p = cl.init_params(3, seed=2)
        x = rng.normal(size=(6, 6))
        h = cl.forward_step(p, cl.ConvLstmState.zeros(3, x.shape), x).h
        want = np.tensordot(p.w_out, h, axes=1) + p.b_out[0]
        np.testing.assert_array_equal(cl.predict(p, x[None], relu_output=False), want)
        np.testing.assert_array_equal(cl.predict(p, x[None]), np.maximum(want, 0))

    def test_cold_start(self):
        with pytest.raises(cl.ColdStartError, match="cold start"):
            cl.predict(_zero_params(), cl.PddBatch(3))

    def test_deterministic(self, rng):
        xs = rng.normal(size=(4, 8, 8))
        a = cl.predict(cl.init_params(4, seed=9), xs)
        b = cl.predict(cl.init_params(4, seed=9), xs)
        assert a.tobytes() == b.tobytes()


class TestLosses:
    def test_identical_is_zero(self, rng):
        a = rng.normal(size=(5, 5))
        assert cl.kl_loss(a, a) == pytest.approx(0.0, abs=1e-12)
        assert cl.jsd_loss(a, a) == pytest.approx(0.0, abs=1e-12)

    def test_two_cell_kl_is_log2(self):
        assert cl.kl_loss(np.array([0.5, 0.5]), np.array([1.0, 0.0])) == pytest.approx(math.log(2), abs=1e-3)

    def test_two_cell_jsd_closed_form(self):
        eps = cl.LOSS_EPS
        t = np.array([1 + eps, eps]) / (1 + 2 * eps)
        p = np.array([0.5, 0.5])
        want = sum(t * np.log(t / p)) + sum(p * np.log(p / t))
        assert cl.jsd_loss(p, np.array([1.0, 0.0])) == pytest.approx(want, rel=1e-12)

    def test_kl_asymmetric(self):
        a, b = np.array([0.0, 1.0, 3.0]), np.array([0.0, 2.0, 2.5])
        assert cl.kl_loss(a, b) != pytest.approx(cl.kl_loss(b, a), rel=1e-3)

    def test_constant_maps_are_uniform(self):
        assert cl.kl_loss(np.full(4, 3.0), np.full(4, -1.0)) == pytest.approx(0.0, abs=1e-12)

    def test_unknown_loss(self):
        with pytest.raises(ValueError):
            cl.loss_and_grad_pred(np.zeros(3), np.ones(3), "mse")

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_jsd_symmetric_and_nonnegative(self, seed):
        r = np.random.default_rng(seed)
        a, b = r.normal(size=(4, 4)), r.normal(size=(4, 4))
        assert cl.jsd_loss(a, b) == cl.jsd_loss(b, a)
        assert cl.kl_loss(a, b) >= -1e-12 and cl.jsd_loss(a, b) >= -1e-12

    @pytest.mark.parametrize("loss", ["kl", "jsd"])
    def test_pred_gradient(self, loss, rng):
        pred, tgt = rng.normal(size=7), rng.normal(size=7)
        _, g = cl.loss_and_grad_pred(pred, tgt, loss)
        fn = cl.kl_loss if loss == "kl" else cl.jsd_loss
        fd = central_difference(lambda v: fn(v, tgt), pred, h=1e-6)
        assert relative_error(g, fd).max() < 1e-5


class TestGradient:
    @pytest.mark.parametrize("loss", ["kl", "jsd"])
    @pytest.mark.parametrize("relu", [False, True])
    def test_matches_central_differences(self, loss, relu, rng):
        p = cl.init_params(2, seed=1)
        xs = rng.normal(size=(3, 8, 8)) * 0.5
        t = rng.normal(size=(8, 8))
        _, g = cl.loss_and_grad(p, xs, t, loss, relu_output=relu, l2_kernel=1e-4)
        fd = central_difference(
            lambda v: cl.loss_and_grad(_unflatten(p, v), xs, t, loss, relu_output=relu, l2_kernel=1e-4)[0],
            p.flat())
        assert relative_error(g.flat(), fd).max() < 1e-3

    def test_stationary_point(self):
        p = _zero_params()
        g = cl.grad(p, np.zeros((3, 6, 6)), np.full((6, 6), 2.0), relu_output=False)
        assert np.linalg.norm(g.flat()) < 1e-6

    def test_loss_scaling_doubles_gradient(self, rng):
        p = cl.init_params(2, seed=3)
        xs = rng.normal(size=(2, 6, 6))
        t = rng.normal(size=(6, 6))
        v, g = cl.loss_and_grad(p, xs, t)

        def doubled(vec):
            return 2 * cl.loss_and_grad(_unflatten(p, vec), xs, t)[0]

        fd = central_difference(doubled, p.flat(), h=1e-5)
        np.testing.assert_allclose(fd, 2 * g.flat(), rtol=1e-4, atol=1e-8)

    def test_penalty_is_separated(self, rng):
        p = cl.init_params(2, seed=3)
        xs = rng.normal(size=(2, 6, 6))
        t = rng.normal(size=(6, 6))
        data, pen, _ = cl.objective(p, xs, t, l2_kernel=1e-3)
        want = 1e-3 * sum(float(np.sum(w * w)) for w in (p.wx, p.wh, p.w_out))
        assert pen == pytest.approx(want)
        assert data == pytest.approx(cl.objective(p, xs, t)[0])


class TestAdam:
    @staticmethod
    def _scalar(theta):
        z = np.zeros(0)
        return cl.ConvLstmParams(wx=z, wh=z, b=z, w_out=z, b_out=np.array([theta]))

    def test_zero_gradient(self):
        p = cl.init_params(2, seed=0)
        opt = cl.AdamState.for_params(p)
        new, opt2 = cl.adam_step(p, p.zeros_like(), opt)
        np.testing.assert_array_equal(new.flat(), p.flat())
        assert opt2.t == 1 and opt.t == 0

    def test_first_step_size(self, rng):
        p = cl.init_params(2, seed=0)
        g = p.map(lambda a: rng.normal(size=a.shape))
        new, _ = cl.adam_step(p, g, cl.AdamState.for_params(p))
        step = np.abs(new.flat() - p.flat())
        assert np.all(step >= 0.9e-3) and np.all(step <= 1e-3 + 1e-15)
        np.testing.assert_array_equal(np.sign(p.flat() - new.flat()), np.sign(g.flat()))

    def test_scalar_descent(self):
        p = self._scalar(1.0)
        opt = cl.AdamState.for_params(p)
        for _ in range(200):
            p, opt = cl.adam_step(p, self._scalar(2 * p.b_out[0]), opt)
        assert abs(p.b_out[0]) < 0.9
        assert opt.t == 200


class TestTrainOnline:
    @pytest.fixture
    def problem(self):
        grid = GridSpec((0, 0), (96, 80), 4.0)
        maps = _moving_pdds(6, grid)
        batch = cl.PddBatch(5)
        for m in maps[:5]:
            batch.append(m)
        return batch, maps[5]

    def test_descends_over_twenty_epochs(self, problem):
        batch, target = problem
        p = cl.init_params(4, seed=0)
        _, _, losses = cl.train_online(p, cl.AdamState.for_params(p), batch, target, epochs=20,
                                       l2_kernel=1e-4)
        assert len(losses) == 20
        assert losses[-1] <= losses[0]

    def test_one_epoch_is_one_step(self, problem):
        batch, target = problem
        p = cl.init_params(2, seed=0)
        opt = cl.AdamState.for_params(p)
        got, opt1, losses = cl.train_online(p, opt, batch, target, epochs=1)
        v, g = cl.loss_and_grad(p, batch, target)
        want, opt2 = cl.adam_step(p, g, opt)
        np.testing.assert_array_equal(got.flat(), want.flat())
        assert losses == [v] and opt1.t == opt2.t == 1

    def test_deterministic(self, problem):
        batch, target = problem
        outs = []
        for _ in range(2):
            p = cl.init_params(2, seed=5)
            outs.append(cl.train_online(p, cl.AdamState.for_params(p), batch, target, epochs=3)[0].flat())
        assert outs[0].tobytes() == outs[1].tobytes()

    def test_divergence(self, problem):
        batch, target = problem
        p = cl.init_params(2, seed=0)
        bad = target.values.copy()
        bad[0, 0] = np.nan
        with pytest.raises(cl.DivergenceError, match="divergence") as e:
            cl.train_online(p, cl.AdamState.for_params(p), batch, bad, epochs=3)
        assert e.value.epoch == 0

    def test_epochs_positive(self, problem):
        batch, target = problem
        p = cl.init_params(2, seed=0)
        with pytest.raises(ValueError):
            cl.train_online(p, cl.AdamState.for_params(p), batch, target, epochs=0)


class TestBatch:
    def test_rolls_oldest_first(self):
        grid = GridSpec((0, 0), (40, 40), 10)
        b = cl.PddBatch(2)
        for k in range(3):
            b.append(PddMap(grid, np.full(grid.shape, float(k)), (k, k + 1)))
        assert b.full and len(b) == 2
        np.testing.assert_array_equal(b.inputs()[:, 0, 0], [100.0, 200.0])

    def test_grid_mismatch(self):
        b = cl.PddBatch(3)
        b.append(PddMap(GridSpec((0, 0), (40, 40), 10), np.zeros((4, 4))))
        with pytest.raises(ValueError):
            b.append(PddMap(GridSpec((0, 0), (40, 40), 5), np.zeros((8, 8))))


def test_to_pdd_units_inverts_normalisation(rng):
    ref = rng.normal(size=(6, 6))
    np.testing.assert_allclose(cl.to_pdd_units(ref, ref), ref, atol=1e-12)
    np.testing.assert_allclose(cl.to_pdd_units(3 * ref + 7, ref), ref, atol=1e-12)


def test_checkpoint_round_trip(tmp_path):
    p = cl.init_params(3, seed=11)
    path = tmp_path / "w.npz"
    cl.save_params(path, p)
    q = cl.load_params(path)
    assert q.filters == 3
    assert q.flat().tobytes() == p.flat().tobytes()


def test_checkpoint_rejects_bad_shapes(tmp_path):
    p = cl.init_params(2, seed=0)
    p.b = np.zeros(3)
    path = tmp_path / "bad.npz"
    cl.save_params(path, p)
    with pytest.raises(ValueError):
        cl.load_params(path)


def test_parameter_count_independent_of_grid():
    p = cl.init_params(16)
    assert p.n_params() == 4 * 16 * 9 + 4 * 16 * 16 * 9 + 4 * 16 + 16 + 1
