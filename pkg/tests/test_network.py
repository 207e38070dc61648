import numpy as np
import pytest

from wmnet import network as net
from wmnet import tensor as T
from wmnet.checkpoint import ModelCheckpoint, from_bytes, load_checkpoint, save_checkpoint, to_bytes
from wmnet.errors import CheckpointError, ShapeError
from wmnet.gradcheck import check_gradients, relative_error
from wmnet.loss import psi

from oracles import reduced_network_cases


@pytest.fixture(scope="module")
def params():
    return net.init_params(seed=3)


def zero(params, name):
    params[name].data[...] = 0.0


def test_parameter_groups_cover_everything(params):
    grouped = sum(len(net.group_params(params, g)) for g in net.GROUPS)
    assert grouped == len(params)
    assert net.redundancy(params) == net.DEFAULT_N


class TestBlock:
    def test_residual_identity(self, rng):
        p = net.init_params(seed=1)
        zero(p, "phi.block1.merge.w")
        zero(p, "phi.block1.merge.b")
        x = T.tensor(rng.standard_normal((2, 8, 8, 3)))
        np.testing.assert_array_equal(net.block_forward(x, net.InceptionBlockParams.from_params(p, "phi.block1")).data,
                                      x.data)

    @pytest.mark.parametrize("prefix,ch", [("mu.block1", 24), ("mu.block2", 48), ("sigma.fuse", 6)])
    def test_shape_preserved(self, params, rng, prefix, ch):
        x = T.tensor(rng.standard_normal((5, 7, ch)))
        bp = net.InceptionBlockParams.from_params(params, prefix)
        assert net.block_forward(x, bp).shape == (5, 7, ch)
        assert bp.b1_w.shape[-1] == net.BLOCK_FILTERS and bp.merge_w.shape == (1, 1, 3 * net.BLOCK_FILTERS, ch)

    def test_channel_mismatch(self, params):
        with pytest.raises(ShapeError):
            net.block_forward(T.tensor(np.zeros((4, 4, 5))), net.InceptionBlockParams.from_params(params, "mu.block1"))

    def test_gradient(self, f64, rng):
        p = net.init_params(4, seed=2, dtype=np.float64)
        bp = net.InceptionBlockParams.from_params(p, "phi.block2")
        x = T.Tensor(rng.standard_normal((6, 6, 3)), requires_grad=True)
        probe = rng.standard_normal((6, 6, 3))
        group = {**net.group_params(p, "theta3"), "x": x}
        group = {k: v for k, v in group.items() if k.startswith("phi.block2") or k == "x"}
        for name, idx, a, n in check_gradients(lambda: (net.block_forward(x, bp) * probe).sum(), group, 30, rng):
            assert relative_error(a, n) <= 1e-4, (name, idx, a, n)


class TestMappings:
    def test_mu_shape(self, params, rng):
        w = T.tensor(rng.integers(0, 2, (32, 32, 1)))
        assert net.mu_forward(w, params).shape == (128, 128, 3)
        with pytest.raises(ShapeError):
            net.mu_forward(T.tensor(np.zeros((32, 32, 3))), params)

    def test_mu_distinct_watermarks(self, params):
        r = np.random.default_rng(7)
        ws = r.integers(0, 2, (200, 8, 8, 1))
        with T.no_grad():
            outs = net.mu_forward(T.tensor(ws), params).data
        for i in range(0, 200, 2):
            if not np.array_equal(ws[i], ws[i + 1]):
                assert not np.array_equal(outs[i], outs[i + 1])

    def test_gamma_range_and_constant(self, rng):
        p = net.init_params(seed=4)
        wf = T.tensor(rng.uniform(-1, 1, (128, 128, 3)))
        out = net.gamma_forward(wf, p).data
        assert out.shape == (32, 32, 1) and np.all((out > 0) & (out < 1))
        zero(p, "gamma.reduce2.w")
        zero(p, "gamma.reduce2.b")
        np.testing.assert_array_equal(net.gamma_forward(wf, p).data, 0.5)

    def test_sigma_range_and_constant(self, rng):
        p = net.init_params(seed=5)
        wf = T.tensor(rng.uniform(-1, 1, (32, 32, 3)))
        c = T.tensor(rng.uniform(0, 1, (32, 32, 3)))
        m, feats = net.sigma_forward(wf, c, p)
        assert m.shape == (32, 32, 3) and np.all((m.data > 0) & (m.data < 1))
        assert len(feats) == 4 and all(f.shape == (32, 32, 3) for f in feats)
        zero(p, "sigma.out.w")
        zero(p, "sigma.out.b")
        np.testing.assert_array_equal(net.sigma_forward(wf, c, p)[0].data, 0.5)

    def test_sigma_loss_feats_match_recomputation(self, params, rng):
        wf = T.tensor(rng.uniform(-1, 1, (16, 16, 3)))
        c = T.tensor(rng.uniform(0, 1, (16, 16, 3)))
        m, feats = net.sigma_forward(wf, c, params)
        f1 = lambda x: net.block_forward(x, net.InceptionBlockParams.from_params(params, "sigma.f1"))
        f2 = lambda x: net.block_forward(x, net.InceptionBlockParams.from_params(params, "sigma.f2"))
        again = (f1(wf), f1(m), f2(f1(wf)), f2(f1(m)))
        assert psi(feats).item() == psi(again).item()

    def test_sigma_spatial_mismatch(self, params):
        with pytest.raises(ShapeError):
            net.sigma_forward(T.tensor(np.zeros((8, 8, 3))), T.tensor(np.zeros((16, 16, 3))), params)

    def test_tau_cases(self, rng):
        p = net.init_params(3, seed=0)
        m = T.tensor(rng.uniform(0, 1, (8, 8, 3)))
        p["tau.w"].data[...] = np.eye(3)
        zero(p, "tau.b")
        np.testing.assert_allclose(net.tau_forward(m, p).data, np.tanh(m.data), rtol=1e-6)
        zero(p, "tau.w")
        np.testing.assert_array_equal(net.tau_forward(m, p).data, 0.0)

    def test_tau_range(self, params, rng):
        t = net.tau_forward(T.tensor(rng.uniform(-50, 50, (8, 8, 3))), params).data
        assert t.shape == (8, 8, net.DEFAULT_N) and np.all(np.abs(t) <= 1)

    def test_phi_zero_input_zero_biases(self):
        p = net.init_params(seed=6)
        for k in p:
            if k.startswith("phi.") and k.endswith(".b"):
                zero(p, k)
        out = net.phi_forward(T.tensor(np.zeros((16, 16, net.DEFAULT_N))), p).data
        assert out.shape == (16, 16, 3)
        np.testing.assert_array_equal(out, 0.0)

    def test_phi_redundancy_mismatch(self, params):
        with pytest.raises(ShapeError, match="N=16"):
            net.phi_forward(T.tensor(np.zeros((8, 8, 5))), params)

    def test_full_forward(self, params, rng):
        w = T.tensor(rng.integers(0, 2, (2, 32, 32, 1)))
        c = T.tensor(rng.uniform(0, 1, (2, 128, 128, 3)))
        with T.no_grad():
            a = net.full_forward(w, c, params)
            b = net.full_forward(w, c, params)
        assert a.w_hat.shape == (2, 32, 32, 1) and np.all((a.w_hat.data > 0) & (a.w_hat.data < 1))
        assert a.t.shape == (2, 128, 128, 16) and a.h is a.t
        assert a.w_hat.data.tobytes() == b.w_hat.data.tobytes()
        with pytest.raises(ShapeError):
            net.full_forward(w, T.tensor(np.zeros((2, 64, 64, 3))), params)


@pytest.mark.parametrize("group", sorted(net.GROUPS))
def test_network_gradients(f64, group):
    fn, params = reduced_network_cases(seed=11)[group]
    checks = check_gradients(fn, params, 25, np.random.default_rng(0))
    assert len(checks) == 25
    worst = max(relative_error(a, n) for _, _, a, n in checks)
    assert worst <= 1e-4


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        ck = ModelCheckpoint.fresh(n=7, lam=0.25, seed=9)
        path = tmp_path / "m.wmk"
        save_checkpoint(ck, path)
        back = load_checkpoint(path)
        assert (back.n, back.lam) == (7, 0.25)
        assert sorted(back.params) == sorted(ck.params)
        for k in ck.params:
            assert back.params[k].data.tobytes() == ck.params[k].data.tobytes()
        assert to_bytes(back) == path.read_bytes()

    @pytest.mark.parametrize("mutate", [
        lambda b: b"NOTACKPT" + b[8:],
        lambda b: b[:-3],
        lambda b: b + b"\0",
    ])
    def test_corrupt(self, mutate):
        buf = to_bytes(ModelCheckpoint.fresh(n=3))
        with pytest.raises(CheckpointError):
            from_bytes(mutate(buf))

    def test_non_finite_rejected(self, tmp_path):
        ck = ModelCheckpoint.fresh(n=3)
        ck.params["tau.w"].data[0, 0] = np.inf
        with pytest.raises(CheckpointError):
            save_checkpoint(ck, tmp_path / "bad.wmk")

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "none.wmk")


def test_kink_bound_tensor_at_smaller_step(f64):
    # Every entry of this bias moves all downstream ReLU inputs at once, so a
    # 1e-4 secant always crosses some kink; a 1e-6 step stays on one linear piece.
    fn, params = reduced_network_cases(seed=0)["theta2"]
    p = {"sigma.f1.merge.b": params["sigma.f1.merge.b"]}
    checks = check_gradients(fn, p, 3, np.random.default_rng(0), eps=1e-6, max_draws=20)
    assert len(checks) == 3
    assert max(relative_error(a, n) for _, _, a, n in checks) <= 1e-4
