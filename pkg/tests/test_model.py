import os
import struct

import numpy as np
import pytest

from sttraj import autodiff as ad
from sttraj.autodiff import Tensor
from sttraj.data import GraphTensor, build_scene, prepare_samples
from sttraj.errors import ConfigError, IncompatibleCheckpointError, IntegrityError
from sttraj.losses import LossConfig, best_of_k_metrics, loss_terms, make_rng
from sttraj.model import (SGD, ModelConfig, STGraphModel, load_checkpoint, model_forward, read_checkpoint,
                          save_checkpoint, sgd_step)

SMALL = ModelConfig(d_model=8, heads=2)


def obs_tensor(N=2, seed=0):
    return GraphTensor(Tensor(np.random.default_rng(seed).normal(size=(2, 8, N)) * 0.4))


def oracle_model(sigma_bias=-5.0):
    """Variant S model wired by hand to extrapolate the last observed displacement."""
    m = STGraphModel(ModelConfig(d_model=8, heads=2, variant="S"), seed=0)
    for t in m.parameters():
        t.data = np.zeros_like(t.data)
    m.lift_w.data[0, 0, 0] = m.lift_w.data[1, 1, 0] = 1.0
    m.lift_b.data[2:4] = sigma_bias
    m.spatial_gcn.weight.data = np.eye(5)
    m.spatial_gcn.slope.data = np.array(1.0)
    m.mid_w.data[:5, :, 0] = np.eye(5)
    m.reduce_w.data[:, :5, 0] = np.eye(5)
    m.tcnn.w0.data[:, 7, 1] = 1.0  # every future step copies the last observed step
    return m


def walking_scene(n_peds=4, seed=0):
    rng = np.random.default_rng(seed)
    recs = []
    for p in range(n_peds):
        v = rng.uniform(-0.5, 0.5, size=2)
        p0 = rng.uniform(-3, 3, size=2)
        for k in range(24):
            f = 30 * p + k  # one pedestrian at a time
            recs.append((10 * f, p, *(p0 + k * v)))
    return build_scene("walk", recs)


class TestConfig:
    def test_divisibility(self):
        with pytest.raises(ConfigError):
            ModelConfig(d_model=10, heads=4)

    def test_odd_kernel(self):
        with pytest.raises(ConfigError):
            ModelConfig(kernel_width=2)

    def test_variant(self):
        with pytest.raises(ConfigError):
            ModelConfig(variant="X")

    def test_dict_round_trip(self):
        c = ModelConfig(d_model=8, heads=2, variant="T", loss=LossConfig(alpha=0.1))
        assert ModelConfig.from_dict(c.to_dict()) == c


class TestForward:
    def test_single_stationary(self):
        f = model_forward(GraphTensor(Tensor(np.zeros((2, 8, 1)))), STGraphModel(SMALL))
        assert f.mu.shape == (12, 1, 2) and f.rho.shape == (12, 1)
        for arr in f.numpy():
            assert np.all(np.isfinite(arr))
        assert np.all(f.sigma.data > 0) and np.all(np.abs(f.rho.data) < 1)

    def test_permutation_equivariance(self):
        model = STGraphModel(SMALL, seed=3)
        x = obs_tensor(3, seed=4)
        perm = [2, 0, 1]
        base = model(x)
        moved = model(GraphTensor(Tensor(x.values.data[:, :, perm])))
        for a, b in zip(base.numpy(), moved.numpy()):
            np.testing.assert_allclose(b, a[:, perm], atol=1e-9, rtol=0)

    def test_variants_distinguishable(self):
        x = obs_tensor(2, seed=5)
        s = STGraphModel(ModelConfig(d_model=8, heads=2, variant="S"), seed=1)(x)
        st = STGraphModel(ModelConfig(d_model=8, heads=2, variant="ST"), seed=1)(x)
        assert not np.allclose(s.mu.data, st.mu.data)

    def test_bad_input(self):
        with pytest.raises(ValueError):
            STGraphModel(SMALL)(GraphTensor(Tensor(np.zeros((2, 7, 1)))))

    def test_parameter_names_unique_and_stable(self):
        a, b = STGraphModel(SMALL, seed=0), STGraphModel(SMALL, seed=0)
        names = list(a.named_tensors())
        assert len(names) == len(set(names))
        assert names == list(b.named_tensors())
        assert all(np.array_equal(a.named_tensors()[k].data, b.named_tensors()[k].data) for k in names)
        assert "spatial_attn.w_v" not in a.named_parameters()

    def test_every_trainable_parameter_gets_gradient(self):
        model = STGraphModel(SMALL, seed=2)
        x = obs_tensor(3, seed=6)
        gt = np.random.default_rng(7).normal(size=(12, 3, 2)) * 0.4
        ad.backward(loss_terms(model(x), gt, LossConfig(), make_rng(0)).total)
        dead = [k for k, g in model.gradients().items() if not np.any(g)]
        assert dead == []


def test_end_to_end_gradients():
    """Central differences through the whole model on a 2-pedestrian window."""
    model = STGraphModel(ModelConfig(d_model=4, heads=2), seed=11)
    x = obs_tensor(2, seed=12)
    gt = np.random.default_rng(13).normal(size=(12, 2, 2)) * 0.4
    cfg = LossConfig()

    def loss(_):
        return loss_terms(model(x), gt, cfg, make_rng(5)).total

    worst = max(ad.grad_check(loss, p) for p in model.parameters())
    assert worst < 1e-4


class TestSgd:
    def test_vanilla_step(self):
        p = [np.zeros(1)]
        sgd_step(p, [np.ones(1)], 0.01, momentum=0.0)
        assert p[0][0] == -0.01

    def test_zero_gradient(self):
        p = [np.array([1.5, -2.0])]
        sgd_step(p, [np.zeros(2)], 0.1)
        assert p[0].tolist() == [1.5, -2.0]

    def test_momentum_recursion(self):
        p = [np.zeros(1)]
        v = sgd_step(p, [np.ones(1)], 1.0, momentum=0.9)
        sgd_step(p, [np.ones(1)], 1.0, momentum=0.9, velocity=v)
        assert p[0][0] == pytest.approx(-2.9, abs=1e-15)

    def test_bad_lr(self):
        with pytest.raises(ConfigError):
            sgd_step([np.zeros(1)], [np.zeros(1)], 0.0)

    def test_optimizer_scale_and_clip(self):
        t = Tensor(np.zeros(2), requires_grad=True)
        t.grad = np.array([3.0, 4.0])
        opt = SGD({"t": t}, momentum=0.0)
        assert opt.step(1.0, scale=2.0, max_norm=5.0) == 10.0
        np.testing.assert_allclose(t.data, [-3.0, -4.0])
        opt.zero_grads()
        assert t.grad is None

    def test_scalar_parameter_stays_scalar(self):
        s = Tensor(0.25, requires_grad=True)
        s.grad = np.array(1.0)
        SGD({"s": s}).step(0.1)
        assert s.data.shape == () and s.data == pytest.approx(0.15)


class TestCheckpoint:
    def _saved(self, tmp_path):
        model = STGraphModel(SMALL, seed=4)
        opt = SGD(model.named_parameters())
        for v in opt.velocity.values():
            v += 0.5
        path = str(tmp_path / "m.sttc")
        save_checkpoint(model, path, opt, epoch=3, rng_state={"k": 1}, meta={"best_score": 1.25})
        return model, path

    def test_round_trip_bit_identical(self, tmp_path):
        model, path = self._saved(tmp_path)
        loaded, ckpt = load_checkpoint(path)
        assert ckpt.epoch == 3 and ckpt.meta["best_score"] == 1.25 and ckpt.rng_state == {"k": 1}
        assert ckpt.config == model.config
        for k, t in model.named_tensors().items():
            got = loaded.named_tensors()[k].data
            assert got.shape == t.data.shape and got.tobytes() == t.data.tobytes()
        assert all(np.all(v == 0.5) for v in ckpt.velocity.values())
        assert set(ckpt.velocity) == set(model.named_parameters())

    def test_bad_magic(self, tmp_path):
        _, path = self._saved(tmp_path)
        blob = bytearray(open(path, "rb").read())
        blob[:4] = b"NOPE"
        open(path, "wb").write(bytes(blob))
        with pytest.raises(IntegrityError):
            read_checkpoint(path)

    @pytest.mark.parametrize("keep", [2, 10, 200, -1])
    def test_truncated(self, tmp_path, keep):
        _, path = self._saved(tmp_path)
        blob = open(path, "rb").read()
        open(path, "wb").write(blob[:keep])
        with pytest.raises(IntegrityError):
            read_checkpoint(path)

    def test_flipped_byte(self, tmp_path):
        _, path = self._saved(tmp_path)
        blob = bytearray(open(path, "rb").read())
        blob[len(blob) // 2] ^= 0xFF
        open(path, "wb").write(bytes(blob))
        with pytest.raises(IntegrityError):
            read_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        _, path = self._saved(tmp_path)
        blob = bytearray(open(path, "rb").read())
        blob[4:8] = struct.pack("<I", 99)
        open(path, "wb").write(bytes(blob))
        with pytest.raises(IncompatibleCheckpointError):
            read_checkpoint(path)

    def test_parameter_mismatch(self):
        model = STGraphModel(SMALL)
        with pytest.raises(IncompatibleCheckpointError):
            model.load_state({"lift.weight": np.zeros((5, 2, 1))})

    def test_no_temp_file_left(self, tmp_path):
        _, path = self._saved(tmp_path)
        assert os.listdir(tmp_path) == ["m.sttc"]


def test_oracle_checkpoint_recovers_constant_velocity(tmp_path):
    path = str(tmp_path / "oracle.sttc")
    save_checkpoint(oracle_model(), path)
    model, _ = load_checkpoint(path)
    samples = prepare_samples(walking_scene())
    assert samples and all(s.sample.num_peds == 1 for s in samples)
    ades = []
    for s in samples:
        gt = np.transpose(s.sample.fut, (1, 0, 2))
        ades.append(best_of_k_metrics(model(s.obs), gt, 20, s.index, s.sample.obs[:, -1])[0])
    assert np.mean(ades) < 0.05
