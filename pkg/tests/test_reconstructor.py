import numpy as np
import pytest
import torch

from earcardio.equalizer import identity_profile
from earcardio.exceptions import CorruptHeader, EmptyDataset, InvalidConfig, NonFiniteLoss, ShapeMismatch
from earcardio.reconstructor import (
    CalibrationConfig,
    CardiacReconstructor,
    ModelConfig,
    TrainConfig,
    attention_weights,
    build_model,
    calibrate,
    forward,
    load_checkpoint,
    predict,
    reconstruct_session,
    save_checkpoint,
    train,
)
from earcardio.reconstructor.checkpoint import checkpoint_bytes, checkpoint_from_bytes
from earcardio.reconstructor.model import (
    ReconstructionModel,
    ResidualConvPair,
    SameConv1d,
    TemporalAttention,
    TwoBranchBlock,
)

SMALL = ModelConfig(channels_per_branch=4, attention_dim=8, encoder_blocks=2, global_kernel=16)


def toy_pairs(n, seed=0):
    """Ear-like input and a smooth target that depends on it deterministically."""
    rng = np.random.default_rng(seed)
    t = np.arange(400)
    X, Y = [], []
    for _ in range(n):
        c = rng.uniform(150, 250)
        a = rng.uniform(0.5, 1.5)
        X.append(a * np.exp(-0.5 * ((t - c) / 6) ** 2) * np.sin(0.8 * (t - c)))
        Y.append(a * np.exp(-0.5 * ((t - c - 10) / 10) ** 2))
    X, Y = np.array(X), np.array(Y)
    X = (X - X.mean(1, keepdims=True)) / X.std(1, keepdims=True)
    return X, Y


def fresh(cfg=SMALL, seed=0):
    return ReconstructionModel(cfg, build_model(cfg, seed).eval())


class TestConfig:
    def test_invalid(self):
        with pytest.raises(InvalidConfig):
            ModelConfig(input_len=402)
        with pytest.raises(InvalidConfig):
            ModelConfig(dropout_p=1.0)
        with pytest.raises(ValueError):
            ModelConfig(target_modality="EarSound")

    def test_dict_round_trip(self):
        assert ModelConfig.from_dict(SMALL.to_dict()) == SMALL


class TestForward:
    def test_shape_and_determinism(self):
        m = fresh(ModelConfig())
        x = np.random.default_rng(0).standard_normal(400)
        a = forward(m, x)
        assert a.shape == (400,) and a.tobytes() == forward(m, x.copy()).tobytes()

    def test_same_seed_same_init(self):
        a, b = build_model(SMALL, 7), build_model(SMALL, 7)
        for (k, v), w in zip(a.state_dict().items(), b.state_dict().values()):
            assert torch.equal(v, w), k
        c = build_model(SMALL, 8)
        assert not torch.equal(a.head.weight, c.head.weight)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            forward(fresh(), np.zeros(399))

    def test_batch_matches_single(self):
        m = fresh()
        X = np.random.default_rng(1).standard_normal((5, 400))
        np.testing.assert_allclose(predict(m, X)[2], forward(m, X[2]), atol=1e-5)

    def test_attention_rows(self):
        m = fresh(ModelConfig())
        ws = attention_weights(m, np.random.default_rng(2).standard_normal(400))
        # three encoder blocks, the latent layer and two decoder blocks
        assert len(ws) == 6
        assert [w.shape[0] for w in ws] == [200, 100, 50, 50, 100, 200]
        for w in ws:
            assert np.all(w >= 0)
            np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-6)
        assert all(a.last_weights is None for a in m.net.attention_modules())


class TestTraining:
    def test_overfit_small_set(self):
        X, Y = toy_pairs(10)
        model, hist = train(SMALL, TrainConfig(lr=3e-3, batch_size=10, max_epochs=500), (X, Y))
        assert hist[-1] < 1e-2
        assert np.mean((predict(model, X) - Y) ** 2) < 1e-2

    def test_loss_descends(self):
        X, Y = toy_pairs(120, seed=1)
        _, hist = train(SMALL, TrainConfig(max_epochs=50), (X, Y))
        assert len(hist) == 50 and hist[49] < hist[0]

    def test_deterministic(self):
        X, Y = toy_pairs(40, seed=2)
        cfg = TrainConfig(max_epochs=3, batch_size=8)
        a, ha = train(SMALL, cfg, (X, Y))
        b, hb = train(SMALL, cfg, (X, Y))
        assert ha == hb
        assert checkpoint_bytes(a) == checkpoint_bytes(b)

    def test_pairs_list_form(self):
        X, Y = toy_pairs(8, seed=3)
        cfg = TrainConfig(max_epochs=2, batch_size=4)
        a, _ = train(SMALL, cfg, (X, Y))
        b, _ = train(SMALL, cfg, list(zip(X, Y)))
        assert checkpoint_bytes(a) == checkpoint_bytes(b)

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            train(SMALL, TrainConfig(max_epochs=1), [])

    def test_non_finite_loss(self):
        X, Y = toy_pairs(4)
        with pytest.raises(NonFiniteLoss, match="epoch 1"):
            train(SMALL, TrainConfig(max_epochs=2), (X, Y * 1e30))

    def test_early_stop(self):
        X, Y = toy_pairs(8)
        _, hist = train(SMALL, TrainConfig(lr=1e-12, max_epochs=100, early_stop_patience=3), (X, Y))
        assert len(hist) < 100


@pytest.fixture(scope="module")
def base():
    X, Y = toy_pairs(30, seed=4)
    return train(SMALL, TrainConfig(max_epochs=5, batch_size=8), (X, Y))[0]


class TestCalibration:
    def test_zero_pairs_returns_base(self, base):
        assert calibrate(base, []) is base

    def test_base_unchanged(self, base):
        before = checkpoint_bytes(base)
        X, Y = toy_pairs(5, seed=5)
        cal = calibrate(base, (X, Y), CalibrationConfig(epochs=5))
        assert checkpoint_bytes(base) == before
        assert checkpoint_bytes(cal) != before
        assert cal.train_meta["calibration"]["n_pairs"] == 5

    def test_bn_stats_frozen(self, base):
        X, Y = toy_pairs(5, seed=6)
        cal = calibrate(base, (X, Y), CalibrationConfig(epochs=3))
        sa, sb = base.net.state_dict(), cal.net.state_dict()
        for k in sa:
            if k.endswith(("running_mean", "running_var", "num_batches_tracked")):
                assert torch.equal(sa[k], sb[k]), k

    def test_reduces_loss_on_new_user(self, base):
        X, Y = toy_pairs(10, seed=7)
        Y = 1.3 * Y
        cal = calibrate(base, (X, Y), CalibrationConfig(epochs=20, lr=1e-3))
        err = lambda m: np.mean((predict(m, X) - Y) ** 2)  # noqa: E731
        assert err(cal) < err(base)


def test_identity_profile_matches_no_profile():
    m = fresh()
    X = np.random.default_rng(3).standard_normal((6, 400)) * 3 + 1
    a = reconstruct_session(m, X)
    b = reconstruct_session(m, X, identity_profile(ref_energy=5.0))
    np.testing.assert_allclose(a, b, atol=1e-6)
    assert reconstruct_session(m, []).shape == (0, 400)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        X, Y = toy_pairs(6)
        m, _ = train(SMALL, TrainConfig(max_epochs=2, batch_size=3), (X, Y))
        save_checkpoint(m, tmp_path / "m.ckpt")
        back = load_checkpoint(tmp_path / "m.ckpt")
        assert back.config == m.config and back.train_meta == m.train_meta
        for k, v in m.named_weights().items():
            assert torch.equal(v, back.named_weights()[k]), k
        assert predict(back, X).tobytes() == predict(m, X).tobytes()

    def test_corrupt(self):
        data = checkpoint_bytes(fresh())
        with pytest.raises(CorruptHeader):
            checkpoint_from_bytes(b"XXXXXXXX" + data[8:])
        with pytest.raises(CorruptHeader):
            checkpoint_from_bytes(data[:-10])
        bad = bytearray(data)
        bad[8] = 99
        with pytest.raises(CorruptHeader):
            checkpoint_from_bytes(bytes(bad))


def _gradcheck(module, x):
    module = module.double()
    x = x.double().requires_grad_(True)
    names = [n for n, _ in module.named_parameters()]

    def f(inp, *ps):
        return torch.func.functional_call(module, dict(zip(names, ps)), (inp,))

    ps = [p.detach().clone().requires_grad_(True) for p in module.parameters()]
    return torch.autograd.gradcheck(f, (x, *ps), eps=1e-6, atol=1e-4, rtol=1e-4)


LAYERS = {
    "conv": lambda: SameConv1d(2, 3, 4, dilation=2),
    "batchnorm": lambda: torch.nn.BatchNorm1d(3),
    "attention": lambda: TemporalAttention(3, 4),
    "maxpool": lambda: torch.nn.MaxPool1d(2),
    "two_branch": lambda: TwoBranchBlock(3, 2, 3, 2, 5),
    "residual_pair": lambda: ResidualConvPair(3, 3, 2),
    "head": lambda: SameConv1d(3, 1, 3),
}


@pytest.mark.parametrize("name", sorted(LAYERS))
@pytest.mark.parametrize("seed", range(20))
def test_layer_gradients(name, seed):
    torch.manual_seed(seed)
    layer = LAYERS[name]().train()
    cin = 2 if name == "conv" else 3
    x = torch.randn(2, cin, 12, dtype=torch.float64)
    assert _gradcheck(layer, x)


def test_full_network_gradient():
    torch.manual_seed(0)
    cfg = ModelConfig(input_len=16, channels_per_branch=2, attention_dim=3, encoder_blocks=2,
                      global_kernel=4, dropout_p=0.0)
    net = build_model(cfg, 0).eval()
    assert _gradcheck(net, torch.randn(1, 1, 16))


class TestEstimator:
    def test_fit_predict_score(self):
        X, Y = toy_pairs(20, seed=8)
        est = CardiacReconstructor(channels_per_branch=4, attention_dim=8, encoder_blocks=2,
                                   global_kernel=16, max_epochs=30, batch_size=10, lr=3e-3)
        est.fit(X, Y)
        assert est.predict(X).shape == (20, 400)
        assert -1 <= est.score(X, Y) <= 1
        cal = est.calibrate(X[:3], Y[:3], epochs=2)
        assert cal is not est and cal.model_ is not est.model_
        assert est.get_params()["max_epochs"] == 30

    def test_unfitted(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            CardiacReconstructor().predict(np.zeros((1, 400)))
