import numpy as np
import pytest

from nbsa import backbone as Bk
from nbsa import phantom as P
from nbsa import tensor as T
from nbsa.attention import AttentionConfig
from nbsa.errors import ConfigurationError, DimensionError
from nbsa.metrics import dsc


def cfg(variant="none", H=32, W=32, **att):
    return Bk.ModelConfig(H=H, W=W, attention=AttentionConfig(variant=variant, **att))


@pytest.fixture(scope="module")
def tiny_set():
    tr, _ = P.make_dataset(3, 4, 1, P.DatasetSpec(H=32, W=32))
    return tr


class TestParameters:
    def test_conv_only_count(self):
        c, K = 8, 5
        convs = [(c, 1), (2 * c, c), (4 * c, 2 * c), (2 * c, 6 * c), (c, 3 * c)]
        expected = sum(co * ci * 9 + co for co, ci in convs) + K * c + K
        m = Bk.build(cfg())
        assert m.n_parameters == expected == Bk.conv_parameter_count(m.config)

    @pytest.mark.parametrize("relative", [False, True])
    def test_attention_count(self, relative):
        m = Bk.build(cfg("nbsa", B=8, s=4, relative=relative))
        C, d = 8, 4
        extra = 2 * (3 * C * d + d * C) + (2 * (2 * 64 - 1) * d if relative else 0)
        assert m.n_parameters == Bk.conv_parameter_count(m.config) + extra
        assert Bk.attention_parameter_count(m.config) == extra

    def test_same_seed_same_parameters(self):
        a, b = Bk.build(cfg("nbsa", B=8, s=4), seed=5), Bk.build(cfg("nbsa", B=8, s=4), seed=5)
        for k in a.parameters():
            np.testing.assert_array_equal(a.parameters()[k].data, b.parameters()[k].data)

    def test_size_not_divisible_by_four(self):
        with pytest.raises(ConfigurationError):
            Bk.build(cfg(H=30, W=32))

    def test_inexact_tiling_surfaces(self):
        with pytest.raises(ConfigurationError, match="tiling"):
            Bk.build(cfg("nbsa", H=36, W=36, B=8, s=5))


class TestForward:
    def test_zero_head_uniform(self):
        m = Bk.build(cfg())
        m.conv["head.w"].data[...] = 0
        m.conv["head.b"].data[...] = 0
        p = T.softmax_rows(T.transpose(T.reshape(m.forward(np.zeros((1, 32, 32))), (5, 32 * 32)))).data
        np.testing.assert_allclose(p, 0.2, atol=1e-15)

    @pytest.mark.parametrize("H,W", [(32, 32), (32, 48), (64, 64)])
    def test_output_shape(self, H, W):
        assert Bk.build(cfg(H=H, W=W)).forward(np.zeros((1, H, W))).shape == (5, H, W)

    def test_wrong_input_shape(self):
        m = Bk.build(cfg())
        with pytest.raises(DimensionError):
            m.forward(np.zeros((1, 16, 16)))
        with pytest.raises(DimensionError):
            m.forward(np.zeros((2, 32, 32)))

    @pytest.mark.parametrize("placement", ["penultimate", "last"])
    def test_zero_value_path_matches_plain_model(self, placement):
        att = Bk.build(cfg("nbsa", B=8, s=4, placement=placement), seed=2)
        plain = Bk.build(cfg(), seed=0)
        for k, v in plain.conv.items():
            v.data[...] = att.conv[k].data
        for w in att.attn:
            w.w_g.data[...] = 0
        x = np.random.default_rng(0).uniform(0, 1, (1, 32, 32))
        np.testing.assert_array_equal(att.forward(x).data, plain.forward(x).data)

    def test_features_feed_attention(self):
        m = Bk.build(cfg("nbsa", B=8, s=4, placement="last"))
        x = np.random.default_rng(1).uniform(0, 1, (1, 32, 32))
        assert m.features(x).shape == (5, 32, 32)


class TestMasks:
    def test_uniform_logits_pick_background(self):
        np.testing.assert_array_equal(Bk.logits_to_mask(np.zeros((5, 3, 3))), np.zeros((3, 3)))

    def test_one_hot(self):
        lab = np.random.default_rng(0).integers(0, 5, (4, 4))
        logits = np.eye(5)[lab].transpose(2, 0, 1)
        np.testing.assert_array_equal(Bk.logits_to_mask(logits), lab)

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(5, 6, 6))
        shifted = logits + rng.normal(size=(1, 6, 6)) * 10
        np.testing.assert_array_equal(Bk.logits_to_mask(logits), Bk.logits_to_mask(shifted))


class TestTraining:
    def test_lr_zero_keeps_parameters(self, tiny_set):
        m = Bk.build(cfg("nbsa", B=8, s=4), seed=1)
        before = {k: v.data.copy() for k, v in m.parameters().items()}
        Bk.train(m, tiny_set, Bk.TrainConfig(lr=0.0, epochs=2, seed=1))
        for k, v in m.parameters().items():
            np.testing.assert_array_equal(v.data, before[k])

    def test_loss_curve_bitwise_reproducible(self, tiny_set):
        def run():
            m = Bk.build(cfg("nbsa", B=8, s=4), seed=4)
            r = Bk.train(m, tiny_set, Bk.TrainConfig(epochs=2, seed=4, batch_size=2))
            return r.losses, {k: v.data.copy() for k, v in m.parameters().items()}

        (la, pa), (lb, pb) = run(), run()
        assert la == lb
        for k in pa:
            np.testing.assert_array_equal(pa[k], pb[k])

    def test_every_parameter_group_gets_gradient(self, tiny_set):
        m = Bk.build(cfg("nbsa", B=8, s=4), seed=3)
        s = tiny_set[0]
        T.backward(T.softmax_cross_entropy(m.forward(s.image), s.mask))
        for name, p in m.parameters().items():
            if name.endswith(".b"):
                continue
            assert p.grad is not None and np.linalg.norm(p.grad) > 0, name

    def test_single_sample_overfit(self):
        s = P.generate(7)
        m = Bk.build(Bk.ModelConfig(), seed=0)
        Bk.train(m, [s], Bk.TrainConfig(lr=3e-3, epochs=300, seed=0))
        pred = Bk.predict_mask(m, s.image)
        assert np.mean([dsc(pred == k, s.mask == k) for k in range(1, 5)]) >= 0.99

    def test_label_out_of_range(self, tiny_set):
        m = Bk.build(Bk.ModelConfig(K=3, H=32, W=32))
        with pytest.raises(ConfigurationError):
            Bk.train(m, tiny_set, Bk.TrainConfig(epochs=1))

    def test_bad_train_config(self):
        with pytest.raises(ConfigurationError):
            Bk.TrainConfig(lr=-1.0)
        with pytest.raises(ConfigurationError):
            Bk.TrainConfig(batch_size=0)
