import numpy as np
import pytest
import torch

from styleadapt.perceptual import (
    CONTENT_LAYERS,
    STYLE_LAYERS,
    FeatureExtractor,
    PerceptualConfig,
    avgpool_layer_loss,
    content_layer_loss,
    gram_matrix,
    perceptual_loss_avp,
    perceptual_loss_gram,
    style_layer_loss,
)

from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (
    avgpool_loss_oracle,
    content_loss_oracle,
    gram_oracle,
    style_loss_oracle,
)


def _rand(shape, seed):
    return torch.from_numpy(np.random.default_rng(seed).standard_normal(shape)).double()


class TestGramMatrix:
    def test_zero_map(self):
        g = gram_matrix(torch.zeros(1, 2, 3, 3))
        assert g.shape == (1, 2, 2)
        assert torch.all(g == 0)

    def test_constant_map_value(self):
        # constant a over C channels: every Gram entry is a^2 / C
        a, c = 2.0, 4
        g = gram_matrix(torch.full((1, c, 2, 2), a))
        assert torch.allclose(g, torch.full((1, c, c), a * a / c))

    def test_matches_triple_loop_oracle(self):
        f = _rand((2, 3, 4, 5), seed=0)
        got = gram_matrix(f).numpy()
        want = gram_oracle(f.numpy())
        assert np.abs(got - want).max() < 1e-6

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 1000))
    def test_symmetric_and_psd(self, seed):
        f = _rand((2, 4, 3, 5), seed)
        g = gram_matrix(f)
        assert float((g - g.transpose(1, 2)).abs().max()) < 1e-6
        eigs = torch.linalg.eigvalsh(g)
        assert float(eigs.min()) > -1e-5

    def test_scale_law(self):
        f = _rand((1, 3, 4, 4), seed=1)
        s = 3.0
        assert torch.allclose(gram_matrix(s * f), s**2 * gram_matrix(f))


class TestStyleLayerLoss:
    def test_identical_is_zero(self):
        f = _rand((2, 3, 4, 4), seed=2)
        assert float(style_layer_loss(f, f.clone())) == 0.0

    @pytest.mark.parametrize("c", [1, 2, 5, 8])
    def test_zero_vs_constant_one(self, c):
        # Gram of the constant-1 map has every entry 1/C; squared Frobenius
        # over C^2 entries gives exactly 1 for any C.
        f_aug = torch.zeros(1, c, 3, 3)
        f_tgt = torch.ones(1, c, 3, 3)
        assert abs(float(style_layer_loss(f_aug, f_tgt)) - 1.0) < 1e-6

    def test_matches_composed_oracle(self):
        f_a = _rand((3, 4, 5, 6), seed=3)
        f_t = _rand((1, 4, 7, 2), seed=4)  # different spatial dims, batch of 1
        got = float(style_layer_loss(f_a, f_t))
        want = style_loss_oracle(f_a.numpy(), f_t.numpy())
        assert abs(got - want) < 1e-6

    def test_channel_mismatch(self):
        with pytest.raises(ValueError, match="channel"):
            style_layer_loss(torch.rand(1, 3, 4, 4), torch.rand(1, 4, 4, 4))

    def test_scale_law_quartic(self):
        f = _rand((1, 3, 4, 4), seed=5)
        zero = torch.zeros_like(f)
        base = float(style_layer_loss(f, zero))
        scaled = float(style_layer_loss(2.0 * f, zero))
        assert abs(scaled - 16.0 * base) < 1e-6 * max(1.0, abs(scaled))


class TestContentLayerLoss:
    def test_identical_is_zero(self):
        f = _rand((2, 3, 4, 4), seed=6)
        assert float(content_layer_loss(f, f.clone())) == 0.0

    def test_plus_one_gives_one(self):
        f = _rand((2, 3, 4, 4), seed=7)
        assert abs(float(content_layer_loss(f + 1.0, f)) - 1.0) < 1e-6

    def test_matches_loop_oracle(self):
        f_a = _rand((2, 3, 5, 4), seed=8)
        f_s = _rand((2, 3, 5, 4), seed=9)
        assert abs(float(content_layer_loss(f_a, f_s)) - content_loss_oracle(f_a.numpy(), f_s.numpy())) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shapes"):
            content_layer_loss(torch.rand(1, 3, 4, 4), torch.rand(1, 3, 5, 5))


class TestAvgpoolLayerLoss:
    def test_identical_is_zero(self):
        f = _rand((2, 3, 4, 4), seed=10)
        assert float(avgpool_layer_loss(f, f.clone(), 2)) == 0.0

    def test_global_pool_constant_case(self):
        # kernel = H = W pools to 1x1; constants 1 vs 3 give (1/C)*C*(1-3)^2 = 4
        c, hw = 5, 4
        f_a = torch.ones(1, c, hw, hw)
        f_b = torch.full((1, c, hw, hw), 3.0)
        assert abs(float(avgpool_layer_loss(f_a, f_b, hw)) - 4.0) < 1e-6

    def test_matches_loop_oracle(self):
        f_a = _rand((2, 3, 5, 7), seed=11)  # odd dims exercise truncation
        f_b = _rand((2, 3, 5, 7), seed=12)
        got = float(avgpool_layer_loss(f_a, f_b, 2))
        want = avgpool_loss_oracle(f_a.numpy(), f_b.numpy(), 2)
        assert abs(got - want) < 1e-6

    def test_kernel_too_large(self):
        with pytest.raises(ValueError, match="kernel"):
            avgpool_layer_loss(torch.rand(1, 2, 3, 3), torch.rand(1, 2, 3, 3), 4)


class TestFeatureExtractor:
    def test_request_order_and_batch(self, tiny_fe):
        x = torch.rand(3, 3, 32, 32)
        feats = tiny_fe.extract(x, ["relu1_2", "relu4_3"])
        assert len(feats) == 2
        assert feats[0].shape[0] == 3 and feats[1].shape[0] == 3
        reversed_ = tiny_fe.extract(x, ["relu4_3", "relu1_2"])
        assert torch.equal(feats[0], reversed_[1])

    def test_deterministic(self, tiny_fe):
        x = torch.rand(2, 3, 32, 32)
        a = tiny_fe.extract(x, list(STYLE_LAYERS))
        b = tiny_fe.extract(x, list(STYLE_LAYERS))
        assert all(torch.equal(u, v) for u, v in zip(a, b))

    def test_frozen(self, tiny_fe):
        assert all(not p.requires_grad for p in tiny_fe.parameters())

    def test_unknown_layer(self, tiny_fe):
        with pytest.raises(ValueError, match="unknown tap layer"):
            tiny_fe.extract(torch.rand(1, 3, 16, 16), ["relu9_9"])

    def test_vgg16_block1_geometry(self):
        fe = FeatureExtractor(backbone="vgg16", seed=0)
        x = torch.rand(1, 3, 224, 224)
        (f,) = fe.extract(x, ["relu1_2"])
        assert f.shape == (1, 64, 224, 224)

    def test_tiny_tap_geometry(self, tiny_fe):
        x = torch.rand(1, 3, 32, 32)
        f1, f2, f4 = tiny_fe.extract(x, ["relu1_2", "relu2_2", "relu4_3"])
        assert f1.shape[-1] == 32 and f2.shape[-1] == 16 and f4.shape[-1] == 4


def _fe_double(seed=0):
    fe = FeatureExtractor(backbone="tiny", seed=seed)
    return fe.double()


class TestPerceptualComposites:
    def test_zero_when_all_equal(self, tiny_fe):
        x = torch.rand(2, 3, 16, 16)
        cfg = PerceptualConfig()
        assert float(perceptual_loss_gram(tiny_fe, cfg, x, x.clone(), x.clone())) == 0.0
        cfg_avp = PerceptualConfig(mode="AVP", pool_kernel=2)
        assert float(perceptual_loss_avp(tiny_fe, cfg_avp, x, x.clone(), x.clone())) == 0.0

    def test_default_weights(self):
        cfg = PerceptualConfig()
        assert cfg.layer_weights == {"relu1_2": 0.25, "relu2_2": 1.0, "relu4_3": 1.0}

    def test_mode_mismatch_raises(self, tiny_fe):
        x = torch.rand(1, 3, 16, 16)
        with pytest.raises(ValueError, match="GRAM"):
            perceptual_loss_gram(tiny_fe, PerceptualConfig(mode="AVP"), x, x, x)
        with pytest.raises(ValueError, match="AVP"):
            perceptual_loss_avp(tiny_fe, PerceptualConfig(mode="GRAM"), x, x, x)

    def test_gram_decompose_recompose(self):
        fe = _fe_double()
        cfg = PerceptualConfig(layer_weights={"relu1_2": 0.25, "relu2_2": 1.0, "relu4_3": 1.0})
        rng = np.random.default_rng(13)
        x_aug = torch.from_numpy(rng.random((2, 3, 16, 16))).double()
        x_s = torch.from_numpy(rng.random((2, 3, 16, 16))).double()
        x_t = torch.from_numpy(rng.random((1, 3, 16, 16))).double()
        got = float(perceptual_loss_gram(fe, cfg, x_aug, x_s, x_t))

        feats_aug = fe.extract(x_aug, list(STYLE_LAYERS) + list(CONTENT_LAYERS))
        feats_tgt = fe.extract(x_t, list(STYLE_LAYERS))
        feats_src = fe.extract(x_s, list(CONTENT_LAYERS))
        aug = dict(zip(list(STYLE_LAYERS) + list(CONTENT_LAYERS), feats_aug))
        want = 0.0
        for name, f_t in zip(STYLE_LAYERS, feats_tgt):
            want += cfg.layer_weights[name] * style_loss_oracle(
                aug[name].detach().numpy(), f_t.detach().numpy()
            )
        for name, f_s in zip(CONTENT_LAYERS, feats_src):
            want += cfg.layer_weights[name] * content_loss_oracle(
                aug[name].detach().numpy(), f_s.detach().numpy()
            )
        assert abs(got - want) < 1e-6

    def test_avp_decompose_recompose(self):
        fe = _fe_double()
        cfg = PerceptualConfig(mode="AVP", pool_kernel=2)
        rng = np.random.default_rng(14)
        x_aug = torch.from_numpy(rng.random((2, 3, 16, 16))).double()
        x_s = torch.from_numpy(rng.random((2, 3, 16, 16))).double()
        x_t = torch.from_numpy(rng.random((1, 3, 16, 16))).double()
        got = float(perceptual_loss_avp(fe, cfg, x_aug, x_s, x_t))

        feats_aug = fe.extract(x_aug, list(STYLE_LAYERS) + list(CONTENT_LAYERS))
        feats_tgt = fe.extract(x_t, list(STYLE_LAYERS))
        feats_src = fe.extract(x_s, list(CONTENT_LAYERS))
        aug = dict(zip(list(STYLE_LAYERS) + list(CONTENT_LAYERS), feats_aug))
        want = 0.0
        for name, f_t in zip(STYLE_LAYERS, feats_tgt):
            f_t_full = np.repeat(f_t.detach().numpy(), 2, axis=0)
            want += cfg.layer_weights[name] * avgpool_loss_oracle(
                aug[name].detach().numpy(), f_t_full, cfg.pool_kernel
            )
        for name, f_s in zip(CONTENT_LAYERS, feats_src):
            want += cfg.layer_weights[name] * avgpool_loss_oracle(
                aug[name].detach().numpy(), f_s.detach().numpy(), cfg.pool_kernel
            )
        assert abs(got - want) < 1e-6

    def test_no_gradient_into_extractor(self, tiny_fe):
        x_aug = torch.rand(1, 3, 16, 16, requires_grad=True)
        loss = perceptual_loss_gram(tiny_fe, PerceptualConfig(), x_aug, torch.rand(1, 3, 16, 16), torch.rand(1, 3, 16, 16))
        loss.backward()
        assert x_aug.grad is not None
        assert all(p.grad is None for p in tiny_fe.parameters())

    def test_losses_nonnegative(self, tiny_fe):
        cfg = PerceptualConfig()
        for seed in range(5):
            rng = np.random.default_rng(seed)
            x_aug = torch.from_numpy(rng.random((1, 3, 16, 16))).float()
            x_s = torch.from_numpy(rng.random((1, 3, 16, 16))).float()
            x_t = torch.from_numpy(rng.random((1, 3, 16, 16))).float()
            assert float(perceptual_loss_gram(tiny_fe, cfg, x_aug, x_s, x_t)) >= 0.0


class TestBatchReduction:
    def test_batch_loss_is_mean_of_per_sample(self):
        f_a = _rand((4, 3, 5, 5), seed=20)
        f_b = _rand((4, 3, 5, 5), seed=21)
        batch = float(content_layer_loss(f_a, f_b))
        singles = [float(content_layer_loss(f_a[i : i + 1], f_b[i : i + 1])) for i in range(4)]
        assert abs(batch - np.mean(singles)) < 1e-9

        batch_s = float(style_layer_loss(f_a, f_b))
        singles_s = [float(style_layer_loss(f_a[i : i + 1], f_b[i : i + 1])) for i in range(4)]
        assert abs(batch_s - np.mean(singles_s)) < 1e-9
