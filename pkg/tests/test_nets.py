import math

import pytest
import torch
import torch.nn.functional as F

from daec2 import nets
from daec2.nets import ModelBundle, NetworkConfig, ShapeContractError


@pytest.fixture(scope="module")
def small_config():
    return NetworkConfig(base_width=8, proj_dim=16, disc_width=8, refine_width=8)


@pytest.fixture(scope="module")
def bundle(small_config):
    torch.manual_seed(0)
    b = ModelBundle(small_config)
    b.eval()
    return b


def frames(n=2, cfg=None):
    g = torch.Generator().manual_seed(1)
    return torch.rand(n, 1, 28, 28, generator=g)


def events(n=2):
    g = torch.Generator().manual_seed(2)
    return torch.rand(n, 2, 28, 28, generator=g)


class TestEncoders:
    def test_frame_content_spatial_quarter(self, bundle):
        z = nets.encode_frame(frames(), bundle)
        assert z.shape == (2, bundle.config.content_channels, 7, 7)

    def test_event_content_same_space(self, bundle):
        z_f = nets.encode_frame(frames(), bundle)
        z_e = nets.encode_event_content(events(), bundle)
        assert z_f.shape == z_e.shape

    def test_attribute_shape(self, bundle):
        a = nets.encode_event_attribute(events(), bundle)
        assert a.shape == (2, bundle.config.attribute_channels, 7, 7)

    def test_zero_input_finite(self, bundle):
        for fn, x in [(nets.encode_frame, torch.zeros(1, 1, 28, 28)),
                      (nets.encode_event_content, torch.zeros(1, 2, 28, 28)),
                      (nets.encode_event_attribute, torch.zeros(1, 2, 28, 28))]:
            assert torch.isfinite(fn(x, bundle)).all()

    def test_eval_determinism(self, bundle):
        x = frames()
        assert torch.equal(nets.encode_frame(x, bundle), nets.encode_frame(x, bundle))
        e = events()
        assert torch.equal(nets.encode_event_content(e, bundle),
                           nets.encode_event_content(e, bundle))
        assert torch.equal(nets.encode_event_attribute(e, bundle),
                           nets.encode_event_attribute(e, bundle))

    def test_shape_contract_errors(self, bundle):
        with pytest.raises(ShapeContractError):
            nets.encode_frame(torch.zeros(1, 2, 28, 28), bundle)
        with pytest.raises(ShapeContractError):
            nets.encode_event_content(torch.zeros(1, 2, 32, 32), bundle)


class TestDecoderRefine:
    def test_decode_shape(self, bundle):
        z = nets.encode_frame(frames(), bundle)
        a = nets.encode_event_attribute(events(), bundle)
        out = nets.decode(z, a, bundle)
        assert out.shape == (2, 2, 28, 28)
        assert torch.isfinite(out).all()

    def test_decode_batch_mismatch(self, bundle):
        z = nets.encode_frame(frames(3), bundle)
        a = nets.encode_event_attribute(events(2), bundle)
        with pytest.raises(ShapeContractError, match="batch"):
            nets.decode(z, a, bundle)

    def test_decode_gradients_reach_both_inputs(self, bundle):
        z = nets.encode_frame(frames(), bundle).detach().requires_grad_(True)
        a = nets.encode_event_attribute(events(), bundle).detach().requires_grad_(True)
        nets.decode(z, a, bundle).sum().backward()
        assert z.grad is not None and z.grad.abs().sum() > 0
        assert a.grad is not None and a.grad.abs().sum() > 0

    def test_refine_shape_preserving_and_finite(self, bundle):
        x = events()
        out = nets.refine(x, bundle)
        assert out.shape == x.shape
        assert torch.isfinite(out).all()

    def test_refine_disabled_is_identity(self, bundle):
        x = events()
        assert nets.refine(x, bundle, enabled=False) is x

    def test_refiner_starts_as_identity(self, small_config):
        torch.manual_seed(3)
        b = ModelBundle(small_config)
        b.eval()
        x = torch.rand(2, 2, 28, 28)
        assert torch.allclose(nets.refine(x, b), x, atol=1e-6)


class TestDiscriminators:
    def test_content_logits_per_sample(self, bundle):
        z = nets.encode_frame(frames(4), bundle)
        d = nets.discriminate_content(z, bundle)
        assert d.shape == (4,)
        assert torch.isfinite(d).all()

    def test_event_logits_per_sample(self, bundle):
        d = nets.discriminate_event(events(3), bundle)
        assert d.shape == (3,)
        assert torch.isfinite(d).all()

    def test_gradient_nonzero_wrt_input(self, bundle):
        z = nets.encode_frame(frames(), bundle).detach().requires_grad_(True)
        nets.discriminate_content(z, bundle).sum().backward()
        assert z.grad.abs().sum() > 0
        e = events().requires_grad_(True)
        nets.discriminate_event(e, bundle).sum().backward()
        assert e.grad.abs().sum() > 0


class TestClassifier:
    def test_k_logits(self, bundle):
        z = nets.encode_frame(frames(), bundle)
        logits = nets.classify(z, bundle)
        assert logits.shape == (2, 10)

    def test_softmax_sums_to_one(self, bundle):
        z = nets.encode_frame(frames(), bundle)
        probs = F.softmax(nets.classify(z, bundle), dim=1)
        assert torch.allclose(probs.sum(dim=1), torch.ones(2), atol=1e-6)

    def test_uniform_logits_cross_entropy(self, bundle):
        # zeroed head emits uniform logits, so CE is exactly log K
        with torch.no_grad():
            bundle.classifier.fc.weight.zero_()
            bundle.classifier.fc.bias.zero_()
        z = nets.encode_frame(frames(), bundle)
        logits = nets.classify(z, bundle)
        ce = F.cross_entropy(logits, torch.tensor([0, 5]))
        assert ce.item() == pytest.approx(math.log(10), abs=1e-6)


class TestProjection:
    def test_avg_pool_constant_map(self, bundle):
        c = 0.37
        feat = torch.full((1, bundle.config.content_channels, 7, 7), c)
        v = nets.project(feat, "avg_pool", bundle)
        assert v.shape == (1, bundle.config.content_channels)
        assert torch.allclose(v, torch.full_like(v, c), atol=1e-6)

    def test_avg_pool_dim_is_channel_count(self, bundle):
        feat = torch.randn(3, bundle.config.content_channels, 7, 7)
        assert nets.project(feat, "avg_pool", bundle).shape[1] == \
            bundle.config.content_channels

    def test_mlp_changes_dimension(self):
        torch.manual_seed(4)
        cfg = NetworkConfig(base_width=8, projection="mlp", proj_dim=12)
        b = ModelBundle(cfg)
        feat = torch.randn(2, cfg.content_channels, 7, 7)
        for path in ("frame", "event_content", "event_attribute"):
            assert nets.project(feat, "mlp", b, path=path).shape == (2, 12)

    def test_single_sample_input(self, bundle):
        feat = torch.randn(bundle.config.content_channels, 7, 7)
        v = nets.project(feat, "avg_pool", bundle)
        assert v.shape == (bundle.config.content_channels,)

    def test_mlp_requested_without_heads(self, bundle):
        feat = torch.randn(1, bundle.config.content_channels, 7, 7)
        with pytest.raises(ShapeContractError):
            nets.project(feat, "mlp", bundle)

    def test_bad_head_type(self, bundle):
        with pytest.raises(ValueError):
            nets.project(torch.randn(1, 16, 7, 7), "max_pool", bundle)


class TestConfigAndBundle:
    def test_config_round_trip(self, small_config):
        d = small_config.to_dict()
        again = NetworkConfig.from_dict(d)
        assert again == small_config

    def test_config_validation(self):
        with pytest.raises(ValueError):
            NetworkConfig(num_classes=1)
        with pytest.raises(ValueError):
            NetworkConfig(projection="fancy")

    def test_orth_matrices_cover_five_networks(self, bundle):
        full = bundle.orth_matrices()
        no_att = bundle.orth_matrices(include_attribute=False)
        no_ref = bundle.orth_matrices(include_refiner=False)
        assert len(full) > len(no_att) > 0
        assert len(full) > len(no_ref) > 0
        assert all(m.ndim == 2 for m in full)

    def test_null_attribute_expansion(self, bundle):
        na = bundle.expanded_null_attribute(5)
        assert na.shape == (5, bundle.config.attribute_channels, 7, 7)

    def test_all_parameters_finite(self, bundle):
        for p in bundle.parameters():
            assert torch.isfinite(p).all()

    def test_nonsquare_inputs_supported(self):
        torch.manual_seed(5)
        cfg = NetworkConfig(base_width=4, frame_hw=(36, 48), event_hw=(36, 48),
                            frame_channels=3)
        b = ModelBundle(cfg)
        b.eval()
        z = nets.encode_frame(torch.rand(1, 3, 36, 48), b)
        a = nets.encode_event_attribute(torch.rand(1, 2, 36, 48), b)
        out = nets.decode(z, a, b)
        assert out.shape == (1, 2, 36, 48)
