import pytest
import torch

from daec2.augment import (
    AugmentationPolicy, PolicyError, augment_events, augment_frame,
    make_view_pair, shift_events,
)
from daec2.representation import EventFrame, FrameImage


def frame(seed=0, c=1, h=28, w=28):
    g = torch.Generator().manual_seed(seed)
    return FrameImage(torch.rand(c, h, w, generator=g), label=4)


def events(seed=0, h=28, w=28):
    g = torch.Generator().manual_seed(seed)
    return EventFrame(torch.rand(2, h, w, generator=g), label=2)


class TestFrameAugment:
    def test_disabled_policy_is_identity(self):
        img = frame(1)
        out = augment_frame(img, AugmentationPolicy.disabled(), 0)
        assert torch.equal(out.data, img.data)
        assert out.label == img.label

    def test_flip_only_probability_one(self):
        pol = AugmentationPolicy.disabled()
        pol.enable_flip, pol.flip_prob = True, 1.0
        img = frame(2)
        out = augment_frame(img, pol, 0)
        assert torch.equal(out.data, torch.flip(img.data, dims=(-1,)))

    def test_fixed_seed_determinism(self):
        img = frame(3)
        pol = AugmentationPolicy()
        a = augment_frame(img, pol, 123)
        b = augment_frame(img, pol, 123)
        assert torch.equal(a.data, b.data)

    def test_output_shape_and_range(self):
        img = frame(4)
        out = augment_frame(img, AugmentationPolicy(), 9)
        assert out.data.shape == img.data.shape
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_crop_larger_than_image(self):
        pol = AugmentationPolicy.disabled()
        pol.enable_crop, pol.crop_size = True, 64
        with pytest.raises(PolicyError, match="crop"):
            augment_frame(frame(5), pol, 0)

    def test_invalid_flip_prob(self):
        pol = AugmentationPolicy(flip_prob=1.5)
        with pytest.raises(PolicyError):
            augment_frame(frame(0), pol, 0)


class TestEventAugment:
    def test_disabled_policy_is_identity(self):
        ev = events(1)
        out = augment_events(ev, AugmentationPolicy.disabled(), 0)
        assert torch.equal(out.data, ev.data)

    def test_shift_one_column(self):
        data = torch.zeros(2, 4, 4)
        data[0, 1, 1] = 3.0
        data[1, 2, 3] = 1.0
        out = shift_events(data, 0, 1)
        assert out[0, 1, 2].item() == 3.0
        assert out[1].sum().item() == 0.0  # column 3 content dropped off the edge
        assert out[:, :, 0].sum().item() == 0.0

    def test_shift_negative(self):
        data = torch.zeros(1, 3, 3)
        data[0, 0, 0] = 1.0
        out = shift_events(data, 1, -1)
        assert out.sum().item() == 0.0  # pushed off the left edge

    def test_fixed_seed_determinism(self):
        ev = events(2)
        pol = AugmentationPolicy()
        a = augment_events(ev, pol, 77)
        b = augment_events(ev, pol, 77)
        assert torch.equal(a.data, b.data)

    def test_nonnegative_output(self):
        for seed in range(20):
            out = augment_events(events(seed), AugmentationPolicy(), seed)
            assert (out.data >= 0).all()
            assert torch.isfinite(out.data).all()


class TestViewPair:
    def test_disabled_policy_views_equal_input(self):
        img = frame(6)
        pair = make_view_pair(img, AugmentationPolicy.disabled(), 0)
        assert torch.equal(pair.view_a.data, img.data)
        assert torch.equal(pair.view_b.data, img.data)

    def test_views_differ_under_nontrivial_policy(self):
        pol = AugmentationPolicy()
        differing = 0
        for seed in range(100):
            pair = make_view_pair(frame(seed), pol, seed)
            if not torch.equal(pair.view_a.data, pair.view_b.data):
                differing += 1
        assert differing >= 99

    def test_shapes_match_input(self):
        pair = make_view_pair(events(3), AugmentationPolicy(), 5)
        assert pair.view_a.data.shape == (2, 28, 28)
        assert pair.view_b.data.shape == (2, 28, 28)

    def test_original_as_view_a(self):
        pol = AugmentationPolicy(use_original_as_view_a=True)
        img = frame(8)
        pair = make_view_pair(img, pol, 11)
        assert torch.equal(pair.view_a.data, img.data)
        assert not torch.equal(pair.view_b.data, img.data)

    def test_determinism_of_pair(self):
        pol = AugmentationPolicy()
        p1 = make_view_pair(frame(9), pol, 42)
        p2 = make_view_pair(frame(9), pol, 42)
        assert torch.equal(p1.view_a.data, p2.view_a.data)
        assert torch.equal(p1.view_b.data, p2.view_b.data)

    def test_label_preserved(self):
        pair = make_view_pair(frame(10), AugmentationPolicy(), 3)
        assert pair.view_a.label == 4 and pair.view_b.label == 4

    def test_rejects_unknown_type(self):
        with pytest.raises(TypeError):
            make_view_pair(torch.zeros(1, 28, 28), AugmentationPolicy(), 0)
