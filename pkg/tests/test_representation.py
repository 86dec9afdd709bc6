import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from PIL import Image

from daec2.event_io import ON, OFF, EventStream
from daec2.representation import (
    EventFrame, IngestionError, events_to_histogram, normalize_event_frame,
    prepare_frame,
)


class TestHistogram:
    def test_counting(self):
        s = EventStream([1, 1, 0], [2, 2, 0], [0, 1, 2], [ON, ON, OFF], 4, 4)
        f = events_to_histogram(s, 4, 4)
        expected = torch.zeros(2, 4, 4)
        expected[0, 2, 1] = 2.0
        expected[1, 0, 0] = 1.0
        assert torch.equal(f.data, expected)

    def test_empty_stream(self):
        f = events_to_histogram(EventStream.empty(4, 4), 4, 4)
        assert torch.equal(f.data, torch.zeros(2, 4, 4))

    def test_mass_conservation_per_polarity(self):
        rng = np.random.default_rng(3)
        n = 500
        s = EventStream(rng.integers(0, 28, n), rng.integers(0, 28, n),
                        np.arange(n), rng.integers(0, 2, n), 28, 28)
        f = events_to_histogram(s, 28, 28)
        n_on = int((s.ps == ON).sum())
        assert f.data[0].sum().item() == pytest.approx(n_on)
        assert f.data[1].sum().item() == pytest.approx(n - n_on)

    def test_rescaling_changes_shape(self):
        s = EventStream([0, 3], [0, 3], [0, 1], [ON, OFF], 4, 4)
        f = events_to_histogram(s, 8, 8)
        assert f.data.shape == (2, 8, 8)
        assert (f.data >= 0).all()

    def test_zero_sized_output(self):
        with pytest.raises(ValueError, match="positive"):
            events_to_histogram(EventStream.empty(4, 4), 0, 4)

    def test_label_carried(self):
        s = EventStream.empty(4, 4, label=7)
        assert events_to_histogram(s, 4, 4).label == 7


class TestNormalize:
    def test_scaling_by_max(self):
        f = EventFrame(torch.tensor([[[4.0, 2.0]], [[0.0, 1.0]]]))
        out = normalize_event_frame(f)
        assert torch.equal(out.data, f.data / 4.0)

    def test_all_zero_unchanged(self):
        f = EventFrame(torch.zeros(2, 3, 3))
        out = normalize_event_frame(f)
        assert torch.equal(out.data, torch.zeros(2, 3, 3))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31))
    def test_max_is_one_and_idempotent(self, seed):
        g = torch.Generator().manual_seed(seed)
        data = torch.randint(0, 50, (2, 6, 6), generator=g).float()
        out = normalize_event_frame(EventFrame(data))
        if data.max() > 0:
            assert out.data.max().item() == pytest.approx(1.0)
        again = normalize_event_frame(out)
        assert torch.equal(again.data, out.data)
        assert torch.isfinite(out.data).all()


class TestPrepareFrame:
    def test_grayscale_digit_shape_and_range(self):
        arr = np.zeros((28, 28), dtype=np.uint8)
        arr[10:18, 10:18] = 255
        f = prepare_frame(Image.fromarray(arr, mode="L"), 28, 28)
        assert f.data.shape == (1, 28, 28)
        assert f.data.max().item() == pytest.approx(1.0)
        assert f.data.min().item() == pytest.approx(0.0)

    def test_constant_white(self):
        img = Image.new("L", (16, 16), color=255)
        f = prepare_frame(img, 16, 16)
        assert torch.equal(f.data, torch.ones(1, 16, 16))

    def test_identity_resize_preserves_mean(self):
        rng = np.random.default_rng(5)
        arr = rng.random((20, 20)).astype(np.float32)
        f = prepare_frame(arr, 20, 20)
        assert f.data.mean().item() == pytest.approx(arr.mean(), rel=0.02)

    def test_channel_replication(self):
        arr = np.ones((8, 8), dtype=np.float32) * 0.5
        f = prepare_frame(arr, 8, 8, out_channels=2)
        assert f.data.shape == (2, 8, 8)
        assert torch.equal(f.data[0], f.data[1])

    def test_unreadable_file(self, tmp_path):
        p = tmp_path / "junk.png"
        p.write_bytes(b"this is not an image")
        with pytest.raises(IngestionError):
            prepare_frame(p, 8, 8)

    def test_rgb_image(self):
        img = Image.new("RGB", (10, 12), color=(255, 0, 0))
        f = prepare_frame(img, 6, 5)
        assert f.data.shape == (3, 6, 5)

    def test_resize_stays_in_unit_interval(self):
        rng = np.random.default_rng(11)
        arr = rng.random((9, 9)).astype(np.float32)
        f = prepare_frame(arr, 28, 28)
        assert f.data.min().item() >= 0.0
        assert f.data.max().item() <= 1.0
        assert torch.isfinite(f.data).all()


def test_histogram_mass_matches_decoder_output():
    from daec2.event_io import decode_nmnist_bin, encode_nmnist_bin

    rng = np.random.default_rng(21)
    n = 800
    original = EventStream(rng.integers(0, 28, n), rng.integers(0, 28, n),
                           np.sort(rng.integers(0, 1 << 20, n)),
                           rng.integers(0, 2, n), 28, 28)
    decoded = decode_nmnist_bin(encode_nmnist_bin(original), 28, 28)
    f = events_to_histogram(decoded, 28, 28)
    assert f.data.sum().item() == pytest.approx(float(len(decoded)))
    assert f.data[0].sum().item() == pytest.approx(float((decoded.ps == 1).sum()))
