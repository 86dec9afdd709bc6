import numpy as np
import torch

from daec2.event_io import decode_nmnist_bin, encode_nmnist_bin
from daec2.synth import digit_bank, simulate_saccade_events, upscale_digit


def test_digit_bank_balanced_ten_classes():
    images, targets = digit_bank()
    assert images.shape[1:] == (8, 8)
    assert set(np.unique(targets)) == set(range(10))
    assert images.min() >= 0.0 and images.max() <= 1.0


def test_simulator_fires_events_within_bounds():
    images, targets = digit_bank()
    img = upscale_digit(images[0], (28, 28))
    rng = torch.Generator().manual_seed(0)
    s = simulate_saccade_events(img, rng=rng, label=int(targets[0]))
    assert len(s) > 50
    assert s.width == 28 and s.height == 28
    assert (s.xs >= 0).all() and (s.xs < 28).all()
    assert (s.ys >= 0).all() and (s.ys < 28).all()
    assert s.label == int(targets[0])


def test_simulator_timestamps_nondecreasing_and_encodable():
    images, _ = digit_bank()
    img = upscale_digit(images[3], (28, 28))
    s = simulate_saccade_events(img, rng=torch.Generator().manual_seed(1))
    assert (np.diff(s.ts) >= 0).all()
    assert s.ts.max() < (1 << 23)
    round_tripped = decode_nmnist_bin(encode_nmnist_bin(s), 28, 28)
    assert round_tripped == s


def test_simulator_emits_both_polarities():
    images, _ = digit_bank()
    img = upscale_digit(images[7], (28, 28))
    s = simulate_saccade_events(img, rng=torch.Generator().manual_seed(2))
    assert (s.ps == 1).any() and (s.ps == 0).any()


def test_simulator_deterministic_given_seed():
    images, _ = digit_bank()
    img = upscale_digit(images[5], (28, 28))
    a = simulate_saccade_events(img, rng=torch.Generator().manual_seed(9))
    b = simulate_saccade_events(img, rng=torch.Generator().manual_seed(9))
    assert a == b


def test_blank_image_yields_almost_no_events():
    s = simulate_saccade_events(torch.zeros(28, 28), noise_rate=0.0,
                                rng=torch.Generator().manual_seed(0))
    assert len(s) == 0


def test_written_tree_is_unpaired_and_complete(synth_small):
    m = synth_small["manifests"]
    assert len(m["frames_train"]) == 60
    assert len(m["events_train"]) == 60
    assert m["frames_train"].class_count == 10
    # same split sizes but different modalities and disjoint source digits
    frame_files = {p.name for p, _ in m["frames_train"].records}
    assert all(p.suffix == ".png" for p, _ in m["frames_train"].records)
    assert all(p.suffix == ".bin" for p, _ in m["events_train"].records)
    assert len(frame_files) > 0
