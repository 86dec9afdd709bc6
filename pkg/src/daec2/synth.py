"""Desk-scale synthetic frame/event digit dataset.

Builds an unpaired two-domain classification problem from the bundled
handwritten-digit images: the frame domain is the grayscale digits as PNG
files; the event domain is produced by sweeping each digit along a triangular
saccade path in front of a simulated change-threshold sensor and packing the
fired events into the 5-byte binary record format. Frames and events are
drawn from disjoint digit pools so the domains are genuinely unpaired.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .event_io import EventStream, encode_nmnist_bin

SACCADE_VERTICES = ((0.0, 0.0), (1.0, 1.0), (-1.0, 1.0), (0.0, 0.0))
STREAM_DURATION_US = 300_000


def digit_bank() -> Tuple[np.ndarray, np.ndarray]:
    """The bundled 8x8 handwritten digits as float images in [0, 1]."""
    from sklearn.datasets import load_digits

    digits = load_digits()
    images = digits.images.astype(np.float32) / 16.0
    return images, digits.target.astype(np.int64)


def upscale_digit(img8: np.ndarray, hw: Tuple[int, int]) -> torch.Tensor:
    """Bilinear upscale of one small digit to the working resolution."""
    t = torch.from_numpy(img8).unsqueeze(0).unsqueeze(0)
    out = F.interpolate(t, size=hw, mode="bilinear", align_corners=False)
    return out.squeeze(0).squeeze(0).clamp(0.0, 1.0)


def jitter_digit(img: torch.Tensor, rng: torch.Generator) -> torch.Tensor:
    """Small random affine perturbation used to grow the sample pool."""
    theta = float(torch.empty(1).uniform_(-0.14, 0.14, generator=rng).item())
    scale = float(torch.empty(1).uniform_(0.9, 1.1, generator=rng).item())
    tx = float(torch.empty(1).uniform_(-0.1, 0.1, generator=rng).item())
    ty = float(torch.empty(1).uniform_(-0.1, 0.1, generator=rng).item())
    cos, sin = np.cos(theta) / scale, np.sin(theta) / scale
    mat = torch.tensor([[cos, -sin, tx], [sin, cos, ty]], dtype=torch.float32)
    grid = F.affine_grid(mat.unsqueeze(0), (1, 1, *img.shape), align_corners=False)
    out = F.grid_sample(img.unsqueeze(0).unsqueeze(0), grid, mode="bilinear",
                        padding_mode="zeros", align_corners=False)
    return out.squeeze(0).squeeze(0).clamp(0.0, 1.0)


def _translate(img: torch.Tensor, dy: float, dx: float) -> torch.Tensor:
    h, w = img.shape
    mat = torch.tensor([[1.0, 0.0, -2.0 * dx / w], [0.0, 1.0, -2.0 * dy / h]])
    grid = F.affine_grid(mat.unsqueeze(0), (1, 1, h, w), align_corners=False)
    out = F.grid_sample(img.unsqueeze(0).unsqueeze(0), grid, mode="bilinear",
                        padding_mode="zeros", align_corners=False)
    return out.squeeze(0).squeeze(0)


def simulate_saccade_events(image: torch.Tensor, *, threshold: float = 0.12,
                            steps: int = 48, amplitude: float = 2.0,
                            noise_rate: float = 0.0005,
                            rng: Optional[torch.Generator] = None,
                            label: Optional[int] = None) -> EventStream:
    """Emit change-threshold events while the image sweeps a triangular path.

    Every pixel keeps a reference level; whenever the observed intensity
    departs from it by at least ``threshold`` an ON/OFF event fires and the
    reference resets to the observed level. A small uniform noise-event rate
    keeps the sensor model from being perfectly clean.
    """
    h, w = image.shape
    rng = rng if rng is not None else torch.Generator().manual_seed(0)
    verts = np.array(SACCADE_VERTICES) * amplitude
    segments = len(verts) - 1
    xs, ys, ts, ps = [], [], [], []
    ref = None
    for step in range(steps):
        pos = step / max(1, steps - 1) * segments
        seg = min(int(pos), segments - 1)
        frac = pos - seg
        dx, dy = verts[seg] + frac * (verts[seg + 1] - verts[seg])
        frame = _translate(image, float(dy), float(dx))
        if ref is None:
            ref = frame.clone()
            continue
        diff = frame - ref
        fired = diff.abs() >= threshold
        if noise_rate > 0:
            noise = torch.rand(h, w, generator=rng) < noise_rate
            fired = fired | noise
            diff = torch.where(noise & (diff == 0),
                               torch.rand(h, w, generator=rng) - 0.5, diff)
        if fired.any():
            yy, xx = torch.nonzero(fired, as_tuple=True)
            t_us = int(round(step / max(1, steps - 1) * STREAM_DURATION_US))
            t_us = min(t_us, (1 << 23) - 1)
            xs.append(xx.numpy())
            ys.append(yy.numpy())
            ts.append(np.full(len(xx), t_us, dtype=np.int64))
            ps.append((diff[yy, xx] > 0).long().numpy())
            ref[yy, xx] = frame[yy, xx]
    if not xs:
        return EventStream.empty(w, h, label)
    return EventStream(np.concatenate(xs), np.concatenate(ys),
                       np.concatenate(ts), np.concatenate(ps), w, h, label)


def write_synth_dataset(root, *, train_per_class: int = 30,
                        test_per_class: int = 15, hw: Tuple[int, int] = (28, 28),
                        seed: int = 0, threshold: float = 0.12,
                        amplitude: float = 2.0) -> dict:
    """Write unpaired frame (PNG) and event (binary) trees under ``root``.

    Layout: ``<root>/frames/{train,test}/<label>/*.png`` and
    ``<root>/events/{train,test}/<label>/*.bin``. Returns the dataset roots
    and sensor geometry. Digit originals are partitioned so no image is
    shared between the two domains; affine-jittered variants fill in when a
    class needs more samples than it has originals.
    """
    root = Path(root)
    images, targets = digit_bank()
    rng = torch.Generator().manual_seed(seed)
    per_domain = {}
    for klass in range(10):
        idx = np.nonzero(targets == klass)[0]
        order = idx[torch.randperm(len(idx), generator=rng).numpy()]
        half = len(order) // 2
        per_domain.setdefault("frames", {})[klass] = order[:half]
        per_domain.setdefault("events", {})[klass] = order[half:]

    counts = {"train": train_per_class, "test": test_per_class}
    info = {"frames_root": root / "frames", "events_root": root / "events",
            "width": hw[1], "height": hw[0]}
    for domain in ("frames", "events"):
        for split, n in counts.items():
            for klass in range(10):
                pool = per_domain[domain][klass]
                split_half = len(pool) // 2
                source = pool[:split_half] if split == "train" else pool[split_half:]
                out_dir = root / domain / split / str(klass)
                out_dir.mkdir(parents=True, exist_ok=True)
                for i in range(n):
                    base = upscale_digit(images[source[i % len(source)]], hw)
                    img = base if i < len(source) else jitter_digit(base, rng)
                    if domain == "frames":
                        arr = (img.numpy() * 255).astype(np.uint8)
                        Image.fromarray(arr, mode="L").save(out_dir / f"{i:05d}.png")
                    else:
                        stream = simulate_saccade_events(
                            img, threshold=threshold, amplitude=amplitude,
                            rng=rng, label=klass)
                        (out_dir / f"{i:05d}.bin").write_bytes(
                            encode_nmnist_bin(stream))
    return info
