"""Stochastic augmented views for the augmentation-invariance objective.

Frames go through brightness/contrast jitter, Gaussian blur, random resize,
random affine, random crop, and random flip; event histograms through random
integer shift, random flip, random resize, and random crop. All randomness
is drawn from an explicit ``torch.Generator`` so callers own seeding.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Tuple, Union

import torch
import torch.nn.functional as F

from .representation import EventFrame, FrameImage


class PolicyError(ValueError):
    """Raised for contradictory or out-of-range augmentation settings."""


RngLike = Union[int, torch.Generator, None]


def as_generator(rng: RngLike) -> torch.Generator:
    if isinstance(rng, torch.Generator):
        return rng
    gen = torch.Generator()
    if rng is not None:
        gen.manual_seed(int(rng))
    return gen


def spawn(rng: torch.Generator) -> torch.Generator:
    """Derive an independent child generator, advancing the parent once."""
    seed = int(torch.randint(0, 2**62, (1,), generator=rng).item())
    child = torch.Generator()
    child.manual_seed(seed)
    return child


@dataclass
class AugmentationPolicy:
    """Per-transform switches and ranges, plus the pipeline's base seed."""

    enable_jitter: bool = True
    jitter_strength: float = 0.4          # brightness/contrast factor range
    enable_blur: bool = True
    blur_sigma: Tuple[float, float] = (0.1, 2.0)
    enable_resize: bool = True
    resize_scale: Tuple[float, float] = (0.8, 1.2)
    enable_affine: bool = True
    affine_degrees: float = 10.0
    affine_translate: float = 0.1         # fraction of image size
    enable_crop: bool = True
    crop_size: Optional[int] = None       # None = 7/8 of the short side
    enable_flip: bool = True
    flip_prob: float = 0.5
    enable_shift: bool = True             # events only
    shift_max: int = 3
    use_original_as_view_a: bool = False
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise PolicyError(f"flip_prob must be in [0, 1], got {self.flip_prob}")
        if self.enable_jitter and self.jitter_strength <= 0:
            raise PolicyError("jitter enabled with non-positive strength")
        if self.enable_blur and not 0 < self.blur_sigma[0] <= self.blur_sigma[1]:
            raise PolicyError(f"bad blur sigma range {self.blur_sigma}")
        if self.enable_resize and not 0 < self.resize_scale[0] <= self.resize_scale[1]:
            raise PolicyError(f"bad resize scale range {self.resize_scale}")
        if self.enable_affine and self.affine_degrees < 0:
            raise PolicyError("negative affine degree range")
        if self.enable_shift and self.shift_max < 0:
            raise PolicyError("negative shift_max")
        if self.enable_crop and self.crop_size is not None and self.crop_size <= 0:
            raise PolicyError("crop_size must be positive")

    @classmethod
    def disabled(cls) -> "AugmentationPolicy":
        return cls(enable_jitter=False, enable_blur=False, enable_resize=False,
                   enable_affine=False, enable_crop=False, enable_flip=False,
                   enable_shift=False)


@dataclass
class ViewPair:
    """Two independently augmented views of one input."""

    view_a: Union[FrameImage, EventFrame]
    view_b: Union[FrameImage, EventFrame]


def _uniform(lo: float, hi: float, rng: torch.Generator) -> float:
    return float(torch.empty(1).uniform_(lo, hi, generator=rng).item())


def _bernoulli(p: float, rng: torch.Generator) -> bool:
    return bool(torch.rand(1, generator=rng).item() < p)


def _jitter(x: torch.Tensor, strength: float, rng: torch.Generator) -> torch.Tensor:
    # grayscale degradation of color jitter: brightness then contrast
    bf = _uniform(max(0.0, 1.0 - strength), 1.0 + strength, rng)
    cf = _uniform(max(0.0, 1.0 - strength), 1.0 + strength, rng)
    x = x * bf
    mean = x.mean()
    return ((x - mean) * cf + mean).clamp_(0.0, 1.0)


def _gaussian_blur(x: torch.Tensor, sigma: float) -> torch.Tensor:
    radius = max(1, int(3.0 * sigma + 0.5))
    coords = torch.arange(-radius, radius + 1, dtype=torch.float32)
    kernel = torch.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    kernel = kernel / kernel.sum()
    c = x.shape[0]
    x = x.unsqueeze(0)
    kx = kernel.view(1, 1, 1, -1).expand(c, 1, 1, -1)
    ky = kernel.view(1, 1, -1, 1).expand(c, 1, -1, 1)
    x = F.conv2d(F.pad(x, (radius, radius, 0, 0), mode="reflect"), kx, groups=c)
    x = F.conv2d(F.pad(x, (0, 0, radius, radius), mode="reflect"), ky, groups=c)
    return x.squeeze(0)


def _random_resize(x: torch.Tensor, scale: Tuple[float, float],
                   rng: torch.Generator) -> torch.Tensor:
    """Rescale content then pad/center-crop back to the original size."""
    h, w = x.shape[1], x.shape[2]
    s = _uniform(scale[0], scale[1], rng)
    nh, nw = max(1, round(h * s)), max(1, round(w * s))
    if (nh, nw) == (h, w):
        return x
    y = F.interpolate(x.unsqueeze(0), size=(nh, nw), mode="bilinear",
                      align_corners=False).squeeze(0)
    if nh >= h:
        top, left = (nh - h) // 2, (nw - w) // 2
        return y[:, top:top + h, left:left + w]
    pt, pl = (h - nh) // 2, (w - nw) // 2
    return F.pad(y, (pl, w - nw - pl, pt, h - nh - pt))


def _random_affine(x: torch.Tensor, degrees: float, translate: float,
                   rng: torch.Generator) -> torch.Tensor:
    h, w = x.shape[1], x.shape[2]
    theta = _uniform(-degrees, degrees, rng) * torch.pi / 180.0
    tx = _uniform(-translate, translate, rng) * 2.0  # grid units are in [-1, 1]
    ty = _uniform(-translate, translate, rng) * 2.0
    cos, sin = float(torch.cos(torch.tensor(theta))), float(torch.sin(torch.tensor(theta)))
    mat = torch.tensor([[cos, -sin, tx], [sin, cos, ty]], dtype=torch.float32)
    grid = F.affine_grid(mat.unsqueeze(0), (1, x.shape[0], h, w), align_corners=False)
    return F.grid_sample(x.unsqueeze(0), grid, mode="bilinear",
                         padding_mode="zeros", align_corners=False).squeeze(0)


def _random_crop(x: torch.Tensor, crop_size: Optional[int],
                 rng: torch.Generator) -> torch.Tensor:
    """Crop a random window and resize it back to the input size."""
    h, w = x.shape[1], x.shape[2]
    size = crop_size if crop_size is not None else max(1, (min(h, w) * 7) // 8)
    if size > min(h, w):
        raise PolicyError(f"crop size {size} exceeds image size {h}x{w}")
    if size == h and size == w:
        return x
    top = int(torch.randint(0, h - size + 1, (1,), generator=rng).item())
    left = int(torch.randint(0, w - size + 1, (1,), generator=rng).item())
    y = x[:, top:top + size, left:left + size]
    return F.interpolate(y.unsqueeze(0), size=(h, w), mode="bilinear",
                         align_corners=False).squeeze(0)


def shift_events(data: torch.Tensor, dy: int, dx: int) -> torch.Tensor:
    """Translate a histogram by whole pixels; exposed columns fill with zeros."""
    out = torch.zeros_like(data)
    h, w = data.shape[1], data.shape[2]
    ys, yd = (0, dy) if dy >= 0 else (-dy, 0)
    xs, xd = (0, dx) if dx >= 0 else (-dx, 0)
    hh, ww = h - abs(dy), w - abs(dx)
    if hh > 0 and ww > 0:
        out[:, yd:yd + hh, xd:xd + ww] = data[:, ys:ys + hh, xs:xs + ww]
    return out


def augment_frame(image: FrameImage, policy: AugmentationPolicy,
                  rng_state: RngLike = None) -> FrameImage:
    """One stochastic frame view; output keeps the input shape and [0, 1] range."""
    policy.validate()
    rng = as_generator(rng_state)
    x = image.data.clone()
    if policy.enable_jitter:
        x = _jitter(x, policy.jitter_strength, rng)
    if policy.enable_blur:
        x = _gaussian_blur(x, _uniform(*policy.blur_sigma, rng))
    if policy.enable_resize:
        x = _random_resize(x, policy.resize_scale, rng)
    if policy.enable_affine:
        x = _random_affine(x, policy.affine_degrees, policy.affine_translate, rng)
    if policy.enable_crop:
        x = _random_crop(x, policy.crop_size, rng)
    if policy.enable_flip and _bernoulli(policy.flip_prob, rng):
        x = torch.flip(x, dims=(-1,))
    return FrameImage(data=x.clamp_(0.0, 1.0), label=image.label)


def augment_events(frame: EventFrame, policy: AugmentationPolicy,
                   rng_state: RngLike = None) -> EventFrame:
    """One stochastic event-histogram view; entries stay nonnegative."""
    policy.validate()
    rng = as_generator(rng_state)
    x = frame.data.clone()
    if policy.enable_shift and policy.shift_max > 0:
        dy = int(torch.randint(-policy.shift_max, policy.shift_max + 1, (1,),
                               generator=rng).item())
        dx = int(torch.randint(-policy.shift_max, policy.shift_max + 1, (1,),
                               generator=rng).item())
        x = shift_events(x, dy, dx)
    if policy.enable_flip and _bernoulli(policy.flip_prob, rng):
        x = torch.flip(x, dims=(-1,))
    if policy.enable_resize:
        x = _random_resize(x, policy.resize_scale, rng)
    if policy.enable_crop:
        x = _random_crop(x, policy.crop_size, rng)
    return EventFrame(data=x.clamp_min_(0.0), label=frame.label)


def make_view_pair(sample: Union[FrameImage, EventFrame],
                   policy: AugmentationPolicy,
                   rng_state: RngLike = None) -> ViewPair:
    """Two independent augmented draws of one sample.

    With ``use_original_as_view_a`` the first view is the untouched input.
    """
    rng = as_generator(rng_state)
    rng_a, rng_b = spawn(rng), spawn(rng)
    if isinstance(sample, FrameImage):
        op = augment_frame
    elif isinstance(sample, EventFrame):
        op = augment_events
    else:
        raise TypeError(f"expected FrameImage or EventFrame, got {type(sample).__name__}")
    if policy.use_original_as_view_a:
        view_a = replace(sample, data=sample.data.clone())
    else:
        view_a = op(sample, policy, rng_a)
    view_b = op(sample, policy, rng_b)
    if view_a.data.shape != view_b.data.shape:
        raise PolicyError("augmented views disagree in shape")
    return ViewPair(view_a=view_a, view_b=view_b)
