"""Fixed-shape tensor representations of event streams and frame images.

Event recordings are collapsed over time into a 2-channel spatial histogram
(channel 0 = ON counts, channel 1 = OFF counts); frames become float tensors
in [0, 1]. Tensor layout is (channels, height, width) throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .event_io import ON, EventStream


class IngestionError(Exception):
    """Raised when a frame image cannot be read or converted."""


@dataclass
class EventFrame:
    """Polarity-split spatial histogram of one event stream."""

    data: torch.Tensor  # (2, H, W), nonnegative counts or [0, 1] after normalization
    label: Optional[int] = None

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass
class FrameImage:
    """Frame-camera image as a float tensor in [0, 1]."""

    data: torch.Tensor  # (C, H, W)
    label: Optional[int] = None


def events_to_histogram(stream: EventStream, out_h: int, out_w: int) -> EventFrame:
    """Count events per (polarity, pixel), rescaling if the output size differs.

    Without rescaling the per-polarity sums equal the per-polarity event
    counts exactly.
    """
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    counts = np.zeros((2, stream.height, stream.width), dtype=np.float32)
    if len(stream) > 0:
        on = stream.ps == ON
        flat = stream.ys * stream.width + stream.xs
        size = stream.height * stream.width
        counts[0] = np.bincount(flat[on], minlength=size).reshape(
            stream.height, stream.width)
        counts[1] = np.bincount(flat[~on], minlength=size).reshape(
            stream.height, stream.width)
    data = torch.from_numpy(counts)
    if (stream.height, stream.width) != (out_h, out_w):
        data = F.interpolate(data.unsqueeze(0), size=(out_h, out_w),
                             mode="bilinear", align_corners=False).squeeze(0)
        data = data.clamp_min_(0.0)
    return EventFrame(data=data, label=stream.label)


def normalize_event_frame(frame: EventFrame) -> EventFrame:
    """Scale a histogram into [0, 1] by its maximum count.

    All-zero inputs pass through unchanged, so the operation is idempotent.
    """
    peak = frame.data.max()
    if peak <= 0:
        return EventFrame(data=frame.data.clone(), label=frame.label)
    return EventFrame(data=frame.data / peak, label=frame.label)


def prepare_frame(image, out_h: int, out_w: int, out_channels: Optional[int] = None,
                  label: Optional[int] = None) -> FrameImage:
    """Turn a raw image (path, PIL image, or array) into a FrameImage.

    The image is resized bilinearly to (out_h, out_w) and scaled to [0, 1].
    A grayscale input is replicated when ``out_channels`` asks for more
    channels than the image carries.
    """
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    arr = _to_float_array(image)
    if arr.size == 0:
        raise IngestionError("empty image")
    data = torch.from_numpy(arr)  # (C, H, W) in [0, 1]
    if data.shape[1:] != (out_h, out_w):
        data = F.interpolate(data.unsqueeze(0), size=(out_h, out_w),
                             mode="bilinear", align_corners=False).squeeze(0)
        data = data.clamp_(0.0, 1.0)
    if out_channels is not None and out_channels != data.shape[0]:
        if data.shape[0] == 1:
            data = data.expand(out_channels, -1, -1).contiguous()
        else:
            raise IngestionError(
                f"cannot map {data.shape[0]}-channel image to {out_channels} channels")
    return FrameImage(data=data, label=label)


def _to_float_array(image) -> np.ndarray:
    """Normalize the accepted input kinds to a float32 (C, H, W) array in [0, 1]."""
    if isinstance(image, (str,)) or hasattr(image, "__fspath__"):
        try:
            with Image.open(image) as img:
                image = img.convert("L") if img.mode in ("L", "1", "I;16", "I") \
                    else img.convert("RGB")
                arr = np.asarray(image, dtype=np.float32) / 255.0
        except (OSError, ValueError) as e:
            raise IngestionError(f"cannot read image {image!r}: {e}") from e
    elif isinstance(image, Image.Image):
        mode = "L" if image.mode in ("L", "1", "I;16", "I") else "RGB"
        arr = np.asarray(image.convert(mode), dtype=np.float32) / 255.0
    elif isinstance(image, np.ndarray):
        arr = image.astype(np.float32)
        if arr.size and arr.max() > 1.0:
            arr = arr / 255.0
    elif isinstance(image, torch.Tensor):
        arr = image.detach().cpu().float().numpy()
    else:
        raise IngestionError(f"unsupported image input type {type(image).__name__}")
    if arr.ndim == 2:
        arr = arr[None]
    elif arr.ndim == 3 and arr.shape[-1] in (1, 3) and arr.shape[0] not in (1, 3):
        arr = np.moveaxis(arr, -1, 0)
    elif arr.ndim != 3:
        raise IngestionError(f"image must be 2-D or 3-D, got shape {arr.shape}")
    return np.ascontiguousarray(np.clip(arr, 0.0, 1.0))
