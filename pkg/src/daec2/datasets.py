"""Materialize manifests into batched tensors for training and evaluation."""

from __future__ import annotations

from typing import Tuple

import torch

from .event_io import DatasetManifest, load_event_file
from .representation import events_to_histogram, normalize_event_frame, prepare_frame


def load_frame_tensors(manifest: DatasetManifest, hw: Tuple[int, int],
                       channels: int = 1) -> Tuple[torch.Tensor, torch.Tensor]:
    """Stack every frame image of a manifest into (N, C, H, W) plus labels."""
    imgs, labels = [], []
    for path, label in manifest.records:
        f = prepare_frame(path, hw[0], hw[1], out_channels=channels, label=label)
        imgs.append(f.data)
        labels.append(label)
    if not imgs:
        return (torch.zeros(0, channels, *hw), torch.zeros(0, dtype=torch.long))
    return torch.stack(imgs), torch.tensor(labels, dtype=torch.long)


def load_event_tensors(manifest: DatasetManifest, hw: Tuple[int, int]
                       ) -> Tuple[torch.Tensor, torch.Tensor]:
    """Decode, bin, and normalize every event file into (N, 2, H, W) plus labels."""
    width = manifest.width if manifest.width is not None else hw[1]
    height = manifest.height if manifest.height is not None else hw[0]
    frames, labels = [], []
    for path, label in manifest.records:
        stream = load_event_file(path, width, height, label=label)
        hist = normalize_event_frame(events_to_histogram(stream, hw[0], hw[1]))
        frames.append(hist.data)
        labels.append(label)
    if not frames:
        return (torch.zeros(0, 2, *hw), torch.zeros(0, dtype=torch.long))
    return torch.stack(frames), torch.tensor(labels, dtype=torch.long)
