"""Network definitions: three encoders, decoder, refinement net, two
discriminators, classifier, and the optional projection heads.

Encoders are the first half of an 18-layer residual network (first conv
adapted to the domain's channel count, max pooling removed, split after the
second residual stage); the classifier is the second half. The two content
encoders share their output geometry so frame and event features live in one
space.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

PROJECTION_KINDS = ("avg_pool", "mlp")
PROJECTION_PATHS = ("frame", "event_content", "event_attribute")
NORM_KINDS = ("batch", "group")


def make_norm(kind: str, channels: int) -> nn.Module:
    """Normalization layer factory; group norm is batch-size independent."""
    if kind == "batch":
        return nn.BatchNorm2d(channels)
    if kind == "group":
        return nn.GroupNorm(math.gcd(channels, 8), channels)
    raise ValueError(f"norm must be one of {NORM_KINDS}, got {kind!r}")


class ShapeContractError(ValueError):
    """Raised when a tensor does not match the configured geometry."""


@dataclass
class NetworkConfig:
    """Static geometry and sizing of every network in the bundle."""

    frame_channels: int = 1
    event_channels: int = 2
    frame_hw: Tuple[int, int] = (28, 28)
    event_hw: Tuple[int, int] = (28, 28)
    base_width: int = 64
    num_classes: int = 10
    projection: str = "avg_pool"
    proj_dim: int = 128
    norm: str = "batch"
    refine_blocks: int = 3
    refine_width: int = 32
    disc_depth: int = 4
    disc_width: int = 64

    def __post_init__(self):
        self.frame_hw = tuple(int(v) for v in self.frame_hw)
        self.event_hw = tuple(int(v) for v in self.event_hw)
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.projection not in PROJECTION_KINDS:
            raise ValueError(f"projection must be one of {PROJECTION_KINDS}")
        if self.norm not in NORM_KINDS:
            raise ValueError(f"norm must be one of {NORM_KINDS}")
        for name in ("frame_channels", "event_channels", "base_width",
                     "proj_dim", "refine_blocks", "refine_width",
                     "disc_depth", "disc_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def content_channels(self) -> int:
        return 2 * self.base_width

    @property
    def attribute_channels(self) -> int:
        return 2 * self.base_width

    def to_dict(self) -> dict:
        d = asdict(self)
        d["frame_hw"] = list(self.frame_hw)
        d["event_hw"] = list(self.event_hw)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**d)


class BasicBlock(nn.Module):
    """Standard two-conv residual block."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1,
                 norm: str = "batch"):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = make_norm(norm, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = make_norm(norm, out_ch)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                make_norm(norm, out_ch))
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class HalfResNetEncoder(nn.Module):
    """Stem plus the first two residual stages; downsamples spatially by 4."""

    def __init__(self, in_channels: int, width: int = 64, norm: str = "batch"):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, width, 7, stride=2, padding=3, bias=False)
        self.bn1 = make_norm(norm, width)
        self.layer1 = nn.Sequential(BasicBlock(width, width, norm=norm),
                                    BasicBlock(width, width, norm=norm))
        self.layer2 = nn.Sequential(BasicBlock(width, 2 * width, stride=2, norm=norm),
                                    BasicBlock(2 * width, 2 * width, norm=norm))

    def forward(self, x):
        x = F.relu(self.bn1(self.conv1(x)))
        x = self.layer1(x)
        return self.layer2(x)


class HalfResNetClassifier(nn.Module):
    """Last two residual stages plus pooled linear head."""

    def __init__(self, in_channels: int, num_classes: int, norm: str = "batch"):
        super().__init__()
        w = in_channels
        self.layer3 = nn.Sequential(BasicBlock(w, 2 * w, stride=2, norm=norm),
                                    BasicBlock(2 * w, 2 * w, norm=norm))
        self.layer4 = nn.Sequential(BasicBlock(2 * w, 4 * w, stride=2, norm=norm),
                                    BasicBlock(4 * w, 4 * w, norm=norm))
        self.fc = nn.Linear(4 * w, num_classes)

    def forward(self, z):
        z = self.layer4(self.layer3(z))
        z = F.adaptive_avg_pool2d(z, 1).flatten(1)
        return self.fc(z)


class Decoder(nn.Module):
    """Transposed-conv stack mirroring the encoder's 4x downsampling."""

    def __init__(self, content_ch: int, attr_ch: int, out_ch: int,
                 out_hw: Tuple[int, int], width: int = 64, norm: str = "batch"):
        super().__init__()
        self.out_hw = tuple(out_hw)
        self.net = nn.Sequential(
            nn.ConvTranspose2d(content_ch + attr_ch, 2 * width, 4, stride=2, padding=1),
            make_norm(norm, 2 * width), nn.ReLU(inplace=True),
            nn.ConvTranspose2d(2 * width, width, 4, stride=2, padding=1),
            make_norm(norm, width), nn.ReLU(inplace=True),
            nn.Conv2d(width, out_ch, 3, padding=1))

    def forward(self, content, attribute):
        x = self.net(torch.cat([content, attribute], dim=1))
        if x.shape[-2:] != torch.Size(self.out_hw):
            x = F.interpolate(x, size=self.out_hw, mode="bilinear", align_corners=False)
        return torch.sigmoid(x)


class RefinementNet(nn.Module):
    """Shape-preserving residual correction; starts as the identity."""

    def __init__(self, channels: int, width: int = 32, blocks: int = 3):
        super().__init__()
        self.stem = nn.Conv2d(channels, width, 3, padding=1)
        self.blocks = nn.ModuleList([
            nn.Sequential(nn.Conv2d(width, width, 3, padding=1), nn.ReLU(inplace=True),
                          nn.Conv2d(width, width, 3, padding=1))
            for _ in range(blocks)])
        self.head = nn.Conv2d(width, channels, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x):
        h = F.relu(self.stem(x))
        for block in self.blocks:
            h = F.relu(h + block(h))
        return (x + self.head(h)).clamp(0.0, 1.0)


class ConvDiscriminator(nn.Module):
    """Small strided-conv stack emitting one logit per sample."""

    def __init__(self, in_channels: int, in_hw: Tuple[int, int],
                 width: int = 64, depth: int = 4):
        super().__init__()
        layers: List[nn.Module] = []
        ch, (h, w) = in_channels, in_hw
        for i in range(depth):
            out = min(width * (2 ** i), 512)
            stride = 2 if min(h, w) >= 2 else 1
            layers += [nn.Conv2d(ch, out, 3, stride=stride, padding=1),
                       nn.LeakyReLU(0.2, inplace=True)]
            ch = out
            if stride == 2:
                h, w = (h + 1) // 2, (w + 1) // 2
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(ch, 1)

    def forward(self, x):
        h = F.adaptive_avg_pool2d(self.features(x), 1).flatten(1)
        return self.head(h).squeeze(1)


class ProjectionMLP(nn.Module):
    """Two-layer head applied after global average pooling."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(in_dim, out_dim), nn.ReLU(inplace=True),
                                 nn.Linear(out_dim, out_dim))

    def forward(self, v):
        return self.net(v)


class ModelBundle(nn.Module):
    """All trainable networks plus the learned null attribute embedding.

    The null attribute stands in for an event attribute when the decoder
    reconstructs a frame from frame content alone.
    """

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        w = config.base_width
        self.frame_encoder = HalfResNetEncoder(config.frame_channels, w, config.norm)
        self.event_content_encoder = HalfResNetEncoder(config.event_channels, w,
                                                       config.norm)
        self.event_attribute_encoder = HalfResNetEncoder(config.event_channels, w,
                                                         config.norm)
        self.content_hw = self._probe_hw(self.frame_encoder, config.frame_channels,
                                         config.frame_hw)
        event_content_hw = self._probe_hw(self.event_content_encoder,
                                          config.event_channels, config.event_hw)
        if event_content_hw != self.content_hw:
            raise ShapeContractError(
                f"content geometry differs between domains: frame {self.content_hw} "
                f"vs event {event_content_hw}; adjust frame_hw/event_hw")
        self.decoder = Decoder(config.content_channels, config.attribute_channels,
                               config.event_channels, config.event_hw, width=w,
                               norm=config.norm)
        self.refiner = RefinementNet(config.event_channels, config.refine_width,
                                     config.refine_blocks)
        self.content_discriminator = ConvDiscriminator(
            config.content_channels, self.content_hw, config.disc_width,
            config.disc_depth)
        self.event_discriminator = ConvDiscriminator(
            config.event_channels, config.event_hw, config.disc_width,
            config.disc_depth)
        self.classifier = HalfResNetClassifier(config.content_channels,
                                               config.num_classes, config.norm)
        self.null_attribute = nn.Parameter(
            torch.zeros(config.attribute_channels, *self.content_hw))
        if config.projection == "mlp":
            self.projection_heads = nn.ModuleDict({
                "frame": ProjectionMLP(config.content_channels, config.proj_dim),
                "event_content": ProjectionMLP(config.content_channels, config.proj_dim),
                "event_attribute": ProjectionMLP(config.attribute_channels,
                                                 config.proj_dim)})
        else:
            self.projection_heads = None
        self._init_weights()

    @staticmethod
    def _probe_hw(encoder: nn.Module, channels: int, hw: Tuple[int, int]) -> Tuple[int, int]:
        was_training = encoder.training
        encoder.eval()
        with torch.no_grad():
            out = encoder(torch.zeros(1, channels, *hw))
        encoder.train(was_training)
        return (out.shape[-2], out.shape[-1])

    def _init_weights(self):
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
            elif isinstance(m, (nn.BatchNorm2d, nn.GroupNorm)):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)
        # refinement head stays zero so refine() starts as the identity
        nn.init.zeros_(self.refiner.head.weight)
        nn.init.zeros_(self.refiner.head.bias)

    def generator_modules(self) -> Dict[str, nn.Module]:
        mods = {"frame_encoder": self.frame_encoder,
                "event_content_encoder": self.event_content_encoder,
                "event_attribute_encoder": self.event_attribute_encoder,
                "decoder": self.decoder,
                "refiner": self.refiner,
                "classifier": self.classifier}
        if self.projection_heads is not None:
            mods["projection_heads"] = self.projection_heads
        return mods

    def orth_matrices(self, include_attribute: bool = True,
                      include_refiner: bool = True,
                      include_decoder: bool = True) -> List[torch.Tensor]:
        """Convolution weights of the encoders, decoder, and refinement net."""
        mods: List[nn.Module] = [self.frame_encoder, self.event_content_encoder]
        if include_decoder:
            mods.append(self.decoder)
        if include_attribute:
            mods.append(self.event_attribute_encoder)
        if include_refiner:
            mods.append(self.refiner)
        mats = []
        for mod in mods:
            for m in mod.modules():
                if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                    mats.append(m.weight.reshape(m.weight.shape[0], -1))
        return mats

    def expanded_null_attribute(self, batch: int) -> torch.Tensor:
        return self.null_attribute.unsqueeze(0).expand(batch, -1, -1, -1)


def _check_input(x: torch.Tensor, channels: int, hw: Tuple[int, int], what: str):
    if x.ndim != 4 or x.shape[1] != channels or x.shape[-2:] != torch.Size(hw):
        raise ShapeContractError(
            f"{what} must be (N, {channels}, {hw[0]}, {hw[1]}), "
            f"got {tuple(x.shape)}")


def encode_frame(y_f: torch.Tensor, bundle: ModelBundle) -> torch.Tensor:
    """Project a frame batch into the shared content space."""
    cfg = bundle.config
    _check_input(y_f, cfg.frame_channels, cfg.frame_hw, "frame input")
    return bundle.frame_encoder(y_f)


def encode_event_content(y_e: torch.Tensor, bundle: ModelBundle) -> torch.Tensor:
    """Project an event batch into the shared content space."""
    cfg = bundle.config
    _check_input(y_e, cfg.event_channels, cfg.event_hw, "event input")
    return bundle.event_content_encoder(y_e)


def encode_event_attribute(y_e: torch.Tensor, bundle: ModelBundle) -> torch.Tensor:
    """Extract the event-appearance attribute features of an event batch."""
    cfg = bundle.config
    _check_input(y_e, cfg.event_channels, cfg.event_hw, "event input")
    return bundle.event_attribute_encoder(y_e)


def decode(content: torch.Tensor, attribute: torch.Tensor,
           bundle: ModelBundle) -> torch.Tensor:
    """Generate an event-shaped tensor from content plus attribute features."""
    cfg = bundle.config
    _check_input(content, cfg.content_channels, bundle.content_hw, "content feature")
    _check_input(attribute, cfg.attribute_channels, bundle.content_hw,
                 "attribute feature")
    if content.shape[0] != attribute.shape[0]:
        raise ShapeContractError(
            f"batch mismatch: {content.shape[0]} content vs "
            f"{attribute.shape[0]} attribute samples")
    return bundle.decoder(content, attribute)


def refine(raw_fake: torch.Tensor, bundle: ModelBundle, enabled: bool = True) -> torch.Tensor:
    """Polish a generated event tensor; exact identity when disabled."""
    if not enabled:
        return raw_fake
    cfg = bundle.config
    _check_input(raw_fake, cfg.event_channels, cfg.event_hw, "event-shaped input")
    return bundle.refiner(raw_fake)


def discriminate_content(z: torch.Tensor, bundle: ModelBundle) -> torch.Tensor:
    """Per-sample logit: does this content feature come from a frame or an event?"""
    cfg = bundle.config
    _check_input(z, cfg.content_channels, bundle.content_hw, "content feature")
    return bundle.content_discriminator(z)


def discriminate_event(e: torch.Tensor, bundle: ModelBundle) -> torch.Tensor:
    """Per-sample logit: real event or generated one?"""
    cfg = bundle.config
    _check_input(e, cfg.event_channels, cfg.event_hw, "event-shaped input")
    return bundle.event_discriminator(e)


def classify(z: torch.Tensor, bundle: ModelBundle) -> torch.Tensor:
    """Class logits from a content feature batch."""
    cfg = bundle.config
    _check_input(z, cfg.content_channels, bundle.content_hw, "content feature")
    return bundle.classifier(z)


def project(feature: torch.Tensor, head_type: str, bundle: ModelBundle,
            path: str = "frame") -> torch.Tensor:
    """Pool a feature map to a vector, optionally through the path's MLP head."""
    if head_type not in PROJECTION_KINDS:
        raise ValueError(f"head_type must be one of {PROJECTION_KINDS}, got {head_type!r}")
    if path not in PROJECTION_PATHS:
        raise ValueError(f"path must be one of {PROJECTION_PATHS}, got {path!r}")
    single = feature.ndim == 3
    if single:
        feature = feature.unsqueeze(0)
    v = feature.mean(dim=(-2, -1))
    if head_type == "mlp":
        if bundle.projection_heads is None:
            raise ShapeContractError(
                "bundle was built without MLP projection heads")
        v = bundle.projection_heads[path](v)
    return v.squeeze(0) if single else v
