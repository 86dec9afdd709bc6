"""Training orchestration: batch assembly, the alternating
discriminator/generator updates, the optimization schedule, and checkpoints.

Each step runs the full forward graph once, updates both discriminators on
their relativistic losses over detached features, then updates the
generator-side group (encoders, decoder, refinement net, classifier, null
attribute, projection heads) on every remaining term. The two adversarial
report values are the raw relativistic quantities; each player performs
gradient ascent on its own (the step minimizes the negated value).
"""

from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import torch

from . import nets
from .augment import AugmentationPolicy, as_generator, augment_events, augment_frame
from .datasets import load_event_tensors, load_frame_tensors
from .event_io import DatasetManifest
from .losses import (LossReport, LossWeights, NonFiniteLossError, cls_loss,
                     cycle_attribute_loss, cycle_content_loss, decoder_loss,
                     orth_loss, relativistic_pair, selfsup_loss, total_loss,
                     uncorr_loss)
from .nets import ModelBundle, NetworkConfig
from .representation import EventFrame, FrameImage

CHECKPOINT_VERSION = 1
DETERMINISTIC_ENV = "DAEC2_DETERMINISTIC"


class CheckpointError(RuntimeError):
    """Raised for unreadable, mismatched, or incompatible checkpoint files."""


@dataclass
class TrainConfig:
    """Optimization schedule, batch sizes, ablation switches, and seeding."""

    epochs: int = 30
    batch_frames: int = 7
    batch_events: int = 7
    lr: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.999
    lr_decay: float = 0.95
    weights: LossWeights = field(default_factory=LossWeights)
    enable_selfsup: bool = True
    selfsup_metric: str = "cos"
    enable_uncorr: bool = True
    enable_refinement: bool = True
    enable_event_discriminator: bool = True
    enable_content_discriminator: bool = True
    enable_fake_generation: bool = True
    enable_attribute_encoder: bool = True
    seed: int = 1234
    checkpoint_every: int = 1
    grad_clip: Optional[float] = None  # e.g. 5.0; None keeps the schedule untouched
    stop_fake_cls_gradient: bool = False
    deterministic: bool = False

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_frames < 1 or self.batch_events < 1:
            raise ValueError("batch sizes must be at least 1")
        if self.selfsup_metric not in ("cos", "l2"):
            raise ValueError("selfsup_metric must be 'cos' or 'l2'")
        if self.enable_fake_generation and self.batch_frames != self.batch_events:
            raise ValueError("fake generation pairs frames with event attributes; "
                             "batch_frames must equal batch_events")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


@dataclass
class Checkpoint:
    """Everything needed to reproduce the training state at an epoch boundary.

    Every random draw in a run (shuffles, augmentations) is derived from
    (train_config.seed, epoch, step), so the stored seed and epoch index ARE
    the generator state: resuming re-derives the identical random streams.
    """

    version: int
    net_config: NetworkConfig
    train_config: TrainConfig
    epoch: int  # last completed epoch, -1 before any training
    model_state: dict
    optim_state: dict


@dataclass
class TrainResult:
    bundle: ModelBundle
    checkpoint_path: Optional[Path]
    history: List[Dict[str, float]]
    step_reports: List[Dict[str, float]]
    metrics_path: Optional[Path]


class Optimizers:
    """The three rectified-Adam groups: generator side plus one per discriminator."""

    def __init__(self, bundle: ModelBundle, config: TrainConfig):
        betas = (config.beta1, config.beta2)
        gen_params = [bundle.null_attribute]
        for mod in bundle.generator_modules().values():
            gen_params.extend(mod.parameters())
        self.generator = torch.optim.RAdam(gen_params, lr=config.lr, betas=betas)
        self.content_disc = torch.optim.RAdam(
            bundle.content_discriminator.parameters(), lr=config.lr, betas=betas)
        self.event_disc = torch.optim.RAdam(
            bundle.event_discriminator.parameters(), lr=config.lr, betas=betas)

    def all(self):
        return (self.generator, self.content_disc, self.event_disc)

    def set_lr(self, lr: float):
        for opt in self.all():
            for group in opt.param_groups:
                group["lr"] = lr

    def state_dict(self) -> dict:
        return {"generator": self.generator.state_dict(),
                "content_disc": self.content_disc.state_dict(),
                "event_disc": self.event_disc.state_dict()}

    def load_state_dict(self, state: dict):
        self.generator.load_state_dict(state["generator"])
        self.content_disc.load_state_dict(state["content_disc"])
        self.event_disc.load_state_dict(state["event_disc"])


def schedule_lr(base_lr: float, epoch: int, decay: float = 0.95) -> float:
    """Exponential schedule: base_lr * decay**epoch."""
    return base_lr * decay ** epoch


def derive_seed(*parts: int) -> int:
    """Stable mixing of integer parts into a 63-bit seed."""
    h = 0x9E3779B97F4A7C15
    for p in parts:
        h ^= (int(p) + 0x9E3779B97F4A7C15 + ((h << 6) & (2**64 - 1)) + (h >> 2))
        h = (h * 0xBF58476D1CE4E5B9) & (2**64 - 1)
        h ^= h >> 31
    return h & (2**63 - 1)


def _set_requires_grad(module: torch.nn.Module, flag: bool):
    for p in module.parameters():
        p.requires_grad_(flag)


def _frame_as_event_target(x_f: torch.Tensor, event_channels: int) -> torch.Tensor:
    """Frame batch replicated across polarity channels for the ℓ1 comparison."""
    if x_f.shape[1] == event_channels:
        return x_f
    gray = x_f if x_f.shape[1] == 1 else x_f.mean(dim=1, keepdim=True)
    return gray.expand(-1, event_channels, -1, -1)


def _augment_batch(x: torch.Tensor, policy: AugmentationPolicy, is_event: bool,
                   rng: torch.Generator) -> Tuple[torch.Tensor, torch.Tensor]:
    """Two independently augmented views of every sample in the batch."""
    views_a, views_b = [], []
    for i in range(x.shape[0]):
        if is_event:
            sample = EventFrame(x[i])
            if policy.use_original_as_view_a:
                views_a.append(x[i])
            else:
                views_a.append(augment_events(sample, policy, rng).data)
            views_b.append(augment_events(sample, policy, rng).data)
        else:
            sample = FrameImage(x[i])
            if policy.use_original_as_view_a:
                views_a.append(x[i])
            else:
                views_a.append(augment_frame(sample, policy, rng).data)
            views_b.append(augment_frame(sample, policy, rng).data)
    return torch.stack(views_a), torch.stack(views_b)


def _check_finite(value: torch.Tensor, term: str):
    if not torch.isfinite(value).all():
        raise NonFiniteLossError(term, float(value.detach().reshape(-1)[0]))


def train_step(frame_batch: Tuple[torch.Tensor, torch.Tensor],
               event_batch: torch.Tensor,
               bundle: ModelBundle,
               config: TrainConfig,
               weights: Optional[LossWeights] = None,
               optimizers: Optional[Optimizers] = None,
               rng_state=None,
               frame_policy: Optional[AugmentationPolicy] = None,
               event_policy: Optional[AugmentationPolicy] = None) -> LossReport:
    """One alternating update over a labeled frame batch and an event batch.

    Returns the step's LossReport with every enabled term. A fresh optimizer
    set is built when none is supplied (useful for single-step probes; pass a
    persistent one for real training).
    """
    x_f, labels = frame_batch
    x_e = event_batch
    if x_f.shape[0] == 0 or x_e.shape[0] == 0:
        raise ValueError("empty batch")
    weights = weights if weights is not None else config.weights
    opts = optimizers if optimizers is not None else Optimizers(bundle, config)
    rng = as_generator(rng_state if rng_state is not None else config.seed)
    frame_policy = frame_policy or AugmentationPolicy()
    event_policy = event_policy or AugmentationPolicy()
    cfg = bundle.config

    use_attr = config.enable_attribute_encoder
    use_fake = config.enable_fake_generation
    if use_fake and x_f.shape[0] != x_e.shape[0]:
        raise ValueError(f"fake generation needs equal batch sizes, got "
                         f"{x_f.shape[0]} frames vs {x_e.shape[0]} events")
    bundle.train()
    report: Dict[str, torch.Tensor] = {}

    # which sub-graphs this configuration actually exercises
    need_z_e = config.enable_content_discriminator or use_fake or config.enable_uncorr
    need_a_e = use_attr and (use_fake or config.enable_uncorr)
    adversarial = config.enable_content_discriminator or use_fake

    # single generator-side forward over the raw batches
    z_f = nets.encode_frame(x_f, bundle)
    z_e = nets.encode_event_content(x_e, bundle) if need_z_e else None
    a_e = nets.encode_event_attribute(x_e, bundle) if need_a_e else None
    event_attr = a_e if use_attr else bundle.expanded_null_attribute(x_e.shape[0])
    fake = None
    if use_fake:
        fake_attr = a_e if use_attr else bundle.expanded_null_attribute(x_f.shape[0])
        fake = nets.refine(nets.decode(z_f, fake_attr, bundle), bundle,
                           config.enable_refinement)

    # ---- discriminator sub-step (ascent on the relativistic values) ----
    d_objective = None
    if config.enable_content_discriminator:
        dis_cont = relativistic_pair(
            nets.discriminate_content(z_f.detach(), bundle),
            nets.discriminate_content(z_e.detach(), bundle), "discriminator")
        _check_finite(dis_cont, "dis_cont")
        report["dis_cont"] = dis_cont
        d_objective = -weights.weight_for("dis_cont") * dis_cont
    if config.enable_event_discriminator and use_fake:
        dis_e = relativistic_pair(
            nets.discriminate_event(x_e, bundle),
            nets.discriminate_event(fake.detach(), bundle), "discriminator")
        _check_finite(dis_e, "dis_e")
        report["dis_e"] = dis_e
        term = -weights.weight_for("dis_e") * dis_e
        d_objective = term if d_objective is None else d_objective + term
    if d_objective is not None:
        opts.content_disc.zero_grad(set_to_none=True)
        opts.event_disc.zero_grad(set_to_none=True)
        d_objective.backward()
        if config.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(
                list(bundle.content_discriminator.parameters())
                + list(bundle.event_discriminator.parameters()), config.grad_clip)
        opts.content_disc.step()
        opts.event_disc.step()

    # ---- generator-side sub-step ----
    _set_requires_grad(bundle.content_discriminator, False)
    _set_requires_grad(bundle.event_discriminator, False)
    try:
        g_terms: Dict[str, torch.Tensor] = {}

        g_terms["cls_frame"] = cls_loss(nets.classify(z_f, bundle), labels)

        if use_fake:
            z_fake = nets.encode_event_content(fake, bundle)
            a_fake = nets.encode_event_attribute(fake, bundle) if use_attr else None
            if config.stop_fake_cls_gradient:
                z_fake_cls = nets.encode_event_content(fake.detach(), bundle)
            else:
                z_fake_cls = z_fake
            g_terms["cls_fake"] = cls_loss(nets.classify(z_fake_cls, bundle), labels)

            recon_frame = nets.refine(
                nets.decode(z_f, bundle.expanded_null_attribute(x_f.shape[0]), bundle),
                bundle, config.enable_refinement)
            recon_event = nets.refine(nets.decode(z_e, event_attr, bundle), bundle,
                                      config.enable_refinement)
            recon_fake_attr = a_fake if use_attr else \
                bundle.expanded_null_attribute(x_f.shape[0])
            recon_fake = nets.refine(nets.decode(z_fake, recon_fake_attr, bundle),
                                     bundle, config.enable_refinement)
            frame_target = _frame_as_event_target(x_f, cfg.event_channels)
            g_terms["decoder"] = decoder_loss(recon_frame, frame_target, fake,
                                              recon_fake, x_e, recon_event)
            g_terms["cyc_cont"] = cycle_content_loss(z_f, z_fake)
            if use_attr:
                g_terms["cyc_att"] = cycle_attribute_loss(a_e, a_fake)

        if config.enable_content_discriminator:
            g_terms["enc_cont"] = relativistic_pair(
                nets.discriminate_content(z_f, bundle),
                nets.discriminate_content(z_e, bundle), "generator")
        if config.enable_event_discriminator and use_fake:
            g_terms["gen_e"] = relativistic_pair(
                nets.discriminate_event(x_e, bundle),
                nets.discriminate_event(fake, bundle), "generator")

        if adversarial:
            # the stabilizer belongs to the adversarial machinery; a purely
            # supervised configuration runs without it
            g_terms["orth"] = orth_loss(
                bundle.orth_matrices(include_attribute=need_a_e,
                                     include_refiner=use_fake and config.enable_refinement,
                                     include_decoder=use_fake),
                weights.beta)

        head = cfg.projection
        if config.enable_selfsup:
            vf_a, vf_b = _augment_batch(x_f, frame_policy, False, rng)
            ve_a, ve_b = _augment_batch(x_e, event_policy, True, rng)
            metric = config.selfsup_metric
            g_terms["selfsup_frame"] = selfsup_loss(
                nets.project(nets.encode_frame(vf_a, bundle), head, bundle, "frame"),
                nets.project(nets.encode_frame(vf_b, bundle), head, bundle, "frame"),
                metric=metric)
            g_terms["selfsup_event_cont"] = selfsup_loss(
                nets.project(nets.encode_event_content(ve_a, bundle), head, bundle,
                             "event_content"),
                nets.project(nets.encode_event_content(ve_b, bundle), head, bundle,
                             "event_content"), metric=metric)
            if use_attr:
                g_terms["selfsup_event_att"] = selfsup_loss(
                    nets.project(nets.encode_event_attribute(ve_a, bundle), head,
                                 bundle, "event_attribute"),
                    nets.project(nets.encode_event_attribute(ve_b, bundle), head,
                                 bundle, "event_attribute"), metric=metric)
        if config.enable_uncorr and use_attr:
            g_terms["uncorr"] = uncorr_loss(
                nets.project(a_e, head, bundle, "event_attribute"),
                nets.project(z_e, head, bundle, "event_content"))

        g_objective = None
        for name, value in g_terms.items():
            _check_finite(value, name)
            w = weights.weight_for(name)
            signed = -w * value if name in ("enc_cont", "gen_e") else w * value
            g_objective = signed if g_objective is None else g_objective + signed
        opts.generator.zero_grad(set_to_none=True)
        g_objective.backward()
        if config.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(
                [p for g in opts.generator.param_groups for p in g["params"]],
                config.grad_clip)
        opts.generator.step()
    finally:
        _set_requires_grad(bundle.content_discriminator, True)
        _set_requires_grad(bundle.event_discriminator, True)

    report.update(g_terms)
    return total_loss(report, weights)


class _CyclingSampler:
    """Yields shuffled index batches, reshuffling whenever the pool is exhausted."""

    def __init__(self, n: int, seed: int, tag: int):
        self.n = n
        self.seed = seed
        self.tag = tag
        self.pass_idx = 0
        self.pos = 0
        self._order = self._shuffle()

    def _shuffle(self):
        g = torch.Generator().manual_seed(derive_seed(self.seed, self.tag, self.pass_idx))
        return torch.randperm(self.n, generator=g)

    def take(self, k: int) -> torch.Tensor:
        out = []
        while k > 0:
            if self.pos >= self.n:
                self.pass_idx += 1
                self.pos = 0
                self._order = self._shuffle()
            take = min(k, self.n - self.pos)
            out.append(self._order[self.pos:self.pos + take])
            self.pos += take
            k -= take
        return torch.cat(out)


def _deterministic_mode_requested(config: TrainConfig) -> bool:
    return config.deterministic or os.environ.get(DETERMINISTIC_ENV) == "1"


def _apply_determinism(config: TrainConfig):
    if _deterministic_mode_requested(config):
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def build_bundle(net_config: NetworkConfig, seed: int) -> ModelBundle:
    """Construct a bundle with reproducible initialization."""
    torch.manual_seed(derive_seed(seed, 0x1717))
    return ModelBundle(net_config)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": ckpt.version,
        "net_config": ckpt.net_config.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
        "epoch": ckpt.epoch,
        "model_state": ckpt.model_state,
        "optim_state": ckpt.optim_state,
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path, expected_config: Optional[NetworkConfig] = None) -> Checkpoint:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or "version" not in payload:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if payload["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {payload['version']} != supported "
            f"{CHECKPOINT_VERSION}")
    net_config = NetworkConfig.from_dict(payload["net_config"])
    if expected_config is not None and net_config != expected_config:
        raise CheckpointError(
            "checkpoint network configuration does not match the requested one")
    return Checkpoint(version=payload["version"], net_config=net_config,
                      train_config=TrainConfig.from_dict(payload["train_config"]),
                      epoch=payload["epoch"], model_state=payload["model_state"],
                      optim_state=payload["optim_state"])


def bundle_from_checkpoint(ckpt: Checkpoint) -> ModelBundle:
    bundle = ModelBundle(ckpt.net_config)
    bundle.load_state_dict(ckpt.model_state)
    return bundle


def train(manifests: Mapping[str, DatasetManifest],
          net_config: NetworkConfig,
          config: TrainConfig,
          out_dir=None,
          frame_policy: Optional[AugmentationPolicy] = None,
          event_policy: Optional[AugmentationPolicy] = None,
          resume_from=None,
          record_steps: bool = False) -> TrainResult:
    """Run the full schedule over labeled frames and unlabeled events.

    ``manifests`` needs "frames_train" and "events_train"; optional
    "frames_test"/"events_test" manifests add accuracy columns to the
    per-epoch metrics CSV. An epoch is one pass over the frame data; the
    event sampler cycles independently.
    """
    from .evaluation import evaluate  # deferred: evaluation imports this module

    for key in ("frames_train", "events_train"):
        if key not in manifests:
            raise ValueError(f"manifests must include '{key}'")
    _apply_determinism(config)

    bundle = build_bundle(net_config, config.seed)
    opts = Optimizers(bundle, config)
    start_epoch = 0
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from, expected_config=net_config)
        bundle.load_state_dict(ckpt.model_state)
        opts.load_state_dict(ckpt.optim_state)
        start_epoch = ckpt.epoch + 1

    x_frames, y_frames = load_frame_tensors(
        manifests["frames_train"], net_config.frame_hw, net_config.frame_channels)
    x_events, _ = load_event_tensors(manifests["events_train"], net_config.event_hw)
    if x_frames.shape[0] == 0 or x_events.shape[0] == 0:
        raise ValueError("training manifests must be nonempty")
    eval_sets = {}
    for domain, key in (("frame", "frames_test"), ("event", "events_test")):
        if key in manifests and manifests[key] is not None:
            eval_sets[domain] = manifests[key]

    out_dir = Path(out_dir) if out_dir is not None else None
    metrics_path = None
    metrics_file = None
    writer = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "checkpoints").mkdir(exist_ok=True)
        metrics_path = out_dir / "metrics.csv"
        mode = "a" if (resume_from is not None and metrics_path.exists()) else "w"
        metrics_file = open(metrics_path, mode, newline="")
        writer = csv.writer(metrics_file)

    history: List[Dict[str, float]] = []
    step_reports: List[Dict[str, float]] = []
    header_written = resume_from is not None and metrics_path is not None \
        and metrics_path.exists() and metrics_path.stat().st_size > 0
    checkpoint_path = None

    def _write_checkpoint(epoch: int, name: str) -> Path:
        ckpt = Checkpoint(version=CHECKPOINT_VERSION, net_config=net_config,
                          train_config=config, epoch=epoch,
                          model_state=bundle.state_dict(),
                          optim_state=opts.state_dict())
        return save_checkpoint(ckpt, out_dir / "checkpoints" / name) \
            if out_dir is not None else None

    try:
        if config.epochs == 0 and out_dir is not None:
            checkpoint_path = _write_checkpoint(-1, "initial.pt")

        batch = min(config.batch_frames, x_frames.shape[0])
        event_batch_size = batch if config.enable_fake_generation else \
            min(config.batch_events, x_events.shape[0])
        frame_sampler_tag, event_sampler_tag = 0xF0, 0xE0

        for epoch in range(start_epoch, config.epochs):
            lr = schedule_lr(config.lr, epoch, config.lr_decay)
            opts.set_lr(lr)
            frame_order = torch.randperm(
                x_frames.shape[0],
                generator=torch.Generator().manual_seed(
                    derive_seed(config.seed, frame_sampler_tag, epoch)))
            events_sampler = _CyclingSampler(x_events.shape[0],
                                             derive_seed(config.seed, epoch),
                                             event_sampler_tag)
            steps = x_frames.shape[0] // batch
            sums: Dict[str, float] = {}
            for step in range(steps):
                f_idx = frame_order[step * batch:(step + 1) * batch]
                e_idx = events_sampler.take(event_batch_size)
                rng = torch.Generator().manual_seed(
                    derive_seed(config.seed, 0xA6, epoch, step))
                report = train_step((x_frames[f_idx], y_frames[f_idx]),
                                    x_events[e_idx], bundle, config,
                                    weights=config.weights, optimizers=opts,
                                    rng_state=rng, frame_policy=frame_policy,
                                    event_policy=event_policy)
                for k, v in report.as_dict().items():
                    sums[k] = sums.get(k, 0.0) + v
                if record_steps:
                    step_reports.append(
                        {"epoch": epoch, "step": step, **report.as_dict()})

            row: Dict[str, float] = {"epoch": epoch, "lr": lr}
            for k in sums:
                row[k] = sums[k] / max(1, steps)
            for domain, manifest in eval_sets.items():
                acc = evaluate(manifest, bundle, domain).accuracy
                row[f"{domain}_test_acc"] = acc
            history.append(row)
            if writer is not None:
                if not header_written:
                    writer.writerow(list(row.keys()))
                    header_written = True
                writer.writerow([row[k] for k in row])
                metrics_file.flush()

            last = epoch == config.epochs - 1
            if out_dir is not None and (last or config.checkpoint_every > 0
                                        and (epoch + 1) % config.checkpoint_every == 0):
                checkpoint_path = _write_checkpoint(epoch, f"epoch_{epoch:04d}.pt")
    finally:
        if metrics_file is not None:
            metrics_file.close()

    return TrainResult(bundle=bundle, checkpoint_path=checkpoint_path,
                       history=history, step_reports=step_reports,
                       metrics_path=metrics_path)
