"""Accuracy measurement, embedding export, the domain-alignment probe, and
scripted ablation sweeps.

The event test path uses only the event content encoder and the classifier.
Embedding dumps always use the average-pool projection so different training
configurations stay comparable; the linear domain probe turns the qualitative
"are the domains aligned?" question into a held-out balanced accuracy where
0.5 means indistinguishable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import torch

from . import nets
from .datasets import load_event_tensors, load_frame_tensors
from .event_io import DatasetManifest
from .nets import ModelBundle

DOMAINS = ("frame", "event")


@dataclass
class EvalReport:
    """Top-1 and per-class accuracy of one domain on one manifest."""

    domain: str
    accuracy: float
    per_class: List[float]
    count: int
    epoch: Optional[int] = None

    def __str__(self):
        per_cls = " ".join(f"{c}:{a:.3f}" for c, a in enumerate(self.per_class))
        return (f"domain={self.domain} n={self.count} "
                f"top1={self.accuracy:.4f} per-class [{per_cls}]")


@dataclass
class EmbeddingDump:
    """Projected content features, one row per evaluated sample."""

    domains: List[str]
    labels: np.ndarray
    vectors: np.ndarray  # (N, D)


def _domain_tensors(manifest: DatasetManifest, bundle: ModelBundle, domain: str):
    cfg = bundle.config
    if domain == "frame":
        return load_frame_tensors(manifest, cfg.frame_hw, cfg.frame_channels)
    if domain == "event":
        return load_event_tensors(manifest, cfg.event_hw)
    raise ValueError(f"domain must be one of {DOMAINS}, got {domain!r}")


def _encode_content(x: torch.Tensor, bundle: ModelBundle, domain: str) -> torch.Tensor:
    if domain == "frame":
        return nets.encode_frame(x, bundle)
    return nets.encode_event_content(x, bundle)


def evaluate(manifest: DatasetManifest, bundle: ModelBundle, domain: str,
             batch_size: int = 256, epoch: Optional[int] = None) -> EvalReport:
    """Top-1 accuracy under argmax of classify(encode(x)) for one domain."""
    if len(manifest) == 0:
        raise ValueError(f"empty manifest for split {manifest.split!r}")
    x, labels = _domain_tensors(manifest, bundle, domain)
    k = bundle.config.num_classes
    correct = torch.zeros(k)
    totals = torch.zeros(k)
    was_training = bundle.training
    bundle.eval()
    with torch.no_grad():
        for i in range(0, x.shape[0], batch_size):
            xb, yb = x[i:i + batch_size], labels[i:i + batch_size]
            pred = nets.classify(_encode_content(xb, bundle, domain), bundle).argmax(1)
            for c in range(k):
                mask = yb == c
                totals[c] += mask.sum()
                correct[c] += (pred[mask] == c).sum()
    bundle.train(was_training)
    per_class = [float(correct[c] / totals[c]) if totals[c] > 0 else 0.0
                 for c in range(k)]
    accuracy = float(correct.sum() / totals.sum())
    return EvalReport(domain=domain, accuracy=accuracy, per_class=per_class,
                      count=int(totals.sum()), epoch=epoch)


EMBED_LAYERS = ("classifier_output", "content")


def export_embeddings(manifests: Mapping[str, DatasetManifest], bundle: ModelBundle,
                      path, batch_size: int = 256,
                      layer: str = "classifier_output") -> EmbeddingDump:
    """Write ``domain,label,v0..vD-1`` rows for every sample of every manifest.

    Row order follows manifest order within each domain ("frame" first),
    so export is deterministic. ``layer`` picks the representation:
    "classifier_output" (default) is the classifier's last layer, the layer
    whose alignment the adaptation is ultimately after; "content" is the
    average-pooled content feature (the pooling is fixed to avg regardless
    of how the bundle was trained, keeping dumps comparable across configs).
    """
    if layer not in EMBED_LAYERS:
        raise ValueError(f"layer must be one of {EMBED_LAYERS}, got {layer!r}")
    doms: List[str] = []
    labs: List[int] = []
    vecs: List[np.ndarray] = []
    was_training = bundle.training
    bundle.eval()
    with torch.no_grad():
        for domain in DOMAINS:
            if domain not in manifests or manifests[domain] is None:
                continue
            x, labels = _domain_tensors(manifests[domain], bundle, domain)
            for i in range(0, x.shape[0], batch_size):
                z = _encode_content(x[i:i + batch_size], bundle, domain)
                if layer == "classifier_output":
                    v = nets.classify(z, bundle)
                else:
                    v = nets.project(z, "avg_pool", bundle)
                vecs.append(v.numpy())
                labs.extend(labels[i:i + batch_size].tolist())
                doms.extend([domain] * (min(i + batch_size, x.shape[0]) - i))
    bundle.train(was_training)
    if not vecs:
        raise ValueError("no manifests supplied")
    matrix = np.concatenate(vecs, axis=0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["domain", "label"] + [f"v{i}" for i in range(matrix.shape[1])])
        for d, lab, row in zip(doms, labs, matrix):
            writer.writerow([d, lab] + [f"{v:.8g}" for v in row])
    return EmbeddingDump(domains=doms, labels=np.array(labs), vectors=matrix)


def load_embedding_dump(path) -> EmbeddingDump:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header[:2] != ["domain", "label"]:
            raise ValueError(f"{path} is not an embedding dump")
        doms, labs, rows = [], [], []
        for row in reader:
            doms.append(row[0])
            labs.append(int(row[1]))
            rows.append([float(v) for v in row[2:]])
    return EmbeddingDump(domains=doms, labels=np.array(labs),
                         vectors=np.array(rows, dtype=np.float64))


def domain_confusion_probe(dump: EmbeddingDump, test_fraction: float = 0.5,
                           seed: int = 0) -> float:
    """Held-out balanced accuracy of a linear domain classifier.

    0.5 means the probe cannot tell frames from events (aligned domains);
    1.0 means linearly separated domains.
    """
    from sklearn.linear_model import LogisticRegression
    from sklearn.metrics import balanced_accuracy_score
    from sklearn.model_selection import train_test_split
    from sklearn.preprocessing import StandardScaler

    y = np.array([0 if d == "frame" else 1 for d in dump.domains])
    if len(np.unique(y)) < 2:
        raise ValueError("probe needs embeddings from both domains")
    x_tr, x_te, y_tr, y_te = train_test_split(
        dump.vectors, y, test_size=test_fraction, random_state=seed, stratify=y)
    scaler = StandardScaler().fit(x_tr)
    probe = LogisticRegression(max_iter=2000, random_state=seed)
    probe.fit(scaler.transform(x_tr), y_tr)
    return float(balanced_accuracy_score(y_te, probe.predict(scaler.transform(x_te))))


def run_ablation(manifests: Mapping[str, DatasetManifest],
                 net_config, base_config, grid: Sequence[Mapping],
                 out_dir=None, frame_policy=None, event_policy=None,
                 csv_path=None) -> List[Dict]:
    """Train and evaluate one run per flag combination, all from one seed.

    Each grid entry is a mapping of TrainConfig field overrides, optionally
    carrying a "name" key for the output table.
    """
    from .trainer import train  # deferred: trainer imports this module

    if not grid:
        raise ValueError("empty ablation grid")
    rows: List[Dict] = []
    for i, entry in enumerate(grid):
        entry = dict(entry)
        name = entry.pop("name", f"config_{i}")
        config = replace(base_config, **entry)
        run_dir = Path(out_dir) / name if out_dir is not None else None
        result = train(manifests, net_config, config, out_dir=run_dir,
                       frame_policy=frame_policy, event_policy=event_policy)
        row: Dict = {"name": name, **{k: entry[k] for k in sorted(entry)}}
        for domain, key in (("frame", "frames_test"), ("event", "events_test")):
            if key in manifests and manifests[key] is not None:
                row[f"{domain}_test_acc"] = evaluate(
                    manifests[key], result.bundle, domain).accuracy
        rows.append(row)
    if csv_path is not None:
        csv_path = Path(csv_path)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        keys: List[str] = []
        for row in rows:
            for k in row:
                if k not in keys:
                    keys.append(k)
        with open(csv_path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=keys)
            writer.writeheader()
            writer.writerows(rows)
    return rows
