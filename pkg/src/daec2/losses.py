"""Loss terms of the training objective and their composition.

All ℓ1 terms are element means so weights stay comparable across tensor
sizes. The adversarial terms use the relativistic-average form with
g(x) = log(sigmoid(x)) and h(x) = log(1 - sigmoid(x)), both evaluated
through log-sigmoid identities for numerical stability. The alignment
constraints are soft cosine penalties: the view-invariance term is
-cos(v_a, v_b) (optimal at -1), the decorrelation term |cos(v_att, v_cont)|
(optimal at 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Union

import torch
import torch.nn.functional as F

COS_EPS = 1e-12

# report keys of the regularizer terms controlled by the lambda trade-offs
LAMBDA_TERMS = ("selfsup_event_att", "selfsup_event_cont", "selfsup_frame", "uncorr")


class DegenerateInputError(ValueError):
    """Raised when a cosine-based loss receives an exactly zero vector."""


class NonFiniteLossError(RuntimeError):
    """Raised when a loss term evaluates to NaN or infinity."""

    def __init__(self, term: str, value: float):
        super().__init__(f"loss term '{term}' is non-finite ({value})")
        self.term = term


@dataclass
class LossWeights:
    """Trade-off scalars for the total objective.

    ``lambda1..lambda4`` weight the event-attribute invariance, event-content
    invariance, frame-content invariance, and decorrelation terms; ``beta``
    scales the orthogonality regularizer; every other term takes its weight
    from ``term_weights`` (default 1).
    """

    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    lambda4: float = 1.0
    beta: float = 1e-4
    term_weights: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4", "beta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name, w in self.term_weights.items():
            if w < 0:
                raise ValueError(f"weight for '{name}' must be nonnegative")

    def weight_for(self, term: str) -> float:
        if term in self.term_weights:
            return float(self.term_weights[term])
        lam = dict(zip(LAMBDA_TERMS, (self.lambda1, self.lambda2,
                                      self.lambda3, self.lambda4)))
        return float(lam.get(term, 1.0))


@dataclass
class LossReport:
    """Per-step record: every computed term unweighted, plus the weighted total."""

    terms: Dict[str, float]
    total: float

    def as_dict(self) -> Dict[str, float]:
        out = dict(self.terms)
        out["total"] = self.total
        return out

    def __getitem__(self, key: str) -> float:
        if key == "total":
            return self.total
        return self.terms[key]

    def __contains__(self, key: str) -> bool:
        return key == "total" or key in self.terms


def cls_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy over the batch."""
    if logits.ndim != 2:
        raise ValueError(f"expected (N, K) logits, got shape {tuple(logits.shape)}")
    k = logits.shape[1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got "
                         f"[{int(labels.min())}, {int(labels.max())}]")
    return F.cross_entropy(logits, labels)


def _l1_mean(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def decoder_loss(recon_frame: torch.Tensor, y_f: torch.Tensor,
                 fake: torch.Tensor, recon_fake: torch.Tensor,
                 y_e: torch.Tensor, recon_event: torch.Tensor) -> torch.Tensor:
    """Sum of the three mean-ℓ1 reconstruction terms.

    Frame reconstruction against the frame, fake event against its re-decoded
    version, and real event against its re-decoded version.
    """
    return (_l1_mean(recon_frame, y_f) + _l1_mean(fake, recon_fake)
            + _l1_mean(y_e, recon_event))


def cycle_content_loss(z_frame: torch.Tensor, z_fake: torch.Tensor) -> torch.Tensor:
    """Mean ℓ1 between the frame content and the fake event's re-encoded content."""
    return _l1_mean(z_frame, z_fake)


def cycle_attribute_loss(a_real: torch.Tensor, a_fake: torch.Tensor) -> torch.Tensor:
    """Mean ℓ1 between the real event's attribute and the fake event's attribute."""
    return _l1_mean(a_real, a_fake)


def relativistic_pair(logits_a: torch.Tensor, logits_b: torch.Tensor,
                      mode: str) -> torch.Tensor:
    """Relativistic-average adversarial value for one pair of logit batches.

    discriminator mode: mean of g[a_i - mean(b)] + h[b_i - mean(a)];
    generator mode swaps g and h. The value lives in (-inf, 0); the player
    that owns the mode drives it toward 0 (gradient ascent, i.e. the
    training step minimizes the negative).
    """
    a = logits_a.reshape(-1)
    b = logits_b.reshape(-1)
    if a.numel() == 0 or b.numel() == 0:
        raise ValueError("empty logit batch")
    if a.numel() != b.numel():
        raise ValueError(f"batch sizes differ: {a.numel()} vs {b.numel()}")
    da = a - b.mean()
    db = b - a.mean()
    if mode == "discriminator":
        return (F.logsigmoid(da) + F.logsigmoid(-db)).mean()
    if mode == "generator":
        return (F.logsigmoid(-da) + F.logsigmoid(db)).mean()
    raise ValueError(f"mode must be 'discriminator' or 'generator', got {mode!r}")


def orth_loss(weight_matrices, beta: float) -> torch.Tensor:
    """Off-diagonal Gram penalty β · Σ_W ||(WᵀW) ⊙ (1 - I)||²_F.

    Tensors with more than two axes are flattened to (out_features, fan_in).
    """
    total = None
    for w in weight_matrices:
        if w.ndim > 2:
            w = w.reshape(w.shape[0], -1)
        gram = w.t() @ w
        mask = 1.0 - torch.eye(gram.shape[0], dtype=gram.dtype, device=gram.device)
        term = (gram * mask).pow(2).sum()
        total = term if total is None else total + term
    if total is None:
        return torch.zeros(())
    return beta * total


def _cosine(v_a: torch.Tensor, v_b: torch.Tensor) -> torch.Tensor:
    if v_a.shape != v_b.shape:
        raise ValueError(f"shape mismatch {tuple(v_a.shape)} vs {tuple(v_b.shape)}")
    na = v_a.norm(dim=-1)
    nb = v_b.norm(dim=-1)
    if (na == 0).any() or (nb == 0).any():
        raise DegenerateInputError("zero-norm projection vector")
    dot = (v_a * v_b).sum(dim=-1)
    return dot / (na.clamp_min(COS_EPS) * nb.clamp_min(COS_EPS))


def selfsup_loss(v_a: torch.Tensor, v_b: torch.Tensor,
                 metric: str = "cos") -> torch.Tensor:
    """View-invariance penalty between two projections of one input.

    "cos" (default) is the negative cosine similarity, -1 when perfectly
    aligned; "l2" is the plain euclidean distance, 0 when aligned (the
    design-search alternative).
    """
    if metric == "cos":
        return -_cosine(v_a, v_b).mean()
    if metric == "l2":
        if v_a.shape != v_b.shape:
            raise ValueError(f"shape mismatch {tuple(v_a.shape)} vs {tuple(v_b.shape)}")
        return (v_a - v_b).norm(dim=-1).mean()
    raise ValueError(f"metric must be 'cos' or 'l2', got {metric!r}")


def uncorr_loss(v_att: torch.Tensor, v_cont: torch.Tensor) -> torch.Tensor:
    """Absolute cosine similarity between attribute and content projections."""
    return _cosine(v_att, v_cont).abs().mean()


def total_loss(report_inputs: Mapping[str, Union[float, torch.Tensor]],
               weights: LossWeights) -> LossReport:
    """Weighted sum of the supplied terms, failing fast on any non-finite one."""
    terms = {}
    total = 0.0
    for name, value in report_inputs.items():
        v = float(value.detach() if isinstance(value, torch.Tensor) else value)
        if not torch.isfinite(torch.tensor(v)):
            raise NonFiniteLossError(name, v)
        terms[name] = v
        total += weights.weight_for(name) * v
    if not torch.isfinite(torch.tensor(total)):
        raise NonFiniteLossError("total", total)
    return LossReport(terms=terms, total=total)
