"""Composite training loss: cross-entropy, Dice, Lovasz-Softmax and margin
contrastive terms, combined with epoch-phased weights.

All loss functions are pure functions of their tensor inputs and are safe to
call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

PHASE_NAMES = ("warm-up", "refinement", "optimization", "convergence")

# (ce, dice, lovasz, contrastive) per phase; overridable via config.
DEFAULT_PHASE_WEIGHTS = {
    "warm-up": (1.0, 0.1, 0.0, 0.0),
    "refinement": (1.0, 0.5, 0.0, 0.3),
    "optimization": (0.7, 0.5, 1.0, 0.3),
    "convergence": (0.5, 0.5, 0.5, 0.25),
}
DEFAULT_PHASE_BOUNDARIES = (0, 10, 30, 60, 100)


@dataclass(frozen=True)
class Phase:
    """One training phase: half-open epoch interval [start, end) and its loss weights."""

    name: str
    start: int
    end: int
    weights: Tuple[float, float, float, float]


@dataclass(frozen=True)
class PhaseSchedule:
    """Ordered phases partitioning [0, epochs) with per-phase loss weights."""

    phases: Tuple[Phase, ...]

    @property
    def epochs(self) -> int:
        return self.phases[-1].end

    def weights_at(self, epoch: int) -> Tuple[float, float, float, float]:
        return weights_at(self, epoch)

    def scaled_to(self, epochs: int) -> "PhaseSchedule":
        """Proportionally rescale phase boundaries onto [0, epochs)."""
        if epochs < len(self.phases):
            raise ValueError(f"cannot fit {len(self.phases)} phases into {epochs} epochs")
        total = self.epochs
        bounds = [round(p.start * epochs / total) for p in self.phases] + [epochs]
        # keep boundaries strictly increasing after rounding
        for i in range(1, len(bounds)):
            bounds[i] = max(bounds[i], bounds[i - 1] + 1)
        bounds[-1] = epochs
        phases = tuple(
            Phase(p.name, bounds[i], bounds[i + 1], p.weights)
            for i, p in enumerate(self.phases)
        )
        return PhaseSchedule(phases)

    def validation_errors(self) -> list:
        errs = []
        if not self.phases:
            return ["phase_schedule.phases: empty"]
        if self.phases[0].start != 0:
            errs.append("phase_schedule: first phase must start at epoch 0")
        for i, p in enumerate(self.phases):
            if p.end <= p.start:
                errs.append(f"phase_schedule.{p.name}: empty interval [{p.start}, {p.end})")
            if i > 0 and p.start != self.phases[i - 1].end:
                errs.append(
                    f"phase_schedule.{p.name}: starts at {p.start}, previous phase ends "
                    f"at {self.phases[i - 1].end} (gap or overlap)"
                )
            if any(w < 0 for w in p.weights):
                errs.append(f"phase_schedule.{p.name}: negative loss weight {p.weights}")
            if not any(w > 0 for w in p.weights):
                errs.append(f"phase_schedule.{p.name}: all loss weights zero")
        return errs

    def to_dict(self) -> dict:
        return {
            "phases": [
                {"name": p.name, "start": p.start, "end": p.end, "weights": list(p.weights)}
                for p in self.phases
            ]
        }

    @staticmethod
    def from_dict(d: dict) -> "PhaseSchedule":
        return PhaseSchedule(
            tuple(
                Phase(p["name"], int(p["start"]), int(p["end"]), tuple(float(w) for w in p["weights"]))
                for p in d["phases"]
            )
        )


def default_phase_schedule(epochs: int = 100) -> PhaseSchedule:
    """Four-phase schedule with boundaries 0/10/30/60/100, rescaled to `epochs`."""
    b = DEFAULT_PHASE_BOUNDARIES
    phases = tuple(
        Phase(name, b[i], b[i + 1], DEFAULT_PHASE_WEIGHTS[name])
        for i, name in enumerate(PHASE_NAMES)
    )
    sched = PhaseSchedule(phases)
    if epochs != sched.epochs:
        sched = sched.scaled_to(epochs)
    return sched


def weights_at(schedule: PhaseSchedule, epoch: int) -> Tuple[float, float, float, float]:
    """Loss weight vector of the phase whose half-open interval contains `epoch`."""
    if epoch < 0 or epoch >= schedule.epochs:
        raise ValueError(f"epoch {epoch} outside schedule range [0, {schedule.epochs})")
    for p in schedule.phases:
        if p.start <= epoch < p.end:
            return p.weights
    raise ValueError(f"epoch {epoch} not covered by any phase")  # unreachable if validated


def phase_at(schedule: PhaseSchedule, epoch: int) -> Phase:
    if epoch < 0 or epoch >= schedule.epochs:
        raise ValueError(f"epoch {epoch} outside schedule range [0, {schedule.epochs})")
    for p in schedule.phases:
        if p.start <= epoch < p.end:
            return p
    raise ValueError(f"epoch {epoch} not covered by any phase")


def _check_labels(target: torch.Tensor, num_classes: int) -> None:
    if target.numel() == 0:
        raise ValueError("empty target")
    lo, hi = int(target.min()), int(target.max())
    if lo < 0 or hi >= num_classes:
        raise ValueError(f"label out of range: values span [{lo}, {hi}], expected [0, {num_classes})")


def ce_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel cross-entropy.

    `target` is either a hard label map [B,H,W] or a per-pixel soft label
    distribution [B,K,H,W] summing to 1 over classes.
    """
    if target.dim() == logits.dim():
        # soft labels
        if target.shape != logits.shape:
            raise ValueError(f"soft target shape {tuple(target.shape)} != logits {tuple(logits.shape)}")
        logp = F.log_softmax(logits, dim=1)
        return -(target * logp).sum(dim=1).mean()
    _check_labels(target, logits.shape[1])
    return F.cross_entropy(logits, target.long())


def dice_loss(logits: torch.Tensor, target: torch.Tensor, eps: float = 1.0) -> torch.Tensor:
    """Soft Dice loss over classes present in the ground truth."""
    num_classes = logits.shape[1]
    _check_labels(target, num_classes)
    probs = F.softmax(logits, dim=1)
    dices = []
    for c in range(num_classes):
        gt = (target == c).to(probs.dtype)
        if gt.sum() == 0:
            continue
        p = probs[:, c]
        inter = (p * gt).sum()
        dices.append((2.0 * inter + eps) / (p.sum() + gt.sum() + eps))
    return 1.0 - torch.stack(dices).mean()


def _lovasz_grad(gt_sorted: torch.Tensor) -> torch.Tensor:
    """Gradient of the Jaccard-loss Lovasz extension w.r.t. sorted errors."""
    p = len(gt_sorted)
    gts = gt_sorted.sum()
    intersection = gts - gt_sorted.cumsum(0)
    union = gts + (1.0 - gt_sorted).cumsum(0)
    jaccard = 1.0 - intersection / union
    if p > 1:
        jaccard = jaccard.clone()
        jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def lovasz_softmax_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Lovasz-Softmax: mean over present classes of the sorted-error Jaccard surrogate."""
    num_classes = logits.shape[1]
    _check_labels(target, num_classes)
    probs = F.softmax(logits, dim=1)
    flat = probs.permute(0, 2, 3, 1).reshape(-1, num_classes) if logits.dim() == 4 else probs.reshape(-1, num_classes)
    labels = target.reshape(-1)
    losses = []
    for c in range(num_classes):
        fg = (labels == c).to(flat.dtype)
        if fg.sum() == 0:
            continue
        errors = (fg - flat[:, c]).abs()
        errors_sorted, perm = torch.sort(errors, dim=0, descending=True)
        grad = _lovasz_grad(fg[perm])
        losses.append(torch.dot(errors_sorted, grad))
    return torch.stack(losses).mean()


def contrastive_loss(
    feat1: torch.Tensor,
    feat2: torch.Tensor,
    change_mask: torch.Tensor,
    margin: float = 1.0,
) -> torch.Tensor:
    """Margin contrastive loss on L2-normalized per-pixel feature vectors.

    Unchanged pixels (mask == 0) pull the two temporal features together (d^2),
    changed pixels push them beyond `margin` (hinge^2). The mask is binarized
    and nearest-downsampled to the feature resolution if needed.
    """
    if feat1.shape != feat2.shape:
        raise ValueError(f"feature shape mismatch: {tuple(feat1.shape)} vs {tuple(feat2.shape)}")
    mask = (change_mask > 0).to(feat1.dtype)
    if mask.dim() == 2:
        mask = mask.unsqueeze(0)
    if mask.shape[-2:] != feat1.shape[-2:]:
        mask = F.interpolate(mask.unsqueeze(1), size=feat1.shape[-2:], mode="nearest").squeeze(1)
    n1 = F.normalize(feat1, dim=1, eps=1e-8)
    n2 = F.normalize(feat2, dim=1, eps=1e-8)
    d = (n1 - n2).pow(2).sum(dim=1).clamp_min(1e-12).sqrt()
    pull = (1.0 - mask) * d.pow(2)
    push = mask * F.relu(margin - d).pow(2)
    return (pull + push).mean()


def composite_loss(
    logits: torch.Tensor,
    target: torch.Tensor,
    epoch: int,
    schedule: PhaseSchedule,
    feats: Optional[Tuple[torch.Tensor, torch.Tensor]] = None,
    soft_target: Optional[torch.Tensor] = None,
    dice_eps: float = 1.0,
    margin: float = 1.0,
) -> Tuple[torch.Tensor, dict]:
    """Weighted sum of the four loss terms with weights from `schedule` at `epoch`.

    Terms with zero weight are not evaluated. Returns the total plus a float
    breakdown for logging; soft targets (MixUp) feed only the CE term, the set
    losses and the contrastive mask use the hard `target`.
    """
    lam = weights_at(schedule, epoch)
    components = {"ce": 0.0, "dice": 0.0, "lovasz": 0.0, "contrastive": 0.0}
    total = logits.new_zeros(())
    if lam[0] > 0:
        c = ce_loss(logits, soft_target if soft_target is not None else target)
        components["ce"] = float(c)
        total = total + lam[0] * c
    if lam[1] > 0:
        c = dice_loss(logits, target, eps=dice_eps)
        components["dice"] = float(c)
        total = total + lam[1] * c
    if lam[2] > 0:
        c = lovasz_softmax_loss(logits, target)
        components["lovasz"] = float(c)
        total = total + lam[2] * c
    if lam[3] > 0:
        if feats is None:
            raise ValueError("contrastive weight is nonzero but no feature pair was provided")
        c = contrastive_loss(feats[0], feats[1], target, margin=margin)
        components["contrastive"] = float(c)
        total = total + lam[3] * c
    components["total"] = float(total)
    components["lambdas"] = tuple(lam)
    return total, components
