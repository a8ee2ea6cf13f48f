"""Prototype-guided label smoothing.

A running per-class sum of projected embeddings is folded into class
prototypes at each epoch end; prototype similarity scores then smooth the
pseudo-label distributions, and a prototypical contrastive loss pulls
embeddings toward their class prototype.
"""

from __future__ import annotations

import torch

from .dcc import COS_EPS
from .errors import ConfigError

LOG_EPS = 1e-12


class PrototypeStore:
    """Single-writer accumulator of per-class embedding sums and counts.

    `finalize` turns the sums into mean prototypes and resets; classes with
    no qualifying samples in an epoch keep their previous prototype.
    """

    def __init__(self, num_classes: int, dim: int):
        self.num_classes = num_classes
        self.dim = dim
        self.sums = torch.zeros(num_classes, dim)
        self.counts = torch.zeros(num_classes)
        self.prototypes = torch.full((num_classes, dim), float("nan"))
        self.has_prototype = torch.zeros(num_classes, dtype=torch.bool)
        self.epoch = 0

    def accumulate(self, embedding: torch.Tensor, class_idx: int, weight: float):
        if not (0 <= class_idx < self.num_classes):
            raise ConfigError(f"class index {class_idx} out of range")
        if weight == 0:
            return
        self.sums[class_idx] += weight * embedding.detach()
        self.counts[class_idx] += weight

    def accumulate_batch(self, embeddings: torch.Tensor, classes: torch.Tensor,
                         weights: torch.Tensor):
        for v, c, w in zip(embeddings.detach(), classes.tolist(), weights.tolist()):
            self.accumulate(v, int(c), float(w))

    def finalize(self):
        """Epoch-end barrier: compute means, carry stale classes forward."""
        for c in range(self.num_classes):
            if self.counts[c] > 0:
                self.prototypes[c] = self.sums[c] / self.counts[c]
                self.has_prototype[c] = True
        self.sums.zero_()
        self.counts.zero_()
        self.epoch += 1

    @property
    def complete(self) -> bool:
        """True when every class has a prototype, enabling smoothing."""
        return bool(self.has_prototype.all())

    def state_dict(self) -> dict:
        return {"sums": self.sums, "counts": self.counts,
                "prototypes": self.prototypes,
                "has_prototype": self.has_prototype, "epoch": self.epoch}

    def load_state_dict(self, state: dict):
        self.sums = state["sums"].clone()
        self.counts = state["counts"].clone()
        self.prototypes = state["prototypes"].clone()
        self.has_prototype = state["has_prototype"].clone()
        self.epoch = int(state["epoch"])


def prototype_similarity(v: torch.Tensor, prototypes: torch.Tensor) -> torch.Tensor:
    """Softmax of raw prototype/embedding dot products.

    v [N, D] or [D]; prototypes [C, D] (all present) -> scores on the simplex.
    """
    if torch.isnan(prototypes).any():
        raise ConfigError("prototype similarity requires all prototypes present")
    logits = v @ prototypes.T
    return torch.softmax(logits, dim=-1)


def smooth(p: torch.Tensor, p_m: torch.Tensor, q: torch.Tensor,
           r: float) -> tuple[torch.Tensor, torch.Tensor]:
    """Convex blend of predictions with prototype similarity scores."""
    if not (0 <= r <= 1):
        raise ConfigError("r must be in [0, 1]")
    return r * p + (1 - r) * q, r * p_m + (1 - r) * q


def _cosine_to_prototypes(v: torch.Tensor, prototypes: torch.Tensor) -> torch.Tensor:
    v_n = v / (v.norm(dim=-1, keepdim=True) + COS_EPS)
    p_n = prototypes / (prototypes.norm(dim=-1, keepdim=True) + COS_EPS)
    return v_n @ p_n.T


def prototypical_contrastive_loss(labeled_v: torch.Tensor, labeled_y: torch.Tensor,
                                  unlabeled_v: torch.Tensor,
                                  unlabeled_y: torch.Tensor,
                                  unlabeled_confident: torch.Tensor,
                                  prototypes: torch.Tensor,
                                  kappa: float) -> torch.Tensor:
    """Pull embeddings toward their class prototype, push from the others.

    Labeled term averages over the labeled batch; the unlabeled term is
    gated per sample by the confidence indicator but still averaged over
    the full unlabeled batch size.
    """
    if kappa <= 0:
        raise ConfigError("kappa must be > 0")
    loss = prototypes.sum() * 0.0
    if labeled_v.shape[0] > 0:
        logits = _cosine_to_prototypes(labeled_v, prototypes) / kappa
        logp = torch.log_softmax(logits, dim=-1)
        loss = loss - logp[torch.arange(labeled_v.shape[0]), labeled_y].mean()
    if unlabeled_v.shape[0] > 0:
        logits = _cosine_to_prototypes(unlabeled_v, prototypes) / kappa
        logp = torch.log_softmax(logits, dim=-1)
        gated = unlabeled_confident.to(logp.dtype) * \
            logp[torch.arange(unlabeled_v.shape[0]), unlabeled_y]
        loss = loss - gated.sum() / unlabeled_v.shape[0]
    return loss
