"""Consensus-guided pseudo-labeling.

Classifier-agreement cases, pseudo-label construction, selective update
masks, and the confidence-gated unlabeled classification loss. Argmax ties
break toward the lowest class index everywhere for determinism.
"""

from __future__ import annotations

from enum import Enum

import numpy as np
import torch

LOG_EPS = 1e-12


class ConsensusCase(Enum):
    CASE1 = "case1"    # all three classifiers agree
    CASE2I = "case2i"  # multimodal agrees with image only
    CASE2T = "case2t"  # multimodal agrees with tabular only
    CASE3 = "case3"    # no agreement with the multimodal classifier

    @property
    def index(self) -> int:
        return list(ConsensusCase).index(self)


def _argmax(p: torch.Tensor) -> torch.Tensor:
    # torch.argmax returns the first maximal index: lowest-class tie-break
    return torch.argmax(p, dim=-1)


def determine_case(p_m: torch.Tensor, p_i: torch.Tensor,
                   p_t: torch.Tensor) -> list[ConsensusCase]:
    """Per-sample consensus case from the three probability rows [N, C]."""
    am, ai, at = _argmax(p_m), _argmax(p_i), _argmax(p_t)
    cases = []
    for m, i, t in zip(am.tolist(), ai.tolist(), at.tolist()):
        if m == i and m == t:
            cases.append(ConsensusCase.CASE1)
        elif m == i:
            cases.append(ConsensusCase.CASE2I)
        elif m == t:
            cases.append(ConsensusCase.CASE2T)
        else:
            cases.append(ConsensusCase.CASE3)
    return cases


def make_pseudo_label(cases: list[ConsensusCase], p_m: torch.Tensor,
                      p_i: torch.Tensor, p_t: torch.Tensor) -> torch.Tensor:
    """Average ensemble of the consensus classifiers per case -> [N, C]."""
    out = torch.empty_like(p_m)
    for b, case in enumerate(cases):
        if case is ConsensusCase.CASE1:
            out[b] = (p_m[b] + p_i[b] + p_t[b]) / 3.0
        elif case is ConsensusCase.CASE2I:
            out[b] = (p_m[b] + p_i[b]) / 2.0
        elif case is ConsensusCase.CASE2T:
            out[b] = (p_m[b] + p_t[b]) / 2.0
        else:
            out[b] = p_m[b]
    return out


def select_update_targets(cases: list[ConsensusCase],
                          rng: np.random.Generator) -> list[frozenset]:
    """Classifier subsets to update per sample; Case 3 picks i or t at random."""
    masks = []
    for case in cases:
        if case is ConsensusCase.CASE1:
            masks.append(frozenset({"m", "i", "t"}))
        elif case is ConsensusCase.CASE2I:
            masks.append(frozenset({"t"}))
        elif case is ConsensusCase.CASE2T:
            masks.append(frozenset({"i"}))
        else:
            masks.append(frozenset({"i"}) if rng.random() < 0.5
                         else frozenset({"t"}))
    return masks


def cross_entropy(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """H(pred, target) with target as the label distribution, per row."""
    return -(target * torch.log(pred.clamp_min(LOG_EPS))).sum(dim=-1)


def unlabeled_loss(p_m: torch.Tensor, p_i: torch.Tensor, p_t: torch.Tensor,
                   target: torch.Tensor, target_m: torch.Tensor,
                   masks: list[frozenset], tau: float) -> torch.Tensor:
    """Confidence-gated, selectively-masked cross-entropy over the unlabeled batch.

    p_* are the student's probabilities; target / target_m are the smoothed
    pseudo-label distributions from the teacher side (no gradient). A sample
    contributes only when max(target_m) >= tau, and only the classifiers in
    its mask are penalized. Averaged over the full unlabeled batch size.
    """
    n = p_m.shape[0]
    target = target.detach()
    confident = target_m.detach().max(dim=-1).values >= tau
    total = p_m.sum() * 0.0
    preds = {"m": p_m, "i": p_i, "t": p_t}
    for b in range(n):
        if not confident[b]:
            continue
        for key in masks[b]:
            total = total + cross_entropy(preds[key][b], target[b])
    return total / n
