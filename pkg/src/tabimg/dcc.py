"""Disentangled contrastive consistency.

Splits each modality's tokens into shared/specific parts with learned
linear maps, enforces cross-modal agreement of the shared parts with a
symmetric InfoNCE loss, penalizes shared<->specific dependence with a
variational contrastive log-ratio upper bound on mutual information, and
fuses everything through an interaction transformer block.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import torch
from torch import nn

from .attention import CrossAttentionBlock, TransformerBlock
from .errors import ConfigError

COS_EPS = 1e-12
LOGVAR_RANGE = 8.0


class ModalitySplit(nn.Module):
    """Two learned D x D linear maps: tokens -> (shared, specific)."""

    def __init__(self, dim: int):
        super().__init__()
        self.shared = nn.Linear(dim, dim, bias=False)
        self.specific = nn.Linear(dim, dim, bias=False)

    def forward(self, tokens: torch.Tensor):
        return self.shared(tokens), self.specific(tokens)


def pool(tokens: torch.Tensor) -> torch.Tensor:
    """Mean over the sequence dimension: [..., L, D] -> [..., D]."""
    if tokens.shape[-2] < 1:
        raise ConfigError("cannot pool an empty token sequence")
    return tokens.mean(dim=-2)


def _cosine_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    a_n = a / (a.norm(dim=1, keepdim=True) + COS_EPS)
    b_n = b / (b.norm(dim=1, keepdim=True) + COS_EPS)
    return a_n @ b_n.T


def contrastive_consistency_loss(z_img: torch.Tensor, z_tab: torch.Tensor,
                                 kappa: float) -> torch.Tensor:
    """Symmetric InfoNCE over projected shared embeddings.

    Row b of each argument is one subject; negatives are the other rows of
    the opposite modality.
    """
    if kappa <= 0:
        raise ConfigError("kappa must be > 0")
    n = z_img.shape[0]
    logits = _cosine_matrix(z_img, z_tab) / kappa    # [N, N]
    labels = torch.arange(n, device=z_img.device)
    loss_it = nn.functional.cross_entropy(logits, labels)
    loss_ti = nn.functional.cross_entropy(logits.T, labels)
    return 0.5 * (loss_it + loss_ti)


class VarNet(nn.Module):
    """Diagonal-Gaussian variational conditional q(b | a), a 2-layer MLP.

    Outputs a mean and a log-variance in R^D; log-variance is clamped to
    [-8, 8] for stability.
    """

    def __init__(self, dim: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden or dim
        self.body = nn.Sequential(nn.Linear(dim, hidden), nn.ReLU())
        self.mean_head = nn.Linear(hidden, dim)
        self.logvar_head = nn.Linear(hidden, dim)

    def forward(self, a: torch.Tensor):
        h = self.body(a)
        mean = self.mean_head(h)
        logvar = self.logvar_head(h).clamp(-LOGVAR_RANGE, LOGVAR_RANGE)
        return mean, logvar


def _pairwise_log_density(mean: torch.Tensor, logvar: torch.Tensor,
                          b: torch.Tensor) -> torch.Tensor:
    """log q(b_k | a_j) for all pairs -> [N, N], row j conditions on a_j."""
    d = b.shape[1]
    diff = b.unsqueeze(0) - mean.unsqueeze(1)          # [j, k, D]
    var = logvar.exp().unsqueeze(1)                    # [j, 1, D]
    quad = (diff ** 2 / var).sum(-1)                   # [j, k]
    logdet = logvar.sum(-1, keepdim=True)              # [j, 1]
    return -0.5 * (quad + logdet + d * math.log(2 * math.pi))


def vclub_estimate(a: torch.Tensor, b: torch.Tensor, varnet: VarNet) -> torch.Tensor:
    """Sampled upper bound on MI(a, b) using the variational conditional.

    (1/N^2) sum_jk [log q(b_j|a_j) - log q(b_k|a_j)]; the caller is
    responsible for freezing the variational net's parameters.
    """
    mean, logvar = varnet(a)
    logq = _pairwise_log_density(mean, logvar, b)
    return logq.diagonal().mean() - logq.mean()


def varnet_loglik(a: torch.Tensor, b: torch.Tensor, varnet: VarNet) -> torch.Tensor:
    """(1/N) sum_j log q(b_j | a_j)."""
    mean, logvar = varnet(a)
    d = b.shape[1]
    quad = ((b - mean) ** 2 / logvar.exp()).sum(-1)
    return (-0.5 * (quad + logvar.sum(-1) + d * math.log(2 * math.pi))).mean()


def disentanglement_loss(z_specific: torch.Tensor, z_shared: torch.Tensor,
                         varnet: VarNet) -> torch.Tensor:
    """MI upper bound minus variational log-likelihood, a = specific, b = shared.

    The log-likelihood term is evaluated on detached representations: it
    belongs to the variational net's maximization problem, so the encoders
    receive gradient only through the vCLUB term.
    """
    return (vclub_estimate(z_specific, z_shared, varnet)
            - varnet_loglik(z_specific.detach(), z_shared.detach(), varnet))


def dcc_loss(l_cc: torch.Tensor, l_ds_img: torch.Tensor, l_ds_tab: torch.Tensor,
             beta: float, gamma: float) -> torch.Tensor:
    if beta < 0 or gamma < 0:
        raise ConfigError("beta and gamma must be >= 0")
    return beta * l_cc + gamma * (l_ds_img + l_ds_tab)


class FuseShared(nn.Module):
    """Linear map of the concatenated pooled shared vectors: R^{2D} -> R^D."""

    def __init__(self, dim: int):
        super().__init__()
        self.linear = nn.Linear(2 * dim, dim)

    def forward(self, z_img_shared: torch.Tensor, z_tab_shared: torch.Tensor):
        return self.linear(torch.cat([z_img_shared, z_tab_shared], dim=-1))


class InteractionLayer(nn.Module):
    """Intra- and inter-modality interaction.

    The fused shared vector cross-attends over [z_s; I_c; T_c]; each
    modality's specific tokens pass through their own self-attention block.
    """

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.cross = CrossAttentionBlock(dim, num_heads)
        self.self_img = TransformerBlock(dim, num_heads)
        self.self_tab = TransformerBlock(dim, num_heads)

    def forward(self, z_shared: torch.Tensor, img_specific: torch.Tensor,
                tab_specific: torch.Tensor):
        """z_shared [N, D]; img_specific [N, L_i, D]; tab_specific [N, L_t, D].

        Returns (enhanced shared [N, D], enhanced image tokens, enhanced
        tabular tokens).
        """
        query = z_shared.unsqueeze(1)                          # [N, 1, D]
        kv = torch.cat([query, img_specific, tab_specific], dim=1)
        z_hat = self.cross(query, kv).squeeze(1)
        img_hat = self.self_img(img_specific)
        tab_hat = self.self_tab(tab_specific)
        return z_hat, img_hat, tab_hat


@contextmanager
def frozen(module: nn.Module):
    """Temporarily block gradients into a module's parameters."""
    states = [p.requires_grad for p in module.parameters()]
    for p in module.parameters():
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, s in zip(module.parameters(), states):
            p.requires_grad_(s)
