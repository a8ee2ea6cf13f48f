"""Classifier and projection heads.

Three independent softmax classifiers (multimodal, image-only,
tabular-only) and three 2-layer projection MLPs mapping representations
into a 128-dim contrastive space.
"""

from __future__ import annotations

import torch
from torch import nn


def _activation(name: str) -> nn.Module:
    return nn.GELU() if name == "gelu" else nn.ReLU()


class SoftmaxClassifier(nn.Module):
    def __init__(self, in_dim: int, num_classes: int):
        super().__init__()
        self.linear = nn.Linear(in_dim, num_classes)

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        return self.linear(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.linear(x), dim=-1)


class ProjectionHead(nn.Module):
    """2-layer MLP with a hidden width equal to the input dim."""

    def __init__(self, in_dim: int, out_dim: int = 128, activation: str = "relu"):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, in_dim), _activation(activation),
            nn.Linear(in_dim, out_dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class Heads(nn.Module):
    """All classifier/projection heads of the model.

    - multimodal classifier on concat(img specific, fused shared, tab specific)
    - image classifier on concat(pooled image shared, fused image specific)
    - tabular classifier on concat(pooled tabular shared, fused tabular specific)
    - g projections for the contrastive consistency loss, h for prototypes
    """

    def __init__(self, dim: int, num_classes: int, proj_dim: int = 128,
                 activation: str = "relu"):
        super().__init__()
        self.classifier_m = SoftmaxClassifier(3 * dim, num_classes)
        self.classifier_i = SoftmaxClassifier(2 * dim, num_classes)
        self.classifier_t = SoftmaxClassifier(2 * dim, num_classes)
        self.proj_g_img = ProjectionHead(dim, proj_dim, activation)
        self.proj_g_tab = ProjectionHead(dim, proj_dim, activation)
        self.proj_h = ProjectionHead(3 * dim, proj_dim, activation)

    def classify_m(self, img_spec: torch.Tensor, z_shared: torch.Tensor,
                   tab_spec: torch.Tensor) -> torch.Tensor:
        return self.classifier_m(torch.cat([img_spec, z_shared, tab_spec], dim=-1))

    def classify_i(self, z_img_shared: torch.Tensor,
                   img_spec: torch.Tensor) -> torch.Tensor:
        return self.classifier_i(torch.cat([z_img_shared, img_spec], dim=-1))

    def classify_t(self, z_tab_shared: torch.Tensor,
                   tab_spec: torch.Tensor) -> torch.Tensor:
        return self.classifier_t(torch.cat([z_tab_shared, tab_spec], dim=-1))

    def project_h(self, img_spec: torch.Tensor, z_shared: torch.Tensor,
                  tab_spec: torch.Tensor) -> torch.Tensor:
        return self.proj_h(torch.cat([img_spec, z_shared, tab_spec], dim=-1))
