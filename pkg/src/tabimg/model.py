"""Full student network: encoders, shared/specific splits, fusion,
interaction, classifiers and projection heads, plus the variational nets
used by the disentanglement penalty."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .config import RunConfig
from .data import TabularSchema
from .dcc import FuseShared, InteractionLayer, ModalitySplit, VarNet, pool
from .encoders import ImageEncoder, TabularEncoder
from .heads import Heads


@dataclass
class ForwardOut:
    """Everything a training step needs from one forward pass."""
    img_shared: torch.Tensor      # [N, L_i, D]
    img_specific: torch.Tensor
    tab_shared: torch.Tensor      # [N, L_t, D]
    tab_specific: torch.Tensor
    z_img_shared: torch.Tensor    # pooled [N, D]
    z_tab_shared: torch.Tensor
    z_img_specific: torch.Tensor  # pooled pre-interaction [N, D]
    z_tab_specific: torch.Tensor
    z_shared: torch.Tensor        # fused shared [N, D]
    z_shared_hat: torch.Tensor    # after interaction [N, D]
    z_img_specific_hat: torch.Tensor
    z_tab_specific_hat: torch.Tensor
    p_m: torch.Tensor             # [N, C]
    p_i: torch.Tensor
    p_t: torch.Tensor
    g_img: torch.Tensor           # [N, proj]
    g_tab: torch.Tensor
    v: torch.Tensor               # prototype-space embedding [N, proj]


class MultimodalNet(nn.Module):
    def __init__(self, cfg: RunConfig, schema: TabularSchema, num_classes: int,
                 image_channels: int = 1):
        super().__init__()
        d = cfg.token_dim
        self.image_encoder = ImageEncoder(image_channels, cfg.stage_channels(), d)
        self.tabular_encoder = TabularEncoder(
            [c.kind for c in schema.columns],
            [c.cardinality for c in schema.columns],
            d, num_layers=cfg.tabular_layers, num_heads=cfg.tabular_heads)
        self.split_img = ModalitySplit(d)
        self.split_tab = ModalitySplit(d)
        self.fuse = FuseShared(d)
        self.interaction = InteractionLayer(d, cfg.attn_heads)
        self.heads = Heads(d, num_classes, cfg.proj_dim, cfg.head_activation)
        self.num_classes = num_classes

    def forward(self, images: torch.Tensor, rows: torch.Tensor) -> ForwardOut:
        img_tokens = self.image_encoder(images)
        tab_tokens = self.tabular_encoder(rows)
        img_s, img_c = self.split_img(img_tokens)
        tab_s, tab_c = self.split_tab(tab_tokens)
        z_is, z_ts = pool(img_s), pool(tab_s)
        z_ic, z_tc = pool(img_c), pool(tab_c)
        z_shared = self.fuse(z_is, z_ts)
        z_hat, img_hat, tab_hat = self.interaction(z_shared, img_c, tab_c)
        z_ic_hat, z_tc_hat = pool(img_hat), pool(tab_hat)
        return ForwardOut(
            img_shared=img_s, img_specific=img_c,
            tab_shared=tab_s, tab_specific=tab_c,
            z_img_shared=z_is, z_tab_shared=z_ts,
            z_img_specific=z_ic, z_tab_specific=z_tc,
            z_shared=z_shared, z_shared_hat=z_hat,
            z_img_specific_hat=z_ic_hat, z_tab_specific_hat=z_tc_hat,
            p_m=self.heads.classify_m(z_ic_hat, z_hat, z_tc_hat),
            p_i=self.heads.classify_i(z_is, z_ic_hat),
            p_t=self.heads.classify_t(z_ts, z_tc_hat),
            g_img=self.heads.proj_g_img(z_is),
            g_tab=self.heads.proj_g_tab(z_ts),
            v=self.heads.project_h(z_ic_hat, z_hat, z_tc_hat),
        )


class VarNetPair(nn.Module):
    """One variational conditional per modality (specific -> shared)."""

    def __init__(self, dim: int):
        super().__init__()
        self.image = VarNet(dim)
        self.tabular = VarNet(dim)
