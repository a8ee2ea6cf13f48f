"""Image and tabular encoders producing token sequences [L, D].

The image encoder is a small conv stack: each stage halves the spatial
resolution, and the final feature map is flattened into one token per
spatial cell with a linear projection to the token dim. The tabular
encoder assigns one token per column (embedding lookup for categoricals,
value-scaled direction vector for continuous), adds a learned column
embedding, and runs a small pre-norm transformer.
"""

from __future__ import annotations

import torch
from torch import nn

from .attention import TransformerBlock
from .errors import ConfigError


class ImageEncoder(nn.Module):
    def __init__(self, in_channels: int, stage_channels: list[int], token_dim: int):
        super().__init__()
        layers = []
        prev = in_channels
        for ch in stage_channels:
            layers += [nn.Conv2d(prev, ch, kernel_size=3, stride=2, padding=1),
                       nn.GroupNorm(1, ch), nn.ReLU()]
            prev = ch
        self.stages = nn.Sequential(*layers)
        self.proj = nn.Linear(prev, token_dim)
        self.num_stages = len(stage_channels)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """images [N, C, H, W] -> tokens [N, L_i, D] with L_i = (H/2^s)*(W/2^s)."""
        if images.ndim != 4:
            raise ConfigError("image batch must be [N, C, H, W]")
        feat = self.stages(images)                      # [N, ch, h, w]
        n, ch, h, w = feat.shape
        tokens = feat.reshape(n, ch, h * w).transpose(1, 2)  # [N, h*w, ch]
        return self.proj(tokens)


class TabularEncoder(nn.Module):
    """One token per column, then a small transformer over the columns."""

    def __init__(self, column_kinds: list[str], cardinalities: list[int | None],
                 token_dim: int, num_layers: int = 2, num_heads: int = 4):
        super().__init__()
        self.column_kinds = list(column_kinds)
        self.num_columns = len(column_kinds)
        self.value_embeds = nn.ModuleList()
        for kind, card in zip(column_kinds, cardinalities):
            if kind == "categorical":
                self.value_embeds.append(nn.Embedding(card, token_dim))
            else:
                # continuous: scalar value times a learned direction
                self.value_embeds.append(nn.Linear(1, token_dim, bias=False))
        self.column_embed = nn.Parameter(torch.zeros(self.num_columns, token_dim))
        nn.init.normal_(self.column_embed, std=0.02)
        self.blocks = nn.ModuleList([
            TransformerBlock(token_dim, num_heads) for _ in range(num_layers)])

    def tokenize(self, rows: torch.Tensor) -> torch.Tensor:
        """rows [N, L_t] -> pre-transformer tokens [N, L_t, D]."""
        if rows.shape[1] != self.num_columns:
            raise ConfigError(f"expected {self.num_columns} columns, "
                              f"got {rows.shape[1]}")
        tokens = []
        for j, (kind, emb) in enumerate(zip(self.column_kinds, self.value_embeds)):
            col = rows[:, j]
            if kind == "categorical":
                tokens.append(emb(col.long()))
            else:
                tokens.append(emb(col.unsqueeze(-1)))
        out = torch.stack(tokens, dim=1)
        return out + self.column_embed

    def forward(self, rows: torch.Tensor) -> torch.Tensor:
        tokens = self.tokenize(rows)
        for block in self.blocks:
            tokens = block(tokens)
        return tokens
