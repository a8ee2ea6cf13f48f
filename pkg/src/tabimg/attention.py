"""Minimal multi-head attention and pre-norm transformer blocks.

Written out by hand (rather than nn.MultiheadAttention) so tests can set
projection weights directly and inspect attention probability rows.
"""

from __future__ import annotations

import math

import torch
from torch import nn


class MultiheadAttention(nn.Module):
    """Scaled dot-product attention with d_k = dim / heads."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        assert dim % num_heads == 0
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(self, query: torch.Tensor, key_value: torch.Tensor,
                return_weights: bool = False):
        """query [N, Lq, D], key_value [N, Lk, D] -> [N, Lq, D]."""
        n, lq, _ = query.shape
        lk = key_value.shape[1]
        h, hd = self.num_heads, self.head_dim

        q = self.q_proj(query).view(n, lq, h, hd).transpose(1, 2)
        k = self.k_proj(key_value).view(n, lk, h, hd).transpose(1, 2)
        v = self.v_proj(key_value).view(n, lk, h, hd).transpose(1, 2)

        logits = q @ k.transpose(-2, -1) / math.sqrt(hd)   # [N, h, Lq, Lk]
        weights = torch.softmax(logits, dim=-1)
        out = weights @ v                                   # [N, h, Lq, hd]
        out = out.transpose(1, 2).reshape(n, lq, self.dim)
        out = self.out_proj(out)
        if return_weights:
            return out, weights
        return out


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden_mult: int = 2):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, hidden_mult * dim), nn.GELU(),
            nn.Linear(hidden_mult * dim, dim))

    def forward(self, x):
        return self.net(x)


class TransformerBlock(nn.Module):
    """Pre-norm self-attention block: x + attn(ln(x)), then x + ff(ln(x))."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = MultiheadAttention(dim, num_heads)
        self.ln2 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.ln1(x)
        x = x + self.attn(y, y)
        x = x + self.ff(self.ln2(x))
        return x


class CrossAttentionBlock(nn.Module):
    """Pre-norm cross-attention block: query attends over a separate sequence."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.ln_q = nn.LayerNorm(dim)
        self.ln_kv = nn.LayerNorm(dim)
        self.attn = MultiheadAttention(dim, num_heads)
        self.ln2 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim)

    def forward(self, query: torch.Tensor, key_value: torch.Tensor) -> torch.Tensor:
        attended = self.attn(self.ln_q(query), self.ln_kv(key_value))
        x = query + attended
        x = x + self.ff(self.ln2(x))
        return x
