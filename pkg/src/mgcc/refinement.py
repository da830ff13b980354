"""Cross-modal refinement of image-token hidden states.

Each layer attends from the image-token states ``f_I`` to the full multimodal
sequence ``f_mm`` and back, then folds the text-to-image direction into the
image-token stream::

    A      = (f_I Wq_I)(f_mm Wq_mm)^T / sqrt(p)
    F_I    = ffn_I(softmax(A) (f_mm W_t))
    F_mm   = ffn_mm(softmax(A^T) (f_I W_I))
    F_hat  = gather(F_mm, mask) + F_I

All functions accept either unbatched ``(S, e)`` tensors or batched
``(B, S, e)`` tensors. Batched sequences may be right-padded; pass
``key_valid`` so padded rows never receive attention.
"""
from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from mgcc.backbone import DimensionError


class ContractError(ValueError):
    pass


class FeedForward(nn.Module):
    """Two-layer e -> 2e -> e block with GELU (``ffn_depth = 2``)."""

    def __init__(self, e: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden or 2 * e
        self.fc1 = nn.Linear(e, hidden)
        self.fc2 = nn.Linear(hidden, e)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


def _apply_ffn(ffn, x: torch.Tensor) -> torch.Tensor:
    if isinstance(ffn, nn.Parameter):
        return x @ ffn
    return ffn(x)


class RefinementLayer(nn.Module):
    def __init__(self, e: int, p: int | None = None, ffn_depth: int = 1):
        super().__init__()
        p = e if p is None else p
        if p <= 0:
            raise ValueError("projection width must be positive")
        self.e, self.p = e, p
        scale = 1.0 / math.sqrt(e)
        self.proj_q_I = nn.Parameter(torch.randn(e, p) * scale)
        self.proj_q_mm = nn.Parameter(torch.randn(e, p) * scale)
        self.proj_t = nn.Parameter(torch.randn(e, e) * scale)
        self.proj_I = nn.Parameter(torch.randn(e, e) * scale)
        if ffn_depth == 1:
            self.ffn_I = nn.Parameter(torch.randn(e, e) * scale)
            self.ffn_mm = nn.Parameter(torch.randn(e, e) * scale)
        elif ffn_depth == 2:
            self.ffn_I = FeedForward(e)
            self.ffn_mm = FeedForward(e)
        else:
            raise ValueError(f"ffn_depth must be 1 or 2, got {ffn_depth}")

    def forward(self, f_I, f_mm, mask, key_valid=None):
        F_I, F_mm = refine_features(f_I, f_mm, self, key_valid)
        return combine_refined(F_I, F_mm, mask)


class RefinementStack(nn.Module):
    """N refinement layers, registered as ``layer0 .. layer{N-1}``."""

    def __init__(self, num_layers: int, e: int, p: int | None = None, ffn_depth: int = 1):
        super().__init__()
        self.num_layers = num_layers
        for i in range(num_layers):
            self.add_module(f"layer{i}", RefinementLayer(e, p, ffn_depth))

    @property
    def layers(self) -> list[RefinementLayer]:
        return [getattr(self, f"layer{i}") for i in range(self.num_layers)]

    def forward(self, f_mm, mask, key_valid=None):
        return refine_stack(f_mm, mask, self, key_valid)


def joint_attention(f_I: torch.Tensor, f_mm: torch.Tensor, params: RefinementLayer) -> torch.Tensor:
    """Scaled cross logits, shape (..., n_I, n_S). No softmax."""
    if f_I.shape[-1] != params.e or f_mm.shape[-1] != params.e:
        raise DimensionError(f"inputs must have width {params.e}, got {f_I.shape[-1]} and {f_mm.shape[-1]}")
    q = f_I @ params.proj_q_I
    k = f_mm @ params.proj_q_mm
    return q @ k.transpose(-1, -2) / math.sqrt(params.p)


def refine_features(f_I, f_mm, params: RefinementLayer, key_valid=None):
    """Return (F_I, F_mm); see module docstring."""
    A = joint_attention(f_I, f_mm, params)
    logits = A
    if key_valid is not None:
        logits = A.masked_fill(~key_valid.unsqueeze(-2), float("-inf"))
    w_I = torch.softmax(logits, dim=-1)
    F_I = _apply_ffn(params.ffn_I, w_I @ (f_mm @ params.proj_t))
    w_mm = torch.softmax(A.transpose(-1, -2), dim=-1)
    F_mm = _apply_ffn(params.ffn_mm, w_mm @ (f_I @ params.proj_I))
    return F_I, F_mm


def mask_indices(mask: torch.Tensor) -> torch.Tensor:
    """Positions of the set flags, in order: (n,) for 1-D masks, (B, n) for 2-D."""
    mask = torch.as_tensor(mask, dtype=torch.bool)
    if mask.ndim == 1:
        return mask.nonzero().squeeze(-1)
    counts = mask.sum(-1)
    if not bool((counts == counts[0]).all()):
        raise ContractError(f"every row of a batched mask needs the same count, got {counts.tolist()}")
    return mask.nonzero()[:, -1].reshape(mask.shape[0], int(counts[0]))


def gather_rows(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    idx = mask_indices(mask)
    if x.ndim == 2:
        return x[idx]
    batch = torch.arange(x.shape[0])[:, None]
    return x[batch, idx]


def combine_refined(F_I: torch.Tensor, F_mm: torch.Tensor, m_I: torch.Tensor) -> torch.Tensor:
    """Mask-then-gather the image-token rows of F_mm and add them to F_I."""
    m_I = torch.as_tensor(m_I, dtype=torch.bool)
    if m_I.shape[-1] != F_mm.shape[-2]:
        raise ContractError(f"mask length {m_I.shape[-1]} != sequence length {F_mm.shape[-2]}")
    if bool((m_I.sum(-1) != F_I.shape[-2]).any()):
        raise ContractError(f"mask selects {m_I.sum(-1).tolist()} rows but F_I has {F_I.shape[-2]}")
    return gather_rows(F_mm, m_I) + F_I


def refine_stack(f_mm: torch.Tensor, m_I: torch.Tensor, stack: RefinementStack, key_valid=None) -> torch.Tensor:
    m_I = torch.as_tensor(m_I, dtype=torch.bool)
    if m_I.shape[-1] != f_mm.shape[-2]:
        raise ContractError(f"mask length {m_I.shape[-1]} != sequence length {f_mm.shape[-2]}")
    if not bool(m_I.any(-1).all()):
        raise ContractError("image-token mask is empty")
    f_I = gather_rows(f_mm, m_I)
    for layer in stack.layers:
        f_I = layer(f_I, f_mm, m_I, key_valid)
    return f_I
