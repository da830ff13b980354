"""Query-driven encoder-decoder mapper and the toy text-encoder target.

The mapper reads the refined image-token states and L learnable queries and
emits an (L, c) conditioning matrix aligned with a text encoder's output
space.
"""
from __future__ import annotations

import hashlib
from typing import Callable, Union

import numpy as np
import torch
import torch.nn as nn

from mgcc.backbone import DimensionError, sinusoidal_positions


class QueryBank(nn.Module):
    def __init__(self, L: int, m: int):
        super().__init__()
        self.L, self.m = L, m
        self.queries = nn.Parameter(torch.randn(L, m))

    def forward(self) -> torch.Tensor:
        return self.queries


class TransformerMapper(nn.Module):
    """e -> m adapter, 4-layer encoder over image tokens, 4-layer decoder over
    the queries (self-attention + cross-attention to the encoder), m -> c head.
    """

    def __init__(self, e: int, m: int, c: int, layers: int = 4, heads: int = 4):
        super().__init__()
        self.e, self.m, self.c = e, m, c
        self.input_adapter = nn.Linear(e, m)
        enc_layer = nn.TransformerEncoderLayer(
            m, heads, dim_feedforward=4 * m, dropout=0.0, activation="gelu", batch_first=True, norm_first=True
        )
        dec_layer = nn.TransformerDecoderLayer(
            m, heads, dim_feedforward=4 * m, dropout=0.0, activation="gelu", batch_first=True, norm_first=True
        )
        self.encoder = nn.TransformerEncoder(enc_layer, layers, norm=nn.LayerNorm(m), enable_nested_tensor=False)
        self.decoder = nn.TransformerDecoder(dec_layer, layers, norm=nn.LayerNorm(m))
        self.output_adapter = nn.Linear(m, c)

    def forward(self, fI_hat: torch.Tensor, bank: QueryBank) -> torch.Tensor:
        return map_to_conditioning(fI_hat, bank, self)


def map_to_conditioning(fI_hat: torch.Tensor, bank: QueryBank, params: TransformerMapper) -> torch.Tensor:
    """(n, e) -> (L, c); batched (B, n, e) -> (B, L, c)."""
    if fI_hat.shape[-1] != params.e:
        raise DimensionError(f"image-token width {fI_hat.shape[-1]} != mapper input {params.e}")
    if bank.m != params.m:
        raise DimensionError(f"query width {bank.m} != mapper width {params.m}")
    unbatched = fI_hat.ndim == 2
    x = fI_hat[None] if unbatched else fI_hat
    src = params.input_adapter(x) + sinusoidal_positions(x.shape[1], params.m, x.dtype)
    memory = params.encoder(src)
    tgt = bank.queries.unsqueeze(0).expand(x.shape[0], -1, -1)
    out = params.output_adapter(params.decoder(tgt, memory))
    return out[0] if unbatched else out


# --------------------------------------------------------------------------- #
# Alignment target
# --------------------------------------------------------------------------- #
class ToyTextEncoder:
    """Deterministic stand-in for a CLIP text encoder.

    Byte trigrams of the caption (with start/end markers) are feature-hashed
    into ``buckets`` signed slots, L2-normalised and pushed through a fixed
    seeded projection to an (L, c) matrix. Captions that share words get
    correlated targets; distinct captions get distinct ones.
    """

    def __init__(self, L: int, c: int, seed: int = 0, buckets: int = 64):
        self.L, self.c, self.seed, self.buckets = L, c, seed, buckets
        rng = np.random.default_rng(seed)
        self.projection = rng.standard_normal((buckets, L * c))
        self._key = seed.to_bytes(8, "little", signed=False)

    def features(self, caption: str) -> np.ndarray:
        data = b"\x02" + caption.encode("utf-8") + b"\x03"
        vec = np.zeros(self.buckets)
        for i in range(len(data) - 2):
            digest = hashlib.blake2b(data[i : i + 3], digest_size=8, key=self._key).digest()
            code = int.from_bytes(digest, "little")
            vec[code % self.buckets] += 1.0 if (code >> 63) & 1 else -1.0
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def __call__(self, caption: str) -> np.ndarray:
        return (self.features(caption) @ self.projection).reshape(self.L, self.c)


TextEncoder = Union[ToyTextEncoder, Callable[[str], np.ndarray]]


def alignment_target(caption: str, target_encoder: TextEncoder) -> torch.Tensor:
    if not caption:
        raise ValueError("caption must be nonempty")
    return torch.as_tensor(np.asarray(target_encoder(caption), dtype=np.float64))
