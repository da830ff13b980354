"""Frozen visual encoder, frozen causal language backbone and the trainable
image-token adapters (visual alignment map and image-token embeddings).
"""
from __future__ import annotations

import contextlib
import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


class DimensionError(ValueError):
    pass


class StoryError(ValueError):
    pass


@contextlib.contextmanager
def seeded(seed: int):
    """Scope torch's global RNG to ``seed`` without disturbing the caller's state."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


def module_hash(module: nn.Module) -> str:
    """SHA-256 over every tensor (parameters and buffers) of ``module``."""
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(str(t.dtype).encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


# --------------------------------------------------------------------------- #
# Visual encoder
# --------------------------------------------------------------------------- #
def _as_pixels(image) -> torch.Tensor:
    arr = np.asarray(image)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    return torch.as_tensor(arr, dtype=torch.float64)


class ToyVisualEncoder(nn.Module):
    """Seeded random linear projection of flattened pixels.

    Stands in for a CLIP image tower. ``image_shape`` is (H, W, C); uint8
    images are rescaled to [0, 1] before projection.
    """

    def __init__(self, image_shape: Sequence[int], d: int, seed: int = 0, bias: bool = True):
        super().__init__()
        self.image_shape = tuple(int(s) for s in image_shape)
        self.d = d
        n_in = math.prod(self.image_shape)
        g = torch.Generator().manual_seed(seed)
        weight = torch.randn(d, n_in, generator=g, dtype=torch.float64) / math.sqrt(n_in)
        b = torch.randn(d, generator=g, dtype=torch.float64) * 0.1 if bias else torch.zeros(d, dtype=torch.float64)
        self.register_buffer("weight", weight)
        self.register_buffer("bias", b)

    def forward(self, image) -> torch.Tensor:
        px = _as_pixels(image)
        if px.ndim == 2 and len(self.image_shape) == 3 and self.image_shape[2] == 1:
            px = px[..., None]
        if tuple(px.shape) != self.image_shape:
            raise DimensionError(f"image shape {tuple(px.shape)} does not match encoder {self.image_shape}")
        px = px.to(self.weight.dtype)
        return self.weight @ px.reshape(-1) + self.bias


VisualEncoder = Union[ToyVisualEncoder, Callable[[np.ndarray], np.ndarray]]


def encode_image(image, encoder: VisualEncoder, d: int | None = None) -> torch.Tensor:
    """Embed one pixel grid into a d-vector (float64)."""
    out = torch.as_tensor(np.asarray(encoder(image)) if not isinstance(encoder, nn.Module) else encoder(image))
    out = out.to(torch.float64).reshape(-1)
    expected = d if d is not None else getattr(encoder, "d", out.numel())
    if out.numel() != expected:
        raise DimensionError(f"encoder returned {out.numel()} values, expected {expected}")
    if not torch.isfinite(out).all():
        raise ValueError("visual embedding has non-finite entries")
    return out


# --------------------------------------------------------------------------- #
# Trainable adapters
# --------------------------------------------------------------------------- #
class AlignmentMap(nn.Module):
    """Linear map from a d-dim visual embedding to k token embeddings of width e."""

    def __init__(self, d: int, k: int, e: int):
        super().__init__()
        self.d, self.k, self.e = d, k, e
        self.weight = nn.Parameter(torch.randn(d, k * e) / math.sqrt(d))

    def forward(self, g: torch.Tensor) -> torch.Tensor:
        return map_visual_embedding(g, self)


def map_visual_embedding(g: torch.Tensor, h: AlignmentMap) -> torch.Tensor:
    """(..., d) -> (..., k, e), row-major reshape of g @ H."""
    if g.shape[-1] != h.d:
        raise DimensionError(f"visual embedding width {g.shape[-1]} != alignment rows {h.d}")
    out = g.to(h.weight.dtype) @ h.weight
    return out.reshape(*g.shape[:-1], h.k, h.e)


class ImageTokenEmbeddings(nn.Module):
    def __init__(self, n: int, e: int):
        super().__init__()
        self.n, self.e = n, e
        self.weight = nn.Parameter(torch.randn(n, e) * 0.02)

    def forward(self, ids) -> torch.Tensor:
        return lookup_image_token_embeddings(ids, self)


def lookup_image_token_embeddings(ids, emd: ImageTokenEmbeddings) -> torch.Tensor:
    ids = torch.as_tensor(ids, dtype=torch.long)
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= emd.n):
        raise IndexError(f"image-token id out of range [0, {emd.n}): {ids.tolist()}")
    return emd.weight[ids]


# --------------------------------------------------------------------------- #
# Frozen causal backbone
# --------------------------------------------------------------------------- #
class ByteTokenizer:
    vocab_size = 256

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, ids: Sequence[int]) -> str:
        return bytes(i for i in ids if i < 256).decode("utf-8", errors="replace")


@dataclass(frozen=True)
class BackboneConfig:
    base_vocab: int = 256
    e: int = 32
    layers: int = 2
    heads: int = 4
    seed: int = 0
    final_norm: bool = True
    positional: bool = True


def sinusoidal_positions(length: int, width: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    i = torch.arange(width, dtype=torch.float64)[None, :]
    angle = pos / torch.pow(10000.0, (2 * (i // 2)) / width)
    pe = torch.where(i % 2 == 0, torch.sin(angle), torch.cos(angle))
    return pe.to(dtype)


class CausalBlock(nn.Module):
    def __init__(self, e: int, heads: int):
        super().__init__()
        self.heads = heads
        self.ln1 = nn.LayerNorm(e)
        self.qkv = nn.Linear(e, 3 * e)
        self.out = nn.Linear(e, e)
        self.ln2 = nn.LayerNorm(e)
        self.fc1 = nn.Linear(e, 4 * e)
        self.fc2 = nn.Linear(4 * e, e)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        *lead, S, e = x.shape
        hd = e // self.heads
        q, k, v = self.qkv(self.ln1(x)).split(e, dim=-1)
        q, k, v = (t.reshape(*lead, S, self.heads, hd).transpose(-3, -2) for t in (q, k, v))
        scores = q @ k.transpose(-1, -2) / math.sqrt(hd)
        causal = torch.ones(S, S, dtype=torch.bool, device=x.device).tril()
        scores = scores.masked_fill(~causal, float("-inf"))
        att = torch.softmax(scores, dim=-1) @ v
        att = att.transpose(-3, -2).reshape(*lead, S, e)
        x = x + self.out(att)
        return x + self.fc2(F.gelu(self.fc1(self.ln2(x))))


class FrozenBackbone(nn.Module):
    """Toy stand-in for a pretrained decoder-only LM. Never trained."""

    def __init__(self, cfg: BackboneConfig = BackboneConfig()):
        super().__init__()
        self.cfg = cfg
        with seeded(cfg.seed):
            self.token_embedding = nn.Embedding(cfg.base_vocab, cfg.e)
            nn.init.normal_(self.token_embedding.weight, std=1.0)
            self.blocks = nn.ModuleList(CausalBlock(cfg.e, cfg.heads) for _ in range(cfg.layers))
            self.norm = nn.LayerNorm(cfg.e) if cfg.final_norm else nn.Identity()
        self.requires_grad_(False)

    @property
    def e(self) -> int:
        return self.cfg.e

    def embed_tokens(self, ids) -> torch.Tensor:
        ids = torch.as_tensor(ids, dtype=torch.long)
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= self.cfg.base_vocab):
            raise IndexError("caption token id outside the base vocabulary")
        return self.token_embedding(ids)

    def forward(self, seq: torch.Tensor) -> torch.Tensor:
        return forward_hidden_states(seq, self)

    def train(self, mode: bool = True):
        # frozen: always stays in eval mode
        return super().train(False)


def forward_hidden_states(seq: torch.Tensor, backbone: FrozenBackbone) -> torch.Tensor:
    """Causal forward pass; (S, e) or (B, S, e) in, same shape out."""
    if seq.shape[-1] != backbone.e:
        raise DimensionError(f"sequence width {seq.shape[-1]} != backbone width {backbone.e}")
    x = seq
    if backbone.cfg.positional:
        x = x + sinusoidal_positions(seq.shape[-2], backbone.e, seq.dtype)
    for block in backbone.blocks:
        x = block(x)
    return backbone.norm(x)


def token_logits(hidden: torch.Tensor, backbone: FrozenBackbone, emd: ImageTokenEmbeddings) -> torch.Tensor:
    """Logits over the extended vocabulary using tied input/output embeddings."""
    table = torch.cat([backbone.token_embedding.weight.to(emd.weight.dtype), emd.weight], dim=0)
    return hidden @ table.T


# --------------------------------------------------------------------------- #
# Interleaved sequences
# --------------------------------------------------------------------------- #
@dataclass
class StoryExample:
    """Captions in story order; ``images[i]`` (if not None) follows ``captions[i]``.

    The image to generate is the one after the final caption, so at most
    ``len(captions) - 1`` images are given.
    """

    captions: list[str]
    images: list[np.ndarray | None] = field(default_factory=list)

    def validate(self) -> None:
        if not self.captions:
            raise StoryError("story has no captions")
        if any(not c for c in self.captions):
            raise StoryError("empty caption in story")
        if len(self.images) > len(self.captions) - 1:
            raise StoryError("images must precede the final caption")

    def segments(self) -> list:
        self.validate()
        out: list = []
        for i, cap in enumerate(self.captions):
            out.append(cap)
            if i < len(self.images) and self.images[i] is not None:
                out.append(self.images[i])
        return out


def image_token_ids(base_vocab: int, n: int) -> list[int]:
    return [base_vocab + i for i in range(n)]


def embed_segments(
    segments: Sequence,
    backbone: FrozenBackbone,
    h: AlignmentMap,
    emd: ImageTokenEmbeddings,
    encoder: VisualEncoder,
    tokenizer: ByteTokenizer | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Embed a list of caption strings / pixel grids, then append [I1]..[In]."""
    tokenizer = tokenizer or ByteTokenizer()
    dtype = emd.weight.dtype
    rows = []
    for seg in segments:
        if isinstance(seg, str):
            rows.append(backbone.embed_tokens(tokenizer.encode(seg)).to(dtype))
        else:
            g = encode_image(seg, encoder, h.d)
            rows.append(map_visual_embedding(g.to(dtype), h))
    rows.append(lookup_image_token_embeddings(range(emd.n), emd))
    seq = torch.cat(rows, dim=0)
    mask = torch.zeros(seq.shape[0], dtype=torch.bool)
    mask[-emd.n :] = True
    return seq, mask


def build_interleaved_sequence(
    story: StoryExample,
    backbone: FrozenBackbone,
    h: AlignmentMap,
    emd: ImageTokenEmbeddings,
    encoder: VisualEncoder,
    tokenizer: ByteTokenizer | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    return embed_segments(story.segments(), backbone, h, emd, encoder, tokenizer)
