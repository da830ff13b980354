"""Model assembly: frozen parts plus the five trainable groups."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from mgcc.backbone import (
    AlignmentMap,
    BackboneConfig,
    ByteTokenizer,
    FrozenBackbone,
    ImageTokenEmbeddings,
    StoryExample,
    ToyVisualEncoder,
    build_interleaved_sequence,
    embed_segments,
    forward_hidden_states,
    module_hash,
    seeded,
    token_logits,
)
from mgcc.config import ModelConfig
from mgcc.mapper import QueryBank, ToyTextEncoder, TransformerMapper, alignment_target, map_to_conditioning
from mgcc.refinement import RefinementStack, refine_stack


class TrainableParams(nn.Module):
    """Exactly the tensors that training may update."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.h_cap = AlignmentMap(cfg.d, cfg.k, cfg.e)
        self.emd = ImageTokenEmbeddings(cfg.n, cfg.e)
        self.cmrm = RefinementStack(cfg.refine_layers, cfg.e, cfg.p, cfg.ffn_depth)
        self.mapper = TransformerMapper(cfg.e, cfg.m, cfg.c, cfg.mapper_layers, cfg.mapper_heads)
        self.queries = QueryBank(cfg.L, cfg.m)

    # checkpoint tensor names
    _RENAMES = {"h_cap.weight": "h_cap", "emd.weight": "emd", "queries.queries": "queries"}

    def named_tensors(self) -> dict[str, nn.Parameter]:
        return {self._RENAMES.get(k, k): v for k, v in self.named_parameters()}


@dataclass
class Batch:
    seq: torch.Tensor  # (B, S, e), right-padded
    image_mask: torch.Tensor  # (B, S) bool
    valid: torch.Tensor  # (B, S) bool
    first_image_token: torch.Tensor  # (B,) position of [I1]
    targets: torch.Tensor  # (B, L, c)


class MGCCModel(nn.Module):
    def __init__(self, cfg: ModelConfig, visual_encoder=None, target_encoder=None):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.tokenizer = ByteTokenizer()
        self.backbone = FrozenBackbone(
            BackboneConfig(cfg.base_vocab, cfg.e, cfg.backbone_layers, cfg.backbone_heads, seed=cfg.seed)
        )
        if visual_encoder is None:
            if cfg.visual_encoder != "toy":
                raise ValueError("visual_encoder='external' requires an encoder instance")
            visual_encoder = ToyVisualEncoder(cfg.image_shape, cfg.d, seed=cfg.seed + 1)
        self.visual_encoder = visual_encoder
        if target_encoder is None:
            if cfg.target_encoder != "toy":
                raise ValueError("target_encoder='external' requires an encoder instance")
            target_encoder = ToyTextEncoder(cfg.L, cfg.c, seed=cfg.seed + 2)
        self.target_encoder = target_encoder
        with seeded(cfg.seed + 3):
            self.params = TrainableParams(cfg)

    def train(self, mode: bool = True):
        super().train(mode)
        self.backbone.train(False)
        return self

    def frozen_hash(self) -> str:
        parts = [module_hash(self.backbone)]
        if isinstance(self.visual_encoder, nn.Module):
            parts.append(module_hash(self.visual_encoder))
        return ":".join(parts)

    @property
    def dtype(self) -> torch.dtype:
        return self.params.emd.weight.dtype

    # -- sequences -----------------------------------------------------------
    def embed(self, segments: Sequence) -> tuple[torch.Tensor, torch.Tensor]:
        p = self.params
        return embed_segments(segments, self.backbone, p.h_cap, p.emd, self.visual_encoder, self.tokenizer)

    def embed_story(self, story: StoryExample) -> tuple[torch.Tensor, torch.Tensor]:
        p = self.params
        return build_interleaved_sequence(story, self.backbone, p.h_cap, p.emd, self.visual_encoder, self.tokenizer)

    def collate(self, pairs: Sequence[tuple[np.ndarray | None, str]]) -> Batch:
        """Embed (image, caption) pairs as ``image rows, caption, [I1..In]``."""
        seqs, masks = [], []
        for image, caption in pairs:
            if not caption:
                raise ValueError("empty caption in batch")
            segs = [caption] if image is None else [image, caption]
            seq, mask = self.embed(segs)
            seqs.append(seq)
            masks.append(mask)
        S = max(s.shape[0] for s in seqs)
        B, e = len(seqs), self.cfg.e
        seq = seqs[0].new_zeros(B, S, e)
        image_mask = torch.zeros(B, S, dtype=torch.bool)
        valid = torch.zeros(B, S, dtype=torch.bool)
        for i, (s, m) in enumerate(zip(seqs, masks)):
            seq[i, : s.shape[0]] = s
            image_mask[i, : s.shape[0]] = m
            valid[i, : s.shape[0]] = True
        first = torch.tensor([s.shape[0] - self.cfg.n for s in seqs])
        targets = torch.stack([alignment_target(c, self.target_encoder) for _, c in pairs]).to(self.dtype)
        return Batch(seq, image_mask, valid, first, targets)

    # -- forward -------------------------------------------------------------
    def condition(self, seq: torch.Tensor, image_mask: torch.Tensor, valid=None):
        """hidden states -> refined image tokens -> (L, c) conditioning."""
        hidden = forward_hidden_states(seq, self.backbone)
        refined = refine_stack(hidden, image_mask, self.params.cmrm, valid)
        return hidden, map_to_conditioning(refined, self.params.queries, self.params.mapper)

    def losses(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-example (CE, MSE), each of shape (B,)."""
        hidden, f_g = self.condition(batch.seq, batch.image_mask, batch.valid)
        n = self.cfg.n
        # teacher forcing: position t predicts token t+1, so [Ij] is read off at first+j-1
        pos = batch.first_image_token[:, None] - 1 + torch.arange(n)[None, :]
        rows = hidden[torch.arange(hidden.shape[0])[:, None], pos]
        logits = token_logits(rows, self.backbone, self.params.emd)
        target_ids = (self.cfg.base_vocab + torch.arange(n)).expand(hidden.shape[0], n)
        ce = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), target_ids.reshape(-1), reduction="none")
        ce = ce.reshape(-1, n).mean(-1)
        mse = ((f_g - batch.targets) ** 2).mean(dim=(-1, -2))
        return ce, mse

    @torch.no_grad()
    def conditioning_for_story(self, story: StoryExample) -> torch.Tensor:
        seq, mask = self.embed_story(story)
        _, f_g = self.condition(seq, mask)
        return f_g


def build_model(cfg: ModelConfig | None = None, dtype: torch.dtype = torch.float32, **kwargs) -> MGCCModel:
    model = MGCCModel(cfg or ModelConfig(), **kwargs).to(dtype)
    model.eval()
    return model
