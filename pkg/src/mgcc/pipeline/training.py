from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from mgcc.pipeline.model import Batch, MGCCModel

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, message: str, batch_index: int):
        super().__init__(message)
        self.batch_index = batch_index


class OptimizerState:
    """Adam over the trainable groups only (no weight decay, no clipping)."""

    def __init__(self, model: MGCCModel, lr: float = 1e-3, betas=(0.9, 0.95), eps: float = 1e-8):
        self.lr, self.betas, self.eps = lr, tuple(betas), eps
        self.adam = torch.optim.Adam(model.params.parameters(), lr=lr, betas=self.betas, eps=eps)
        self.step_count = 0

    def moments(self, model: MGCCModel) -> dict[str, tuple[torch.Tensor, torch.Tensor]]:
        out = {}
        for name, p in model.params.named_tensors().items():
            st = self.adam.state.get(p)
            if st:
                out[name] = (st["exp_avg"], st["exp_avg_sq"])
        return out

    def load_moments(self, model: MGCCModel, moments, step: int) -> None:
        self.step_count = step
        for name, p in model.params.named_tensors().items():
            if name in moments:
                m, v = moments[name]
                self.adam.state[p] = {
                    "step": torch.tensor(float(step)),
                    "exp_avg": m.to(p.dtype).clone(),
                    "exp_avg_sq": v.to(p.dtype).clone(),
                }


@dataclass
class LossReport:
    step: int
    total: float
    ce: float
    mse: float


def total_loss(model: MGCCModel, batch: Batch, loss_weights=(1.0, 1.0)):
    ce, mse = model.losses(batch)
    lam_ce, lam_mse = loss_weights
    per_example = lam_ce * ce + lam_mse * mse
    return per_example.mean(), ce, mse


def training_step(
    model: MGCCModel,
    opt: OptimizerState,
    batch: Sequence[tuple[np.ndarray | None, str]] | Batch,
    loss_weights=(1.0, 1.0),
) -> LossReport:
    """One Adam update of the trainable groups on ``batch``."""
    if not isinstance(batch, Batch):
        if not batch:
            raise ValueError("empty batch")
        batch = model.collate(batch)
    model.train()
    opt.adam.zero_grad(set_to_none=True)
    loss, ce, mse = total_loss(model, batch, loss_weights)
    per_example = loss_weights[0] * ce + loss_weights[1] * mse
    bad = (~torch.isfinite(per_example)).nonzero()
    if len(bad):
        i = int(bad[0])
        raise TrainingError(f"non-finite loss for batch example {i}", i)
    loss.backward()
    opt.adam.step()
    opt.step_count += 1
    model.eval()
    return LossReport(opt.step_count, loss.item(), ce.detach().mean().item(), mse.detach().mean().item())


def train(
    model: MGCCModel,
    opt: OptimizerState,
    pairs: Sequence[tuple[np.ndarray | None, str]],
    steps: int,
    batch_size: int | None = None,
    loss_weights=(1.0, 1.0),
    seed: int = 0,
    log_every: int = 50,
) -> list[LossReport]:
    """Mini-batch training; ``batch_size=None`` or >= len(pairs) uses the full set every step."""
    rng = np.random.default_rng(seed)
    full = batch_size is None or batch_size >= len(pairs)
    history = []
    for _ in range(steps):
        # re-collated every step: the embedded sequence depends on trainable tensors
        if full:
            batch = list(pairs)
        else:
            idx = rng.choice(len(pairs), size=batch_size, replace=False)
            batch = [pairs[i] for i in idx]
        report = training_step(model, opt, batch, loss_weights)
        if not math.isfinite(report.total):
            raise TrainingError("non-finite loss", -1)
        history.append(report)
        if log_every and report.step % log_every == 0:
            log.info("step %d  total %.5f  ce %.5f  mse %.5f", report.step, report.total, report.ce, report.mse)
    return history
