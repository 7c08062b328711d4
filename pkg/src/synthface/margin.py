"""Additive angular margin (ArcFace) logits, loss and classification head."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


def _sin2_floor(dtype: torch.dtype) -> float:
    # keeps d sin/d cos finite at cos = +-1 while staying below the dtype's resolution
    return torch.finfo(dtype).eps ** 2


@dataclass
class MarginConfig:
    margin: float = 0.5
    scale: float = 64.0
    easy_margin: bool = False

    def validate(self) -> None:
        if not 0.0 <= self.margin < math.pi:
            raise ValueError(f"margin must be in [0, pi), got {self.margin}")
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")


def _norm_tol(t: torch.Tensor) -> float:
    return max(1e-6, 10 * torch.finfo(t.dtype).eps)


def _check_unit_rows(t: torch.Tensor, name: str) -> None:
    norms = t.detach().norm(dim=1)
    if not torch.all(torch.isfinite(norms)):
        raise ValueError(f"{name} contains non-finite values")
    bad = (norms - 1).abs() > _norm_tol(t)
    if bool(bad.any()):
        row = int(bad.nonzero()[0, 0])
        raise ValueError(f"{name} row {row} has norm {float(norms[row]):.8f}; rows must be L2-normalized")


def arcface_logits(
    emb: torch.Tensor,
    weight: torch.Tensor,
    labels: torch.Tensor,
    cfg: MarginConfig = MarginConfig(),
    normalize: bool = False,
) -> torch.Tensor:
    """Scaled cosine logits with ``cos(theta + m)`` on each row's target class.

    Rows of ``emb`` (B, D) and ``weight`` (C, D) must be unit-norm unless
    ``normalize`` is set. When ``theta + m`` would pass pi the target falls back
    to ``cos(theta) - m * sin(m)``, which keeps the logit monotone in theta.
    """
    if normalize:
        emb, weight = F.normalize(emb, dim=1), F.normalize(weight, dim=1)
    else:
        _check_unit_rows(emb, "embeddings")
        _check_unit_rows(weight, "class weights")
    labels = labels.long()
    n_classes = weight.shape[0]
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")

    cos = (emb @ weight.t()).clamp(-1.0, 1.0)
    target_cos = cos.gather(1, labels[:, None]).squeeze(1)
    if cfg.margin == 0.0:
        target = target_cos
    else:
        sin = torch.sqrt((1.0 - target_cos * target_cos).clamp_min(_sin2_floor(target_cos.dtype)))
        cos_m = target_cos * math.cos(cfg.margin) - sin * math.sin(cfg.margin)
        if cfg.easy_margin:
            target = torch.where(target_cos > 0, cos_m, target_cos)
        else:
            # theta <= pi - m  <=>  cos(theta) >= -cos(m)
            fallback = target_cos - cfg.margin * math.sin(cfg.margin)
            target = torch.where(target_cos >= -math.cos(cfg.margin), cos_m, fallback)
    one_hot = F.one_hot(labels, n_classes).to(torch.bool)
    out = torch.where(one_hot, target[:, None].expand_as(cos), cos)
    return out * cfg.scale


def arcface_loss(
    emb: torch.Tensor,
    weight: torch.Tensor,
    labels: torch.Tensor,
    cfg: MarginConfig = MarginConfig(),
    normalize: bool = False,
) -> torch.Tensor:
    """Mean softmax cross-entropy over :func:`arcface_logits`."""
    return F.cross_entropy(arcface_logits(emb, weight, labels, cfg, normalize), labels.long())


class ArcFaceHead(nn.Module):
    """Class-weight matrix (C, D); normalizes both operands on every call."""

    def __init__(self, n_classes: int, embedding_dim: int = 512, cfg: MarginConfig | None = None):
        super().__init__()
        self.cfg = cfg or MarginConfig()
        self.cfg.validate()
        self.weight = nn.Parameter(torch.empty(n_classes, embedding_dim))
        nn.init.normal_(self.weight, std=0.01)

    @property
    def n_classes(self) -> int:
        return self.weight.shape[0]

    def forward(self, emb: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        return arcface_logits(emb, self.weight, labels, self.cfg, normalize=True)

    def loss(self, emb: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        return F.cross_entropy(self(emb, labels), labels.long())
