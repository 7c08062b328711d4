"""Residual face encoders mapping 112x112x3 crops to D-dimensional embeddings."""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .align import CROP_SIZE


@dataclass
class EncoderSpec:
    name: str = "desk"
    layers: list[int] = field(default_factory=lambda: [1, 2, 2, 1])
    widths: list[int] = field(default_factory=lambda: [16, 32, 64, 128])
    stem_stride: int = 2
    embedding_dim: int = 512
    dropout: float = 0.0

    def validate(self) -> None:
        if len(self.layers) != len(self.widths) or not self.layers:
            raise ValueError("encoder layers and widths must be non-empty and equally long")
        if any(n < 1 for n in self.layers) or any(w < 1 for w in self.widths):
            raise ValueError("encoder layer counts and widths must be positive")
        if self.stem_stride not in (1, 2) or self.embedding_dim < 1:
            raise ValueError("stem_stride must be 1 or 2 and embedding_dim positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


NAMED_ENCODERS = {
    "desk": EncoderSpec(),
    # full-depth configuration; needs a GPU to train in reasonable time
    "iresnet50": EncoderSpec(
        name="iresnet50", layers=[3, 4, 14, 3], widths=[64, 128, 256, 512], stem_stride=1, embedding_dim=512
    ),
}


def named_encoder(name: str, **overrides) -> EncoderSpec:
    if name not in NAMED_ENCODERS:
        raise ValueError(f"unknown encoder {name!r}; choose from {sorted(NAMED_ENCODERS)}")
    base = NAMED_ENCODERS[name]
    spec = EncoderSpec(**{**base.__dict__, "layers": list(base.layers), "widths": list(base.widths), **overrides})
    spec.validate()
    return spec


class IBasicBlock(nn.Module):
    """BN-conv-BN-PReLU-conv(stride)-BN with a projected shortcut when shapes change."""

    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.BatchNorm2d(cin),
            nn.Conv2d(cin, cout, 3, 1, 1, bias=False),
            nn.BatchNorm2d(cout),
            nn.PReLU(cout),
            nn.Conv2d(cout, cout, 3, stride, 1, bias=False),
            nn.BatchNorm2d(cout),
        )
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        identity = x if self.shortcut is None else self.shortcut(x)
        return self.body(x) + identity


class ResidualEncoder(nn.Module):
    def __init__(self, spec: EncoderSpec):
        super().__init__()
        spec.validate()
        self.spec = spec
        w0 = spec.widths[0]
        self.stem = nn.Sequential(
            nn.Conv2d(3, w0, 3, spec.stem_stride, 1, bias=False), nn.BatchNorm2d(w0), nn.PReLU(w0)
        )
        blocks = []
        cin = w0
        for n, cout in zip(spec.layers, spec.widths):
            blocks.append(IBasicBlock(cin, cout, 2))
            blocks.extend(IBasicBlock(cout, cout, 1) for _ in range(n - 1))
            cin = cout
        self.blocks = nn.Sequential(*blocks)
        side = CROP_SIZE // spec.stem_stride
        for _ in spec.layers:
            side = (side - 1) // 2 + 1
        self.bn2 = nn.BatchNorm2d(cin)
        self.dropout = nn.Dropout(spec.dropout)
        self.fc = nn.Linear(cin * side * side, spec.embedding_dim)
        self.features = nn.BatchNorm1d(spec.embedding_dim)

    @property
    def embedding_dim(self) -> int:
        return self.spec.embedding_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.blocks(self.stem(x))
        x = self.dropout(torch.flatten(self.bn2(x), 1))
        return self.features(self.fc(x))


def build_encoder(spec: EncoderSpec | str = "desk") -> ResidualEncoder:
    if isinstance(spec, str):
        spec = named_encoder(spec)
    return ResidualEncoder(spec)
