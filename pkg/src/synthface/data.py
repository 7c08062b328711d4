"""In-memory aligned-face datasets and batch preparation."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
import torch

from .align import CROP_SIZE, align_face, normalize_image, to_unit
from .augment import AugmentationConfig, augment
from .imageio import IMAGE_EXTENSIONS, read_image
from .seeding import derive_seed


@dataclass
class FaceDataset:
    """Aligned uint8 crops (N, 112, 112, 3) with dense labels in [0, C)."""

    images: np.ndarray
    labels: np.ndarray
    names: list[str] = field(default_factory=list)  # per-image reference
    classes: list[str] = field(default_factory=list)  # label -> identity name

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[1:] != (CROP_SIZE, CROP_SIZE, 3):
            raise ValueError(f"expected (N, {CROP_SIZE}, {CROP_SIZE}, 3) crops, got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise ValueError("images and labels differ in length")
        if not self.classes:
            self.classes = [str(i) for i in range(self.n_classes)]
        if not self.names:
            self.names = [f"{self.classes[y]}/{i}" for i, y in enumerate(self.labels)]

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        if len(self.labels) == 0:
            return 0
        if self.labels.min() < 0:
            raise ValueError("labels must be non-negative")
        return int(self.labels.max()) + 1

    def check_dense(self) -> None:
        present = np.unique(self.labels)
        if len(present) and not np.array_equal(present, np.arange(present[-1] + 1)):
            raise ValueError("labels must be dense in [0, C)")

    def subset(self, indices) -> "FaceDataset":
        idx = np.asarray(indices, dtype=np.int64)
        labels = self.labels[idx]
        remap = {old: new for new, old in enumerate(sorted(set(labels.tolist())))}
        return FaceDataset(
            self.images[idx],
            np.array([remap[y] for y in labels.tolist()], dtype=np.int64),
            [self.names[i] for i in idx],
            [self.classes[old] for old in sorted(remap)],
        )


def to_tensor(images: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """uint8 (B, H, W, 3) -> normalized (B, 3, H, W) in [-1, 1]."""
    x = normalize_image(to_unit(np.asarray(images)))
    return torch.from_numpy(np.ascontiguousarray(x.transpose(0, 3, 1, 2))).to(dtype)


def prepare_batch(
    data: FaceDataset,
    indices,
    epoch: int,
    seed: int,
    aug: AugmentationConfig | None,
    dtype=torch.float32,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Deterministic per index: the augmentation seed depends on (seed, epoch, index) only."""
    imgs = []
    for i in indices:
        img = data.images[i]
        if aug is not None:
            img = augment(img, aug, derive_seed(seed, "augment", epoch, int(i)))
        imgs.append(img)
    return to_tensor(np.stack(imgs), dtype), torch.from_numpy(data.labels[np.asarray(indices)])


def _resize_crop(img: np.ndarray) -> np.ndarray:
    if img.shape[:2] != (CROP_SIZE, CROP_SIZE):
        img = cv2.resize(img, (CROP_SIZE, CROP_SIZE), interpolation=cv2.INTER_AREA)
    return img


def identity_folders(root) -> dict[str, list[Path]]:
    """``root/<identity>/<image>`` -> {identity: sorted image paths}."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"image directory {root} does not exist")
    out = {}
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        files = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)
        if files:
            out[d.name] = files
    return out


def load_identity_folders(root, identities: list[str] | None = None) -> FaceDataset:
    """Load aligned crops from identity-per-folder layout; other sizes are resized to 112."""
    folders = identity_folders(root)
    names = identities if identities is not None else list(folders)
    images, labels, refs = [], [], []
    for label, name in enumerate(names):
        if name not in folders:
            raise KeyError(f"identity {name!r} not found under {root}")
        for path in folders[name]:
            images.append(_resize_crop(read_image(path)))
            labels.append(label)
            refs.append(f"{name}/{path.stem}")
    if not images:
        return FaceDataset(np.zeros((0, CROP_SIZE, CROP_SIZE, 3), np.uint8), np.zeros(0, np.int64), [], list(names))
    return FaceDataset(np.stack(images), np.array(labels), refs, list(names))


def render_aligned(records, renderer=None, template=None) -> np.ndarray:
    """Render scene records with the toy renderer and align each to the crop template."""
    from .toyface import render

    renderer = renderer or render
    kwargs = {} if template is None else {"template": template}
    return np.stack([align_face(*renderer(rec), **kwargs).image for rec in records])
