"""Margin-loss classification training, fine-tuning and checkpointing."""
from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .augment import AugmentationConfig
from .data import FaceDataset, prepare_batch, to_tensor
from .encoder import EncoderSpec, ResidualEncoder, named_encoder
from .margin import ArcFaceHead, MarginConfig
from .schema import from_dict, to_dict
from .seeding import derive_seed, make_rng

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(OSError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 256
    epochs: int = 24
    milestones: list[int] = field(default_factory=lambda: [10, 18, 22])
    lr_decay: float = 0.1
    # optimizer and base lr are not given by the recipe; common defaults for this loss
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    encoder: str = "desk"
    embedding_dim: int = 512
    augment: bool = True
    float64: bool = False
    save_every: int = 1
    workers: int = 0

    def validate(self) -> None:
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        ms = list(self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError(f"milestones {ms} must be strictly increasing")
        if self.epochs > 0 and ms and ms[-1] >= self.epochs:
            raise ValueError(f"milestones {ms} must be < epochs ({self.epochs})")
        if not 0.0 < self.lr_decay < 1.0:
            raise ValueError("lr_decay must be in (0, 1)")
        if self.base_lr < 0:
            raise ValueError("base_lr must be >= 0")

    @property
    def dtype(self) -> torch.dtype:
        return torch.float64 if self.float64 else torch.float32


def scheduled_lr(base_lr: float, cfg: TrainConfig, epoch: int) -> float:
    """``base_lr`` multiplied by ``lr_decay`` once per milestone <= epoch, in order."""
    if not 0 <= epoch < max(cfg.epochs, 1):
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    lr = base_lr
    for m in cfg.milestones:
        if m <= epoch:
            lr = lr * cfg.lr_decay
    return lr


def lr_factor(cfg: TrainConfig, epoch: int) -> float:
    return scheduled_lr(1.0, cfg, epoch)


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    return scheduled_lr(cfg.base_lr, cfg, epoch)


class FaceModel(nn.Module):
    def __init__(self, encoder: ResidualEncoder, head: ArcFaceHead):
        super().__init__()
        self.encoder = encoder
        self.head = head

    def forward(self, x, labels):
        return self.head.loss(self.encoder(x), labels)

    @torch.no_grad()
    def embed(self, images: np.ndarray, batch_size: int = 256, flip: bool = False) -> np.ndarray:
        """L2-normalized embeddings of uint8 crops; eval mode, never augmented."""
        return embed_images(self.encoder, images, batch_size, flip)


@torch.no_grad()
def embed_images(encoder: nn.Module, images: np.ndarray, batch_size: int = 256, flip: bool = False) -> np.ndarray:
    was_training = encoder.training
    encoder.eval()
    dtype = next(encoder.parameters()).dtype
    out = []
    try:
        for start in range(0, len(images), batch_size):
            x = to_tensor(images[start:start + batch_size], dtype)
            e = encoder(x)
            if flip:
                e = e + encoder(torch.flip(x, dims=[3]))
            out.append(F.normalize(e, dim=1).cpu().numpy())
    finally:
        encoder.train(was_training)
    dim = getattr(encoder, "embedding_dim", 0)
    return np.concatenate(out) if out else np.zeros((0, dim), dtype=np.float32)


def build_model(
    n_classes: int,
    encoder: EncoderSpec | str = "desk",
    margin: MarginConfig | None = None,
    seed: int = 0,
    embedding_dim: int | None = None,
) -> FaceModel:
    spec = named_encoder(encoder) if isinstance(encoder, str) else encoder
    if embedding_dim is not None and embedding_dim != spec.embedding_dim:
        spec = named_encoder(spec.name, embedding_dim=embedding_dim) if spec.name in ("desk", "iresnet50") else spec
    with torch.random.fork_rng():
        torch.manual_seed(derive_seed(seed, "init"))
        enc = ResidualEncoder(spec)
        head = ArcFaceHead(n_classes, spec.embedding_dim, margin or MarginConfig())
    return FaceModel(enc, head)


def replace_head(model: FaceModel, n_classes: int, seed: int = 0) -> FaceModel:
    """Fresh, randomly initialized head for ``n_classes``; nothing carried over."""
    with torch.random.fork_rng():
        torch.manual_seed(derive_seed(seed, "head", n_classes))
        head = ArcFaceHead(n_classes, model.head.weight.shape[1], model.head.cfg)
    head.to(model.head.weight.dtype)
    return FaceModel(model.encoder, head)


def make_param_groups(base_lr: float, model: FaceModel) -> list[dict]:
    return [{"params": list(model.parameters()), "lr": base_lr, "base_lr": base_lr, "name": "all"}]


def make_finetune_param_groups(base_lr: float, model: FaceModel) -> list[dict]:
    """Backbone at base/100 and head at base/10; the schedule multiplies both."""
    return [
        {"params": list(model.encoder.parameters()), "lr": base_lr / 100, "base_lr": base_lr / 100, "name": "backbone"},
        {"params": list(model.head.parameters()), "lr": base_lr / 10, "base_lr": base_lr / 10, "name": "head"},
    ]


# ---------------------------------------------------------------- checkpoints


@dataclass
class CheckpointRecord:
    encoder_spec: dict
    margin: dict
    n_classes: int
    encoder_state: dict
    head_state: dict
    optimizer_state: dict | None
    param_group_names: list[str]
    epoch: int
    config: dict
    rng_state: dict

    def build_model(self) -> FaceModel:
        spec = from_dict(EncoderSpec, self.encoder_spec)
        margin = from_dict(MarginConfig, self.margin)
        model = FaceModel(ResidualEncoder(spec), ArcFaceHead(self.n_classes, spec.embedding_dim, margin))
        dtype = next(iter(self.encoder_state.values())).dtype
        if dtype.is_floating_point:
            model.to(dtype)
        model.encoder.load_state_dict(self.encoder_state)
        model.head.load_state_dict(self.head_state)
        return model

    @property
    def train_config(self) -> TrainConfig:
        return from_dict(TrainConfig, self.config)


def _state(module: nn.Module) -> dict:
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def snapshot(model: FaceModel, optimizer, epoch: int, cfg: TrainConfig, groups: list[str]) -> CheckpointRecord:
    return CheckpointRecord(
        encoder_spec=to_dict(model.encoder.spec),
        margin=to_dict(model.head.cfg),
        n_classes=model.head.n_classes,
        encoder_state=_state(model.encoder),
        head_state=_state(model.head),
        optimizer_state=optimizer.state_dict() if optimizer is not None else None,
        param_group_names=groups,
        epoch=epoch,
        config=to_dict(cfg),
        rng_state={"torch": torch.get_rng_state()},
    )


def save_checkpoint(record: CheckpointRecord, path) -> Path:
    """Write-then-rename so a crash never leaves a truncated checkpoint."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        torch.save(to_dict(record), tmp)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path) -> CheckpointRecord:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    data = torch.load(path, map_location="cpu", weights_only=True)
    return CheckpointRecord(**data)


# ---------------------------------------------------------------- training


@dataclass
class FitResult:
    checkpoint: CheckpointRecord
    history: list[dict]
    model: FaceModel


def _write_json(path: Path, obj) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _batches(n: int, batch_size: int, epoch: int, seed: int) -> list[np.ndarray]:
    order = make_rng(derive_seed(seed, "order", epoch)).permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def fit(
    model: FaceModel,
    data: FaceDataset,
    cfg: TrainConfig,
    run_dir=None,
    param_groups: list[dict] | None = None,
    resume: CheckpointRecord | None = None,
    aug: AugmentationConfig | None = None,
    config_snapshot: dict | None = None,
    stop_epoch: int | None = None,
) -> FitResult:
    """Train ``model`` on ``data``; deterministic for a fixed seed and data order.

    ``stop_epoch`` ends the run early without changing the schedule.

    Each epoch's batch order, augmentation seeds and dropout stream derive from
    ``(cfg.seed, epoch)``, so a resumed run reproduces an uninterrupted one.
    """
    cfg.validate()
    data.check_dense()
    if data.n_classes > model.head.n_classes:
        raise ValueError(f"data has {data.n_classes} classes, head only {model.head.n_classes}")
    model.to(cfg.dtype)
    if param_groups is None:
        param_groups = make_param_groups(cfg.base_lr, model)
    names = [g.get("name", str(i)) for i, g in enumerate(param_groups)]
    opt = torch.optim.SGD(param_groups, lr=cfg.base_lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    start = 0
    if resume is not None:
        model.encoder.load_state_dict(resume.encoder_state)
        model.head.load_state_dict(resume.head_state)
        if resume.optimizer_state is not None:
            opt.load_state_dict(resume.optimizer_state)
        start = resume.epoch
    aug_cfg = (aug or AugmentationConfig()) if cfg.augment else None

    run = Path(run_dir) if run_dir is not None else None
    if run is not None:
        (run / "checkpoints").mkdir(parents=True, exist_ok=True)
        snap = config_snapshot or {"train": to_dict(cfg), "augmentation": to_dict(aug_cfg)}
        _write_json(run / "config.snapshot", snap)

    history: list[dict] = []
    executor = None
    if cfg.workers > 0:
        from concurrent.futures import ThreadPoolExecutor

        executor = ThreadPoolExecutor(max_workers=cfg.workers)
    try:
        end = cfg.epochs if stop_epoch is None else min(cfg.epochs, stop_epoch)
        for epoch in range(start, end):
            for g in opt.param_groups:
                g["lr"] = scheduled_lr(g["base_lr"], cfg, epoch)
            torch.manual_seed(derive_seed(cfg.seed, "torch", epoch))
            model.train()
            batches = _batches(len(data), cfg.batch_size, epoch, cfg.seed)

            def load(idx, epoch=epoch):
                return prepare_batch(data, idx, epoch, cfg.seed, aug_cfg, cfg.dtype)

            stream = executor.map(load, batches) if executor else map(load, batches)
            total, count = 0.0, 0
            for step, (x, y) in enumerate(stream):
                loss = model(x, y)
                if not torch.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} step {step}: inputs min={float(x.min()):.4g} "
                        f"max={float(x.max()):.4g} mean={float(x.mean()):.4g}, labels {int(y.min())}..{int(y.max())}"
                    )
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                total += float(loss.detach()) * len(y)
                count += len(y)
            entry = {"epoch": epoch, "lr": opt.param_groups[0]["lr"], "loss": total / max(count, 1)}
            if len(opt.param_groups) > 1:
                entry["lrs"] = {n: g["lr"] for n, g in zip(names, opt.param_groups)}
            history.append(entry)
            log.info("epoch %d lr %.3g loss %.4f", epoch, entry["lr"], entry["loss"])
            if run is not None:
                with open(run / "metrics.jsonl", "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, sort_keys=True) + "\n")
                if (epoch + 1) % max(cfg.save_every, 1) == 0 or epoch + 1 == cfg.epochs:
                    save_checkpoint(snapshot(model, opt, epoch + 1, cfg, names), run / "checkpoints" / f"epoch_{epoch + 1}")
    finally:
        if executor is not None:
            executor.shutdown()

    record = snapshot(model, opt, max(start, end), cfg, names)
    if run is not None:
        save_checkpoint(record, run / "checkpoints" / "final")
    return FitResult(record, history, model)


def train(
    data: FaceDataset,
    cfg: TrainConfig,
    margin: MarginConfig | None = None,
    run_dir=None,
    aug: AugmentationConfig | None = None,
    config_snapshot: dict | None = None,
) -> FitResult:
    model = build_model(data.n_classes, cfg.encoder, margin, cfg.seed, cfg.embedding_dim)
    return fit(model, data, cfg, run_dir=run_dir, aug=aug, config_snapshot=config_snapshot)


def finetune(
    pretrained: CheckpointRecord,
    data: FaceDataset,
    cfg: TrainConfig,
    base_lr: float | None = None,
    run_dir=None,
    aug: AugmentationConfig | None = None,
    config_snapshot: dict | None = None,
) -> FitResult:
    """Pretrained backbone, fresh head sized to ``data``; same schedule as training."""
    model = replace_head(pretrained.build_model(), data.n_classes, cfg.seed)
    base = cfg.base_lr if base_lr is None else base_lr
    return fit(model, data, cfg, run_dir=run_dir, param_groups=make_finetune_param_groups(base, model), aug=aug,
               config_snapshot=config_snapshot)
