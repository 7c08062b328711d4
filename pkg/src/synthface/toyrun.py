"""Desk-scale end-to-end run: sample, render, align, train, verify on held-out identities."""
from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import FaceDataset, render_aligned
from .margin import MarginConfig
from .sampler import DatasetManifest, SamplerConfig, build_manifest, manifest_lines, write_manifest
from .seeding import derive_seed
from .trainer import FitResult, TrainConfig, embed_images, train
from .verifier import (
    AccuracyReport,
    VerificationPair,
    embed_refs,
    image_ref,
    make_pairs,
    pair_distances,
    parse_pairs_file,
    save_report,
    ten_fold_accuracy,
    write_pairs_file,
)

TRAIN_IDENTITIES = 200
EVAL_IDENTITIES = 60
PER_IDENTITY = 20
PAIRS_PER_FOLD = 30  # 10 folds x (30 genuine + 30 impostor) = 600 pairs

# s=64 barely moves a network this small in the time budget; the margin is unchanged
TOY_MARGIN = MarginConfig(margin=0.5, scale=32.0)


def toy_sampler_config() -> SamplerConfig:
    return SamplerConfig(n_identities=TRAIN_IDENTITIES + EVAL_IDENTITIES, samples_per_identity=PER_IDENTITY)


def toy_train_config(seed: int) -> TrainConfig:
    return TrainConfig(batch_size=64, epochs=20, milestones=[12, 17], base_lr=0.05, seed=seed)


def identity_name(identity_id: int) -> str:
    return f"id{identity_id:06d}"


@dataclass
class ToyData:
    manifest: DatasetManifest
    train: FaceDataset
    eval_images: dict[str, np.ndarray]
    pairs: list[VerificationPair]
    eval_identities: list[int]

    @property
    def manifest_sha256(self) -> str:
        text = "\n".join(manifest_lines(self.manifest)) + "\n"
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class ToyResult:
    data: ToyData
    fit: FitResult
    report: AccuracyReport | None
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def losses(self) -> list[float]:
        return [h["loss"] for h in self.fit.history]


def build_toy_data(seed: int, train_ids: int = TRAIN_IDENTITIES, eval_ids: int = EVAL_IDENTITIES) -> ToyData:
    """Identities are split by id: the first ``train_ids`` train, the rest are held out."""
    cfg = toy_sampler_config()
    cfg.n_identities = train_ids + eval_ids
    manifest = build_manifest(cfg, derive_seed(seed, "sampler"))
    images = render_aligned(manifest.records)
    ids = np.array([r.identity_id for r in manifest.records])
    train_mask = ids < train_ids
    train = FaceDataset(
        images[train_mask],
        ids[train_mask],
        [image_ref(identity_name(r.identity_id), r.sample_index + 1) for r in manifest.records if r.identity_id < train_ids],
        [identity_name(i) for i in range(train_ids)],
    )
    eval_images = {
        image_ref(identity_name(r.identity_id), r.sample_index + 1): images[k]
        for k, r in enumerate(manifest.records)
        if r.identity_id >= train_ids
    }
    held_out = sorted({int(i) for i in ids[~train_mask]})
    pairs = make_pairs(
        {identity_name(i): list(range(1, PER_IDENTITY + 1)) for i in held_out},
        PAIRS_PER_FOLD,
        derive_seed(seed, "pairs"),
    )
    return ToyData(manifest, train, eval_images, pairs, held_out)


def evaluate_toy(encoder, data: ToyData, flip: bool = True) -> AccuracyReport:
    refs = [r for p in data.pairs for r in (p.a, p.b)]
    emb = embed_refs(refs, data.eval_images.__getitem__, lambda x: embed_images(encoder, x, flip=flip))
    return ten_fold_accuracy(pair_distances(data.pairs, emb))


def run_toy(seed: int = 0, run_dir=None, stop_epoch: int | None = None, flip: bool = True) -> ToyResult:
    """Full toy pipeline; ``stop_epoch`` truncates training (no evaluation then)."""
    t0 = time.perf_counter()
    data = build_toy_data(seed)
    t1 = time.perf_counter()
    run = Path(run_dir) if run_dir is not None else None
    if run is not None:
        write_manifest(data.manifest, run / "manifest.ndjson")
        write_pairs_file(run / "pairs.txt", data.pairs)
        if parse_pairs_file(run / "pairs.txt") != data.pairs:
            raise RuntimeError("pairs file did not round-trip")
    cfg = toy_train_config(derive_seed(seed, "train"))
    if stop_epoch is None:
        fit = train(data.train, cfg, TOY_MARGIN, run_dir=run)
    else:
        from .trainer import build_model, fit as fit_model

        model = build_model(data.train.n_classes, cfg.encoder, TOY_MARGIN, cfg.seed, cfg.embedding_dim)
        fit = fit_model(model, data.train, cfg, run_dir=run, stop_epoch=stop_epoch)
    t2 = time.perf_counter()
    report = None
    if stop_epoch is None:
        report = evaluate_toy(fit.model.encoder, data, flip)
        if run is not None:
            save_report(report, run / "report.json")
    t3 = time.perf_counter()
    return ToyResult(data, fit, report, {"data": t1 - t0, "train": t2 - t1, "evaluate": t3 - t2, "total": t3 - t0})
