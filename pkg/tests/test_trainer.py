import json
import math

import numpy as np
import pytest
import torch

from synthface.data import FaceDataset
from synthface.encoder import EncoderSpec
from synthface.margin import MarginConfig
from synthface.trainer import (
    TrainConfig,
    TrainingDiverged,
    build_model,
    finetune,
    fit,
    load_checkpoint,
    lr_at_epoch,
    lr_factor,
    make_finetune_param_groups,
    save_checkpoint,
    snapshot,
    train,
)

TINY = EncoderSpec(name="tiny", layers=[1, 1], widths=[4, 8], embedding_dim=8)


def two_class_data(n=8, seed=0):
    rng = np.random.default_rng(seed)
    imgs = np.empty((n, 112, 112, 3), np.uint8)
    labels = np.arange(n) % 2
    for i, y in enumerate(labels):
        base = 60 if y == 0 else 190
        imgs[i] = np.clip(base + rng.normal(0, 10, (112, 112, 3)), 0, 255).astype(np.uint8)
    return FaceDataset(imgs, labels)


def tiny_cfg(**kw):
    base = dict(batch_size=4, epochs=5, milestones=[], base_lr=0.05, augment=False, float64=True, weight_decay=0.0)
    base.update(kw)
    return TrainConfig(**base)


def tiny_model(n_classes=2, seed=0, margin=MarginConfig(0.2, 8.0)):
    return build_model(n_classes, TINY, margin, seed)


def test_default_schedule_values():
    cfg = TrainConfig()
    assert (cfg.batch_size, cfg.epochs, cfg.milestones, cfg.lr_decay) == (256, 24, [10, 18, 22], 0.1)
    assert [lr_factor(cfg, e) for e in (0, 9)] == [1.0, 1.0]
    assert lr_factor(cfg, 10) == 0.1
    assert lr_factor(cfg, 18) == 0.1 * 0.1
    assert lr_factor(cfg, 23) == 0.1 * 0.1 * 0.1
    assert lr_at_epoch(cfg, 0) == cfg.base_lr
    with pytest.raises(ValueError):
        lr_factor(cfg, 24)
    with pytest.raises(ValueError):
        lr_factor(cfg, -1)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(milestones=[10, 10]).validate()
    with pytest.raises(ValueError):
        TrainConfig(epochs=10, milestones=[10]).validate()
    TrainConfig(epochs=0).validate()


def test_finetune_groups_exact():
    model = tiny_model()
    groups = make_finetune_param_groups(0.1, model)
    assert [g["name"] for g in groups] == ["backbone", "head"]
    assert groups[0]["lr"] == 0.1 / 100 and groups[1]["lr"] == 0.1 / 10
    n_enc = sum(p.numel() for p in model.encoder.parameters())
    assert sum(p.numel() for p in groups[0]["params"]) == n_enc
    assert groups[1]["params"][0] is model.head.weight


def test_two_class_loss_strictly_decreases():
    # full batch and a small step: plain descent on a separable task
    res = fit(tiny_model(), two_class_data(), tiny_cfg(batch_size=8, base_lr=1e-4))
    losses = [h["loss"] for h in res.history]
    assert len(losses) == 5
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_zero_epochs_is_noop(tmp_path):
    model = tiny_model()
    before = {k: v.clone() for k, v in model.state_dict().items()}
    res = fit(model, two_class_data(), tiny_cfg(epochs=0), run_dir=tmp_path)
    assert res.history == []
    for k, v in model.state_dict().items():
        assert torch.equal(v, before[k].to(v.dtype))
    assert res.checkpoint.epoch == 0
    assert not (tmp_path / "metrics.jsonl").exists()
    assert (tmp_path / "checkpoints" / "final").exists()


def test_same_seed_same_weights():
    data = two_class_data()
    cfg = tiny_cfg(epochs=2, augment=True)
    a = fit(tiny_model(), data, cfg)
    b = fit(tiny_model(), data, cfg)
    assert [h["loss"] for h in a.history] == [h["loss"] for h in b.history]
    for k, v in a.model.state_dict().items():
        assert torch.equal(v, b.model.state_dict()[k])


def test_resume_matches_uninterrupted(tmp_path):
    data = two_class_data()
    cfg = tiny_cfg(epochs=2)
    straight = fit(tiny_model(), data, cfg)
    first = fit(tiny_model(), data, cfg, run_dir=tmp_path, stop_epoch=1)
    assert first.checkpoint.epoch == 1
    rec = load_checkpoint(tmp_path / "checkpoints" / "epoch_1")
    resumed = fit(rec.build_model(), data, cfg, resume=rec)
    for k, v in straight.model.state_dict().items():
        other = resumed.model.state_dict()[k]
        if v.dtype.is_floating_point:
            assert torch.max(torch.abs(v - other)).item() <= 1e-7, k
        else:
            assert torch.equal(v, other)
    assert resumed.history[0]["loss"] == pytest.approx(straight.history[1]["loss"], abs=1e-7)


def test_checkpoint_round_trip(tmp_path):
    model = tiny_model()
    rec = snapshot(model, None, 3, tiny_cfg(), ["all"])
    save_checkpoint(rec, tmp_path / "ck")
    back = load_checkpoint(tmp_path / "ck")
    assert back.epoch == 3 and back.n_classes == 2 and back.train_config == tiny_cfg()
    rebuilt = back.build_model()
    for k, v in model.state_dict().items():
        assert torch.equal(v, rebuilt.state_dict()[k])
    assert [p.name for p in tmp_path.iterdir()] == ["ck"]
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "nope")


def test_run_dir_layout(tmp_path):
    fit(tiny_model(), two_class_data(), tiny_cfg(epochs=2), run_dir=tmp_path)
    lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
    assert [json.loads(s)["epoch"] for s in lines] == [0, 1]
    names = sorted(p.name for p in (tmp_path / "checkpoints").iterdir())
    assert names == ["epoch_1", "epoch_2", "final"]
    snap = json.loads((tmp_path / "config.snapshot").read_text())
    assert snap["train"]["epochs"] == 2


def test_train_builds_configured_encoder():
    cfg = tiny_cfg(epochs=0, embedding_dim=16)
    res = train(two_class_data(), cfg, margin=MarginConfig(0.2, 8.0))
    assert res.model.encoder.embedding_dim == 16 and res.model.head.weight.shape == (2, 16)


def test_finetune_replaces_head_and_keeps_backbone(tmp_path):
    pre = fit(tiny_model(), two_class_data(), tiny_cfg(epochs=1))
    four = FaceDataset(two_class_data(8, 1).images, np.arange(8) % 4)
    cfg = tiny_cfg(epochs=3, milestones=[1, 2], base_lr=0.1)
    res = finetune(pre.checkpoint, four, cfg, run_dir=tmp_path)
    assert res.model.head.weight.shape == (4, 8)
    assert res.checkpoint.param_group_names == ["backbone", "head"]
    lrs = [h["lrs"] for h in res.history]
    assert lrs[0] == {"backbone": 0.1 / 100, "head": 0.1 / 10}
    assert lrs[1] == {"backbone": 0.1 / 100 * 0.1, "head": 0.1 / 10 * 0.1}
    assert lrs[2] == {"backbone": 0.1 / 100 * 0.1 * 0.1, "head": 0.1 / 10 * 0.1 * 0.1}


def test_nan_aborts_with_context():
    model = tiny_model()
    with torch.no_grad():
        model.head.weight.fill_(math.nan)
    with pytest.raises(TrainingDiverged, match="epoch 0 step 0"):
        fit(model, two_class_data(), tiny_cfg(epochs=1))


def test_rejects_sparse_labels_and_small_head():
    d = two_class_data()
    with pytest.raises(ValueError, match="dense"):
        fit(tiny_model(3), FaceDataset(d.images, d.labels * 2), tiny_cfg(epochs=1))
    with pytest.raises(ValueError, match="head"):
        fit(tiny_model(1), d, tiny_cfg(epochs=1))


def test_embeddings_unit_norm_and_eval_mode():
    model = tiny_model()
    model.train()
    e = model.embed(two_class_data().images, batch_size=3, flip=True)
    assert e.shape == (8, 8)
    np.testing.assert_allclose(np.linalg.norm(e, axis=1), 1.0, atol=1e-6)
    assert model.encoder.training
