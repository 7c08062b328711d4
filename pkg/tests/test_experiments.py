import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthface.data import FaceDataset
from synthface.encoder import EncoderSpec
from synthface.experiments import (
    ProbeCondition,
    ProbeReport,
    SwapError,
    SwapPlan,
    allocate_swaps,
    controlled_variable_violations,
    differing_fields,
    emit_report,
    finetune_sweep,
    make_variant_manifest,
    neutral_reference,
    probe_records,
    save_probe,
    save_sweep,
    sensitivity_probe,
    series_difference,
    swap_conservation_violations,
    swap_variants,
)
from synthface.margin import MarginConfig
from synthface.sampler import SamplerConfig, build_manifest, manifest_lines, with_overrides
from synthface.trainer import TrainConfig, build_model, fit
from synthface.verifier import DistanceRecord, VerificationPair, save_report, ten_fold_accuracy


def hatless(n_ids=4, seed=0):
    m = build_manifest(SamplerConfig(n_identities=n_ids), seed)
    recs = [with_overrides(r, accessories=replace(r.accessories, hat=False)) for r in m.records]
    return replace(m, records=recs)


def two_pass(values):
    """Textbook two-pass mean and population std."""
    n = len(values)
    mean = math.fsum(values) / n
    return mean, math.sqrt(math.fsum((v - mean) ** 2 for v in values) / n)


def test_fraction_zero_is_identity():
    base = hatless()
    var = make_variant_manifest(base, "hat", 1)
    out, plan = swap_variants(base, var, "hat", 1, fraction=0.0)
    assert manifest_lines(out) == manifest_lines(base)
    assert plan.n_swapped == 0


def test_fifteen_plus_five():
    base = hatless(1)
    var = make_variant_manifest(base, "hat", 3, per_identity=5)
    assert len(var.records) == 5
    out, plan = swap_variants(base, var, "hat", 3, per_identity=5)
    recs = out.records
    assert len(recs) == 20
    assert sum(r.accessories.hat for r in recs) == 5
    assert sum(not r.accessories.hat for r in recs) == 15
    assert swap_conservation_violations(base, out, plan) == []
    for b, a in zip(base.records, recs):
        assert differing_fields(b, a) <= {"accessories.hat", "batch"}


def test_too_few_variants():
    base = hatless(1)
    var = make_variant_manifest(base, "hat", 3, per_identity=2)
    with pytest.raises(SwapError, match="eligible"):
        swap_variants(base, var, "hat", 3, per_identity=5)
    with pytest.raises(SwapError, match="only"):
        swap_variants(base, var, "hat", 3, fraction=0.5)


def test_identity_mismatch():
    base = hatless(3)
    var = make_variant_manifest(hatless(2), "hat", 0)
    with pytest.raises(SwapError, match="different identities"):
        swap_variants(base, var, "hat", 0, fraction=0.1)


def test_variants_only_change_their_axis():
    base = build_manifest(SamplerConfig(n_identities=6), 2)
    for axis in ("hat", "makeup", "occlusion", "glasses", "beard", "expression"):
        var = make_variant_manifest(base, axis, 0)
        idx = {(r.identity_id, r.sample_index): r for r in base.records}
        for v in var.records:
            diff = differing_fields(idx[(v.identity_id, v.sample_index)], v)
            allowed = {"batch", f"accessories.{axis}", "expression.preset", "expression.eye_au", "expression.mouth_au"}
            assert diff <= allowed, (axis, diff)
        if axis == "beard":
            assert all(v.identity.gender == "male" for v in var.records)


def test_plan_replay_and_persistence(tmp_path):
    base = hatless(10)
    var = make_variant_manifest(base, "hat", 9)
    _, a = swap_variants(base, var, "hat", 9, fraction=0.3)
    _, b = swap_variants(base, var, "hat", 9, fraction=0.3)
    assert a == b and a.n_swapped == 60
    assert SwapPlan.load(a.save(tmp_path / "plan.json")) == a


def test_global_fraction_rounds():
    base = hatless(7)
    var = make_variant_manifest(base, "hat", 4)
    _, plan = swap_variants(base, var, "hat", 4, fraction=0.328)
    assert plan.n_swapped == round(0.328 * 140) == 46


@settings(max_examples=100, deadline=None)
@given(st.dictionaries(st.integers(0, 50), st.integers(0, 20), min_size=1, max_size=20), st.data())
def test_allocation_respects_capacities(caps, data):
    total = data.draw(st.integers(0, sum(caps.values())))
    alloc = allocate_swaps(caps, total, 0)
    assert sum(alloc.values()) == total
    assert all(0 <= alloc[i] <= caps[i] for i in caps)
    open_ = [alloc[i] for i in caps if alloc[i] < caps[i]]
    if open_:
        # identities with spare capacity differ by at most one swap
        assert max(open_) - min(open_) <= 1


def test_probe_matches_two_pass_oracle():
    rng = np.random.default_rng(0)
    table = {f"img{i}": rng.normal(size=6) for i in range(9)}
    table["ref"] = rng.normal(size=6)
    emb = lambda imgs: np.stack([table[str(x)] for x in imgs])
    conds = [ProbeCondition("a", ["img0", "img1", "img2", "img3"], 0.0), ProbeCondition("b", ["img4", "img5", "img6", "img7", "img8"], 1.0)]
    rep = sensitivity_probe("ref", conds, emb, lambda r: r, [("gap", ["a"], ["b"])])
    unit = {k: v / np.linalg.norm(v) for k, v in table.items()}
    for c in conds:
        d = [float(np.sqrt(sum((x - y) ** 2 for x, y in zip(unit[r], unit["ref"])))) for r in c.refs]
        mean, std = two_pass(d)
        got = rep.condition(c.label)
        assert abs(got.mean - mean) <= 1e-12 and abs(got.std - std) <= 1e-12
        assert got.distances == pytest.approx(d, abs=1e-12)
    assert rep.comparisons[0].mean == pytest.approx(rep.condition("b").mean - rep.condition("a").mean, abs=1e-15)


def test_reference_itself_has_zero_distance():
    table = {"ref": np.array([3.0, 4.0])}
    rep = sensitivity_probe("ref", [ProbeCondition("self", ["ref"])], lambda x: np.stack([table[str(v)] for v in x]), lambda r: r)
    assert rep.condition("self").mean == 0.0


def test_probe_failure_names_image():
    with pytest.raises(RuntimeError, match="missing.png"):
        sensitivity_probe("r", [ProbeCondition("c", ["missing.png"])], lambda x: np.ones((len(x), 2)), {})


def test_series_difference_lengths():
    rep = ProbeReport([])
    with pytest.raises(ValueError):
        series_difference(rep, "x", ["a"], [])


def test_controlled_variable_on_probe_records():
    ref = neutral_reference(build_manifest(SamplerConfig(n_identities=1), 0).records[0])
    yaw = probe_records(ref, "yaw", [0, 15, 30, 45])
    assert controlled_variable_violations(ref, yaw, ["head_pose.yaw"]) == []
    eyes = probe_records(ref, "eyes", [("brown", 3), ("blue", 1)])
    assert controlled_variable_violations(ref, eyes, ["identity.eye_color", "identity.iris_texture"]) == []
    leak = [replace(yaw[1], hdri_rotation=ref.hdri_rotation + 1)]
    msgs = controlled_variable_violations(ref, leak, ["head_pose.yaw"])
    assert msgs and "hdri_rotation" in msgs[0]


def test_emit_report_on_empty_dir(tmp_path):
    out = emit_report(tmp_path)
    assert out["warnings"] and "no results" in out["warnings"][0]
    assert (tmp_path / "summary.md").exists()
    with pytest.raises(FileNotFoundError):
        emit_report(tmp_path / "absent")


def fake_report():
    recs = [DistanceRecord(VerificationPair(f"a_{i:04d}", f"b_{i:04d}", i % 2 == 0, i // 6), 0.5 if i % 2 == 0 else 1.5) for i in range(60)]
    return ten_fold_accuracy(recs)


def test_emit_report_collects_everything(tmp_path):
    save_report(fake_report(), tmp_path / "eval" / "report.json")
    (tmp_path / "train").mkdir()
    (tmp_path / "train" / "metrics.jsonl").write_text('{"epoch": 0, "lr": 0.1, "loss": 2.0}\n{"epoch": 1, "lr": 0.1, "loss": 1.5}\n')
    conds = [ProbeCondition(f"yaw={k}", ["r"], float(k)) for k in (30, 0, 15)]
    rep = sensitivity_probe("r", conds, lambda x: np.ones((len(x), 2)), lambda r: r)
    save_probe(rep, tmp_path / "probe" / "probe.json")
    (tmp_path / "bad").mkdir()
    (tmp_path / "bad" / "report.json").write_text("{oops")
    out = emit_report(tmp_path)
    assert set(out["results"]["accuracy"]) == {"eval"}
    assert any("bad" in w or "report.json" in w for w in out["warnings"])
    summary = (tmp_path / "summary.md").read_text()
    assert "| eval | l2 | 1.0000 |" in summary
    probe_tsv = (tmp_path / "probe_probe.tsv").read_text().splitlines()
    assert len(probe_tsv) == 1 + 3
    assert [row.split("\t")[0] for row in probe_tsv[1:]] == ["yaw=0", "yaw=15", "yaw=30"]
    assert len((tmp_path / "loss_train.tsv").read_text().splitlines()) == 3
    assert json.loads((tmp_path / "results.json").read_text())["curves"]


TINY = EncoderSpec(name="tiny", layers=[1, 1], widths=[4, 8], embedding_dim=8)


@pytest.fixture(scope="module")
def sweep_setup():
    rng = np.random.default_rng(0)
    n_ids = 12
    imgs = np.clip(rng.normal(128, 40, (n_ids * 2, 112, 112, 3)), 0, 255).astype(np.uint8)
    real = FaceDataset(imgs, np.repeat(np.arange(n_ids), 2))
    cfg = TrainConfig(batch_size=8, epochs=1, milestones=[], augment=False, float64=True, encoder="desk")
    pre = fit(build_model(n_ids, TINY, MarginConfig(0.2, 8.0), 0), real, cfg).checkpoint
    probe_imgs = imgs[:12]

    def evaluate(encoder):
        from synthface.trainer import embed_images

        e = embed_images(encoder, probe_imgs)
        recs = [
            DistanceRecord(VerificationPair(f"x_{i:04d}", f"y_{i:04d}", i % 2 == 0, i % 10), float(np.linalg.norm(e[i % 12] - e[(i + 1) % 12])))
            for i in range(60)
        ]
        return ten_fold_accuracy(recs)

    return pre, real, cfg, evaluate


def test_sweep_zero_is_pretrained_only(sweep_setup):
    pre, real, cfg, evaluate = sweep_setup
    rows = finetune_sweep(pre, real, [0], cfg, evaluate, 0)
    assert len(rows) == 1 and rows[0].identities == 0 and rows[0].scratch is None
    assert rows[0].finetuned == evaluate(pre.build_model().encoder)


def test_sweep_rows_and_duplicates(sweep_setup, tmp_path):
    pre, real, cfg, evaluate = sweep_setup
    rows = finetune_sweep(pre, real, [4, 8, 4], cfg, evaluate, 0, scratch=False)
    assert [r.identities for r in rows] == [4, 8, 4]
    assert rows[0].to_dict() == rows[2].to_dict()
    with pytest.raises(ValueError, match="only 12"):
        finetune_sweep(pre, real, [13], cfg, evaluate, 0)
    save_sweep(rows, tmp_path / "sweep.json")
    out = emit_report(tmp_path)
    assert len((tmp_path / "sweep_root.tsv").read_text().splitlines()) == 4
    assert "Fine-tune sweep" in (tmp_path / "summary.md").read_text()
    assert out["results"]["sweep"]
