"""Variance-swap dataset construction, sensitivity probes, fine-tune sweeps and reporting."""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .sampler import (
    Accessories,
    DatasetManifest,
    Expression,
    Pose,
    SceneConfig,
    SamplerConfig,
)
from .seeding import derive_seed, make_rng
from .verifier import AccuracyReport

log = logging.getLogger(__name__)

# manifest fields each variance axis is allowed to change; ``batch`` is sampler bookkeeping
AXIS_FIELDS = {
    "hat": {"accessories.hat"},
    "makeup": {"accessories.makeup"},
    "occlusion": {"accessories.occlusion"},
    "glasses": {"accessories.glasses"},
    "beard": {"accessories.beard"},
    "expression": {"expression.preset", "expression.eye_au", "expression.mouth_au"},
    "hairstyle": {"hairstyle"},
}
BOOKKEEPING = {"batch"}

PLAN_NAME = "swap_plan.json"
PROBE_NAME = "probe.json"
SWEEP_NAME = "sweep.json"
REPORT_NAME = "report.json"
METRICS_NAME = "metrics.jsonl"


class SwapError(ValueError):
    pass


def flatten(obj, prefix: str = "") -> dict:
    """Nested dict -> {"a.b": leaf}."""
    out = {}
    for k, v in obj.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def differing_fields(a: SceneConfig, b: SceneConfig) -> set[str]:
    fa, fb = flatten(a.to_dict()), flatten(b.to_dict())
    return {k for k in fa.keys() | fb.keys() if fa.get(k) != fb.get(k)}


# ---------------------------------------------------------------- variants and swaps


def carries_axis(rec: SceneConfig, axis: str) -> bool:
    if axis in ("hat", "makeup", "occlusion", "glasses", "beard"):
        return bool(getattr(rec.accessories, axis))
    if axis == "expression":
        return not rec.expression.is_preset
    if axis == "hairstyle":
        return rec.hairstyle is not None
    raise ValueError(f"unknown variance axis {axis!r}; choose from {sorted(AXIS_FIELDS)}")


def make_variant(
    rec: SceneConfig,
    axis: str,
    rng: np.random.Generator,
    config: SamplerConfig,
    hairstyles: Sequence[str] = (),
) -> SceneConfig | None:
    """Copy of ``rec`` changed only along ``axis`` (None when the axis cannot apply)."""
    if axis not in AXIS_FIELDS:
        raise ValueError(f"unknown variance axis {axis!r}; choose from {sorted(AXIS_FIELDS)}")
    if axis in ("hat", "makeup", "occlusion", "glasses", "beard"):
        if axis == "beard" and rec.identity.gender != "male":
            return None
        changed = replace(rec.accessories, **{axis: True})
        return replace(rec, accessories=changed, batch=2)
    if axis == "expression":
        eye = config.eye_aus[int(rng.integers(len(config.eye_aus)))]
        mouth = config.mouth_aus[int(rng.integers(len(config.mouth_aus)))]
        if rng.random() < 0.5:
            if rng.random() < 0.5:
                mouth = None
            else:
                eye = None
        return replace(rec, expression=Expression(preset=None, eye_au=eye, mouth_au=mouth), batch=2)
    if not hairstyles:
        raise ValueError("the hairstyle axis needs a list of hairstyle labels")
    return replace(rec, hairstyle=str(hairstyles[int(rng.integers(len(hairstyles)))]))


def make_variant_manifest(
    baseline: DatasetManifest,
    axis: str,
    seed,
    per_identity: int | None = None,
    hairstyles: Sequence[str] = (),
) -> DatasetManifest:
    """Variants of (a seeded subset of) each identity's baseline samples along one axis."""
    config = baseline.sampler_config() or SamplerConfig()
    records = []
    for ident, recs in sorted(baseline.by_identity().items()):
        rng = make_rng(derive_seed(seed, "variant", axis, ident))
        chosen = list(range(len(recs)))
        if per_identity is not None:
            chosen = sorted(rng.choice(len(recs), min(per_identity, len(recs)), replace=False).tolist())
        for k in chosen:
            v = make_variant(recs[k], axis, rng, config, hairstyles)
            if v is not None:
                records.append(v)
    header = dict(baseline.header, variant_axis=axis, variant_seed=int(seed), n_records=len(records))
    return DatasetManifest(header=header, records=records)


@dataclass
class SwapPlan:
    axis: str
    seed: int
    target_fraction: float
    total_samples: int
    swaps: dict[int, list[tuple[str, str]]] = field(default_factory=dict)

    @property
    def n_swapped(self) -> int:
        return sum(len(v) for v in self.swaps.values())

    @property
    def fraction(self) -> float:
        return self.n_swapped / self.total_samples if self.total_samples else 0.0

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "seed": self.seed,
            "target_fraction": self.target_fraction,
            "total_samples": self.total_samples,
            "n_swapped": self.n_swapped,
            "swaps": {str(k): [list(p) for p in v] for k, v in sorted(self.swaps.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SwapPlan":
        swaps = {int(k): [tuple(p) for p in v] for k, v in d["swaps"].items()}
        return cls(d["axis"], int(d["seed"]), float(d["target_fraction"]), int(d["total_samples"]), swaps)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(f".{path.name}.tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, path)
        return path

    @classmethod
    def load(cls, path) -> "SwapPlan":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def allocate_swaps(capacities: Mapping[int, int], total: int, seed) -> dict[int, int]:
    """Spread ``total`` swaps as evenly as capacities allow; remainders go to seeded identities."""
    if total < 0:
        raise SwapError("swap count must be non-negative")
    cap_total = sum(capacities.values())
    if total > cap_total:
        raise SwapError(f"requested {total} swaps but only {cap_total} eligible variants exist")
    rng = make_rng(seed)
    ids = sorted(capacities)
    alloc = {i: 0 for i in ids}
    remaining = total
    while remaining > 0:
        open_ids = [i for i in ids if alloc[i] < capacities[i]]
        share = remaining // len(open_ids)
        if share == 0:
            for i in sorted(rng.choice(open_ids, remaining, replace=False).tolist()):
                alloc[i] += 1
            break
        for i in open_ids:
            give = min(share, capacities[i] - alloc[i])
            alloc[i] += give
            remaining -= give
    return alloc


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def swap_variants(
    baseline: DatasetManifest,
    variants: DatasetManifest,
    axis: str,
    seed,
    fraction: float | None = None,
    per_identity: int | None = None,
) -> tuple[DatasetManifest, SwapPlan]:
    """Replace baseline samples by same-index variants; counts per identity never change.

    Give either a global ``fraction`` of all samples or a fixed ``per_identity``
    count. Selection within an identity is uniform without replacement.
    """
    if (fraction is None) == (per_identity is None):
        raise SwapError("give exactly one of fraction or per_identity")
    if fraction is not None and not 0.0 <= fraction <= 1.0:
        raise SwapError("fraction must be in [0, 1]")
    if axis not in AXIS_FIELDS:
        raise SwapError(f"unknown variance axis {axis!r}")
    base_groups = baseline.by_identity()
    var_groups = variants.by_identity()
    if set(base_groups) != set(var_groups):
        missing = sorted(set(base_groups) ^ set(var_groups))[:5]
        raise SwapError(f"baseline and variant manifests cover different identities (e.g. {missing})")

    eligible: dict[int, dict[int, SceneConfig]] = {}
    allowed = AXIS_FIELDS[axis] | BOOKKEEPING
    for ident, recs in base_groups.items():
        by_index = {r.sample_index: r for r in recs}
        ok = {}
        for v in var_groups[ident]:
            b = by_index.get(v.sample_index)
            if b is None or not carries_axis(v, axis):
                continue
            diff = differing_fields(b, v)
            if diff and diff <= allowed:
                ok[v.sample_index] = v
        eligible[ident] = ok

    total = len(baseline.records)
    if fraction is not None:
        counts = allocate_swaps({i: len(e) for i, e in eligible.items()}, _round_half_up(fraction * total), derive_seed(seed, "allocate"))
    else:
        short = [i for i, e in eligible.items() if len(e) < per_identity]
        if short:
            raise SwapError(f"identity {short[0]} has {len(eligible[short[0]])} eligible variants, {per_identity} requested")
        counts = {i: per_identity for i in eligible}

    plan = SwapPlan(axis, int(seed), float(fraction if fraction is not None else 0.0), total)
    if fraction is None and total:
        plan.target_fraction = sum(counts.values()) / total
    chosen: dict[tuple[int, int], SceneConfig] = {}
    for ident in sorted(counts):
        k = counts[ident]
        if k == 0:
            continue
        rng = make_rng(derive_seed(seed, "swap", ident))
        pool = sorted(eligible[ident])
        picks = sorted(rng.choice(pool, k, replace=False).tolist())
        plan.swaps[ident] = []
        for idx in picks:
            v = eligible[ident][idx]
            chosen[(ident, idx)] = v
            plan.swaps[ident].append((v.key, f"{axis}/{v.key}"))
    if not chosen:
        return DatasetManifest(dict(baseline.header), list(baseline.records)), plan
    records = [chosen.get((r.identity_id, r.sample_index), r) for r in baseline.records]
    header = dict(baseline.header, swap={"axis": axis, "seed": int(seed), "n_swapped": plan.n_swapped})
    return DatasetManifest(header, records), plan


def swap_conservation_violations(before: DatasetManifest, after: DatasetManifest, plan: SwapPlan) -> list[str]:
    """Per-identity counts must match and the changed records must be exactly the planned ones."""
    out = []
    b, a = before.by_identity(), after.by_identity()
    for ident in sorted(b.keys() | a.keys()):
        nb, na = len(b.get(ident, [])), len(a.get(ident, []))
        if nb != na:
            out.append(f"identity {ident}: {nb} samples before, {na} after")
    planned = {(i, key) for i, pairs in plan.swaps.items() for key, _ in pairs}
    changed = {
        (x.identity_id, x.key)
        for x, y in zip(before.records, after.records)
        if x.to_dict() != y.to_dict()
    }
    if changed != planned:
        out.append(f"changed records {sorted(changed ^ planned)[:5]} disagree with the plan")
    return out


# ---------------------------------------------------------------- sensitivity probe


PROBE_AXES = {
    "yaw": {"head_pose.yaw"},
    "pitch": {"head_pose.pitch"},
    "expression_intensity": {"expression_intensity", "expression.preset", "expression.eye_au", "expression.mouth_au"},
    "eyebrow": {"identity.eyebrow_style"},
    "eyes": {"identity.eye_color", "identity.iris_texture"},
}


@dataclass
class ProbeCondition:
    label: str
    refs: list[str]
    parameter: float | None = None
    identity_id: int | None = None
    varied: list[str] = field(default_factory=list)


def neutral_reference(rec: SceneConfig) -> SceneConfig:
    """Frontal, neutral, unoccluded version of ``rec`` used as the probe reference."""
    return replace(
        rec,
        head_pose=Pose(),
        camera_pose=Pose(),
        expression=Expression(preset="neutral"),
        expression_intensity=1.0,
        accessories=Accessories(),
        batch=1,
    )


def probe_records(
    reference: SceneConfig,
    axis: str,
    values: Sequence,
    expression: str = "smile",
) -> list[SceneConfig]:
    """One record per value, each differing from ``reference`` only along ``axis``."""
    if axis not in PROBE_AXES:
        raise ValueError(f"unknown probe axis {axis!r}; choose from {sorted(PROBE_AXES)}")
    out = []
    for v in values:
        if axis in ("yaw", "pitch"):
            out.append(replace(reference, head_pose=replace(reference.head_pose, **{axis: float(v)})))
        elif axis == "expression_intensity":
            out.append(replace(reference, expression=Expression(preset=expression), expression_intensity=float(v)))
        elif axis == "eyebrow":
            out.append(replace(reference, identity=replace(reference.identity, eyebrow_style=int(v))))
        else:
            color, texture = v
            out.append(replace(reference, identity=replace(reference.identity, eye_color=str(color), iris_texture=int(texture))))
    return out


def controlled_variable_violations(
    reference: SceneConfig,
    records: Sequence[SceneConfig],
    varied: Sequence[str],
) -> list[str]:
    """Every record must match ``reference`` except in the declared ``varied`` fields."""
    allowed = set(varied)
    out = []
    for k, rec in enumerate(records):
        if rec.identity_id != reference.identity_id:
            out.append(f"record {k}: identity {rec.identity_id} differs from reference {reference.identity_id}")
        extra = differing_fields(reference, rec) - allowed
        if extra:
            out.append(f"record {k}: undeclared changes in {sorted(extra)}")
    return out


@dataclass
class ConditionStats:
    label: str
    parameter: float | None
    distances: list[float]
    mean: float
    std: float


@dataclass
class SeriesDifference:
    name: str
    baseline: list[str]
    altered: list[str]
    differences: list[float]
    mean: float
    std: float


@dataclass
class ProbeReport:
    conditions: list[ConditionStats]
    comparisons: list[SeriesDifference] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"conditions": [asdict(c) for c in self.conditions], "comparisons": [asdict(c) for c in self.comparisons]}

    @classmethod
    def from_dict(cls, d: dict) -> "ProbeReport":
        return cls(
            [ConditionStats(**c) for c in d["conditions"]],
            [SeriesDifference(**c) for c in d.get("comparisons", [])],
        )

    def condition(self, label: str) -> ConditionStats:
        for c in self.conditions:
            if c.label == label:
                return c
        raise KeyError(label)

    def curve_rows(self) -> list[tuple]:
        """(label, parameter, mean, std, n) ordered by parameter where given."""
        ordered = sorted(self.conditions, key=lambda c: (c.parameter is None, c.parameter if c.parameter is not None else 0.0))
        return [(c.label, c.parameter, c.mean, c.std, len(c.distances)) for c in ordered]


def _mean_std(values: np.ndarray) -> tuple[float, float]:
    if len(values) == 0:
        return float("nan"), float("nan")
    return float(np.mean(values)), float(np.std(values))


def _unit_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def sensitivity_probe(
    reference,
    conditions: Sequence[ProbeCondition],
    embedder: Callable[[np.ndarray], np.ndarray],
    load: Callable[[str], np.ndarray] | Mapping[str, np.ndarray],
    comparisons: Sequence[tuple[str, Sequence[str], Sequence[str]]] = (),
) -> ProbeReport:
    """L2 distances between normalized embeddings of ``reference`` and every condition image.

    ``comparisons`` holds (name, baseline labels, altered labels); each yields
    the pointwise difference of condition means (altered - baseline).
    """
    loader = load.__getitem__ if isinstance(load, Mapping) else load
    ref_emb = _unit_rows(embedder(np.asarray(reference)[None]))[0]
    stats = []
    for cond in conditions:
        imgs = []
        for r in cond.refs:
            try:
                imgs.append(loader(r))
            except Exception as exc:
                raise RuntimeError(f"cannot load probe image {r}: {exc}") from exc
        try:
            emb = _unit_rows(embedder(np.stack(imgs))) if imgs else np.zeros((0, len(ref_emb)))
        except Exception as exc:
            raise RuntimeError(f"embedder failed on condition {cond.label} ({cond.refs}): {exc}") from exc
        d = np.linalg.norm(emb - ref_emb, axis=1)
        mean, std = _mean_std(d)
        stats.append(ConditionStats(cond.label, cond.parameter, d.tolist(), mean, std))
    report = ProbeReport(stats)
    for name, base, alt in comparisons:
        report.comparisons.append(series_difference(report, name, base, alt))
    return report


def series_difference(report: ProbeReport, name: str, baseline: Sequence[str], altered: Sequence[str]) -> SeriesDifference:
    if len(baseline) != len(altered):
        raise ValueError("baseline and altered series must be equally long")
    diffs = np.array([report.condition(a).mean - report.condition(b).mean for b, a in zip(baseline, altered)])
    mean, std = _mean_std(diffs)
    return SeriesDifference(name, list(baseline), list(altered), diffs.tolist(), mean, std)


# ---------------------------------------------------------------- fine-tune sweep


@dataclass
class SweepRow:
    identities: int
    finetuned: AccuracyReport
    scratch: AccuracyReport | None = None

    def to_dict(self) -> dict:
        return {
            "identities": self.identities,
            "finetuned": self.finetuned.to_dict(),
            "scratch": self.scratch.to_dict() if self.scratch else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepRow":
        scratch = AccuracyReport.from_dict(d["scratch"]) if d.get("scratch") else None
        return cls(int(d["identities"]), AccuracyReport.from_dict(d["finetuned"]), scratch)


def finetune_sweep(
    pretrained,
    real,
    batches: Sequence[int],
    cfg,
    evaluate: Callable[[object], AccuracyReport],
    seed,
    margin=None,
    scratch: bool = True,
    aug=None,
) -> list[SweepRow]:
    """Fine-tune on ``n`` seeded real identities for each ``n`` in ``batches``.

    ``evaluate`` maps an encoder to an AccuracyReport on held-out pairs.
    ``n = 0`` evaluates the pretrained encoder as is. A from-scratch model on
    the same identities is trained alongside when ``scratch`` is set.
    """
    from .trainer import finetune, train

    available = real.n_classes
    too_big = [n for n in batches if n > available]
    if too_big:
        raise ValueError(f"requested {max(too_big)} identities but only {available} are available")
    if any(n < 0 for n in batches):
        raise ValueError("identity counts must be non-negative")
    rows = []
    for n in batches:
        if n == 0:
            rows.append(SweepRow(0, evaluate(pretrained.build_model().encoder)))
            continue
        rng = make_rng(derive_seed(seed, "sweep", n))
        ids = np.sort(rng.choice(available, n, replace=False))
        subset = real.subset(np.flatnonzero(np.isin(real.labels, ids)))
        ft = finetune(pretrained, subset, cfg, aug=aug)
        row = SweepRow(n, evaluate(ft.model.encoder))
        if scratch:
            row.scratch = evaluate(train(subset, cfg, margin, aug=aug).model.encoder)
        rows.append(row)
        log.info("sweep %d identities: finetuned %.4f", n, row.finetuned.mean)
    return rows


# ---------------------------------------------------------------- reporting


def _read_json(path: Path, warnings: list[str]):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        warnings.append(f"unreadable {path.name}: {exc}")
        return None


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _slug(name: str) -> str:
    return "root" if name in ("", ".") else name.replace("/", "_")


def _tsv(rows: Sequence[Sequence], header: Sequence[str]) -> str:
    fmt = lambda v: "" if v is None else (repr(v) if isinstance(v, float) else str(v))
    return "\n".join(["\t".join(header)] + ["\t".join(fmt(v) for v in r) for r in rows]) + "\n"


def emit_report(run_dir) -> dict:
    """Collect everything under ``run_dir`` into summary.md, results.json and .tsv curve files."""
    run = Path(run_dir)
    if not run.is_dir():
        raise FileNotFoundError(f"run directory {run} does not exist")
    warnings: list[str] = []
    results: dict = {"accuracy": {}, "training": {}, "sweep": {}, "probe": {}, "swap": {}}

    for path in sorted(run.rglob(REPORT_NAME)):
        d = _read_json(path, warnings)
        if d is not None:
            results["accuracy"][str(path.parent.relative_to(run))] = d
    for path in sorted(run.rglob(METRICS_NAME)):
        rows = []
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except ValueError:
                    warnings.append(f"bad line in {path.relative_to(run)}")
        results["training"][str(path.parent.relative_to(run))] = rows
    for path in sorted(run.rglob(SWEEP_NAME)):
        d = _read_json(path, warnings)
        if d is not None:
            results["sweep"][str(path.parent.relative_to(run))] = d
    for path in sorted(run.rglob(PROBE_NAME)):
        d = _read_json(path, warnings)
        if d is not None:
            results["probe"][str(path.parent.relative_to(run))] = d
    for path in sorted(run.rglob(PLAN_NAME)):
        d = _read_json(path, warnings)
        if d is not None and d.get("swaps") is not None:
            results["swap"][str(path.parent.relative_to(run))] = {k: d[k] for k in d if k != "swaps"}

    if not any(results[k] for k in results):
        warnings.append(f"no results found under {run}")

    lines = [f"# Run summary: {run.name}", ""]
    curves: list[str] = []
    if results["accuracy"]:
        lines += ["## Verification", "", "| run | metric | mean | std | folds |", "|---|---|---|---|---|"]
        for name, d in results["accuracy"].items():
            lines.append(f"| {name} | {d.get('metric', 'l2')} | {d['mean']:.4f} | {d['std']:.4f} | {len(d['folds'])} |")
        lines.append("")
    for name, rows in results["training"].items():
        if not rows:
            continue
        lines += [f"## Training ({name})", "", f"epochs logged: {len(rows)}, final loss {rows[-1]['loss']:.4f}", ""]
        fname = f"loss_{_slug(name)}.tsv"
        _write_text(run / fname, _tsv([(r["epoch"], r["lr"], r["loss"]) for r in rows], ("epoch", "lr", "loss")))
        curves.append(fname)
    for name, d in results["sweep"].items():
        rows = [SweepRow.from_dict(r) for r in d["rows"]]
        lines += [f"## Fine-tune sweep ({name})", "", "| identities | finetuned | scratch |", "|---|---|---|"]
        for r in rows:
            s = f"{r.scratch.mean:.4f}" if r.scratch else "-"
            lines.append(f"| {r.identities} | {r.finetuned.mean:.4f} | {s} |")
        lines.append("")
        fname = f"sweep_{_slug(name)}.tsv"
        _write_text(
            run / fname,
            _tsv(
                [(r.identities, r.finetuned.mean, r.finetuned.std, r.scratch.mean if r.scratch else None) for r in rows],
                ("identities", "finetuned_mean", "finetuned_std", "scratch_mean"),
            ),
        )
        curves.append(fname)
    for name, d in results["probe"].items():
        rep = ProbeReport.from_dict(d)
        lines += [f"## Sensitivity probe ({name})", "", "| condition | parameter | mean | std | n |", "|---|---|---|---|---|"]
        for label, param, mean, std, n in rep.curve_rows():
            lines.append(f"| {label} | {'' if param is None else param} | {mean:.4f} | {std:.4f} | {n} |")
        for c in rep.comparisons:
            lines.append(f"\n{c.name}: mean difference {c.mean:.4f} +- {c.std:.4f}")
        lines.append("")
        fname = f"probe_{_slug(name)}.tsv"
        _write_text(run / fname, _tsv(rep.curve_rows(), ("condition", "parameter", "mean", "std", "n")))
        curves.append(fname)
    for name, d in results["swap"].items():
        lines += [f"## Swap ({name})", "", f"axis {d['axis']}: {d['n_swapped']} of {d['total_samples']} samples swapped", ""]
    if warnings:
        lines += ["## Warnings", ""] + [f"- {w}" for w in warnings] + [""]
    for w in warnings:
        log.warning(w)

    _write_text(run / "summary.md", "\n".join(lines).rstrip() + "\n")
    out = {"results": results, "warnings": warnings, "curves": curves}
    _write_text(run / "results.json", json.dumps(out, indent=2, sort_keys=True) + "\n")
    return out


def save_sweep(rows: Sequence[SweepRow], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_text(path, json.dumps({"rows": [r.to_dict() for r in rows]}, indent=2) + "\n")
    return path


def save_probe(report: ProbeReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_text(path, json.dumps(report.to_dict(), indent=2) + "\n")
    return path
