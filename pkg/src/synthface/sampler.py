"""Identity pool and per-sample scene sampling, plus the NDJSON manifest format.

A manifest is one header line followed by one self-contained scene record per
line. Every record carries its identity's fixed defaults so each line can be
rendered on its own.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .schema import SchemaError, from_dict, to_dict
from .seeding import derive_seed, make_rng

MANIFEST_KIND = "synthface-manifest"
MANIFEST_VERSION = 1

PRESETS = (
    "neutral", "happiness", "sadness", "surprise", "anger",
    "fear", "contempt", "disgust", "mouth-open",
)
HDRI_PERIODS = ("daytime", "evening", "night")
# Opaque action-unit ids; the renderer owns their meaning.
EYE_AUS = ("AU5", "AU6", "AU7", "AU43", "AU45", "AU46")
MOUTH_AUS = ("AU10", "AU12", "AU15", "AU20", "AU25", "AU26", "AU27")
EYE_COLORS = ("brown", "dark-brown", "hazel", "amber", "green", "blue", "gray")

# yaw and roll wrap to (-180, 180]; pitch is clipped to [-90, 90].
POSE_LIMITS = {"yaw": (-180.0, 180.0), "pitch": (-90.0, 90.0), "roll": (-180.0, 180.0)}


class ManifestError(ValueError):
    pass


class ManifestParseError(ManifestError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


# ---------------------------------------------------------------- config types


def _default_demographics() -> dict[str, float]:
    # The six published shares sum to 99.99%; the residual goes to "other".
    return {
        "north-european": 0.6882,
        "african": 0.0852,
        "hispanic": 0.0794,
        "mediterranean": 0.0638,
        "southeast-asian": 0.0501,
        "south-asian": 0.0332,
        "other": 0.0001,
    }


@dataclass
class DemographicsSpec:
    proportions: dict[str, float] = field(default_factory=_default_demographics)

    def validate(self) -> None:
        if not self.proportions:
            raise ValueError("demographics: no ethnicities given")
        for label, p in self.proportions.items():
            if not (p >= 0.0 and math.isfinite(p)):
                raise ValueError(f"demographics: proportion of {label!r} is {p}")
        total = math.fsum(self.proportions.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"demographics: proportions sum to {total!r}, expected 1")


@dataclass
class PoseComponent:
    weight: float = 1.0
    mean: float = 0.0
    spread: float = 0.0


def _single(spread: float) -> list[PoseComponent]:
    return [PoseComponent(1.0, 0.0, spread)]


@dataclass
class PoseDistribution:
    """Independent Gaussian mixture per axis, in degrees.

    ``spread`` is a standard deviation unless ``spread_is_variance`` is set.
    """

    yaw: list[PoseComponent] = field(default_factory=lambda: _single(25.0))
    pitch: list[PoseComponent] = field(default_factory=lambda: _single(10.0))
    roll: list[PoseComponent] = field(default_factory=lambda: _single(2.5))
    spread_is_variance: bool = False

    def validate(self) -> None:
        for axis in ("yaw", "pitch", "roll"):
            comps = getattr(self, axis)
            if not comps:
                raise ValueError(f"pose.{axis}: no mixture components")
            if any(c.weight < 0 or c.spread < 0 for c in comps):
                raise ValueError(f"pose.{axis}: negative weight or spread")
            if abs(math.fsum(c.weight for c in comps) - 1.0) > 1e-9:
                raise ValueError(f"pose.{axis}: component weights do not sum to 1")


@dataclass
class GazeSpec:
    horizontal: tuple[float, float] = (-0.5, 0.5)
    vertical: tuple[float, float] = (0.85, 1.0)
    distance: tuple[float, float] = (0.3, 6.0)

    def validate(self) -> None:
        for name in ("horizontal", "vertical", "distance"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"gaze.{name}: range [{lo}, {hi}] is empty")


@dataclass
class HairColorDelta:
    relative_range: float = 0.25

    def validate(self) -> None:
        if not 0.0 <= self.relative_range <= 1.0:
            raise ValueError(f"hair.relative_range must be in [0, 1], got {self.relative_range}")


@dataclass
class AccessoryPolicy:
    batch2_fraction: float = 0.17
    batch1_makeup: float = 0.03
    batch1_occlusion: float = 0.025
    batch1_hat: float = 0.035
    batch2_makeup: float = 0.15
    batch2_occlusion: float = 0.50
    batch2_hat: float = 0.70
    batch2_random_expression: float = 0.50
    beard_if_male: float = 0.15
    glasses: float = 0.15

    def validate(self) -> None:
        for name, p in to_dict(self).items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"accessories.{name} must be in [0, 1], got {p}")
        if self.batch1_makeup + self.batch1_occlusion + self.batch1_hat > 1.0 + 1e-12:
            raise ValueError("accessories: batch-1 probabilities sum above 1")


@dataclass
class SamplerConfig:
    n_identities: int = 30000
    samples_per_identity: int = 20
    demographics: DemographicsSpec = field(default_factory=DemographicsSpec)
    head_pose: PoseDistribution = field(default_factory=PoseDistribution)
    camera_pose: PoseDistribution = field(default_factory=PoseDistribution)
    resolutions: list[int] = field(default_factory=lambda: [256, 512])
    resolution_probs: list[float] = field(default_factory=lambda: [0.5, 0.5])
    hdri_periods: list[str] = field(default_factory=lambda: list(HDRI_PERIODS))
    hdri_probs: list[float] = field(default_factory=lambda: [1 / 3, 1 / 3, 1 / 3])
    presets: list[str] = field(default_factory=lambda: list(PRESETS))
    eye_aus: list[str] = field(default_factory=lambda: list(EYE_AUS))
    mouth_aus: list[str] = field(default_factory=lambda: list(MOUTH_AUS))
    gaze: GazeSpec = field(default_factory=GazeSpec)
    hair: HairColorDelta = field(default_factory=HairColorDelta)
    accessories: AccessoryPolicy = field(default_factory=AccessoryPolicy)
    male_fraction: float = 0.5
    eye_colors: list[str] = field(default_factory=lambda: list(EYE_COLORS))
    n_iris_textures: int = 100
    n_eyebrow_styles: int = 25

    def validate(self) -> None:
        if self.n_identities < 0:
            raise ValueError("n_identities must be >= 0")
        if self.samples_per_identity < 1:
            raise ValueError("samples_per_identity must be >= 1")
        self.demographics.validate()
        self.head_pose.validate()
        self.camera_pose.validate()
        self.gaze.validate()
        self.hair.validate()
        self.accessories.validate()
        for name, values, probs in (
            ("resolution", self.resolutions, self.resolution_probs),
            ("hdri", self.hdri_periods, self.hdri_probs),
        ):
            if len(values) != len(probs) or not values:
                raise ValueError(f"{name}: values and probabilities differ in length")
            if any(p < 0 for p in probs) or abs(math.fsum(probs) - 1.0) > 1e-9:
                raise ValueError(f"{name}: probabilities must be >= 0 and sum to 1")
        if not self.presets or not self.eye_aus or not self.mouth_aus or not self.eye_colors:
            raise ValueError("presets, action-unit lists and eye colors must be non-empty")
        if not 0.0 <= self.male_fraction <= 1.0:
            raise ValueError("male_fraction must be in [0, 1]")
        if self.n_iris_textures < 1 or self.n_eyebrow_styles < 1:
            raise ValueError("asset counts must be >= 1")


# ---------------------------------------------------------------- record types


@dataclass
class IdentityRecord:
    identity_id: int
    ethnicity: str
    gender: str
    eye_color: str
    iris_texture: int
    eyebrow_style: int


@dataclass
class Pose:
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0


@dataclass
class Expression:
    """Either a preset name, or one/two action units (eye, mouth)."""

    preset: str | None = "neutral"
    eye_au: str | None = None
    mouth_au: str | None = None

    @property
    def is_preset(self) -> bool:
        return self.preset is not None


@dataclass
class Gaze:
    horizontal: float = 0.0
    vertical: float = 0.9
    distance: float = 1.0


@dataclass
class HairColor:
    melanin: float = 1.0
    whiteness: float = 1.0
    roughness: float = 1.0
    redness: float = 1.0


@dataclass
class Accessories:
    makeup: bool = False
    occlusion: bool = False
    hat: bool = False
    glasses: bool = False
    beard: bool = False


@dataclass
class SceneConfig:
    identity: IdentityRecord
    sample_index: int
    resolution: int
    head_pose: Pose
    camera_pose: Pose
    hdri_period: str
    hdri_rotation: float
    expression: Expression
    gaze: Gaze
    hair_color: HairColor
    accessories: Accessories
    batch: int
    seed: int
    expression_intensity: float = 1.0
    hairstyle: str | None = None

    @property
    def identity_id(self) -> int:
        return self.identity.identity_id

    @property
    def key(self) -> str:
        return f"id{self.identity_id:06d}_{self.sample_index:02d}"

    def to_dict(self) -> dict:
        return to_dict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SceneConfig":
        return from_dict(cls, data)


@dataclass
class DatasetManifest:
    header: dict
    records: list[SceneConfig]

    @property
    def samples_per_identity(self) -> int:
        return int(self.header["samples_per_identity"])

    def by_identity(self) -> dict[int, list[SceneConfig]]:
        groups: dict[int, list[SceneConfig]] = defaultdict(list)
        for rec in self.records:
            groups[rec.identity_id].append(rec)
        return dict(groups)

    def sampler_config(self) -> SamplerConfig | None:
        cfg = self.header.get("config")
        return from_dict(SamplerConfig, cfg) if cfg is not None else None


# ---------------------------------------------------------------- sampling


def largest_remainder(n: int, proportions: Iterable[float]) -> list[int]:
    """Integer counts proportional to ``proportions`` that sum exactly to ``n``."""
    props = list(proportions)
    quotas = [n * p for p in props]
    counts = [math.floor(q) for q in quotas]
    short = n - sum(counts)
    # ties keep declaration order
    order = sorted(range(len(props)), key=lambda i: -(quotas[i] - counts[i]))
    for i in order[:short]:
        counts[i] += 1
    return counts


def sample_identity_pool(
    n: int,
    demographics: DemographicsSpec | None = None,
    seed: int = 0,
    config: SamplerConfig | None = None,
) -> list[IdentityRecord]:
    """Draw ``n`` identities with exact demographic counts and fixed per-identity defaults."""
    config = config or SamplerConfig()
    demographics = demographics or config.demographics
    demographics.validate()
    if n < 0:
        raise ValueError("n must be >= 0")
    labels = list(demographics.proportions)
    counts = largest_remainder(n, demographics.proportions.values())
    ethnicities = np.repeat(np.arange(len(labels)), counts)
    make_rng(derive_seed(seed, "pool")).shuffle(ethnicities)

    pool = []
    for i in range(n):
        rng = make_rng(derive_seed(seed, "identity", i))
        pool.append(
            IdentityRecord(
                identity_id=i,
                ethnicity=labels[int(ethnicities[i])],
                gender="male" if rng.random() < config.male_fraction else "female",
                eye_color=config.eye_colors[int(rng.integers(len(config.eye_colors)))],
                iris_texture=int(rng.integers(config.n_iris_textures)),
                eyebrow_style=int(rng.integers(config.n_eyebrow_styles)),
            )
        )
    return pool


def _wrap180(angle: float) -> float:
    wrapped = math.fmod(angle + 180.0, 360.0)
    if wrapped <= 0.0:
        wrapped += 360.0
    return wrapped - 180.0


def _draw_axis(components: list[PoseComponent], rng: np.random.Generator, variance: bool) -> float:
    weights = [c.weight for c in components]
    comp = components[int(rng.choice(len(components), p=weights))] if len(components) > 1 else components[0]
    sd = math.sqrt(comp.spread) if variance else comp.spread
    return float(rng.normal(comp.mean, sd)) if sd > 0 else float(comp.mean)


def sample_pose(dist: PoseDistribution, seed) -> Pose:
    rng = make_rng(seed)
    var = dist.spread_is_variance
    yaw = _wrap180(_draw_axis(dist.yaw, rng, var))
    pitch = min(90.0, max(-90.0, _draw_axis(dist.pitch, rng, var)))
    roll = _wrap180(_draw_axis(dist.roll, rng, var))
    return Pose(yaw=yaw, pitch=pitch, roll=roll)


def _pick(values: list, probs: list[float], rng: np.random.Generator):
    u = rng.random()
    acc = 0.0
    for value, p in zip(values, probs):
        acc += p
        if u < acc:
            return value
    return values[-1]


def sample_scene_config(
    identity: IdentityRecord,
    index: int,
    config: SamplerConfig,
    seed: int,
) -> SceneConfig:
    if not 0 <= index < config.samples_per_identity:
        raise ValueError(f"sample index {index} outside [0, {config.samples_per_identity})")
    rng = make_rng(seed)
    acc = config.accessories

    resolution = _pick(config.resolutions, config.resolution_probs, rng)
    head_pose = sample_pose(config.head_pose, rng)
    camera_pose = sample_pose(config.camera_pose, rng)
    hdri_period = _pick(config.hdri_periods, config.hdri_probs, rng)
    hdri_rotation = float(rng.uniform(0.0, 360.0))
    expression = Expression(preset=config.presets[int(rng.integers(len(config.presets)))])

    batch = 2 if rng.random() < acc.batch2_fraction else 1
    flags = Accessories()
    if batch == 1:
        u = rng.random()
        if u < acc.batch1_makeup:
            flags.makeup = True
        elif u < acc.batch1_makeup + acc.batch1_occlusion:
            flags.occlusion = True
        elif u < acc.batch1_makeup + acc.batch1_occlusion + acc.batch1_hat:
            flags.hat = True
    else:
        flags.makeup = bool(rng.random() < acc.batch2_makeup)
        flags.occlusion = bool(rng.random() < acc.batch2_occlusion)
        flags.hat = bool(rng.random() < acc.batch2_hat)
        if rng.random() < acc.batch2_random_expression:
            # one AU or two with equal probability; a single AU is eye or mouth alike
            n_units = 1 + int(rng.integers(2))
            eye_au = config.eye_aus[int(rng.integers(len(config.eye_aus)))]
            mouth_au = config.mouth_aus[int(rng.integers(len(config.mouth_aus)))]
            if n_units == 1:
                if rng.random() < 0.5:
                    mouth_au = None
                else:
                    eye_au = None
            expression = Expression(preset=None, eye_au=eye_au, mouth_au=mouth_au)
    flags.glasses = bool(rng.random() < acc.glasses)
    beard_draw = rng.random()
    flags.beard = identity.gender == "male" and bool(beard_draw < acc.beard_if_male)

    g = config.gaze
    gaze = Gaze(
        horizontal=float(rng.uniform(*g.horizontal)),
        vertical=float(rng.uniform(*g.vertical)),
        distance=float(rng.uniform(*g.distance)),
    )
    r = config.hair.relative_range
    m = rng.uniform(1.0 - r, 1.0 + r, size=4)
    hair = HairColor(*(float(v) for v in m))

    return SceneConfig(
        identity=identity,
        sample_index=index,
        resolution=int(resolution),
        head_pose=head_pose,
        camera_pose=camera_pose,
        hdri_period=hdri_period,
        hdri_rotation=hdri_rotation,
        expression=expression,
        gaze=gaze,
        hair_color=hair,
        accessories=flags,
        batch=batch,
        seed=int(seed),
    )


def sample_identity_scenes(identity: IdentityRecord, config: SamplerConfig, seed: int) -> list[SceneConfig]:
    return [
        sample_scene_config(identity, k, config, derive_seed(seed, "scene", identity.identity_id, k))
        for k in range(config.samples_per_identity)
    ]


def _scenes_job(args):
    return sample_identity_scenes(*args)


def build_manifest(config: SamplerConfig, seed: int, workers: int = 1) -> DatasetManifest:
    """Sample the full dataset. Output is independent of ``workers``."""
    config.validate()
    pool = sample_identity_pool(config.n_identities, config.demographics, seed, config)
    jobs = [(ident, config, seed) for ident in pool]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            groups = list(ex.map(_scenes_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        groups = [_scenes_job(j) for j in jobs]
    records = [rec for group in groups for rec in group]
    header = {
        "kind": MANIFEST_KIND,
        "version": MANIFEST_VERSION,
        "seed": int(seed),
        "n_identities": config.n_identities,
        "samples_per_identity": config.samples_per_identity,
        "n_records": len(records),
        "config": to_dict(config),
    }
    return DatasetManifest(header=header, records=records)


# ---------------------------------------------------------------- file format


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"), allow_nan=False)


def manifest_lines(manifest: DatasetManifest) -> list[str]:
    return [_dumps(manifest.header)] + [_dumps(rec.to_dict()) for rec in manifest.records]


def write_manifest(manifest: DatasetManifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = "\n".join(manifest_lines(manifest)) + "\n"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def parse_manifest(lines: Iterable[str]) -> DatasetManifest:
    header = None
    records = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestParseError(lineno, f"invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ManifestParseError(lineno, "expected a JSON object")
        if header is None:
            if obj.get("kind") != MANIFEST_KIND:
                raise ManifestParseError(lineno, f"first line is not a {MANIFEST_KIND} header")
            header = obj
            continue
        try:
            records.append(SceneConfig.from_dict(obj))
        except SchemaError as exc:
            raise ManifestParseError(lineno, str(exc)) from None
    if header is None:
        raise ManifestParseError(1, "empty manifest (no header)")
    return DatasetManifest(header=header, records=records)


def read_manifest(path) -> DatasetManifest:
    with open(path, encoding="utf-8") as fh:
        return parse_manifest(fh)


# ---------------------------------------------------------------- validation


@dataclass
class Violation:
    record: str | None
    message: str

    def __str__(self) -> str:
        return f"{self.record}: {self.message}" if self.record else self.message


def _in(value: float, lo: float, hi: float, closed_hi: bool = True) -> bool:
    if not math.isfinite(value):
        return False
    return lo <= value <= hi if closed_hi else lo <= value < hi


def validate_manifest(manifest: DatasetManifest | str | os.PathLike) -> list[Violation]:
    """Every invariant breach in the manifest; empty iff valid."""
    if not isinstance(manifest, DatasetManifest):
        manifest = read_manifest(manifest)
    out: list[Violation] = []
    try:
        cfg = manifest.sampler_config() or SamplerConfig()
    except SchemaError as exc:
        out.append(Violation(None, f"header config invalid: {exc}"))
        cfg = SamplerConfig()
    header = manifest.header
    per_id = int(header.get("samples_per_identity", cfg.samples_per_identity))

    if header.get("n_records") != len(manifest.records):
        out.append(Violation(None, f"header n_records={header.get('n_records')} but {len(manifest.records)} records"))
    groups = manifest.by_identity()
    if "n_identities" in header and header["n_identities"] != len(groups):
        out.append(Violation(None, f"header n_identities={header['n_identities']} but {len(groups)} identities"))

    for ident, recs in groups.items():
        tag = f"identity {ident}"
        if len(recs) != per_id:
            out.append(Violation(tag, f"has {len(recs)} records, expected {per_id}"))
        indices = sorted(r.sample_index for r in recs)
        if indices != list(range(len(recs))):
            out.append(Violation(tag, f"sample indices {indices} are not 0..{len(recs) - 1}"))
        first = recs[0].identity
        for r in recs[1:]:
            if r.identity != first:
                out.append(Violation(r.key, "identity defaults differ from the identity's first record"))

    r_lo, r_hi = 1.0 - cfg.hair.relative_range, 1.0 + cfg.hair.relative_range
    for rec in manifest.records:
        tag = rec.key
        if rec.resolution not in cfg.resolutions:
            out.append(Violation(tag, f"resolution {rec.resolution} not in {cfg.resolutions}"))
        for block in ("head_pose", "camera_pose"):
            pose = getattr(rec, block)
            for axis, (lo, hi) in POSE_LIMITS.items():
                v = getattr(pose, axis)
                if not _in(v, lo, hi):
                    out.append(Violation(tag, f"{block}.{axis}={v} outside [{lo}, {hi}]"))
        if rec.hdri_period not in cfg.hdri_periods:
            out.append(Violation(tag, f"hdri_period {rec.hdri_period!r} unknown"))
        if not _in(rec.hdri_rotation, 0.0, 360.0, closed_hi=False):
            out.append(Violation(tag, f"hdri_rotation={rec.hdri_rotation} outside [0, 360)"))
        ex = rec.expression
        if ex.preset is not None:
            if ex.eye_au is not None or ex.mouth_au is not None:
                out.append(Violation(tag, "expression has both a preset and action units"))
            if ex.preset not in cfg.presets:
                out.append(Violation(tag, f"expression preset {ex.preset!r} unknown"))
        else:
            if ex.eye_au is None and ex.mouth_au is None:
                out.append(Violation(tag, "expression has neither a preset nor action units"))
            if ex.eye_au is not None and ex.eye_au not in cfg.eye_aus:
                out.append(Violation(tag, f"eye action unit {ex.eye_au!r} unknown"))
            if ex.mouth_au is not None and ex.mouth_au not in cfg.mouth_aus:
                out.append(Violation(tag, f"mouth action unit {ex.mouth_au!r} unknown"))
            if rec.batch != 2:
                out.append(Violation(tag, "randomized expression outside batch 2"))
        if not _in(rec.expression_intensity, 0.0, 1.0):
            out.append(Violation(tag, f"expression_intensity={rec.expression_intensity} outside [0, 1]"))
        for name in ("horizontal", "vertical", "distance"):
            lo, hi = getattr(cfg.gaze, name)
            v = getattr(rec.gaze, name)
            if not _in(v, lo, hi):
                out.append(Violation(tag, f"gaze.{name}={v} outside [{lo}, {hi}]"))
        for name, v in to_dict(rec.hair_color).items():
            if not _in(v, r_lo, r_hi):
                out.append(Violation(tag, f"hair_color.{name}={v} outside [{r_lo}, {r_hi}]"))
        acc = rec.accessories
        if acc.beard and rec.identity.gender != "male":
            out.append(Violation(tag, "beard on a non-male identity"))
        if rec.batch not in (1, 2):
            out.append(Violation(tag, f"batch={rec.batch} not in (1, 2)"))
        if rec.batch == 1 and acc.makeup + acc.occlusion + acc.hat > 1:
            out.append(Violation(tag, "batch-1 record has more than one of makeup/occlusion/hat"))
    return out


# ---------------------------------------------------------------- summaries


def _stats(values: list[float]) -> dict:
    if not values:
        return {"count": 0, "mean": None, "std": None}
    arr = np.asarray(values, dtype=np.float64)
    return {"count": len(values), "mean": float(arr.mean()), "std": float(arr.std())}


def _rate(flags: list[bool]) -> dict:
    n = len(flags)
    return {"count": n, "hits": int(sum(flags)), "rate": (sum(flags) / n) if n else None}


def summarize_manifest(manifest: DatasetManifest) -> dict:
    """Per-field means/spreads, accessory rates by batch, and ethnicity counts."""
    recs = manifest.records
    b1 = [r for r in recs if r.batch == 1]
    b2 = [r for r in recs if r.batch == 2]
    male = [r for r in recs if r.identity.gender == "male"]

    numeric = {}
    for block in ("head_pose", "camera_pose"):
        for axis in ("yaw", "pitch", "roll"):
            numeric[f"{block}.{axis}"] = _stats([getattr(getattr(r, block), axis) for r in recs])
    numeric["hdri_rotation"] = _stats([r.hdri_rotation for r in recs])
    for name in ("horizontal", "vertical", "distance"):
        numeric[f"gaze.{name}"] = _stats([getattr(r.gaze, name) for r in recs])
    for name in ("melanin", "whiteness", "roughness", "redness"):
        numeric[f"hair_color.{name}"] = _stats([getattr(r.hair_color, name) for r in recs])

    rates = {}
    for name in ("makeup", "occlusion", "hat", "glasses", "beard"):
        rates[name] = _rate([getattr(r.accessories, name) for r in recs])
    for name in ("makeup", "occlusion", "hat"):
        rates[f"batch1.{name}"] = _rate([getattr(r.accessories, name) for r in b1])
        rates[f"batch2.{name}"] = _rate([getattr(r.accessories, name) for r in b2])
    rates["batch2"] = _rate([r.batch == 2 for r in recs])
    rates["batch2.random_expression"] = _rate([r.expression.preset is None for r in b2])
    rates["beard_if_male"] = _rate([r.accessories.beard for r in male])

    identities = {r.identity_id: r.identity for r in recs}
    return {
        "count": len(recs),
        "n_identities": len(identities),
        "numeric": numeric,
        "rates": rates,
        "ethnicity_counts": dict(sorted(Counter(i.ethnicity for i in identities.values()).items())),
        "hdri_period_counts": dict(sorted(Counter(r.hdri_period for r in recs).items())),
        "preset_counts": dict(sorted(Counter(r.expression.preset for r in recs if r.expression.preset).items())),
        "resolution_counts": {str(k): v for k, v in sorted(Counter(r.resolution for r in recs).items())},
    }


def with_overrides(record: SceneConfig, **changes) -> SceneConfig:
    """Copy of ``record`` with the given top-level fields replaced."""
    return replace(record, **changes)
