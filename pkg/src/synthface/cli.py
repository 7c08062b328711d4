"""Command-line entry point: ``synthface <subcommand> ...``.

Exit codes: 0 success, 1 usage, 2 validation, 3 runtime.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import SNAPSHOT_NAME, RunConfig, load_config, snapshot_dict, write_snapshot
from .schema import SchemaError

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("synthface")


class UsageError(Exception):
    pass


class ValidationFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _config(args) -> RunConfig:
    return load_config(getattr(args, "config", None), getattr(args, "set", None) or [])


def _add_config(p):
    p.add_argument("--config", help="YAML or JSON config file (default: $SYNTHFACE_CONFIG)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. margin.scale=32")


def _out_snapshot(cfg: RunConfig, out: Path) -> None:
    write_snapshot(cfg, out.with_name(out.name + ".snapshot"))


# ---------------------------------------------------------------- manifest commands


def cmd_sample_manifest(args) -> int:
    from .sampler import build_manifest, write_manifest

    cfg = _config(args)
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out)
    manifest = build_manifest(cfg.sampler, cfg.module_seed("sampler"), workers=args.workers)
    write_manifest(manifest, out)
    _out_snapshot(cfg, out)
    print(f"wrote {len(manifest.records)} records for {cfg.sampler.n_identities} identities to {out}")
    return EXIT_OK


def cmd_validate_manifest(args) -> int:
    from .sampler import validate_manifest

    violations = validate_manifest(args.path)
    for v in violations[: args.max_errors]:
        print(v)
    if violations:
        print(f"{len(violations)} violation(s)", file=sys.stderr)
        return EXIT_VALIDATION
    print("manifest is valid")
    return EXIT_OK


def cmd_summarize_manifest(args) -> int:
    from .sampler import read_manifest, summarize_manifest

    summary = summarize_manifest(read_manifest(args.path))
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_make_variants(args) -> int:
    from .experiments import make_variant_manifest
    from .sampler import read_manifest, write_manifest
    from .seeding import derive_seed

    cfg = _config(args)
    styles = args.hairstyles.split(",") if args.hairstyles else ()
    variants = make_variant_manifest(
        read_manifest(args.baseline), args.axis, derive_seed(cfg.module_seed("experiments"), "variants"), args.per_identity, styles
    )
    out = Path(args.out)
    write_manifest(variants, out)
    _out_snapshot(cfg, out)
    print(f"wrote {len(variants.records)} {args.axis} variants to {out}")
    return EXIT_OK


def cmd_swap(args) -> int:
    from .experiments import PLAN_NAME, swap_variants
    from .sampler import read_manifest, write_manifest
    from .seeding import derive_seed

    cfg = _config(args)
    baseline, variants = read_manifest(args.baseline), read_manifest(args.variants)
    axis = args.axis or variants.header.get("variant_axis")
    if axis is None:
        raise UsageError("swap: --axis is required when the variant manifest does not declare one")
    if (args.fraction is None) == (args.per_identity is None):
        raise UsageError("swap: give exactly one of --fraction or --per-identity")
    swapped, plan = swap_variants(
        baseline, variants, axis, derive_seed(cfg.module_seed("experiments"), "swap"), args.fraction, args.per_identity
    )
    out = Path(args.out)
    write_manifest(swapped, out)
    plan.save(Path(args.plan) if args.plan else out.with_name(PLAN_NAME))
    _out_snapshot(cfg, out)
    print(f"swapped {plan.n_swapped} of {plan.total_samples} samples ({plan.fraction:.4f}) along {axis}")
    return EXIT_OK


# ---------------------------------------------------------------- images


def _toy_ref(rec) -> tuple[str, str]:
    name = f"id{rec.identity_id:06d}"
    return name, f"{name}_{rec.sample_index + 1:04d}"


def cmd_render_toy(args) -> int:
    from .align import align_face, write_landmark_csv
    from .imageio import write_image
    from .sampler import read_manifest
    from .toyface import render

    manifest = read_manifest(args.manifest)
    out = Path(args.out)
    rows = []
    for rec in manifest.records:
        img, lm = render(rec)
        if args.aligned:
            img = align_face(img, lm).image
        name, ref = _toy_ref(rec)
        rel = f"{name}/{ref}.png"
        write_image(out / rel, img)
        rows.append((rel, lm))
    if not args.aligned:
        write_landmark_csv(rows, out / "landmarks.csv")
    print(f"rendered {len(rows)} images to {out}")
    return EXIT_OK


def cmd_align(args) -> int:
    from .align import AlignedCropCache, CsvLandmarkProvider, align_face
    from .imageio import read_image, write_image

    provider = CsvLandmarkProvider(args.landmarks)
    src, out = Path(args.images), Path(args.out)
    cache = AlignedCropCache(args.cache) if args.cache else None
    for rel in provider.paths():
        img = read_image(src / rel)
        if cache is not None:
            crop, _ = cache.get_or_align(img, provider(rel))
        else:
            crop = align_face(img, provider(rel), source=rel).image
        write_image((out / rel).with_suffix(".png"), crop)
    print(f"aligned {len(provider.paths())} images into {out}")
    return EXIT_OK


# ---------------------------------------------------------------- training and evaluation


def _dataset_from_args(args):
    from .data import FaceDataset, load_identity_folders, render_aligned
    from .sampler import read_manifest

    if bool(args.manifest) == bool(args.imagedir):
        raise UsageError("give exactly one of --manifest or --imagedir")
    if args.imagedir:
        return load_identity_folders(args.imagedir)
    manifest = read_manifest(args.manifest)
    images = render_aligned(manifest.records)
    ids = sorted({r.identity_id for r in manifest.records})
    remap = {i: k for k, i in enumerate(ids)}
    labels = np.array([remap[r.identity_id] for r in manifest.records])
    return FaceDataset(images, labels, [_toy_ref(r)[1] for r in manifest.records], [f"id{i:06d}" for i in ids])


def cmd_train(args) -> int:
    from .trainer import train

    cfg = _config(args)
    cfg.train.seed = cfg.module_seed("train")
    data = _dataset_from_args(args)
    out = Path(args.out)
    res = train(data, cfg.train, cfg.margin, run_dir=out, aug=cfg.augmentation, config_snapshot=snapshot_dict(cfg))
    last = res.history[-1]["loss"] if res.history else float("nan")
    print(f"trained {len(res.history)} epochs on {len(data)} images, final loss {last:.4f}; checkpoints in {out / 'checkpoints'}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    from .data import load_identity_folders
    from .trainer import finetune, load_checkpoint

    cfg = _config(args)
    cfg.train.seed = cfg.module_seed("finetune")
    ckpt = load_checkpoint(args.from_)
    data = load_identity_folders(args.data)
    base = args.base_lr if args.base_lr is not None else cfg.train.base_lr
    res = finetune(ckpt, data, cfg.train, base, run_dir=Path(args.out), aug=cfg.augmentation, config_snapshot=snapshot_dict(cfg))
    print(f"fine-tuned {len(res.history)} epochs on {data.n_classes} identities; checkpoints in {Path(args.out) / 'checkpoints'}")
    return EXIT_OK


def _image_loader(root):
    from .data import _resize_crop
    from .imageio import find_image, read_image
    from .verifier import split_ref

    root = Path(root)

    def load(ref: str) -> np.ndarray:
        name, _ = split_ref(ref)
        return _resize_crop(read_image(find_image(root / name, ref)))

    return load


def _evaluate(encoder, pairs, load, cfg: RunConfig, embeddings=None):
    from .trainer import embed_images
    from .verifier import embed_refs, pair_distances, ten_fold_accuracy

    refs = [r for p in pairs for r in (p.a, p.b)]
    if embeddings is None:
        embeddings = embed_refs(refs, load, lambda x: embed_images(encoder, x, cfg.eval.batch_size, cfg.eval.flip))
    records = pair_distances(pairs, embeddings, cfg.eval.metric)
    n_folds = len({p.fold for p in pairs})
    return ten_fold_accuracy(records, cfg.eval.thresholds, cfg.eval.step, cfg.eval.upper, n_folds, cfg.eval.metric)


def cmd_evaluate(args) -> int:
    from .trainer import load_checkpoint
    from .verifier import parse_pairs_file, read_embedding_cache, save_report

    cfg = _config(args)
    if args.metric:
        cfg.eval.metric = args.metric
    pairs = parse_pairs_file(args.pairs)
    if args.embeddings:
        report = _evaluate(None, pairs, None, cfg, read_embedding_cache(args.embeddings))
    else:
        if not args.ckpt or not args.imagedir:
            raise UsageError("evaluate: --ckpt and --imagedir are required unless --embeddings is given")
        encoder = load_checkpoint(args.ckpt).build_model().encoder
        report = _evaluate(encoder, pairs, _image_loader(args.imagedir), cfg)
    out = Path(args.out)
    save_report(report, out / "report.json")
    if not (out / SNAPSHOT_NAME).exists():
        write_snapshot(cfg, out / SNAPSHOT_NAME)
    print(report.format())
    return EXIT_OK


# ---------------------------------------------------------------- experiments


def _parse_param(label: str):
    if "=" in label:
        try:
            return float(label.split("=", 1)[1])
        except ValueError:
            return None
    return None


def cmd_probe(args) -> int:
    from .experiments import PROBE_NAME, ProbeCondition, save_probe, sensitivity_probe
    from .imageio import IMAGE_EXTENSIONS, read_image

    cfg = _config(args)
    out = Path(args.out)
    if args.manifest:
        return _toy_probe(args, cfg, out)
    if not args.reference or not args.conditions:
        raise UsageError("probe: --reference and --conditions are required without --manifest")
    root = Path(args.conditions)
    if not root.is_dir():
        raise FileNotFoundError(f"conditions directory {root} does not exist")
    conditions = []
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        refs = [f"{d.name}/{f.name}" for f in sorted(d.iterdir()) if f.suffix.lower() in IMAGE_EXTENSIONS]
        if refs:
            conditions.append(ProbeCondition(d.name, refs, _parse_param(d.name)))
    if args.embeddings:
        from .verifier import read_embedding_cache

        table = read_embedding_cache(args.embeddings)
        missing = [r for r in [args.reference] + [r for c in conditions for r in c.refs] if r not in table]
        if missing:
            raise KeyError(f"no embedding for {missing[0]}")
        report = sensitivity_probe(table[args.reference], conditions, lambda x: x, table)
    else:
        if not args.ckpt:
            raise UsageError("probe: give --ckpt or --embeddings")
        from .data import _resize_crop
        from .trainer import embed_images, load_checkpoint

        encoder = load_checkpoint(args.ckpt).build_model().encoder
        report = sensitivity_probe(
            _resize_crop(read_image(args.reference)),
            conditions,
            lambda x: embed_images(encoder, x),
            lambda ref: _resize_crop(read_image(root / ref)),
        )
    save_probe(report, out / PROBE_NAME)
    write_snapshot(cfg, out / SNAPSHOT_NAME)
    for row in report.curve_rows():
        print("{}\t{}\t{:.4f}\t{:.4f}\t{}".format(*row))
    return EXIT_OK


def _toy_probe(args, cfg: RunConfig, out: Path) -> int:
    """Probe rendered toy conditions built from one manifest identity."""
    from .data import render_aligned
    from .experiments import (
        PROBE_AXES,
        PROBE_NAME,
        ProbeCondition,
        controlled_variable_violations,
        neutral_reference,
        probe_records,
        save_probe,
        sensitivity_probe,
    )
    from .sampler import read_manifest
    from .trainer import embed_images, load_checkpoint

    if not args.ckpt or not args.axis:
        raise UsageError("probe: --manifest needs --ckpt and --axis")
    manifest = read_manifest(args.manifest)
    groups = manifest.by_identity()
    ident = args.identity if args.identity is not None else min(groups)
    if ident not in groups:
        raise KeyError(f"identity {ident} not in {args.manifest}")
    reference = neutral_reference(groups[ident][0])
    raw = [v for v in (args.values or "").split(",") if v]
    if args.axis == "eyes":
        values = [tuple(v.split(":")) for v in raw]
    else:
        values = [float(v) if args.axis in ("yaw", "pitch", "expression_intensity") else int(v) for v in raw]
    records = probe_records(reference, args.axis, values)
    bad = controlled_variable_violations(reference, records, sorted(PROBE_AXES[args.axis]))
    if bad:
        for b in bad:
            print(b, file=sys.stderr)
        return EXIT_VALIDATION
    images = render_aligned([reference] + records)
    table = {f"{args.axis}={raw[k]}/0": images[k + 1] for k in range(len(records))}
    conditions = [
        ProbeCondition(f"{args.axis}={raw[k]}", [f"{args.axis}={raw[k]}/0"], _parse_param(f"x={raw[k]}"), ident, sorted(PROBE_AXES[args.axis]))
        for k in range(len(records))
    ]
    encoder = load_checkpoint(args.ckpt).build_model().encoder
    report = sensitivity_probe(images[0], conditions, lambda x: embed_images(encoder, x), table)
    save_probe(report, out / PROBE_NAME)
    write_snapshot(cfg, out / SNAPSHOT_NAME)
    for row in report.curve_rows():
        print("{}\t{}\t{:.4f}\t{:.4f}\t{}".format(*row))
    return EXIT_OK


def cmd_finetune_sweep(args) -> int:
    from .data import load_identity_folders
    from .experiments import SWEEP_NAME, finetune_sweep, save_sweep
    from .trainer import load_checkpoint
    from .verifier import parse_pairs_file

    cfg = _config(args)
    try:
        batches = [int(b) for b in args.batches.split(",") if b.strip()]
    except ValueError:
        raise UsageError(f"finetune-sweep: --batches must be comma-separated integers, got {args.batches!r}") from None
    pairs = parse_pairs_file(args.pairs)
    load = _image_loader(args.imagedir)
    rows = finetune_sweep(
        load_checkpoint(args.ckpt),
        load_identity_folders(args.real),
        batches,
        cfg.train,
        lambda enc: _evaluate(enc, pairs, load, cfg),
        cfg.module_seed("experiments"),
        cfg.margin,
        scratch=not args.no_scratch,
        aug=cfg.augmentation,
    )
    out = Path(args.out)
    save_sweep(rows, out / SWEEP_NAME)
    write_snapshot(cfg, out / SNAPSHOT_NAME)
    for r in rows:
        s = f"{r.scratch.mean:.4f}" if r.scratch else "-"
        print(f"{r.identities}\t{r.finetuned.mean:.4f}\t{s}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .experiments import emit_report

    out = emit_report(args.run_dir)
    for w in out["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    print(Path(args.run_dir) / "summary.md")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="synthface", description="Synthetic face-recognition data and training toolkit.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    p = sub.add_parser("sample-manifest", help="sample scene parameters for a dataset")
    _add_config(p)
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sample_manifest)

    p = sub.add_parser("validate-manifest", help="check a manifest against the sampling rules")
    p.add_argument("path")
    p.add_argument("--max-errors", type=int, default=50)
    p.set_defaults(func=cmd_validate_manifest)

    p = sub.add_parser("summarize-manifest", help="print rates and statistics of a manifest")
    p.add_argument("path")
    p.set_defaults(func=cmd_summarize_manifest)

    p = sub.add_parser("make-variants", help="derive a single-axis variant manifest")
    _add_config(p)
    p.add_argument("--baseline", required=True)
    p.add_argument("--axis", required=True)
    p.add_argument("--per-identity", type=int)
    p.add_argument("--hairstyles", help="comma-separated hairstyle labels for the hairstyle axis")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_variants)

    p = sub.add_parser("render-toy", help="render manifest records with the procedural toy renderer")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--aligned", action="store_true", help="write 112x112 aligned crops instead of raw renders")
    p.set_defaults(func=cmd_render_toy)

    p = sub.add_parser("align", help="align images with 5-point landmarks to 112x112 crops")
    p.add_argument("--images", required=True)
    p.add_argument("--landmarks", required=True, help="CSV with path,x1,y1,...,x5,y5")
    p.add_argument("--out", required=True)
    p.add_argument("--cache", help="directory for the aligned-crop cache")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("train", help="train an encoder with the margin head")
    _add_config(p)
    p.add_argument("--manifest", help="manifest rendered with the toy renderer")
    p.add_argument("--imagedir", help="aligned crops, one folder per identity")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="fine-tune a checkpoint on identity folders")
    _add_config(p)
    p.add_argument("--from", dest="from_", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--base-lr", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="10-fold verification accuracy on a pairs file")
    _add_config(p)
    p.add_argument("--ckpt")
    p.add_argument("--pairs", required=True)
    p.add_argument("--imagedir")
    p.add_argument("--embeddings", help="embedding cache prefix instead of a checkpoint")
    p.add_argument("--metric", choices=["l2", "cosine"])
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("swap", help="swap baseline samples for single-axis variants")
    _add_config(p)
    p.add_argument("--baseline", required=True)
    p.add_argument("--variants", required=True)
    p.add_argument("--axis")
    p.add_argument("--fraction", type=float)
    p.add_argument("--per-identity", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--plan")
    p.set_defaults(func=cmd_swap)

    p = sub.add_parser("probe", help="embedding-distance sensitivity probe")
    _add_config(p)
    p.add_argument("--reference", help="reference image (or embedding id with --embeddings)")
    p.add_argument("--conditions", help="directory with one sub-folder per condition")
    p.add_argument("--ckpt")
    p.add_argument("--embeddings")
    p.add_argument("--manifest", help="build toy conditions from this manifest instead")
    p.add_argument("--identity", type=int)
    p.add_argument("--axis")
    p.add_argument("--values", help="comma-separated values; eyes use color:texture")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("finetune-sweep", help="fine-tune on growing identity subsets")
    _add_config(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--real", required=True, help="identity folders used for fine-tuning")
    p.add_argument("--batches", required=True, help="comma-separated identity counts, e.g. 10,50,100")
    p.add_argument("--pairs", required=True)
    p.add_argument("--imagedir", required=True, help="images referenced by the pairs file")
    p.add_argument("--no-scratch", action="store_true", help="skip the from-scratch comparison")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune_sweep)

    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return parser


def _origin(exc: BaseException) -> str:
    """Name of the innermost package module the error passed through."""
    pkg = Path(__file__).resolve().parent
    name = "cli"
    tb = exc.__traceback__
    while tb is not None:
        f = Path(tb.tb_frame.f_code.co_filename).resolve()
        if f.parent == pkg:
            name = f.stem
        tb = tb.tb_next
    return name


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"synthface {args.command}: {_origin(exc)}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (SchemaError, ValueError, KeyError, ValidationFailed) as exc:
        print(f"synthface {args.command}: {_origin(exc)}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:
        print(f"synthface {args.command}: {_origin(exc)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
