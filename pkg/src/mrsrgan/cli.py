"""Command-line entry point: ``mrsrgan {prepare,train,sr,evaluate,synth}``.

Exit codes: 0 success, 1 validation error, 2 runtime or divergence error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import dataset as ds
from . import figures
from .config import ExperimentConfig, experiment_factors, load_config
from .degradation import DegradationSpec, downsample_array, upsample_array
from .errors import MRSRError, PlanError, ValidationError
from .losses import stub_extractor, vgg19_extractor
from .metrics import Method, bicubic_method, evaluate_methods
from .training import (
    ExperimentLog,
    init_state,
    load_checkpoint,
    load_generator,
    make_training_data,
    save_checkpoint,
    train,
)
from .volume_sr import VolumeSRPlan, run_experiment3

log = logging.getLogger("mrsrgan")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


# -- helpers -----------------------------------------------------------------


def _config_from_args(args) -> ExperimentConfig:
    overrides = {}
    for key in ("experiment", "seed", "output_dir", "aniso_factor"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "seed", None) is not None:
        overrides.setdefault("train", {})["seed"] = args.seed
    for key in ("pretrain_epochs", "adversarial_epochs"):
        value = getattr(args, key, None)
        if value is not None:
            overrides.setdefault("train", {})[key] = value
    return load_config(args.config, profile=args.profile, overrides=overrides)


def _prepared_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.data.get("prepared_dir") or cfg.output_dir / "prepared")


def _build_extractor(cfg: ExperimentConfig):
    spec = cfg.extractor
    if cfg.train.loss_weights.w_content == 0:
        return None
    kind = spec.get("kind", "stub")
    if kind == "stub":
        return stub_extractor(seed=int(spec.get("seed", 0)))
    if kind == "vgg19":
        if spec.get("weights") is None:
            log.warning("no VGG19 weight file configured; content loss uses randomly initialized features")
        return vgg19_extractor(spec.get("weights"), tap=spec.get("tap", "conv5_4"))
    raise ValidationError(f"unknown extractor kind {kind!r}")


def _load_slices(manifest, limit=None, seed=0) -> list:
    records = [r for r in ds.read_manifest(manifest) if r.plane == "in_plane"]
    if limit is not None and limit < len(records):
        keep = np.sort(np.random.default_rng(seed).choice(len(records), size=limit, replace=False))
        records = [records[i] for i in keep]
    cache = {}
    return [ds.slice_from_record(r, cache) for r in records]


def _method_name(scale) -> str:
    fh, fw = scale
    return f"SRGAN{fh}x" if fh == fw else f"Anisotropic {fh}x"


def _baseline(name: str, cfg: ExperimentConfig) -> Method:
    kind, f = name[:-1], int(name[-1])
    if kind not in ("iso", "aniso") or f not in (2, 4, 8):
        raise ValidationError(f"unknown baseline {name!r}; use e.g. iso4, aniso8")
    spec = _degradation(cfg, (f, f) if kind == "iso" else (f, 1))
    label = f"{f}x Bicubic (Iso)" if kind == "iso" else f"{f}x Bicubic (Aniso)"
    return bicubic_method(label, spec)


def _degradation(cfg: ExperimentConfig, scale) -> DegradationSpec:
    d = cfg.degradation
    return DegradationSpec(scale[0], scale[1], d.kernel, d.antialias, d.a, d.boundary)


def _generator_sr(g):
    def sr(lr):
        with torch.no_grad():
            return g(torch.as_tensor(lr[:, None], dtype=torch.float32)).double().numpy()[:, 0]

    return sr


def _table_rank(name: str):
    order = {"Bicubic (Iso)": 0, "SRGAN": 1, "Bicubic (Aniso)": 2, "Anisotropic": 3}
    for key, rank in order.items():
        if key in name:
            digits = "".join(ch for ch in name if ch.isdigit())
            return rank, int(digits or 0)
    return 9, 0


def _read_image(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        img = np.load(path).astype(np.float64)
    else:
        import matplotlib.pyplot as plt

        img = plt.imread(path).astype(np.float64)
        if img.ndim == 3:
            img = img[..., :3].mean(axis=-1)
    if img.ndim != 2:
        raise ValidationError(f"{path}: expected a 2D grayscale image, got shape {img.shape}")
    if img.min() < 0 or img.max() > 1:
        raise ValidationError(f"{path}: intensities must lie in [0, 1]")
    return img


# -- commands ----------------------------------------------------------------


def cmd_prepare(args) -> int:
    cfg = _config_from_args(args)
    sources = list(cfg.data.get("sources", []))
    for spec in args.source or []:
        tag, root, count = spec.split(":")
        sources.append({"tag": tag, "root": root, "train_count": int(count)})
    if not sources:
        raise ValidationError("no data sources configured (data.sources or --source TAG:ROOT:COUNT)")

    out = _prepared_dir(cfg)
    volumes, failures, entries = [], [], []
    for src in sources:
        root = Path(src["root"])
        if not root.is_dir():
            raise ValidationError(f"data source {root} is not a directory")
        for entry in sorted(root.iterdir()):
            if entry.is_dir() or entry.suffix == ds.VOLUME_SUFFIX:
                entries.append((src["tag"], entry))
    for tag, entry in entries:
        try:
            v = ds.normalize_intensity(ds.load_volume(entry))
        except MRSRError as exc:
            failures.append(f"{entry.name}: {exc}")
            continue
        if not v.patient_id:
            v = ds.Volume(v.voxels, v.spacing, entry.stem, v.acquisition_plane)
        volumes.append((tag, v))
    if failures:
        for msg in failures:
            print(f"ingest failed: {msg}", file=sys.stderr)
        return EXIT_RUNTIME

    ids = [v.patient_id for _, v in volumes]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate patient ids across data sources")
    split = ds.split_patients(
        [(v.patient_id, tag) for tag, v in volumes],
        {s["tag"]: int(s.get("train_count", 0)) for s in sources},
        seed=cfg.seed,
    )
    records = {"train": [], "test": []}
    for _, v in sorted(volumes, key=lambda tv: tv[1].patient_id):
        path = ds.save_volume(v, (out / "volumes" / f"{v.patient_id}{ds.VOLUME_SUFFIX}").resolve())
        part = "train" if v.patient_id in split.train_patients else "test"
        records[part].extend(ds.slice_records(v, path))
    (out / "split.json").write_text(json.dumps({"seed": cfg.seed, **split.to_dict()}, indent=2) + "\n")
    ds.write_manifest(records["train"] + records["test"], out / "manifest.jsonl")
    ds.write_manifest(records["train"], out / "train_manifest.jsonl")
    ds.write_manifest(records["test"], out / "test_manifest.jsonl")
    print(f"prepared {len(volumes)} volumes: {len(split.train_patients)} train / {len(split.test_patients)} test patients")
    print(f"manifest: {out / 'manifest.jsonl'}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    manifest = Path(args.manifest) if args.manifest else _prepared_dir(cfg) / "train_manifest.jsonl"
    ckpt_dir = cfg.output_dir / "checkpoints"
    log_path = cfg.output_dir / "train_log.jsonl"

    if args.resume:
        state, _ = load_checkpoint(args.resume)
    else:
        state = init_state(cfg.generator, cfg.discriminator, cfg.train, experiment=cfg.experiment)
        if log_path.exists():
            log_path.unlink()
    extractor = _build_extractor(cfg)
    elog = ExperimentLog(log_path)
    t = cfg.train
    elog.write_header(
        experiment=cfg.experiment,
        profile=cfg.profile,
        hyperparameters={
            "batch_size": t.batch_size,
            "learning_rate": t.learning_rate,
            "beta1": t.beta1,
            "beta2": t.beta2,
            "adam_eps": t.adam_eps,
            "pretrain_epochs": t.pretrain_epochs,
            "adversarial_epochs": t.adversarial_epochs,
        },
        config=cfg.to_dict(),
        extractor=None if extractor is None else {"tap": extractor.tap, "source": extractor.source},
        resumed_from=str(args.resume) if args.resume else None,
    )
    if args.dry_run:
        path = save_checkpoint(state, ckpt_dir / "final.ckpt", cfg.train)
        print(f"dry run: wrote {path}")
        return EXIT_OK

    slices = _load_slices(manifest, cfg.max_train_slices, cfg.seed)
    data = make_training_data(slices, cfg.degradation, cfg.image_size)
    if t.pretrain_epochs or t.adversarial_epochs:
        train(state, data, cfg.train, extractor, elog, ckpt_dir)
    path = save_checkpoint(state, ckpt_dir / "final.ckpt", cfg.train)
    save_checkpoint(state, ckpt_dir / "latest.ckpt", cfg.train)
    print(f"trained on {len(data)} slices, {state.step} steps; checkpoint: {path}")
    return EXIT_OK


def cmd_sr(args) -> int:
    cfg = _config_from_args(args)
    if not args.checkpoint:
        raise ValidationError("--checkpoint is required")
    g, trained_for = load_generator(args.checkpoint[0])
    expected = experiment_factors(cfg.experiment, cfg.aniso_factor)
    if tuple(g.scale) != expected:
        raise PlanError(
            f"checkpoint upscales by {tuple(g.scale)} (trained for {trained_for!r}); "
            f"experiment {cfg.experiment} needs {expected}"
        )
    src = Path(args.input)
    out_dir = cfg.output_dir / "sr"
    if src.suffix == ds.VOLUME_SUFFIX:
        if expected[1] != 1:
            raise PlanError(f"volume SR needs an anisotropic (f, 1) checkpoint, got {expected}")
        v = ds.normalize_intensity(ds.load_volume(src))
        result = run_experiment3(VolumeSRPlan(expected[0], g, v))
        out = Path(args.output) if args.output else out_dir / f"{src.stem}_sr{ds.VOLUME_SUFFIX}"
        ds.save_volume(result["fused"], out)
        if args.export_slices:
            figures.volume_views(v.voxels, result["fused"].voxels, out.with_suffix(".views.png"))
            for k, s in enumerate(ds.extract_inplane_slices(result["fused"])):
                figures.save_png(s.pixels, out.parent / f"{out.stem}_slices" / f"inplane_{k:04d}.png")
        print(f"SR volume {v.shape} -> {result['fused'].shape}: {out}")
        return EXIT_OK

    img = _read_image(src)
    sr = _generator_sr(g)(img[None])[0]
    out = Path(args.output) if args.output else out_dir / f"{src.stem}_sr.npy"
    out.parent.mkdir(parents=True, exist_ok=True)
    np.save(out, sr)
    figures.save_png(sr, out.with_suffix(".png"))
    print(f"SR image {img.shape} -> {sr.shape}: {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config_from_args(args)
    manifest = Path(args.manifest) if args.manifest else _prepared_dir(cfg) / "test_manifest.jsonl"
    out_dir = cfg.output_dir / "evaluation"
    hr = [ds.crop_or_pad(s, cfg.image_size, cfg.image_size) for s in _load_slices(manifest, args.max_images, cfg.seed)]
    if not hr:
        raise ValidationError(f"{manifest}: no in-plane test slices")

    baselines = args.baselines.split(",") if args.baselines else cfg.baselines
    methods = [_baseline(b, cfg) for b in baselines if b]
    generators = {}
    for ckpt in args.checkpoint or []:
        g, _ = load_generator(ckpt)
        name = _method_name(g.scale)
        generators[name] = g
        methods.append(Method(name, _degradation(cfg, g.scale), _generator_sr(g)))
    if args.include_identity:
        methods.append(Method("Identity (HR)", DegradationSpec(1, 1), lambda lr: lr))
    methods.sort(key=lambda m: _table_rank(m.name))

    report = evaluate_methods(hr, methods, cfg.metrics, on_error="record")
    paths = report.write(out_dir)
    if report.rows:
        figures.metrics_bars(report, out_dir / "metrics_bars.png")
    n_fig = min(args.figures, len(hr))
    for m in methods:
        if m.name in report.errors or n_fig == 0 or m.degradation.factor_h * m.degradation.factor_w == 1:
            continue
        stack = np.stack([s.pixels for s in hr[:n_fig]])
        lr = downsample_array(stack, m.degradation)
        bic = upsample_array(lr, m.degradation.factor_h, m.degradation.factor_w, m.degradation.a, m.degradation.boundary)
        sr = np.asarray(m.sr(lr))
        rows = [
            {"lr": lr[i], "bicubic": bic[i], "sr": sr[i], "hr": stack[i], "label": f"{hr[i].provenance.volume_id}/{hr[i].provenance.index}"}
            for i in range(n_fig)
        ]
        slug = m.name.lower().replace(" ", "_").replace("(", "").replace(")", "")
        figures.comparison_grid(rows, out_dir / f"grid_{slug}.png", title=m.name)
    print(report.to_text(), end="")
    print(f"report: {paths['table']}")
    for name, msg in report.errors.items():
        print(f"evaluation failed for {name}: {msg}", file=sys.stderr)
    return EXIT_RUNTIME if report.errors else EXIT_OK


def cmd_synth(args) -> int:
    """Write a toy corpus of synthetic phantom volumes."""
    from .phantoms import phantom_volume

    out = Path(args.out)
    for i in range(args.patients):
        v = phantom_volume(tuple(args.shape), seed=args.seed + i, patient_id=f"{args.prefix}{i:03d}")
        ds.save_volume(v, out / f"{v.patient_id}{ds.VOLUME_SUFFIX}")
    print(f"wrote {args.patients} phantom volumes to {out}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--profile", choices=["paper", "toy"], help="preset to start from (default: paper)")
    common.add_argument("--experiment", choices=["iso4", "iso8", "aniso_synthetic", "aniso_volume"])
    common.add_argument("--aniso-factor", type=int, dest="aniso_factor")
    common.add_argument("--seed", type=int)
    common.add_argument("--output-dir", dest="output_dir")
    common.add_argument("--checkpoint", action="append", help="generator checkpoint (repeatable for evaluate)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="mrsrgan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", parents=[common], help="ingest, normalize, split, write manifests")
    p.add_argument("--source", action="append", metavar="TAG:ROOT:COUNT")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", parents=[common], help="pretrain then adversarially train a generator")
    p.add_argument("--manifest")
    p.add_argument("--pretrain-epochs", type=int, dest="pretrain_epochs")
    p.add_argument("--adversarial-epochs", type=int, dest="adversarial_epochs")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--dry-run", action="store_true", help="validate, write log header and initial checkpoint, stop")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sr", parents=[common], help="super-resolve an image (.npy/.png) or volume (.mrvol)")
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.add_argument("--export-slices", action="store_true")
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser("evaluate", parents=[common], help="PSNR/SSIM report against bicubic baselines")
    p.add_argument("--manifest")
    p.add_argument("--baselines", help="comma list, e.g. iso4,aniso8 (empty string for none)")
    p.add_argument("--include-identity", action="store_true")
    p.add_argument("--max-images", type=int)
    p.add_argument("--figures", type=int, default=3, help="examples per comparison grid")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="write synthetic phantom volumes")
    p.add_argument("--out", required=True)
    p.add_argument("--patients", type=int, default=3)
    p.add_argument("--shape", type=int, nargs=3, default=[64, 64, 16])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prefix", default="toy")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except MRSRError as exc:
        extra = f" (last good checkpoint: {exc.checkpoint})" if getattr(exc, "checkpoint", None) else ""
        print(f"error: {type(exc).__name__}: {exc}{extra}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
