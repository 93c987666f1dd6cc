"""Command line entry points for the pipeline and the synthetic harness.

Exit codes: 0 on success, 2 for invalid input (bad arguments, unreadable
files, failed validation), 3 for a stage failure (the failing stage is named
on standard error).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .aam import PointDefinition, load_model, read_landmarks, save_model, train_aam, write_landmarks
from .enhancement import DiffusionConfig, enhance_detail
from .errors import StageError, ThermoFaceError
from .icaam import fit, init_from_mask, precompute
from .imaging import ThermalImage, read_image, write_image
from .pipeline import PipelineConfig, run_pipeline
from .recognition import Gallery, cmc, enroll, identify, load_gallery, save_gallery
from .segmentation import SegmentationConfig, SegmentationMask, segment_face
from .synthetic import evaluate_synthetic
from .vesselness import VesselnessConfig, vesselness_multiscale

__all__ = ["main"]


def _load_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        return PipelineConfig.load(args.config)
    return PipelineConfig()


def cmd_segment(args) -> int:
    img = read_image(args.image)
    if args.t_low is not None and args.t_up is not None:
        cfg = SegmentationConfig(
            t_low=args.t_low, t_up=args.t_up, threshold_mode="explicit",
            se_area_fraction=args.se_fraction,
        )
    else:
        cfg = SegmentationConfig(se_area_fraction=args.se_fraction)
    mask, suppressed = segment_face(img, cfg)
    write_image(args.out_mask, mask.data.astype(np.float64), bits=8)
    write_image(args.out_image, suppressed, bits=16)
    print(f"segmented {args.image}: {mask.count()} foreground pixels")
    return 0


def cmd_enhance(args) -> int:
    img = read_image(args.image)
    cfg = DiffusionConfig(
        k=args.k / 255.0, iterations=args.iters, dt=args.dt,
        exponent_mode=args.mode.replace("-", "_"),
    )
    detail = enhance_detail(img, cfg).data
    lo = float(detail.min())
    hi = float(detail.max())
    scale = (hi - lo) / 65535.0 if hi > lo else 1.0
    scaled = (detail - lo) / (hi - lo) if hi > lo else detail * 0.0
    write_image(args.out, scaled, bits=16)
    Path(str(args.out) + ".meta").write_text(f"offset {lo!r} scale {scale!r}\n")
    print(f"enhanced {args.image}: detail range [{lo:.6f}, {hi:.6f}]")
    return 0


def cmd_train_aam(args) -> int:
    points = PointDefinition.load(args.points)
    images = []
    landmark_sets = []
    manifest = Path(args.manifest)
    for line in manifest.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        image_path, landmark_path = line.split()
        images.append(read_image(manifest.parent / image_path))
        landmark_sets.append(read_landmarks(manifest.parent / landmark_path))
    model = train_aam(
        images,
        landmark_sets,
        points,
        variance_fraction=args.variance,
        mirror=args.mirror == "on",
        enhance_cfg=DiffusionConfig(k=args.k / 255.0),
    )
    save_model(args.out, model)
    print(
        f"trained model: {model.shape.n_components} shape and "
        f"{model.appearance.n_components} appearance components, "
        f"frame {model.frame_shape[1]}x{model.frame_shape[0]}"
    )
    return 0


def cmd_fit(args) -> int:
    cfg = _load_config(args)
    model = load_model(args.model)
    img = read_image(args.image)
    if args.mask:
        mask = SegmentationMask(read_image(args.mask).data > 0.5)
        suppressed = ThermalImage(np.where(mask.data, img.data, 0.0), img.units)
    else:
        mask, suppressed = segment_face(img, cfg.segmentation)
    enhanced = enhance_detail(suppressed, cfg.effective_diffusion())
    pre = precompute(model)
    result = fit(enhanced, init_from_mask(mask, model), model, pre, cfg.fit)
    if args.out_landmarks:
        write_landmarks(args.out_landmarks, result.landmarks)
    if args.dump_frontal:
        from .aam import synthesize_frontal

        write_image(args.dump_frontal, synthesize_frontal(suppressed, result.landmarks, model), bits=16)
    print(
        f"fit: error={result.error:.6g} iterations={result.iterations} "
        f"converged={str(result.converged).lower()}"
    )
    return 0


def cmd_vesselness(args) -> int:
    img = read_image(args.image)
    c_struct = None if args.c == "auto" else float(args.c)
    cfg = VesselnessConfig(
        beta=args.beta, c_struct=c_struct, s_min=args.s_min, s_max=args.s_max,
        s_step=args.s_step, formula_mode=args.mode,
    )
    vmap = vesselness_multiscale(img, cfg)
    write_image(args.out, vmap.values, bits=16)
    scales = " ".join(f"{s:g}" for s in vmap.scales)
    Path(str(args.out) + ".meta").write_text(
        f"config_hash {vmap.config_hash}\nscales {scales}\n"
    )
    print(f"vesselness over scales [{scales}] written to {args.out}")
    return 0


def _pipeline_signature(args, cfg: PipelineConfig, subject_id: str, image_id: str):
    model = load_model(args.model)
    img = read_image(args.image)
    return run_pipeline(
        img, model, cfg, subject_id=subject_id, image_id=image_id,
        dump_dir=getattr(args, "dump_dir", None),
    )


def cmd_enroll(args) -> int:
    cfg = _load_config(args)
    image_id = args.image_id or Path(args.image).stem
    sig = _pipeline_signature(args, cfg, args.subject, image_id)
    gallery_dir = Path(args.gallery)
    if (gallery_dir / "manifest.json").exists():
        gallery = load_gallery(gallery_dir)
    else:
        gallery = Gallery(entries=(), config_hash=cfg.config_hash, model_ref=str(args.model))
    gallery = enroll(gallery, args.subject, sig)
    save_gallery(gallery_dir, gallery)
    print(f"enrolled {args.subject}/{image_id}; gallery size {gallery.size}")
    return 0


def cmd_identify(args) -> int:
    cfg = _load_config(args)
    gallery = load_gallery(args.gallery)
    probe = _pipeline_signature(args, cfg, "", Path(args.image).stem)
    match = identify(gallery, probe)
    print("rank subject rho")
    for position, (subject, rho) in enumerate(match.ranking, start=1):
        print(f"{position:4d} {subject} {rho:+.6f}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    gallery = load_gallery(args.gallery)
    model = load_model(args.model)
    pre = precompute(model)
    manifest = Path(args.manifest)
    entries = []
    for line in manifest.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        subject_id, image_path = line.split()
        entries.append((subject_id, manifest.parent / image_path))

    def process(entry):
        subject_id, path = entry
        img = read_image(path)
        return run_pipeline(
            img, model, cfg, subject_id=subject_id, image_id=path.stem, pre=pre,
            dump_dir=getattr(args, "dump_dir", None),
        )

    if args.jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            probes = list(pool.map(process, entries))
    else:
        probes = [process(e) for e in entries]
    curve = cmc(gallery, probes)
    csv_text = "rank,rate\n" + "".join(f"{n + 1},{rate:.6f}\n" for n, rate in enumerate(curve))
    Path(args.out_csv).write_text(csv_text)
    print(f"rank-1 rate {curve[0]:.4f} over {len(probes)} probes; CMC written to {args.out_csv}")
    return 0


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    model = load_model(args.model) if args.model else None
    result = evaluate_synthetic(
        n_subjects=args.subjects,
        poses_per_subject=args.poses,
        cfg=cfg,
        model=model,
        seed=args.seed,
        out_dir=args.out,
        jobs=args.jobs,
    )
    print(f"synthetic rank-1 rate {result['rank1']:.4f}; artifacts in {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thermoface",
        description="Thermal-IR face recognition pipeline",
    )
    parser.add_argument("--config", help="pipeline config file (JSON)")
    parser.add_argument("--dump-dir", help="directory for per-stage artifact dumps")
    parser.add_argument("--jobs", type=int, default=1, help="parallel images for batch commands")
    parser.add_argument("--seed", type=int, default=0, help="harness seed (synthetic data only)")
    # the same flags are accepted after the subcommand; SUPPRESS keeps a
    # subcommand parse from clobbering a value given up front
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS)
    common.add_argument("--dump-dir", default=argparse.SUPPRESS)
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="segment a face and suppress the background", parents=[common])
    p.add_argument("image")
    p.add_argument("--out-mask", required=True)
    p.add_argument("--out-image", required=True)
    p.add_argument("--t-low", type=float, default=None)
    p.add_argument("--t-up", type=float, default=None)
    p.add_argument("--se-fraction", type=float, default=0.06)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("enhance", help="anisotropic-diffusion detail enhancement", parents=[common])
    p.add_argument("image")
    p.add_argument("out")
    p.add_argument("--k", type=float, default=20.0, help="gradient scale on the 0..255 convention")
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--dt", type=float, default=0.2)
    p.add_argument("--mode", choices=["paper", "perona-malik"], default="paper")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("train-aam", help="train the shape+appearance model", parents=[common])
    p.add_argument("manifest", help="lines of '<image path> <landmark path>'")
    p.add_argument("--points", required=True, help="point definition file")
    p.add_argument("--out", required=True)
    p.add_argument("--variance", type=float, default=0.99)
    p.add_argument("--mirror", choices=["on", "off"], default="on")
    p.add_argument("--k", type=float, default=20.0)
    p.set_defaults(func=cmd_train_aam)

    p = sub.add_parser("fit", help="fit the model to one image", parents=[common])
    p.add_argument("image")
    p.add_argument("model")
    p.add_argument("--mask", help="precomputed mask image (otherwise auto-segment)")
    p.add_argument("--out-landmarks")
    p.add_argument("--dump-frontal")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("vesselness", help="multi-scale vesselness map", parents=[common])
    p.add_argument("image")
    p.add_argument("out")
    p.add_argument("--s-min", type=float, default=3.0)
    p.add_argument("--s-max", type=float, default=5.0)
    p.add_argument("--s-step", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--c", default="auto")
    p.add_argument("--mode", choices=["frangi", "paper"], default="frangi")
    p.set_defaults(func=cmd_vesselness)

    p = sub.add_parser("enroll", help="run the pipeline and add to a gallery", parents=[common])
    p.add_argument("gallery")
    p.add_argument("image")
    p.add_argument("--subject", required=True)
    p.add_argument("--image-id")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("identify", help="rank gallery subjects for a probe image", parents=[common])
    p.add_argument("gallery")
    p.add_argument("image")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("evaluate", help="CMC over a labeled probe manifest", parents=[common])
    p.add_argument("gallery")
    p.add_argument("manifest", help="lines of '<subject id> <image path>'")
    p.add_argument("--model", required=True)
    p.add_argument("--out-csv", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="seeded synthetic closed-set evaluation", parents=[common])
    p.add_argument("--subjects", type=int, default=10)
    p.add_argument("--poses", type=int, default=3)
    p.add_argument("--out", required=True)
    p.add_argument("--model", help="model file (default: train the toy model)")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"stage {exc.stage}: {exc.cause}", file=sys.stderr)
        return 3
    except ThermoFaceError as exc:
        print(f"stage {args.command}: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
