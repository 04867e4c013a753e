"""Operator command line: dataset synthesis, training, evaluation,
single-image enhancement, style interpolation, checkpoint inspection.

Commands are idempotent for fixed inputs and flags; no output embeds
timestamps. Exit status is nonzero exactly when an input contract is
violated.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as datamod
from .autodiff import Tensor
from .checkpoint import Checkpoint, load_checkpoint
from .data import (
    crop_to_mask,
    default_styles,
    load_image,
    load_paired_dir,
    make_synthetic_dataset,
    resize_pad,
    save_image,
    write_dataset_dir,
)
from .metrics import MetricReport, psnr, ssim
from .models import (
    GSGN,
    build_generator,
    default_config,
    desk_config,
    sgn2_config,
)
from .training import TrainConfig, one_hot, run_training


class CliError(RuntimeError):
    pass


MODEL_PRESETS = {"desk": desk_config, "paper": default_config,
                 "sgn2": sgn2_config}


def _load_train_config(path) -> TrainConfig:
    raw = Path(path).read_bytes()
    if str(path).endswith(".toml"):
        import tomli
        payload = tomli.loads(raw.decode("utf-8"))
    else:
        payload = json.loads(raw)
    if "weights" not in payload:
        payload["weights"] = {}
    return TrainConfig.from_dict(payload)


def _restore_model(ckpt: Checkpoint) -> GSGN:
    model = build_generator(ckpt.config)
    model.load_state_dict(ckpt.model_state())
    for p in model.parameters():
        p.requires_grad = False
    return model


def _resolve_style(style: str | None, ckpt: Checkpoint,
                   clamp: bool = False) -> np.ndarray | None:
    """Named task -> one-hot; comma-separated floats -> raw z vector."""
    if ckpt.config.norm_mode != "adaptive":
        return None
    k = ckpt.config.task_count
    if style is None:
        raise CliError("this checkpoint is task-adaptive; pass --style "
                       f"(one of {ckpt.task_names} or {k} comma-separated "
                       "weights)")
    if "," in style:
        try:
            z = np.array([float(v) for v in style.split(",")],
                         dtype=np.float32)
        except ValueError as e:
            raise CliError(f"bad style weights {style!r}: {e}") from None
        if z.shape != (k,):
            raise CliError(f"style vector has {z.shape[0]} entries, "
                           f"checkpoint has {k} tasks")
    else:
        if style not in ckpt.task_names:
            raise CliError(f"unknown style {style!r}; checkpoint styles: "
                           f"{ckpt.task_names}")
        z = one_hot(np.array([ckpt.task_names.index(style)]), k)[0]
    if clamp:
        z = np.clip(z, 0.0, 1.0)
    return z


def _enhance_image(model: GSGN, ckpt: Checkpoint, image: np.ndarray,
                   z: np.ndarray | None, edge: int) -> np.ndarray:
    divisor = 2 ** ckpt.config.levels
    if edge % divisor:
        raise CliError(f"edge {edge} not divisible by {divisor} "
                       "(shuffle levels)")
    padded, mask = resize_pad(image, edge)
    zt = Tensor(z[None]) if z is not None else None
    from . import autodiff as ad
    with ad.no_grad():
        out = model(Tensor(padded[None]), zt, clamp_output=True).data[0]
    return crop_to_mask(out, mask)


# -- subcommands -----------------------------------------------------------------

def cmd_synth_data(args) -> int:
    styles = default_styles()
    ds = make_synthetic_dataset(args.images, styles, seed=args.seed,
                                size=args.size)
    write_dataset_dir(ds, args.out)
    print(f"wrote {args.images} base images x {len(styles)} styles "
          f"(seed {args.seed}) to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = (_load_train_config(args.config) if args.config
           else TrainConfig())
    overrides = {}
    for field in ("iterations", "batch_size", "seed", "critic_ratio",
                  "eval_every", "checkpoint_every"):
        v = getattr(args, field)
        if v is not None:
            overrides[field] = v
    if args.learning_rate is not None:
        overrides["learning_rate"] = args.learning_rate
    if overrides:
        cfg = replace(cfg, **overrides)
    model_cfg = MODEL_PRESETS[args.model_preset]()

    dataset = load_paired_dir(args.data, _dataset_tasks(args.data),
                              edge=args.edge)
    if args.task is not None:
        if args.task not in dataset.task_names:
            raise CliError(f"unknown task {args.task!r}; dataset tasks: "
                           f"{dataset.task_names}")
        dataset = dataset.subset_task(dataset.task_names.index(args.task))
    resume = load_checkpoint(args.resume) if args.resume else None
    print(f"mode={args.mode} iterations={cfg.iterations} "
          f"batch={cfg.batch_size} lr={cfg.learning_rate} seed={cfg.seed}")
    ckpt, log = run_training(args.mode, dataset, model_cfg, cfg,
                             out_dir=args.out, resume_from=resume)
    final = Path(args.out) / "final.gsgn"
    print(f"finished {cfg.iterations} iterations; checkpoint {final}")
    return 0


def _dataset_tasks(root) -> list:
    manifest = Path(root) / "manifest.json"
    if manifest.exists():
        return json.loads(manifest.read_text())["task_names"]
    skip = {"source"}
    return sorted(p.name for p in Path(root).iterdir()
                  if p.is_dir() and p.name not in skip)


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = _restore_model(ckpt)
    dataset = load_paired_dir(args.data, _dataset_tasks(args.data),
                              edge=args.edge)
    samples = dataset.split(args.split)
    k = ckpt.config.task_count
    task_rows = []
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for t, task in enumerate(dataset.task_names):
        report = MetricReport()
        chunk = [s for s in samples if s.task_id == t]
        for s in chunk:
            z = None
            if ckpt.config.norm_mode == "adaptive":
                z = Tensor(one_hot(np.array([t]), k))
            from . import autodiff as ad
            with ad.no_grad():
                out = model(Tensor(s.source[None]), z,
                            clamp_output=True).data[0]
            target = s.target
            if s.mask is not None:
                out = crop_to_mask(out, s.mask)
                target = crop_to_mask(target, s.mask)
            report.add(s.image_id, psnr(out, target), ssim(out, target))
        (out_dir / f"per_image_{task}.csv").write_text(report.to_csv())
        task_rows.append({"task": task, "psnr_db": report.mean_psnr,
                          "ssim": report.mean_ssim, "lpips": None})
    avg = {"task": "average",
           "psnr_db": float(np.mean([r["psnr_db"] for r in task_rows])),
           "ssim": float(np.mean([r["ssim"] for r in task_rows])),
           "lpips": None}
    rows = task_rows + [avg]
    csv_lines = ["task,psnr_db,ssim,lpips"]
    for r in rows:
        csv_lines.append(f"{r['task']},{r['psnr_db']:.6f},"
                         f"{r['ssim']:.6f},")
    (out_dir / f"summary_{args.split}.csv").write_text(
        "\n".join(csv_lines) + "\n")
    (out_dir / f"summary_{args.split}.json").write_text(
        json.dumps({"split": args.split, "rows": rows}, indent=2))
    for r in rows:
        print(f"{r['task']:>12s}  PSNR {r['psnr_db']:7.2f} dB  "
              f"SSIM {r['ssim']:.4f}")
    return 0


def cmd_enhance(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = _restore_model(ckpt)
    image = load_image(args.input)
    z = _resolve_style(args.style, ckpt)
    out = _enhance_image(model, ckpt, image, z, args.edge)
    save_image(args.output, out)
    print(f"wrote {args.output}")
    if args.reference:
        ref = load_image(args.reference)
        ref_padded, ref_mask = resize_pad(ref, args.edge)
        ref_content = crop_to_mask(ref_padded, ref_mask)
        if ref_content.shape != out.shape:
            raise CliError(f"reference shape {ref_content.shape} does not "
                           f"match output {out.shape}")
        print(f"PSNR vs reference: {psnr(out, ref_content):.2f} dB")
    return 0


def cmd_interpolate(args) -> int:
    if args.steps < 2:
        raise CliError("--steps must be >= 2")
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.config.norm_mode != "adaptive":
        raise CliError("interpolation needs a task-adaptive checkpoint")
    model = _restore_model(ckpt)
    image = load_image(args.input)
    z_from = _resolve_style(getattr(args, "from"), ckpt)
    z_to = _resolve_style(args.to, ckpt)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = []
    for i in range(args.steps):
        alpha = i / (args.steps - 1)
        z = ((1.0 - alpha) * z_from + alpha * z_to).astype(np.float32)
        frame = _enhance_image(model, ckpt, image, z, args.edge)
        frames.append(frame)
        save_image(out_dir / f"frame_{i:03d}.png", frame)
    sheet = np.concatenate(frames, axis=2)
    save_image(out_dir / "contact_sheet.png", sheet)
    print(f"wrote {args.steps} frames and contact_sheet.png to {out_dir}")
    return 0


def cmd_inspect(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    total = sum(int(np.prod(v.shape)) for v in ckpt.tensors.values())
    model_total = sum(int(np.prod(v.shape))
                      for k, v in ckpt.tensors.items()
                      if k.startswith("model."))
    print(json.dumps({
        "config": ckpt.config.to_dict(),
        "tasks": ckpt.task_names,
        "tensor_count": len(ckpt.tensors),
        "model_parameters": model_total,
        "total_values": total,
        "meta": ckpt.meta,
        "content_hash": ckpt.content_hash(),
    }, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="gsgn",
        description="Self-guided multi-scale image enhancement toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    sd = sub.add_parser("synth-data", help="generate the synthetic "
                        "multi-style benchmark")
    sd.add_argument("--out", required=True)
    sd.add_argument("--images", type=int, default=500)
    sd.add_argument("--size", type=int, default=64)
    sd.add_argument("--seed", type=int, default=0)
    sd.set_defaults(fn=cmd_synth_data)

    tr = sub.add_parser("train", help="train a model")
    tr.add_argument("--mode", required=True,
                    choices=["supervised-single", "supervised-all",
                             "supervised-multitask", "unpaired-single",
                             "unpaired-multitask"])
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--task", help="restrict to one task "
                    "(single-task modes)")
    tr.add_argument("--config", help="TrainConfig as JSON or TOML")
    tr.add_argument("--model-preset", choices=sorted(MODEL_PRESETS),
                    default="desk")
    tr.add_argument("--iterations", type=int)
    tr.add_argument("--batch-size", type=int, dest="batch_size")
    tr.add_argument("--learning-rate", type=float, dest="learning_rate")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--critic-ratio", type=int, dest="critic_ratio")
    tr.add_argument("--eval-every", type=int, dest="eval_every")
    tr.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    tr.add_argument("--edge", type=int,
                    help="resize+pad images to this edge on load")
    tr.add_argument("--resume", help="checkpoint to resume from")
    tr.set_defaults(fn=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset "
                        "split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", default="test",
                    choices=["train", "val", "test"])
    ev.add_argument("--out", required=True)
    ev.add_argument("--edge", type=int,
                    help="resize+pad images to this edge on load")
    ev.set_defaults(fn=cmd_eval)

    en = sub.add_parser("enhance", help="enhance a single image")
    en.add_argument("--checkpoint", required=True)
    en.add_argument("--input", required=True)
    en.add_argument("--output", required=True)
    en.add_argument("--style", help="task name or comma-separated weights")
    en.add_argument("--reference", help="compute PSNR against this image")
    en.add_argument("--edge", type=int, default=512)
    en.set_defaults(fn=cmd_enhance)

    ip = sub.add_parser("interpolate", help="sweep between two styles")
    ip.add_argument("--checkpoint", required=True)
    ip.add_argument("--input", required=True)
    ip.add_argument("--from", required=True, dest="from")
    ip.add_argument("--to", required=True)
    ip.add_argument("--steps", type=int, default=5)
    ip.add_argument("--out-dir", required=True, dest="out_dir")
    ip.add_argument("--edge", type=int, default=512)
    ip.set_defaults(fn=cmd_interpolate)

    ic = sub.add_parser("inspect-checkpoint", help="print checkpoint "
                        "metadata")
    ic.add_argument("--checkpoint", required=True)
    ic.set_defaults(fn=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, datamod.DataError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
