"""Command-line interface.

Subcommands cover the full workflow: generate synthetic datasets, train a
base model per rate point, encode/decode single images, run the
evaluation analyses, and build/use one-step update banks.

Relative output paths are resolved under $DLIC_RUN_ROOT when it is set,
and every artifact-producing command drops a JSON snapshot of its
resolved arguments next to its outputs, so a run directory is
reproducible from its own contents.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import torch

from . import adapters, datasets, evaluate, onestep
from .adapt import AdaptationConfig, TraceRow
from .codec import CodecModel, load_checkpoint, save_checkpoint, train_base
from .container import decode_image, encode_image
from .errors import AdaptationError, ContractError, DecodeError, TrainingError

RUN_ROOT_ENV = "DLIC_RUN_ROOT"


def _resolve_out(path: str) -> str:
    """Join a relative output path under the run-directory root, if set."""
    root = os.environ.get(RUN_ROOT_ENV, "")
    if root and not os.path.isabs(path):
        path = os.path.join(root, path)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return path


def _write_snapshot(args: argparse.Namespace, path: str) -> None:
    payload = {k: v for k, v in sorted(vars(args).items()) if k != "fn"}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _write_trace(path: str, trace: list[TraceRow]) -> None:
    with open(path, "w") as fh:
        fh.write("step,loss,rate_latent_bits,rate_update_bits,mse,gates\n")
        for r in trace:
            gates = "".join(str(int(b)) for b in r.gates)
            fh.write(f"{r.step},{r.loss:.6f},{r.rate_latent_bits:.4f},"
                     f"{r.rate_update_bits:.4f},{r.mse:.8f},{gates}\n")


def _add_adaptation_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", dest="lmbda", type=float, default=None,
                   help="rate-distortion weight; defaults to the checkpoint's")
    p.add_argument("--steps-latent", type=int, default=200)
    p.add_argument("--steps-model", type=int, default=200)
    p.add_argument("--warmup", type=int, default=20)
    p.add_argument("--rank", type=int, default=2)
    p.add_argument("--variant", choices=adapters.VARIANT_KINDS, default="low_rank")
    p.add_argument("--lr-latent", type=float, default=1e-3)
    p.add_argument("--lr-delta", type=float, default=1e-3)
    p.add_argument("--lr-gate", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--fixed-layers", type=int, default=None, metavar="M",
                       help="force the first M synthesis layers open, rest closed")
    group.add_argument("--dynamic", action="store_true",
                       help="learn per-layer gates (the default)")


def _config_from(args: argparse.Namespace, model: CodecModel) -> AdaptationConfig:
    fixed = None
    if args.fixed_layers is not None:
        k = model.num_adaptable_layers
        if not 0 <= args.fixed_layers <= k:
            raise ContractError(f"--fixed-layers must lie in [0, {k}]")
        fixed = tuple(1 if i < args.fixed_layers else 0 for i in range(k))
    return AdaptationConfig(
        latent_steps=args.steps_latent, decoder_steps=args.steps_model,
        warmup_steps=args.warmup, rank=args.rank, variant=args.variant,
        lr_latent=args.lr_latent, lr_delta=args.lr_delta, lr_gate=args.lr_gate,
        lmbda=args.lmbda, seed=args.seed, fixed_gates=fixed)


def _cmd_dataset(args) -> int:
    out = _resolve_out(args.out)
    os.makedirs(out, exist_ok=True)
    gen = datasets.GENERATORS[args.kind]
    images = gen(args.count, size=args.size, seed=args.seed)
    for i, img in enumerate(images):
        datasets.save_image(img, os.path.join(out, f"{args.kind}_{i:04d}.png"))
    print(f"wrote {len(images)} {args.kind} images to {out}")
    return 0


def _cmd_train(args) -> int:
    images = datasets.load_directory(args.data)
    model = train_base(images, lmbda=args.lmbda, steps=args.steps, crop=args.crop,
                       batch_size=args.batch_size, lr=args.lr, seed=args.seed,
                       latent_channels=args.latent_channels,
                       hidden_channels=args.hidden_channels,
                       downsample=args.downsample)
    out = _resolve_out(args.out)
    save_checkpoint(model, out)
    _write_snapshot(args, out + ".config.json")
    print(f"trained lambda={args.lmbda} for {args.steps} steps -> {out}")
    return 0


def _cmd_encode(args) -> int:
    model = load_checkpoint(args.model)
    image = datasets.load_image(args.image)
    config = _config_from(args, model)
    blob, result = encode_image(image, model, config)
    out = _resolve_out(args.out)
    with open(out, "wb") as fh:
        fh.write(blob)
    _write_trace(out + ".trace.csv", result.loss_trace)
    _write_snapshot(args, out + ".config.json")
    npix = image.height * image.width
    print(f"{args.image}: {len(blob)} bytes ({len(blob) * 8 / npix:.4f} bpp), "
          f"psnr {result.psnr_db:.2f} dB, gates "
          f"{''.join(str(int(b)) for b in result.gate_bits.bits)}")
    return 0


def _cmd_decode(args) -> int:
    model = load_checkpoint(args.model)
    with open(args.bitstream, "rb") as fh:
        blob = fh.read()
    image = decode_image(blob, model)
    out = _resolve_out(args.out)
    datasets.save_image(image, out)
    print(f"decoded {args.bitstream} -> {out} ({image.height}x{image.width})")
    return 0


def _cmd_eval(args) -> int:
    models = [load_checkpoint(p) for p in args.model]
    images = datasets.load_directory(args.data)
    config = _config_from(args, models[0])
    out_dir = _resolve_out(args.out_dir)
    os.makedirs(out_dir, exist_ok=True)
    _write_snapshot(args, os.path.join(out_dir, "config.json"))
    if args.analysis == "rd":
        report = evaluate.rd_methods(images, models, config, jobs=args.jobs)
        curves = [report.curve(m) for m in report.methods()]
        evaluate.write_points_csv(os.path.join(out_dir, "rd_points.csv"), report.points)
        evaluate.write_curves_csv(os.path.join(out_dir, "rd_curves.csv"), curves)
        bd = {m: report.bd(m, evaluate.METHOD_BASE)
              for m in report.methods() if m != evaluate.METHOD_BASE}
        evaluate.write_bd_csv(os.path.join(out_dir, "bd_rates.csv"), bd,
                              evaluate.METHOD_BASE)
        evaluate.plot_rd(os.path.join(out_dir, "rd_curves.png"), curves)
        freqs = report.gate_frequency()
        evaluate.write_gate_csv(os.path.join(out_dir, "gate_frequency.csv"), freqs)
        evaluate.plot_gate_frequency(os.path.join(out_dir, "gate_frequency.png"), freqs)
        for m, v in bd.items():
            print(f"bd-rate {m} vs {evaluate.METHOD_BASE}: {v:+.2f}%")
    elif args.analysis == "layers":
        counts = tuple(int(t) for t in args.layer_counts.split(","))
        rows = evaluate.fixed_vs_dynamic(images, models, config, layer_counts=counts)
        evaluate.write_bd_csv(os.path.join(out_dir, "layers_bd.csv"), rows, "anchor")
        for label, v in rows.items():
            print(f"bd-rate {label} vs latent refinement: {v:+.2f}%")
    else:
        totals = tuple(int(t) for t in args.step_totals.split(","))
        rows = evaluate.sweep_steps(images, models, config, totals=totals)
        evaluate.write_sweep_csv(os.path.join(out_dir, "step_sweep.csv"), rows)
        for r in rows:
            print(f"steps {r.total_steps}: bd {r.bd_pct:+.2f}% wall {r.wall_seconds:.1f}s")
    return 0


def _cmd_onestep_build(args) -> int:
    model = load_checkpoint(args.model)
    images = datasets.load_directory(args.data)
    bank = onestep.build_bank(images, model, clusters=args.clusters, rank=args.rank,
                              steps=args.steps, seed=args.seed, lmbda=args.lmbda)
    out = _resolve_out(args.out)
    bank.save(out)
    _write_snapshot(args, out + ".config.json")
    print(f"bank with {bank.num_clusters} clusters on layer {bank.layer_index} -> {out}")
    return 0


def _cmd_onestep_encode(args) -> int:
    model = load_checkpoint(args.model)
    bank = onestep.DeltaBank.load(args.bank)
    image = datasets.load_image(args.image)
    blob, report = onestep.onestep_encode(image, model, bank)
    out = _resolve_out(args.out)
    with open(out, "wb") as fh:
        fh.write(blob)
    _write_snapshot(args, out + ".config.json")
    print(f"{args.image}: cluster {report['cluster']}, {report['bits'] // 8} bytes, "
          f"psnr {report['psnr_db']:.2f} dB, gradient steps {report['gradient_steps']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dlic",
                                     description="instance-adaptive image codec tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="generate a synthetic image set")
    p.add_argument("--kind", choices=sorted(datasets.GENERATORS), required=True)
    p.add_argument("--count", type=int, default=32)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_dataset)

    p = sub.add_parser("train", help="train a base codec at one rate point")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lambda", dest="lmbda", type=float, required=True)
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--crop", type=int, default=64)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--latent-channels", type=int, default=32)
    p.add_argument("--hidden-channels", type=int, default=48)
    p.add_argument("--downsample", type=int, default=8)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("encode", help="adapt and serialize one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    _add_adaptation_flags(p)
    p.set_defaults(fn=_cmd_encode)

    p = sub.add_parser("decode", help="reconstruct an image from a bitstream")
    p.add_argument("--model", required=True)
    p.add_argument("--bitstream", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_decode)

    p = sub.add_parser("eval", help="rate-distortion analyses over an image set")
    p.add_argument("--model", nargs="+", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--analysis", choices=("rd", "layers", "sweep"), default="rd")
    p.add_argument("--layer-counts", default="1,2,4")
    p.add_argument("--step-totals", default="0,50,200")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel encodes per model (default serial)")
    _add_adaptation_flags(p)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("onestep-build", help="cluster a corpus and fit an update bank")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lambda", dest="lmbda", type=float, default=None)
    p.add_argument("--clusters", type=int, default=8)
    p.add_argument("--rank", type=int, default=2)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_onestep_build)

    p = sub.add_parser("onestep-encode", help="encode via bank lookup, no optimization")
    p.add_argument("--model", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_onestep_encode)

    return parser


def main(argv: list[str] | None = None) -> int:
    torch.set_num_threads(1)
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ContractError, DecodeError, TrainingError, AdaptationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
