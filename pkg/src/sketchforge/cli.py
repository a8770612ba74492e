"""Command-line interface.

Exit codes: 0 success, 2 usage error, 3 solver non-convergence, 4 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline as pl
from . import tokenizer as tk
from .core import (
    Sketch,
    SketchError,
    normalize_sketch,
    sketch_from_json,
    sketch_to_json,
)
from .handdraw import (
    NoiseConfig,
    rasterize_sketch,
    render_hand_variants,
    simulate_hand_drawing,
)
from .seqmodel import (
    ModelConfig,
    SamplerConfig,
    TrainConfig,
    generate_constraints,
    generate_primitives,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .seqmodel.models import ConstraintModel
from .solver import SolveOptions, UnsupportedPair, solve

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NONCONVERGED = 3
EXIT_DATA = 4


class DataError(Exception):
    pass


def _load_sketch(path):
    try:
        return sketch_from_json(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError, SketchError) as e:
        raise DataError(f"{path}: {e}") from e


def _write_text(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _noise_from_args(args) -> NoiseConfig:
    return NoiseConfig(
        amplitude_px=args.amplitude,
        matern_lengthscale_frac=args.lengthscale_frac,
        translate_sigma_px=args.translate_sigma,
        rotate_sigma_deg=args.rotate_sigma,
        seed=args.seed,
    )


def _add_noise_args(p):
    p.add_argument("--amplitude", type=float, default=1.5, help="GP amplitude in pixels")
    p.add_argument("--lengthscale-frac", type=float, default=0.25)
    p.add_argument("--translate-sigma", type=float, default=2.0)
    p.add_argument("--rotate-sigma", type=float, default=2.0)


def cmd_solve(args) -> int:
    s = _load_sketch(args.sketch)
    try:
        solved, report = solve(
            s,
            SolveOptions(
                max_iter=args.max_iter,
                w_anchor=args.w_anchor,
                violation_tol=args.tol,
            ),
        )
    except UnsupportedPair as e:
        raise DataError(str(e)) from e
    out = json.dumps(sketch_to_json(solved), indent=2)
    _write_text(args.out, out + "\n")
    print(
        f"converged={report.converged} iterations={report.iterations} "
        f"max_violation={report.max_constraint_violation:g}",
        file=sys.stderr,
    )
    return EXIT_OK if report.converged else EXIT_NONCONVERGED


def cmd_tokenize(args) -> int:
    s = _load_sketch(args.sketch)
    try:
        if args.stream == "primitives":
            tokens = tk.encode_primitives(s)
        else:
            tokens = tk.encode_constraints(s)
    except (tk.TooLong, tk.InvalidReference) as e:
        raise DataError(str(e)) from e
    _write_text(args.out, tk.dump_tokens(tokens, args.stream))
    return EXIT_OK


def cmd_render(args) -> int:
    s = _load_sketch(args.sketch)
    norm, _ = normalize_sketch(s)
    if args.hand:
        img = simulate_hand_drawing(norm, _noise_from_args(args))
    else:
        img = rasterize_sketch(norm)
    Path(args.out).write_bytes(img.to_png_bytes())
    return EXIT_OK


def cmd_simulate(args) -> int:
    src = Path(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = _noise_from_args(args)
    count = 0
    for path in sorted(src.glob("*.json")):
        s = _load_sketch(path)
        norm, _ = normalize_sketch(s)
        cfg = NoiseConfig(
            amplitude_px=base.amplitude_px,
            matern_lengthscale_frac=base.matern_lengthscale_frac,
            translate_sigma_px=base.translate_sigma_px,
            rotate_sigma_deg=base.rotate_sigma_deg,
            seed=args.seed + count * args.variants,
        )
        for k, img in enumerate(render_hand_variants(norm, cfg, args.variants)):
            (out / f"{path.stem}_{k}.png").write_bytes(img.to_png_bytes())
        count += 1
    print(f"rendered {count} sketches x {args.variants} variants", file=sys.stderr)
    return EXIT_OK


def _corpus_sketches(args) -> list:
    if args.manifest:
        man = pl.load_manifest(args.manifest)
        return man.split_sketches(args.split)
    if args.corpus:
        man_dir = Path(args.corpus)
        out = []
        for path in sorted(man_dir.glob("*.json")):
            out.append(_load_sketch(path))
        return out
    raise DataError("need --manifest or --corpus")


def cmd_train(args) -> int:
    sketches = pl.prepare_corpus(_corpus_sketches(args))
    if not sketches:
        raise DataError("empty training corpus")
    model_cfg = ModelConfig(layers=args.layers, heads=args.heads, embed_dim=args.dim)
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        base_lr=args.lr,
        noise_sigma=args.noise_sigma,
        affine_augment=args.affine_augment,
        seed=args.seed,
    )
    if args.model == "image":
        pairs = [
            (s, render_hand_variants(s, NoiseConfig(seed=args.seed + i * args.variants),
                                     args.variants))
            for i, s in enumerate(sketches)
        ]
        result = train("image_conditional", pairs, cfg, model_cfg)
    elif args.model == "constraint":
        result = train("constraint", sketches, cfg, model_cfg)
    else:
        result = train("primitive", sketches, cfg, model_cfg)
    save_checkpoint(result.model, args.out)
    if args.loss_csv:
        lines = ["epoch,mean_loss_nats"] + [f"{e},{l!r}" for e, l in result.loss_curve]
        Path(args.loss_csv).write_text("\n".join(lines) + "\n")
    final = result.loss_curve[-1][1] if result.loss_curve else float("nan")
    print(f"trained {args.model} model; final mean loss {final:.4f} nats", file=sys.stderr)
    return EXIT_OK


def cmd_sample(args) -> int:
    model = load_checkpoint(args.model)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sampler_p = args.nucleus_p
    ok = 0
    if isinstance(model, ConstraintModel):
        if not args.primer:
            raise DataError("constraint sampling needs --primer with primitives")
        base = _load_sketch(args.primer)
        norm, _ = normalize_sketch(base)
        prims_only = Sketch(norm.primitives, ())
        for i in range(args.k):
            tokens, st = generate_constraints(
                model, prims_only,
                SamplerConfig(nucleus_p=sampler_p or 0.7, seed=args.seed + i),
            )
            try:
                cons = tk.decode_constraints(tokens, prims_only)
            except (tk.MalformedSequence, tk.InvalidReference) as e:
                print(f"sample {i}: undecodable ({e})", file=sys.stderr)
                continue
            s = Sketch(prims_only.primitives, cons)
            (out_dir / f"sample_{i:03d}.json").write_text(
                json.dumps(sketch_to_json(s), indent=2)
            )
            ok += 1
    else:
        primer_tokens = None
        if args.primer:
            primer_sketch = _load_sketch(args.primer)
            norm, _ = normalize_sketch(primer_sketch)
            primer_tokens = tk.encode_primitives(norm)[1:-1]
        patches = None
        if args.image:
            from .handdraw import RasterImage, patchify

            img = RasterImage.from_png_bytes(Path(args.image).read_bytes())
            patches = patchify(img)
        for i in range(args.k):
            tokens, st = generate_primitives(
                model,
                SamplerConfig(nucleus_p=sampler_p or 0.9, seed=args.seed + i),
                primer=primer_tokens,
                patches=patches,
            )
            try:
                s = tk.decode_primitives(tokens)
            except tk.MalformedSequence as e:
                print(f"sample {i}: undecodable ({e})", file=sys.stderr)
                continue
            (out_dir / f"sample_{i:03d}.json").write_text(
                json.dumps(sketch_to_json(s), indent=2)
            )
            ok += 1
    print(f"decoded {ok}/{args.k} samples", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    sketches = pl.prepare_corpus(_corpus_sketches(args))
    seqs = [tk.encode_primitives(s) for s in sketches]
    report = pl.evaluate_nll(model, seqs)
    _write_text(args.out, report.to_csv())
    return EXIT_OK


def cmd_baseline(args) -> int:
    sketches = pl.prepare_corpus(_corpus_sketches(args))
    seqs = [tk.encode_primitives(s) for s in sketches]
    if args.kind == "uniform":
        report = pl.uniform_baseline(seqs)
        _write_text(args.out, report.to_csv())
    else:
        bpp, bps = pl.compression_baseline(seqs)
        _write_text(
            args.out,
            "metric,value\n"
            f"bits_per_primitive,{bpp!r}\nbits_per_sketch,{bps!r}\n",
        )
    return EXIT_OK


def cmd_ingest(args) -> int:
    man = pl.ingest_and_filter(args.corpus, seed=args.seed)
    man.save(args.out)
    sizes = {k: len(v) for k, v in man.splits.items()}
    print(
        f"kept {sum(sizes.values())} sketches {sizes}; "
        f"dropped {len(man.dropped)}; errors {len(man.errors)}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_stats(args) -> int:
    samples = [_load_sketch(p) for p in sorted(Path(args.samples).glob("*.json"))]
    reference = [_load_sketch(p) for p in sorted(Path(args.reference).glob("*.json"))]
    if not samples or not reference:
        raise DataError("both --samples and --reference need sketch JSON files")
    pl.distributional_stats(samples, reference, out_dir=args.out, seed=args.seed)
    print(f"wrote stats to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_serve(args) -> int:
    import os

    import uvicorn

    from .service import ServiceConfig, create_app

    port = args.port or int(os.environ.get("SKETCHFORGE_PORT", "8077"))
    ckpt = Path(args.checkpoint_dir) if args.checkpoint_dir else None
    app = create_app(ServiceConfig(checkpoint_dir=ckpt))
    uvicorn.run(app, host=args.host, port=port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sketchforge", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve a sketch's constraints")
    p.add_argument("sketch")
    p.add_argument("--out", default="-")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--w-anchor", type=float, default=1e-3)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("tokenize", help="dump token triples for a sketch")
    p.add_argument("sketch")
    p.add_argument("--stream", choices=("primitives", "constraints"), default="primitives")
    p.add_argument("--out", default="-")
    p.set_defaults(fn=cmd_tokenize)

    p = sub.add_parser("render", help="render a sketch to PNG")
    p.add_argument("sketch")
    p.add_argument("--out", required=True)
    p.add_argument("--hand", action="store_true", help="hand-drawn simulation")
    p.add_argument("--seed", type=int, default=0)
    _add_noise_args(p)
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("simulate", help="batch hand-drawn renders for a corpus")
    p.add_argument("corpus", help="directory of sketch JSON files")
    p.add_argument("--out", required=True)
    p.add_argument("--variants", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    _add_noise_args(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--model", choices=("primitive", "constraint", "image"), required=True)
    p.add_argument("--corpus", help="directory of sketch JSON files")
    p.add_argument("--manifest", help="dataset manifest JSON")
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=3e-5)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--affine-augment", action="store_true",
                   help="image model: random affine per epoch selection")
    p.add_argument("--variants", type=int, default=5,
                   help="image model: pre-generated renders per sketch")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--loss-csv")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sample", help="sample sketches from a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--primer", help="sketch JSON prefix / primitives for constraints")
    p.add_argument("--image", help="PNG for the image-conditional model")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--nucleus-p", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("eval", help="evaluate a model on a split")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest")
    p.add_argument("--corpus")
    p.add_argument("--split", default="test")
    p.add_argument("--out", default="-")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("baseline", help="uniform or LZMA compression baseline")
    p.add_argument("--kind", choices=("uniform", "lzma"), default="uniform")
    p.add_argument("--manifest")
    p.add_argument("--corpus")
    p.add_argument("--split", default="test")
    p.add_argument("--out", default="-")
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("ingest", help="filter, dedup, and split a corpus")
    p.add_argument("corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("stats", help="distributional statistics with bootstrap CIs")
    p.add_argument("--samples", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--port", type=int)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--checkpoint-dir")
    p.set_defaults(fn=cmd_serve)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (SketchError, tk.MalformedSequence, tk.InvalidReference) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
