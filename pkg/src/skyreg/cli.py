"""Command-line entry point.

Precedence for training options: variant defaults < ``--config`` file <
``--set key=value`` flags. ``SKYREG_SEED`` supplies the seed when neither the
config file nor a flag sets one.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from skyreg.errors import DataError, SkyregError

log = logging.getLogger("skyreg")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _env_seed(default: int = 0) -> int:
    value = os.environ.get("SKYREG_SEED")
    return int(value) if value not in (None, "") else default


def _parse_sets(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise _UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _cmd_train(args) -> int:
    from skyreg import trainer
    overrides = _parse_sets(args.set)
    file_keys = trainer.parse_config_text(Path(args.config).read_text()) if args.config else {}
    if "seed" not in overrides and "seed" not in file_keys:
        overrides["seed"] = str(_env_seed())
    if args.variant:
        overrides["variant"] = args.variant
    try:
        config = trainer.load_config(args.config, overrides)
    except ValueError as exc:
        raise _UsageError(str(exc))
    final = trainer.train(config, args.data, args.out, resume_from=args.resume)
    print(final)
    return EXIT_OK


def _build_estimator(args):
    from skyreg import baselines, evaluation, network
    if args.estimator == "identity":
        return baselines.IdentityEstimator()
    if args.estimator == "orb_ransac":
        return baselines.OrbRansacEstimator(baselines.RansacConfig(seed=_env_seed()))
    if not args.checkpoint:
        raise _UsageError("--estimator model requires --checkpoint")
    model, _, _ = network.load_checkpoint(args.checkpoint)
    return evaluation.ModelEstimator(model, episode_len=args.episode_len)


def _cmd_eval(args) -> int:
    from skyreg import evaluation, ingest
    annotations = evaluation.read_annotations(args.annotations)
    sequences = ingest.load_split(args.data, args.split)
    if not sequences:
        raise DataError(f"no videos under {args.data}/{args.split}")
    result = evaluation.evaluate(_build_estimator(args), sequences, annotations)
    out = Path(args.out)
    evaluation.write_mace_csv(result, out / "mace.csv")
    for vid, value in result.per_video:
        print(f"{vid}\t{value:.4f}")
    print(f"OVERALL\t{result.overall:.4f}")
    return EXIT_OK


def _cmd_stitch(args) -> int:
    from skyreg import ingest, stitcher
    seq = ingest.load_video(args.video)
    hs = _build_estimator(args).estimate_sequence(seq)
    canvas, offset = stitcher.stitch(seq.frames, hs, args.reference)
    stitcher.save_png(canvas, args.out)
    print(f"{args.out}\t{canvas.shape[1]}x{canvas.shape[0]}\toffset={offset}")
    return EXIT_OK


def _cmd_viz_activations(args) -> int:
    from skyreg import diagnostics, ingest, network
    model, _, _ = network.load_checkpoint(args.checkpoint)
    seq = ingest.load_video(args.video)
    if not 0 <= args.frame < len(seq) - 1:
        raise DataError(f"--frame {args.frame} outside [0, {len(seq) - 1})")
    a, b = seq.frames[args.frame], seq.frames[args.frame + 1]
    out = Path(args.out)
    for i, tl in enumerate(diagnostics.sample_locations(seq.size, args.samples, _env_seed())):
        heat = diagnostics.activation_map(model, a, b, tl, args.layer)
        patch = a[tl[1]:tl[1] + 128, tl[0]:tl[0] + 128]
        diagnostics.overlay_png(patch, heat, out / f"{args.layer}_{i:03d}.png")
    print(out)
    return EXIT_OK


def _cmd_viz_loss_hist(args) -> int:
    from skyreg import diagnostics, ingest, network
    model, _, _ = network.load_checkpoint(args.checkpoint)
    seq = ingest.load_video(args.video)
    if not 0 <= args.frame < len(seq) - 1:
        raise DataError(f"--frame {args.frame} outside [0, {len(seq) - 1})")
    counts, edges = diagnostics.loss_histogram(model, seq.frames[args.frame],
                                               seq.frames[args.frame + 1], args.samples,
                                               args.bins, _env_seed())
    diagnostics.write_histogram_csv(counts, edges, args.out)
    print(args.out)
    return EXIT_OK


def _cmd_flops(args) -> int:
    from skyreg import network
    print(network.count_flops(network.ModelConfig(variant=args.variant)))
    return EXIT_OK


def _cmd_synth(args) -> int:
    from skyreg import synthetic
    motion = (synthetic.MotionStep(args.tx, args.ty, args.rotation, args.scale),)
    clips = {}
    for split, count in (("train", args.train), ("test", args.test)):
        clips[split] = [synthetic.generate(synthetic.SyntheticSpec(
            motion=motion, length=args.length, noise_sigma=args.noise,
            seed=_env_seed() * 1000 + i + (500 if split == "test" else 0),
            video_id=f"{split}_{i:03d}")) for i in range(count)]
    print(synthetic.write_dataset(args.out, clips))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="skyreg", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("train", help="train a variant")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--variant")
    t.add_argument("--resume")
    t.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field; beats the config file")
    t.set_defaults(func=_cmd_train)

    def estimator_flags(q):
        q.add_argument("--estimator", choices=("model", "identity", "orb_ransac"), default="model")
        q.add_argument("--checkpoint")
        q.add_argument("--episode-len", type=int, default=16)

    e = sub.add_parser("eval", help="MACE on annotated videos")
    estimator_flags(e)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--annotations", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=_cmd_eval)

    s = sub.add_parser("stitch", help="panorama from estimated homographies")
    estimator_flags(s)
    s.add_argument("--video", required=True)
    s.add_argument("--reference", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_stitch)

    a = sub.add_parser("viz-activations", help="gradient-weighted activation overlays")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--video", required=True)
    a.add_argument("--layer", default="conv2")
    a.add_argument("--frame", type=int, default=0)
    a.add_argument("--samples", type=int, default=4)
    a.add_argument("--out", required=True)
    a.set_defaults(func=_cmd_viz_activations)

    h = sub.add_parser("viz-loss-hist", help="photometric loss histogram")
    h.add_argument("--checkpoint", required=True)
    h.add_argument("--video", required=True)
    h.add_argument("--frame", type=int, default=0)
    h.add_argument("--samples", type=int, default=1000)
    h.add_argument("--bins", type=int, default=50)
    h.add_argument("--out", required=True)
    h.set_defaults(func=_cmd_viz_loss_hist)

    f = sub.add_parser("flops", help="forward FLOPs per patch pair")
    f.add_argument("--variant", choices=("BASE", "LSTM"), default="BASE")
    f.set_defaults(func=_cmd_flops)

    y = sub.add_parser("synth", help="write a synthetic dataset with ground truth")
    y.add_argument("--out", required=True)
    y.add_argument("--train", type=int, default=1)
    y.add_argument("--test", type=int, default=1)
    y.add_argument("--length", type=int, default=64)
    y.add_argument("--noise", type=float, default=0.01)
    y.add_argument("--tx", type=float, default=1.0)
    y.add_argument("--ty", type=float, default=0.0)
    y.add_argument("--rotation", type=float, default=0.0)
    y.add_argument("--scale", type=float, default=1.0)
    y.set_defaults(func=_cmd_synth)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise _UsageError("a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        if "error:" not in str(exc):
            parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"skyreg: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SkyregError as exc:
        print(f"skyreg: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
