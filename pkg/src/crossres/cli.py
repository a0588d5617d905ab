"""Command-line interface: ``crossres {encode,synthesize,train,metrics,gradcheck}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .codec import CodecError, EncoderConfig
from .fusion import init_weights
from .gop import MODES
from .rd import RdCurve, comparison_record, dumps_record
from .selfcheck import TOLERANCE, run_gradchecks
from .weights import ModelConfig, Weights


def _geometry(p: argparse.ArgumentParser) -> None:
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--frames", type=int, default=None, help="frames to read (default: all)")


def _coding(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gop", type=int, default=8, help="GoP length in frames")
    p.add_argument("--mode", choices=MODES, default="ldp")
    p.add_argument("--qp", type=int, default=37, help="intra QP; inter frames use QP - 5")
    p.add_argument("--codec", choices=("sim", "external"), default="sim")
    p.add_argument("--encoder-config", type=Path, default=None)
    p.add_argument("--workdir", type=Path, default=None,
                   help="scratch directory for the external encoder")


def _model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--weights", type=Path, default=None, help="weight file")
    p.add_argument("--seed", type=int, default=0, help="init seed when no weight file is given")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossres", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="code a YUV file into HR intra and LR inter tiers")
    p.add_argument("input", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True,
                   help="output prefix; writes PREFIX.hr.yuv, PREFIX.lr.yuv, PREFIX.json")
    _geometry(p)
    _coding(p)

    p = sub.add_parser("synthesize", help="rebuild full-resolution video from a coded stream")
    p.add_argument("stream", type=Path, help="prefix given to encode")
    p.add_argument("-o", "--output", type=Path, required=True, help="output YUV")
    _model(p)
    p.add_argument("--bicubic-only", action="store_true",
                   help="upsample inter frames bicubically instead of running the model")

    p = sub.add_parser("train", help="overfit the model on one GoP of a sequence")
    p.add_argument("input", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True, help="weight file to write")
    _geometry(p)
    _coding(p)
    _model(p)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--branch", choices=("luma", "chroma"), default="luma")
    p.add_argument("--gop-index", type=int, default=0)
    p.add_argument("--log-every", type=int, default=50)

    p = sub.add_parser("metrics", help="PSNR report for a YUV pair, or BD metrics for two curves")
    p.add_argument("reference", type=Path, help="original YUV, or anchor curve JSON")
    p.add_argument("distorted", type=Path, help="decoded YUV, or test curve JSON")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--stream", type=Path, default=None,
                   help="coded stream prefix; adds rates to the report")
    p.add_argument("-o", "--output", type=Path, default=None, help="write JSON here")

    p = sub.add_parser("gradcheck", help="finite-difference check of every sub-network")
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--elements", type=int, default=6, help="sampled elements per input")
    return parser


def _load_sequence(args) -> pipeline.Sequence:
    return pipeline.load_yuv(args.input, args.width, args.height, args.frames)


def _encoder(args) -> EncoderConfig | None:
    if args.codec != "external":
        return None
    if args.encoder_config is None:
        raise ValueError("--codec external needs --encoder-config")
    return EncoderConfig.from_file(args.encoder_config)


def _weights(args, config: ModelConfig | None = None) -> Weights:
    if args.weights is not None:
        return Weights.load(args.weights)
    return init_weights(config or ModelConfig(), seed=args.seed)


def cmd_encode(args) -> int:
    seq = _load_sequence(args)
    stream = pipeline.encode_sequence(seq, args.gop, args.mode, args.qp, args.codec,
                                      _encoder(args), args.workdir)
    for path in stream.save(args.output):
        print(path)
    return 0


def cmd_synthesize(args) -> int:
    stream = pipeline.DecodedStream.load(args.stream)
    weights = None if args.bicubic_only else _weights(args)
    pipeline.write_yuv(args.output, pipeline.synthesize(stream, weights))
    print(args.output)
    return 0


def cmd_train(args) -> int:
    seq = _load_sequence(args)
    stream = pipeline.encode_sequence(seq, args.gop, args.mode, args.qp, args.codec,
                                      _encoder(args), args.workdir)
    n_refs = 2 if args.mode == "ra" else 1
    if args.weights is not None:
        weights = Weights.load(args.weights)
    else:
        cfg = ModelConfig(channels=args.channels, n_refs=n_refs, branches=(args.branch,))
        weights = init_weights(cfg, seed=args.seed)
    samples = pipeline.training_samples(seq, stream, args.gop_index, args.branch,
                                        weights.config.n_refs, weights.config.window)
    pipeline.overfit(samples, weights, args.steps, args.lr, args.branch, args.log_every,
                     log=print)
    Weights(weights.tensors, weights.config, weights.seed).save(args.output)
    print(args.output)
    return 0


def _read_curve(path: Path) -> tuple[str, RdCurve]:
    data = json.loads(path.read_text())
    if isinstance(data, dict):
        return data.get("label", path.stem), RdCurve(data["points"])
    return path.stem, RdCurve(data)


def cmd_metrics(args) -> int:
    if args.reference.suffix == ".json":
        (la, a), (lt, t) = _read_curve(args.reference), _read_curve(args.distorted)
        text = dumps_record(comparison_record(a, t, la, lt))
    else:
        if args.width is None or args.height is None:
            raise ValueError("YUV metrics need --width and --height")
        ref = pipeline.load_yuv(args.reference, args.width, args.height)
        dec = pipeline.load_yuv(args.distorted, args.width, args.height)
        runs = pipeline.DecodedStream.load(args.stream).runs if args.stream else None
        text = pipeline.evaluate(ref, dec, runs).to_json()
    if args.output is not None:
        args.output.write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_gradcheck(args) -> int:
    results = run_gradchecks(args.size, args.seed, args.elements)
    ok = True
    for name, err in results.items():
        passed = err < TOLERANCE
        ok &= passed
        print(f"{name:8s} max relative error {err:.2e}  {'ok' if passed else 'FAIL'}")
    return 0 if ok else 1


COMMANDS = {"encode": cmd_encode, "synthesize": cmd_synthesize, "train": cmd_train,
            "metrics": cmd_metrics, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, KeyError, OSError, CodecError, FloatingPointError) as err:
        print(f"crossres {args.command}: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
