"""Command-line front end: ``analyze``, ``forward``, ``erf`` and ``selftest``.

Exit codes: 0 success, 1 validation/parse/geometry failure, 2 a numerical
contract (closed form vs measured, selftest suite) failed.
"""
from __future__ import annotations

import argparse
import struct
import sys
from pathlib import Path

import numpy as np

from . import nn, report
from .analysis import complexity_report, erf_map
from .blocks import Model, build_model
from .config import LoadedConfig, load_config
from .errors import InvalidGeometryError, RecConvError
from .pnm import PNMError, encode_pgm, load_pnm
from .recursive import RecConv, RecConvWeights
from .rng import SplitMix64
from .selftest import run_selftest

EXIT_OK, EXIT_INVALID, EXIT_CONTRACT = 0, 1, 2


def build_op(loaded: LoadedConfig):
    if loaded.kind == "model":
        return build_model(loaded.cfg)
    return RecConv(loaded.cfg, RecConvWeights.random(loaded.cfg, loaded.seed))


def _in_channels(op) -> int:
    return op.cfg.in_channels if isinstance(op, Model) else op.cfg.channels


def _default_side(op) -> int:
    return 224 if isinstance(op, Model) else 64


def _min_side(op, upto=None) -> int:
    if isinstance(op, Model):
        return op.min_input_side(upto)
    return op.cfg.min_side


def seeded_input(op, seed: int, h: int, w: int) -> np.ndarray:
    """Uniform [0, 1) noise from the SplitMix64 stream of ``seed``."""
    c = _in_channels(op)
    return SplitMix64(seed).uniform(c * h * w).reshape(1, c, h, w)


def image_input(op, path) -> np.ndarray:
    img = load_pnm(path)
    c = _in_channels(op)
    if img.shape[0] == 1:
        img = np.repeat(img, c, axis=0)
    elif img.shape[0] != c:
        raise PNMError(f"image has {img.shape[0]} channels, config expects {c}")
    return np.ascontiguousarray(img[None])


def _run(op, x, upto=None):
    if isinstance(op, Model):
        y, ledger, _ = op.forward(x, upto=upto)
        return y, ledger
    return op(x), []


# --- commands ----------------------------------------------------------------

def cmd_analyze(args) -> int:
    loaded = load_config(args.config)
    op = build_op(loaded)
    h = args.input_h or _default_side(op)
    w = args.input_w or h
    rep = complexity_report(op, (h, w), include_resize=args.include_resize_macs)
    rows = report.csv_rows(rep)
    print(report.to_text(rep), end="")
    print()
    print(report.to_csv(rows), end="")
    if args.csv:
        Path(args.csv).write_text(report.to_csv(rows))
    if not rep.ok:
        print("error: measured counts disagree with the closed form", file=sys.stderr)
        return EXIT_CONTRACT
    return EXIT_OK


def cmd_forward(args) -> int:
    loaded = load_config(args.config)
    op = build_op(loaded)
    if args.image:
        x = image_input(op, args.image)
    else:
        side = args.size or _default_side(op)
        x = seeded_input(op, args.seed, side, args.width or side)
    y, ledger = _run(op, x)
    print("output shape: " + "x".join(str(d) for d in y.shape))
    for name, (c, h, w) in ledger:
        print(f"  {name}: {c}x{h}x{w}")
    print("channel,mean,min,max")
    for c in range(y.shape[1]):
        ch = y[:, c]
        print(f"{c},{float(ch.mean())!r},{float(ch.min())!r},{float(ch.max())!r}")
    if args.out:
        Path(args.out).write_bytes(encode_raw(y))
    return EXIT_OK


def encode_raw(y: np.ndarray) -> bytes:
    """16-byte header of four little-endian uint32 dims, then float64 LE data."""
    return struct.pack("<4I", *y.shape) + np.ascontiguousarray(y, dtype="<f8").tobytes()


def decode_raw(data: bytes) -> np.ndarray:
    dims = struct.unpack("<4I", data[:16])
    return np.frombuffer(data, dtype="<f8", offset=16).reshape(dims)


def cmd_erf(args) -> int:
    loaded = load_config(args.config)
    op = build_op(loaded)
    minimum = _min_side(op, args.stage)
    if args.size < minimum:
        raise InvalidGeometryError(
            f"size {args.size} is too small for this config; minimum is {minimum}", minimum=minimum
        )
    x = seeded_input(op, loaded.seed, args.size, args.size)
    m = erf_map(op, x, upto=args.stage) if isinstance(op, Model) else erf_map(op, x)
    peak = m.values.max()
    scaled = np.zeros(m.values.shape) if peak == 0 else np.rint(m.values / peak * 255.0)
    out = Path(args.out)
    out.write_bytes(encode_pgm(scaled.astype(np.uint8)))

    rel = m.relative_box() or (0, 0, -1, -1)
    sh, sw = m.support_size()
    rows = [
        ("size", args.size),
        ("center_y", m.center[0]),
        ("center_x", m.center[1]),
        ("box_top", rel[0]),
        ("box_left", rel[1]),
        ("box_bottom", rel[2]),
        ("box_right", rel[3]),
        ("support_h", sh),
        ("support_w", sw),
        ("energy95_side", m.energy_side(0.95)),
    ]
    text = report.to_csv(rows)
    out.with_suffix(".csv").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_selftest(args) -> int:
    ok, lines = run_selftest(corrupt_param_count=args.corrupt_param_count)
    print("\n".join(lines))
    return EXIT_OK if ok else EXIT_CONTRACT


class _Parser(argparse.ArgumentParser):
    # usage errors are validation failures (exit 1); 2 is reserved for contract failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="recconv", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for convolutions (results are identical for any value)")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="parameter/MAC/receptive-field report")
    a.add_argument("config")
    a.add_argument("--input-h", type=int)
    a.add_argument("--input-w", type=int)
    a.add_argument("--include-resize-macs", action="store_true")
    a.add_argument("--csv", help="also write the CSV lines to this file")
    a.set_defaults(func=cmd_analyze)

    f = sub.add_parser("forward", help="run the network on an image or seeded noise")
    f.add_argument("config")
    src = f.add_mutually_exclusive_group(required=True)
    src.add_argument("--image", help="binary PGM (P5) or PPM (P6), 8-bit")
    src.add_argument("--seed", type=int)
    f.add_argument("--size", type=int, help="noise input side (default 224 model, 64 recconv)")
    f.add_argument("--width", type=int, help="noise input width if different from --size")
    f.add_argument("--out", help="raw little-endian float64 dump of the output")
    f.set_defaults(func=cmd_forward)

    e = sub.add_parser("erf", help="gradient receptive-field heatmap")
    e.add_argument("config")
    e.add_argument("--size", type=int, required=True)
    e.add_argument("--out", required=True, help="PGM path; the CSV goes next to it")
    e.add_argument("--stage", type=int, help="stop a model after this stage")
    e.set_defaults(func=cmd_erf)

    s = sub.add_parser("selftest", help="run the verification suites")
    s.add_argument("--corrupt-param-count", action="store_true", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    previous = nn.get_num_threads()
    nn.set_num_threads(args.threads)
    try:
        return args.func(args)
    except InvalidGeometryError as exc:
        where = f" (at {exc.stage})" if exc.stage else ""
        print(f"error: invalid geometry{where}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RecConvError, PNMError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    finally:
        nn.set_num_threads(previous)


if __name__ == "__main__":
    sys.exit(main())
