"""Command-line entry point: denoise, degrade, metrics, bench, profile, serve."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import DenoiseError, InvariantError, MediaIOError
from .media import Clip, read_png_sequence, read_y4m, write_png_sequence, write_y4m
from .paramnet import Knobs

log = logging.getLogger("knobdenoise")

EXIT_OK = 0
EXIT_USAGE = 2


def load_clip(path: str) -> Clip:
    p = Path(path)
    if p.is_dir():
        return read_png_sequence(p)
    if not p.exists():
        raise MediaIOError(f"no such file: {path}")
    return read_y4m(p)


def save_clip(clip: Clip, path: str) -> None:
    p = Path(path)
    if p.suffix.lower() == ".y4m":
        write_y4m(clip, p)
    else:
        write_png_sequence(clip, p)


def _knobs(text: str) -> Knobs:
    try:
        return Knobs.parse(text)
    except InvariantError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def cmd_denoise(args) -> int:
    from .engine import EngineConfig, StageTimer, denoise_clip

    clip = load_clip(args.input)
    cfg = EngineConfig(profile_source=args.profile, anchor=args.anchor, knobs=args.knobs,
                       threads=args.threads, dump_flow_dir=args.dump_flow)
    timer = StageTimer()
    out = denoise_clip(clip, cfg, timer=timer)
    save_clip(out, args.output)
    for stage, rec in timer.as_dict().items():
        log.info("%-9s %7.3f s over %d calls", stage, rec["seconds"], rec["calls"])
    return EXIT_OK


def cmd_degrade(args) -> int:
    from .degrade import DegradeSpec, degrade

    codec = {"none": "none", "sim": "sim", "ext": "external"}[args.codec]
    if codec == "external" and not args.encoder:
        raise argparse.ArgumentTypeError("--codec ext requires --encoder")
    spec = DegradeSpec(awgn_variance=args.awgn_var, correlated=args.correlated, codec=codec, q=args.q,
                       crf=args.crf, gop=args.gop, seed=args.seed, encoder_cmd=args.encoder)
    save_clip(degrade(load_clip(args.input), spec), args.output)
    return EXIT_OK


def cmd_metrics(args) -> int:
    from .metrics import compare_clips
    from .report import plot_metrics, write_records

    report = compare_clips(load_clip(args.ref), load_clip(args.test))
    recs = [dict(kind="frame", **r) for r in report.records()]
    recs.append({"kind": "summary", "frames": len(report.per_frame), "psnr": report.psnr, "ssim": report.ssim})
    write_records(recs, sys.stdout)
    if args.plot:
        plot_metrics(report, args.plot)
    return EXIT_OK


def cmd_bench(args) -> int:
    from .engine import EngineConfig, bench
    from .report import plot_bench, write_records

    cfg = EngineConfig(threads=args.threads)
    reports = [bench(args.width, args.height, args.frames, cfg)]
    if args.scaling:
        reports.append(bench(args.width * 2, args.height, args.frames, cfg))
    for r in reports:
        write_records(r.records(), sys.stdout)
    if args.plot:
        plot_bench(reports, args.plot)
    return EXIT_OK


def cmd_profile(args) -> int:
    from .profiler import classical_profile

    prof = classical_profile(load_clip(args.input), args.anchor)
    prof.delta.save(args.out)
    s = prof.stats
    log.info("sigma_luma=%.5f sigma_chroma=%.5f rho=%.3f", s.sigma_hat_luma, s.sigma_hat_chroma, s.temporal_rho)
    return EXIT_OK


def cmd_serve(args) -> int:
    from .preview import serve

    serve(args.host, args.port, args.cache_mb)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log stage timings and estimates")
    ap = argparse.ArgumentParser(prog="knobdenoise", description="Knob-steerable video denoiser.")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    p = add("denoise", help="denoise a Y4M clip or PNG directory")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="*.y4m file or a directory for PNG frames")
    p.add_argument("--profile", default="auto", help="'auto' or a profile file written by 'profile'")
    p.add_argument("--anchor", type=int, default=0)
    p.add_argument("--knobs", type=_knobs, default=Knobs(), help="six comma-separated values in [0, 4]")
    p.add_argument("--threads", type=int, default=0, help="0 = one per CPU")
    p.add_argument("--dump-flow", default=None, metavar="DIR", help="write raw f32 flow fields here")
    p.set_defaults(func=cmd_denoise)

    p = add("degrade", help="add synthetic noise and compression")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--awgn-var", type=float, default=0.0, help="noise variance on the 8-bit scale")
    p.add_argument("--correlated", type=float, default=None, metavar="SIGMA",
                   help="blur the noise by a Gaussian of this sigma (px)")
    p.add_argument("--codec", choices=("none", "sim", "ext"), default="none")
    p.add_argument("--q", type=int, default=28)
    p.add_argument("--gop", type=_positive_int, default=12)
    p.add_argument("--crf", type=int, default=23)
    p.add_argument("--encoder", default=None, help="command template with {input} {output} {crf}")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_degrade)

    p = add("metrics", help="per-frame PSNR/SSIM as JSON lines")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--plot", default=None, metavar="PNG")
    p.set_defaults(func=cmd_metrics)

    p = add("bench", help="steady-state throughput on a synthetic clip")
    p.add_argument("--width", type=_positive_int, default=256)
    p.add_argument("--height", type=_positive_int, default=256)
    p.add_argument("--frames", type=_positive_int, default=8)
    p.add_argument("--threads", type=int, default=0)
    p.add_argument("--scaling", action="store_true", help="also run at twice the width")
    p.add_argument("--plot", default=None, metavar="PNG")
    p.set_defaults(func=cmd_bench)

    p = add("profile", help="estimate a noise profile and save its delta")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--anchor", type=int, default=0)
    p.set_defaults(func=cmd_profile)

    p = add("serve", help="run the local preview service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--cache-mb", type=float, default=64.0)
    p.set_defaults(func=cmd_serve)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as exc:
        ap.error(str(exc))
    except DenoiseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except IndexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return InvariantError.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return MediaIOError.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
