"""Command-line front end: ``gridtx <subcommand> ...``.

Exit codes: 0 success, 1 a row or check failed, 2 usage error, 3 I/O or
data error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import platform
import re
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from gridtx import __version__, _backend, latency, transport, wire
from gridtx.codecs import LZ4_ACCELERATIONS, Algorithm, CodecSpec
from gridtx.exceptions import ConfigurationError, GridTxError
from gridtx.model import CorpusConfig, generate_corpus, total_cells
from gridtx.quantizer import quantize_grid

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3

_SI = {"": 1.0, "k": 1e3, "m": 1e6, "g": 1e9, "t": 1e12}
_BW_RE = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:e[+-]?[0-9]+)?)\s*([kmgt]?)(?:bps|bit/s|b/s)?\s*$", re.I)


def parse_bandwidth(text: str) -> float:
    """``"10M"`` -> 1e7 bits/second. Suffixes k, M, G, T (powers of 1000)."""
    m = _BW_RE.match(str(text))
    if not m:
        raise argparse.ArgumentTypeError(f"bad bandwidth {text!r}; use e.g. 10M, 1G, 2.5e9")
    value = float(m.group(1)) * _SI[m.group(2).lower()]
    if not value > 0:
        raise argparse.ArgumentTypeError(f"bandwidth must be positive: {text!r}")
    return value


def parse_bandwidths(text: str) -> list[float]:
    return [parse_bandwidth(part) for part in str(text).split(",") if part.strip()]


def format_bandwidth(bps: float) -> str:
    for suffix, scale in (("Gbps", 1e9), ("Mbps", 1e6), ("kbps", 1e3)):
        if bps >= scale:
            return f"{bps / scale:g} {suffix}"
    return f"{bps:g} bps"


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


# --- manifest -------------------------------------------------------------------


def _cpu_model() -> str:
    try:
        with open("/proc/cpuinfo") as fp:
            for line in fp:
                if line.lower().startswith("model name"):
                    return line.split(":", 1)[1].strip()
    except OSError:
        pass
    return platform.processor() or platform.machine()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    subcommand: str
    argv: list[str]
    corpus_seed: int | None
    host: dict = field(default_factory=lambda: {
        "cpu": _cpu_model(),
        "cores": os.cpu_count(),
        "platform": platform.platform(),
        "python": platform.python_version(),
    })
    tool_version: str = __version__
    libraries: dict = field(default_factory=_backend.versions)
    started: str = field(default_factory=_now)
    finished: str | None = None

    def write_next_to(self, csv_path) -> Path:
        self.finished = _now()
        path = Path(f"{csv_path}.manifest.json")
        path.write_text(json.dumps(asdict(self), indent=2) + "\n")
        return path


# --- corpus handling ------------------------------------------------------------


def _add_corpus_args(p: argparse.ArgumentParser, frames_default: int = 10) -> None:
    g = p.add_argument_group("corpus")
    g.add_argument("--corpus", type=Path, help="corpus file written by 'gen'; otherwise one is generated")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--frames", type=_positive_int, default=frames_default)
    g.add_argument("--target-cells", type=_positive_int, default=350_000)
    g.add_argument("--patch-side", type=float, default=16.0, help="patch edge length in meters")


def _corpus_config(args) -> CorpusConfig:
    return CorpusConfig(seed=args.seed, target_cells=args.target_cells, patch_side_m=args.patch_side)


def _load_or_generate(args):
    if args.corpus is not None:
        try:
            grids = wire.load_corpus(args.corpus)
        except OSError as exc:
            raise _IOFailure(f"cannot read corpus {args.corpus}: {exc.strerror or exc}") from exc
        except GridTxError as exc:
            raise _IOFailure(f"corpus {args.corpus} is damaged: {exc}") from exc
        if not grids:
            raise _IOFailure(f"corpus {args.corpus} holds no frames")
        grids = grids[: args.frames] if args.frames_given else grids
        return grids, None
    return generate_corpus(_corpus_config(args), args.frames), args.seed


class _IOFailure(Exception):
    pass


def _write_csv(path: Path, header, rows) -> None:
    try:
        with open(path, "w", newline="") as fp:
            writer = csv.writer(fp)
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise _IOFailure(f"cannot write {path}: {exc.strerror or exc}") from exc


def _quantized_options(choice: str) -> tuple[bool, ...]:
    return {"no": (False,), "yes": (True,), "both": (False, True)}[choice]


def _algorithms(choice: str) -> list[Algorithm]:
    if choice == "all":
        return [Algorithm.LZ4, Algorithm.ZSTD]
    return [Algorithm.parse(choice)]


def _measure(args):
    if args.timing == "analytic":
        return latency.analytic_pipeline
    return None


def _run_sweep(args, corpus, algorithms, quantized_options, bandwidth):
    specs = [CodecSpec(a, p) for a in algorithms for p in latency.param_grid(a)]
    if args.include_none:
        specs.append(CodecSpec(Algorithm.NONE))
    return latency.sweep(corpus, specs, quantized_options, args.mode, bandwidth,
                         args.repeats, measure=_measure(args))


# --- table rendering ------------------------------------------------------------


def _row_label(algo: Algorithm, quantized: bool) -> str:
    name = {Algorithm.LZ4: "LZ4", Algorithm.ZSTD: "Zstd", Algorithm.NONE: "None"}.get(algo, algo.name)
    return name + ("^q" if quantized else "")


def optimal_table(results, bandwidths, rel_tol: float = 0.02) -> list[tuple[str, list[tuple[int, float]]]]:
    """Rows ``(label, [(param, t_e2e) per bandwidth])`` in LZ4, Zstd, LZ4^q, Zstd^q order."""
    rows = []
    for q in (False, True):
        for algo in (Algorithm.LZ4, Algorithm.ZSTD):
            rs = [r for r in results if r.spec.algorithm is algo and r.quantized == q]
            if not rs:
                continue
            cells = []
            for b in bandwidths:
                best = latency.select_optimal(rs, b, rel_tol)
                cells.append((best.spec.param, best.total()))
            rows.append((_row_label(algo, q), cells))
    return rows


def format_optimal_table(rows, bandwidths) -> str:
    width = 16
    head = f"{'Bandwidth':<10}" + "".join(f"{format_bandwidth(b):>{width}}" for b in bandwidths)
    lines = [head, "-" * len(head)]
    for label, cells in rows:
        lines.append(f"{label:<10}" + "".join(f"{f'{p}; {t * 1e3:.2f}':>{width}}" for p, t in cells))
    lines.append("cells: a_LZ4 / c_Zstd; t_e2e [ms]")
    return "\n".join(lines)


# --- subcommands ----------------------------------------------------------------


def cmd_gen(args) -> int:
    config = _corpus_config(args)
    grids = generate_corpus(config, args.frames)
    try:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        wire.save_corpus(args.out, grids)
    except OSError as exc:
        raise _IOFailure(f"cannot write {args.out}: {exc.strerror or exc}") from exc
    for i, g in enumerate(grids):
        print(f"frame {i}: {len(g.patches)} patches, {total_cells(g)} cells")
    print(f"wrote {len(grids)} frames to {args.out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    manifest = RunManifest("sweep", list(args.argv), None)
    corpus, manifest.corpus_seed = _load_or_generate(args)
    results = _run_sweep(args, corpus, _algorithms(args.algorithm), _quantized_options(args.quantized),
                         args.bandwidths[0])
    latency.write_sweep_csv(args.out, results, args.bandwidths)
    manifest.write_next_to(args.out)
    rows = optimal_table(results, args.bandwidths, args.rel_tol)
    print(format_optimal_table(rows, args.bandwidths))
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_optimal(args) -> int:
    manifest = RunManifest("optimal", list(args.argv), None)
    corpus, manifest.corpus_seed = _load_or_generate(args)
    results = _run_sweep(args, corpus, _algorithms(args.algorithm), _quantized_options(args.quantized),
                         args.bandwidths[0])
    rows = optimal_table(results, args.bandwidths, args.rel_tol)
    print(format_optimal_table(rows, args.bandwidths))
    if args.out:
        flat = [(label, b, p, t) for label, cells in rows for b, (p, t) in zip(args.bandwidths, cells)]
        _write_csv(args.out, ("codec", "bandwidth_bps", "param", "t_e2e"), flat)
        manifest.write_next_to(args.out)
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_crossover(args) -> int:
    manifest = RunManifest("crossover", list(args.argv), None)
    corpus, manifest.corpus_seed = _load_or_generate(args)
    out_rows = []
    for q in _quantized_options(args.quantized):
        results = _run_sweep(args, corpus, [Algorithm.LZ4, Algorithm.ZSTD], (q,), args.lo)
        c = latency.find_crossover(None, q, args.mode, lo_bps=args.lo, hi_bps=args.hi, results=results)
        label = "quantized" if q else "normal"
        if c.bandwidth_bps is None:
            print(f"{label:<10} no crossover in [{format_bandwidth(args.lo)}, {format_bandwidth(args.hi)}]; "
                  f"{c.low_winner.name.lower()} dominates")
        else:
            note = "" if c.monotone else " (decision not monotone)"
            print(f"{label:<10} {c.bandwidth_bps / 1e6:.0f} Mbps: {c.low_winner.name.lower()} below, "
                  f"{c.high_winner.name.lower()} above{note}")
        out_rows.append((int(q), "" if c.bandwidth_bps is None else c.bandwidth_bps,
                         c.low_winner.name.lower(), c.high_winner.name.lower(), int(c.monotone)))
    if args.out:
        _write_csv(args.out, ("quantized", "bandwidth_bps", "low_winner", "high_winner", "monotone"), out_rows)
        manifest.write_next_to(args.out)
    return EXIT_OK


def _select_params(args, corpus, preset) -> dict:
    bandwidth = preset.channel.jitter.mean_bps if preset.channel.jitter else preset.channel.target_bps
    params = {}
    results = _run_sweep(args, corpus, [Algorithm.LZ4, Algorithm.ZSTD], (False, True), bandwidth)
    for q in (False, True):
        for algo in (Algorithm.LZ4, Algorithm.ZSTD):
            rs = [r for r in results if r.spec.algorithm is algo and r.quantized == q]
            params[(algo, q)] = latency.select_optimal(rs, bandwidth, args.rel_tol).spec.param
    return params


def cmd_eval(args) -> int:
    manifest = RunManifest("eval", list(args.argv), None)
    corpus, manifest.corpus_seed = _load_or_generate(args)
    reports = []
    for name in args.preset:
        preset = transport.get_preset(name)
        overrides = _select_params(args, corpus, preset) if args.select else None
        reports.append(transport.run_evaluation(corpus, preset, args.messages, overrides=overrides,
                                                rate_hz=args.rate_hz, verify=args.verify))
    print(transport.format_report(reports))
    for rep in reports:
        for col in rep.columns:
            if col.error:
                print(f"{rep.preset} {col.label}: error: {col.error}", file=sys.stderr)
    if args.out:
        try:
            transport.write_report_csv(args.out, reports)
        except OSError as exc:
            raise _IOFailure(f"cannot write {args.out}: {exc.strerror or exc}") from exc
        manifest.write_next_to(args.out)
    return EXIT_OK if all(r.ok for r in reports) else EXIT_FAILED


def _roundtrip_specs() -> list[CodecSpec]:
    specs = [CodecSpec(Algorithm.NONE), CodecSpec(Algorithm.RLE), CodecSpec(Algorithm.PNG)]
    specs += [CodecSpec(Algorithm.LZ4, a) for a in (1, 64, LZ4_ACCELERATIONS[-1])]
    specs += [CodecSpec(Algorithm.RLZ4, a) for a in (1, 64)]
    specs += [CodecSpec(Algorithm.ZSTD, c) for c in (-100, -5, 1, 8)]
    return specs


def cmd_roundtrip(args) -> int:
    manifest = RunManifest("roundtrip", list(args.argv), None)
    corpus, manifest.corpus_seed = _load_or_generate(args)
    specs = [CodecSpec.parse(s) for s in args.codec] if args.codec else _roundtrip_specs()
    rows = []
    failures = 0
    for q in (False, True):
        expected = [quantize_grid(g) for g in corpus] if q else corpus
        for spec in specs:
            for mode in (wire.Mode.PATCHWISE, wire.Mode.FULL):
                if mode is wire.Mode.FULL and spec.algorithm is Algorithm.PNG:
                    continue
                bad = 0
                size = 0
                for src, want in zip(corpus, expected):
                    msg = wire.encode(src, spec, q, mode)
                    size += msg.size
                    try:
                        ok = wire.decode(msg).grid == want
                    except GridTxError:
                        ok = False
                    bad += not ok
                failures += bad
                rows.append((str(spec), int(q), mode.value, len(corpus), bad, size / len(corpus)))
                status = "ok" if bad == 0 else f"FAILED {bad}/{len(corpus)}"
                print(f"{str(spec):<10} {'q' if q else '-'} {mode.value:<9} mean {size / len(corpus):>10.0f} B  {status}")
    if args.out:
        _write_csv(args.out, ("spec", "quantized", "mode", "frames", "failures", "mean_message_bytes"), rows)
        manifest.write_next_to(args.out)
    return EXIT_OK if failures == 0 else EXIT_FAILED


# --- parser ---------------------------------------------------------------------


def _add_timing_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=("patchwise", "full"), default="patchwise")
    p.add_argument("--repeats", type=_positive_int, default=5, help="timing repetitions per stage (median)")
    p.add_argument("--rel-tol", type=float, default=0.02, help="tie tolerance for parameter selection")
    p.add_argument("--timing", choices=("measured", "analytic"), default="measured",
                   help="'analytic' pins measured stages to 0 for reproducible output")
    p.add_argument("--include-none", action="store_true", help="add the uncompressed baseline to the sweep")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridtx", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen", help="generate a synthetic corpus file")
    _add_corpus_args(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen)

    for name, func, help_ in (
        ("sweep", cmd_sweep, "parameter sweep to CSV plus the optimal-parameter table"),
        ("optimal", cmd_optimal, "optimal parameter per bandwidth"),
    ):
        p = sub.add_parser(name, help=help_)
        _add_corpus_args(p)
        _add_timing_args(p)
        p.add_argument("--algorithm", choices=("lz4", "zstd", "all"), default="all")
        p.add_argument("--bandwidths", type=parse_bandwidths, default=list(latency.DEFAULT_BANDWIDTHS),
                       help="comma-separated, SI suffixes (default 10M,100M,1G,10G)")
        p.add_argument("--quantized", choices=("no", "yes", "both"), default="both")
        p.add_argument("--out", type=Path, required=(name == "sweep"))
        p.set_defaults(func=func)

    p = sub.add_parser("crossover", help="bandwidth where the optimal codec switches")
    _add_corpus_args(p)
    _add_timing_args(p)
    p.add_argument("--quantized", choices=("no", "yes", "both"), default="both")
    p.add_argument("--lo", type=parse_bandwidth, default=1e6)
    p.add_argument("--hi", type=parse_bandwidth, default=100e9)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_crossover)

    p = sub.add_parser("eval", help="shaped-socket evaluation, one column per codec")
    _add_corpus_args(p, frames_default=10)
    _add_timing_args(p)
    p.add_argument("--preset", action="append", choices=tuple(transport.PRESETS),
                   help="repeatable; default: all presets")
    p.add_argument("--messages", type=_positive_int, default=50)
    p.add_argument("--rate-hz", type=float, default=None,
                   help="fixed send rate; default sends the next frame once the previous one is decoded")
    p.add_argument("--select", action="store_true",
                   help="choose codec parameters by a sweep on this host instead of the reference values")
    p.add_argument("--verify", action="store_true", help="compare every received grid with the sent one")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("roundtrip", help="check lossless decode for every codec and mode")
    _add_corpus_args(p, frames_default=3)
    p.add_argument("--codec", action="append", help="codec spec such as zstd:3 (repeatable)")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_roundtrip)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else EXIT_USAGE
    args.argv = ["gridtx", *argv]
    args.frames_given = any(a == "--frames" or a.startswith("--frames=") for a in argv)
    if getattr(args, "preset", "x") is None:
        args.preset = list(transport.PRESETS)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _IOFailure as exc:
        print(f"gridtx: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        where = f"{exc.filename}: " if exc.filename else ""
        print(f"gridtx: error: {where}{exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigurationError as exc:
        parser.print_usage(sys.stderr)
        print(f"gridtx: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GridTxError as exc:
        print(f"gridtx: error: {exc}", file=sys.stderr)
        return EXIT_IO if isinstance(exc, ValueError) else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
