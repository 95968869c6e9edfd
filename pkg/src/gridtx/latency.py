"""End-to-end time model, parameter sweeps and codec selection.

``t_e2e = t_comp + t_ser + t_trans + t_deser + t_decomp``. The four compute
stages are measured; the transmission time is analytic,
``t_trans = S * 8 / B``, with ``S`` the compressed data size in bytes and
``B`` the bandwidth in bits per second. Quantization time is not counted.

Compute stages do not depend on ``B``, so a sweep is measured once and can be
re-evaluated at any bandwidth (:meth:`SweepResult.at`).
"""

from __future__ import annotations

import csv
import math
import statistics
import time
from dataclasses import dataclass, replace
from typing import Callable, Iterable, NamedTuple, Sequence

from gridtx import wire
from gridtx.codecs import LZ4_ACCELERATIONS, ZSTD_LEVELS, Algorithm, CodecSpec
from gridtx.exceptions import ConfigurationError
from gridtx.model import GridMap
from gridtx.quantizer import quantize_grid
from gridtx.wire import Mode

__all__ = [
    "E2ETimings",
    "SweepResult",
    "Summary",
    "Crossover",
    "time_pipeline",
    "analytic_pipeline",
    "sweep",
    "optimal_param",
    "select_optimal",
    "find_crossover",
    "summarize",
    "param_grid",
    "write_sweep_csv",
    "CSV_COLUMNS",
]

CSV_COLUMNS = (
    "spec", "param", "quantized", "mode",
    "t_comp", "t_ser", "t_trans", "t_deser", "t_decomp", "total", "size_bytes",
)

MBPS = 1e6
DEFAULT_BANDWIDTHS = (10e6, 100e6, 1e9, 10e9)


@dataclass(frozen=True)
class E2ETimings:
    t_comp: float
    t_ser: float
    t_trans: float
    t_deser: float
    t_decomp: float
    size_bytes: float
    bandwidth_bps: float
    message_bytes: float = 0.0

    def __post_init__(self):
        for name in ("t_comp", "t_ser", "t_trans", "t_deser", "t_decomp"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} is negative")
        if self.bandwidth_bps <= 0:
            raise ValueError("bandwidth must be positive")

    @property
    def compute(self) -> float:
        return self.t_comp + self.t_ser + self.t_deser + self.t_decomp

    def total(self) -> float:
        return self.t_comp + self.t_ser + self.t_trans + self.t_deser + self.t_decomp

    def at(self, bandwidth_bps: float) -> "E2ETimings":
        """Same measured stages, transmission re-evaluated at a new bandwidth."""
        return replace(self, bandwidth_bps=bandwidth_bps, t_trans=transmission_time(self.size_bytes, bandwidth_bps))

    def scaled(self, factor: float) -> "E2ETimings":
        """Measured stages multiplied by ``factor`` (transmission untouched)."""
        return replace(
            self,
            t_comp=self.t_comp * factor,
            t_ser=self.t_ser * factor,
            t_deser=self.t_deser * factor,
            t_decomp=self.t_decomp * factor,
        )


def _zero_clock() -> float:
    return 0.0


def analytic_pipeline(grid: GridMap, spec: CodecSpec, quantized: bool, mode, bandwidth_bps: float) -> E2ETimings:
    """Like :func:`time_pipeline` but with every measured stage pinned to 0.

    Only sizes and ``t_trans`` remain, so results are fully deterministic.
    """
    return time_pipeline(grid, spec, quantized, mode, bandwidth_bps, repeats=1, timer=_zero_clock)


def transmission_time(size_bytes: float, bandwidth_bps: float) -> float:
    if bandwidth_bps <= 0:
        raise ConfigurationError("bandwidth must be positive")
    return size_bytes * 8 / bandwidth_bps


def _data_size(mode: Mode, data: bytes, parsed: wire.ParsedMessage | None) -> int:
    if mode is Mode.FULL:
        return len(data) - wire.ENVELOPE_HEADER.size
    return sum(len(r.payload) for r in parsed.records)


def time_pipeline(
    grid: GridMap,
    spec: CodecSpec,
    quantized: bool,
    mode,
    bandwidth_bps: float,
    repeats: int = 5,
    timer: Callable[[], float] = time.perf_counter,
    verify: bool = False,
) -> E2ETimings:
    """Run the send and receive pipeline and time each stage.

    Each stage is run ``repeats`` times; the per-stage median is reported.
    """
    mode = Mode.parse(mode)
    if bandwidth_bps <= 0:
        raise ConfigurationError("bandwidth must be positive")
    if repeats < 1:
        raise ConfigurationError("repeats must be >= 1")
    if mode is Mode.FULL and spec.algorithm is Algorithm.PNG:
        raise wire.UnsupportedFormatError("PNG is only supported patch-wise")
    g = quantize_grid(grid) if quantized else grid
    comp, ser, deser, decomp = [], [], [], []
    data = out = parsed = None
    for _ in range(repeats):
        if mode is Mode.PATCHWISE:
            t0 = timer()
            blocks = wire.compress_patches(g, spec)
            t1 = timer()
            data = wire.serialize_patchwise(g, spec, blocks)
            t2 = timer()
            parsed = wire.parse(data)
            t3 = timer()
            out = wire.build_grid(parsed)
            t4 = timer()
            comp.append(t1 - t0)
            ser.append(t2 - t1)
            deser.append(t3 - t2)
            decomp.append(t4 - t3)
        else:
            t0 = timer()
            inner = wire.serialize_inner(g)
            t1 = timer()
            data = wire.compress_envelope(spec, inner)
            t2 = timer()
            _, body = wire.open_envelope(data)
            t3 = timer()
            parsed = wire.parse(body)
            out = wire.build_grid(parsed)
            t4 = timer()
            ser.append(t1 - t0)
            comp.append(t2 - t1)
            decomp.append(t3 - t2)
            deser.append(t4 - t3)
    if verify and out != g:
        raise AssertionError("pipeline output differs from input")
    size = _data_size(mode, data, parsed)
    return E2ETimings(
        t_comp=max(statistics.median(comp), 0.0),
        t_ser=max(statistics.median(ser), 0.0),
        t_trans=transmission_time(size, bandwidth_bps),
        t_deser=max(statistics.median(deser), 0.0),
        t_decomp=max(statistics.median(decomp), 0.0),
        size_bytes=size,
        bandwidth_bps=bandwidth_bps,
        message_bytes=len(data),
    )


@dataclass(frozen=True)
class SweepResult:
    spec: CodecSpec
    quantized: bool
    mode: Mode
    timings: E2ETimings
    mean_size: float
    frames: int

    def at(self, bandwidth_bps: float) -> "SweepResult":
        return replace(self, timings=self.timings.at(bandwidth_bps))

    def total(self) -> float:
        return self.timings.total()

    def row(self) -> dict:
        t = self.timings
        return {
            "spec": self.spec.algorithm.name.lower(),
            "param": self.spec.param,
            "quantized": int(self.quantized),
            "mode": self.mode.value,
            "t_comp": t.t_comp,
            "t_ser": t.t_ser,
            "t_trans": t.t_trans,
            "t_deser": t.t_deser,
            "t_decomp": t.t_decomp,
            "total": t.total(),
            "size_bytes": t.size_bytes,
        }


def _mean_timings(items: Sequence[E2ETimings], bandwidth_bps: float) -> E2ETimings:
    n = len(items)
    size = math.fsum(t.size_bytes for t in items) / n
    return E2ETimings(
        t_comp=math.fsum(t.t_comp for t in items) / n,
        t_ser=math.fsum(t.t_ser for t in items) / n,
        t_trans=transmission_time(size, bandwidth_bps),
        t_deser=math.fsum(t.t_deser for t in items) / n,
        t_decomp=math.fsum(t.t_decomp for t in items) / n,
        size_bytes=size,
        bandwidth_bps=bandwidth_bps,
        message_bytes=math.fsum(t.message_bytes for t in items) / n,
    )


def param_grid(algorithm) -> tuple[int, ...]:
    """Default sweep grid: LZ4 accelerations 2**0..2**12; Zstd every level in
    [-10, 10] plus every tenth in [-100, -20]."""
    algo = Algorithm.parse(algorithm)
    if algo in (Algorithm.LZ4, Algorithm.RLZ4):
        return LZ4_ACCELERATIONS
    if algo is Algorithm.ZSTD:
        return ZSTD_LEVELS
    return (0,)


def sweep(
    corpus: Sequence[GridMap],
    specs: Iterable[CodecSpec],
    quantized_options: Iterable[bool] = (False,),
    mode=Mode.PATCHWISE,
    bandwidth_bps: float = 10e6,
    repeats: int = 5,
    measure: Callable[..., E2ETimings] | None = None,
) -> list[SweepResult]:
    """Mean stage times and sizes over the corpus for each (spec, quantized).

    Results are ordered by quantized flag, then by spec in the given order.
    Measured sweeps run ``repeats`` interleaved rounds and keep per-stage
    medians. ``measure`` replaces :func:`time_pipeline` (same signature,
    minus ``repeats``) for synthetic timing.
    """
    corpus = list(corpus)
    if not corpus:
        raise ConfigurationError("corpus is empty")
    mode = Mode.parse(mode)
    specs = list(specs)
    cases = [(bool(q), spec) for q in quantized_options for spec in specs]
    if measure is None:
        table = _interleaved(corpus, cases, mode, bandwidth_bps, repeats)
    else:
        table = [[measure(g, spec, q, mode, bandwidth_bps) for g in corpus] for q, spec in cases]
    results = []
    for (q, spec), items in zip(cases, table):
        t = _mean_timings(items, bandwidth_bps)
        results.append(SweepResult(spec, q, mode, t, t.size_bytes, len(corpus)))
    return results


def _interleaved(corpus, cases, mode, bandwidth_bps, repeats) -> list[list[E2ETimings]]:
    """Per-stage medians over ``repeats`` rounds; each round visits every case.

    Round-robin order spreads slow phases of the host over all candidates
    instead of penalizing whichever codec happened to run during them.
    """
    if repeats < 1:
        raise ConfigurationError("repeats must be >= 1")
    runs = [[[] for _ in corpus] for _ in cases]
    for _ in range(repeats):
        for c, (q, spec) in enumerate(cases):
            for f, g in enumerate(corpus):
                runs[c][f].append(time_pipeline(g, spec, q, mode, bandwidth_bps, repeats=1))
    return [[_median_timings(r) for r in per_case] for per_case in runs]


def _median_timings(items: Sequence[E2ETimings]) -> E2ETimings:
    first = items[0]
    return replace(
        first,
        t_comp=statistics.median(t.t_comp for t in items),
        t_ser=statistics.median(t.t_ser for t in items),
        t_deser=statistics.median(t.t_deser for t in items),
        t_decomp=statistics.median(t.t_decomp for t in items),
    )


def _faster_first(algorithm: Algorithm):
    # fastest-compressing parameter first
    if algorithm in (Algorithm.LZ4, Algorithm.RLZ4):
        return lambda p: -p
    return lambda p: p


def select_optimal(results: Sequence[SweepResult], bandwidth_bps: float, rel_tol: float = 0.02) -> SweepResult:
    """Pick the t_e2e-optimal result at ``bandwidth_bps``.

    Candidates whose total is within ``rel_tol`` of the best candidate's
    measured compute time count as tied (transmission is analytic, so only
    the measured part carries noise); ties go to the fastest-compressing
    parameter.
    """
    if not results:
        raise ConfigurationError("no sweep results")
    evaluated = [r.at(bandwidth_bps) for r in results]
    best = min(evaluated, key=lambda r: r.total())
    slack = rel_tol * best.timings.compute
    tied = [r for r in evaluated if r.total() <= best.total() + slack]
    key = _faster_first(best.spec.algorithm)
    return min(tied, key=lambda r: key(r.spec.param))


def optimal_param(
    corpus: Sequence[GridMap],
    algorithm,
    quantized: bool,
    bandwidth_bps: float,
    mode=Mode.PATCHWISE,
    params: Sequence[int] | None = None,
    repeats: int = 5,
    rel_tol: float = 0.02,
    results: Sequence[SweepResult] | None = None,
) -> tuple[int, float]:
    """``(param, mean t_e2e)`` minimizing mean t_e2e over the parameter grid.

    Pass ``results`` from an earlier :func:`sweep` to skip measuring.
    """
    algo = Algorithm.parse(algorithm)
    if algo not in (Algorithm.LZ4, Algorithm.ZSTD):
        raise ConfigurationError("optimal_param supports lz4 and zstd")
    if results is None:
        specs = [CodecSpec(algo, p) for p in (params or param_grid(algo))]
        results = sweep(corpus, specs, (quantized,), mode, bandwidth_bps, repeats)
    results = [r for r in results if r.spec.algorithm is algo and r.quantized == bool(quantized)]
    chosen = select_optimal(results, bandwidth_bps, rel_tol)
    return chosen.spec.param, chosen.total()


class Crossover(NamedTuple):
    """Bandwidth where the optimal codec switches; ``None`` if no switch."""

    bandwidth_bps: float | None
    low_winner: Algorithm
    high_winner: Algorithm
    monotone: bool


def _best_total(results: Sequence[SweepResult], bandwidth_bps: float) -> float:
    return min(r.at(bandwidth_bps).total() for r in results)


def find_crossover(
    corpus: Sequence[GridMap] | None,
    quantized: bool,
    mode=Mode.PATCHWISE,
    repeats: int = 5,
    lo_bps: float = 1e6,
    hi_bps: float = 100e9,
    resolution_bps: float = 1e6,
    results: Sequence[SweepResult] | None = None,
) -> Crossover:
    """Bandwidth at which the better of (best Zstd, best LZ4) flips.

    Bisection on ``[lo_bps, hi_bps]`` down to ``resolution_bps``. The sign of
    ``zstd - lz4`` is also checked on a log-spaced grid; ``monotone`` is
    false if it changes more than once.
    """
    if results is None:
        if not corpus:
            raise ConfigurationError("corpus is empty")
        specs = [CodecSpec(Algorithm.LZ4, p) for p in param_grid(Algorithm.LZ4)]
        specs += [CodecSpec(Algorithm.ZSTD, p) for p in param_grid(Algorithm.ZSTD)]
        results = sweep(corpus, specs, (quantized,), mode, lo_bps, repeats)
    lz4 = [r for r in results if r.spec.algorithm is Algorithm.LZ4 and r.quantized == bool(quantized)]
    zstd = [r for r in results if r.spec.algorithm is Algorithm.ZSTD and r.quantized == bool(quantized)]
    if not lz4 or not zstd:
        raise ConfigurationError("crossover needs both lz4 and zstd results")

    def diff(b):
        return _best_total(zstd, b) - _best_total(lz4, b)

    def winner(b):
        return Algorithm.ZSTD if diff(b) <= 0 else Algorithm.LZ4

    grid = [lo_bps * (hi_bps / lo_bps) ** (i / 400) for i in range(401)]
    signs = [winner(b) for b in grid]
    changes = sum(1 for a, b in zip(signs, signs[1:]) if a is not b)
    low, high = winner(lo_bps), winner(hi_bps)
    if low is high:
        return Crossover(None, low, high, changes == 0)
    lo, hi = lo_bps, hi_bps
    while hi - lo > resolution_bps:
        mid = 0.5 * (lo + hi)
        if winner(mid) is low:
            lo = mid
        else:
            hi = mid
    switch = round(hi / resolution_bps) * resolution_bps
    return Crossover(switch, low, high, changes == 1)


class Summary(NamedTuple):
    mean: float
    std: float
    min: float
    max: float


def summarize(samples: Sequence[float]) -> Summary:
    """Mean, population standard deviation, min and max."""
    samples = list(samples)
    if not samples:
        raise ValueError("summarize needs at least one sample")
    return Summary(statistics.fmean(samples), statistics.pstdev(samples), min(samples), max(samples))


def write_sweep_csv(path_or_file, results: Iterable[SweepResult], bandwidths: Iterable[float] | None = None) -> None:
    """Sweep rows, one block per bandwidth; ``bandwidth_bps`` is the last column."""
    results = list(results)
    if bandwidths is None:
        evaluated = results
    else:
        evaluated = [r.at(b) for b in bandwidths for r in results]
    rows = [dict(r.row(), bandwidth_bps=r.timings.bandwidth_bps) for r in evaluated]
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fp = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        writer = csv.DictWriter(fp, fieldnames=CSV_COLUMNS + ("bandwidth_bps",))
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if own:
            fp.close()
