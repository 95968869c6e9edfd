import io
import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gridtx import CorpusConfig, GridMap, Patch, generate_corpus
from gridtx.codecs import Algorithm, CodecSpec
from gridtx.exceptions import ConfigurationError
from gridtx.latency import (
    CSV_COLUMNS,
    E2ETimings,
    SweepResult,
    analytic_pipeline,
    find_crossover,
    optimal_param,
    param_grid,
    select_optimal,
    summarize,
    sweep,
    time_pipeline,
    write_sweep_csv,
)
from gridtx.wire import Mode

from conftest import random_grid


def _timings(comp, size, bw=10e6):
    return E2ETimings(comp, 0.0, size * 8 / bw, 0.0, 0.0, size, bw)


def _grid_with_payload(nbytes, side=25):
    # float32 cells are 8 bytes each
    count, rest = divmod(nbytes, side * side * 8)
    assert rest == 0
    cells = np.zeros((side, side, 2), np.float32)
    return GridMap(0.5, tuple(Patch(i, (0, 0), 0.1, side, cells) for i in range(count)))


class TestTransmission:
    def test_one_second_at_ten_mbps(self):
        g = _grid_with_payload(1_250_000)
        t = time_pipeline(g, CodecSpec(), False, Mode.PATCHWISE, 10e6, repeats=1)
        assert t.size_bytes == 1_250_000
        assert t.t_trans == 1.0

    def test_quantized_ratio_exactly_quarter(self, small_corpus):
        for g in small_corpus:
            a = analytic_pipeline(g, CodecSpec(), False, Mode.PATCHWISE, 10e6)
            b = analytic_pipeline(g, CodecSpec(), True, Mode.PATCHWISE, 10e6)
            assert b.t_trans / a.t_trans == 0.25

    @given(st.floats(1, 1e9), st.floats(1e3, 1e11))
    def test_doubling_bandwidth_halves(self, size, bw):
        t = _timings(0.0, size, bw)
        assert t.at(2 * bw).t_trans == pytest.approx(t.t_trans / 2, rel=1e-15)

    @given(st.lists(st.floats(0, 10), min_size=5, max_size=5), st.floats(1, 1e7))
    def test_total_identity(self, parts, size):
        t = E2ETimings(parts[0], parts[1], parts[2], parts[3], parts[4], size, 1e6)
        assert t.total() == parts[0] + parts[1] + parts[2] + parts[3] + parts[4]

    def test_measured_total_identity(self, small_corpus):
        t = time_pipeline(small_corpus[0], CodecSpec.parse("zstd:3"), True, Mode.FULL, 1e8, repeats=2, verify=True)
        assert t.total() == t.t_comp + t.t_ser + t.t_trans + t.t_deser + t.t_decomp
        assert min(t.t_comp, t.t_ser, t.t_deser, t.t_decomp) >= 0

    def test_full_mode_size_excludes_envelope(self, small_corpus):
        t = analytic_pipeline(small_corpus[0], CodecSpec(), False, "full", 1e6)
        assert t.message_bytes - t.size_bytes == 17

    @pytest.mark.parametrize("bw", [0, -1.0])
    def test_rejects_bad_bandwidth(self, bw, small_corpus):
        with pytest.raises(ConfigurationError):
            time_pipeline(small_corpus[0], CodecSpec(), False, Mode.PATCHWISE, bw)

    def test_rejects_bad_repeats(self, small_corpus):
        with pytest.raises(ConfigurationError):
            time_pipeline(small_corpus[0], CodecSpec(), False, Mode.PATCHWISE, 1e6, repeats=0)

    def test_injected_timer(self, small_corpus):
        ticks = iter(range(1000))
        t = time_pipeline(small_corpus[0], CodecSpec(), False, Mode.PATCHWISE, 1e6, repeats=3,
                          timer=lambda: float(next(ticks)))
        assert (t.t_comp, t.t_ser, t.t_deser, t.t_decomp) == (1.0, 1.0, 1.0, 1.0)


class TestSummarize:
    def test_single(self):
        assert summarize([5.0]) == (5.0, 0.0, 5.0, 5.0)

    def test_population_std(self):
        assert summarize([1.0, 3.0]) == (2.0, 1.0, 1.0, 3.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            summarize([])

    def test_table_row_formatting(self):
        # a reference row, used only to check rendering
        s = summarize([0.0668, 0.6299])
        row = (201.5, 129.03, s.min * 1e3, s.max * 1e3)
        assert "; ".join(f"{v:.2f}" if i == 1 else f"{v:.1f}" for i, v in enumerate(row)) == \
            "201.5; 129.03; 66.8; 629.9"


@pytest.fixture(scope="module")
def frames():
    return generate_corpus(CorpusConfig(seed=1), 3)


class TestSweep:
    def test_order_and_count(self, small_corpus):
        specs = [CodecSpec(Algorithm.LZ4, a) for a in (1, 8)]
        res = sweep(small_corpus, specs, (False, True), measure=lambda g, s, q, m, b: analytic_pipeline(g, s, q, m, b))
        assert [(r.spec.param, r.quantized) for r in res] == [(1, False), (8, False), (1, True), (8, True)]
        assert all(r.frames == 3 for r in res)

    def test_empty_corpus(self):
        with pytest.raises(ConfigurationError):
            sweep([], [CodecSpec()])

    def test_lz4_size_nondecreasing(self, frames):
        specs = [CodecSpec(Algorithm.LZ4, a) for a in param_grid("lz4")]
        sizes = [r.mean_size for r in sweep(frames, specs, (True,), measure=analytic_pipeline)]
        assert sizes == sorted(sizes)
        # float payloads: accelerations 1..4 differ by a fraction of a percent either way
        sizes = [r.mean_size for r in sweep(frames, specs, (False,), measure=analytic_pipeline)]
        assert all(b >= a * 0.995 for a, b in zip(sizes, sizes[1:]))
        assert sizes[-1] > 5 * sizes[0]

    def test_zstd_size_nonincreasing_every_tenth(self, frames):
        specs = [CodecSpec(Algorithm.ZSTD, c) for c in range(-100, 11, 10)]
        for q in (False, True):
            sizes = [r.mean_size for r in sweep(frames, specs, (q,), measure=analytic_pipeline)]
            assert sizes == sorted(sizes, reverse=True)

    def test_zstd_compress_dominates_decompress(self, frames):
        res = sweep(frames[:1], [CodecSpec(Algorithm.ZSTD, c) for c in (1, 3, 6, 10)], repeats=3)
        for r in res:
            assert r.timings.t_comp > r.timings.t_decomp

    def test_param_grids(self):
        assert param_grid("lz4") == tuple(2**k for k in range(13))
        assert len(param_grid("zstd")) == 30
        assert param_grid("none") == (0,)


def _synthetic(algo, costs):
    """Sweep results from a table param -> (compute seconds, size bytes)."""
    return [
        SweepResult(CodecSpec(algo, p), False, Mode.PATCHWISE, _timings(c, s), s, 1)
        for p, (c, s) in costs.items()
    ]


ZSTD_COSTS = {-5: (0.001, 900_000), 1: (0.004, 500_000), 3: (0.006, 420_000), 8: (0.030, 380_000), 10: (0.080, 375_000)}
LZ4_COSTS = {1: (0.003, 700_000), 4: (0.0008, 760_000), 64: (0.0004, 1_000_000)}


class TestSelection:
    def test_tradeoff(self):
        res = _synthetic(Algorithm.ZSTD, ZSTD_COSTS)
        assert select_optimal(res, 10e6).spec.param == 8
        assert select_optimal(res, 1e12).spec.param == -5

    def test_ties_go_to_faster_param(self):
        res = _synthetic(Algorithm.LZ4, {1: (0.0100, 0), 2: (0.0101, 0), 4: (0.0150, 0)})
        assert select_optimal(res, 1e6).spec.param == 2
        res = _synthetic(Algorithm.ZSTD, {3: (0.0100, 0), 2: (0.0101, 0), 1: (0.0150, 0)})
        assert select_optimal(res, 1e6).spec.param == 2

    def test_no_results(self):
        with pytest.raises(ConfigurationError):
            select_optimal([], 1e6)

    @given(st.floats(1e-3, 1e3), st.sampled_from([1e6, 10e6, 100e6, 1e9, 10e9]))
    def test_scaling_invariance(self, k, bw):
        # compute x k with bandwidth / k scales every total by k
        def measure_factory(factor):
            def measure(g, s, q, m, b):
                c, size = ZSTD_COSTS[s.param]
                return E2ETimings(c * factor, 0.0, size * 8 / b, 0.0, 0.0, size, b)
            return measure

        specs = [CodecSpec(Algorithm.ZSTD, p) for p in ZSTD_COSTS]
        base = sweep([GridMap()], specs, measure=measure_factory(1.0), bandwidth_bps=bw)
        scaled = sweep([GridMap()], specs, measure=measure_factory(k), bandwidth_bps=bw / k)
        a = optimal_param(None, "zstd", False, bw, results=base)
        b = optimal_param(None, "zstd", False, bw / k, results=scaled)
        assert a[0] == b[0]
        assert b[1] == pytest.approx(k * a[1], rel=1e-9)

    def test_infinite_bandwidth_picks_fastest(self, small_corpus):
        # the fastest end of each grid is flat, so accept its upper part
        p, _ = optimal_param(small_corpus[:1], "zstd", False, 1e14, repeats=3)
        assert p <= -20
        p, _ = optimal_param(small_corpus[:1], "lz4", False, 1e14, repeats=3)
        assert p >= 64

    def test_rejects_other_algorithms(self):
        with pytest.raises(ConfigurationError):
            optimal_param([GridMap()], "png", False, 1e6)


class TestCrossover:
    def test_synthetic_switch(self):
        res = _synthetic(Algorithm.ZSTD, ZSTD_COSTS) + _synthetic(Algorithm.LZ4, LZ4_COSTS)
        c = find_crossover(None, False, results=res)
        assert c.low_winner is Algorithm.ZSTD and c.high_winner is Algorithm.LZ4 and c.monotone
        b = c.bandwidth_bps
        assert b % 1e6 == 0
        # brute check on either side of the reported switch
        zs = lambda x: min(r.at(x).total() for r in res if r.spec.algorithm is Algorithm.ZSTD)
        lz = lambda x: min(r.at(x).total() for r in res if r.spec.algorithm is Algorithm.LZ4)
        assert zs(b - 2e6) <= lz(b - 2e6)
        assert zs(b + 2e6) > lz(b + 2e6)

    def test_no_switch(self):
        res = _synthetic(Algorithm.ZSTD, {1: (0.001, 10)}) + _synthetic(Algorithm.LZ4, {1: (0.002, 20)})
        c = find_crossover(None, False, results=res)
        assert c.bandwidth_bps is None and c.low_winner is c.high_winner is Algorithm.ZSTD

    def test_needs_both(self):
        with pytest.raises(ConfigurationError):
            find_crossover(None, False, results=_synthetic(Algorithm.LZ4, LZ4_COSTS))


class TestCSV:
    def test_columns_and_rows(self):
        res = _synthetic(Algorithm.LZ4, LZ4_COSTS)
        buf = io.StringIO()
        write_sweep_csv(buf, res, bandwidths=[1e6, 1e9])
        rows = list(csv.reader(io.StringIO(buf.getvalue())))
        assert tuple(rows[0]) == CSV_COLUMNS + ("bandwidth_bps",)
        assert len(rows) == 1 + 2 * len(res)
        assert rows[1][0] == "lz4" and float(rows[-1][-1]) == 1e9

    def test_path(self, tmp_path):
        write_sweep_csv(tmp_path / "s.csv", _synthetic(Algorithm.ZSTD, ZSTD_COSTS))
        assert (tmp_path / "s.csv").read_text().startswith("spec,param,quantized,mode,t_comp")
