import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gridtx import BinomialOpinion, CorpusConfig, GridMap, Patch, generate_corpus, payload_bytes, total_cells
from gridtx.codecs import rle_encode
from gridtx.exceptions import ConfigurationError, DataError
from gridtx.model import iter_cells, plan_layout, splitmix64

from conftest import SMALL, random_grid
import oracles


def _patch(pid=1, n=4, fill=(0.0, 0.0), dtype=np.float32):
    cells = np.zeros((n, n, 2), dtype=dtype)
    cells[...] = fill
    return Patch(pid, (0.0, 0.0), 0.1, n, cells)


class TestBinomialOpinion:
    def test_uncertainty_is_implied(self):
        op = BinomialOpinion(0.25, 0.5)
        assert op.uncertainty == 0.25
        assert op.projected_probability(0.5) == 0.375

    @pytest.mark.parametrize("b,d", [(-0.1, 0.0), (0.0, 1.1), (0.6, 0.5), (float("nan"), 0.0)])
    def test_rejects_invalid(self, b, d):
        with pytest.raises(DataError):
            BinomialOpinion(b, d)

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_constructible_iff_additive(self, b, d):
        if b + d <= 1.0:
            assert BinomialOpinion(b, d).uncertainty >= -1e-15
        else:
            with pytest.raises(DataError):
                BinomialOpinion(b, d)


class TestPatch:
    def test_shape_and_side(self):
        p = _patch(n=160)
        assert p.num_cells == 25_600
        assert p.side_m == pytest.approx(16.0)
        assert p.bytes_per_cell == 8
        assert len(p.payload()) == 25_600 * 8

    def test_cells_are_read_only(self):
        p = _patch()
        with pytest.raises(ValueError):
            p.cells[0, 0, 0] = 0.5

    def test_flat_cells_are_reshaped(self):
        p = Patch(1, (0, 0), 0.2, 3, np.zeros((9, 2), np.float32))
        assert p.cells.shape == (3, 3, 2)

    @pytest.mark.parametrize("kwargs", [
        dict(cells=np.zeros((3, 3, 2), np.float32)),
        dict(cells_per_side=0),
        dict(cell_size=0.0),
        dict(cell_size=-1.0),
        dict(patch_id=-1),
        dict(patch_id=2**64),
    ])
    def test_rejects_bad_geometry(self, kwargs):
        args = dict(patch_id=1, origin=(0.0, 0.0), cell_size=0.1, cells_per_side=4,
                    cells=np.zeros((4, 4, 2), np.float32))
        args.update(kwargs)
        with pytest.raises(DataError):
            Patch(**args)

    def test_rejects_non_additive_float_cell(self):
        with pytest.raises(DataError):
            _patch(fill=(0.6, 0.5))

    def test_rejects_sum_just_above_one(self):
        b = np.float32(0.7)
        d = np.nextafter(np.float32(1.0) - b, np.float32(1.0))
        assert float(b) + float(d) > 1.0
        with pytest.raises(DataError):
            _patch(fill=(b, d))

    def test_accepts_sum_exactly_one(self):
        _patch(fill=(0.5, 0.5))

    def test_rejects_nan(self):
        with pytest.raises(DataError):
            _patch(fill=(np.nan, 0.0))

    def test_quantized_cells(self):
        p = _patch(fill=(200, 55), dtype=np.uint8)
        assert p.quantized and p.bytes_per_cell == 2
        with pytest.raises(DataError):
            _patch(fill=(200, 56), dtype=np.uint8)

    def test_payload_is_little_endian_row_major(self):
        cells = np.zeros((2, 2, 2), np.float32)
        cells[0, 1] = (0.25, 0.5)
        p = Patch(1, (0, 0), 0.1, 2, cells)
        raw = p.payload()
        assert raw[8:16] == np.array([0.25, 0.5], dtype="<f4").tobytes()
        assert bytes(p.payload_view()) == raw


class TestGridMap:
    def test_unique_patch_ids(self):
        with pytest.raises(DataError):
            GridMap(0.5, (_patch(1), _patch(1)))

    @pytest.mark.parametrize("a", [-0.01, 1.01, float("nan")])
    def test_base_rate_range(self, a):
        with pytest.raises(DataError):
            GridMap(a, ())

    def test_mixed_quantization_rejected(self):
        with pytest.raises(DataError):
            GridMap(0.5, (_patch(1), _patch(2, fill=(1, 1), dtype=np.uint8)))

    def test_frame_id_length(self):
        GridMap(0.5, (), frame_id="x" * 255)
        with pytest.raises(DataError):
            GridMap(0.5, (), frame_id="x" * 256)


class TestCounting:
    def test_empty(self):
        g = GridMap()
        assert total_cells(g) == 0
        assert payload_bytes(g, False) == 0 == payload_bytes(g, True)

    def test_one_full_resolution_patch(self):
        assert total_cells(GridMap(0.5, (_patch(n=160),))) == 25_600

    def test_reference_cell_count_bytes(self):
        cells = np.zeros((100, 100, 2), np.float32)
        g = GridMap(0.5, tuple(Patch(i, (0, 0), 0.1, 100, cells) for i in range(35)))
        assert total_cells(g) == 350_000
        assert payload_bytes(g, False) == 2_800_000
        assert payload_bytes(g, True) == 700_000

    def test_agrees_with_iteration(self):
        g = random_grid(np.random.default_rng(3), n_patches=4, side=5)
        assert total_cells(g) == len(iter_cells(g)) == 100
        assert payload_bytes(g, False) == sum(len(p.payload()) for p in g.patches)


class TestPRNG:
    @given(st.integers(0, 2**64 - 1))
    def test_splitmix_matches_reference(self, x):
        assert int(splitmix64(np.uint64(x))) == oracles.splitmix64_output(x)

    def test_known_vector(self):
        # first output of the reference SplitMix64 generator seeded with 0
        assert int(splitmix64(np.uint64(0))) == 0xE220A8397B1DCDAF


class TestCorpusConfig:
    @pytest.mark.parametrize("kwargs", [
        dict(occupancy_mix=(0.5, 0.5, 0.1, 0.0)),
        dict(occupancy_mix=(1.1, -0.1, 0.0, 0.0)),
        dict(resolutions=(0.2, 0.1)),
        dict(resolutions=(0.1, 0.1)),
        dict(resolutions=(0.0, 0.1)),
        dict(target_cells=0),
        dict(patch_side_m=15.95),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            CorpusConfig(**kwargs)

    def test_mix_tolerance(self):
        CorpusConfig(occupancy_mix=(0.28, 0.07, 0.64, 0.01 + 5e-10))

    def test_unreachable_target(self):
        with pytest.raises(ConfigurationError):
            generate_corpus(CorpusConfig(target_cells=1000), 1)

    def test_default_layout_size(self):
        cells = sum((16.0 / CorpusConfig().resolutions[k]) ** 2 for _, _, k in plan_layout(CorpusConfig()))
        assert abs(cells - 350_000) <= 35_000


class TestGenerateCorpus:
    def test_frames_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            generate_corpus(CorpusConfig(**SMALL), 0)

    def test_deterministic(self):
        cfg = CorpusConfig(seed=1, **SMALL)
        a = generate_corpus(cfg, 2)
        b = generate_corpus(cfg, 2)
        assert all(x == y for x, y in zip(a, b))
        assert [p.payload() for p in a[1].patches] == [p.payload() for p in b[1].patches]

    def test_seed_changes_content(self):
        a = generate_corpus(CorpusConfig(seed=1, **SMALL), 1)[0]
        b = generate_corpus(CorpusConfig(seed=2, **SMALL), 1)[0]
        assert a != b

    def test_default_frame_size(self, full_frame):
        assert abs(total_cells(full_frame) - 350_000) <= 35_000
        assert {p.cell_size for p in full_frame.patches} == {np.float32(r) for r in (0.1, 0.2, 0.4)}

    def test_unknown_only(self):
        g = generate_corpus(CorpusConfig(occupancy_mix=(0, 0, 1, 0), **SMALL), 1)[0]
        assert all(not p.cells.any() for p in g.patches)

    def test_additivity_exact(self, small_corpus):
        for g in small_corpus:
            for p in g.patches:
                c = p.cells.astype(np.float64)
                assert (c >= 0).all() and (c[..., 0] + c[..., 1] <= 1.0).all()

    def test_mix_roughly_followed(self, small_corpus):
        cells = np.concatenate([p.cells.reshape(-1, 2) for p in small_corpus[0].patches])
        unknown = np.mean((cells[:, 0] == 0) & (cells[:, 1] == 0))
        free = np.mean(cells[:, 1] > cells[:, 0])
        occupied = np.mean(cells[:, 0] > cells[:, 1])
        assert unknown == pytest.approx(0.64, abs=0.05)
        assert free == pytest.approx(0.28, abs=0.05)
        assert occupied == pytest.approx(0.07, abs=0.03)

    def test_rle_shrinks_every_frame(self, full_frame, small_corpus):
        for g in [full_frame, *small_corpus]:
            raw = b"".join(p.payload() for p in g.patches)
            assert len(rle_encode(raw)) < len(raw)

    def test_spatially_coherent(self, small_corpus):
        # neighbouring cells agree on their class far more often than chance
        p = max(small_corpus[0].patches, key=lambda p: p.num_cells)
        cls = np.sign(p.cells[..., 0] - p.cells[..., 1]) + 2 * ((p.cells[..., 0] == 0) & (p.cells[..., 1] == 0))
        same = np.mean(cls[:, 1:] == cls[:, :-1])
        assert same > 0.8

    def test_frames_advance(self):
        a, b = generate_corpus(CorpusConfig(seed=3, **SMALL), 2)
        assert b.timestamp - a.timestamp == 100_000_000
