"""scikit-learn style wrappers.

``GridQuantizer`` is a stateless transformer over sequences of grid maps.
``CodecSelector`` measures a corpus once in ``fit`` and then predicts the
end-to-end optimal codec for any link bandwidth.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from gridtx import latency
from gridtx.codecs import Algorithm, CodecSpec
from gridtx.exceptions import ConfigurationError, DataError
from gridtx.model import GridMap
from gridtx.quantizer import dequantize_grid, quantize_grid
from gridtx.wire import Mode

__all__ = ["check_corpus", "check_bandwidths", "GridQuantizer", "CodecSelector", "NotFittedError"]


def check_corpus(X, *, quantized: bool | None = None) -> list[GridMap]:
    """Validate a corpus: a non-empty sequence of :class:`GridMap`.

    ``quantized`` (if given) requires every grid to be in that state.
    """
    if isinstance(X, GridMap):
        X = [X]
    try:
        grids = list(X)
    except TypeError:
        raise DataError(f"expected a sequence of GridMap, got {type(X).__name__}") from None
    if not grids:
        raise DataError("corpus is empty")
    for i, g in enumerate(grids):
        if not isinstance(g, GridMap):
            raise DataError(f"corpus item {i} is {type(g).__name__}, not GridMap")
        if not g.patches:
            raise DataError(f"corpus item {i} has no patches")
        if quantized is not None and g.quantized != quantized:
            state = "quantized" if quantized else "normal"
            raise DataError(f"corpus item {i} is not {state}")
    return grids


def check_bandwidths(bandwidths) -> np.ndarray:
    """1-D float array of positive, finite bandwidths in bits/second."""
    arr = np.atleast_1d(np.asarray(bandwidths, dtype=np.float64))
    if arr.ndim != 1 or arr.size == 0:
        raise ConfigurationError("bandwidths must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ConfigurationError("bandwidths must be positive and finite")
    return arr


class GridQuantizer(TransformerMixin, BaseEstimator):
    """Quantize opinion masses to 8-bit levels (and back).

    There is nothing to learn; ``fit`` only validates its input.
    """

    def fit(self, X, y=None):
        self.n_frames_ = len(check_corpus(X))
        return self

    def transform(self, X):
        check_is_fitted(self, "n_frames_")
        return [quantize_grid(g) for g in check_corpus(X)]

    def inverse_transform(self, X):
        check_is_fitted(self, "n_frames_")
        return [dequantize_grid(g) for g in check_corpus(X, quantized=True)]


class CodecSelector(BaseEstimator):
    """Pick the codec that minimizes modeled end-to-end time at a bandwidth.

    ``fit`` times every candidate on the corpus once. ``predict`` re-evaluates
    the analytic transmission term for each requested bandwidth, so it is
    cheap and can be called with many bandwidths.

    Parameters
    ----------
    quantized : bool
        Select for quantized transfer.
    mode : {"patchwise", "full"}
    algorithms : tuple of str
        Candidates; each is swept over its default parameter grid.
    include_none : bool
        Let the uncompressed baseline compete as well.
    repeats : int
        Timing repetitions per stage (median).
    rel_tol : float
        Tie tolerance relative to the measured compute time.
    """

    def __init__(self, quantized: bool = False, mode: str = "patchwise",
                 algorithms: tuple = ("lz4", "zstd"), include_none: bool = False,
                 repeats: int = 5, rel_tol: float = 0.02):
        self.quantized = quantized
        self.mode = mode
        self.algorithms = algorithms
        self.include_none = include_none
        self.repeats = repeats
        self.rel_tol = rel_tol

    def _validate_params(self):
        algos = [Algorithm.parse(a) for a in self.algorithms]
        if not algos:
            raise ConfigurationError("algorithms must not be empty")
        if Algorithm.NONE in algos:
            raise ConfigurationError("use include_none=True for the baseline")
        if self.repeats < 1:
            raise ConfigurationError("repeats must be >= 1")
        if not 0 <= self.rel_tol < 1:
            raise ConfigurationError("rel_tol must be in [0, 1)")
        return algos, Mode.parse(self.mode)

    def fit(self, X, y=None, measure=None):
        """Time the candidates on corpus ``X``.

        ``measure`` overrides the timing function, see :func:`latency.sweep`.
        """
        algos, mode = self._validate_params()
        corpus = check_corpus(X)
        specs = [CodecSpec(a, p) for a in algos for p in latency.param_grid(a)]
        if self.include_none:
            specs.append(CodecSpec(Algorithm.NONE))
        self.results_ = latency.sweep(corpus, specs, (bool(self.quantized),), mode,
                                      latency.DEFAULT_BANDWIDTHS[0], self.repeats, measure=measure)
        self.algorithms_ = tuple(algos)
        self.n_frames_ = len(corpus)
        if {Algorithm.LZ4, Algorithm.ZSTD} <= set(algos):
            self.crossover_ = latency.find_crossover(None, bool(self.quantized), mode, results=self.results_)
        else:
            self.crossover_ = None
        return self

    def _by_algorithm(self):
        groups = {}
        for r in self.results_:
            groups.setdefault(r.spec.algorithm, []).append(r)
        return groups

    def optimal_params(self, bandwidth_bps: float) -> dict:
        """``{algorithm: (param, t_e2e)}`` at one bandwidth."""
        check_is_fitted(self, "results_")
        (b,) = check_bandwidths([bandwidth_bps])
        out = {}
        for algo, rs in self._by_algorithm().items():
            best = latency.select_optimal(rs, b, self.rel_tol)
            out[algo] = (best.spec.param, best.total())
        return out

    def predict(self, bandwidths) -> list[CodecSpec]:
        """Optimal :class:`CodecSpec` for each bandwidth."""
        check_is_fitted(self, "results_")
        out = []
        for b in check_bandwidths(bandwidths):
            best = self.optimal_params(float(b))
            algo = min(best, key=lambda a: best[a][1])
            out.append(CodecSpec(algo, best[algo][0]))
        return out

    def predict_time(self, bandwidths) -> np.ndarray:
        """Modeled mean t_e2e (seconds) of the predicted codec."""
        check_is_fitted(self, "results_")
        times = []
        for b in check_bandwidths(bandwidths):
            best = self.optimal_params(float(b))
            times.append(min(t for _, t in best.values()))
        return np.asarray(times)

    def score(self, X=None, y=None) -> float:
        """Negative mean modeled t_e2e over the standard bandwidths."""
        return -float(np.mean(self.predict_time(latency.DEFAULT_BANDWIDTHS)))

    @property
    def crossover_bps(self) -> float:
        check_is_fitted(self, "results_")
        if self.crossover_ is None or self.crossover_.bandwidth_bps is None:
            return math.nan
        return self.crossover_.bandwidth_bps
