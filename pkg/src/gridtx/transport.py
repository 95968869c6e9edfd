"""Shaped stream-socket transport for grid map messages.

A sender pushes ``u64``-length-prefixed wire messages through a token bucket
to a receiver that decodes them and timestamps completion. Both ends run in
the same process, so a single monotonic clock covers the whole path.
"""

from __future__ import annotations

import collections
import csv
import logging
import math
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from gridtx import wire
from gridtx.codecs import Algorithm, CodecSpec
from gridtx.exceptions import ConfigurationError, GridTxError
from gridtx.latency import Summary, summarize
from gridtx.model import GridMap
from gridtx.quantizer import quantize_grid
from gridtx.wire import Mode

__all__ = [
    "MSS",
    "GaussianJitter",
    "ChannelConfig",
    "TokenBucket",
    "TransferRecord",
    "ReceivedFrame",
    "Receiver",
    "serve",
    "SessionResult",
    "send_session",
    "calibrate_loopback",
    "Preset",
    "PRESETS",
    "COLUMNS",
    "EvaluationColumn",
    "EvaluationReport",
    "run_evaluation",
    "write_report_csv",
    "format_report",
]

log = logging.getLogger(__name__)

MSS = 1460
REFILL_INTERVAL = 1e-3
DEFAULT_BURST = 64 * 1024
_LEN = struct.Struct("<Q")
_MAX_CHUNK = 256 * 1024


@dataclass(frozen=True)
class GaussianJitter:
    """Per-message link rate drawn from N(mean, std), floored at 0.1 x mean."""

    mean_bps: float = 6.36e6
    std_bps: float = 3.09e6
    seed: int = 0

    def __post_init__(self):
        if not self.mean_bps > 0 or not self.std_bps >= 0:
            raise ConfigurationError("jitter needs mean_bps > 0 and std_bps >= 0")

    @property
    def floor_bps(self) -> float:
        return 0.1 * self.mean_bps

    def sampler(self):
        rng = np.random.default_rng(self.seed)
        floor = self.floor_bps

        def draw() -> float:
            return max(floor, float(rng.normal(self.mean_bps, self.std_bps)))

        return draw


@dataclass(frozen=True)
class ChannelConfig:
    """Link emulation settings.

    ``target_bps=None`` leaves the socket unshaped (loopback speed).
    """

    target_bps: float | None = 10e6
    burst_bytes: int = DEFAULT_BURST
    jitter: GaussianJitter | None = None
    host: str = "127.0.0.1"
    port: int = 0

    def __post_init__(self):
        if self.target_bps is not None and not (self.target_bps > 0 and math.isfinite(self.target_bps)):
            raise ConfigurationError(f"target_bps must be positive, got {self.target_bps}")
        if self.burst_bytes < MSS:
            raise ConfigurationError(f"burst_bytes must be >= MSS ({MSS}), got {self.burst_bytes}")
        if not 0 <= self.port < 65536:
            raise ConfigurationError(f"port out of range: {self.port}")

    @property
    def shaped(self) -> bool:
        return self.target_bps is not None or self.jitter is not None


class TokenBucket:
    """Byte-credit bucket refilled at ``rate_bps / 8`` bytes per second.

    Refill happens in ticks of at least ``REFILL_INTERVAL``. The depth is
    raised to two ticks' worth of credit when the burst is smaller; with
    less, credit earned during a tick is capped away and the link runs slow.
    """

    def __init__(self, rate_bps: float, burst_bytes: int = DEFAULT_BURST,
                 clock=time.perf_counter, sleep=time.sleep):
        self._clock = clock
        self._sleep = sleep
        self._burst = int(burst_bytes)
        self.set_rate(rate_bps)
        self.tokens = float(self.depth)
        self._last = clock()

    def set_rate(self, rate_bps: float) -> None:
        if not rate_bps > 0:
            raise ConfigurationError(f"rate must be positive, got {rate_bps}")
        self.rate_bps = float(rate_bps)
        self.depth = max(self._burst, int(2 * self.rate_bps / 8 * REFILL_INTERVAL))
        if hasattr(self, "tokens"):
            self.tokens = min(self.tokens, self.depth)

    @property
    def chunk(self) -> int:
        """Write size that keeps the stream smooth at this rate.

        At most half the depth, so credit earned while a sleep overshoots
        is kept instead of being capped away.
        """
        return int(min(self.depth // 2, _MAX_CHUNK, max(MSS, self.rate_bps / 8 * REFILL_INTERVAL)))

    def _refill(self) -> None:
        now = self._clock()
        self.tokens = min(self.depth, self.tokens + (now - self._last) * self.rate_bps / 8)
        self._last = now

    def consume(self, n: int) -> None:
        """Block until ``n`` bytes of credit are available, then take them."""
        if n > self.depth:
            raise ValueError(f"request of {n} bytes exceeds bucket depth {self.depth}")
        self._refill()
        while self.tokens < n:
            deficit = (n - self.tokens) * 8 / self.rate_bps
            self._sleep(max(deficit, REFILL_INTERVAL))
            self._refill()
        self.tokens -= n


def _send_shaped(sock: socket.socket, data, bucket: TokenBucket | None) -> None:
    view = memoryview(data)
    if bucket is None:
        sock.sendall(view)
        return
    step = bucket.chunk
    for start in range(0, len(view), step):
        piece = view[start:start + step]
        bucket.consume(len(piece))
        sock.sendall(piece)


def _recv_exact(sock: socket.socket, n: int) -> bytearray | None:
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        k = sock.recv_into(view[got:], n - got)
        if k == 0:
            return None
        got += k
    return buf


class TransferRecord(NamedTuple):
    index: int
    size_bytes: int
    t_encode: float
    t_send: float
    t_received: float
    t_decoded: float
    rate_bps: float | None

    @property
    def t_e2e(self) -> float:
        """Encode start to decode end."""
        return self.t_decoded - self.t_encode

    @property
    def wire_time(self) -> float:
        return self.t_received - self.t_send

    @property
    def goodput_bps(self) -> float:
        return self.size_bytes * 8 / self.wire_time if self.wire_time > 0 else math.inf


class ReceivedFrame(NamedTuple):
    seq: int
    grid: GridMap | None
    size_bytes: int
    t_received: float
    t_decoded: float
    error: str | None = None


class Receiver:
    """Listening end. Iterate to get decoded frames in arrival order.

    Frames that fail to decode are logged, counted in ``malformed`` and
    skipped by iteration (they still occupy a sequence number). With
    ``once=True`` the stream ends when the first connection closes.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0, decode: bool = True, once: bool = False):
        self.once = once
        self._server = socket.create_server((host, port))
        self.address = self._server.getsockname()[:2]
        self.decode = decode
        self.malformed = 0
        self.frames = 0
        self.bytes_received = 0
        self._events: queue.Queue = queue.Queue()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name="gridtx-receiver", daemon=True)
        self._thread.start()

    def _run(self) -> None:
        self._server.settimeout(0.2)
        try:
            while not self._stop.is_set():
                try:
                    conn, _ = self._server.accept()
                except socket.timeout:
                    continue
                except OSError:
                    break
                with conn:
                    conn.settimeout(None)
                    self._serve_connection(conn)
                if self.once:
                    break
        finally:
            self._events.put(None)

    def _serve_connection(self, conn: socket.socket) -> None:
        while True:
            try:
                head = _recv_exact(conn, _LEN.size)
                if head is None:
                    return
                (length,) = _LEN.unpack(head)
                data = _recv_exact(conn, length)
            except OSError:
                return
            if data is None:
                log.warning("connection closed inside a %d byte frame", length)
                return
            t_received = time.perf_counter()
            seq = self.frames
            self.frames += 1
            self.bytes_received += length
            if not self.decode:
                self._events.put(ReceivedFrame(seq, None, length, t_received, t_received))
                continue
            try:
                grid = wire.decode(bytes(data)).grid
            except GridTxError as exc:
                self.malformed += 1
                log.warning("skipping malformed frame %d: %s", seq, exc)
                self._events.put(ReceivedFrame(seq, None, length, t_received, time.perf_counter(), str(exc)))
                continue
            self._events.put(ReceivedFrame(seq, grid, length, t_received, time.perf_counter()))

    def next_event(self, timeout: float | None = None) -> ReceivedFrame | None:
        """Next frame event, malformed ones included; ``None`` after shutdown."""
        return self._events.get(timeout=timeout)

    def __iter__(self) -> Iterator[tuple[GridMap, ReceivedFrame]]:
        while True:
            ev = self._events.get()
            if ev is None:
                return
            if ev.error is None:
                yield ev.grid, ev

    def close(self) -> None:
        self._stop.set()
        try:
            self._server.close()
        except OSError:
            pass
        self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve(host: str = "127.0.0.1", port: int = 0, decode: bool = True) -> Receiver:
    """Receiver for a single sender; iteration stops when it disconnects."""
    return Receiver(host, port, decode, once=True)


def connect(address, nodelay: bool = True) -> socket.socket:
    sock = socket.create_connection(tuple(address))
    if nodelay:
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return sock


def send_frame(sock: socket.socket, data, bucket: TokenBucket | None = None) -> None:
    _send_shaped(sock, _LEN.pack(len(data)), bucket)
    _send_shaped(sock, data, bucket)


@dataclass
class SessionResult:
    records: list[TransferRecord]
    dropped: int = 0
    malformed: int = 0
    mismatched: int = 0
    bytes_sent: int = 0

    @property
    def t_e2e(self) -> list[float]:
        return [r.t_e2e for r in self.records]

    def summary(self) -> Summary:
        return summarize(self.t_e2e)


def send_session(
    corpus: Sequence[GridMap],
    spec: CodecSpec,
    quantized: bool = False,
    mode=Mode.PATCHWISE,
    channel: ChannelConfig | None = None,
    rate_hz: float | None = None,
    messages: int | None = None,
    queue_bound: int = 4,
    verify: bool = False,
    receiver: Receiver | None = None,
    timeout: float = 600.0,
) -> SessionResult:
    """Send ``messages`` frames (cycling the corpus) and time each one.

    With ``rate_hz=None`` the session is closed-loop: the next frame is
    encoded only after the previous one was decoded, so no message ever
    waits behind another. With a rate, frames are produced on a fixed
    schedule and a full send queue drops its oldest entry.
    """
    if not corpus:
        raise ConfigurationError("corpus is empty")
    channel = channel or ChannelConfig()
    spec = spec if isinstance(spec, CodecSpec) else CodecSpec.parse(spec)
    mode = Mode.parse(mode)
    count = len(corpus) if messages is None else int(messages)
    if count < 1:
        raise ConfigurationError("messages must be >= 1")
    if rate_hz is not None and not rate_hz > 0:
        raise ConfigurationError("rate_hz must be positive")
    if queue_bound < 1:
        raise ConfigurationError("queue_bound must be >= 1")

    # quantization sits outside the timed path, as in the latency model
    frames = [quantize_grid(g) for g in corpus] if quantized else list(corpus)
    own = receiver is None
    if own:
        receiver = Receiver(channel.host, channel.port)
    draw = channel.jitter.sampler() if channel.jitter else None
    nominal = channel.target_bps if channel.target_bps is not None else None
    bucket = None
    if channel.shaped:
        bucket = TokenBucket(nominal or channel.jitter.mean_bps, channel.burst_bytes)
    result = SessionResult([])
    sent: dict[int, tuple[int, int, float, float, float | None]] = {}
    sock = connect(receiver.address)

    def transmit(seq_index, payload, t_encode):
        rate = None
        if bucket is not None:
            rate = draw() if draw else nominal
            bucket.set_rate(rate)
        t_send = time.perf_counter()
        send_frame(sock, payload, bucket)
        result.bytes_sent += len(payload)
        sent[seq_index[0]] = (seq_index[1], len(payload), t_encode, t_send, rate)
        seq_index[0] += 1

    def collect(n_frames, deadline):
        while len(result.records) + result.malformed + result.mismatched < n_frames:
            ev = receiver.next_event(timeout=max(0.0, deadline - time.monotonic()))
            if ev is None:
                raise GridTxError("receiver shut down before all frames arrived")
            index, size, t_enc, t_send, rate = sent[ev.seq]
            if ev.error is not None:
                result.malformed += 1
                continue
            if verify and ev.grid != frames[index % len(frames)]:
                result.mismatched += 1
                continue
            result.records.append(TransferRecord(index, size, t_enc, t_send, ev.t_received, ev.t_decoded, rate))

    seq = [receiver.frames, 0]  # next sequence number on this receiver, message index
    try:
        deadline = time.monotonic() + timeout
        if rate_hz is None:
            for i in range(count):
                t_encode = time.perf_counter()
                msg = wire.encode(frames[i % len(frames)], spec, quantized, mode)
                seq[1] = i
                transmit(seq, msg.data, t_encode)
                collect(i + 1 - result.dropped, deadline)
        else:
            pending: collections.deque = collections.deque()
            cond = threading.Condition()
            done = threading.Event()
            errors: list[BaseException] = []

            def sender():
                try:
                    while True:
                        with cond:
                            while not pending and not done.is_set():
                                cond.wait()
                            if not pending:
                                return
                            i, data, t_enc = pending.popleft()
                        seq[1] = i
                        transmit(seq, data, t_enc)
                except BaseException as exc:  # surfaced in the caller
                    errors.append(exc)

            worker = threading.Thread(target=sender, name="gridtx-sender", daemon=True)
            worker.start()
            period = 1.0 / rate_hz
            t_encode = -math.inf
            for i in range(count):
                # no catch-up after a late start: gaps never drop below the period
                wait = t_encode + period - time.perf_counter()
                if wait > 0:
                    time.sleep(wait)
                t_encode = time.perf_counter()
                msg = wire.encode(frames[i % len(frames)], spec, quantized, mode)
                with cond:
                    if len(pending) >= queue_bound:
                        pending.popleft()
                        result.dropped += 1
                    pending.append((i, msg.data, t_encode))
                    cond.notify()
            done.set()
            with cond:
                cond.notify()
            worker.join(timeout=max(0.0, deadline - time.monotonic()))
            if errors:
                raise errors[0]
            collect(count - result.dropped, deadline)
    finally:
        sock.close()
        if own:
            receiver.close()
    result.records.sort(key=lambda r: r.index)
    return result


def calibrate_loopback(nbytes: int = 64 * 2**20, host: str = "127.0.0.1") -> float:
    """Unshaped raw-byte throughput of a local socket, in bits/second."""
    payload = bytes(min(nbytes, 8 * 2**20))
    rounds = max(1, nbytes // len(payload))
    with Receiver(host, 0, decode=False) as rx:
        sock = connect(rx.address)
        try:
            t0 = time.perf_counter()
            for _ in range(rounds):
                send_frame(sock, payload)
            last = None
            for _ in range(rounds):
                last = rx.next_event(timeout=60)
            elapsed = last.t_received - t0
        finally:
            sock.close()
    return rounds * len(payload) * 8 / elapsed


# --- evaluation ---------------------------------------------------------------


COLUMNS = (
    ("None", Algorithm.NONE, False),
    ("LZ4", Algorithm.LZ4, False),
    ("Zstd", Algorithm.ZSTD, False),
    ("None^q", Algorithm.NONE, True),
    ("LZ4^q", Algorithm.LZ4, True),
    ("Zstd^q", Algorithm.ZSTD, True),
)


@dataclass(frozen=True)
class Preset:
    name: str
    channel: ChannelConfig
    params: dict = field(default_factory=dict)  # (algorithm, quantized) -> param
    mode: Mode = Mode.PATCHWISE

    def spec(self, algorithm: Algorithm, quantized: bool) -> CodecSpec:
        return CodecSpec(algorithm, self.params.get((algorithm, quantized), 0))


# Reference end-to-end optima for 10 Mbps and 10 Gbps; `--select` re-derives them on the host.
PRESETS = {
    "v2x": Preset(
        "v2x",
        ChannelConfig(10e6, burst_bytes=16 * 1024, jitter=GaussianJitter(6.36e6, 3.09e6, seed=0)),
        {(Algorithm.LZ4, False): 1, (Algorithm.ZSTD, False): 8,
         (Algorithm.LZ4, True): 1, (Algorithm.ZSTD, True): 7},
    ),
    "dpu": Preset(
        "dpu",
        ChannelConfig(10e9),
        {(Algorithm.LZ4, False): 64, (Algorithm.ZSTD, False): -62,
         (Algorithm.LZ4, True): 128, (Algorithm.ZSTD, True): -60},
    ),
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None


@dataclass
class EvaluationColumn:
    label: str
    spec: CodecSpec
    quantized: bool
    summary: Summary | None
    messages: int
    mean_size: float
    shaped_limited: bool = False
    error: str | None = None


@dataclass
class EvaluationReport:
    preset: str
    target_bps: float | None
    loopback_bps: float | None
    columns: list[EvaluationColumn]

    @property
    def ok(self) -> bool:
        return all(c.error is None for c in self.columns)

    def column(self, label: str) -> EvaluationColumn:
        for c in self.columns:
            if c.label == label:
                return c
        raise KeyError(label)

    def mean(self, label: str) -> float:
        return self.column(label).summary.mean


def run_evaluation(
    corpus: Sequence[GridMap],
    preset: str | Preset = "v2x",
    messages: int = 50,
    overrides: dict | None = None,
    columns: Sequence[str] | None = None,
    rate_hz: float | None = None,
    verify: bool = False,
) -> EvaluationReport:
    """Run every codec column of the preset and summarize measured t_e2e.

    ``overrides`` maps ``(Algorithm, quantized)`` to a parameter. The jitter
    seed is shared by all columns so each one sees the same rate sequence.
    """
    preset = get_preset(preset) if isinstance(preset, str) else preset
    if messages < 1:
        raise ConfigurationError("messages must be >= 1")
    params = dict(preset.params)
    params.update(overrides or {})
    channel = preset.channel
    loopback = None
    limited = False
    if channel.target_bps is not None and channel.jitter is None and channel.target_bps >= 1e9:
        loopback = calibrate_loopback(host=channel.host)
        limited = loopback < channel.target_bps
    cols = []
    for label, algo, q in COLUMNS:
        if columns is not None and label not in columns:
            continue
        spec = CodecSpec(algo, params.get((algo, q), 0))
        try:
            res = send_session(corpus, spec, q, preset.mode, channel, rate_hz=rate_hz,
                               messages=messages, verify=verify)
            if res.malformed or res.mismatched:
                raise GridTxError(f"{res.malformed} malformed and {res.mismatched} mismatched frames")
            sizes = [r.size_bytes for r in res.records]
            cols.append(EvaluationColumn(label, spec, q, res.summary(), len(res.records),
                                         float(np.mean(sizes)), limited))
        except (GridTxError, OSError) as exc:
            log.error("column %s failed: %s", label, exc)
            cols.append(EvaluationColumn(label, spec, q, None, 0, 0.0, limited, str(exc)))
    return EvaluationReport(preset.name, channel.target_bps, loopback, cols)


STATISTICS = ("mean", "std", "min", "max")


def write_report_csv(path_or_file, reports: Sequence[EvaluationReport]) -> None:
    """Table-II layout: one row per (use case, statistic), one column per codec, in ms."""
    labels = [c[0] for c in COLUMNS]
    header = ["use_case", "statistic", *labels, "shaped_limited"]
    own = not hasattr(path_or_file, "write")
    fp = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        writer = csv.writer(fp)
        writer.writerow(header)
        for rep in reports:
            by_label = {c.label: c for c in rep.columns}
            limited = any(c.shaped_limited for c in rep.columns)
            for stat in STATISTICS:
                row = [rep.preset, stat]
                for label in labels:
                    col = by_label.get(label)
                    if col is None or col.summary is None:
                        row.append("")
                    else:
                        row.append(f"{getattr(col.summary, stat) * 1e3:.3f}")
                row.append(int(limited))
                writer.writerow(row)
    finally:
        if own:
            fp.close()


def format_report(reports: Sequence[EvaluationReport]) -> str:
    labels = [c[0] for c in COLUMNS]
    lines = [f"{'':8}{'':6}" + "".join(f"{lab:>10}" for lab in labels)]
    for rep in reports:
        by_label = {c.label: c for c in rep.columns}
        for k, stat in enumerate(STATISTICS):
            cells = []
            for label in labels:
                col = by_label.get(label)
                if col is None:
                    cells.append(f"{'':>10}")
                elif col.summary is None:
                    cells.append(f"{'error':>10}")
                else:
                    cells.append(f"{getattr(col.summary, stat) * 1e3:>10.2f}")
            name = rep.preset.upper() if k == 0 else ""
            lines.append(f"{name:8}{stat:6}" + "".join(cells))
        if any(c.shaped_limited for c in rep.columns):
            lines.append(f"  ({rep.preset}: loopback {rep.loopback_bps / 1e9:.2f} Gbps is below the "
                         f"{rep.target_bps / 1e9:.0f} Gbps target; rows are shaped-limited)")
    return "\n".join(lines)
