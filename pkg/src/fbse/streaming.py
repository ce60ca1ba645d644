"""Frame-accurate real-time execution of the enhancement model.

One push carries one 10 ms hop (480 samples at 48 kHz). Internally each push
advances the three sub-channel analyses by one 320-sample Hamming frame,
steps the model once, and overlap-adds the synthesis. Emission is delayed by
exactly the 30 ms algorithmic latency (analysis window + one synthesis hop,
1440 samples at 48 kHz): the first three pushes return empty arrays, after
which every push returns one hop of enhanced audio, and ``stream_flush``
drains the remainder so that total output equals total input bit-for-bit in
length. The emitted sample stream is identical to the offline
:meth:`fbse.model.Enhancer.forward` output.

Per-layer state is exact: every dilated convolution caches ``(k-1)*d`` past
frames, the LSTMs carry (h, c), and memory stays O(model) regardless of
stream length.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .errors import EmptyInputError, OversizeBlockError, ShapeMismatchError, StreamClosedError

BLOCK_SAMPLES = 3 * dsp.HOP_LEN            # 480 at 48 kHz
LATENCY_SAMPLES = dsp.LATENCY_SAMPLES_48K  # 1440 at 48 kHz
FRAME_MS = 1000.0 * dsp.WIN_LEN / dsp.SUBBAND_RATE
HOP_MS = 1000.0 * dsp.HOP_LEN / dsp.SUBBAND_RATE


@dataclass
class LatencyReport:
    """Measured streaming cost next to the fixed framing latency."""

    frame_ms: float = FRAME_MS
    hop_ms: float = HOP_MS
    algorithmic_ms: float = FRAME_MS + HOP_MS
    per_frame_compute_ms: float = 0.0
    rtf: float = 0.0
    frames_measured: int = 0
    stage_ms: dict = field(default_factory=dict)


class StreamState:
    """Single-writer state of one stream over a shared immutable model."""

    def __init__(self, model):
        self.model = model
        self.model_state = model.init_stream_state()
        w = dsp.WindowSpec()
        self.window = w.window()
        self.win_sq = self.window * self.window
        self.compression = model.cfg.compression
        self.pending = np.zeros(0, dtype=np.float64)
        self.prev_hop = np.zeros((3, dsp.HOP_LEN), dtype=np.float64)
        self.synth_tail = np.zeros((3, dsp.WIN_LEN), dtype=np.float64)
        self.den_tail = np.zeros((3, dsp.WIN_LEN), dtype=np.float64)
        self.hops = 0
        self.frames_done = 0
        self.samples_in = 0           # real samples pushed
        self.samples_out = 0          # real samples emitted
        self.ready = np.zeros(0, dtype=np.float64)
        self.closed = False
        self.timers = {"dsp": 0.0, "model": 0.0}

    # spec-facing views ------------------------------------------------------

    @property
    def pending_samples(self):
        return self.pending

    @property
    def frames_processed(self):
        return self.frames_done

    @property
    def conv_caches(self):
        return {path: arr for path, arr in _walk(self.model_state) if path.endswith("cache")}

    @property
    def lstm_states(self):
        return {path: arr for path, arr in _walk(self.model_state)
                if path.endswith((".h", ".c"))}

    @property
    def ola_tail(self):
        return self.synth_tail


def _walk(node, prefix=""):
    if isinstance(node, dict):
        for k, v in node.items():
            yield from _walk(v, f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(node, (list, tuple)):
        for idx, v in enumerate(node):
            yield from _walk(v, f"{prefix}[{idx}]")
    elif isinstance(node, np.ndarray):
        yield prefix, node


def stream_create(model) -> StreamState:
    """Fresh zero-initialized stream over the model (deterministic)."""
    return StreamState(model)


def _consume_block(state: StreamState, block48):
    """Advance one hop: 480 interleaved samples -> maybe one model frame."""
    hops = np.ascontiguousarray(block48.reshape(dsp.HOP_LEN, 3).T)
    if state.hops >= 1:
        t0 = time.perf_counter()
        frame_pairs = []
        for ch in range(3):
            seg = np.concatenate([state.prev_hop[ch], hops[ch]]) * state.window
            spec = np.fft.rfft(seg, n=dsp.FFT_LEN)
            r, i = dsp._compressed_planes(spec.real, spec.imag, state.compression)
            frame_pairs.append((r.astype(state.model.dtype), i.astype(state.model.dtype)))
        t1 = time.perf_counter()
        enhanced = state.model.stream_step(state.model_state, frame_pairs)
        t2 = time.perf_counter()
        chunk16 = np.empty((3, dsp.HOP_LEN), dtype=np.float64)
        for ch, (er, ei) in enumerate(enhanced):
            lr, li = dsp._compressed_planes(np.asarray(er, dtype=np.float64),
                                            np.asarray(ei, dtype=np.float64),
                                            1.0 / state.compression)
            seg = np.fft.irfft(lr + 1j * li, n=dsp.FFT_LEN)[: dsp.WIN_LEN] * state.window
            state.synth_tail[ch] += seg
            state.den_tail[ch] += state.win_sq
            chunk16[ch] = state.synth_tail[ch, : dsp.HOP_LEN] / np.maximum(
                state.den_tail[ch, : dsp.HOP_LEN], dsp.OLA_DENOM_FLOOR)
        state.synth_tail[:, : dsp.HOP_LEN] = state.synth_tail[:, dsp.HOP_LEN :]
        state.synth_tail[:, dsp.HOP_LEN :] = 0.0
        state.den_tail[:, : dsp.HOP_LEN] = state.den_tail[:, dsp.HOP_LEN :]
        state.den_tail[:, dsp.HOP_LEN :] = 0.0
        out48 = np.empty(BLOCK_SAMPLES, dtype=np.float64)
        out48.reshape(dsp.HOP_LEN, 3)[...] = chunk16.T
        state.ready = np.concatenate([state.ready, out48])
        state.frames_done += 1
        t3 = time.perf_counter()
        state.timers["dsp"] += (t1 - t0) + (t3 - t2)
        state.timers["model"] += t2 - t1
    state.prev_hop = hops
    state.hops += 1


def _emit(state: StreamState, target_total):
    need = target_total - state.samples_out
    if need <= 0:
        return np.zeros(0, dtype=np.float64)
    take = min(need, state.ready.size)
    out, state.ready = state.ready[:take], state.ready[take:]
    state.samples_out += take
    return out


def stream_push(state: StreamState, block) -> np.ndarray:
    """Feed up to one hop (480 samples at 48 kHz); returns enhanced samples.

    Empty until the 1440-sample latency is buffered, then one hop per push.
    Partial blocks are buffered; a short final block is completed by
    ``stream_flush``.
    """
    if state.closed:
        raise StreamClosedError("stream already flushed")
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 1:
        raise ShapeMismatchError(f"expected mono block, got shape {block.shape}")
    if block.size > BLOCK_SAMPLES:
        raise OversizeBlockError(f"block of {block.size} samples exceeds hop of {BLOCK_SAMPLES}")
    state.samples_in += block.size
    state.pending = np.concatenate([state.pending, block])
    while state.pending.size >= BLOCK_SAMPLES:
        chunk, state.pending = state.pending[:BLOCK_SAMPLES], state.pending[BLOCK_SAMPLES:]
        _consume_block(state, chunk)
    return _emit(state, max(0, state.samples_in - LATENCY_SAMPLES))


def stream_flush(state: StreamState) -> np.ndarray:
    """Complete the final frame grid with zeros and drain all real samples.

    After flush the cumulative output length equals the cumulative input
    length exactly.
    """
    if state.closed:
        return np.zeros(0, dtype=np.float64)
    state.closed = True
    if state.samples_in == 0:
        return np.zeros(0, dtype=np.float64)
    if state.pending.size:
        pad = np.zeros(BLOCK_SAMPLES - state.pending.size, dtype=np.float64)
        state.pending = np.concatenate([state.pending, pad])
        chunk, state.pending = state.pending[:BLOCK_SAMPLES], state.pending[BLOCK_SAMPLES:]
        _consume_block(state, chunk)
    sub_len = -(-state.samples_in // 3)
    needed_frames = dsp.frame_count(sub_len)
    while state.frames_done < needed_frames:
        _consume_block(state, np.zeros(BLOCK_SAMPLES, dtype=np.float64))
    # after the last frame the first hop of the tail holds the final samples
    chunk16 = state.synth_tail[:, : dsp.HOP_LEN] / np.maximum(
        state.den_tail[:, : dsp.HOP_LEN], dsp.OLA_DENOM_FLOOR)
    out48 = np.empty(BLOCK_SAMPLES, dtype=np.float64)
    out48.reshape(dsp.HOP_LEN, 3)[...] = chunk16.T
    state.ready = np.concatenate([state.ready, out48])
    return _emit(state, state.samples_in)


def enhance_streaming(model, audio: dsp.AudioBuffer) -> dsp.AudioBuffer:
    """Block-wise enhancement of a whole buffer through the streaming path."""
    if audio.sample_rate != dsp.FULLBAND_RATE:
        raise ShapeMismatchError("streaming input must be 48 kHz")
    if audio.length == 0:
        raise EmptyInputError("empty input")
    state = stream_create(model)
    pieces = []
    for lo in range(0, audio.length, BLOCK_SAMPLES):
        pieces.append(stream_push(state, audio.samples[lo : lo + BLOCK_SAMPLES]))
    pieces.append(stream_flush(state))
    return dsp.AudioBuffer(np.concatenate(pieces), dsp.FULLBAND_RATE)


def measure_rtf(model, seconds: float = 2.0, seed: int = 0,
                warmup_frames: int = 10) -> LatencyReport:
    """Wall-clock cost per 10 ms hop on synthetic audio (monotonic clock,
    first ``warmup_frames`` pushes discarded)."""
    rng = np.random.default_rng(seed)
    n_blocks = max(int(math.ceil(seconds * 1000.0 / HOP_MS)), warmup_frames + 2)
    state = stream_create(model)
    times = []
    for _ in range(n_blocks):
        block = rng.uniform(-0.3, 0.3, BLOCK_SAMPLES)
        t0 = time.perf_counter()
        stream_push(state, block)
        times.append(time.perf_counter() - t0)
    kept = times[warmup_frames:]
    per_frame_ms = 1000.0 * float(np.mean(kept))
    frames = state.frames_done
    stage_ms = {name: 1000.0 * total / max(frames, 1) for name, total in state.timers.items()}
    return LatencyReport(per_frame_compute_ms=per_frame_ms,
                         rtf=per_frame_ms / HOP_MS,
                         frames_measured=n_blocks,
                         stage_ms=stage_ms)
