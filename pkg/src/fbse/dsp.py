"""Deterministic signal math: polyphase split, STFT/ISTFT, power-law compression.

A 48 kHz signal is split into three interleaved 16 kHz sub-channels
(``sub[j][m] = x[3*m + j]``) and restored by the exact inverse interleave.
Each sub-channel is analyzed with a 20 ms / 10 ms-hop Hamming STFT; synthesis
is weighted overlap-add with per-sample window-energy normalization.
Complex spectra can be moved between the linear domain and a magnitude-
compressed domain ``|S|^c * exp(i*arg(S))``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DomainError,
    EmptyInputError,
    InvalidExponentError,
    InvalidSampleRateError,
    ShapeMismatchError,
)

FULLBAND_RATE = 48000
SUBBAND_RATE = 16000
NUM_SUBCHANNELS = 3

WIN_LEN = 320          # 20 ms at 16 kHz
HOP_LEN = 160          # 10 ms at 16 kHz
FFT_LEN = 320
NUM_BINS = FFT_LEN // 2 + 1

#: output delay inherent to framing: analysis window + one synthesis hop,
#: expressed in 48 kHz samples (30 ms).
LATENCY_SAMPLES_48K = 3 * (WIN_LEN + HOP_LEN)

ZERO_MAG_FLOOR = 1e-12
OLA_DENOM_FLOOR = 1e-8

LINEAR = "linear"
COMPRESSED = "compressed"


@dataclass
class AudioBuffer:
    """Mono PCM samples (nominally in [-1, 1]) plus their sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ShapeMismatchError(f"expected mono 1-D samples, got shape {self.samples.shape}")
        if self.sample_rate not in (SUBBAND_RATE, FULLBAND_RATE):
            raise InvalidSampleRateError(f"unsupported sample rate {self.sample_rate}")

    @property
    def length(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return self.length / self.sample_rate


@dataclass
class SubChannelBank:
    """Three phase-aligned 16 kHz sub-channels of one 48 kHz signal."""

    channels: tuple
    origin_length: int

    def __post_init__(self):
        if len(self.channels) != NUM_SUBCHANNELS:
            raise ShapeMismatchError(f"expected {NUM_SUBCHANNELS} channels, got {len(self.channels)}")
        lengths = {ch.length for ch in self.channels}
        if len(lengths) != 1:
            raise ShapeMismatchError(f"sub-channel lengths differ: {sorted(lengths)}")
        for ch in self.channels:
            if ch.sample_rate != SUBBAND_RATE:
                raise InvalidSampleRateError("sub-channels must be 16 kHz")

    @property
    def channel_length(self) -> int:
        return self.channels[0].length


@dataclass
class WindowSpec:
    """Analysis/synthesis framing: periodic Hamming, 320/160/320 by default."""

    kind: str = "hamming"
    win_len: int = WIN_LEN
    hop_len: int = HOP_LEN
    fft_len: int = FFT_LEN

    def __post_init__(self):
        if self.kind != "hamming":
            raise ValueError(f"unsupported window kind {self.kind!r}")
        if self.hop_len > self.win_len or self.fft_len < self.win_len:
            raise ValueError("need hop_len <= win_len <= fft_len")

    @property
    def bins(self) -> int:
        return self.fft_len // 2 + 1

    def window(self) -> np.ndarray:
        # periodic variant: denominator N instead of N-1
        n = np.arange(self.win_len)
        return 0.54 - 0.46 * np.cos(2.0 * np.pi * n / self.win_len)


@dataclass
class ComplexSpectrum:
    """Frames x bins complex spectrum stored as separate real/imag planes."""

    real: np.ndarray
    imag: np.ndarray
    domain: str = LINEAR
    exponent: float | None = None
    window: WindowSpec = field(default_factory=WindowSpec)

    def __post_init__(self):
        self.real = np.asarray(self.real, dtype=np.float64)
        self.imag = np.asarray(self.imag, dtype=np.float64)
        if self.real.shape != self.imag.shape:
            raise ShapeMismatchError(f"real {self.real.shape} vs imag {self.imag.shape}")
        if self.real.ndim != 2 or self.real.shape[1] != self.window.bins:
            raise ShapeMismatchError(
                f"expected (frames, {self.window.bins}) planes, got {self.real.shape}")
        if self.domain not in (LINEAR, COMPRESSED):
            raise DomainError(f"unknown domain {self.domain!r}")
        if self.domain == COMPRESSED and self.exponent is None:
            raise DomainError("compressed spectrum needs its exponent")

    @property
    def frames(self) -> int:
        return self.real.shape[0]

    @property
    def bins(self) -> int:
        return self.real.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.real, self.imag)


def extract(x: AudioBuffer) -> SubChannelBank:
    """Split a 48 kHz signal into 3 interleaved 16 kHz sub-channels.

    The input is zero-padded to a multiple of 3 so that
    ``channels[j].samples[m] == x.samples[3*m + j]`` holds exactly;
    ``origin_length`` records the pre-padding length so interpolation can
    undo the padding bit-exactly.
    """
    if x.sample_rate != FULLBAND_RATE:
        raise InvalidSampleRateError(f"extract needs 48 kHz input, got {x.sample_rate}")
    n = x.length
    sub_len = -(-n // 3)  # ceil
    padded = np.zeros(3 * sub_len, dtype=np.float64)
    padded[:n] = x.samples
    lanes = padded.reshape(sub_len, 3)
    channels = tuple(
        AudioBuffer(lanes[:, j].copy(), SUBBAND_RATE) for j in range(NUM_SUBCHANNELS)
    )
    return SubChannelBank(channels, origin_length=n)


def interpolate(bank: SubChannelBank) -> AudioBuffer:
    """Re-interleave 3 sub-channels into a 48 kHz signal (exact inverse of extract)."""
    sub_len = bank.channel_length
    out = np.empty((sub_len, 3), dtype=np.float64)
    for j, ch in enumerate(bank.channels):
        out[:, j] = ch.samples
    flat = out.reshape(-1)[: bank.origin_length]
    return AudioBuffer(flat.copy(), FULLBAND_RATE)


def frame_count(n_samples: int, w: WindowSpec | None = None) -> int:
    """Number of analysis frames once the tail is zero-padded to the frame grid."""
    w = w or WindowSpec()
    if n_samples <= 0:
        raise EmptyInputError("cannot frame an empty signal")
    if n_samples <= w.win_len:
        return 1
    return 1 + -(-(n_samples - w.win_len) // w.hop_len)


def padded_length(n_samples: int, w: WindowSpec | None = None) -> int:
    w = w or WindowSpec()
    return w.win_len + (frame_count(n_samples, w) - 1) * w.hop_len


def stft(x: AudioBuffer, w: WindowSpec | None = None) -> ComplexSpectrum:
    """Hamming-window short-time transform of a 16 kHz signal.

    The tail is zero-padded so the last frame is complete; frame ``t`` covers
    samples ``[t*hop, t*hop + win)``.
    """
    w = w or WindowSpec()
    if x.sample_rate != SUBBAND_RATE:
        raise InvalidSampleRateError(f"stft needs 16 kHz input, got {x.sample_rate}")
    if x.length == 0:
        raise EmptyInputError("stft of empty signal")
    total = padded_length(x.length, w)
    sig = np.zeros(total, dtype=np.float64)
    sig[: x.length] = x.samples
    frames = np.lib.stride_tricks.sliding_window_view(sig, w.win_len)[:: w.hop_len]
    spec = np.fft.rfft(frames * w.window()[None, :], n=w.fft_len, axis=1)
    return ComplexSpectrum(spec.real.copy(), spec.imag.copy(), LINEAR, window=w)


def istft(spec: ComplexSpectrum, length: int | None = None) -> AudioBuffer:
    """Weighted overlap-add synthesis with per-sample window-energy normalization.

    Returns the full frame-grid signal unless ``length`` truncates it.
    """
    if spec.domain != LINEAR:
        raise DomainError("istft needs a linear-domain spectrum; decompress first")
    w = spec.window
    win = w.window()
    total = w.win_len + (spec.frames - 1) * w.hop_len
    num = np.zeros(total, dtype=np.float64)
    den = np.zeros(total, dtype=np.float64)
    segs = np.fft.irfft(spec.real + 1j * spec.imag, n=w.fft_len, axis=1)[:, : w.win_len]
    segs = segs * win[None, :]
    wsq = win * win
    for t in range(spec.frames):
        lo = t * w.hop_len
        num[lo : lo + w.win_len] += segs[t]
        den[lo : lo + w.win_len] += wsq
    out = num / np.maximum(den, OLA_DENOM_FLOOR)
    if length is not None:
        out = out[:length]
    return AudioBuffer(out, SUBBAND_RATE)


def _compressed_planes(real, imag, c):
    """Return (real, imag) scaled so magnitude becomes |.|**c, phase kept."""
    mag = np.hypot(real, imag)
    scale = np.zeros_like(mag)
    nz = mag > ZERO_MAG_FLOOR
    scale[nz] = mag[nz] ** (c - 1.0)
    return real * scale, imag * scale


def compress(spec: ComplexSpectrum, c: float) -> ComplexSpectrum:
    """Power-law compress a linear spectrum: magnitude -> magnitude**c.

    Phase is preserved exactly; bins with magnitude below ``ZERO_MAG_FLOOR``
    map to exactly zero (avoids the 0/0 in the phase-keeping ratio).
    """
    if not 0.0 < c <= 1.0:
        raise InvalidExponentError(f"compression exponent must be in (0, 1], got {c}")
    if spec.domain != LINEAR:
        raise DomainError("compress expects a linear-domain spectrum")
    r, i = _compressed_planes(spec.real, spec.imag, c)
    return ComplexSpectrum(r, i, COMPRESSED, exponent=c, window=spec.window)


def decompress(spec: ComplexSpectrum, c: float) -> ComplexSpectrum:
    """Inverse of :func:`compress`: magnitude -> magnitude**(1/c)."""
    if not 0.0 < c <= 1.0:
        raise InvalidExponentError(f"compression exponent must be in (0, 1], got {c}")
    if spec.domain != COMPRESSED:
        raise DomainError("decompress expects a compressed-domain spectrum")
    if spec.exponent is not None and abs(spec.exponent - c) > 1e-12:
        raise DomainError(f"spectrum was compressed with c={spec.exponent}, asked to invert c={c}")
    r, i = _compressed_planes(spec.real, spec.imag, 1.0 / c)
    return ComplexSpectrum(r, i, LINEAR, window=spec.window)
