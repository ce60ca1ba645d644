"""WAV reader/writer round trips and format rejection."""

import numpy as np
import pytest
from scipy.io import wavfile

from fbse import audio_io
from fbse.dsp import AudioBuffer
from fbse.errors import AudioFormatError, InvalidSampleRateError


def test_float32_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    buf = AudioBuffer(rng.uniform(-1, 1, 4800), 48000)
    path = tmp_path / "a.wav"
    audio_io.write_wav(path, buf, fmt="float32")
    back = audio_io.read_wav(path)
    assert back.sample_rate == 48000
    np.testing.assert_allclose(back.samples, buf.samples, atol=1e-7)


def test_pcm16_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    buf = AudioBuffer(rng.uniform(-0.9, 0.9, 1600), 16000)
    path = tmp_path / "b.wav"
    audio_io.write_wav(path, buf, fmt="pcm16")
    back = audio_io.read_wav(path)
    assert back.sample_rate == 16000
    np.testing.assert_allclose(back.samples, buf.samples, atol=1.0 / 32768)


def test_multichannel_rejected(tmp_path):
    path = tmp_path / "stereo.wav"
    wavfile.write(path, 48000, np.zeros((100, 2), dtype=np.float32))
    with pytest.raises(AudioFormatError):
        audio_io.read_wav(path)


def test_unsupported_dtype_rejected(tmp_path):
    path = tmp_path / "u8.wav"
    wavfile.write(path, 48000, np.zeros(100, dtype=np.uint8))
    with pytest.raises(AudioFormatError):
        audio_io.read_wav(path)


def test_garbage_file_rejected(tmp_path):
    path = tmp_path / "junk.wav"
    path.write_bytes(b"this is not RIFF data")
    with pytest.raises(AudioFormatError):
        audio_io.read_wav(path)


def test_odd_sample_rate_rejected(tmp_path):
    path = tmp_path / "odd.wav"
    wavfile.write(path, 44100, np.zeros(100, dtype=np.float32))
    with pytest.raises(InvalidSampleRateError):
        audio_io.read_wav(path)
