"""Waveform container and WAV (RIFF) file I/O.

Supports the two encodings the engine reads and writes: 16-bit PCM and
32-bit IEEE float, little-endian, 1 or 2 channels. Everything downstream
works on mono float64 arrays in [-1, 1].
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.signal import firwin, upfirdn

from .errors import EmptySignal, UnsupportedRate, WavFormatError

ENGINE_RATE = 16000
CLIP_SECONDS = 10.0
CLIP_SAMPLES = int(CLIP_SECONDS * ENGINE_RATE)

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3


@dataclass(frozen=True)
class Waveform:
    """Mono or multi-channel audio. samples is (n,) or (n, channels) float64."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise WavFormatError("sample rate must be positive, got %r" % (self.sample_rate,))
        if not np.all(np.isfinite(self.samples)):
            raise WavFormatError("waveform contains non-finite samples")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def n_channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


def _parse_riff_chunks(data: bytes):
    """Walk the RIFF chunk list, yielding (chunk id, payload offset, size)."""
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError("not a RIFF/WAVE file")
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        yield cid, pos + 8, size
        pos += 8 + size + (size & 1)  # chunks are word-aligned


def read_wav(path) -> Waveform:
    """Read a 16-bit PCM or 32-bit float WAV file (path or binary file object).

    Raises WavFormatError for anything malformed or outside the supported
    encodings (compressed formats, >2 channels, truncated data).
    """
    if hasattr(path, "read"):
        data = path.read()
    else:
        with open(path, "rb") as f:
            data = f.read()

    fmt = None
    audio = None
    for cid, off, size in _parse_riff_chunks(data):
        if off + size > len(data):
            raise WavFormatError("truncated chunk %r in %s" % (cid, path))
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError("fmt chunk too small")
            fmt = struct.unpack_from("<HHIIHH", data, off)
        elif cid == b"data":
            audio = data[off:off + size]
    if fmt is None or audio is None:
        raise WavFormatError("missing fmt or data chunk in %s" % (path,))

    tag, channels, rate, _byte_rate, block_align, bits = fmt
    if channels not in (1, 2):
        raise WavFormatError("unsupported channel count %d" % channels)
    if tag == _WAVE_FORMAT_PCM and bits == 16:
        raw = np.frombuffer(audio[: len(audio) - len(audio) % (2 * channels)], dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        raw = np.frombuffer(audio[: len(audio) - len(audio) % (4 * channels)], dtype="<f4")
        samples = raw.astype(np.float64)
    else:
        raise WavFormatError("unsupported encoding (format tag %d, %d bits)" % (tag, bits))

    if channels == 2:
        samples = samples.reshape(-1, 2)
    if samples.shape[0] == 0:
        raise WavFormatError("WAV file has no samples: %s" % (path,))
    return Waveform(samples=samples, sample_rate=rate)


def probe_wav(path) -> tuple[int, int, int]:
    """Return (sample_rate, n_frames, channels) reading only the header chunks."""
    with open(path, "rb") as f:
        head = f.read(65536)
    fmt = None
    data_size = None
    for cid, off, size in _parse_riff_chunks(head):
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError("fmt chunk too small")
            fmt = struct.unpack_from("<HHIIHH", head, off)
        elif cid == b"data":
            data_size = size
            break
    if fmt is None or data_size is None:
        raise WavFormatError("missing fmt or data chunk in %s" % (path,))
    _tag, channels, rate, _byte_rate, block_align, _bits = fmt
    if block_align == 0:
        raise WavFormatError("zero block alignment")
    return rate, data_size // block_align, channels


def write_wav(path, wave: Waveform, encoding: str = "int16") -> None:
    """Write a WAV file; encoding is 'int16' or 'float32'."""
    samples = np.asarray(wave.samples)
    channels = 1 if samples.ndim == 1 else samples.shape[1]
    frames = samples.reshape(samples.shape[0], channels)

    if encoding == "int16":
        scaled = np.clip(np.round(frames * 32767.0), -32768, 32767).astype("<i2")
        payload = scaled.tobytes()
        tag, bits = _WAVE_FORMAT_PCM, 16
    elif encoding == "float32":
        payload = frames.astype("<f4").tobytes()
        tag, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        raise ValueError("unknown encoding %r" % (encoding,))

    block_align = channels * bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, tag, channels, wave.sample_rate,
        wave.sample_rate * block_align, block_align, bits,
        b"data", len(payload),
    )
    if hasattr(path, "write"):
        path.write(header)
        path.write(payload)
    else:
        with open(path, "wb") as f:
            f.write(header)
            f.write(payload)


def to_mono(wave: Waveform) -> Waveform:
    if wave.samples.ndim == 1:
        return wave
    return Waveform(samples=wave.samples.mean(axis=1), sample_rate=wave.sample_rate)


def _rational_resample(x: np.ndarray, up: int, down: int) -> np.ndarray:
    """Polyphase resample by up/down with a windowed-sinc anti-alias filter.

    Cutoff sits at 0.9x the narrower of the two Nyquist limits, so both
    decimation aliasing and interpolation images are suppressed.
    """
    if up == down:
        return x.copy()
    n_out = int(math.ceil(len(x) * up / down))
    half = 10 * max(up, down)
    cutoff = 0.9 * min(1.0 / up, 1.0 / down)
    h = firwin(2 * half + 1, cutoff, window=("kaiser", 5.0)) * up
    # Pad the filter front so the group delay lands on an output sample,
    # then drop exactly that many leading outputs.
    n_pre = (down - half % down) % down
    h = np.concatenate([np.zeros(n_pre), h])
    skip = (half + n_pre) // down
    y = upfirdn(h, x, up=up, down=down)
    y = y[skip:skip + n_out]
    if len(y) < n_out:
        y = np.concatenate([y, np.zeros(n_out - len(y))])
    return y


def resample_to_mono(wave: Waveform, target_rate: int) -> Waveform:
    """Average channels to mono and downsample to target_rate.

    Upsampling is not supported: the engine only ever normalizes catalogs
    down to 16 kHz.
    """
    if wave.n_samples == 0:
        raise EmptySignal("cannot resample an empty waveform")
    if target_rate > wave.sample_rate:
        raise UnsupportedRate(
            "upsampling %d Hz -> %d Hz not supported" % (wave.sample_rate, target_rate)
        )
    mono = to_mono(wave)
    if target_rate == wave.sample_rate:
        return mono
    ratio = Fraction(target_rate, wave.sample_rate)
    out = _rational_resample(mono.samples, ratio.numerator, ratio.denominator)
    return Waveform(samples=out, sample_rate=target_rate)


def resample_by_ratio(x: np.ndarray, n_out: int) -> np.ndarray:
    """Resample a mono signal to exactly n_out samples (speed change).

    Used by the pitch shifter to map a stretched signal back onto the
    original clip length; both directions are needed here.
    """
    if len(x) == 0 or n_out <= 0:
        return np.zeros(n_out)
    ratio = Fraction(n_out, len(x)).limit_denominator(1000)
    y = _rational_resample(x, ratio.numerator, ratio.denominator)
    if len(y) >= n_out:
        return y[:n_out]
    return np.concatenate([y, np.zeros(n_out - len(y))])
