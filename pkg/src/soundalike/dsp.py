"""Spectral feature kernels: STFT, Mel filterbanks, log-Mel, MFCC, PCA.

All functions are pure; nothing here keeps state. The STFT uses fully
interior frames (no padding, no centering) so frame counts and contents
are exactly reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidRange, NotEnoughData, ShapeMismatch, SignalTooShort
from .audio import Waveform

FFT_SIZE = 2048
HOP = FFT_SIZE // 2
N_MELS = 128
F_MIN = 20.0
LOG_EPS = 1e-6


@dataclass(frozen=True)
class Spectrogram:
    """Time-major magnitude frames, (n_frames, fft_size // 2 + 1)."""

    frames: np.ndarray
    fft_size: int
    hop: int
    sample_rate: int


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray  # (n_mels, n_bins), nonnegative
    f_min: float
    f_max: float


@dataclass(frozen=True)
class LogMelSpectrogram:
    frames: np.ndarray  # (n_frames, n_mels)
    n_mels: int


def hann_periodic(size: int) -> np.ndarray:
    """Periodic Hann window: sums exactly to 1.0 at 50% overlap."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(size) / size)


def frame_count(n_samples: int, fft_size: int, hop: int) -> int:
    return (n_samples - fft_size) // hop + 1


def stft(wave: Waveform, fft_size: int = FFT_SIZE, hop: int = HOP) -> Spectrogram:
    """Magnitude STFT with a periodic Hann window, interior frames only."""
    x = np.asarray(wave.samples, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeMismatch("stft expects mono audio")
    if len(x) < fft_size:
        raise SignalTooShort(
            "signal of %d samples shorter than FFT size %d" % (len(x), fft_size)
        )
    n_frames = frame_count(len(x), fft_size, hop)
    window = hann_periodic(fft_size)
    strided = np.lib.stride_tricks.sliding_window_view(x, fft_size)[::hop][:n_frames]
    spec = np.abs(np.fft.rfft(strided * window, axis=1))
    return Spectrogram(frames=spec, fft_size=fft_size, hop=hop, sample_rate=wave.sample_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_mels: int, fft_size: int = FFT_SIZE, sample_rate: int = 16000, f_min: float = F_MIN
) -> MelFilterbank:
    """Triangular filters equally spaced on the Mel scale from f_min to Nyquist."""
    nyquist = sample_rate / 2.0
    if n_mels < 1:
        raise InvalidRange("n_mels must be >= 1")
    if f_min >= nyquist:
        raise InvalidRange("f_min %.1f Hz not below Nyquist %.1f Hz" % (f_min, nyquist))

    n_bins = fft_size // 2 + 1
    bin_freqs = np.arange(n_bins) * sample_rate / fft_size
    mel_pts = np.linspace(hz_to_mel(f_min), hz_to_mel(nyquist), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)

    weights = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, center, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        rising = (bin_freqs - lo) / max(center - lo, 1e-12)
        falling = (hi - bin_freqs) / max(hi - center, 1e-12)
        weights[m] = np.clip(np.minimum(rising, falling), 0.0, None)
        if weights[m].sum() == 0.0:
            # Narrow filter fell between bins; place unit weight on the nearest.
            weights[m, int(round(center * fft_size / sample_rate))] = 1.0
    return MelFilterbank(weights=weights, f_min=float(f_min), f_max=nyquist)


def log_mel(spec: Spectrogram, fb: MelFilterbank) -> LogMelSpectrogram:
    """Log-scaled Mel energies: log(W @ |frame| + eps) per frame."""
    n_bins = spec.fft_size // 2 + 1
    if fb.weights.shape[1] != n_bins:
        raise ShapeMismatch(
            "filterbank has %d bins, spectrogram %d" % (fb.weights.shape[1], n_bins)
        )
    mel = spec.frames @ fb.weights.T
    return LogMelSpectrogram(frames=np.log(mel + LOG_EPS), n_mels=fb.weights.shape[0])


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal type-II DCT matrix, (n, n); row k dotted with a frame gives c_k."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    mat = np.cos(np.pi * (i + 0.5) * k / n) * np.sqrt(2.0 / n)
    mat[0] /= np.sqrt(2.0)
    return mat


def mfcc(logmel: LogMelSpectrogram, n_coeffs: int = 20) -> np.ndarray:
    """Per-frame orthonormal DCT-II of the log-Mel frame, truncated to n_coeffs."""
    if n_coeffs > logmel.n_mels:
        raise InvalidRange(
            "requested %d coefficients from %d Mel bands" % (n_coeffs, logmel.n_mels)
        )
    mat = dct_matrix(logmel.n_mels)[:n_coeffs]
    return logmel.frames @ mat.T


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray               # (d,)
    components: np.ndarray         # (k, d), orthonormal rows
    explained_variance: np.ndarray  # (k,), descending


def pca_fit(vectors: np.ndarray, k: int) -> PcaModel:
    """Exact top-k PCA of the sample covariance.

    Sign convention: the largest-magnitude element of each component is
    positive, so fits are deterministic across BLAS implementations.
    """
    x = np.asarray(vectors, dtype=np.float64)
    n, d = x.shape
    if k > d:
        raise InvalidRange("k=%d exceeds dimension %d" % (k, d))
    if n <= k:
        raise NotEnoughData("need more than %d samples to fit %d components" % (k, k))

    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:k]
    components = eigvecs[:, order].T
    variances = np.clip(eigvals[order], 0.0, None)
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(mean=mean, components=components, explained_variance=variances)


def pca_transform(model: PcaModel, v: np.ndarray) -> np.ndarray:
    """Project one vector (or a stack of them) onto the fitted components."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != model.mean.shape[0]:
        raise ShapeMismatch(
            "vector dimension %d != model dimension %d" % (v.shape[-1], model.mean.shape[0])
        )
    return (v - model.mean) @ model.components.T
