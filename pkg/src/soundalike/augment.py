"""Stochastic musical-effects chain used to manufacture positive pairs.

Effects run in a fixed order: time shift, time stretch, pitch shift,
reverb, additive noise. Time stretch and pitch shift share a phase
vocoder; reverb is frequency-domain convolution with exponentially
decaying white noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .audio import CLIP_SAMPLES, Waveform, resample_by_ratio
from .dsp import hann_periodic
from .errors import InvalidConfig, InvalidDecay, InvalidFactor, InvalidShift

PV_FFT = 2048
PV_HOP = 512

EFFECT_NAMES = ("time_shift", "time_stretch", "pitch_shift", "reverb", "add_noise")


@dataclass(frozen=True)
class EffectChainConfig:
    """Enable probabilities and parameter ranges for each effect."""

    p_time_shift: float = 0.5
    p_time_stretch: float = 0.5
    p_pitch_shift: float = 0.5
    p_reverb: float = 0.5
    p_add_noise: float = 0.5
    time_shift_max: float = 5.0                       # seconds
    stretch_range: tuple = (0.8, 1.25)                # factor > 1 = faster/shorter
    pitch_range: tuple = (-2.0, 2.0)                  # semitones
    reverb_decay_range: tuple = (0.1, 1.0)            # seconds
    reverb_wet_range: tuple = (0.1, 0.5)
    noise_sigma_range: tuple = (0.001, 0.01)          # amplitude
    noise_truncation: float = 2.0                     # multiples of sigma

    def validate(self):
        for name in EFFECT_NAMES:
            p = getattr(self, "p_" + name)
            if not 0.0 <= p <= 1.0:
                raise InvalidConfig("p_%s=%r not a probability" % (name, p))
        for name in ("stretch_range", "pitch_range", "reverb_decay_range",
                     "reverb_wet_range", "noise_sigma_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise InvalidConfig("%s has min > max" % name)
        if self.stretch_range[0] <= 0:
            raise InvalidConfig("stretch factors must be positive")
        return self


@dataclass(frozen=True)
class EffectChainSample:
    """One concrete draw of the chain: which effects fire, with what settings."""

    enabled: dict = field(default_factory=dict)   # effect name -> bool
    params: dict = field(default_factory=dict)    # effect name -> drawn values
    rng_seed: int = 0


def sample_chain(config: EffectChainConfig, rng: np.random.Generator) -> EffectChainSample:
    """Draw enable flags and parameters; deterministic for a seeded generator.

    Every effect consumes the same number of variates whether or not it is
    enabled, so two samples from the same stream stay aligned.
    """
    config.validate()
    enabled = {}
    params = {}

    enabled["time_shift"] = rng.random() < config.p_time_shift
    params["time_shift"] = rng.uniform(-config.time_shift_max, config.time_shift_max)

    enabled["time_stretch"] = rng.random() < config.p_time_stretch
    params["time_stretch"] = rng.uniform(*config.stretch_range)

    enabled["pitch_shift"] = rng.random() < config.p_pitch_shift
    params["pitch_shift"] = rng.uniform(*config.pitch_range)

    enabled["reverb"] = rng.random() < config.p_reverb
    params["reverb"] = {
        "decay": rng.uniform(*config.reverb_decay_range),
        "wet": rng.uniform(*config.reverb_wet_range),
        "seed": int(rng.integers(0, 2**63 - 1)),
    }

    enabled["add_noise"] = rng.random() < config.p_add_noise
    params["add_noise"] = {
        "sigma": rng.uniform(*config.noise_sigma_range),
        "truncation": config.noise_truncation,
        "seed": int(rng.integers(0, 2**63 - 1)),
    }
    return EffectChainSample(enabled=enabled, params=params,
                             rng_seed=int(rng.integers(0, 2**63 - 1)))


def time_shift(wave: Waveform, shift: float) -> Waveform:
    """Circular rotation by round(shift * sample_rate) samples."""
    if abs(shift) >= wave.duration:
        raise InvalidShift("shift %.3f s exceeds clip duration %.3f s" % (shift, wave.duration))
    k = int(round(shift * wave.sample_rate))
    return Waveform(samples=np.roll(wave.samples, k), sample_rate=wave.sample_rate)


def _stft_frames(x: np.ndarray, fft_size: int, hop: int) -> np.ndarray:
    window = hann_periodic(fft_size)
    n_frames = (len(x) - fft_size) // hop + 1
    strided = np.lib.stride_tricks.sliding_window_view(x, fft_size)[::hop][:n_frames]
    return np.fft.rfft(strided * window, axis=1)


def _istft(frames: np.ndarray, fft_size: int, hop: int) -> np.ndarray:
    window = hann_periodic(fft_size)
    n_frames = frames.shape[0]
    out_len = (n_frames - 1) * hop + fft_size
    y = np.zeros(out_len)
    wsum = np.zeros(out_len)
    chunks = np.fft.irfft(frames, n=fft_size, axis=1) * window
    for t in range(n_frames):
        start = t * hop
        y[start:start + fft_size] += chunks[t]
        wsum[start:start + fft_size] += window ** 2
    good = wsum > 1e-8
    y[good] /= wsum[good]
    return y


def time_stretch(wave: Waveform, factor: float) -> Waveform:
    """Phase-vocoder stretch: output duration = input duration / factor.

    factor > 1 speeds the clip up. Pitch content is preserved by
    propagating per-bin phase at the synthesis hop.
    """
    if not 0.25 < factor < 4.0:
        raise InvalidFactor("stretch factor %.3f outside (0.25, 4.0)" % factor)
    x = np.asarray(wave.samples, dtype=np.float64)
    if len(x) < PV_FFT + PV_HOP:
        raise InvalidFactor("clip too short to stretch")

    spec = _stft_frames(x, PV_FFT, PV_HOP)
    n_frames, n_bins = spec.shape
    steps = np.arange(0.0, n_frames, factor)

    omega = 2.0 * np.pi * PV_HOP * np.arange(n_bins) / PV_FFT
    out = np.zeros((len(steps), n_bins), dtype=np.complex128)
    phase = np.angle(spec[0])
    mags = np.abs(spec)
    angles = np.angle(spec)

    for t, step in enumerate(steps):
        lo = int(np.floor(step))
        hi = min(lo + 1, n_frames - 1)
        frac = step - lo
        mag = (1.0 - frac) * mags[lo] + frac * mags[hi]
        out[t] = mag * np.exp(1j * phase)
        dphi = angles[hi] - angles[lo] - omega
        dphi -= 2.0 * np.pi * np.round(dphi / (2.0 * np.pi))
        phase = phase + omega + dphi

    return Waveform(samples=_istft(out, PV_FFT, PV_HOP), sample_rate=wave.sample_rate)


def pitch_shift(wave: Waveform, semitones: float) -> Waveform:
    """Scale all frequencies by 2^(semitones/12), keeping duration.

    Realized as a time stretch by 2^(-semitones/12) followed by resampling
    back to the original length.
    """
    if not -12.0 <= semitones <= 12.0:
        raise InvalidShift("pitch shift %.2f semitones outside [-12, 12]" % semitones)
    if semitones == 0.0:
        return Waveform(samples=np.asarray(wave.samples, dtype=np.float64).copy(),
                        sample_rate=wave.sample_rate)
    stretched = time_stretch(wave, 2.0 ** (-semitones / 12.0))
    out = resample_by_ratio(stretched.samples, wave.n_samples)
    return Waveform(samples=out, sample_rate=wave.sample_rate)


def reverb(wave: Waveform, decay: float, wet: float, rng: np.random.Generator) -> Waveform:
    """Convolve with exponentially decaying white noise, mixed at `wet`.

    The impulse response is w(t) * exp(-t/decay) with w ~ N(0, 1), length
    min(4*decay, clip length). Convolution runs in the frequency domain;
    the result is truncated to the input length and peak-normalized back
    to the input peak.
    """
    if decay <= 0:
        raise InvalidDecay("decay must be positive, got %r" % (decay,))
    x = np.asarray(wave.samples, dtype=np.float64)
    if wet == 0.0:
        return Waveform(samples=x.copy(), sample_rate=wave.sample_rate)

    n = len(x)
    h_len = min(int(round(4.0 * decay * wave.sample_rate)), n)
    h_len = max(h_len, 1)
    t = np.arange(h_len) / wave.sample_rate
    h = rng.standard_normal(h_len) * np.exp(-t / decay)

    fft_len = scipy.fft.next_fast_len(n + h_len - 1)
    conv = np.fft.irfft(np.fft.rfft(x, fft_len) * np.fft.rfft(h, fft_len), fft_len)[:n]
    peak_conv = np.max(np.abs(conv))
    if peak_conv > 0:
        conv = conv / peak_conv

    y = (1.0 - wet) * x + wet * conv
    peak_in = np.max(np.abs(x))
    peak_out = np.max(np.abs(y))
    if peak_out > 0 and peak_in > 0:
        y = y * (peak_in / peak_out)
    return Waveform(samples=y, sample_rate=wave.sample_rate)


def add_noise(wave: Waveform, sigma: float, truncation: float,
              rng: np.random.Generator) -> Waveform:
    """Add i.i.d. Gaussian noise rejected outside +-truncation*sigma."""
    x = np.asarray(wave.samples, dtype=np.float64)
    if sigma == 0.0:
        return Waveform(samples=x.copy(), sample_rate=wave.sample_rate)
    noise = rng.standard_normal(len(x))
    bad = np.abs(noise) > truncation
    while np.any(bad):
        noise[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(noise) > truncation
    return Waveform(samples=x + sigma * noise, sample_rate=wave.sample_rate)


def fit_length(x: np.ndarray, n: int) -> np.ndarray:
    """Crop from the start or zero-pad at the end to exactly n samples."""
    if len(x) >= n:
        return x[:n]
    return np.concatenate([x, np.zeros(n - len(x))])


def apply_chain(wave: Waveform, sample: EffectChainSample) -> Waveform:
    """Apply the drawn effects in fixed order; output is exactly clip-sized."""
    out = wave
    if sample.enabled.get("time_shift"):
        out = time_shift(out, sample.params["time_shift"])
    if sample.enabled.get("time_stretch"):
        out = time_stretch(out, sample.params["time_stretch"])
    if sample.enabled.get("pitch_shift"):
        out = pitch_shift(out, sample.params["pitch_shift"])
    if sample.enabled.get("reverb"):
        p = sample.params["reverb"]
        out = reverb(out, p["decay"], p["wet"], np.random.default_rng(p["seed"]))
    if sample.enabled.get("add_noise"):
        p = sample.params["add_noise"]
        out = add_noise(out, p["sigma"], p["truncation"], np.random.default_rng(p["seed"]))
    return Waveform(samples=fit_length(np.asarray(out.samples, dtype=np.float64), CLIP_SAMPLES),
                    sample_rate=wave.sample_rate)
