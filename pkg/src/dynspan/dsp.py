"""Windowed STFT analysis/synthesis and 16 kHz mono WAV I/O.

Framing is strictly causal: no center padding, frame t covers samples
[160*t, 160*t + 320), so spectral frame t never sees audio past its own
window.  Synthesis is weighted overlap-add with the same periodic Hann
window, normalized by the summed squared window.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

SAMPLE_RATE = 16000
WINDOW_LEN = 320
FRAME_HOP = 160
DFT_SIZE = 320
NUM_BINS = DFT_SIZE // 2 + 1

# Periodic (DFT-even) Hann: exact constant overlap-add at 50% hop.
_HANN = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(WINDOW_LEN) / WINDOW_LEN))

# Synthesis floor for the summed squared window near the edges.
_WSUM_FLOOR = 1e-8


@dataclass
class Waveform:
    """Mono audio samples, nominal range [-1, 1], fixed 16 kHz rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"expected 1-D samples, got shape {self.samples.shape}")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"expected sample rate {SAMPLE_RATE}, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class ComplexSpectrogram:
    """Complex STFT as a real tensor (2, T, F): channel 0 real, channel 1 imag."""

    data: np.ndarray
    frame_hop: int = FRAME_HOP
    window_len: int = WINDOW_LEN
    dft_size: int = DFT_SIZE

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[0] != 2:
            raise ValueError(f"expected shape (2, T, F), got {self.data.shape}")
        if self.data.shape[2] != self.dft_size // 2 + 1:
            raise ValueError(
                f"expected F = {self.dft_size // 2 + 1} bins, got {self.data.shape[2]}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("spectrogram contains non-finite values")

    @property
    def num_frames(self) -> int:
        return self.data.shape[1]

    @property
    def num_bins(self) -> int:
        return self.data.shape[2]

    def as_complex(self) -> np.ndarray:
        """(T, F) complex view of the stored real/imag channels."""
        return self.data[0] + 1j * self.data[1]


def num_frames(num_samples: int) -> int:
    """Frame count for a signal of the given length: 1 + floor((L - 320)/160)."""
    if num_samples < WINDOW_LEN:
        return 0
    return 1 + (num_samples - WINDOW_LEN) // FRAME_HOP


def stft(w: Waveform) -> ComplexSpectrogram:
    """Analyze a waveform into a (2, T, 161) spectrogram.

    Hann-windowed 320-point DFT, 160-sample hop, no padding: only fully
    covered frames are emitted.  Raises ValueError for inputs shorter than
    one window.
    """
    x = w.samples
    if len(x) < WINDOW_LEN:
        raise ValueError(f"input too short: {len(x)} samples < window {WINDOW_LEN}")
    t_frames = num_frames(len(x))
    starts = FRAME_HOP * np.arange(t_frames)
    idx = starts[:, None] + np.arange(WINDOW_LEN)[None, :]
    frames = x[idx] * _HANN
    spec = np.fft.rfft(frames, n=DFT_SIZE, axis=1)
    data = np.stack([spec.real, spec.imag], axis=0)
    return ComplexSpectrogram(data)


def istft(spec: ComplexSpectrogram) -> Waveform:
    """Synthesize a waveform by weighted overlap-add.

    Applies the analysis Hann window again on synthesis and divides by the
    summed squared window (floored at 1e-8), so istft(stft(x)) reconstructs
    x exactly on the interior where the window sum is well conditioned.
    """
    t_frames = spec.num_frames
    if t_frames == 0:
        raise ValueError("empty spectrogram")
    frames = np.fft.irfft(spec.as_complex(), n=DFT_SIZE, axis=1)
    frames *= _HANN
    out_len = FRAME_HOP * (t_frames - 1) + WINDOW_LEN
    out = np.zeros(out_len)
    wsum = np.zeros(out_len)
    for t in range(t_frames):
        start = FRAME_HOP * t
        out[start:start + WINDOW_LEN] += frames[t]
        wsum[start:start + WINDOW_LEN] += _HANN * _HANN
    out /= np.maximum(wsum, _WSUM_FLOOR)
    return Waveform(out)


def read_wav(path) -> Waveform:
    """Read a 16-bit PCM mono 16 kHz WAV file; samples scaled by 1/32768."""
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise ValueError(f"expected mono WAV, got {f.getnchannels()} channels: {path}")
        if f.getsampwidth() != 2:
            raise ValueError(
                f"expected 16-bit PCM, got {8 * f.getsampwidth()}-bit: {path}"
            )
        if f.getframerate() != SAMPLE_RATE:
            raise ValueError(
                f"expected {SAMPLE_RATE} Hz, got {f.getframerate()} Hz: {path}"
            )
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples)


def write_wav(path, w: Waveform) -> None:
    """Write a waveform as 16-bit PCM mono 16 kHz; samples clamped to [-1, 1]."""
    clipped = np.clip(w.samples, -1.0, 1.0)
    quantized = np.clip(np.round(clipped * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(SAMPLE_RATE)
        f.writeframes(quantized.tobytes())
