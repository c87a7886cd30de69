"""F0-subband front-end: STFT, log power spectrum, band slicing, frame fixing and F0 analysis."""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

SAMPLE_RATE = 16000
WINDOW_LENGTH = 1728
HOP_LENGTH = 130
SUBBAND_BINS = 45
TARGET_FRAMES = 600
LOG_FLOOR = 1e-10

CACHE_MAGIC = b"F0SB"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sHII")


class FrontendError(ValueError):
    """Invalid input or configuration for a front-end operation."""


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise FrontendError(f"waveform must be 1-D, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise FrontendError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise FrontendError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    window_length: int = WINDOW_LENGTH
    hop_length: int = HOP_LENGTH
    window_kind: str = "blackman"

    def __post_init__(self):
        if not 0 < self.hop_length <= self.window_length:
            raise FrontendError(
                f"need 0 < hop_length <= window_length, got {self.hop_length}, {self.window_length}"
            )
        if self.window_kind not in _WINDOWS:
            raise FrontendError(f"unknown window kind {self.window_kind!r}")

    @property
    def n_bins(self) -> int:
        return self.window_length // 2 + 1

    def window(self) -> np.ndarray:
        return _WINDOWS[self.window_kind](self.window_length)


_WINDOWS = {
    "blackman": np.blackman,
    "hann": np.hanning,
    "rectangular": np.ones,
}


@dataclass(frozen=True)
class ComplexSpectrogram:
    real: np.ndarray
    imag: np.ndarray
    bin_hz: float

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise FrontendError("real and imaginary parts differ in shape")

    @property
    def shape(self) -> tuple[int, int]:
        return self.real.shape


@dataclass(frozen=True)
class LogPowerSpectrum:
    values: np.ndarray
    bin_hz: float
    band: tuple[int, int] = field(default=(0, 0))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class F0Track:
    f0_hz: np.ndarray
    frame_hop_s: float

    @property
    def voicing(self) -> np.ndarray:
        return self.f0_hz > 0

    @property
    def n_voiced(self) -> int:
        return int(np.count_nonzero(self.f0_hz))


def stft(w: Waveform, cfg: StftConfig = StftConfig()) -> ComplexSpectrogram:
    """Non-centred STFT; frame ``t`` starts at sample ``t * hop_length``.

    Returns an F x T spectrogram with ``F = window_length // 2 + 1`` and
    ``T = 1 + (len - window_length) // hop_length``.
    """
    n = len(w)
    if n < cfg.window_length:
        raise FrontendError(
            f"signal of {n} samples is shorter than one window ({cfg.window_length})"
        )
    frames = np.lib.stride_tricks.sliding_window_view(w.samples, cfg.window_length)
    frames = frames[:: cfg.hop_length] * cfg.window()
    spec = np.fft.rfft(frames, axis=1).T
    return ComplexSpectrogram(
        real=np.ascontiguousarray(spec.real),
        imag=np.ascontiguousarray(spec.imag),
        bin_hz=w.sample_rate / cfg.window_length,
    )


def log_power_spectrum(s: ComplexSpectrogram, floor: float = LOG_FLOOR) -> LogPowerSpectrum:
    if floor <= 0:
        raise FrontendError(f"log floor must be positive, got {floor}")
    magnitude = np.sqrt(s.real**2 + s.imag**2)
    values = np.log(np.maximum(magnitude, floor))
    return LogPowerSpectrum(values=values, bin_hz=s.bin_hz, band=(0, values.shape[0]))


def f0_subband(
    lps: LogPowerSpectrum,
    low_hz: float = 0.0,
    high_hz: float = 400.0,
    n_bins: int | None = SUBBAND_BINS,
) -> LogPowerSpectrum:
    """Slice the low-frequency band out of a full-band LPS.

    With ``n_bins`` set (the default, 45) the first ``n_bins`` rows above
    ``low_hz`` are kept and ``high_hz`` only bounds-checks the request.
    With ``n_bins=None`` the slice runs up to and including the bin that
    contains ``high_hz``.
    """
    full_bins = lps.values.shape[0]
    nyquist = lps.bin_hz * (full_bins - 1)
    if low_hz < 0 or high_hz <= low_hz:
        raise FrontendError(f"invalid band [{low_hz}, {high_hz}] Hz")
    if high_hz > nyquist + 1e-9:
        raise FrontendError(f"band edge {high_hz} Hz exceeds Nyquist ({nyquist} Hz)")
    lo = int(np.ceil(low_hz / lps.bin_hz - 1e-9))
    if n_bins is None:
        hi = min(int(np.floor(high_hz / lps.bin_hz + 1e-9)) + 1, full_bins)
    else:
        hi = lo + n_bins
        if hi > full_bins:
            raise FrontendError(f"{n_bins} bins from bin {lo} exceed the {full_bins} available")
    base = lps.band[0]
    return LogPowerSpectrum(
        values=lps.values[lo:hi], bin_hz=lps.bin_hz, band=(base + lo, base + hi)
    )


def fix_frames(lps: LogPowerSpectrum, target_frames: int = TARGET_FRAMES) -> LogPowerSpectrum:
    """Truncate to ``target_frames`` or cyclically repeat along time until long enough."""
    n_frames = lps.values.shape[1]
    if n_frames == 0:
        raise FrontendError("spectrogram has no frames")
    idx = np.arange(target_frames) % n_frames
    values = lps.values[:, :target_frames] if n_frames >= target_frames else lps.values[:, idx]
    return LogPowerSpectrum(values=values, bin_hz=lps.bin_hz, band=lps.band)


def extract_features(
    w: Waveform,
    cfg: StftConfig = StftConfig(),
    n_bins: int = SUBBAND_BINS,
    target_frames: int = TARGET_FRAMES,
    floor: float = LOG_FLOOR,
) -> np.ndarray:
    """Waveform -> float32 ``n_bins x target_frames`` F0-subband feature."""
    if w.sample_rate != SAMPLE_RATE:
        raise FrontendError(f"expected {SAMPLE_RATE} Hz audio, got {w.sample_rate} Hz")
    lps = log_power_spectrum(stft(w, cfg), floor)
    sub = f0_subband(lps, n_bins=n_bins)
    return fix_frames(sub, target_frames).values.astype(np.float32)


# F0 analysis


def estimate_f0(
    w: Waveform,
    frame_s: float = 0.025,
    hop_s: float = 0.010,
    search: tuple[float, float] = (50.0, 600.0),
    threshold: float = 0.15,
) -> F0Track:
    """YIN pitch tracker (cumulative-mean-normalised difference function).

    Each frame integrates over ``frame_s`` seconds and looks ahead by the
    longest searched period. Frames whose normalised difference never dips
    below ``threshold`` are unvoiced (f0 = 0). A dip found at a multiple of
    the period is moved back to the period when the dip there is within
    twice the threshold.
    """
    fmin, fmax = search
    if not 0 < fmin < fmax:
        raise FrontendError(f"invalid F0 search range {search}")
    sr = w.sample_rate
    win = int(round(frame_s * sr))
    hop = int(round(hop_s * sr))
    if len(w) < win:
        raise FrontendError(f"signal shorter than one {frame_s}s analysis frame")
    tau_min = max(2, int(np.floor(sr / fmax)))
    tau_max = int(np.ceil(sr / fmin))
    span = win + tau_max
    padded = np.concatenate([w.samples, np.zeros(span)])
    n_frames = 1 + (len(w) - win) // hop
    starts = np.arange(n_frames) * hop
    frames = padded[starts[:, None] + np.arange(span)]

    diff = _difference_function(frames, win, tau_max)
    cmnd = _cumulative_mean_normalise(diff)

    f0 = np.zeros(n_frames)
    for i in range(n_frames):
        tau = _first_dip(cmnd[i], tau_min, tau_max, threshold)
        if tau is None:
            continue
        shift = _parabolic_offset(cmnd[i], tau)
        hz = sr / (tau + shift)
        if fmin <= hz <= fmax:
            f0[i] = hz
    return F0Track(f0_hz=f0, frame_hop_s=hop / sr)


def _difference_function(frames: np.ndarray, win: int, tau_max: int) -> np.ndarray:
    # d(tau) = sum_{j<win} (x_j - x_{j+tau})^2 via FFT cross-correlation
    n_fft = 1 << int(np.ceil(np.log2(frames.shape[1] + win)))
    head = frames[:, :win]
    spec_full = np.fft.rfft(frames, n_fft)
    spec_head = np.fft.rfft(head, n_fft)
    corr = np.fft.irfft(np.conj(spec_head) * spec_full, n_fft)[:, : tau_max + 1]
    sq = np.cumsum(frames**2, axis=1)
    sq = np.concatenate([np.zeros((frames.shape[0], 1)), sq], axis=1)
    energy_head = sq[:, win][:, None]
    taus = np.arange(tau_max + 1)
    energy_lag = sq[:, taus + win] - sq[:, taus]
    return np.maximum(energy_head + energy_lag - 2 * corr, 0.0)


def _cumulative_mean_normalise(diff: np.ndarray) -> np.ndarray:
    cmnd = np.ones_like(diff)
    running = np.cumsum(diff[:, 1:], axis=1)
    taus = np.arange(1, diff.shape[1])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = diff[:, 1:] * taus / running
    cmnd[:, 1:] = np.where(running > 0, ratio, 1.0)
    return cmnd


def _first_dip(cmnd: np.ndarray, tau_min: int, tau_max: int, threshold: float) -> int | None:
    below = np.nonzero(cmnd[tau_min : tau_max + 1] < threshold)[0]
    if below.size == 0:
        return None
    tau = tau_min + int(below[0])
    while tau + 1 <= tau_max and cmnd[tau + 1] < cmnd[tau]:
        tau += 1
    # a dip at tau/k that only just missed the threshold is the true period
    for k in (4, 3, 2):
        lo, hi = int(tau / k) - 2, int(np.ceil(tau / k)) + 2
        if lo < tau_min:
            continue
        sub = lo + int(np.argmin(cmnd[lo : hi + 1]))
        if lo < sub < hi and cmnd[sub] < 2 * threshold:
            return sub
    return tau


def _parabolic_offset(y: np.ndarray, i: int) -> float:
    if i <= 0 or i >= len(y) - 1:
        return 0.0
    a, b, c = y[i - 1], y[i], y[i + 1]
    denom = a - 2 * b + c
    if denom <= 0:
        return 0.0
    return float(np.clip(0.5 * (a - c) / denom, -0.5, 0.5))


def f0_histogram(tracks: Iterable[F0Track], bin_width_hz: float = 10.0) -> Counter:
    """Count voiced frames per ``[k*w, (k+1)*w)`` bin, keyed by the bin's lower edge."""
    if bin_width_hz <= 0:
        raise FrontendError(f"bin width must be positive, got {bin_width_hz}")
    hist: Counter = Counter()
    for track in tracks:
        voiced = track.f0_hz[track.f0_hz > 0]
        idx, counts = np.unique(np.floor(voiced / bin_width_hz).astype(np.int64), return_counts=True)
        for k, c in zip(idx, counts):
            hist[float(k * bin_width_hz)] += int(c)
    return hist


# Feature cache


def write_feature(path: str | Path, feature: np.ndarray) -> None:
    feature = np.asarray(feature, dtype="<f4")
    if feature.ndim != 2:
        raise FrontendError(f"feature must be 2-D, got shape {feature.shape}")
    f, t = feature.shape
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, f, t))
        fh.write(np.ascontiguousarray(feature).tobytes())
    tmp.replace(path)


def read_feature(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _CACHE_HEADER.size:
        raise FrontendError(f"{path}: truncated feature record")
    magic, version, f, t = _CACHE_HEADER.unpack_from(raw)
    if magic != CACHE_MAGIC:
        raise FrontendError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise FrontendError(f"{path}: unsupported cache version {version}")
    expected = _CACHE_HEADER.size + 4 * f * t
    if len(raw) != expected:
        raise FrontendError(f"{path}: expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=_CACHE_HEADER.size).reshape(f, t).copy()


def feature_record_size(f: int = SUBBAND_BINS, t: int = TARGET_FRAMES) -> int:
    return _CACHE_HEADER.size + 4 * f * t
