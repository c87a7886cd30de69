"""WAV and ASVspoof protocol I/O, plus a synthetic bonafide/spoof corpus for desk-scale runs."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.io import wavfile

from . import frontend
from .frontend import SAMPLE_RATE, Waveform

log = logging.getLogger(__name__)

KEYS = ("bonafide", "spoof")
PROTOCOL_NAME = "protocol.txt"
WAV_DIR = "wav"


class DataError(ValueError):
    """Malformed or unsupported input data."""


def read_wav(path: str | Path, sample_rate: int = SAMPLE_RATE) -> Waveform:
    """Read a mono 16-bit PCM or 32-bit float WAV at ``sample_rate``.

    16-bit samples are scaled by 1/32768. Anything else (other rates,
    stereo, other codecs) is rejected rather than converted.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    try:
        sr, data = wavfile.read(path)
    except ValueError as e:
        raise DataError(f"{path}: unreadable WAV ({e})") from None
    if sr != sample_rate:
        raise DataError(f"{path}: sample rate {sr} Hz, expected {sample_rate} Hz (no resampling)")
    if data.ndim != 1:
        raise DataError(f"{path}: {data.shape[1]} channels, expected mono")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype}; use 16-bit PCM or float32")
    if samples.size == 0:
        raise DataError(f"{path}: no samples")
    if not np.all(np.isfinite(samples)):
        raise DataError(f"{path}: non-finite samples")
    return Waveform(samples, sr)


def write_wav(path: str | Path, w: Waveform) -> None:
    """Write 16-bit PCM; samples are rounded to the nearest 1/32768 step."""
    q = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype(np.int16)
    wavfile.write(Path(path), w.sample_rate, q)


@dataclass(frozen=True)
class ProtocolEntry:
    speaker_id: str
    utt_id: str
    system_id: str
    key: str

    def __post_init__(self):
        if self.key not in KEYS:
            raise DataError(f"unknown key {self.key!r}")
        if (self.key == "bonafide") != (self.system_id == "-"):
            raise DataError(f"{self.utt_id}: key {self.key} inconsistent with system {self.system_id!r}")

    def line(self) -> str:
        return f"{self.speaker_id} {self.utt_id} - {self.system_id} {self.key}"


def parse_protocol(path: str | Path) -> list[ProtocolEntry]:
    """Parse ``SPEAKER UTT_ID - SYSTEM_ID KEY`` lines (blank lines ignored)."""
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 5:
            raise DataError(f"{path}:{lineno}: expected 5 fields, found {len(parts)}")
        speaker, utt, _, system, key = parts
        try:
            entries.append(ProtocolEntry(speaker, utt, system, key))
        except DataError as e:
            raise DataError(f"{path}:{lineno}: {e}") from None
    return entries


def write_protocol(path: str | Path, entries: Iterable[ProtocolEntry]) -> None:
    Path(path).write_text("".join(e.line() + "\n" for e in entries))


def key_counts(entries: Iterable[ProtocolEntry]) -> Counter:
    counts = Counter({k: 0 for k in KEYS})
    counts.update(e.key for e in entries)
    return counts


# Synthetic corpus
#
# Both classes are harmonic tones with the same spectral tilt, syllabic
# amplitude envelope, noise level and F0 range; they differ only in the
# F0 contour. Bonafide items carry vibrato plus declination, spoof items
# hold F0 flat. Flat F0 is a stand-in for "prosody a generator failed to
# reproduce", not a model of any real attack.

SPOOF_SYSTEMS = ("S01", "S02")


@dataclass(frozen=True)
class SynthSpec:
    n_bonafide: int
    n_spoof: int
    duration_s: float = 27000 / SAMPLE_RATE
    seed: int = 0

    def __post_init__(self):
        if self.n_bonafide < 1 or self.n_spoof < 1:
            raise DataError("synthetic corpus needs at least one item per class")
        if self.duration_s < 0.5:
            raise DataError("synthetic utterances must last at least 0.5 s")


def f0_contour(key: str, n: int, rng: np.random.Generator, sr: int = SAMPLE_RATE) -> np.ndarray:
    """Per-sample F0 in Hz; bonafide contours stay inside [100, 300]."""
    base = rng.uniform(140.0, 260.0)
    if key == "spoof":
        return np.full(n, base)
    t = np.arange(n) / sr
    rate = rng.uniform(4.0, 7.0)
    extent = rng.uniform(8.0, 15.0)
    drop = rng.uniform(10.0, 25.0)
    phase = rng.uniform(0, 2 * np.pi)
    decl = drop * (1 - 2 * t / t[-1])
    return base + decl + extent * np.sin(2 * np.pi * rate * t + phase)


def synth_utterance(
    key: str, system: str, n: int, rng: np.random.Generator, sr: int = SAMPLE_RATE
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(samples, f0_contour)`` for one synthetic item."""
    f0 = f0_contour(key, n, rng, sr)
    t = np.arange(n) / sr
    phase = 2 * np.pi * np.cumsum(f0) / sr
    tilt = rng.uniform(0.8, 1.4)
    if system == "S02":
        tilt += 0.3
    n_harm = int(4000 // f0.max())
    x = np.zeros(n)
    for h in range(1, n_harm + 1):
        x += h**-tilt * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    env = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(2.0, 5.0) * t + rng.uniform(0, 2 * np.pi))
    x *= env
    snr_db = rng.uniform(15.0, 25.0)
    noise = rng.standard_normal(n) * np.sqrt(np.mean(x**2) / 10 ** (snr_db / 10))
    x += noise
    x *= rng.uniform(0.3, 0.9) / np.max(np.abs(x))
    return x, f0


def generate_synthetic_dataset(
    spec: SynthSpec, out_dir: str | Path, prefix: str = "SYN"
) -> list[ProtocolEntry]:
    """Write ``<out_dir>/wav/*.wav`` and ``<out_dir>/protocol.txt``; deterministic in ``spec.seed``."""
    out_dir = Path(out_dir)
    wav_dir = out_dir / WAV_DIR
    try:
        wav_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create {wav_dir}: {e}") from e
    n = int(round(spec.duration_s * SAMPLE_RATE))
    plan = [("bonafide", "-")] * spec.n_bonafide + [
        ("spoof", SPOOF_SYSTEMS[i % len(SPOOF_SYSTEMS)]) for i in range(spec.n_spoof)
    ]
    seeds = np.random.SeedSequence(spec.seed).spawn(len(plan))
    entries = []
    for i, ((key, system), ss) in enumerate(zip(plan, seeds)):
        rng = np.random.default_rng(ss)
        samples, _ = synth_utterance(key, system, n, rng)
        utt = f"{prefix}_{i:05d}"
        speaker = f"{prefix}_SPK{int(rng.integers(0, 20)):02d}"
        write_wav(wav_dir / f"{utt}.wav", Waveform(samples))
        entries.append(ProtocolEntry(speaker, utt, system, key))
    write_protocol(out_dir / PROTOCOL_NAME, entries)
    log.info("wrote %d synthetic utterances to %s", len(entries), out_dir)
    return entries


SPLIT_PREFIX = {"train": "SYN_T", "dev": "SYN_D", "eval": "SYN_E"}


def generate_splits(
    out_dir: str | Path,
    sizes: dict[str, tuple[int, int]],
    seed: int,
    duration_s: float = 27000 / SAMPLE_RATE,
) -> dict[str, Path]:
    """Generate one synthetic corpus per split under ``out_dir/<split>``.

    ``sizes`` maps split name to ``(n_bonafide, n_spoof)``. Split seeds are
    derived from ``seed`` so no two splits share an utterance.
    """
    out_dir = Path(out_dir)
    paths = {}
    for k, (split, (nb, ns)) in enumerate(sizes.items()):
        split_seed = int(np.random.SeedSequence([seed, k]).generate_state(1)[0])
        generate_synthetic_dataset(
            SynthSpec(nb, ns, duration_s, split_seed), out_dir / split, SPLIT_PREFIX.get(split, split.upper())
        )
        paths[split] = out_dir / split
    return paths


# Feature cache orchestration

FEATURE_SUFFIX = ".f0sb"


def feature_path(feature_dir: str | Path, utt_id: str) -> Path:
    return Path(feature_dir) / f"{utt_id}{FEATURE_SUFFIX}"


def _is_current(cache: Path, wav: Path) -> bool:
    """A cache record is reused when it has the expected size and is not older than its WAV."""
    try:
        st = cache.stat()
    except FileNotFoundError:
        return False
    return st.st_size == frontend.feature_record_size() and st.st_mtime >= wav.stat().st_mtime


@dataclass
class ExtractReport:
    written: list[str]
    skipped: list[str]
    failed: dict[str, str]

    def summary(self) -> str:
        return f"extracted {len(self.written)}, skipped {len(self.skipped)} cached, failed {len(self.failed)}"


def _extract_one(utt: str, wav_dir: Path, feature_dir: Path, cfg: frontend.StftConfig) -> tuple[str, str, str]:
    wav = Path(wav_dir) / f"{utt}.wav"
    cache = feature_path(feature_dir, utt)
    try:
        if _is_current(cache, wav):
            return utt, "skipped", ""
        feat = frontend.extract_features(read_wav(wav), cfg)
        frontend.write_feature(cache, feat)
        return utt, "written", ""
    except (DataError, frontend.FrontendError, OSError) as e:
        return utt, "failed", str(e)


def extract_corpus(
    entries: Iterable[ProtocolEntry],
    wav_dir: str | Path,
    feature_dir: str | Path,
    cfg: frontend.StftConfig = frontend.StftConfig(),
    threads: int = 1,
) -> ExtractReport:
    """Compute the cached 45x600 feature of every protocol entry.

    Utterances are independent, so ``threads > 1`` fans them out over a
    thread pool; the output does not depend on the thread count.
    """
    feature_dir = Path(feature_dir)
    feature_dir.mkdir(parents=True, exist_ok=True)
    utts = [e.utt_id for e in entries]
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(lambda u: _extract_one(u, Path(wav_dir), feature_dir, cfg), utts))
    else:
        results = [_extract_one(u, Path(wav_dir), feature_dir, cfg) for u in utts]
    report = ExtractReport([], [], {})
    for utt, status, msg in results:
        if status == "failed":
            report.failed[utt] = msg
        else:
            getattr(report, status).append(utt)
    return report


@dataclass
class FeatureSet:
    """Cached features of one protocol, in protocol order."""

    features: np.ndarray  # [N, F, T] float32
    labels: np.ndarray  # 0 bonafide, 1 spoof
    entries: list[ProtocolEntry]

    def __len__(self):
        return len(self.entries)

    @classmethod
    def load(cls, entries: list[ProtocolEntry], feature_dir: str | Path) -> "FeatureSet":
        if not entries:
            raise DataError("empty protocol")
        feats = []
        for e in entries:
            path = feature_path(feature_dir, e.utt_id)
            if not path.is_file():
                raise DataError(f"no cached feature for {e.utt_id} in {feature_dir}")
            feats.append(frontend.read_feature(path))
        labels = np.array([0 if e.key == "bonafide" else 1 for e in entries], dtype=np.int64)
        return cls(np.stack(feats), labels, list(entries))
