"""EER, min t-DCF and per-attack breakdowns over countermeasure scores (higher = more bonafide)."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

KEYS = ("bonafide", "spoof")


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreRecord:
    utt_id: str
    key: str
    attack_id: str
    score: float

    def __post_init__(self):
        if self.key not in KEYS:
            raise MetricsError(f"{self.utt_id}: unknown key {self.key!r}")
        if (self.key == "bonafide") != (self.attack_id == "-"):
            raise MetricsError(f"{self.utt_id}: key {self.key} inconsistent with attack {self.attack_id!r}")


@dataclass(frozen=True)
class TdcfParams:
    """Cost model of a CM cascaded with a fixed ASV system.

    The ASV error rates describe the ASV system at its operating threshold
    and must come from the user's ASV scores; the defaults here are
    placeholders so the metric is computable out of the box.
    """

    pi_spoof: float = 0.05
    pi_tar: float = 0.95 * 0.99
    pi_non: float = 0.95 * 0.01
    c_miss_asv: float = 1.0
    c_fa_asv: float = 10.0
    c_miss_cm: float = 1.0
    c_fa_cm: float = 10.0
    p_miss_asv: float = 0.0243
    p_fa_asv: float = 0.0243
    p_miss_spoof_asv: float = 0.3

    def __post_init__(self):
        priors = (self.pi_tar, self.pi_non, self.pi_spoof)
        if any(p < 0 for p in priors) or abs(sum(priors) - 1.0) > 1e-9:
            raise MetricsError(f"priors must be non-negative and sum to 1, got {priors}")
        for name in ("p_miss_asv", "p_fa_asv", "p_miss_spoof_asv"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise MetricsError(f"{name} must lie in [0, 1]")
        for name in ("c_miss_asv", "c_fa_asv", "c_miss_cm", "c_fa_cm"):
            if getattr(self, name) < 0:
                raise MetricsError(f"{name} must be non-negative")

    @property
    def c1(self) -> float:
        return self.pi_tar * (self.c_miss_cm - self.c_miss_asv * self.p_miss_asv) - self.pi_non * self.c_fa_asv * self.p_fa_asv

    @property
    def c2(self) -> float:
        return self.c_fa_cm * self.pi_spoof * (1 - self.p_miss_spoof_asv)

    @classmethod
    def from_file(cls, path: str | Path) -> "TdcfParams":
        """Read ``key=value`` lines; ``#`` starts a comment."""
        known = set(cls.__dataclass_fields__)
        values = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise MetricsError(f"{path}:{lineno}: expected key=value")
            k, v = (s.strip() for s in line.split("=", 1))
            if k not in known:
                raise MetricsError(f"{path}:{lineno}: unknown parameter {k!r}")
            try:
                values[k] = float(v)
            except ValueError:
                raise MetricsError(f"{path}:{lineno}: {v!r} is not a number") from None
        return cls(**values)

    def to_text(self) -> str:
        return "".join(f"{k}={v!r}\n" for k, v in asdict(self).items())


def _split(records: Iterable[ScoreRecord]) -> tuple[np.ndarray, np.ndarray]:
    bona, spoof = [], []
    for r in records:
        (bona if r.key == "bonafide" else spoof).append(r.score)
    if not bona or not spoof:
        raise MetricsError("need at least one bonafide and one spoof score")
    return np.asarray(bona, dtype=np.float64), np.asarray(spoof, dtype=np.float64)


def error_curves(bona: np.ndarray, spoof: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Miss (FRR) and false-alarm (FAR) rates for accept-if ``score >= threshold``.

    Thresholds are the sorted unique scores followed by ``+inf``; the first
    point therefore accepts everything and the last rejects everything.
    """
    thresholds = np.unique(np.concatenate([bona, spoof]))
    bona_sorted = np.sort(bona)
    spoof_sorted = np.sort(spoof)
    frr = np.searchsorted(bona_sorted, thresholds, side="left") / bona.size
    far = 1.0 - np.searchsorted(spoof_sorted, thresholds, side="left") / spoof.size
    return (
        np.append(frr, 1.0),
        np.append(far, 0.0),
        np.append(thresholds, np.inf),
    )


def eer_from_scores(bona: np.ndarray, spoof: np.ndarray) -> tuple[float, float]:
    frr, far, thr = error_curves(np.asarray(bona, float), np.asarray(spoof, float))
    d = frr - far  # -1 at the first point, +1 at the last, non-decreasing
    j = int(np.argmax(d >= 0))
    if d[j] == 0:
        return float(frr[j]), float(thr[j])
    i = j - 1
    t = d[i] / (d[i] - d[j])
    eer = far[i] + t * (far[j] - far[i])
    hi = thr[j] if np.isfinite(thr[j]) else thr[i]
    return float(eer), float(thr[i] + t * (hi - thr[i]))


def compute_eer(records: Sequence[ScoreRecord]) -> tuple[float, float]:
    """Equal error rate and the threshold where it occurs.

    Linear interpolation between the two adjacent operating points where
    FRR - FAR changes sign; an exact crossing is returned as is.
    """
    return eer_from_scores(*_split(records))


def tdcf_curve(bona: np.ndarray, spoof: np.ndarray, params: TdcfParams) -> tuple[np.ndarray, np.ndarray]:
    c1, c2 = params.c1, params.c2
    if c1 <= 0 or c2 <= 0:
        raise MetricsError(f"degenerate t-DCF parameters: C1={c1}, C2={c2}")
    frr, far, thr = error_curves(bona, spoof)
    return (c1 * frr + c2 * far) / min(c1, c2), thr


def compute_min_tdcf(records: Sequence[ScoreRecord], params: TdcfParams = TdcfParams()) -> float:
    bona, spoof = _split(records)
    return float(tdcf_curve(bona, spoof, params)[0].min())


def per_attack_eer(records: Sequence[ScoreRecord], attacks: Iterable[str] | None = None) -> dict[str, float]:
    """EER of the full bonafide set against each attack's spoofs.

    ``attacks`` names the buckets expected; any with no records is skipped
    with a warning.
    """
    bona = [r for r in records if r.key == "bonafide"]
    if not bona:
        raise MetricsError("per-attack EER needs bonafide records")
    buckets: dict[str, list[ScoreRecord]] = {}
    for r in records:
        if r.key == "spoof":
            buckets.setdefault(r.attack_id, []).append(r)
    out = {}
    for attack in sorted(set(buckets) | set(attacks or ())):
        if attack not in buckets:
            log.warning("attack %s has no spoof records; omitted", attack)
            continue
        out[attack] = compute_eer(bona + buckets[attack])[0]
    return out


@dataclass
class EvalResult:
    eer: float
    threshold: float
    min_tdcf: float
    per_attack: dict[str, float] = field(default_factory=dict)
    n_bonafide: int = 0
    n_spoof: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_table(self) -> str:
        lines = [
            f"bonafide utterances  {self.n_bonafide}",
            f"spoof utterances     {self.n_spoof}",
            f"EER                  {100 * self.eer:.4f} %",
            f"EER threshold        {self.threshold:.6f}",
            f"min t-DCF            {self.min_tdcf:.6f}",
        ]
        if self.per_attack:
            lines.append("")
            lines.append(f"{'attack':<10}{'EER (%)':>10}")
            lines.extend(f"{a:<10}{100 * e:>10.4f}" for a, e in self.per_attack.items())
        return "\n".join(lines) + "\n"


def evaluate(records: Sequence[ScoreRecord], params: TdcfParams = TdcfParams()) -> EvalResult:
    eer, thr = compute_eer(records)
    n_bona = sum(r.key == "bonafide" for r in records)
    return EvalResult(
        eer=eer,
        threshold=thr,
        min_tdcf=compute_min_tdcf(records, params),
        per_attack=per_attack_eer(records),
        n_bonafide=n_bona,
        n_spoof=len(records) - n_bona,
    )


def det_points_csv(records: Sequence[ScoreRecord]) -> str:
    frr, far, thr = error_curves(*_split(records))
    rows = ["threshold,frr,far"]
    rows += [f"{float(t)!r},{float(m)!r},{float(f)!r}" for t, m, f in zip(thr, frr, far)]
    return "\n".join(rows) + "\n"


# Score files


def read_scores(path: str | Path) -> list[ScoreRecord]:
    """Parse ``UTT_ID ATTACK_ID KEY SCORE`` lines."""
    records = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 4:
            raise MetricsError(f"{path}:{lineno}: expected 4 fields, found {len(parts)}")
        utt, attack, key, score = parts
        try:
            value = float(score)
        except ValueError:
            raise MetricsError(f"{path}:{lineno}: bad score {score!r}") from None
        try:
            records.append(ScoreRecord(utt, key, attack, value))
        except MetricsError as e:
            raise MetricsError(f"{path}:{lineno}: {e}") from None
    return records


def write_scores(path: str | Path, records: Iterable[ScoreRecord]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(f"{r.utt_id} {r.attack_id} {r.key} {float(r.score)!r}\n")
