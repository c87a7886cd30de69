"""``f0spoof`` command line: synth, extract, train, score, evaluate, pitch-hist.

Exit codes: 0 success, 1 data error, 2 configuration error, 3 numeric abort.
Set ``F0SPOOF_LOG`` (DEBUG, INFO, WARNING, ...) to change log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path


from . import dataio, frontend
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .frontend import FrontendError, StftConfig
from .metrics import MetricsError, ScoreRecord, TdcfParams, det_points_csv, evaluate, read_scores, write_scores
from .model import VARIANTS, ModelConfig
from .tensor import ConfigError
from .train import NumericError, OptimizerConfig, TrainConfigError, configure_determinism, run_meta, score, train

log = logging.getLogger("f0spoof")

EXIT_OK, EXIT_DATA, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    """Bad flag combination or missing path; maps to exit code 2."""


def _echo_config(out_dir: Path, command: str, args: argparse.Namespace, **resolved) -> None:
    """Write ``config.<command>.json`` with the flags and the resolved configuration objects."""
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    blob = {"command": command, "flags": flags, **resolved}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"config.{command}.json").write_text(json.dumps(blob, indent=2, sort_keys=True) + "\n")


def _need_file(path: Path | None, flag: str) -> Path:
    if path is None:
        raise UsageError(f"{flag} is required")
    if not path.is_file():
        raise dataio.DataError(f"{flag} {path}: no such file")
    return path


def _need_dir(path: Path | None, flag: str) -> Path:
    if path is None:
        raise UsageError(f"{flag} is required")
    if not path.is_dir():
        raise dataio.DataError(f"{flag} {path}: no such directory")
    return path


def _stft_config(args) -> StftConfig:
    try:
        return StftConfig(args.window_length, args.hop_length, args.window)
    except FrontendError as e:
        raise UsageError(str(e)) from None


# Commands


def cmd_synth(args) -> int:
    spec = dataio.SynthSpec(args.bonafide, args.spoof, args.duration, args.seed)
    entries = dataio.generate_synthetic_dataset(spec, args.out, args.prefix)
    _echo_config(args.out, "synth", args, synth=asdict(spec))
    counts = dataio.key_counts(entries)
    print(f"wrote {len(entries)} utterances ({counts['bonafide']} bonafide, {counts['spoof']} spoof) to {args.out}")
    return EXIT_OK


def cmd_extract(args) -> int:
    entries = dataio.parse_protocol(_need_file(args.protocol, "--protocol"))
    wav_dir = _need_dir(args.wav_dir, "--wav-dir")
    if args.feature_dir is None:
        raise UsageError("--feature-dir is required")
    cfg = _stft_config(args)
    _echo_config(args.feature_dir, "extract", args, stft=asdict(cfg))
    report = dataio.extract_corpus(entries, wav_dir, args.feature_dir, cfg, threads=args.threads)
    print(report.summary())
    for utt, msg in report.failed.items():
        print(f"FAILED {utt}: {msg}", file=sys.stderr)
    return EXIT_DATA if report.failed else EXIT_OK


def _model_config(args) -> ModelConfig:
    kw = {"variant": args.variant, "scale": args.scale}
    if args.channels:
        try:
            kw["stage_channels"] = tuple(int(c) for c in args.channels.split(","))
        except ValueError:
            raise UsageError(f"--channels expects 5 comma-separated integers, got {args.channels!r}") from None
    return ModelConfig(**kw)


def cmd_train(args) -> int:
    train_entries = dataio.parse_protocol(_need_file(args.protocol, "--protocol"))
    dev_entries = dataio.parse_protocol(_need_file(args.dev_protocol, "--dev-protocol"))
    feature_dir = _need_dir(args.feature_dir, "--feature-dir")
    if args.checkpoint is None:
        raise UsageError("--checkpoint is required")
    model_cfg = _model_config(args)
    opt_cfg = OptimizerConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch,
        seed=args.seed,
        balanced=args.balanced,
    )
    configure_determinism(args.deterministic, args.threads)
    out_dir = args.checkpoint.parent
    _echo_config(out_dir, "train", args, model=model_cfg.to_dict(), optimizer=asdict(opt_cfg))

    train_set = dataio.FeatureSet.load(train_entries, feature_dir)
    dev_set = dataio.FeatureSet.load(dev_entries, feature_dir)
    log_path = args.checkpoint.with_suffix(".log")
    result = train(train_set, dev_set, model_cfg, opt_cfg, log_path)
    save_checkpoint(args.checkpoint, result.model, run_meta(opt_cfg, result), result.optimizer_state)
    print(f"best epoch {result.best_epoch} dev EER {100 * result.best_dev_eer:.4f} %; checkpoint {args.checkpoint}")
    return EXIT_OK


def cmd_score(args) -> int:
    entries = dataio.parse_protocol(_need_file(args.protocol, "--protocol"))
    feature_dir = _need_dir(args.feature_dir, "--feature-dir")
    ckpt = _need_file(args.checkpoint, "--checkpoint")
    if args.scores is None:
        raise UsageError("--scores is required")
    configure_determinism(args.deterministic, args.threads)
    model, meta, _ = load_checkpoint(ckpt)
    _echo_config(args.scores.parent, "score", args, model=meta["model"])
    data = dataio.FeatureSet.load(entries, feature_dir)
    s = score(model, data)
    records = [ScoreRecord(e.utt_id, e.key, e.system_id, float(v)) for e, v in zip(entries, s)]
    write_scores(args.scores, records)
    print(f"scored {len(records)} utterances -> {args.scores}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    records = read_scores(_need_file(args.scores, "--scores"))
    params = TdcfParams.from_file(_need_file(args.tdcf_params, "--tdcf-params")) if args.tdcf_params else TdcfParams()
    out_dir = args.out or args.scores.parent
    res = evaluate(records, params)
    _echo_config(out_dir, "evaluate", args, tdcf=asdict(params))
    (out_dir / "report.txt").write_text(res.to_table())
    (out_dir / "report.json").write_text(res.to_json() + "\n")
    (out_dir / "det.csv").write_text(det_points_csv(records))
    sys.stdout.write(res.to_table())
    return EXIT_OK


def cmd_pitch_hist(args) -> int:
    entries = dataio.parse_protocol(_need_file(args.protocol, "--protocol"))
    wav_dir = _need_dir(args.wav_dir, "--wav-dir")
    if args.key != "all":
        entries = [e for e in entries if e.key == args.key]
    if not entries:
        raise dataio.DataError(f"no {args.key} utterances in {args.protocol}")
    tracks = [frontend.estimate_f0(dataio.read_wav(wav_dir / f"{e.utt_id}.wav")) for e in entries]
    hist = frontend.f0_histogram(tracks, args.bin_width)
    total = sum(hist.values())
    rows = ["bin_low_hz,bin_high_hz,count,fraction"]
    for edge in sorted(hist):
        frac = hist[edge] / total if total else 0.0
        rows.append(f"{edge:g},{edge + args.bin_width:g},{hist[edge]},{frac:.6f}")
    out = args.out or Path("pitch_hist.csv")
    _echo_config(out.parent, "pitch-hist", args)
    out.write_text("\n".join(rows) + "\n")
    voiced = sum(t.n_voiced for t in tracks)
    frames = sum(t.f0_hz.size for t in tracks)
    print(f"{len(tracks)} utterances, {voiced}/{frames} voiced frames -> {out}")
    return EXIT_OK


# Parser


def _add_stft_flags(p):
    g = p.add_argument_group("STFT")
    g.add_argument("--window-length", type=int, default=frontend.WINDOW_LENGTH)
    g.add_argument("--hop-length", type=int, default=frontend.HOP_LENGTH)
    g.add_argument("--window", choices=("blackman", "hann", "rectangular"), default="blackman")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="f0spoof", description="F0-subband SR-LA Res2Net spoofing countermeasure")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic bonafide/spoof corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--bonafide", type=int, default=100)
    p.add_argument("--spoof", type=int, default=100)
    p.add_argument("--duration", type=float, default=27000 / frontend.SAMPLE_RATE, help="seconds per utterance")
    p.add_argument("--prefix", default="SYN")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="compute cached 45x600 F0-subband features")
    p.add_argument("--protocol", type=Path)
    p.add_argument("--wav-dir", type=Path)
    p.add_argument("--feature-dir", type=Path)
    p.add_argument("--threads", type=int, default=1)
    _add_stft_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a countermeasure, keeping the best dev-EER epoch")
    p.add_argument("--protocol", type=Path, help="training protocol")
    p.add_argument("--dev-protocol", type=Path)
    p.add_argument("--feature-dir", type=Path)
    p.add_argument("--checkpoint", type=Path, help="output checkpoint; the log goes next to it as .log")
    p.add_argument("--variant", choices=VARIANTS, default="sr-la")
    p.add_argument("--scale", type=int, default=8)
    p.add_argument("--channels", help="5 comma-separated stage widths, e.g. 16,32,64,128,256")
    p.add_argument("--epochs", type=int, default=32)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--balanced", action="store_true", help="class-balanced sampling")
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="write CM scores for a protocol")
    p.add_argument("--protocol", type=Path)
    p.add_argument("--feature-dir", type=Path)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--scores", type=Path)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="EER, min t-DCF and per-attack EER of a score file")
    p.add_argument("--scores", type=Path)
    p.add_argument("--tdcf-params", type=Path)
    p.add_argument("--out", type=Path, help="report directory (default: next to the score file)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pitch-hist", help="F0 histogram of a corpus as CSV")
    p.add_argument("--protocol", type=Path)
    p.add_argument("--wav-dir", type=Path)
    p.add_argument("--key", choices=("bonafide", "spoof", "all"), default="bonafide")
    p.add_argument("--bin-width", type=float, default=10.0)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_pitch_hist)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("F0SPOOF_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as e:
        print(f"error: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, TrainConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (dataio.DataError, FrontendError, MetricsError, CheckpointError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
