"""Command-line front end: ``ecogsleep <command> ...``.

Commands
--------
features   recording -> feature CSV (+ calibration sidecar)
markup     recording -> wavelet hypnogram
train      features + hypnogram -> model JSON
classify   recording or features + model -> hypnogram (+ probabilities)
evaluate   two hypnograms -> metrics JSON
average    model JSONs -> averaged model JSON
synth      spec JSON -> recording + hypnogram
stream     raw float32 frames on stdin -> ``time_s,probability,label`` lines

Exit status is 0 on success, 1 for usage errors and 2 for data errors.
Any option can also be given in a ``--config`` JSON file, either at top
level or inside a section named after the command; flags on the command
line take precedence.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import DataError
from .ingest import (
    align_hypnograms,
    load_hypnogram,
    load_recording,
    save_hypnogram,
    save_recording,
)
from .metrics import disagreements, report
from .model import (
    TrainConfig,
    align_labels,
    average_models,
    classify,
    load_model,
    parse_channel_set,
    predict_proba,
    pretrained,
    save_model,
    train,
)
from .preprocess import (
    DEFAULT_STRIDE_S,
    DEFAULT_WINDOW_S,
    FEATURE_MODES,
    LITERAL,
    Calibration,
    extract_features,
    load_features,
    save_features,
)
from .streaming import StreamingClassifier
from .synth import SynthSpec, generate
from .wavelet import (
    CHANNEL_MODES,
    DEFAULT_BANDS_HZ,
    DEFAULT_COMPARISON_WINDOW_S,
    DEFAULT_OFFSET_PCT,
    DEFAULT_ONSET_PCT,
    FUSION_RULES,
    ThresholdConfig,
    markup_bs_ws,
)

logger = logging.getLogger("ecogsleep")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _parse_bands(text) -> list[tuple[float, float]]:
    if not isinstance(text, str):
        return [tuple(map(float, b)) for b in text]
    bands = []
    for part in text.split(","):
        lo, sep, hi = part.strip().partition("-")
        if not sep:
            raise UsageError(f"band {part!r} must look like LO-HI")
        bands.append((float(lo), float(hi)))
    return bands


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, [])]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise UsageError(f"{args.command}: missing required option(s) {flags}")


def _load_rec(args):
    return load_recording(args.input, format=args.format, sampling_rate_hz=args.rate)


def _model_from(args):
    if (args.model is None) == (args.pretrained is None):
        raise UsageError(f"{args.command}: give exactly one of --model or --pretrained")
    if args.pretrained is not None:
        return pretrained(parse_channel_set(args.pretrained))
    return load_model(args.model)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_features(args) -> int:
    _require(args, "input", "output")
    rec = _load_rec(args)
    calib = Calibration.load(args.calibration) if args.calibration else None
    fs, calib = extract_features(rec, args.window_s, args.stride_s, args.feature_mode, calib)
    save_features(fs, args.output, calibration=calib)
    if args.calibration_out:
        calib.save(args.calibration_out)
    logger.info("wrote %d windows x %d channels to %s", fs.n_windows, len(fs.channel_ids), args.output)
    return EXIT_OK


def cmd_markup(args) -> int:
    _require(args, "input", "output")
    rec = _load_rec(args)
    bands = _parse_bands(args.bands)
    thresholds = None
    if args.thresholds:
        spec = json.loads(Path(args.thresholds).read_text())
        thresholds = [ThresholdConfig(float(t["tr1"]), float(t["tr2"]), args.comparison_window_s)
                      for t in spec]
    hyp, centres, energy, used = markup_bs_ws(
        rec, bands, thresholds, args.stride_s,
        comparison_window_s=args.comparison_window_s,
        onset_pct=args.onset_pct, offset_pct=args.offset_pct,
        fusion=args.fusion, channel_mode=args.channel_mode,
        return_energy=True,
    )
    save_hypnogram(hyp, args.output)
    if args.energy_out:
        names = [f"{lo:g}-{hi:g}" for lo, hi in bands]
        if args.channel_mode == "separate":
            names = [f"ch{c + 1}_{n}" for c in range(rec.n_channels) for n in names]
        table = np.column_stack([centres, energy.T])
        np.savetxt(args.energy_out, table, delimiter=",", fmt="%.17g", comments="",
                   header=",".join(["time_s"] + names))
    if args.thresholds_out:
        Path(args.thresholds_out).write_text(
            json.dumps([{"tr1": t.tr1, "tr2": t.tr2} for t in used], indent=2) + "\n")
    print(f"bs_fraction={hyp.bs_fraction:.4f}")
    return EXIT_OK


def _features_for(args):
    """FeatureSeries from ``--features`` or computed from ``--input``."""
    if (args.features is None) == (args.input is None):
        raise UsageError(f"{args.command}: give exactly one of --features or --input")
    if args.features is not None:
        return load_features(args.features)
    rec = _load_rec(args)
    calib = Calibration.load(args.calibration) if args.calibration else None
    fs, _ = extract_features(rec, args.window_s, args.stride_s, args.feature_mode, calib)
    return fs


def cmd_train(args) -> int:
    _require(args, "labels", "output")
    fs = _features_for(args)
    labels = load_hypnogram(args.labels)
    fs, labels = align_labels(fs, labels)
    cfg = TrainConfig(
        learning_rate=args.learning_rate, epochs=args.epochs, batch_size=args.batch_size,
        seed=args.seed, class_balance=args.class_balance, threshold=args.threshold,
    )
    res = train(fs, labels, cfg, parse_channel_set(args.channels))
    save_model(res.model, args.output)
    print(f"accuracy={res.accuracy:.6f}")
    return EXIT_OK


def cmd_classify(args) -> int:
    _require(args, "output")
    model = _model_from(args)
    fs = _features_for(args)
    proba = predict_proba(model, fs)
    hyp = classify(model, fs, proba)
    save_hypnogram(hyp, args.output)
    if args.proba_out:
        np.savetxt(args.proba_out, np.column_stack([fs.times, proba]), delimiter=",",
                   fmt="%.17g", header="time_s,probability", comments="")
    print(f"bs_fraction={hyp.bs_fraction:.4f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    pred, truth = load_hypnogram(args.predicted), load_hypnogram(args.truth)
    if args.align:
        pred, truth = align_hypnograms(pred, truth)
    result = report(pred, truth, args.correction)
    text = json.dumps(result, indent=2, allow_nan=False)
    if args.output:
        Path(args.output).write_text(text + "\n")
    print(text)
    if args.disagreements:
        rows = disagreements(pred, truth)
        with open(args.disagreements, "w") as fh:
            fh.write("time_s,predicted,truth\n")
            for t, p, y in rows:
                fh.write(f"{_fmt(t)},{p},{y}\n")
    return EXIT_OK


def cmd_average(args) -> int:
    _require(args, "models", "output")
    avg = average_models([load_model(p) for p in args.models])
    save_model(avg, args.output)
    return EXIT_OK


def cmd_synth(args) -> int:
    _require(args, "spec", "output", "hypnogram_out")
    d = json.loads(Path(args.spec).read_text())
    if args.seed_given:
        d["seed"] = args.seed
    spec = SynthSpec.from_dict(d)
    rec, hyp = generate(spec, args.hypnogram_stride_s)
    save_recording(rec, args.output, format=args.format)
    save_hypnogram(hyp, args.hypnogram_out)
    print(f"bs_fraction={hyp.bs_fraction:.4f}")
    return EXIT_OK


def cmd_stream(args) -> int:
    _require(args, "calibration")
    model = _model_from(args)
    calib = Calibration.load(args.calibration)
    sc = StreamingClassifier(model, calib)
    n_ch = len(calib.channel_ids)
    frame_bytes = 4 * n_ch
    src = sys.stdin.buffer if args.input is None else open(args.input, "rb")
    out = sys.stdout
    pending = b""
    try:
        while True:
            chunk = src.read(frame_bytes * 4096)
            if not chunk:
                break
            pending += chunk
            usable = len(pending) - len(pending) % frame_bytes
            frames = np.frombuffer(pending[:usable], dtype="<f4").reshape(-1, n_ch)
            pending = pending[usable:]
            for frame in frames.astype(np.float64):
                res = sc.push(frame)
                if res is not None:
                    out.write(f"{_fmt(res.time_s)},{_fmt(res.probability)},{res.label}\n")
            out.flush()
    finally:
        if src is not sys.stdin.buffer:
            src.close()
    if pending:
        raise DataError(f"stream ended with a partial frame ({len(pending)} bytes)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_recording_opts(p):
    p.add_argument("--input", "-i", help="recording (CSV or raw float32 with .meta.json)")
    p.add_argument("--format", choices=("csv", "raw-f32"), help="override format detection")
    p.add_argument("--rate", type=int, help="sampling rate for CSV without a time column")


def _add_feature_opts(p):
    p.add_argument("--window-s", type=float, default=DEFAULT_WINDOW_S)
    p.add_argument("--stride-s", type=float, default=DEFAULT_STRIDE_S)
    p.add_argument("--feature-mode", choices=FEATURE_MODES, default=LITERAL)
    p.add_argument("--calibration", help="reuse normalization constants from this JSON")


def _add_model_opts(p):
    p.add_argument("--model", help="model JSON")
    p.add_argument("--pretrained", help="reference averaged model: 12, 13, 23 or 123")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ecogsleep", description="Sleep/wake detection in rodent ECoG.")
    parser.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    parser.add_argument("--config", help="JSON file with option defaults")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("features", help="recording -> feature CSV")
    _add_recording_opts(p)
    _add_feature_opts(p)
    p.add_argument("--output", "-o")
    p.add_argument("--calibration-out", help="also write the calibration JSON here")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("markup", help="recording -> wavelet hypnogram")
    _add_recording_opts(p)
    p.add_argument("--output", "-o")
    p.add_argument("--bands", default=",".join(f"{lo:g}-{hi:g}" for lo, hi in DEFAULT_BANDS_HZ),
                   help="comma-separated LO-HI bands in Hz")
    p.add_argument("--onset-pct", type=float, default=DEFAULT_ONSET_PCT)
    p.add_argument("--offset-pct", type=float, default=DEFAULT_OFFSET_PCT)
    p.add_argument("--thresholds", help="JSON list of {tr1, tr2}, one per energy row")
    p.add_argument("--comparison-window-s", type=float, default=DEFAULT_COMPARISON_WINDOW_S)
    p.add_argument("--fusion", choices=FUSION_RULES, default="majority")
    p.add_argument("--channel-mode", choices=CHANNEL_MODES, default="average")
    p.add_argument("--stride-s", type=float, default=DEFAULT_STRIDE_S)
    p.add_argument("--energy-out", help="CSV of block band energies")
    p.add_argument("--thresholds-out", help="JSON of the thresholds used")
    p.set_defaults(func=cmd_markup)

    p = sub.add_parser("train", help="features + hypnogram -> model JSON")
    _add_recording_opts(p)
    _add_feature_opts(p)
    p.add_argument("--features", help="feature CSV written by 'features'")
    p.add_argument("--labels", help="hypnogram CSV")
    p.add_argument("--channels", default="12", help="channel set, e.g. 12 or 1,2,3")
    p.add_argument("--output", "-o")
    p.add_argument("--learning-rate", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--class-balance", choices=("truncate-majority", "none"),
                   default=TrainConfig.class_balance)
    p.add_argument("--threshold", type=float, default=TrainConfig.threshold)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="recording or features + model -> hypnogram")
    _add_recording_opts(p)
    _add_feature_opts(p)
    _add_model_opts(p)
    p.add_argument("--features", help="feature CSV written by 'features'")
    p.add_argument("--output", "-o")
    p.add_argument("--proba-out", help="CSV of per-window probabilities")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="compare two hypnograms")
    p.add_argument("predicted")
    p.add_argument("truth")
    p.add_argument("--correction", choices=("none", "haldane-0.5"), default="none")
    p.add_argument("--align", action="store_true", help="restrict to shared time points")
    p.add_argument("--output", "-o", help="also write the JSON here")
    p.add_argument("--disagreements", help="CSV of windows where the two differ")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("average", help="average model JSONs")
    p.add_argument("models", nargs="*")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_average)

    p = sub.add_parser("synth", help="spec JSON -> synthetic recording + hypnogram")
    p.add_argument("--spec")
    p.add_argument("--output", "-o")
    p.add_argument("--hypnogram-out")
    p.add_argument("--hypnogram-stride-s", type=float, default=1.0)
    p.add_argument("--format", choices=("csv", "raw-f32"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stream", help="classify raw float32 frames from stdin")
    _add_model_opts(p)
    p.add_argument("--calibration", help="calibration JSON from 'features --calibration-out'")
    p.add_argument("--input", help="read frames from this file instead of stdin")
    p.set_defaults(func=cmd_stream)

    for sp in sub.choices.values():
        # accept the seed after the command too; SUPPRESS keeps the global value otherwise
        sp.add_argument("--seed", type=int, default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    parser._subcommands = sub.choices  # used to apply config sections
    return parser


def _apply_config(parser: argparse.ArgumentParser, path: str) -> None:
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise DataError(f"config {path} must hold a JSON object")
    sections = parser._subcommands
    top = {k.replace("-", "_"): v for k, v in cfg.items() if k not in sections}
    parser.set_defaults(**{k: v for k, v in top.items() if k in ("seed", "verbose")})
    for name, sp in sections.items():
        known = {a.dest for a in sp._actions}
        sp.set_defaults(**{k: v for k, v in top.items() if k in known})
        section = cfg.get(name, {})
        section = {k.replace("-", "_"): v for k, v in section.items()}
        unknown = set(section) - known
        if unknown:
            raise UsageError(f"config section {name!r} has unknown keys {sorted(unknown)}")
        sp.set_defaults(**section)


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        pre = _Parser(add_help=False)
        pre.add_argument("--config")
        known, _ = pre.parse_known_args(argv)
        if known.config:
            _apply_config(parser, known.config)
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("ecogsleep: a command is required (see --help)")
        args.seed_given = "--seed" in argv or any(a.startswith("--seed=") for a in argv)
        if known.config and not args.seed_given:
            args.seed_given = "seed" in json.loads(Path(known.config).read_text())
        logging.basicConfig(
            level=logging.WARNING - 10 * min(args.verbose, 2),
            format="%(levelname)s %(name)s: %(message)s",
        )
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except BrokenPipeError:
        # reader went away (e.g. piped into head); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:  # --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
