"""Command-line entry point: ``ovr <subcommand> ...``.

Every subcommand is a thin adapter over a library call.  Manifests are JSON
Lines; outputs are written atomically, and each run that produces files also
writes ``run_record.json`` (arguments, seed, package versions, per-item
errors) next to them.  Exit codes: 0 success, 1 usage error, 2 data error.
Set ``OVR_LOG=DEBUG|INFO|WARNING`` for verbosity.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import metadata
from pathlib import Path

import numpy as np

from . import __version__
from .augment import (
    SmoothingConfig,
    augment_utterance,
    choose_table,
    estimate_rtfs,
    intervals_to_track,
    load_rtf_table,
    read_intervals,
    save_rtf_table,
)
from .complexity import MAC_CONVENTIONS, bench_realtime_factor, cost_report
from .fileio import DataError, read_jsonl, read_wav, write_json, write_wav
from .metrics import EVAL_SNRS_DB, evaluate_grid, model_enhancer
from .mixer import MixSpec, diffuse_sources, load_irset, mix_at_snr, spatialize
from .model import PRESETS, ModelConfig, config_from_weights, infer_utterance, init_weights, load_weights, save_weights
from .stft import ConfigError, StftConfig, analyze
from .train import MixingDataset, TrainConfig, fine_tune, save_checkpoint, train

log = logging.getLogger("ovr")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------- helpers


def _versions() -> dict:
    out = {"ovr": __version__, "python": platform.python_version()}
    for dist in ("numpy", "scipy", "numba", "threadpoolctl"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


def _write_record(directory, args, outputs, errors=()) -> None:
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    record = {
        "subcommand": args.command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "versions": _versions(),
        "outputs": [str(p) for p in outputs],
        "errors": list(errors),
    }
    write_json(Path(directory) / "run_record.json", record)


def _require(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise DataError(f"no such file or directory: {p}")


def _resolve(base: Path, p) -> str:
    p = Path(p)
    return str(p if p.is_absolute() else base / p)


def _manifest(path):
    _require(path)
    return read_jsonl(path), Path(path).parent


def _item_id(row, n) -> str:
    return str(row.get("id", f"{n:05d}"))


def _map(func, items, jobs):
    """Apply ``func`` to ``(index, item)`` pairs, keeping order."""
    pairs = list(enumerate(items))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(func, pairs))
    return [func(pair) for pair in pairs]


def _model_config(args) -> ModelConfig:
    if args.hidden is not None:
        return ModelConfig(args.hidden[0], args.hidden[1], args.mics)
    return ModelConfig.from_preset(args.preset, num_mics=args.mics)


def _add_model_args(p, default_preset="XS"):
    p.add_argument("--preset", default=default_preset, type=str.upper, choices=sorted(PRESETS))
    p.add_argument("--hidden", nargs=2, type=int, metavar=("H_F", "H_T"), help="explicit sizes, overrides --preset")
    p.add_argument("--mics", type=int, default=2, choices=(1, 2), help="2 = outer + in-ear, 1 = in-ear only")


# --------------------------------------------------------------------------- subcommands


def cmd_estimate_rtf(args) -> int:
    """Manifest rows: {"outer": wav, "inear": wav, "intervals": jsonl} of one talker."""
    rows, base = _manifest(args.manifest)
    stft = StftConfig()
    outers, inears, track = [], [], []
    for row in rows:
        try:
            o = read_wav(_resolve(base, row["outer"]))
            i = read_wav(_resolve(base, row["inear"]))
            iv = read_intervals(_resolve(base, row["intervals"]))
        except KeyError as exc:
            raise DataError(f"manifest row missing {exc}") from exc
        if o.shape != i.shape:
            raise DataError(f"{row['outer']} and {row['inear']} differ in length")
        so, si = analyze(o, stft), analyze(i, stft)
        outers.append(so)
        inears.append(si)
        track += intervals_to_track(iv, so.shape[-1], stft)
    if not outers:
        raise DataError("manifest is empty")
    table = estimate_rtfs(np.hstack(outers), np.hstack(inears), track, args.min_frames, args.talker_id)
    save_rtf_table(args.out, table)
    _write_record(Path(args.out).parent, args, [args.out])
    print(json.dumps({"talker_id": table.talker_id, "phonemes": table.phonemes, "K": table.num_bins}))
    return EXIT_OK


def cmd_augment(args) -> int:
    """Manifest rows: {"id"?, "speech": wav, "intervals": jsonl}."""
    rows, base = _manifest(args.manifest)
    _require(*args.tables)
    tables = [load_rtf_table(p) for p in args.tables]
    smoothing = SmoothingConfig(args.alpha)
    out_dir = Path(args.out_dir)

    def work(pair):
        n, row = pair
        uid = _item_id(row, n)
        try:
            clean = read_wav(_resolve(base, row["speech"]))
            intervals = read_intervals(_resolve(base, row["intervals"]))
            table = choose_table(tables, np.random.default_rng([args.seed, n]))
            outer, inear = augment_utterance(clean, intervals, table, smoothing)
            paths = [out_dir / f"{uid}_outer.wav", out_dir / f"{uid}_inear.wav"]
            write_wav(paths[0], outer)
            write_wav(paths[1], inear)
            return paths, None
        except (DataError, KeyError, ValueError) as exc:
            return [], {"id": uid, "error": str(exc)}

    return _finish(args, out_dir, _map(work, rows, args.jobs))


def _noise_capture(path, row, irs, seed):
    noise = read_wav(path)
    if noise.ndim != 1:
        raise DataError(f"{path}: noise must be mono")
    if row.get("mode", "point") == "diffuse":
        return spatialize(diffuse_sources(noise, seed), irs, "diffuse")
    return spatialize(noise, irs, "point", int(row.get("direction", 0)))


def cmd_mix(args) -> int:
    """Manifest rows: {"id"?, "speech": [outer, inear], "noise": wav, "snr_db", "mode", "direction"?, "seed"}."""
    rows, base = _manifest(args.manifest)
    _require(args.irs)
    irs = load_irset(args.irs)
    out_dir = Path(args.out_dir)

    def work(pair):
        n, row = pair
        uid = _item_id(row, n)
        try:
            outer, inear = (read_wav(_resolve(base, p)) for p in row["speech"])
            seed = int(row.get("seed", args.seed))
            spec = MixSpec(float(row["snr_db"]), row.get("mode", "point"), row.get("direction", 0), seed)
            noise = _noise_capture(_resolve(base, row["noise"]), row, irs, seed)
            y_o, y_i = mix_at_snr(outer, inear, noise, spec)
            paths = [out_dir / f"{uid}_noisy_outer.wav", out_dir / f"{uid}_noisy_inear.wav"]
            write_wav(paths[0], y_o)
            write_wav(paths[1], y_i)
            return paths, None
        except (DataError, KeyError, ValueError) as exc:
            return [], {"id": uid, "error": str(exc)}

    return _finish(args, out_dir, _map(work, rows, args.jobs))


def _finish(args, out_dir, results) -> int:
    outputs = [p for paths, _ in results for p in paths]
    errors = [e for _, e in results if e is not None]
    for e in errors:
        log.error("%s: %s", e["id"], e["error"])
    _write_record(out_dir, args, outputs, errors)
    return EXIT_DATA if errors else EXIT_OK


def _load_model(path):
    _require(path)
    weights = load_weights(path)
    return config_from_weights(weights), weights


def cmd_infer(args) -> int:
    """Single pair (--outer/--inear/--out) or a manifest of {"id"?, "noisy": [outer, inear]}."""
    single = args.outer is not None
    if single == (args.manifest is not None):
        raise UsageError("give either --outer/--inear/--out or --manifest/--out-dir")
    if single and (args.inear is None or args.out is None):
        raise UsageError("--outer needs --inear and --out")
    if not single and args.out_dir is None:
        raise UsageError("--manifest needs --out-dir")
    if single:
        _require(args.outer, args.inear)
    rows, base = _manifest(args.manifest) if not single else ([], None)
    config, weights = _load_model(args.weights)

    if single:
        est = infer_utterance(read_wav(args.outer), read_wav(args.inear), config, weights)
        write_wav(args.out, est)
        _write_record(Path(args.out).parent, args, [args.out])
        return EXIT_OK

    out_dir = Path(args.out_dir)

    def work(pair):
        n, row = pair
        uid = _item_id(row, n)
        try:
            outer, inear = (read_wav(_resolve(base, p)) for p in row["noisy"])
            path = out_dir / f"{uid}_enhanced.wav"
            write_wav(path, infer_utterance(outer, inear, config, weights))
            return [path], None
        except (DataError, KeyError, ValueError) as exc:
            return [], {"id": uid, "error": str(exc)}

    return _finish(args, out_dir, _map(work, rows, args.jobs))


def _speech_pairs(path):
    rows, base = _manifest(path)
    try:
        return [tuple(read_wav(_resolve(base, p)) for p in row["speech"]) for row in rows]
    except KeyError as exc:
        raise DataError(f"{path}: manifest row missing {exc}") from exc


def _noises(path, irs, seed):
    rows, base = _manifest(path)
    try:
        return [_noise_capture(_resolve(base, row["noise"]), row, irs, int(row.get("seed", seed))) for row in rows]
    except KeyError as exc:
        raise DataError(f"{path}: manifest row missing {exc}") from exc


def _checkpointer(out_dir, seed):
    def on_epoch(epoch, result):
        entry = result.history[-1]
        log.info("epoch %d: train %.4f val %.4f lr %.2e %s", epoch, entry["train_loss"], entry["val_loss"],
                 entry["lr"], entry["action"])
        save_checkpoint(Path(out_dir) / f"epoch{epoch:03d}", result, seed=seed, epoch=epoch)

    return on_epoch


def cmd_train(args) -> int:
    """Train from clean own-voice pairs mixed on the fly with spatialized noise."""
    _require(args.irs)
    irs = load_irset(args.irs)
    train_speech = _speech_pairs(args.train_manifest)
    val_speech = _speech_pairs(args.val_manifest)
    noise = _noises(args.noise_manifest, irs, args.seed)
    if not train_speech or not val_speech or not noise:
        raise DataError("training, validation and noise manifests must be non-empty")
    example_len = int(round(args.example_seconds * 16000))
    for pair in train_speech + val_speech:
        if len(pair[0]) < example_len:
            raise DataError(f"utterance shorter than the example length ({len(pair[0])} < {example_len} samples)")
    config = _model_config(args)
    weights = init_weights(config, args.seed)
    train_data = MixingDataset(train_speech, noise, example_len, seed=args.seed)
    val_data = MixingDataset(val_speech, noise, example_len, seed=args.seed + 1)
    tcfg = TrainConfig(lr=args.lr, batch_size=args.batch_size, max_epochs=args.epochs, max_steps=args.max_steps,
                       seed=args.seed)
    result = train(weights, config, train_data, val_data, tcfg, on_epoch=_checkpointer(args.out_dir, args.seed))
    final = Path(args.out_dir) / "final.ovrw"
    save_weights(final, result.weights)
    _write_record(args.out_dir, args, [final], [])
    print(json.dumps({"initial_val_loss": result.initial_val_loss, "history": result.history}))
    return EXIT_OK


def _recorded_pairs(path):
    rows, base = _manifest(path)
    out = []
    for row in rows:
        try:
            outer, inear = (read_wav(_resolve(base, p)) for p in row["noisy"])
            target = read_wav(_resolve(base, row["target"]))
        except KeyError as exc:
            raise DataError(f"{path}: manifest row missing {exc}") from exc
        if not (outer.shape == inear.shape == target.shape):
            raise DataError(f"{path}: noisy pair and target differ in length")
        out.append((np.stack([outer, inear]), target))
    return out


def cmd_finetune(args) -> int:
    """Fine-tune on recorded {"noisy": [outer, inear], "target": wav} pairs."""
    config, weights = _load_model(args.weights)
    recorded = _recorded_pairs(args.train_manifest)
    val = _recorded_pairs(args.val_manifest)
    if not recorded or not val:
        raise DataError("fine-tuning and validation manifests must be non-empty")
    result = fine_tune(weights, config, recorded, val, args.epochs, lr=args.lr, seed=args.seed,
                       checkpoint_dir=args.out_dir, batch_size=args.batch_size)
    final = Path(args.out_dir) / "final.ovrw"
    save_weights(final, result.weights)
    _write_record(args.out_dir, args, [final], [])
    print(json.dumps({"initial_val_loss": result.initial_val_loss, "history": result.history}))
    return EXIT_OK


def _emit_report(args, report) -> int:
    text = json.dumps(report.to_dict(), sort_keys=True)
    print(text)
    if args.out is not None:
        write_json(args.out, report.to_dict())
        _write_record(Path(args.out).parent, args, [args.out])
    return EXIT_OK


def cmd_count(args) -> int:
    config = _model_config(args)
    return _emit_report(args, cost_report(config, args.preset if args.hidden is None else None,
                                          convention=args.convention))


def cmd_bench(args) -> int:
    config = _model_config(args)
    rf = bench_realtime_factor(config, audio_seconds=args.seconds, repetitions=args.reps, seed=args.seed)
    return _emit_report(args, cost_report(config, args.preset if args.hidden is None else None,
                                          convention=args.convention, realtime_factor=rf))


def cmd_eval(args) -> int:
    """Manifest rows: {"id", "speech": [outer, inear], "noise": wav, "mode"?, "direction"?, "seed"?}."""
    config, weights = _load_model(args.weights)
    rows, base = _manifest(args.manifest)
    irs = None
    if args.irs is not None:
        _require(args.irs)
        irs = load_irset(args.irs)
    items = []
    for n, row in enumerate(rows):
        item = dict(row)
        item["id"] = _item_id(row, n)
        try:
            item["speech"] = tuple(_resolve(base, p) for p in row["speech"])
            item["noise"] = _resolve(base, row["noise"])
        except KeyError as exc:
            raise DataError(f"{args.manifest}: manifest row missing {exc}") from exc
        items.append(item)
    report = evaluate_grid(model_enhancer(config, weights), items, args.snrs, irs, jobs=args.jobs)
    out_dir = Path(args.out_dir)
    json_path, csv_path = out_dir / "report.json", out_dir / "report.csv"
    report.save(json_path, csv_path)
    _write_record(out_dir, args, [json_path, csv_path], report.errors)
    print(json.dumps({"mean_lsd_db": report.mean_lsd, "per_snr": {str(k): v for k, v in report.per_snr().items()}}))
    return EXIT_DATA if report.errors else EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ovr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ovr {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("estimate-rtf", help="estimate a talker's per-phoneme RTF table")
    p.add_argument("--manifest", required=True, help="JSONL of {outer, inear, intervals}")
    p.add_argument("--out", required=True, help="RTF table JSON to write")
    p.add_argument("--talker-id", default="")
    p.add_argument("--min-frames", type=int, default=5)
    p.set_defaults(func=cmd_estimate_rtf)

    p = sub.add_parser("augment", help="simulate in-ear signals for clean speech")
    p.add_argument("--manifest", required=True, help="JSONL of {id, speech, intervals}")
    p.add_argument("--tables", nargs="+", required=True, help="RTF table files (one per talker)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--alpha", type=float, default=SmoothingConfig().alpha, help="RTF smoothing factor in [0, 1)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("mix", help="mix own voice with spatialized noise at a target SNR")
    p.add_argument("--manifest", required=True, help="JSONL of {id, speech, noise, snr_db, mode, direction, seed}")
    p.add_argument("--irs", required=True, help="IR set directory")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, required=True, help="default for rows without a seed")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("infer", help="enhance noisy (outer, in-ear) recordings")
    p.add_argument("--weights", required=True)
    p.add_argument("--outer")
    p.add_argument("--inear")
    p.add_argument("--out")
    p.add_argument("--manifest", help="JSONL of {id, noisy: [outer, inear]}")
    p.add_argument("--out-dir")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("train", help="train a model from scratch")
    p.add_argument("--train-manifest", required=True, help="JSONL of {speech: [outer, inear]}")
    p.add_argument("--val-manifest", required=True)
    p.add_argument("--noise-manifest", required=True, help="JSONL of {noise, mode, direction, seed}")
    p.add_argument("--irs", required=True)
    p.add_argument("--out-dir", required=True)
    _add_model_args(p)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--example-seconds", type=float, default=3.0)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="fine-tune on recorded pairs")
    p.add_argument("--weights", required=True)
    p.add_argument("--train-manifest", required=True, help="JSONL of {noisy: [outer, inear], target}")
    p.add_argument("--val-manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_finetune)

    for name, func, text in (("count", cmd_count, "parameter and MAC counts"),
                             ("bench", cmd_bench, "counts plus measured real-time factor")):
        p = sub.add_parser(name, help=text)
        _add_model_args(p)
        p.add_argument("--convention", choices=MAC_CONVENTIONS, default="thop")
        p.add_argument("--out", help="also write the JSON report here")
        if name == "bench":
            p.add_argument("--seconds", type=float, default=10.0)
            p.add_argument("--reps", type=int, default=5)
            p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="LSD over an SNR grid")
    p.add_argument("--weights", required=True)
    p.add_argument("--manifest", required=True, help="JSONL of {id, speech: [outer, inear], noise, mode, direction, seed}")
    p.add_argument("--irs", help="IR set for mono noise files")
    p.add_argument("--snrs", type=float, nargs="+", default=list(EVAL_SNRS_DB))
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("OVR_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"ovr: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, ValueError) as exc:
        print(f"ovr: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
