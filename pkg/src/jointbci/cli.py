"""Command-line harness: simulate, replay, train, eval and sweep.

Data outputs are byte-identical for the same config and seed; the wall-clock
timestamp lives only in ``manifest.json``.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, spl, svm
from .config import ExperimentConfig, load_config
from .csp import SpatialFilterBank
from .errors import ConfigError, ExperimentError, FormatError, InputError, JointBCIError
from .paradigm import Pipeline, run_experiment, run_replay, train_session_decoder
from .signal import ChannelLayout, read_epochs, write_epochs

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


def _version():
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).resolve().parent)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _dump(obj):
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _write(path, text):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8", newline="\n")
    return str(path)


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _config(path, seed=None):
    cfg = load_config(path) if path else ExperimentConfig()
    if seed is not None:
        if seed < 0:
            raise ConfigError("seed", "must be a non-negative integer")
        cfg = cfg.with_updates(seed=int(seed))
    return cfg.validate()


def write_manifest(out_dir, cfg, command, outputs):
    manifest = {
        "command": command,
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "mode": cfg.session.mode,
        "version": _version(),
        "outputs": sorted(os.path.relpath(o, out_dir) for o in outputs),
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    return _write(Path(out_dir) / "manifest.json", _dump(manifest))


# ---------------------------------------------------------------------------
# model files


def decoder_to_dict(decoder, pipe, config, data_hash):
    d, s = config.decoder, config.session
    return {
        "preprocessing": {
            "channels": list(pipe.channels),
            "fs": pipe.fs,
            "band_hz": [d.band_low_hz, d.band_high_hz],
            "filter_order": d.filter_order,
            "slice_start_s": s.slice_start_s,
            "slice_end_s": s.slice_end_s,
            "slice_window_s": s.slice_window_s,
        },
        "csp": decoder.bank.to_dict(),
        "svm": decoder.model.to_dict(),
        "pace": {
            "lambda0": config.pace.lambda0,
            "delta_lambda": config.pace.delta_lambda,
            "lam": decoder.lam,
            "loss_scale": decoder.loss_scale,
            "best_iteration": decoder.best_iteration,
            "val_accuracy": decoder.val_accuracy,
        },
        "mode": config.session.mode,
        "training_data_hash": data_hash,
    }


def decoder_from_dict(d):
    """Rebuild a (decoder, config) pair able to score new epochs."""
    try:
        pre = d["preprocessing"]
        bank = SpatialFilterBank.from_dict(d["csp"])
        model = svm.DecoderModel.from_dict(d["svm"])
        pace = d.get("pace", {})
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"model file is missing or has a malformed field: {exc}") from None
    decoder = spl.TrainedDecoder(bank=bank, model=model, weights=None,
                                 best_iteration=int(pace.get("best_iteration", 0)),
                                 val_accuracy=float(pace.get("val_accuracy", float("nan"))),
                                 lam=pace.get("lam"), loss_scale=float(pace.get("loss_scale", 1.0)))
    cfg = ExperimentConfig().with_updates(
        decoder={"channels": tuple(pre["channels"]), "band_low_hz": pre["band_hz"][0],
                 "band_high_hz": pre["band_hz"][1], "filter_order": int(pre["filter_order"]),
                 "n_pairs": bank.n_pairs},
        session={"slice_start_s": pre["slice_start_s"], "slice_end_s": pre["slice_end_s"],
                 "slice_window_s": pre["slice_window_s"]},
        generation={"fs": float(pre["fs"])})
    return decoder, cfg


def _epoch_config(cfg, epochs):
    """Align generation fs/channels/trial length with the loaded epochs."""
    first = epochs[0]
    return cfg.with_updates(generation={"fs": first.fs, "channels": tuple(first.layout.names),
                                        "reference": first.layout.reference,
                                        "trial_s": max(cfg.generation.trial_s, first.duration)})


def _load_epochs(path):
    epochs, sessions = read_epochs(path, with_sessions=True)
    if not epochs:
        raise FormatError("epoch file holds no trials")
    return epochs, sessions


# ---------------------------------------------------------------------------
# commands


def _emit_report(out, result, cfg, write_models, data_hash):
    outputs = [
        _write(out / "report.json", result.report.to_json()),
        _write(out / "report.csv", result.report.to_csv()),
    ]
    for k, trace in enumerate(result.report.training_traces, start=1):
        outputs.append(_write(out / f"training_trace_session{k}.csv", spl.trace_csv(trace)))
    if write_models:
        layout = ChannelLayout(tuple(cfg.generation.channels), cfg.generation.reference)
        pipe = Pipeline(cfg, layout)
        for k, dec in enumerate(result.decoders, start=1):
            outputs.append(_write(out / "models" / f"session{k}.json",
                                  _dump(decoder_to_dict(dec, pipe, cfg, data_hash))))
    return outputs


def cmd_simulate(args):
    cfg = _config(args.config, args.seed)
    out = Path(args.out)
    outputs = [_write(out / "config.json", _dump(json.loads(cfg.canonical_json())))]
    result = run_experiment(cfg, keep_epochs=cfg.output.export_epochs)
    data_hash = None
    if cfg.output.export_epochs:
        path = out / "epochs.bin"
        write_epochs(path, result.epochs, result.sessions)
        outputs.append(str(path))
        data_hash = file_digest(path)
    outputs += _emit_report(out, result, cfg, cfg.output.write_models, data_hash)
    write_manifest(out, cfg, "simulate", outputs)
    print(result.report.to_csv(), end="")
    return EXIT_OK


def cmd_replay(args):
    cfg = _config(args.config, getattr(args, "seed", None))
    epochs, sessions = _load_epochs(args.epochs)
    cfg = _epoch_config(cfg, epochs)
    out = Path(args.out)
    result = run_replay(epochs, cfg, sessions)
    outputs = _emit_report(out, result, cfg, cfg.output.write_models, file_digest(args.epochs))
    write_manifest(out, cfg, "replay", outputs)
    print(result.report.to_csv(), end="")
    return EXIT_OK


def cmd_train(args):
    cfg = _config(args.config, getattr(args, "seed", None))
    epochs, _ = _load_epochs(args.epochs)
    cfg = _epoch_config(cfg, epochs)
    pipe = Pipeline(cfg, epochs[0].layout)
    covs = spl.CovarianceSet.concat([pipe.grid_covariances(pipe.filter(e.data)) for e in epochs])
    labels = [int(e.label) for e in epochs]
    decoder = train_session_decoder(cfg.session.mode, covs, labels, len(pipe.grid_starts), cfg, cfg.seed, 0)
    _write(args.model_out, _dump(decoder_to_dict(decoder, pipe, cfg, file_digest(args.epochs))))
    return EXIT_OK


def evaluate(decoder, cfg, epochs):
    """Per-trial grid accuracy of a stored decoder on a list of epochs."""
    pipe = Pipeline(cfg.with_updates(generation={"channels": tuple(epochs[0].layout.names),
                                                 "reference": epochs[0].layout.reference}),
                    epochs[0].layout)
    accs, decs = [], []
    for e in epochs:
        covs = pipe.grid_covariances(pipe.filter(e.data))
        d = decoder.decisions(covs.sample)
        accs.append(float(np.mean(svm.hard_label(d) == int(e.label))))
        decs.append(float(np.mean(d)))
    return accs, decs


def cmd_eval(args):
    try:
        model = json.loads(Path(args.model).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"model file is not valid JSON: {exc}") from None
    decoder, cfg = decoder_from_dict(model)
    epochs, _ = _load_epochs(args.epochs)
    if abs(epochs[0].fs - cfg.generation.fs) > 1e-9:
        raise InputError(f"epochs sampled at {epochs[0].fs} Hz, model expects {cfg.generation.fs} Hz")
    missing = [c for c in cfg.decoder.channels if c not in epochs[0].layout.names]
    if missing:
        raise InputError(f"epochs lack model channels {missing}")
    accs, decs = evaluate(decoder, cfg, epochs)
    result = {"n_trials": len(accs), "accuracy": float(np.mean(accs)), "trial_accuracy": accs,
              "mean_decision": decs}
    text = _dump(result)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _parse_list(text, name):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(name, f"expected a comma-separated list of numbers, got {text!r}") from None
    if not vals:
        raise ConfigError(name, "grid must not be empty")
    return vals


def run_cell(cfg, lambda0, delta_lambda, epochs_path=None):
    """Mean feedback-session accuracy for one (lambda0, delta_lambda) cell."""
    cell = cfg.with_updates(pace={"lambda0": lambda0, "delta_lambda": delta_lambda})
    try:
        cell.validate()
        if epochs_path:
            epochs, sessions = _load_epochs(epochs_path)
            cell = _epoch_config(cell, epochs)
            rep = run_replay(epochs, cell, sessions).report
            acc = rep.offline_accuracy[1:]
        else:
            rep = run_experiment(cell).report
            acc = rep.accuracy[1:]
        return lambda0, delta_lambda, float(np.mean(acc)), ""
    except (JointBCIError, OSError) as exc:
        return lambda0, delta_lambda, float("nan"), f"{type(exc).__name__}: {exc}"


def cmd_sweep(args):
    cfg = _config(args.config, getattr(args, "seed", None))
    l0 = _parse_list(args.lambda0, "lambda0")
    dl = _parse_list(args.dlambda, "dlambda")
    cells = [(a, b) for a in l0 for b in dl]
    workers = max(1, min(args.workers or os.cpu_count() or 1, len(cells)))
    if workers == 1:
        results = [run_cell(cfg, a, b, args.epochs) for a, b in cells]
    else:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(run_cell, [cfg] * len(cells), [a for a, _ in cells],
                                  [b for _, b in cells], [args.epochs] * len(cells)))
    table = {(a, b): (acc, err) for a, b, acc, err in results}
    out = Path(args.out)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda0\\delta_lambda"] + [repr(b) for b in dl])
    for a in l0:
        w.writerow([repr(a)] + ["" if np.isnan(table[a, b][0]) else repr(table[a, b][0]) for b in dl])
    outputs = [_write(out / "sweep_matrix.csv", buf.getvalue())]

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda0", "delta_lambda", "accuracy", "error"])
    for a, b in cells:
        acc, err = table[a, b]
        w.writerow([repr(a), repr(b), "" if np.isnan(acc) else repr(acc), err])
    outputs.append(_write(out / "sweep_cells.csv", buf.getvalue()))
    write_manifest(out, cfg, "sweep", outputs)
    sys.stdout.write(Path(outputs[0]).read_text())
    failed = sum(1 for _, _, _, err in results if err)
    if failed:
        print(f"warning: {failed} of {len(cells)} cells failed; see sweep_cells.csv", file=sys.stderr)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="jointbci", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a simulated calibration + feedback experiment")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("replay", help="pseudo-online pass over recorded epochs")
    s.add_argument("--epochs", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("train", help="fit a decoder on an epoch file")
    s.add_argument("--epochs", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--model-out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="score an epoch file with a stored decoder")
    s.add_argument("--epochs", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="grid over the pace parameters")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--lambda0", default="0.2,0.4,0.6,0.8")
    s.add_argument("--dlambda", default="0.05,0.10,0.15,0.20")
    s.add_argument("--epochs", help="replay this epoch file per cell instead of simulating")
    s.add_argument("--workers", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, InputError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ExperimentError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (JointBCIError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
