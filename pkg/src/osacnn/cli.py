"""Command-line entry point: ``osacnn <command> [options]``.

Each command can read its options from an INI-style config file
(``--config``), one ``[section]`` per command with ``key = value`` lines;
explicit flags override the file. Every run writes the fully resolved
options to ``resolved-config.ini`` next to its outputs.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .cohort import read_manifest, undersample
from .edf import EdfError, EdfFile
from .metrics import confusion, report
from .nn import PRESETS, Adam, CheckpointError, ShapeError, build_model, load_checkpoint, save_checkpoint
from .pipeline import PipelineError, build_tensor, channel_group, load_tensor, read_sleep_windows, save_tensor
from .synth import SynthSpec, generate_cohort
from .training import SplitPlan, TrainConfig, TrainingDiverged, evaluate, stratified_split, train

logger = logging.getLogger("osacnn")

# option name -> (type, default); None default means "required"
OPTIONS: dict[str, dict[str, tuple[type, object]]] = {
    "synth": {
        "out": (str, None),
        "seed": (int, 0),
        "subjects_per_class": (str, "8,8,8,8"),
        "duration": (float, 1200.0),
        "rate": (float, 64.0),
        "noise": (float, 0.3),
        "awake_lead": (float, 60.0),
        "awake_tail": (float, 60.0),
        "workers": (int, 1),
    },
    "split": {
        "manifest": (str, None),
        "seed": (int, 0),
        "per_class": (int, 8),
        "out": (str, None),
    },
    "preprocess": {
        "manifest": (str, None),
        "group": (str, "ecg"),
        "seq_seconds": (float, 60.0),
        "windows": (str, ""),
        "split": (str, ""),
        "subset": (str, ""),
        "workers": (int, 1),
        "out": (str, None),
    },
    "train": {
        "train": (str, None),
        "val": (str, None),
        "out": (str, None),
        "arch": (str, "full"),
        "hidden": (int, 0),
        "iterations": (int, 1000),
        "batch_size": (int, 32),
        "lr": (float, 1e-4),
        "dropout_keep": (float, 0.5),
        "eval_every": (int, 50),
        "train_eval_subset": (int, 2048),
        "seed": (int, 0),
        "resume": (str, ""),
    },
    "evaluate": {
        "checkpoint": (str, None),
        "tensor": (str, None),
        "out": (str, ""),
        "title": (str, "Test"),
    },
}


class CommandError(RuntimeError):
    pass


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="osacnn", description="OSA severity classification from EDF recordings.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    info = sub.add_parser("edf-info", help="print the header and signal table of an EDF file")
    info.add_argument("path")

    helps = {
        "synth": "generate a synthetic EDF cohort",
        "split": "under-sample to a balanced cohort and draw the subject split",
        "preprocess": "trim, segment and normalize one channel group into a tensor file",
        "train": "train the CNN and write a checkpoint and learning curve",
        "evaluate": "report metrics and the confusion matrix of a checkpoint on a tensor",
    }
    for command, options in OPTIONS.items():
        p = sub.add_parser(command, help=helps[command])
        p.add_argument("--config", help="INI config file; options under [%s]" % command)
        for name, (kind, default) in options.items():
            hint = "required" if default is None else f"default: {default}"
            p.add_argument(_flag(name), dest=name, type=kind, default=None, help=hint)
    return parser


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the config file section, then explicit flags."""
    options = OPTIONS[command]
    resolved = {name: default for name, (_, default) in options.items()}
    if args.config:
        cp = configparser.ConfigParser()
        if not cp.read(args.config, encoding="utf-8"):
            raise CommandError(f"cannot read config file {args.config}")
        if cp.has_section(command):
            for key, text in cp.items(command):
                key = key.replace("-", "_")
                if key not in options:
                    raise CommandError(f"{args.config}: unknown option {key!r} in [{command}]")
                try:
                    resolved[key] = options[key][0](text)
                except ValueError:
                    raise CommandError(f"{args.config}: bad value for {key}: {text!r}") from None
    for name in options:
        value = getattr(args, name)
        if value is not None:
            resolved[name] = value
    missing = [_flag(k) for k, v in resolved.items() if v is None]
    if missing:
        raise CommandError(f"{command}: missing required option(s) {', '.join(missing)}")
    return resolved


def write_resolved(command: str, resolved: dict, output: Path) -> Path:
    """Write ``resolved-config.ini`` into an output directory, or
    ``<stem>.resolved-config.ini`` beside an output file."""
    cp = configparser.ConfigParser()
    cp[command] = {k: str(v) for k, v in resolved.items()}
    if output.is_dir():
        target = output / "resolved-config.ini"
    else:
        target = output.with_name(output.stem + ".resolved-config.ini")
    with target.open("w", encoding="utf-8") as fh:
        cp.write(fh)
    return target


# -- commands ---------------------------------------------------------------


def cmd_edf_info(path: str) -> None:
    try:
        edf = EdfFile.open(path)
    except OSError as exc:
        raise CommandError(f"{path}: {exc}") from None
    h = edf.header
    print(f"file:            {path}")
    print(f"version:         {h.version}")
    print(f"patient:         {h.patient_id}")
    print(f"recording:       {h.recording_id}")
    print(f"start:           {h.start_datetime.isoformat(sep=' ')}")
    print(f"header bytes:    {h.header_bytes}")
    print(f"records:         {h.num_records} x {h.record_duration:g} s = {h.duration:g} s")
    print(f"signals:         {h.num_signals}")
    print()
    print(f"{'#':>3}  {'label':<16} {'rate Hz':>9} {'samples/rec':>11} {'duration s':>10} {'unit':<6} {'physical range':>22}")
    for i, spec in enumerate(edf.specs):
        rate = spec.sampling_rate(h.record_duration)
        rng = f"[{spec.physical_min:g}, {spec.physical_max:g}]"
        print(
            f"{i:>3}  {spec.label:<16} {rate:>9g} {spec.samples_per_record:>11} "
            f"{h.duration:>10g} {spec.physical_dimension:<6} {rng:>22}"
        )
    if h.non_ascii_fields:
        print(f"warning: non-ASCII bytes replaced in {', '.join(h.non_ascii_fields)}", file=sys.stderr)


def cmd_synth(opts: dict) -> None:
    counts = tuple(int(c) for c in str(opts["subjects_per_class"]).split(","))
    if len(counts) == 1:
        counts *= 4
    rates = {g: opts["rate"] for g in ("ECG", "EEG", "EMG", "RESP")}
    spec = SynthSpec(
        subjects_per_class=counts,
        rates=rates,
        duration=opts["duration"],
        noise=opts["noise"],
        awake_lead=opts["awake_lead"],
        awake_tail=opts["awake_tail"],
        seed=opts["seed"],
    )
    out = Path(opts["out"])
    generated = generate_cohort(spec, out, workers=opts["workers"])
    write_resolved("synth", opts, out)
    print(f"wrote {len(generated.cohort)} subjects to {out}")
    print(f"manifest: {generated.manifest}")


def cmd_split(opts: dict) -> None:
    cohort = read_manifest(opts["manifest"])
    per_class = opts["per_class"]
    balanced = cohort
    if any(n != per_class for n in cohort.per_class_counts.values()):
        balanced = undersample(cohort, per_class, seed=opts["seed"])
    plan = stratified_split(balanced, opts["seed"], per_class=per_class)
    out = Path(opts["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    plan.save(out)
    write_resolved("split", opts, out)
    print(f"train {len(plan.train)}  val {len(plan.val)}  test {len(plan.test)} -> {out}")


def cmd_preprocess(opts: dict) -> None:
    manifest = Path(opts["manifest"])
    cohort = read_manifest(manifest)
    if len(cohort) == 0:
        raise CommandError(f"{manifest}: manifest lists no subjects")
    if opts["split"]:
        if not opts["subset"]:
            raise CommandError("--split needs --subset train|val|test")
        ids = SplitPlan.load(opts["split"]).subset(opts["subset"])
        cohort = cohort.subset(ids)
    windows_path = Path(opts["windows"]) if opts["windows"] else manifest.parent / "sleep_windows.csv"
    windows = read_sleep_windows(windows_path) if windows_path.exists() else None
    if windows is not None:
        opts["windows"] = str(windows_path)
    group = channel_group(opts["group"])
    tensor = build_tensor(cohort, group, opts["seq_seconds"], windows, workers=opts["workers"])
    tensor.meta["provenance"] = {
        "manifest": str(manifest),
        "sleep_windows": opts["windows"] or None,
        "split": opts["split"] or None,
        "subset": opts["subset"] or None,
        "subjects": tensor.subjects,
        "version": __version__,
    }
    out = Path(opts["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_tensor(tensor, out)
    write_resolved("preprocess", opts, out)
    n, length, channels = tensor.values.shape
    print(f"{group.name}: {len(tensor.subjects)} subjects, tensor {n} x {length} x {channels} -> {out}")


def cmd_train(opts: dict) -> None:
    train_t = load_tensor(opts["train"])
    val_t = load_tensor(opts["val"])
    config = TrainConfig(
        learning_rate=opts["lr"],
        iterations=opts["iterations"],
        batch_size=opts["batch_size"],
        dropout_keep=opts["dropout_keep"],
        seed=opts["seed"],
        eval_every=opts["eval_every"],
        train_eval_subset=opts["train_eval_subset"],
    )
    adam = None
    if opts["resume"]:
        model, adam, _ = load_checkpoint(opts["resume"])
    else:
        if opts["arch"] not in PRESETS:
            raise CommandError(f"unknown architecture {opts['arch']!r}; choose from {sorted(PRESETS)}")
        arch = PRESETS[opts["arch"]]
        if opts["hidden"]:
            arch = arch.replace(hidden=opts["hidden"])
        model = build_model(train_t.seq_len, train_t.channels, arch, seed=opts["seed"])
    adam = adam or Adam(lr=config.learning_rate)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "config": config.to_dict(),
        "train_subjects": train_t.subjects,
        "val_subjects": val_t.subjects,
        "train_curve_subset": min(len(train_t), config.train_eval_subset),
        "group": train_t.meta.get("group"),
    }
    try:
        model, curve = train(model, train_t, val_t, config, adam)
    except TrainingDiverged as exc:
        save_checkpoint(out / "checkpoint.bin", model, adam, {**meta, "diverged_at": exc.iteration})
        raise CommandError(f"{exc}; last good parameters saved to {out / 'checkpoint.bin'}") from None
    save_checkpoint(out / "checkpoint.bin", model, adam, meta)
    curve.save(out / "curve.csv")
    (out / "train_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_resolved("train", opts, out)
    last = curve[-1]
    print(
        f"iteration {last.iteration}: train acc {last.train_acc:.4f} loss {last.train_loss:.4f}  "
        f"val acc {last.val_acc:.4f} loss {last.val_loss:.4f}"
    )


def cmd_evaluate(opts: dict) -> None:
    model, _, _ = load_checkpoint(opts["checkpoint"])
    tensor = load_tensor(opts["tensor"])
    result = evaluate(model, tensor)
    cm = confusion(result.predictions, tensor.labels)
    rep = report(cm, loss=result.loss)
    text = rep.to_text(opts["title"]) + "\n\n" + cm.to_text() + "\n"
    print(text, end="")
    if opts["out"]:
        out = Path(opts["out"])
        out.mkdir(parents=True, exist_ok=True)
        payload = {**rep.to_dict(), "confusion": cm.counts.tolist(), "segments": len(tensor)}
        (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (out / "report.txt").write_text(text, encoding="utf-8")
        write_resolved("evaluate", opts, out)


COMMANDS = {
    "synth": cmd_synth,
    "split": cmd_split,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "edf-info":
            cmd_edf_info(args.path)
        else:
            COMMANDS[args.command](resolve(args.command, args))
    except (CommandError, EdfError, PipelineError, CheckpointError, ShapeError, ValueError, KeyError, OSError) as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {message}", file=sys.stderr)
        return 1
    except FloatingPointError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
