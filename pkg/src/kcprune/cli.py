"""Command line entry point: ``kcprune {flops,cluster,select,pipeline,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import descriptors
from .clusters import build_universe
from .errors import PruneError, SnapshotIOError, ValidationError
from .linkage import METHODS
from .model import apply_masks, load_snapshot, model_flops, save_snapshot
from .pipeline import (CSV_FIELDS, SCHEMA_VERSION, MockTrainer, PipelineConfig, RunReport,
                       channel_selection, emit_report, gamma_sparsities, run_pipeline)
from .schedule import REGROW_POLICIES, Schedule

log = logging.getLogger("kcprune")

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 2, 3


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON file whose keys mirror the long flag names")
    p.add_argument("--arch", default="resnet56",
                   help=f"descriptor name ({', '.join(descriptors.DESCRIPTORS)}) or manifest path")
    p.add_argument("--linkage", choices=METHODS, default="ward")
    p.add_argument("--tie", choices=("random", "max-l2", "min-l2"), default="random")
    p.add_argument("--sparsity", type=float, default=0.5, help="global channel sparsity")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t-prune", type=int, default=180)
    p.add_argument("--delta-t", type=int, default=2)
    p.add_argument("--out", help="output path (stdout when omitted)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="kcprune", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("flops", parents=[common], help="FLOPs per layer and in total")

    p = sub.add_parser("cluster", parents=[common], help="per-layer kernel cluster universes")
    p.add_argument("--dendrogram", help="write every channel's merges as JSON lines here")

    p = sub.add_parser("select", parents=[common], help="one-shot channel selection")
    p.add_argument("--save", help="write the hard-pruned snapshot manifest here")

    p = sub.add_parser("pipeline", parents=[common], help="progressive train/prune loop")
    p.add_argument("--epochs", type=int, help="defaults to --t-prune")
    p.add_argument("--drift", type=float, default=0.0, help="mock trainer gamma drift")
    p.add_argument("--noise", type=float, default=0.0, help="mock trainer weight noise")
    p.add_argument("--regrow", choices=REGROW_POLICIES, default="saturation")
    p.add_argument("--regrow-ratio", type=float, default=0.25,
                   help="share of pruned channels restored per event (fraction policy)")
    p.add_argument("--csv", help="also write the per-layer CSV time series here")
    p.add_argument("--save", help="write the hard-pruned snapshot manifest here")

    p = sub.add_parser("report", parents=[common], help="re-emit a saved pipeline report")
    p.add_argument("input", help="report JSON written by `pipeline`")
    p.add_argument("--format", choices=("json", "csv", "summary"), default="summary")
    return parser


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        with open(known.config) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise SnapshotIOError(f"cannot read config {known.config}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {known.config}: {exc}") from exc
    defaults = {key.replace("-", "_"): value for key, value in cfg.items()}
    for action in parser._subparsers._group_actions:
        for subparser in action.choices.values():
            unknown = set(defaults) - {a.dest for a in subparser._actions}
            if unknown:
                raise ValidationError(f"unknown config keys: {sorted(unknown)}")
            subparser.set_defaults(**defaults)


def _load(arch: str, seed: int):
    if arch in descriptors.DESCRIPTORS:
        return descriptors.build(arch, seed)
    return load_snapshot(arch)


def _write(payload, out):
    text = json.dumps(payload, indent=1, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise SnapshotIOError(f"cannot write {out}: {exc}") from exc


def cmd_flops(args):
    snap = _load(args.arch, args.seed)
    _write({"model": snap.name, **model_flops(snap)}, args.out)


def cmd_cluster(args):
    snap = _load(args.arch, args.seed)
    sparsities = gamma_sparsities(snap, args.sparsity)
    records = []
    dump = open(args.dendrogram, "w") if args.dendrogram else None
    try:
        for layer in snap.prunable_layers:
            s = sparsities[layer.name]
            if s == 1:
                records.append({"layer": layer.name, "s_l": 1.0, "skipped": True})
                continue
            universe = build_universe(layer, s, args.linkage)
            records.append(universe.record())
            if dump:
                for seq in universe.sequences:
                    for rec in _dendrogram_lines(layer.name, seq):
                        dump.write(rec)
    finally:
        if dump:
            dump.close()
    _write({"schema": SCHEMA_VERSION, "model": snap.name, "layers": records}, args.out)


def _dendrogram_lines(layer, seq):
    for m in seq.merges:
        yield json.dumps({"layer": layer, "channel": seq.channel, "step": m.step,
                          "a": m.a, "b": m.b, "distance": m.distance}) + "\n"


def cmd_select(args):
    snap = _load(args.arch, args.seed)
    sparsities = gamma_sparsities(snap, args.sparsity)
    records = []
    masks = channel_selection(snap, sparsities, args.linkage, args.tie, args.seed, records)
    pruned = apply_masks(snap, masks)
    if args.save:
        save_snapshot(pruned, args.save)
    flops = model_flops(pruned, reference=snap)
    flops.pop("per_layer")
    _write({"schema": SCHEMA_VERSION, "model": snap.name, "layers": records,
            "masks": masks.to_json(), "flops": flops}, args.out)


def cmd_pipeline(args):
    snap = _load(args.arch, args.seed)
    sched = Schedule(args.sparsity, args.t_prune, args.delta_t)
    cfg = PipelineConfig(args.linkage, args.tie, args.seed, args.regrow, args.regrow_ratio)
    pruned, report = run_pipeline(snap, MockTrainer(args.drift, args.noise), sched, cfg,
                                  epochs=args.epochs)
    if args.save:
        save_snapshot(pruned, args.save)
    if args.csv:
        emit_report(report, args.csv, "csv")
    if args.out:
        emit_report(report, args.out, "json")
    else:
        _write(report.to_json(), None)


def cmd_report(args):
    try:
        with open(args.input) as fh:
            report = RunReport.from_json(json.load(fh))
    except OSError as exc:
        raise SnapshotIOError(f"cannot read {args.input}: {exc}") from exc
    except (json.JSONDecodeError, KeyError) as exc:
        raise ValidationError(f"{args.input}: malformed report: {exc}") from exc
    if args.format in ("json", "csv") and args.out:
        emit_report(report, args.out, args.format)
        return
    if args.format == "json":
        _write(report.to_json(), None)
    elif args.format == "csv":
        sys.stdout.write(",".join(CSV_FIELDS) + "\n")
        for rec in report.records:
            sys.stdout.write(",".join(str(rec.get(k, "")) for k in CSV_FIELDS) + "\n")
    else:
        lines = [f"events: {[e['epoch'] for e in report.events]}"]
        for name, kept in report.final_kept.items():
            lines.append(f"{name}: kept {kept}")
        if report.flops:
            lines.append(f"FLOPs {report.flops['baseline']} -> {report.flops['total']} "
                         f"(reduction {report.flops['reduction']:.4f})")
        text = "\n".join(lines) + "\n"
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)


COMMANDS = {"flops": cmd_flops, "cluster": cmd_cluster, "select": cmd_select,
            "pipeline": cmd_pipeline, "report": cmd_report}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except PruneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyError as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
