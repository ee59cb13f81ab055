"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 numeric
failure (divergence or a failed gradient check).
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path

from . import bench, config, gradchecks, plotting, tagcodec, trainer
from .corpus import OUTSIDE, SPLITS, DataError, Utterance, load_split
from .numerics import DivergenceError
from .refine import MODES, decode, to_strings

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def cmd_train(args) -> int:
    values = config.read_config_file(args.config) if args.config else {}
    for item in args.set or []:
        values.update(config.parse_lines([item], "--set"))
    for key in ("mode", "data_dir", "output_dir", "seed", "max_epochs", "preset"):
        if getattr(args, key) is not None:
            values[key] = str(getattr(args, key))
    cfg = config.resolve(values)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved.conf").write_text(config.dump(cfg), encoding="utf-8")
    result = trainer.train(cfg)
    curve = trainer.log_uncoordinated_curve([result.report], out / "uncoordinated_curve.csv")
    points = trainer.read_curve(curve)
    if points:
        plotting.plot_uncoordinated_curves(points, out / "uncoordinated_curve.png")
    print(_dump({"run_report": str(result.report_path), "checkpoint": str(result.checkpoint),
                 "best_epoch": result.report["best_epoch"], "best_dev": result.report["best_dev"],
                 "test": result.report["test"]}))
    return EXIT_OK


def cmd_eval(args) -> int:
    report = trainer.evaluate_checkpoint(args.checkpoint, args.split, args.mode, args.data_dir)
    print(_dump(report.to_dict()))
    return EXIT_OK


def _read_raw(path: str) -> list[Utterance]:
    stream = sys.stdin if path == "-" else open(path, encoding="utf-8")
    with stream:
        lines = [line.split() for line in stream.read().splitlines()]
    return [Utterance(tuple(w.lower() for w in ws), (OUTSIDE,) * len(ws), "", id=i) for i, ws in enumerate(lines) if ws]


def cmd_tag(args) -> int:
    model, vocab, header = trainer.load_model(args.checkpoint)
    data = _read_raw(args.input)
    tags, intents = to_strings(decode(model, data, vocab, args.mode or header.get("mode", "two_pass")), vocab)
    out = contextlib.nullcontext(sys.stdout) if args.output == "-" else open(args.output, "w", encoding="utf-8")
    with out as f:
        for intent, t in zip(intents, tags):
            f.write(f"{intent}\t{' '.join(t)}\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.threads != 1:
        raise UsageError("bench: latency is measured single-threaded; --threads must be 1")
    if args.input:
        data = _read_raw(args.input)
    elif args.data_dir:
        data = load_split(args.data_dir, args.split)
    else:
        raise UsageError("bench: give --data-dir or --input")
    modes = args.modes or (["one_pass", "two_pass"] + (["one_pass_crf"] if args.crf_checkpoint else []))
    checkpoints = {}
    for mode in modes:
        ckpt = args.crf_checkpoint if mode == "one_pass_crf" else args.checkpoint
        if ckpt is None:
            raise UsageError(f"bench: mode {mode} needs --{'crf-' if mode == 'one_pass_crf' else ''}checkpoint")
        checkpoints[mode] = ckpt
    reports = bench.compare_latency(checkpoints, data, args.warmup, args.repeats)
    reference = args.reference or ("one_pass_crf" if "one_pass_crf" in modes else modes[0])
    rows = bench.speedup_table(reports, reference)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "latency.csv").write_text(bench.table_csv(rows), encoding="utf-8")
    (out / "latency.json").write_text(_dump([r.to_dict() for r in reports]), encoding="utf-8")
    plotting.plot_latency(rows, out / "latency.png")
    sys.stdout.write(bench.format_table(rows))
    print(f"hardware: {reports[0].hardware}", file=sys.stderr)
    return EXIT_OK


def cmd_audit(args) -> int:
    total = 0
    with open(args.predictions, encoding="utf-8") as f:
        for n, line in enumerate(f.read().splitlines(), 1):
            for v in tagcodec.validate_crf_rules(line.split()):
                print(f"{n}:{v.pos} {v.prev_tag} {v.tag}")
                total += 1
    print(f"{total} uncoordinated slot tags", file=sys.stderr)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradchecks.run_all(range(args.seeds), args.tolerance)
    print(_dump([r.to_dict() for r in results]))
    return EXIT_OK if all(r.report.ok for r in results) else EXIT_NUMERIC


def cmd_curve(args) -> int:
    reports = [json.loads(Path(p).read_text(encoding="utf-8")) for p in args.reports]
    path = trainer.log_uncoordinated_curve(reports, args.output)
    plotting.plot_uncoordinated_curves(trainer.read_curve(path), Path(args.output).with_suffix(".png"))
    print(path)
    return EXIT_OK


def build_parser() -> Parser:
    p = Parser(prog="refinetag", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    t = sub.add_parser("train", help="train a model and write checkpoint, run report and curve")
    t.add_argument("--config")
    t.add_argument("--mode", choices=MODES)
    t.add_argument("--data-dir", dest="data_dir")
    t.add_argument("--output-dir", dest="output_dir")
    t.add_argument("--preset")
    t.add_argument("--seed", type=int)
    t.add_argument("--max-epochs", dest="max_epochs", type=int)
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="print metrics of a checkpoint on a split as JSON")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", required=True, choices=SPLITS)
    e.add_argument("--mode", choices=MODES)
    e.add_argument("--data-dir", dest="data_dir")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("tag", help="tag raw utterances, one per line")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--input", default="-")
    g.add_argument("--output", default="-")
    g.add_argument("--mode", choices=MODES)
    g.set_defaults(func=cmd_tag)

    b = sub.add_parser("bench", help="per-utterance decode latency and speedups")
    b.add_argument("--checkpoint")
    b.add_argument("--crf-checkpoint", dest="crf_checkpoint")
    b.add_argument("--data-dir", dest="data_dir")
    b.add_argument("--split", default="test", choices=SPLITS)
    b.add_argument("--input", help="raw utterances instead of a split")
    b.add_argument("--modes", nargs="+", choices=MODES)
    b.add_argument("--reference", help="mode the speedups are relative to (default: one_pass_crf if run)")
    b.add_argument("--warmup", type=int, default=50)
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--output-dir", dest="output_dir", default=".")
    b.set_defaults(func=cmd_bench)

    a = sub.add_parser("audit", help="list uncoordinated tags in a seq.out-style file")
    a.add_argument("--predictions", required=True)
    a.set_defaults(func=cmd_audit)

    c = sub.add_parser("gradcheck", help="finite-difference check of model and CRF gradients")
    c.add_argument("--seeds", type=int, default=5)
    c.add_argument("--tolerance", type=float, default=1e-4)
    c.set_defaults(func=cmd_gradcheck)

    r = sub.add_parser("curve", help="merge run reports into one uncoordinated-slot curve")
    r.add_argument("reports", nargs="+")
    r.add_argument("--output", default="uncoordinated_curve.csv")
    r.set_defaults(func=cmd_curve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                            format="%(asctime)s %(name)s %(message)s")
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except config.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError, KeyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
