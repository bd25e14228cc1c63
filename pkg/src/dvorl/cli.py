"""Command line interface: one subcommand per pipeline stage plus the experiments.

Every subcommand reads ``--config PATH`` (JSON run config), honours
``--seed`` (master seed override) and ``--out DIR`` (output directory
override, default from the config). Stage subcommands read and write the
files that ``run`` produces, so running

    generate, train-dve, value, filter, train-rl (both arms), evaluate (both arms)

by hand with one seed reproduces the artifacts of ``run``.

Exit codes: 0 success, 1 stage failure, 2 usage or config error. Failures
print ``error [<stage>]: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import buffer as buf
from . import dve, neural, offline, pipeline
from .pipeline import BASELINE, DVORL, ConfigError, StageError


class CliError(Exception):
    def __init__(self, stage: str, message: str, code: int = 1):
        super().__init__(message)
        self.stage = stage
        self.code = code


def _load(args) -> tuple[pipeline.RunConfig, Path, dict]:
    cfg = pipeline.load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = Path(args.out if args.out is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out, pipeline.run_seeds(cfg.seed)


def _read_buffer(path: Path, stage: str) -> buf.ReplayBuffer:
    if not path.exists():
        raise CliError(stage, f"missing input {path}")
    return buf.load(path)


def cmd_generate(args) -> None:
    cfg, out, seeds = _load(args)
    source = pipeline.stage_generate_source(cfg, seeds)
    target = pipeline.stage_generate_target(cfg, cfg.target, seeds)
    buf.save(source, out / "source.dvrb")
    buf.save(target, out / "target.dvrb")
    print(f"source: {len(source)} transitions -> {out / 'source.dvrb'}")
    print(f"target: {len(target)} transitions -> {out / 'target.dvrb'}")


def cmd_train_dve(args) -> None:
    cfg, out, seeds = _load(args)
    source = _read_buffer(Path(args.source or out / "source.dvrb"), "train-dve")
    target = _read_buffer(Path(args.target or out / "target.dvrb"), "train-dve")
    net, state = pipeline.stage_train_dve(cfg, source, target, seeds)
    neural.save(net, out / "dve.dvnn")
    dve.write_history_csv(state.history, out / "dve_history.csv")
    print(f"{state.step} updates; final r_rolling {state.r_rolling:.6g} -> {out / 'dve.dvnn'}")


def cmd_value(args) -> None:
    cfg, out, _ = _load(args)
    net_path = Path(args.net or out / "dve.dvnn")
    if not net_path.exists():
        raise CliError("value", f"missing input {net_path}")
    net = neural.load(net_path)
    source = _read_buffer(Path(args.buffer or out / "source.dvrb"), "value")
    valued = pipeline.stage_value(cfg, net, source)
    dve.write_values_csv(valued.values, out / "values.csv")
    print(f"{len(valued.values)} values -> {out / 'values.csv'}")


def cmd_filter(args) -> None:
    cfg, out, _ = _load(args)
    values_path = Path(args.values or out / "values.csv")
    if not values_path.exists():
        raise CliError("filter", f"missing input {values_path}")
    source = _read_buffer(Path(args.buffer or out / "source.dvrb"), "filter")
    values = dve.read_values_csv(values_path)
    if args.threshold is not None:
        cfg = replace(cfg, dve=replace(cfg.dve, selection_threshold=args.threshold))
    filtered = pipeline.stage_filter(cfg, dve.ValuedBuffer(source, values))
    dest = Path(args.output or out / "filtered.dvrb")
    buf.save(filtered, dest)
    print(f"kept {len(filtered)} of {len(source)} transitions (threshold {cfg.dve.selection_threshold!r}) -> {dest}")


def _default_buffer(out: Path, arm: str) -> Path:
    return out / ("source.dvrb" if arm == BASELINE else "filtered.dvrb")


def cmd_train_rl(args) -> None:
    cfg, out, seeds = _load(args)
    data = _read_buffer(Path(args.buffer or _default_buffer(out, args.arm)), "train-rl")
    if len(data) == 0:
        raise CliError("train-rl", "cannot train on an empty buffer")
    trained = pipeline.stage_train_rl(cfg, data, cfg.target, seeds)
    dest = out / f"policy_{args.arm}.dvqp"
    offline.save(trained.policy, dest)
    print(f"{args.arm}: checkpoint {trained.checkpoint} of {cfg.learner.iterations} sweeps -> {dest}")


def cmd_evaluate(args) -> None:
    cfg, out, seeds = _load(args)
    path = Path(args.policy or out / f"policy_{args.arm}.dvqp")
    if not path.exists():
        raise CliError("evaluate", f"missing input {path}")
    policy = offline.load(path)
    result = pipeline.stage_evaluate(cfg, policy, cfg.target, seeds)
    doc = pipeline.eval_document(result, seeds["eval"], args.arm)
    pipeline.write_json(doc, out / f"eval_{args.arm}.json")
    print(f"{args.arm}: mean return {result.mean_return:.6g} +- {result.std_error:.3g} over {cfg.evaluation.episodes} episodes")


def _experiment(kind):
    def command(args) -> None:
        cfg, out, _ = _load(args)
        if kind is not None:
            cfg = replace(cfg, experiment=kind)
        report = pipeline.run(cfg, out)
        if cfg.experiment == pipeline.SINGLE:
            for arm in (BASELINE, DVORL):
                a = report["arms"][arm]
                print(f"{arm}: mean return {a['mean_return']:.6g} +- {a['std_error']:.3g} ({a['buffer_size']} transitions)")
            print(f"report -> {out / 'report.json'}")
        elif cfg.experiment == pipeline.TRANSFER:
            for row in report["grid"]:
                print(f"{row['setting']:>10} {row['arm']:>8} {row['feature_mode']:>17} {row['mean_return']:.4f} +- {row['std_error']:.4f}")
            print(f"table -> {out / 'transfer.csv'}")
        else:
            for row in report["curve"]:
                print(f"remove {row['side']:>7} {row['fraction']:.1f}: {row['mean_return']:.4f} +- {row['std_error']:.4f}")
            print(f"curve -> {out / 'removal.csv'}")

    return command


COMMANDS = {
    "generate": (cmd_generate, "train behaviour policies and write source/target buffers"),
    "train-dve": (cmd_train_dve, "train the data value estimator"),
    "value": (cmd_value, "write per-transition values of the source buffer"),
    "filter": (cmd_filter, "keep transitions whose value reaches the threshold"),
    "train-rl": (cmd_train_rl, "train the offline learner on one arm's buffer"),
    "evaluate": (cmd_evaluate, "evaluate one arm's policy on the target domain"),
    "run": (_experiment(None), "run the experiment named in the config (default: single)"),
    "bench-transfer": (_experiment(pipeline.TRANSFER), "transfer benchmark grid"),
    "bench-removal": (_experiment(pipeline.REMOVAL), "high/low-value removal curve"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dvorl", description="Data valuation for offline RL.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    for name, (fn, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", required=True, metavar="PATH", help="JSON run config")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        p.add_argument("--out", default=None, metavar="DIR", help="output directory (overrides the config)")
        if name == "train-dve":
            p.add_argument("--source", metavar="PATH", help="source buffer (default OUT/source.dvrb)")
            p.add_argument("--target", metavar="PATH", help="target buffer (default OUT/target.dvrb)")
        if name == "value":
            p.add_argument("--net", metavar="PATH", help="value network (default OUT/dve.dvnn)")
            p.add_argument("--buffer", metavar="PATH", help="buffer to value (default OUT/source.dvrb)")
        if name == "filter":
            p.add_argument("--values", metavar="PATH", help="values CSV (default OUT/values.csv)")
            p.add_argument("--buffer", metavar="PATH", help="buffer to filter (default OUT/source.dvrb)")
            p.add_argument("--threshold", type=float, help="selection threshold (overrides the config)")
            p.add_argument("--output", metavar="PATH", help="filtered buffer (default OUT/filtered.dvrb)")
        if name in ("train-rl", "evaluate"):
            p.add_argument("--arm", choices=(BASELINE, DVORL), default=BASELINE)
        if name == "train-rl":
            p.add_argument("--buffer", metavar="PATH", help="training buffer (default by arm)")
        if name == "evaluate":
            p.add_argument("--policy", metavar="PATH", help="policy file (default OUT/policy_ARM.dvqp)")
        p.set_defaults(func=fn, stage=name)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return 2
    except CliError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return exc.code
    except StageError as exc:
        print(f"error [{exc.stage}]: {exc.cause}", file=sys.stderr)
        return 1
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error [{args.stage}]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
