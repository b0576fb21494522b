"""``passlab`` command line.

Exit status: 0 ok, 1 usage, 2 config, 3 runtime, 4 property violation.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .config import SWEEP_AXES, ConfigError, ScenarioConfig, config_hash, load_config
from .experiments import (
    PropertyViolation,
    dataset_records,
    evaluate_dataset,
    loss_rows,
    outage_study,
    read_dataset,
    simulate,
    sweep,
    train_on_dataset,
    write_dataset,
)
from .predictor import TrainingDivergence, params_from_json, params_to_json
from .rng import MAX_SEED

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME, EXIT_PROPERTY = 0, 1, 2, 3, 4
COMMANDS = ("simulate", "dataset", "train", "eval", "outage", "sweep")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value <= MAX_SEED:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="passlab", description="Beam training experiments for pinching-antenna systems.")
    parser.add_argument("--version", action="version", version=f"passlab {__version__}")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, type=Path, help="scenario JSON file")
    parser.add_argument("--out", required=True, type=Path, help="output directory")
    parser.add_argument("--seed", type=_seed, help="master seed (overrides run.seed)")
    parser.add_argument("--mode", choices=("oracle", "trained", "random"), help="codeword selector")
    parser.add_argument("--params", type=Path, help="predictor parameters (default OUT/params.json)")
    parser.add_argument("--dataset", type=Path, help="dataset file (default OUT/dataset.jsonl)")
    parser.add_argument("--count", type=_positive, help="dataset size (overrides run.dataset_count)")
    parser.add_argument("--axis", choices=tuple(SWEEP_AXES), action="append",
                        help="sweep axis; repeatable, default all")
    return parser


class Run:
    """Output directory bookkeeping: CSV writing and the manifest."""

    def __init__(self, args, cfg: ScenarioConfig):
        self.args = args
        self.manifest = f"manifest_{args.command}.json"
        self.cfg = cfg
        self.seed = args.seed if args.seed is not None else cfg.run.seed
        self.hash = config_hash(cfg)
        self.out: Path = args.out
        self.outputs: list[str] = []
        self.out.mkdir(parents=True, exist_ok=True)

    def footer(self) -> str:
        return f"# manifest={self.manifest} config_sha256={self.hash} seed={self.seed}\r\n"

    def write_csv(self, name: str, rows: Sequence[dict], fields: Optional[Sequence[str]] = None) -> Path:
        if fields is None:
            fields = list(rows[0]) if rows else []
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\r\n")
        writer.writeheader()
        writer.writerows(rows)
        path = self.out / name
        with path.open("w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
            fh.write(self.footer())
        self.record(name)
        return path

    def record(self, name: str) -> None:
        if name not in self.outputs:
            self.outputs.append(name)

    def finish(self, command: str, mode: Optional[str]) -> None:
        doc = {
            "tool": "passlab",
            "version": __version__,
            "command": command,
            "mode": mode,
            "config_sha256": self.hash,
            "seed": self.seed,
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            "outputs": self.outputs,
        }
        (self.out / self.manifest).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")

    def params(self):
        path = self.args.params or self.out / "params.json"
        if not path.exists():
            raise FileNotFoundError(f"predictor parameters not found at {path}")
        return params_from_json(path.read_text(encoding="utf-8"))

    def dataset_path(self) -> Path:
        return self.args.dataset or self.out / "dataset.jsonl"


def cmd_simulate(run: Run, mode: str) -> int:
    params = run.params() if mode == "trained" else None
    rows = simulate(run.cfg, run.seed, mode, params)
    run.write_csv("simulate.csv", rows, ["trial", "user", "codeword", "sinr", "rate", "sum_rate"])
    print(f"simulate: {run.cfg.run.trials} trials, {len(rows)} rows")
    return EXIT_OK


def cmd_dataset(run: Run, mode: str) -> int:
    count = run.args.count or run.cfg.run.dataset_count
    path = run.dataset_path()
    n = write_dataset(path, dataset_records(run.cfg, run.seed, count))
    run.record(str(path.relative_to(run.out)) if path.is_relative_to(run.out) else str(path))
    print(f"dataset: {n} samples -> {path}")
    return EXIT_OK


def cmd_train(run: Run, mode: str) -> int:
    records = read_dataset(run.dataset_path())
    result = train_on_dataset(run.cfg, records, run.seed)
    (run.out / "params.json").write_text(params_to_json(result.params) + "\n", encoding="utf-8")
    run.record("params.json")
    run.write_csv("loss.csv", loss_rows(result.history))
    first, last = result.history[0][3], result.history[-1][3]
    print(f"train: loss {first:.4f} -> {last:.4f} over {len(result.history)} epochs")
    return EXIT_OK


def cmd_eval(run: Run, mode: str) -> int:
    records = read_dataset(run.dataset_path())
    params = run.params() if mode == "trained" else None
    table = evaluate_dataset(run.cfg, records, mode, run.seed, params)
    rows = [{"mode": mode, "metric": k, "value": v} for k, v in table.items()]
    run.write_csv("eval.csv", rows, ["mode", "metric", "value"])
    print("eval: " + ", ".join(f"{k}={v:.4g}" for k, v in table.items()))
    return EXIT_OK


def cmd_outage(run: Run, mode: str) -> int:
    rows = outage_study(run.cfg, run.seed)
    run.write_csv("outage.csv", [r.__dict__ for r in rows])
    bad = [r for r in rows if r.ordering == "violated"]
    equal = sum(r.ordering == "equal" for r in rows)
    if bad:
        print(f"ordering: FAIL ({len(bad)} of {len(rows)} rows have PASS outage above conventional)")
        run.finish("outage", mode)
        return EXIT_PROPERTY
    print(f"ordering: PASS ({len(rows) - equal} strict, {equal} equal)")
    return EXIT_OK


def cmd_sweep(run: Run, mode: str) -> int:
    params = None
    if mode == "trained" or run.args.params is not None:
        params = run.params()
    axes = run.args.axis or list(SWEEP_AXES)
    for axis in axes:
        result = sweep(run.cfg, axis, run.seed, params, extra_modes=(mode,))
        stem = axis.replace("-", "_")
        run.write_csv(f"sweep_{stem}.csv", result.rows, ["axis", "value", "variant", "metric", "mean"])
        run.write_csv(f"timing_{stem}.csv", result.timing, ["axis", "value", "seconds"])
        print(f"sweep {axis}: {len(result.rows)} rows")
    return EXIT_OK


HANDLERS = {
    "simulate": (cmd_simulate, "oracle"),
    "dataset": (cmd_dataset, "oracle"),
    "train": (cmd_train, "trained"),
    "eval": (cmd_eval, "trained"),
    "outage": (cmd_outage, "oracle"),
    "sweep": (cmd_sweep, "oracle"),
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    handler, default_mode = HANDLERS[args.command]
    mode = args.mode or default_mode
    try:
        run = Run(args, cfg)
        status = handler(run, mode)
    except PropertyViolation as exc:
        print(f"property violation: {exc}", file=sys.stderr)
        return EXIT_PROPERTY
    except TrainingDivergence as exc:
        print(f"runtime error: {exc} (epoch {exc.epoch})", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, OSError, ArithmeticError, KeyError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if status == EXIT_OK:
        run.finish(args.command, mode)
    return status


if __name__ == "__main__":
    sys.exit(main())
