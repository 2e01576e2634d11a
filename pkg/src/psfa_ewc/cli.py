"""Command-line entry point: ``psfa-ewc {simulate,train,update,monitor,evaluate}``.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical failure. ``PSFA_EWC_LOG_LEVEL`` sets the log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .evaluation import run_situation_matrix, summarize, write_report
from .inference import ConvergenceError
from .learning import NumericalError
from .monitoring import monitor_stream
from .persistence import ModelBundle, load_bundle, read_data_csv, save_bundle, write_data_csv
from .pipeline import PipelineConfig, TrainedMode, train_mode
from .simulator import ScenarioError, builtin_scenario, load_scenario, simulate_scenario

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
LOG_ENV = "PSFA_EWC_LOG_LEVEL"
MONITOR_COLUMNS = ["index", "T2", "SPE", "S2", "T2_flag", "SPE_flag", "S2_flag", "label"]

log = logging.getLogger("psfa_ewc")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _scenario(ref: str):
    """A scenario file path, or the name of a shipped scenario."""
    path = Path(ref)
    if path.exists():
        return load_scenario(path)
    if path.suffix or os.sep in ref:
        raise FileNotFoundError(f"scenario file not found: {ref}")
    return builtin_scenario(ref)


def _config(path, **overrides) -> PipelineConfig:
    doc = PipelineConfig.load(path).to_dict() if path else PipelineConfig().to_dict()
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig.from_dict(doc)


def _bundle(trained: TrainedMode, mode_ids, standardizers, cfg: PipelineConfig) -> ModelBundle:
    return ModelBundle(
        params=trained.params,
        importance=trained.importance,
        monitor=trained.monitor,
        mode_ids=tuple(mode_ids),
        standardizers=dict(standardizers),
        config=cfg.to_dict(),
    )


def cmd_simulate(args) -> int:
    scenario = _scenario(args.scenario)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for md in simulate_scenario(scenario, args.seed):
        write_data_csv(out / f"{md.mode_id}_train.csv", scenario.variables, md.train)
        write_data_csv(out / f"{md.mode_id}_test.csv", scenario.variables, md.test)
    log.info("wrote %d modes to %s", len(scenario.modes), out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args.config, p=args.p)
    _, data = read_data_csv(args.data)
    trained = train_mode(data, cfg)
    save_bundle(_bundle(trained, [args.mode_id], {args.mode_id: trained.standardizer}, cfg), args.out)
    log.info("trained mode %s: %d EM iterations", args.mode_id, trained.report.iterations)
    return EXIT_OK


def cmd_update(args) -> int:
    if Path(args.out).resolve() == Path(args.model).resolve():
        raise ValueError("--out must differ from --model; the input model is never overwritten")
    bundle = load_bundle(args.model)
    cfg = _config(args.config, p=bundle.params.p)
    if cfg.p != bundle.params.p:
        raise ValueError(f"config p={cfg.p} does not match the model's p={bundle.params.p}")
    _, data = read_data_csv(args.data)
    if data.shape[0] != bundle.params.m:
        raise ValueError(f"data has {data.shape[0]} variables, the model expects {bundle.params.m}")
    mode_id = args.mode_id or f"M{len(bundle.mode_ids) + 1}"
    if mode_id in bundle.mode_ids:
        raise ValueError(f"mode {mode_id!r} is already part of the model")
    trained = train_mode(data, cfg, importance=bundle.importance)
    standardizers = {**bundle.standardizers, mode_id: trained.standardizer}
    save_bundle(_bundle(trained, [*bundle.mode_ids, mode_id], standardizers, cfg), args.out)
    log.info("absorbed mode %s: %d EM iterations", mode_id, trained.report.iterations)
    return EXIT_OK


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def cmd_monitor(args) -> int:
    bundle = load_bundle(args.model)
    monitor = bundle.monitor_for(args.mode_id)
    _, data = read_data_csv(args.data)
    if data.shape[0] != bundle.params.m:
        raise ValueError(f"data has {data.shape[0]} variables, the model expects {bundle.params.m}")
    decisions = monitor_stream(monitor, data)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MONITOR_COLUMNS)
        for i, d in enumerate(decisions, start=1):
            w.writerow([i, _fmt(d.t2), _fmt(d.spe), _fmt(d.s2), *(int(f) for f in d.flags), d.label.value])
    return EXIT_OK


def cmd_evaluate(args) -> int:
    scenario = _scenario(args.scenario)
    cfg = _config(args.config)
    results = run_situation_matrix(scenario, cfg, seed=args.seed)
    write_report(results, args.out_dir)
    print(summarize(results))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="psfa-ewc", description="Continual-learning PSFA process monitoring.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate per-mode train/test CSVs from a scenario")
    p.add_argument("--scenario", required=True, help="scenario JSON path or shipped name (case1, case2, two_mode)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides the scenario's seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit the first mode and write a model bundle")
    p.add_argument("--data", required=True, help="training CSV (header, one sample per row)")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--p", type=int, help="number of slow features (overrides the config)")
    p.add_argument("--mode-id", default="M1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("update", help="absorb a new mode into an existing bundle")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--mode-id")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_update)

    p = sub.add_parser("monitor", help="write the per-sample decision log for a stream")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode-id", help="standardize with this absorbed mode's statistics (default: latest)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("evaluate", help="run the situation matrix on a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_evaluate)
    return parser


def _setup_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (NumericalError, ConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"psfa-ewc: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError, ScenarioError) as exc:
        print(f"psfa-ewc: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
