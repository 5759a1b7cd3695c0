"""``cocoa-lab <scenario> [--config FILE] [--seed N] [--out DIR] [--override key=value ...]``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, build_config
from .mdp import MDPStructureError
from .scenarios import CSV_COLUMNS, SCENARIOS, ScenarioResult, defaults_for, run_scenario
from .training import TrainingDiverged

log = logging.getLogger("cocoa_lab")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_BAD_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def format_cell(value) -> str:
    """Exact, locale-free text for one CSV cell."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(value)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return v if math.isfinite(v) else format_cell(v)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_results(result: ScenarioResult, cfg: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with (out / "results.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(CSV_COLUMNS)
        for row in result.rows:
            writer.writerow([format_cell(row.get(c)) for c in CSV_COLUMNS])
    summary = {
        "experiment_id": cfg.experiment_id,
        "scenario": cfg.scenario,
        "passed": result.passed,
        "checks": {k: {"status": "PASS" if v["passed"] else "FAIL",
                       **{a: b for a, b in v.items() if a != "passed"}} for k, v in result.checks.items()},
        "info": result.info,
    }
    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    (out / "config.snapshot").write_text(cfg.snapshot())
    (out / "plot_data.json").write_text(json.dumps(_jsonable(result.series), indent=2, sort_keys=True) + "\n")


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cocoa-lab", description="Run a named credit-assignment experiment.")
    p.add_argument("scenario", help="scenario name, or 'list' to show them")
    p.add_argument("--config", help="YAML or JSON config file")
    p.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
    p.add_argument("--out", help="output directory")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config key with a YAML value, e.g. params.length=40 (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.scenario == "list":
        for name in sorted(SCENARIOS):
            print(f"{name:18s} {SCENARIOS[name].doc}")
        return EXIT_OK
    try:
        cfg = build_config(args.scenario, args.config, args.override, args.seed, args.out,
                           defaults_for(args.scenario))
        result = run_scenario(cfg)
    except (ConfigError, TypeError, KeyError, MDPStructureError) as err:
        print(f"cocoa-lab: {err}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except TrainingDiverged as err:
        print(f"cocoa-lab: training diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    out = Path(cfg.out)
    write_results(result, cfg, out)
    for name, check in result.checks.items():
        print(f"{'PASS' if check['passed'] else 'FAIL'} {name}")
    log.info("wrote %s", out)
    return EXIT_OK if result.passed else EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
