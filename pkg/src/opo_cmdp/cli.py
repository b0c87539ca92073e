"""Command-line entry point: ``opo-cmdp {run,sweep,verify,bound}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .harness import (
    CSV_COLUMNS,
    ConfigError,
    ExperimentConfig,
    RunRecord,
    azuma_gap_check,
    baseline_known_model,
    baseline_uniform,
    concentration_check,
    expected_regret,
    lemma_suite,
    loglog_slope,
    pseudo_regret,
    regret_bound,
    run_experiment,
)
from .oracles import hellinger_bound, squared_error_bound

log = logging.getLogger("opo_cmdp")

EXIT_OK, EXIT_CONFIG, EXIT_SUITE, EXIT_IO = 0, 1, 2, 3

REQUIRED_KEYS = {
    "episodes": int, "horizon": int, "layer_widths": list, "num_actions": int,
    "loss_class_size": int, "dyn_class_size": int, "seed": int,
}
OPTIONAL_KEYS = {
    "num_contexts": (int, 1), "delta": (float, 0.1), "bonus_scale": (float, 1.0),
    "loss_mode": (str, "bernoulli"), "context_weights": (list, None),
}


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Strictly validate a decoded config; unknown or mistyped keys are errors."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    unknown = sorted(set(raw) - set(REQUIRED_KEYS) - set(OPTIONAL_KEYS))
    if unknown:
        raise ConfigError(unknown[0], "unknown field")
    values = {}
    for key, typ in REQUIRED_KEYS.items():
        if key not in raw:
            raise ConfigError(key, "missing required field")
        values[key] = raw[key]
    for key, (typ, default) in OPTIONAL_KEYS.items():
        values[key] = raw.get(key, default)
    for key, value in values.items():
        typ = REQUIRED_KEYS.get(key) or OPTIONAL_KEYS[key][0]
        if value is None:
            continue
        if typ is float:
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        elif typ is int:
            ok = isinstance(value, int) and not isinstance(value, bool)
        else:
            ok = isinstance(value, typ)
        if not ok:
            raise ConfigError(key, f"expected {typ.__name__}, got {type(value).__name__}")
    if values["episodes"] < 1:
        raise ConfigError("episodes", "must be >= 1")
    widths = values.pop("layer_widths")
    if not all(isinstance(w, int) and not isinstance(w, bool) for w in widths):
        raise ConfigError("layer_widths", "entries must be integers")
    horizon = values.pop("horizon")
    if horizon != len(widths) - 1:
        raise ConfigError("horizon", f"must equal len(layer_widths) - 1 = {len(widths) - 1}")
    return ExperimentConfig(layer_widths=tuple(widths), **values)


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("<path>", f"cannot read {path}: {exc.strerror}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<json>", str(exc)) from exc
    return config_from_dict(raw)


def config_to_json(config: ExperimentConfig) -> str:
    d = config.to_dict()
    if d["context_weights"] is None:
        del d["context_weights"]
    order = ["episodes", "horizon", "layer_widths", "num_actions", "num_contexts", "loss_class_size",
             "dyn_class_size", "delta", "bonus_scale", "loss_mode", "context_weights", "seed"]
    return json.dumps({k: d[k] for k in order if k in d}, indent=2) + "\n"


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def records_to_csv(records: list[RunRecord]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for r in records:
        lines.append(",".join(_fmt(getattr(r, name)) for name in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def read_metrics_csv(path) -> list[dict]:
    text = Path(path).read_text().splitlines()
    header = text[0].split(",")
    if header != CSV_COLUMNS:
        raise ValueError(f"unexpected header in {path}")
    rows = [line.split(",") for line in text[1:]]
    if any(len(row) != len(header) for row in rows):
        raise ValueError(f"ragged row in {path}")
    return [dict(zip(header, row)) for row in rows]


def _suite_lines(result):
    lemma = lemma_suite(result)
    conc = concentration_check(result)
    lines = lemma.lines() + [
        f"concentration_{name}: {'PASS' if c.passed else 'FAIL'} (checked={c.checked}, "
        f"violations={c.violations}, worst_slack={c.worst_slack:.6g})" for name, c in conc.items()]
    passed = lemma.passed and all(c.passed for c in conc.values())
    return passed, lines


def write_plot(path: Path, curves: dict[str, list[float]]) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "opo-cmdp"
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, curve in curves.items():
        ax.plot(range(1, len(curve) + 1), curve, label=label)
    ax.set_xlabel("episode")
    ax.set_ylabel("cumulative pseudo-regret")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def execute_run(config: ExperimentConfig, out: Path, plot: bool = False) -> tuple[int, dict]:
    """Run, write outputs into ``out`` and return (exit status, summary numbers)."""
    result = run_experiment(config)
    uniform = baseline_uniform(config)
    known = baseline_known_model(config)
    passed, suite_lines = _suite_lines(result)
    azuma = azuma_gap_check(result, config.delta, config.horizon)
    summary = {
        "seed": config.seed,
        "pseudo_regret": pseudo_regret(result),
        "expected_regret": expected_regret(result),
        "loglog_slope": loglog_slope(result),
        "uniform_regret": pseudo_regret(uniform),
        "known_model_regret": pseudo_regret(known),
        "regret_bound": regret_bound(config),
        "azuma": azuma.passed,
        "suites": passed,
    }
    text = [
        f"episodes: {config.episodes}",
        f"seed: {config.seed}",
        f"pseudo_regret: {_fmt(summary['pseudo_regret'])}",
        f"expected_regret: {_fmt(summary['expected_regret'])}",
        f"uniform_baseline_regret: {_fmt(summary['uniform_regret'])}",
        f"known_model_baseline_regret: {_fmt(summary['known_model_regret'])}",
        f"loglog_slope_second_half: {_fmt(summary['loglog_slope'])}",
        f"regret_bound: {_fmt(summary['regret_bound'])}",
        f"azuma_gap: {'PASS' if azuma.passed else 'FAIL'} (slack={azuma.worst_slack:.6g})",
        *suite_lines,
        f"suites: {'PASS' if passed else 'FAIL'}",
    ]
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(config_to_json(config))
        (out / "metrics.csv").write_text(records_to_csv(result.records))
        (out / "summary.txt").write_text("\n".join(text) + "\n")
        if plot:
            write_plot(out / "regret.svg", {
                "OPO-CMDP": [r.cum_regret for r in result.records],
                "uniform": [r.cum_regret for r in uniform.records],
                "known model": [r.cum_regret for r in known.records],
            })
    except OSError as exc:
        log.error("cannot write outputs to %s: %s", out, exc)
        return EXIT_IO, summary
    return (EXIT_OK if passed else EXIT_SUITE), summary


def _load(args) -> ExperimentConfig:
    config = parse_config(args.config)
    if getattr(args, "seed", None) is not None:
        config = replace(config, seed=args.seed)
    return config


def cmd_run(args) -> int:
    config = _load(args)
    status, summary = execute_run(config, Path(args.out), args.plot)
    print(f"pseudo_regret={_fmt(summary['pseudo_regret'])} suites={'PASS' if summary['suites'] else 'FAIL'}")
    return status


def _sweep_one(job):
    config, out, plot = job
    return execute_run(config, out, plot)


def cmd_sweep(args) -> int:
    config = _load(args)
    out = Path(args.out)
    jobs = [(replace(config, seed=s), out / f"seed_{s}", args.plot) for s in args.seeds]
    workers = args.workers or min(len(jobs), os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(job) for job in jobs]
    keys = ["seed", "pseudo_regret", "expected_regret", "loglog_slope", "uniform_regret", "azuma", "suites"]
    rows = [",".join(keys)] + [",".join(_fmt(s[k]) for k in keys) for _, s in results]
    try:
        (out / "sweep.csv").write_text("\n".join(rows) + "\n")
    except OSError as exc:
        log.error("cannot write sweep summary: %s", exc)
        return EXIT_IO
    statuses = [status for status, _ in results]
    if EXIT_IO in statuses:
        return EXIT_IO
    return EXIT_SUITE if EXIT_SUITE in statuses else EXIT_OK


def cmd_verify(args) -> int:
    config = _load(args)
    run_dir = Path(args.run_dir) if args.run_dir else None
    result = run_experiment(config)
    passed, lines = _suite_lines(result)
    if run_dir is not None:
        try:
            stored = (run_dir / "metrics.csv").read_text()
            rows = read_metrics_csv(run_dir / "metrics.csv")
        except (OSError, ValueError) as exc:
            log.error("cannot read run directory %s: %s", run_dir, exc)
            return EXIT_IO
        same = stored == records_to_csv(result.records)
        lines.append(f"metrics_reproduced: {'PASS' if same else 'FAIL'}")
        sq_b = squared_error_bound(config.horizon, config.episodes, config.loss_class_size, config.delta)
        hel_b = hellinger_bound(config.horizon, config.episodes, config.dyn_class_size, config.delta)
        stored_ok = all(float(r["sq_err_diag"]) <= sq_b and float(r["hellinger_diag"]) <= hel_b for r in rows)
        lines.append(f"stored_concentration: {'PASS' if stored_ok else 'FAIL'}")
        passed = passed and same and stored_ok
    print("\n".join(lines))
    return EXIT_OK if passed else EXIT_SUITE


def cmd_bound(args) -> int:
    print(repr(regret_bound(_load(args))))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opo-cmdp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="experiment config (JSON)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("run", help="run one experiment")
    common(p)
    p.add_argument("--out", default="runs/latest")
    p.add_argument("--plot", action="store_true", help="also write regret.svg")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run one experiment per seed")
    p.add_argument("config")
    p.add_argument("--seeds", type=int, nargs="+", required=True)
    p.add_argument("--out", default="runs/sweep")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="rerun the verification suites")
    common(p)
    p.add_argument("--run-dir", default=None, help="completed run to compare against")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bound", help="print the evaluated regret bound")
    common(p)
    p.set_defaults(func=cmd_bound)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
