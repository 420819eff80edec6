"""Command line: run experiments, sweep a parameter, run the small-graph checks.

Experiment configs are flat ``key = value`` files with dotted keys::

    algorithm = vtMIS
    graph.kind = ba
    graph.n = 40
    scheduler.kind = distributed
    scheduler.p_s = 0.8
    game.delta = 0.88

Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import statistics
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from selfstab import __version__
from selfstab.algorithms import NAMES
from selfstab.core import GainParams
from selfstab.game import GameConfig
from selfstab.scheduler import ADVERSARIES, KINDS, SchedulerPolicy
from selfstab.selfish import DeviationModel
from selfstab.sim import (
    RESULT_COLUMNS,
    ExperimentConfig,
    GraphSpec,
    aggregate_json,
    result_row,
    results_csv,
    run_experiment,
)
from selfstab import verify

EXIT_CONFIG = 2
SWEEP_AXES = ("n", "synchrony", "avg_degree")


class ConfigError(ValueError):
    def __init__(self, source: str, line: Optional[int], message: str):
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


# --- config parsing -----------------------------------------------------------------

def _boolean(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _optional(conv: Callable[[str], object]) -> Callable[[str], object]:
    def parse(text: str):
        return None if text.lower() in ("none", "") else conv(text)
    return parse


def _choice(options: Sequence[str]) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return parse


def _float_list(text: str) -> List[float]:
    return [float(x) for x in text.split(",") if x.strip()]


# key -> (section, field, converter)
KEYS: Dict[str, Tuple[str, str, Callable[[str], object]]] = {
    "algorithm": ("top", "algorithm", _choice(NAMES)),
    "repetitions": ("top", "repetitions", int),
    "seed": ("top", "seed", int),
    "round_limit": ("top", "round_limit", _optional(int)),
    "init": ("top", "init", _choice(("random", "all-out", "random-full"))),
    "pc": ("top", "pc", str),
    "faults": ("top", "faults", int),
    "idle_rounds": ("top", "idle_rounds", _boolean),
    "graph.kind": ("graph", "kind", _choice(("ba", "er", "path", "complete", "star", "file"))),
    "graph.n": ("graph", "n", int),
    "graph.avg_degree": ("graph", "avg_degree", float),
    "graph.p": ("graph", "p", float),
    "graph.seed": ("graph", "seed", _optional(int)),
    "graph.path": ("graph", "path", str),
    "scheduler.kind": ("scheduler", "kind", _choice(KINDS)),
    "scheduler.p_s": ("scheduler", "p_s", float),
    "scheduler.adversary": ("scheduler", "adversary", _choice(ADVERSARIES)),
    "gain.theta": ("gain", "theta", float),
    "gain.zeta": ("gain", "zeta", float),
    "game.mode": ("game", "mode", _choice(("game", "fixed"))),
    "game.delta": ("game", "delta", float),
    "game.horizon": ("game", "horizon", int),
    "game.fixed_p": ("game", "fixed_p", float),
    "game.fixed_q": ("game", "fixed_q", _optional(float)),
    "game.epsilon": ("game", "epsilon", float),
    "game.oracle": ("game", "oracle", _choice(("myopic", "fixed-p"))),
    "game.samples": ("game", "samples", int),
    "game.max_players": ("game", "max_players", int),
    "game.entry_floor": ("game", "entry_floor", float),
    "deviation.kind": ("deviation", "kind", str),
    "deviation.policy": ("deviation", "policy", _choice(("always", "prob", "utility"))),
    "deviation.w": ("deviation", "w", float),
    "sweep.axis": ("sweep", "axis", _choice(SWEEP_AXES)),
    "sweep.values": ("sweep", "values", _float_list),
}


@dataclass(frozen=True)
class Sweep:
    axis: str
    values: Tuple[float, ...]


def parse_config(text: str, source: str = "<config>") -> Tuple[ExperimentConfig, Optional[Sweep]]:
    """Build an experiment from flat dotted keys; errors name the offending line."""
    sections: Dict[str, Dict[str, object]] = {s: {} for s in ("top", "graph", "scheduler", "gain", "game",
                                                               "deviation", "sweep")}
    lines: Dict[str, int] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(source, number, f"expected 'key = value', got {raw.strip()!r}")
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in KEYS:
            raise ConfigError(source, number, f"unknown key {key!r}")
        if key in lines:
            raise ConfigError(source, number, f"{key!r} already set on line {lines[key]}")
        section, name, conv = KEYS[key]
        try:
            sections[section][name] = conv(value)
        except ValueError as exc:
            raise ConfigError(source, number, f"bad value for {key!r}: {exc}") from None
        lines[key] = number

    def build(section: str, factory, **extra):
        try:
            return factory(**sections[section], **extra)
        except (TypeError, ValueError) as exc:
            first = min((n for k, n in lines.items() if k.startswith(section + ".")), default=None)
            raise ConfigError(source, first, f"invalid {section} settings: {exc}") from None

    dev = sections["deviation"]
    try:
        deviation = DeviationModel.parse(str(dev.get("kind", "none")), str(dev.get("policy", "utility")),
                                         float(dev.get("w", 0.0)))
    except ValueError as exc:
        raise ConfigError(source, lines.get("deviation.kind"), str(exc)) from None

    top = dict(sections["top"])
    if "algorithm" not in top:
        raise ConfigError(source, None, "missing required key 'algorithm'")
    cfg = ExperimentConfig(
        graph=build("graph", GraphSpec),
        scheduler=build("scheduler", SchedulerPolicy),
        gain=build("gain", GainParams),
        game=build("game", GameConfig),
        deviation=deviation,
        **top,
    )
    if cfg.pc not in ("synchrony", "inverse-diameter"):
        try:
            float(cfg.pc)
        except ValueError:
            raise ConfigError(source, lines["pc"], f"bad value for 'pc': {cfg.pc!r}") from None
    sweep = None
    if sections["sweep"]:
        if "axis" not in sections["sweep"]:
            raise ConfigError(source, lines.get("sweep.values"), "sweep.values given without sweep.axis")
        values = tuple(sections["sweep"].get("values", ()))
        if not values:
            raise ConfigError(source, lines.get("sweep.values", lines["sweep.axis"]), "sweep axis has no values")
        sweep = Sweep(sections["sweep"]["axis"], values)
    return cfg, sweep


def load_config(path: str) -> Tuple[ExperimentConfig, Optional[Sweep]]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(path, None, f"cannot read config: {exc.strerror}") from None
    return parse_config(text, path)


def effective_seed(cfg: ExperimentConfig, flag: Optional[int]) -> ExperimentConfig:
    """The --seed flag wins, then SELFSTAB_SEED, then the config file."""
    if flag is not None:
        return replace(cfg, seed=flag)
    env = os.environ.get("SELFSTAB_SEED")
    if env:
        try:
            return replace(cfg, seed=int(env))
        except ValueError:
            raise ConfigError("SELFSTAB_SEED", None, f"not an integer: {env!r}") from None
    return cfg


# --- output ----------------------------------------------------------------------------

def results_json(cfg: ExperimentConfig, rows) -> str:
    records = [dict(zip(RESULT_COLUMNS, result_row(cfg, i, s, r))) for i, s, r in rows]
    return json.dumps(records, indent=2) + "\n"


def summary_table(agg: Dict[str, object]) -> str:
    keys = ("avg_rounds", "avg_moves", "jain_index", "reliability", "availability", "success_rate")
    shown = [(k, agg[k]) for k in keys if k in agg]
    width = max(len(k) for k, _ in shown)
    lines = [f"{agg['algorithm']}  ({agg['repetitions']} repetitions)"]
    lines += [f"  {k:<{width}}  {v}" for k, v in shown]
    return "\n".join(lines)


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text)
    return path


def _stderr(xs: Sequence[float]) -> float:
    return statistics.stdev(xs) / math.sqrt(len(xs)) if len(xs) > 1 else 0.0


# --- commands -----------------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = effective_seed(load_config(args.config)[0], args.seed)
    cfg, rows, agg = run_experiment(cfg, args.workers)
    out = Path(args.out)
    if args.format == "json":
        _write(out, "results.json", results_json(cfg, rows))
    else:
        _write(out, "results.csv", results_csv(cfg, rows))
    _write(out, "aggregate.json", aggregate_json(agg))
    print(summary_table(agg))
    return 0


def _apply_axis(cfg: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    if axis == "n":
        return replace(cfg, graph=replace(cfg.graph, n=int(value)))
    if axis == "avg_degree":
        return replace(cfg, graph=replace(cfg.graph, avg_degree=value))
    return replace(cfg, scheduler=replace(cfg.scheduler, p_s=value))


def cmd_sweep(args) -> int:
    cfg, sweep = load_config(args.config)
    if sweep is None:
        raise ConfigError(args.config, None, "a sweep needs sweep.axis and sweep.values")
    cfg = effective_seed(cfg, args.seed)
    aggregates = []
    series: Dict[str, List[Tuple[float, float, float]]] = {"rounds": [], "moves": []}
    for value in sweep.values:
        point, rows, agg = run_experiment(_apply_axis(cfg, sweep.axis, value), args.workers)
        agg = {sweep.axis: value, **agg}
        aggregates.append(agg)
        results = [r for _, _, r in rows]
        for name, pick in (("rounds", lambda r: r.rounds), ("moves", lambda r: r.moves)):
            xs = [float(pick(r)) for r in results]
            series[name].append((value, statistics.fmean(xs), _stderr(xs)))
    out = Path(args.out)
    buf = io.StringIO()
    fields = [sweep.axis] + [k for k in aggregates[0] if k != sweep.axis]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for agg in aggregates:
        w.writerow(agg)
    _write(out, "sweep.csv", buf.getvalue())
    _write(out, "sweep.json", json.dumps(aggregates, indent=2, sort_keys=True) + "\n")
    for name, pts in series.items():
        body = f"# {sweep.axis} mean_{name} stderr\n" + "".join(f"{x:g} {m:.6f} {s:.6f}\n" for x, m, s in pts)
        _write(out, f"{name}.dat", body)
    for agg in aggregates:
        print(f"{sweep.axis}={agg[sweep.axis]:g}  avg_rounds={agg['avg_rounds']}  avg_moves={agg['avg_moves']}")
    return 0


def cmd_verify(args) -> int:
    if args.suite not in verify.SUITES:
        print(f"unknown suite {args.suite!r}; choose from {', '.join(verify.SUITES)}", file=sys.stderr)
        return EXIT_CONFIG
    names = NAMES if args.algorithm == "all" else (args.algorithm,)
    records = []
    for name in names:
        records.extend(verify.SUITES[args.suite](name, args.max_n))
    path = _write(Path(args.out), f"verify_{args.suite}.json", verify.report_json(records))
    failed = [r for r in records if r.verdict != "pass"]
    print(f"{args.suite}: {len(records) - len(failed)}/{len(records)} instances pass  ->  {path}")
    return 1 if failed else 0


# --- entry point ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selfstab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="flat key = value experiment file")
        p.add_argument("--seed", type=int, help="master seed (overrides SELFSTAB_SEED and the file)")
        p.add_argument("--workers", type=int, default=1, help="processes for repetitions")
        p.add_argument("--out", default="results", help="output directory")

    run = sub.add_parser("run", help="run one experiment")
    common(run)
    run.add_argument("--format", choices=("csv", "json"), default="csv", help="per-run results format")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="repeat an experiment along one axis")
    common(sweep)
    sweep.set_defaults(func=cmd_sweep)

    ver = sub.add_parser("verify", help="exhaustive checks on small graphs")
    ver.add_argument("suite", help="legitimacy | nash | containment | weakstab")
    ver.add_argument("--max-n", type=int, default=5, help="largest catalog graph")
    ver.add_argument("--algorithm", default="all", choices=("all",) + NAMES)
    ver.add_argument("--out", default="results")
    ver.set_defaults(func=cmd_verify)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except verify.SizeBoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
