"""Command line: ``evolve``, ``eval`` and ``trace``.

Settings are resolved as defaults < ``--config`` file < explicit flags. A
config file is either flat ``key = value`` text using SimConfig/GpConfig
field names, or a ``manifest.json`` written by a previous ``evolve`` run.
"""

from __future__ import annotations

import argparse
import dataclasses
import enum
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .controllers import Evolved, TerminalSet, parse_controller
from .episode import run_episode, write_trace
from .evaluation import CSV_HEADER, PRESETS, PRESETS_BY_NAME, FitnessEvaluator, TrialReport, run_scenarios
from .expr import serialize
from .gp_engine import GpConfig, evolve
from .sim_core import Geometry, SimConfig

log = logging.getLogger("shepherd_gp")

SIM_FIELDS = {f.name: f for f in dataclasses.fields(SimConfig)}
GP_FIELDS = {f.name: f for f in dataclasses.fields(GpConfig)}

# flag dest -> config field it overrides
FLAG_FIELDS = {
    "dogs": "n_dogs",
    "sheep": "n_sheep",
    "pop": "population_size",
    "gens": "generations",
    "sims": "fitness_sims",
    "seed_mode": "seed_mode",
    "steps": "steps",
}


class UsageError(Exception):
    pass


def _coerce(default: Any, text: str, key: str) -> Any:
    try:
        if isinstance(default, enum.Enum):
            return type(default)(text)
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise UsageError(f"{key}: cannot parse {text!r}") from None
    return text


def read_config_file(path: str) -> dict[str, Any]:
    """Flat overrides from a key=value file or a run manifest."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e.strerror}") from None
    if path.endswith(".json"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise UsageError(f"{path}: {e}") from None
        return {**data.get("sim", {}), **data.get("gp", {})}
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def resolve_configs(args: argparse.Namespace) -> tuple[SimConfig, GpConfig]:
    values: dict[str, Any] = {}
    if args.config:
        values.update(read_config_file(args.config))
    for flag, name in FLAG_FIELDS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    if getattr(args, "seed", None) is not None:
        values["master_seed"] = args.seed

    sim_kw, gp_kw = {}, {}
    defaults_sim, defaults_gp = SimConfig(), GpConfig()
    for key, value in values.items():
        if key in SIM_FIELDS:
            target, default = sim_kw, getattr(defaults_sim, key)
        elif key in GP_FIELDS:
            target, default = gp_kw, getattr(defaults_gp, key)
        else:
            raise UsageError(f"unknown config key {key!r}")
        target[key] = _coerce(default, value, key) if isinstance(value, str) else value
    return SimConfig(**sim_kw), GpConfig(**gp_kw)


def _terminals(args: argparse.Namespace, sim: SimConfig) -> TerminalSet:
    ts = TerminalSet.parse(args.terminals) if args.terminals else TerminalSet.for_dogs(sim.n_dogs)
    ts.check(sim)
    return ts


def _as_dict(cfg) -> dict[str, Any]:
    return {k: (v.value if isinstance(v, enum.Enum) else v) for k, v in dataclasses.asdict(cfg).items()}


def _open_out(path: str | None):
    if path is None or path == "-":
        return sys.stdout
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8", newline="\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_evolve(args: argparse.Namespace) -> int:
    sim, gp = resolve_configs(args)
    terminals = _terminals(args, sim)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)

    fitness_fn = FitnessEvaluator(sim, terminals, workers=args.workers)
    best, evo_log = evolve(gp, terminals.arity, fitness_fn)

    paths = {"generations": "generations.csv", "best": "best.sexp", "manifest": "manifest.json"}
    (out / paths["generations"]).write_text(evo_log.to_csv(), encoding="utf-8", newline="\n")
    (out / paths["best"]).write_text(serialize(best.tree, terminals.labels) + "\n", encoding="utf-8",
                                     newline="\n")
    manifest = {
        "tool": "shepherd-gp",
        "version": __version__,
        "command": "evolve",
        "seed": gp.master_seed,
        "terminals": terminals.label,
        "sim": _as_dict(sim),
        "gp": _as_dict(gp),
        "outputs": paths,
    }
    (out / paths["manifest"]).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8",
                                         newline="\n")
    print(f"best fitness {best.fitness!r}")
    return 0


def _load_controller(args: argparse.Namespace, terminals: TerminalSet):
    try:
        return parse_controller(args.controller, terminals)
    except OSError as e:
        raise UsageError(f"cannot read controller file: {e.strerror}: {e.filename}") from None


def cmd_eval(args: argparse.Namespace) -> int:
    sim, _ = resolve_configs(args)
    terminals = _terminals(args, sim)
    controller = _load_controller(args, terminals)
    if args.trials < 1:
        raise UsageError("trials must be ≥ 1")
    if args.scenarios is None:
        presets = [PRESETS_BY_NAME["Default"]]
    elif args.scenarios == "all":
        presets = list(PRESETS)
    else:
        try:
            presets = [PRESETS_BY_NAME[n.strip()] for n in args.scenarios.split(",")]
        except KeyError as e:
            raise UsageError(f"unknown scenario {e.args[0]!r}") from None
    if isinstance(controller, Evolved):
        for p in presets:
            terminals.check(p.apply(sim))
    reports = run_scenarios(controller, presets, args.trials, args.seed or 0, sim, args.workers)
    for r in reports:
        r.controller = args.controller

    fh = _open_out(args.out)
    try:
        if args.format == "json":
            fh.write(json.dumps([dataclasses.asdict(r) for r in reports], indent=2) + "\n")
        else:
            fh.write(CSV_HEADER + "\n")
            for r in reports:
                fh.write(r.csv_row() + "\n")
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_trace(args: argparse.Namespace) -> int:
    sim, _ = resolve_configs(args)
    terminals = _terminals(args, sim)
    controller = _load_controller(args, terminals)
    result = run_episode(controller, sim, Geometry.from_config(sim), args.seed or 0, trace=True)
    fh = _open_out(args.out)
    try:
        write_trace(result.trace, fh)
    finally:
        if fh is not sys.stdout:
            fh.close()
    print(f"captured {result.captured}/{result.n_sheep} in {result.steps_run} steps", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shepherd-gp", description="Evolve and evaluate shepherding dog controllers.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, help="master seed (default 0)")
    shared.add_argument("--config", help="key=value file or manifest.json")
    shared.add_argument("--out", help="output directory (evolve) or file (eval, trace)")
    shared.add_argument("--workers", type=int, default=1, help="parallel episode workers")
    shared.add_argument("--dogs", type=int, help="number of dogs (1 or 3)")
    shared.add_argument("--sheep", type=int, help="number of sheep")
    shared.add_argument("--steps", type=int, help="episode length")
    shared.add_argument("--terminals", help="SingleDog4 or MultiDog12 (default follows --dogs)")
    shared.add_argument("-v", "--verbose", action="store_true")

    ev = sub.add_parser("evolve", parents=[shared], help="run genetic programming")
    ev.add_argument("--pop", type=int, help="population size")
    ev.add_argument("--gens", type=int, help="number of generations")
    ev.add_argument("--sims", type=int, help="episodes per fitness evaluation")
    ev.add_argument("--seed-mode", dest="seed_mode", choices=["FreshPerGeneration", "FixedSuite"])
    ev.set_defaults(func=cmd_evolve)

    es = sub.add_parser("eval", parents=[shared], help="evaluate a controller over many trials")
    es.add_argument("--controller", required=True, help="simple, random or evolved:<file.sexp>")
    es.add_argument("--trials", type=int, default=10_000)
    es.add_argument("--scenarios", help="comma separated preset names, or 'all'")
    es.add_argument("--format", choices=["csv", "json"], default="csv")
    es.set_defaults(func=cmd_eval)

    tr = sub.add_parser("trace", parents=[shared], help="write one episode as JSON lines")
    tr.add_argument("--controller", required=True, help="simple, random or evolved:<file.sexp>")
    tr.set_defaults(func=cmd_trace)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        print("error: workers must be ≥ 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (UsageError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
