"""Command line interface: ``geoscale <stage> ...`` and ``geoscale run``.

Exit codes: 0 success, 1 usage error, 2 stage failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Callable, Sequence

from geoscale import __version__
from geoscale import pipeline as pl
from geoscale.ingest import Schema, open_text
from geoscale.metrics import DEFAULT_CITY_THRESHOLD, write_table
from geoscale.synth import generate_synthetic

log = logging.getLogger("geoscale")

EXIT_OK, EXIT_USAGE, EXIT_STAGE = 0, 1, 2

# config-file keys whose values are paths, resolved against the config file's directory
PATH_KEYS = {
    "input", "out", "stats", "records", "regions", "pop", "population", "assigned", "homes", "od",
    "od_pop", "od_population", "cities", "capital_out", "table", "residuals", "values", "out_dir",
    "home_regions",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_values(path: str, column: str | None) -> list[float]:
    with open_text(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path} is empty")
        header = [h.strip() for h in header]
        if column is None:
            if len(header) != 1:
                raise UsageError(f"{path} has columns {header}; choose one with --column")
            k = 0
        elif column in header:
            k = header.index(column)
        else:
            raise UsageError(f"column {column!r} not in {header}")
        return [float(row[k]) for row in reader if row and row[k].strip()]


# --------------------------------------------------------------------------
# command handlers; each returns a dict summary printed as JSON


def cmd_ingest(a) -> dict:
    return pl.stage_ingest(a.input, Schema.parse(a.schema), a.out, a.stats, a.threads)


def cmd_assign(a) -> dict:
    return pl.stage_assign(a.records, a.regions, a.pop, a.out, a.threads)


def cmd_homes(a) -> dict:
    stats = a.stats or str(Path(a.out).with_suffix(".stats.json"))
    return pl.stage_homes(a.assigned, a.regions, a.out, stats)


def cmd_attract(a) -> dict:
    if a.mode == "flickr":
        _need(a, "assigned", "homes", "regions", "pop")
        return pl.stage_attract_flickr(a.assigned, a.homes, a.regions, a.pop, a.out)
    if a.mode == "migration":
        _need(a, "od", "pop")
        return pl.stage_attract_migration(a.od, a.pop, a.out)
    _need(a, "cities", "pop")
    capital_out = a.capital_out or str(Path(a.out).with_name(Path(a.out).stem + "_capital.csv"))
    return pl.stage_attract_cities(a.cities, a.pop, a.out, capital_out, a.threshold)


def cmd_fit(a) -> dict:
    return pl.stage_fit(a.table, a.out, a.residuals)


def cmd_dist(a) -> dict:
    values = _read_values(a.values, a.column)
    return pl.stage_dist(values, a.bins, a.out)


def cmd_synth(a) -> dict:
    table = generate_synthetic(a.seed, a.n_regions, a.beta, a.sigma_pop, a.noise, a.log10_a)
    write_table(table, a.out)
    return {"rows": len(table), **table.metadata}


def cmd_run(a) -> dict:
    base = pl.PipelineConfig()
    for f in fields(pl.PipelineConfig):
        value = getattr(a, f.name, None)
        if value is not None:
            setattr(base, f.name, value)
    result = pl.run_pipeline(base)
    if not result.ok:
        raise pl.StageError(result.failed_stage, result.error)
    return {
        "status": result.manifest["status"],
        "manifest": str(result.manifest_path),
        "rerun_identical": result.rerun_identical,
        "outputs": sorted(result.manifest["outputs"]),
    }


def _need(a, *names: str) -> None:
    missing = [n for n in names if getattr(a, n, None) is None]
    if missing:
        raise UsageError(f"--mode {a.mode} needs " + ", ".join("--" + m.replace("_", "-") for m in missing))


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="geoscale", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"geoscale {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def add(name: str, handler: Callable, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="key = value file mirroring the flags; flags win")
        p.set_defaults(handler=handler)
        return p

    p = add("ingest", cmd_ingest, "prune raw TSV metadata into a record CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--schema", default=None, help="e.g. 0,1,2,3,4 or object_id=0,...,width=N")
    p.add_argument("--out", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--threads", type=int, default=1)

    p = add("assign", cmd_assign, "reverse-geocode records to regions")
    p.add_argument("--records", required=True)
    p.add_argument("--regions", required=True)
    p.add_argument("--pop", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)

    p = add("homes", cmd_homes, "infer user home countries")
    p.add_argument("--assigned", required=True)
    p.add_argument("--regions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stats", default=None, help="coverage JSON (default: <out>.stats.json)")

    p = add("attract", cmd_attract, "build an attractiveness table")
    p.add_argument("--mode", choices=["flickr", "migration", "cities"], required=True)
    p.add_argument("--assigned")
    p.add_argument("--homes")
    p.add_argument("--regions")
    p.add_argument("--pop")
    p.add_argument("--od")
    p.add_argument("--cities")
    p.add_argument("--threshold", type=float, default=DEFAULT_CITY_THRESHOLD)
    p.add_argument("--out", required=True)
    p.add_argument("--capital-out", default=None)

    p = add("fit", cmd_fit, "fit a power law to a table")
    p.add_argument("--table", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--residuals", default=None)

    p = add("dist", cmd_dist, "log-binned histogram with log-normal fit")
    p.add_argument("--values", required=True)
    p.add_argument("--column", default=None)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out", required=True)

    p = add("synth", cmd_synth, "write a synthetic attractiveness table")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-regions", type=int, default=238)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--sigma-pop", type=float, default=2.3)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--log10-a", type=float, default=0.0)
    p.add_argument("--out", required=True)

    p = add("run", cmd_run, "run the whole pipeline")
    p.add_argument("--records")
    p.add_argument("--regions")
    p.add_argument("--pop", dest="population")
    p.add_argument("--home-regions")
    p.add_argument("--od")
    p.add_argument("--od-pop", dest="od_population")
    p.add_argument("--cities")
    p.add_argument("--schema")
    p.add_argument("--out-dir")
    p.add_argument("--threads", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--city-threshold", type=float)
    return parser


def _prescan(argv: Sequence[str]) -> tuple[str | None, str | None]:
    """Find the subcommand and the ``--config`` value without full parsing."""
    command = config = None
    it = iter(argv)
    for tok in it:
        if command is None and not tok.startswith("-"):
            command = tok
        elif tok == "--config":
            config = next(it, None)
        elif tok.startswith("--config="):
            config = tok.split("=", 1)[1]
    return command, config


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    """Use ``--config`` values as defaults of the subcommand, then parse."""
    command, config = _prescan(argv)
    choices = parser._subparsers._group_actions[0].choices  # type: ignore[union-attr]
    if config and command in choices:
        cfg_path = Path(config)
        try:
            values = pl.read_config_file(cfg_path)
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read config {cfg_path}: {exc}")
        subparser = choices[command]
        dests = {a.dest: a for a in subparser._actions}
        aliases = {"pop": "population", "od_pop": "od_population"} if command == "run" else {}
        defaults = {}
        for key, value in values.items():
            dest = key.replace("-", "_")
            dest = aliases.get(dest, dest)
            if dest not in dests or dest in ("config", "help", "handler"):
                parser.error(f"config key {key!r} is not an option of '{command}'")
            if dest in PATH_KEYS and value and not Path(value).is_absolute():
                value = str(cfg_path.parent / value)
            defaults[dest] = value
            # a value from the file satisfies required=True
            dests[dest].required = False
        subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    stage = "run" if args.command == "run" else args.command
    try:
        summary = args.handler(args)
    except UsageError as exc:
        print(f"geoscale {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except pl.StageError as exc:
        print(f"geoscale: stage {exc.stage!r} failed: {exc.message}", file=sys.stderr)
        return EXIT_STAGE
    except Exception as exc:  # every other failure is attributed to the stage being run
        print(f"geoscale: stage {stage!r} failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
