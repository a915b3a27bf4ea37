# backend/scfde/cli.py
# =============================================================================
# `scfde` command line.
#
#   scfde simulate --config exp.toml [--config more.toml] --out results.csv [--seed N] [--jobs K]
#   scfde trace    --config exp.toml --out trace.csv      (also writes trace_obj.csv)
#   scfde verify   [--filter suite-name] [--trials N]
#   scfde serve    [--host 0.0.0.0] [--port 8000]
#
# Every flag can come from an SCFDE_* environment variable (or a .env file in
# the working directory); a flag given on the command line wins.
# =============================================================================

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from dotenv import load_dotenv
from pydantic import ValidationError

from . import __version__
from .errors import ConfigValidationError, ConfigurationError, ScfdeError
from .parsers.config_parser import load_config, with_seed
from .schemas import RunManifest

logger = logging.getLogger(__name__)

ENV_PREFIX = "SCFDE_"


def _env(name: str) -> Optional[str]:
    value = os.getenv(ENV_PREFIX + name)
    return value if value not in (None, "") else None


def _env_int(name: str) -> Optional[int]:
    value = _env(name)
    if value is None:
        return None
    try:
        return int(value)
    except ValueError:
        raise ConfigurationError(f"{ENV_PREFIX}{name} must be an integer, got {value!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scfde", description="SC-FDE MIMO relay transceiver design and simulation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING… (env SCFDE_LOG_LEVEL, default INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the Monte-Carlo sweep of one or more configs into a CSV")
    sim.add_argument("--config", action="append", default=None, help="experiment TOML, repeatable (env SCFDE_CONFIG, os.pathsep-separated)")
    sim.add_argument("--out", default=None, help="output CSV (env SCFDE_OUT)")
    sim.add_argument("--seed", type=int, default=None, help="override [simulation].seed (env SCFDE_SEED)")
    sim.add_argument("--jobs", type=int, default=None, help="worker processes (env SCFDE_JOBS, default 1)")

    tr = sub.add_parser("trace", help="write the solver convergence trace and the objective-vs-feedback table")
    tr.add_argument("--config", action="append", default=None, help="experiment TOML (env SCFDE_CONFIG)")
    tr.add_argument("--out", default=None, help="trace CSV; the table goes next to it as <stem>_obj.csv (env SCFDE_OUT)")
    tr.add_argument("--seed", type=int, default=None, help="override [simulation].seed (env SCFDE_SEED)")

    ver = sub.add_parser("verify", help="run the invariant suites")
    ver.add_argument("--filter", default=None, help="only suites whose name contains this (env SCFDE_FILTER)")
    ver.add_argument("--trials", type=int, default=100, help="seeded trials per check (default 100)")
    ver.add_argument("--seed", type=int, default=None, help="base seed (env SCFDE_SEED, default 0)")

    srv = sub.add_parser("serve", help="start the HTTP job service")
    srv.add_argument("--host", default=None, help="bind address (env SCFDE_HOST, default 127.0.0.1)")
    srv.add_argument("--port", type=int, default=None, help="port (env SCFDE_PORT, default 8000)")
    return parser


def _manifest(args: argparse.Namespace) -> RunManifest:
    """Merge flags with SCFDE_* variables (flag wins) and validate."""
    configs = getattr(args, "config", None)
    if not configs and _env("CONFIG"):
        configs = _env("CONFIG").split(os.pathsep)
    out = getattr(args, "out", None) or _env("OUT")
    seed = args.seed if args.seed is not None else _env_int("SEED")
    jobs = getattr(args, "jobs", None)
    if jobs is None:
        jobs = _env_int("JOBS") or 1
    suite = {"simulate": "simulate", "trace": "trace", "verify": "verify"}[args.command]
    try:
        return RunManifest(
            suite=suite,
            config_paths=[Path(p) for p in configs or []],
            out=Path(out) if out else None,
            seed=seed,
            jobs=jobs,
            filter=getattr(args, "filter", None) or _env("FILTER"),
        )
    except ValidationError as e:
        fields = [".".join(str(p) for p in err["loc"]) or err["msg"].split(":")[0].replace("Value error, ", "")
                  for err in e.errors()]
        raise ConfigValidationError(fields, "; ".join(err["msg"] for err in e.errors())) from e


# ---------- subcommands ----------
def _simulate(manifest: RunManifest) -> int:
    from .simulator import run_sweep, write_metrics_csv

    runs = []
    for path in manifest.config_paths:
        config = with_seed(load_config(path), manifest.seed)
        logger.info("[simulate] %s: %d SNR point(s) x %d feedback length(s), %d trials",
                    path, len(config.simulation.relay_snr_db), len(config.feedback_lengths), config.simulation.trials)
        runs.append((config, run_sweep(config, jobs=manifest.jobs, progress=True)))
    with open(manifest.out, "w", newline="") as f:
        write_metrics_csv(runs, f)
    print(manifest.out)
    return 0


def _trace(manifest: RunManifest) -> int:
    from .simulator import run_trace

    if len(manifest.config_paths) != 1:
        raise ConfigurationError("trace takes exactly one --config")
    config = with_seed(load_config(manifest.config_paths[0]), manifest.seed)
    table = manifest.out.with_name(f"{manifest.out.stem}_obj.csv")
    with open(manifest.out, "w", newline="") as trace_f, open(table, "w", newline="") as table_f:
        skipped = run_trace(config, trace_f, table_f)
    if skipped:
        logger.warning("[trace] %d trial(s) skipped after solver failures", skipped)
    print(manifest.out)
    print(table)
    return 0


def _verify(manifest: RunManifest, trials: int) -> int:
    from .verify import run_suites

    results = run_suites(manifest.filter, trials=trials, seed=manifest.seed or 0)
    if not results:
        raise ConfigurationError(f"no suite matches filter {manifest.filter!r}")
    for res in results:
        print(f"{res.name:<10} passed={res.passed:<5} failed={res.failed}")
        for failure in res.failures[:5]:
            print(f"    {failure}")
    return 0 if all(r.ok for r in results) else 1


def _serve(args: argparse.Namespace) -> int:
    import uvicorn

    host = args.host or _env("HOST") or "127.0.0.1"
    port = args.port if args.port is not None else (_env_int("PORT") or 8000)
    uvicorn.run("scfde.main:app", host=host, port=port)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv(dotenv_path=Path.cwd() / ".env")
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or _env("LOG_LEVEL") or "INFO").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "serve":
            return _serve(args)
        manifest = _manifest(args)
        if manifest.suite == "simulate":
            return _simulate(manifest)
        if manifest.suite == "trace":
            return _trace(manifest)
        return _verify(manifest, args.trials)
    except ScfdeError as e:
        print(f"scfde: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
