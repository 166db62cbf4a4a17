"""``sphx <experiment> --config <path> --out <dir>`` command line entry point."""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import platform
import subprocess
import sys
import time
from pathlib import Path

import numba
import numpy as np

from .. import __version__
from .config import BACKENDS, EXPERIMENTS, PRECISIONS, ConfigError, load
from .experiments import run_experiment, write_csv

log = logging.getLogger("sphx")


def _git(*args) -> str | None:
    try:
        out = subprocess.run(["git", *args], cwd=Path(__file__).resolve().parent,
                             capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() if out.returncode == 0 else None


def version_string() -> str:
    """``git describe`` when tags exist, else ``v<version>-0-g<sha>[-dirty]``."""
    described = _git("describe", "--tags", "--dirty", "--always", "--long")
    if described and "-g" in described:
        return described
    sha = _git("rev-parse", "--short", "HEAD")
    if sha is None:
        return f"v{__version__}"
    dirty = "-dirty" if _git("status", "--porcelain", "--untracked-files=no") else ""
    return f"v{__version__}-0-g{sha}{dirty}"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sphx", description="Reduced-precision neighbor-search experiments.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", type=Path, help="key = value file; omitted keys keep their defaults")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", choices=PRECISIONS, help="restrict to one precision")
    p.add_argument("--backend", choices=BACKENDS, help="restrict to one backend (all = all-list)")
    p.add_argument("--print-config", action="store_true",
                   help="print the effective configuration and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = load(args.config, args.experiment, seed=args.seed, out=args.out)
        spec.restrict(args.precision, args.backend)
    except (ConfigError, OSError) as exc:
        print(f"sphx: {exc}", file=sys.stderr)
        return 2
    if args.print_config:
        sys.stdout.write(spec.to_text())
        return 0
    if args.out is None:
        print("sphx: --out is required unless --print-config is given", file=sys.stderr)
        return 2

    started = _dt.datetime.now(_dt.timezone.utc)
    t0 = time.perf_counter()
    progress = None
    if args.verbose:
        progress = lambda done, total: log.info("step %d / %d", done, total)  # noqa: E731
    result = run_experiment(spec, progress=progress)
    paths = write_csv(result, args.out)
    manifest = {
        "experiment": spec.name,
        "config": spec.as_json(),
        "seed": spec.seed,
        "precision": args.precision,
        "backend": args.backend,
        "version": version_string(),
        "outputs": [p.name for p in paths],
        "skipped": result.extra.get("skipped", []),
        "started_utc": started.isoformat(),
        "elapsed_seconds": time.perf_counter() - t0,
        "environment": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "numba": numba.__version__,
        },
    }
    with open(Path(args.out) / "run.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
