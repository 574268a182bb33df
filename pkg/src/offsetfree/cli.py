"""Command-line simulator.

    offsetfree --scenario vdp-generic-pdm --out results/
    offsetfree --config my.yaml --out results/ --seed 3 --steps 100
    offsetfree --all --out results/

Each run writes ``<name>.csv`` (per-sample log) and ``<name>.metrics.txt``;
``--all`` also writes ``comparison.txt`` with one row per preset.  Files are
written to a temporary name first and renamed, so a failed run leaves no
partial output.  Exit status is 0 on success, 1 on a simulation failure and
2 on a usage or config error.
"""

import argparse
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

from .closedloop import metrics, run
from .errors import OffsetFreeError
from .scenarios import PRESET_NAMES, ConfigError, build_scenario, load_config, load_preset_config

log = logging.getLogger("offsetfree")


def _parser():
    p = argparse.ArgumentParser(prog="offsetfree", description="Offset-free NMPC closed-loop simulator.")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", choices=PRESET_NAMES, metavar="NAME",
                     help="shipped preset: " + ", ".join(PRESET_NAMES))
    src.add_argument("--config", type=Path, help="YAML scenario file")
    src.add_argument("--all", action="store_true", help="run every preset and write comparison.txt")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--steps", type=int, default=None, help="override the number of samples")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _write_atomic(files):
    """Write ``{path: text}`` so that either every file appears or none does."""
    temps, done = {}, []
    try:
        for path, text in files.items():
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
            temps[path] = tmp
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
        for path, tmp in temps.items():
            os.replace(tmp, path)
            done.append(path)
    except BaseException:
        for path, tmp in temps.items():
            if os.path.exists(tmp):
                os.unlink(tmp)
        for path in done:
            path.unlink(missing_ok=True)
        raise


def run_one(cfg, out, seed=None, steps=None):
    """Simulate one config, write its outputs and return ``(name, metrics, seconds)``."""
    scenario = build_scenario(cfg, seed=seed, steps=steps)
    t0 = time.perf_counter()
    lg = run(scenario)
    elapsed = time.perf_counter() - t0
    m = metrics(lg)
    _write_atomic({
        out / f"{scenario.name}.csv": lg.to_csv_string(),
        out / f"{scenario.name}.metrics.txt": m.report(scenario.name),
    })
    log.info("%s: rms %.3g, tail %.3g, %.1f s", scenario.name, m.rms_error, m.max_tail_error, elapsed)
    return scenario.name, m, elapsed


def comparison_table(rows):
    head = f"{'scenario':<20} {'rms_error':>12} {'max_tail_error':>15} {'max_tail_innov':>15} {'seconds':>8}"
    lines = [head]
    for name, m, secs in rows:
        lines.append(f"{name:<20} {m.rms_error:>12.4e} {m.max_tail_error:>15.4e} "
                     f"{m.max_tail_innovation:>15.4e} {secs:>8.1f}")
    return "\n".join(lines) + "\n"


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if args.steps is not None and args.steps < 1:
        print("offsetfree: --steps must be positive", file=sys.stderr)
        return 2
    out = args.out
    try:
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise PermissionError(f"output directory {out} is not writable")
        if args.all:
            configs = [load_preset_config(n) for n in PRESET_NAMES]
        elif args.scenario:
            configs = [load_preset_config(args.scenario)]
        else:
            configs = [load_config(args.config)]
    except (ConfigError, OSError, ValueError) as exc:
        print(f"offsetfree: {exc}", file=sys.stderr)
        return 2

    rows = []
    try:
        for cfg in configs:
            rows.append(run_one(cfg, out, args.seed, args.steps))
            if not args.all:
                print(rows[-1][1].report(rows[-1][0]), end="")
        if args.all:
            table = comparison_table(rows)
            _write_atomic({out / "comparison.txt": table})
            print(table, end="")
    except (ConfigError, KeyError, TypeError) as exc:
        print(f"offsetfree: invalid config: {exc}", file=sys.stderr)
        return 2
    except (OffsetFreeError, OSError) as exc:
        print(f"offsetfree: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
