"""Command line entry point: ``morawetz-lab <command> --config <path> --out <dir>``.

Exit status is 0 when every selected check passes, 1 when any fails and 2 on
configuration or run-directory errors.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .artifacts import ArtifactError, compare_runs, load_run, record_determinism, render, write_run
from .checks import run_suite
from .config import SUITES, ConfigError, ExperimentConfig, build_config, load_config

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
THREADS_ENV = "MORAWETZ_LAB_THREADS"


def thread_count(arg: int | None) -> int:
    if arg is not None:
        return arg
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        k = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV}: expected a positive integer, got {raw!r}") from None
    if k < 1:
        raise ConfigError(f"{THREADS_ENV}: expected a positive integer, got {k}")
    return k


def execute(cfg: ExperimentConfig, out: Path, threads: int = 1) -> bool:
    """Run the suite of ``cfg`` into ``out``; True when every check passed."""
    t0 = time.perf_counter()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = run_suite(cfg, pool)
    else:
        results = run_suite(cfg)
    # single writer: files are only written here, after all workers finished
    write_run(out, cfg, results, time.perf_counter() - t0)
    for r in results:
        print(r.line())
    return all(r.passed for r in results)


def report(run_dir: Path, threads: int = 1, rerun: bool = True) -> bool:
    """Rebuild plots and summary; with ``rerun`` also repeat the suite and compare bytes (A8)."""
    run = load_run(run_dir)
    ok = all(c["status"] != "fail" for c in run["manifest"]["checks"] if c["id"] != "A8_determinism")
    if rerun:
        cfg = build_config(run["config"]["suite"], run["config"])
        with tempfile.TemporaryDirectory() as tmp:
            execute(cfg, Path(tmp), threads)
            result = compare_runs(run_dir, tmp)
        record_determinism(run_dir, result)
        print(f"A8_determinism: {'PASS' if result['identical'] else 'FAIL'}")
        ok = ok and result["identical"]
    render(run_dir)
    sys.stdout.write((Path(run_dir) / "summary.txt").read_text())
    return ok


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="morawetz-lab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=SUITES + ("report",))
    ap.add_argument("--config", type=Path, help="JSON config; omitted fields take the suite defaults")
    ap.add_argument("--out", type=Path, help="run directory (for report: the completed run to render)")
    ap.add_argument("--threads", type=int, help=f"worker threads (fallback: ${THREADS_ENV}, then 1)")
    ap.add_argument("--no-rerun", action="store_true", help="report only: skip the determinism rerun")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads: expected a positive integer")
        threads = thread_count(args.threads)
        if args.command == "report":
            if args.out is None:
                raise ConfigError("report needs --out <run dir>")
            return EXIT_PASS if report(args.out, threads, rerun=not args.no_rerun) else EXIT_FAIL
        cfg = load_config(args.command, args.config)
        out = args.out or (Path(cfg.output_dir) if cfg.output_dir else None)
        if out is None:
            raise ConfigError("--out: no output directory given and config.output_dir is unset")
        return EXIT_PASS if execute(cfg, out, threads) else EXIT_FAIL
    except (ConfigError, ArtifactError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
