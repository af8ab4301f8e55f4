"""Command-line runner: ``pinlab run --config PATH`` and ``pinlab suite``.

Exit status: 0 success, 1 runtime or acceptance failure, 2 validation error,
3 results emitted but some flagged as saturated by a finite table.
"""
from __future__ import annotations

import argparse
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, acceptance, bounds, chaos, homogeneous, quenched
from ._accel import backend, default_threads, set_threads
from .config import SCHEMA_VERSION, ConfigError, ExperimentConfig, load_config
from .io import sha256_file, write_csv, write_json
from .renewal import (SlowlyVarying, build_kernel_srw, build_kernel_stable, intersection_tables,
                      renewal_mass)
from .rng import MASK64, task_seed

EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_SATURATED = 0, 1, 2, 3


def build_tables(cfg: ExperimentConfig, method: str = "auto"):
    m = cfg.model
    if m["flavor"] == "stable_like":
        sv = SlowlyVarying(m["sv"]["kind"], m["sv"]["c"], m["sv"]["kappa"])
        kern = build_kernel_stable(m["alpha"], sv, cfg.n_max)
    else:
        kern = build_kernel_srw(m["p"], cfg.n_max, m["flavor"].split("_", 1)[1])
    return renewal_mass(kern, method)


class Run:
    """Collects task status and artifacts for one invocation."""

    def __init__(self, out: Path):
        self.out = out
        self.tasks: list[dict] = []
        self.artifacts: list[Path] = []

    def task(self, name: str, fn):
        t0 = time.perf_counter()
        entry = {"task": name}
        try:
            saturated = bool(fn())
            entry["status"] = "saturated" if saturated else "ok"
        except Exception as exc:  # recorded, reported through the exit code
            entry["status"] = "failed"
            entry["error"] = f"{type(exc).__name__}: {exc}"
            print(f"pinlab: task {name} failed: {entry['error']}", file=sys.stderr)
        entry["runtime_s"] = time.perf_counter() - t0
        self.tasks.append(entry)

    def csv(self, name: str, header, rows) -> Path:
        path = write_csv(self.out / name, header, rows)
        self.artifacts.append(path)
        return path

    def adopt(self, path: Path):
        self.artifacts.append(Path(path))

    def exit_code(self) -> int:
        states = {t["status"] for t in self.tasks}
        if "failed" in states:
            return EXIT_FAIL
        return EXIT_SATURATED if "saturated" in states else EXIT_OK


# --------------------------------------------------------------------------
# commands

def cmd_kernel(cfg: ExperimentConfig, run: Run):
    def go():
        T = build_tables(cfg, cfg.options.get("method", "auto"))
        path = T.dump_csv(run.out / "kernel.csv")
        run.adopt(path)
        return False
    run.task("kernel", go)


def cmd_pure(cfg: ExperimentConfig, run: Run):
    def go():
        T = build_tables(cfg)
        hs = cfg.grids["h"]
        rows = homogeneous.free_energy_curve(T, hs)
        run.csv("free_energy.csv", ("h", "F", "G_residual"), rows)
        return any(homogeneous.pure_free_energy_flagged(T, h)[1] for h in hs)
    run.task("pure", go)


REPLICA_HEADER = ("replica", "logZ", "boundary", "beta", "h", "N", "seed")
QUENCH_SUMMARY_HEADER = ("beta", "h", "N", "boundary", "replicas", "mean_logZ_over_N", "stderr",
                         "annealed_logZ_over_N", "seed")


def cmd_quench(cfg: ExperimentConfig, run: Run):
    T = build_tables(cfg)
    boundary = cfg.options.get("boundary", "constrained")
    reps, summ = [], []
    for beta in cfg.grids["beta"]:
        for h in cfg.grids["h"]:
            for N in cfg.grids["N"]:
                def go(beta=beta, h=h, N=N):
                    s = task_seed(cfg.seed, f"quench:{beta!r}:{h!r}:{N}")
                    lc, lf = quenched.log_partitions(T, cfg.law, beta, h, N, cfg.replicas, s)
                    lz = lc if boundary == "constrained" else lf
                    reps.extend((r, v, boundary, beta, h, N, s) for r, v in enumerate(lz.tolist()))
                    m, se = quenched._mean_stderr(lz / N)
                    ann = homogeneous.homo_partition(T, h, N, boundary).log_value / N
                    summ.append((beta, h, N, boundary, cfg.replicas, m, se, ann, s))
                    return False
                run.task(f"quench beta={beta} h={h} N={N}", go)
    run.csv("replicas.csv", REPLICA_HEADER, reps)
    run.csv("quench_summary.csv", QUENCH_SUMMARY_HEADER, summ)


def cmd_chaos(cfg: ExperimentConfig, run: Run):
    T = build_tables(cfg)
    samples = int(cfg.options.get("samples", cfg.replicas))
    wrows, mrows = [], []
    for n in cfg.grids["N"]:
        for t in cfg.grids["t"]:
            for q in cfg.grids["q"]:
                def go(n=n, t=t, q=q):
                    s = task_seed(cfg.seed, f"chaos-w:{n}:{t}:{q}")
                    W, _ = chaos.sample_w(T, n, t, q, samples, s)
                    wrows.extend((i, w, n, t, q) for i, w in enumerate(W.tolist()))
                    return False
                run.task(f"w n={n} t={t} q={q}", go)
    for ell in cfg.grids.get("ell", cfg.grids["N"]):
        for t in cfg.grids["t"]:
            for q in cfg.grids["q"]:
                def go(ell=ell, t=t, q=q):
                    mrows.append((ell, t, q, chaos.chaos_second_moment_exact(T, ell=ell, t=t, order=q)))
                    return False
                run.task(f"second moment ell={ell} t={t} q={q}", go)
    run.csv("w_samples.csv", ("sample", "W", "n", "t", "q"), wrows)
    run.csv("chaos_second_moment.csv", ("ell", "t", "q", "exact_second_moment"), mrows)


def cmd_bounds(cfg: ExperimentConfig, run: Run):
    T = build_tables(cfg)
    o = cfg.options
    finite = bool(o.get("finite_size", True))
    inter = intersection_tables(T, o.get("intersection_horizon")) if finite else None
    kw = {k: int(o[k]) for k in ("n_cap", "pz_cap") if k in o}
    rows = []
    for beta in cfg.grids["beta"]:
        for eps in cfg.grids["eps"]:
            def go(beta=beta, eps=eps):
                b = bounds.hc_bracket(T, cfg.law, beta, eps, finite_size=finite, replicas=cfg.replicas,
                                      seed=task_seed(cfg.seed, f"bounds:{beta!r}:{eps!r}"), inter=inter,
                                      **kw)
                rows.append(b)
                return b.saturated
            run.task(f"bracket beta={beta} eps={eps}", go)
    path = bounds.dump_bracket_csv(run.out / "bracket.csv", rows)
    run.adopt(path)


def _print_line(res):
    print(acceptance.format_line(res), flush=True)


def cmd_suite(cfg: ExperimentConfig | None, run: Run, seed: int, tol_scale: float = 1.0, only=None):
    results: list = []

    def go():
        results.extend(acceptance.run_suite(run.out, seed=seed, tol_scale=tol_scale, only=only,
                                            log=_print_line))
        for name in ("acceptance.csv", "chaos_grid.csv", "w_samples.csv", "bracket.csv"):
            if (run.out / name).exists():
                run.adopt(run.out / name)
        failed = [r for r in results if not r.passed]
        if failed:
            raise RuntimeError("failed criteria: " + ", ".join(str(r.number) for r in failed))
        return False
    run.task("suite", go)
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} criteria passed", flush=True)


COMMANDS = {"kernel": cmd_kernel, "pure": cmd_pure, "quench": cmd_quench, "chaos": cmd_chaos,
            "bounds": cmd_bounds}


# --------------------------------------------------------------------------
# entry point

def _utc() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def _write_manifest(run: Run, resolved: dict | None, seed: int, threads: int, started: str):
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config": resolved,
        "seed": seed,
        "started_utc": started,
        "finished_utc": _utc(),
        "tasks": run.tasks,
        "artifacts": {p.name: sha256_file(p) for p in run.artifacts if p.exists()},
        "backend": backend(),
        "threads": threads,
        "version": __version__,
    }
    write_json(run.out / "manifest.json", manifest)


def _seed_arg(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v <= MASK64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _threads_arg(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid thread count {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return v


def _only_arg(text: str) -> frozenset:
    try:
        nums = frozenset(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid criterion list {text!r}") from None
    bad = sorted(n for n in nums if not 1 <= n <= 16)
    if not nums or bad:
        raise argparse.ArgumentTypeError("criteria are numbered 1..16")
    return nums


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pinlab", description="Disordered pinning experiments.")
    ap.add_argument("--version", action="version", version=f"pinlab {__version__}")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run an experiment described by a JSON config")
    r.add_argument("--config", required=True, help="path to the JSON config")
    s = sub.add_parser("suite", help="run the acceptance battery")
    for p in (r, s):
        p.add_argument("--seed", type=_seed_arg, help="override the seed (unsigned 64-bit)")
        p.add_argument("--threads", type=_threads_arg, help="numba thread count (default PINLAB_THREADS)")
        p.add_argument("--out", help="output directory")
    s.add_argument("--only", type=_only_arg, help="comma-separated criterion numbers (default: all)")
    s.add_argument("--force-fail", action="store_true", help=argparse.SUPPRESS)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = _utc()
    cfg = None
    if args.cmd == "run":
        try:
            cfg = load_config(args.config)
        except ConfigError as exc:
            print(f"pinlab: invalid config {args.config}: {exc}", file=sys.stderr)
            return EXIT_INVALID
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads is not None:
            cfg.threads = args.threads
        if args.out is not None:
            cfg.outputs["dir"] = args.out
        out, seed, threads = Path(cfg.outputs["dir"]), cfg.seed, cfg.threads
    else:
        out = Path(args.out or "pinlab_suite")
        seed = args.seed if args.seed is not None else acceptance.DEFAULT_SEED
        threads = args.threads
    threads = set_threads(threads if threads is not None else default_threads())
    out.mkdir(parents=True, exist_ok=True)
    run = Run(out)
    if cfg is None or cfg.command == "suite":
        cmd_suite(cfg, run, seed, tol_scale=0.0 if getattr(args, "force_fail", False) else 1.0,
                  only=getattr(args, "only", None))
    else:
        try:
            COMMANDS[cfg.command](cfg, run)
        except Exception as exc:
            run.tasks.append({"task": cfg.command, "status": "failed",
                              "error": f"{type(exc).__name__}: {exc}", "runtime_s": 0.0})
            print(f"pinlab: {cfg.command} failed: {exc}", file=sys.stderr)
    _write_manifest(run, cfg.resolved() if cfg is not None else None, seed, threads, started)
    code = run.exit_code()
    if code == EXIT_SATURATED:
        print("pinlab: some results are flagged as saturated (finite table horizon)", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
