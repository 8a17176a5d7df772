"""Command-line front end: ``basecagg {run,sweep,compare,verify}``.

Configs are JSON objects whose keys are :class:`~basecagg.sim.SimConfig`
fields; a sweep config adds ``"sweep": {"axis": NAME, "values": [...]}``.
Every CSV is written next to a ``manifest.json`` holding the fully resolved
config, so ``basecagg run --config manifest.json`` reproduces it byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from . import __version__, sim, verify
from .errors import BASecAggError, ConfigError

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1


# -- config and output helpers -----------------------------------------------------


def load_config(path: Optional[str]) -> tuple[sim.SimConfig, Optional[dict]]:
    """Read a config (or a manifest) and return ``(config, sweep_spec)``."""
    if path is None:
        return sim.SimConfig(), None
    try:
        data = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    if "manifest_version" in data:
        data = data["config"]
    data = dict(data)
    sweep = data.pop("sweep", None)
    try:
        return sim.SimConfig.from_dict(data), sweep
    except TypeError as e:
        raise ConfigError(f"{path}: {e}") from e


def child_seed(master: int, index: int) -> int:
    digest = hashlib.sha256(f"{master}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def manifest(cfg: sim.SimConfig, scheme: str, metrics: sim.RunMetrics, command: str) -> dict:
    return {
        "manifest_version": MANIFEST_VERSION,
        "package_version": __version__,
        "command": command,
        "scheme": scheme,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "rows": len(metrics.rows),
        "rejected_uploads": len(metrics.failures),
        "final_accuracy": metrics.final_accuracy,
    }


def _claim(paths: list[Path], force: bool) -> None:
    existing = [str(p) for p in paths if p.exists()]
    if existing and not force:
        raise FileExistsError(f"refusing to overwrite {', '.join(existing)} (use --force)")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(text)


def write_run(out: Path, stem: str, cfg: sim.SimConfig, scheme: str, metrics: sim.RunMetrics, command: str) -> None:
    _write(out / f"{stem}.csv", metrics.to_csv())
    _write(out / f"{stem}.manifest.json" if stem != "metrics" else out / "manifest.json",
           json.dumps(manifest(cfg, scheme, metrics, command), indent=2, sort_keys=True) + "\n")


def _resolve(args) -> tuple[sim.SimConfig, Optional[dict]]:
    cfg, sweep = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg, sweep


# -- commands ------------------------------------------------------------------------------


def cmd_run(args) -> int:
    cfg, _ = _resolve(args)
    out = Path(args.out)
    _claim([out / "metrics.csv", out / "manifest.json"], args.force)
    metrics = sim.run(cfg, args.scheme)
    write_run(out, "metrics", cfg, args.scheme, metrics, "run")
    print(f"{args.scheme}: {len(metrics.rows)} rounds, final accuracy {metrics.final_accuracy:.4f}, "
          f"rejected uploads {len(metrics.failures)} -> {out / 'metrics.csv'}")
    return 0


def cmd_compare(args) -> int:
    cfg, _ = _resolve(args)
    out = Path(args.out)
    stems = {s: s for s in sim.SCHEMES}
    _claim([out / f"{s}.csv" for s in stems] + [out / "summary.csv"], args.force)
    results = {}
    for scheme in sim.SCHEMES:
        results[scheme] = sim.run(cfg, scheme)
        write_run(out, scheme, cfg, scheme, results[scheme], "compare")
    rows = [(s, m.final_accuracy, float(m.accuracy[-min(20, len(m.rows)):].mean())) for s, m in results.items()]
    buf = [["scheme", "final_accuracy", "mean_accuracy_last20"]] + [[s, repr(a), repr(b)] for s, a, b in rows]
    _write(out / "summary.csv", "".join(",".join(map(str, r)) + "\n" for r in buf))
    print(f"{'scheme':<14} {'final acc':>10} {'last-20 mean':>13}")
    for s, a, b in rows:
        print(f"{s:<14} {a:>10.4f} {b:>13.4f}")
    gap = results["basecagg"].final_accuracy - results["fedbuff-float"].final_accuracy
    print(f"gap (basecagg - float): {100 * gap:+.2f} points")
    return 0


def cmd_sweep(args) -> int:
    cfg, sweep = _resolve(args)
    if not sweep:
        raise ConfigError("sweep config needs a 'sweep' object with 'axis' and 'values'")
    unknown = sorted(set(sweep) - {"axis", "values"})
    if unknown:
        raise ConfigError(f"unknown sweep keys: {', '.join(unknown)}")
    axis, values = sweep.get("axis"), sweep.get("values")
    if axis not in cfg.to_dict() or axis == "seed":
        raise ConfigError(f"unknown or unsweepable axis {axis!r}")
    if not isinstance(values, list) or not values:
        raise ConfigError("sweep grid is empty")
    out = Path(args.out)
    dirs = [out / f"{i:02d}_{axis}={v}" for i, v in enumerate(values)]
    _claim([d / "metrics.csv" for d in dirs] + [out / "summary.csv"], args.force)

    summary, failed = [], []
    for i, (value, d) in enumerate(zip(values, dirs)):
        seed = child_seed(cfg.seed, i)
        try:
            child = cfg.replace(**{axis: value, "seed": seed})
            metrics = sim.run(child, args.scheme)
        except BASecAggError as e:
            failed.append((i, value, str(e)))
            summary.append([i, axis, value, seed, "failed", "", str(e)])
            print(f"[{i}] {axis}={value}: FAILED: {e}", file=sys.stderr)
            continue
        write_run(d, "metrics", child, args.scheme, metrics, "sweep")
        summary.append([i, axis, value, seed, "ok", repr(metrics.final_accuracy), ""])
        print(f"[{i}] {axis}={value}: final accuracy {metrics.final_accuracy:.4f}")

    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["index", "axis", "value", "seed", "status", "final_accuracy", "error"])
        w.writerows(summary)
    if failed:
        print(f"{len(failed)} of {len(values)} grid points failed: "
              + ", ".join(f"{axis}={v}" for _, v, _ in failed), file=sys.stderr)
        return 1
    return 0


def cmd_verify(args) -> int:
    results = verify.run_all(fault=args.fault, trials=args.trials)
    for r in results:
        print(r.line())
    bad = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(bad)}/{len(results)} properties passed" + (f"; failed: {', '.join(bad)}" if bad else ""))
    return 1 if bad else 0


# -- entry point ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="basecagg", description="Buffered asynchronous secure aggregation experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scheme=True):
        p.add_argument("--config", metavar="PATH", help="JSON config or manifest (defaults when omitted)")
        p.add_argument("--out", metavar="DIR", default="results", help="output directory (created if absent)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--force", action="store_true", help="overwrite existing result files")
        if scheme:
            p.add_argument("--scheme", choices=sim.SCHEMES, default="basecagg")

    common(sub.add_parser("run", help="run one experiment"))
    common(sub.add_parser("sweep", help="run one experiment per value of a config axis"))
    common(sub.add_parser("compare", help="run the secure scheme and the float baseline on one config"), scheme=False)
    p = sub.add_parser("verify", help="run the oracle property batteries")
    p.add_argument("--fault", choices=[f for f in verify.FAULTS if f], help="inject a fault to check the harness")
    p.add_argument("--trials", type=int, default=1000, help="randomized rounds for the exactness battery")
    return parser


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "compare": cmd_compare, "verify": cmd_verify}


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (BASecAggError, FileExistsError, OSError) as e:
        print(f"basecagg {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
