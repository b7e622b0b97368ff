"""Command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
Only ``wasserstein`` writes to stdout; everything else goes to files under
``--out`` and logs go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .dynamics import DynamicsBlowUp
from .experiments import (ConfigError, SweepConfig, alpha_d, fit_rate, read_results, run_sweep,
                          simulate, verify_bounds)
from .transport import w2_squared

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO,
              "debug": logging.DEBUG}


class UsageError(Exception):
    pass


def _global_flags(parser, suppress):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=default(None), help="YAML sweep configuration")
    parser.add_argument("--out", default=default(None), help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, default=default(None), help="master seed (overrides config)")
    parser.add_argument("--threads", type=int, default=default(1), help="worker processes")
    parser.add_argument("--log-level", choices=sorted(LOG_LEVELS), default=default("warn"))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfmoe", description="Mean-field mixture-of-experts experiments.")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    sub.add_parser("simulate", parents=[common], help="integrate particle systems, export trajectories")
    sub.add_parser("sweep", parents=[common], help="coupled runs over N and seeds")
    fr = sub.add_parser("fit-rate", parents=[common], help="fit the rate law to a results table")
    fr.add_argument("results", help="results.csv from a sweep")
    fr.add_argument("--d", type=int, help="parameter dimension (default: from --config)")
    vb = sub.add_parser("verify-bounds", parents=[common], help="check derivative and Lipschitz bounds")
    vb.add_argument("--trials", type=int, default=1000)
    ws = sub.add_parser("wasserstein", parents=[common], help="exact W2 between two atom files")
    ws.add_argument("a")
    ws.add_argument("b")
    pl = sub.add_parser("plot", parents=[common], help="SVG of mean W2^2 against N")
    pl.add_argument("results")
    pl.add_argument("--d", type=int, help="parameter dimension (default: from --config)")
    return p


def _load_config(args) -> SweepConfig:
    if args.config is None:
        raise UsageError("--config is required for this command")
    cfg = SweepConfig.load(args.config)
    changes = {}
    if args.out is not None:
        changes["out_dir"] = args.out
    if args.seed is not None:
        changes["seed"] = args.seed
    return cfg.replace(**changes) if changes else cfg


def _out_dir(args, cfg=None) -> Path:
    if args.out is not None:
        out = Path(args.out)
    elif cfg is not None:
        out = Path(cfg.out_dir)
    else:
        out = Path(".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dimension(args) -> int:
    if args.d is not None:
        return args.d
    if args.config is not None:
        return SweepConfig.load(args.config).d
    raise UsageError("--d or --config is required")


def read_atoms(path) -> np.ndarray:
    """Atom list: one point per row, ``d`` comma-separated columns, optional header."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    if rows:
        try:
            [float(v) for v in rows[0]]
        except ValueError:
            rows = rows[1:]
    if not rows:
        raise UsageError(f"{path}: no atoms")
    if len({len(r) for r in rows}) != 1:
        raise UsageError(f"{path}: rows have different lengths")
    try:
        return np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from exc


def _cmd_simulate(args):
    simulate(_load_config(args))


def _cmd_sweep(args):
    run_sweep(_load_config(args), threads=max(1, args.threads))


def _cmd_fit_rate(args):
    d = _dimension(args)
    fit = fit_rate(read_results(args.results), d)
    out = _out_dir(args)
    (out / "fit.json").write_text(json.dumps(fit.as_dict(), indent=2) + "\n")


def _cmd_verify_bounds(args):
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    cfg = _load_config(args)
    report = verify_bounds(cfg, trials=args.trials)
    if not report["pass"]:
        logging.getLogger("mfmoe").warning("bound check failed; see bounds_report.json")


def _cmd_wasserstein(args):
    a, b = read_atoms(args.a), read_atoms(args.b)
    if a.shape[1] != b.shape[1]:
        raise UsageError(f"dimension mismatch: {a.shape[1]} != {b.shape[1]}")
    sq = w2_squared(a, b)
    print(repr(math.sqrt(max(sq, 0.0))))
    print(repr(sq))


def _cmd_plot(args):
    d = _dimension(args)
    try:
        rows = read_results(args.results)
    except OSError as exc:
        raise UsageError(f"cannot read {args.results}: {exc.strerror}") from exc
    out = _out_dir(args)
    (out / "w2_vs_N.svg").write_text(render_rate_svg(rows, d))


def render_rate_svg(rows, d: int) -> str:
    """Log-log chart of the seed-mean W2^2 at the last checkpoint with the fitted law."""
    tmax = max(r["t"] for r in rows)
    final = [r for r in rows if r["t"] == tmax]
    Ns = sorted({r["N"] for r in final})
    means = [float(np.mean([r["w2_sq"] for r in final if r["N"] == n])) for n in Ns]
    a = np.array([alpha_d(n, d) for n in Ns])
    m = np.array(means)
    c1 = float(m @ a / (a @ a))
    fitted = c1 * a
    if np.any(m <= 0):
        raise UsageError("W2^2 means must be positive for a log-log chart")

    W, H, pad = 640, 420, 60
    lx = np.log10(np.array(Ns, dtype=float))
    ly_all = np.log10(np.concatenate([m, fitted]))
    x0, x1 = lx.min() - 0.1, lx.max() + 0.1
    y0, y1 = ly_all.min() - 0.1, ly_all.max() + 0.1

    def px(v):
        return pad + (v - x0) / (x1 - x0) * (W - 2 * pad)

    def py(v):
        return H - pad - (v - y0) / (y1 - y0) * (H - 2 * pad)

    def pts(ys):
        return " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(lx, np.log10(ys)))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H - pad}" stroke="black"/>',
    ]
    for n, x in zip(Ns, lx):
        parts.append(f'<text x="{px(x):.2f}" y="{H - pad + 18}" font-size="12" '
                     f'text-anchor="middle">{n}</text>')
    for k in range(int(np.floor(y0)), int(np.ceil(y1)) + 1):
        if y0 <= k <= y1:
            parts.append(f'<text x="{pad - 8}" y="{py(k):.2f}" font-size="12" '
                         f'text-anchor="end">1e{k}</text>')
    parts += [
        f'<polyline fill="none" stroke="#c0392b" stroke-dasharray="6,4" points="{pts(fitted)}"/>',
        f'<polyline fill="none" stroke="#1f4e79" points="{pts(m)}"/>',
    ]
    for x, y in zip(lx, np.log10(m)):
        parts.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="#1f4e79"/>')
    parts += [
        f'<text x="{W / 2:.0f}" y="{H - 15}" font-size="13" text-anchor="middle">N</text>',
        f'<text x="{W / 2:.0f}" y="25" font-size="14" text-anchor="middle">'
        f'mean W2^2 at t={tmax:g} (solid) and C1*alpha_d(N), C1={c1:.4g} (dashed)</text>',
        "</svg>",
    ]
    return "\n".join(parts) + "\n"


COMMANDS = {
    "simulate": _cmd_simulate,
    "sweep": _cmd_sweep,
    "fit-rate": _cmd_fit_rate,
    "verify-bounds": _cmd_verify_bounds,
    "wasserstein": _cmd_wasserstein,
    "plot": _cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=LOG_LEVELS[args.log_level], stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (DynamicsBlowUp, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, UsageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
