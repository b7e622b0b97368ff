"""Sweeps over system size and seed, chaos statistics and rate fits.

A sweep is described by a YAML file::

    seed: 0                 # master seed; every random draw derives from it
    d: 6                    # parameter dimension
    mode: rate-fit          # or "simulate"
    expert:
      kind: fourier         # or "quantum"
      features: 4           # fourier: input dimension p
      alpha: 1.0            # optional declared bounds
      beta: 1.0
      circuit: {...}        # quantum: qubits, depth, generators, encoder, observable
    dataset: {n: 4, labels: uniform, A: 1.0, teacher_size: 16}
    dynamics: {T: 1.0, h: 0.01, record_every: 10}
    sweep: {N: [8, 16, 32], M: 2048, seeds: 16}
    output: {dir: out, particles: false}

``seeds`` is either a count (seeds ``0..k-1``) or an explicit list.
"""

from __future__ import annotations

import concurrent.futures as cf
import copy
import csv
import json
import logging
import multiprocessing as mp
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import qsim
from .dynamics import ParticleSystem, integrate
from .experts import (Dataset, FourierExpert, QuantumExpert, drift_field, lipschitz_constant,
                      lipschitz_pair_check, make_dataset, verify_assumption1)
from .mckean import CoupledRun, coupled_initial, integrate_reference
from .torus import Rng, sample_particles, torus_l1_distance
from .transport import w2, w2_squared

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid or inconsistent configuration; the message names the field."""


RESULT_COLUMNS = ["N", "M", "seed", "t", "w2_sq", "pathwise", "pointwise",
                  "loss_interacting", "loss_reference"]
RUN_COLUMNS = ["N", "M", "seed", "pathwise", "pointwise", "w2_sq_final", "runtime_ms"]

_SCHEMA = {
    "seed": None,
    "d": None,
    "mode": None,
    "expert": {"kind", "features", "alpha", "beta", "circuit"},
    "dataset": {"n", "labels", "A", "teacher_size"},
    "dynamics": {"T", "h", "record_every"},
    "sweep": {"N", "M", "seeds"},
    "output": {"dir", "particles"},
}


def alpha_d(N, d):
    """Rate function ``N**(-2/d) + N**(-1/2)``."""
    N = np.asarray(N, dtype=float)
    if np.any(N < 1) or d < 1:
        raise ValueError("need N >= 1 and d >= 1")
    out = N ** (-2.0 / d) + N ** (-0.5)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass
class SweepConfig:
    seed: int = 0
    d: int = 6
    mode: str = "rate-fit"
    expert: dict = field(default_factory=lambda: {"kind": "fourier", "features": 4})
    dataset: dict = field(default_factory=lambda: {"n": 4, "labels": "uniform", "A": 1.0})
    T: float = 1.0
    h: float = 0.01
    record_every: int = 10
    N: list = field(default_factory=lambda: [8, 16, 32, 64, 128, 256])
    M: int = 2048
    seeds: list = field(default_factory=lambda: list(range(16)))
    out_dir: str = "out"
    particles: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.mode not in ("rate-fit", "simulate"):
            raise ConfigError(f"mode: expected 'rate-fit' or 'simulate', got {self.mode!r}")
        if not isinstance(self.d, int) or self.d < 1:
            raise ConfigError("d: must be a positive integer")
        if not self.h > 0:
            raise ConfigError("dynamics.h: step size must be positive")
        if not self.T > 0:
            raise ConfigError("dynamics.T: horizon must be positive")
        if self.h > self.T:
            raise ConfigError("dynamics.h: step size exceeds horizon")
        if self.record_every < 1:
            raise ConfigError("dynamics.record_every: must be >= 1")
        if not self.N:
            raise ConfigError("sweep.N: list of particle counts is empty")
        if any(int(n) < 1 for n in self.N):
            raise ConfigError("sweep.N: particle counts must be >= 1")
        if not self.seeds:
            raise ConfigError("sweep.seeds: no seeds given")
        if self.M < max(self.N):
            raise ConfigError("sweep.M: reference size must be >= max(sweep.N)")
        kind = self.expert.get("kind")
        if kind not in ("fourier", "quantum"):
            raise ConfigError(f"expert.kind: expected 'fourier' or 'quantum', got {kind!r}")
        if kind == "quantum":
            if "circuit" not in self.expert:
                raise ConfigError("expert.circuit: required for quantum experts")
            depth = self.expert["circuit"].get("depth", len(self.expert["circuit"].get("generators", [])))
            if int(depth) != self.d:
                raise ConfigError("expert.circuit.depth: must equal d")
        if int(self.dataset.get("n", 0)) < 1:
            raise ConfigError("dataset.n: need at least one example")
        if self.dataset.get("labels", "uniform") not in ("uniform", "teacher"):
            raise ConfigError("dataset.labels: expected 'uniform' or 'teacher'")
        if self.mode == "rate-fit":
            if self.d <= 4:
                raise ConfigError("d: rate-fit mode requires d > 4")
            if self.M < 8 * max(self.N):
                raise ConfigError("sweep.M: rate-fit mode requires M >= 8 * max(sweep.N)")
        elif self.d <= 4:
            log.warning("d=%d <= 4: runs allowed, but outside the regime of the rate law", self.d)

    @classmethod
    def from_dict(cls, raw: dict) -> "SweepConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config: top level must be a mapping")
        for key, val in raw.items():
            if key not in _SCHEMA:
                raise ConfigError(f"{key}: unknown key")
            allowed = _SCHEMA[key]
            if allowed is not None:
                if not isinstance(val, dict):
                    raise ConfigError(f"{key}: must be a mapping")
                for sub in val:
                    if sub not in allowed:
                        raise ConfigError(f"{key}.{sub}: unknown key")
        dyn = raw.get("dynamics", {})
        sw = raw.get("sweep", {})
        out = raw.get("output", {})
        seeds = sw.get("seeds", 16)
        seeds = list(range(int(seeds))) if isinstance(seeds, int) else [int(s) for s in seeds]
        try:
            return cls(
                seed=int(raw.get("seed", 0)),
                d=int(raw.get("d", 6)),
                mode=str(raw.get("mode", "rate-fit")),
                expert=dict(raw.get("expert", {"kind": "fourier", "features": 4})),
                dataset=dict(raw.get("dataset", {"n": 4, "labels": "uniform", "A": 1.0})),
                T=float(dyn.get("T", 1.0)),
                h=float(dyn.get("h", 0.01)),
                record_every=int(dyn.get("record_every", 10)),
                N=[int(n) for n in sw.get("N", [8, 16, 32, 64, 128, 256])],
                M=int(sw.get("M", 2048)),
                seeds=seeds,
                out_dir=str(out.get("dir", "out")),
                particles=bool(out.get("particles", False)),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "SweepConfig":
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config: not valid YAML ({exc})") from exc
        return cls.from_dict(raw or {})

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "d": self.d, "mode": self.mode,
            "expert": copy.deepcopy(self.expert), "dataset": copy.deepcopy(self.dataset),
            "dynamics": {"T": self.T, "h": self.h, "record_every": self.record_every},
            "sweep": {"N": list(self.N), "M": self.M, "seeds": list(self.seeds)},
            "output": {"dir": self.out_dir, "particles": self.particles},
        }

    def replace(self, **changes) -> "SweepConfig":
        cfg = copy.deepcopy(self)
        for k, v in changes.items():
            setattr(cfg, k, v)
        cfg.validate()
        return cfg


def build_model(config: SweepConfig):
    spec = config.expert
    kind = spec["kind"]
    if kind == "fourier":
        model = FourierExpert.random(Rng(config.seed).child(0), config.d, int(spec.get("features", 4)))
    else:
        model = QuantumExpert(qsim.CircuitSpec.from_config(spec["circuit"]))
    model.alpha = float(spec.get("alpha", 1.0))
    model.beta = float(spec.get("beta", 1.0))
    return model


def _features(model) -> int:
    return model.features if isinstance(model, FourierExpert) else model.circuit.features


def build_problem(config: SweepConfig):
    """Model and dataset, both fixed by the master seed."""
    model = build_model(config)
    ds = config.dataset
    data = make_dataset(model, int(ds.get("n", 4)), Rng(config.seed).child(1), _features(model),
                        labels=ds.get("labels", "uniform"), A=float(ds.get("A", 1.0)),
                        teacher_size=int(ds.get("teacher_size", 16)))
    return model, data


def particle_rng(config: SweepConfig, seed: int) -> Rng:
    return Rng(config.seed).child(2, seed)


# --------------------------------------------------------------------------
# sweep
# --------------------------------------------------------------------------


def _seed_job(cfg_dict: dict, seed: int) -> dict:
    """All N for one seed against a shared reference ensemble (runs in a worker)."""
    config = SweepConfig.from_dict(cfg_dict)
    model, data = build_problem(config)
    rng = particle_rng(config, seed)
    _, ref_init = coupled_initial(rng, 1, config.M, config.d)
    start = time.perf_counter()
    ref = integrate_reference(model, data, ref_init, config.T, config.h, config.record_every)
    ref_ms = (time.perf_counter() - start) * 1e3
    cells = []
    for N in config.N:
        start = time.perf_counter()
        init = ParticleSystem(ref_init.particles[:N].copy())
        inter = integrate(model, data, init, config.T, config.h, config.record_every)
        run = CoupledRun(inter, ref, seed)
        w2s = [w2_squared(a, b) for a, b in zip(inter.snapshots, ref.snapshots)]
        cells.append({
            "N": N,
            "times": list(inter.times),
            "sq_disp": run.squared_displacements(),
            "w2_sq": w2s,
            "loss_interacting": list(inter.losses),
            "loss_reference": list(ref.losses),
            "descent_violations": inter.meta["descent_violations"],
            "runtime_ms": (time.perf_counter() - start) * 1e3 + ref_ms,
        })
    return {"seed": seed, "cells": cells, "ref_violations": ref.meta["descent_violations"]}


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


@dataclass
class SweepResult:
    rows: list
    runs: list
    config: SweepConfig
    descent_violations: int = 0

    def final_rows(self) -> list:
        tmax = max(r["t"] for r in self.rows)
        return [r for r in self.rows if r["t"] == tmax]

    def seed_means(self, t=None) -> dict:
        """Seed-mean W2^2 per N at the final (or given) checkpoint."""
        rows = self.final_rows() if t is None else [r for r in self.rows if r["t"] == t]
        out = {}
        for N in sorted({r["N"] for r in rows}):
            out[N] = float(np.mean([r["w2_sq"] for r in rows if r["N"] == N]))
        return out


def run_sweep(config: SweepConfig, threads: int = 1, write: bool = True) -> SweepResult:
    """Coupled runs for every (N, seed), aggregated in (N, seed, t) order.

    One reference ensemble per seed is shared by all N. Seeds are farmed out
    to ``threads`` worker processes; since every job is a pure function of
    the config and the merge order is fixed, outputs do not depend on
    ``threads``.
    """
    cfg_dict = config.to_dict()
    if threads > 1 and len(config.seeds) > 1:
        ctx = mp.get_context("spawn")
        with cf.ProcessPoolExecutor(max_workers=threads, mp_context=ctx) as pool:
            futures = [pool.submit(_seed_job, cfg_dict, s) for s in config.seeds]
            jobs = [f.result() for f in futures]
    else:
        jobs = [_seed_job(cfg_dict, s) for s in config.seeds]

    rows, runs = [], []
    violations = sum(j["ref_violations"] for j in jobs)
    for k, N in enumerate(config.N):
        cells = [j["cells"][k] for j in jobs]
        times = cells[0]["times"]
        disp = np.stack([c["sq_disp"] for c in cells])            # (seeds, checkpoints, N)
        pathwise_t = np.maximum.accumulate(disp, axis=1).mean(axis=2)
        pointwise_t = np.maximum.accumulate(disp.mean(axis=0), axis=0).mean(axis=1)
        for s_idx, (seed, c) in enumerate(zip(config.seeds, cells)):
            violations += c["descent_violations"]
            for t_idx, t in enumerate(times):
                rows.append({
                    "N": N, "M": config.M, "seed": seed, "t": t,
                    "w2_sq": c["w2_sq"][t_idx],
                    "pathwise": pathwise_t[s_idx, t_idx],
                    "pointwise": pointwise_t[t_idx],
                    "loss_interacting": c["loss_interacting"][t_idx],
                    "loss_reference": c["loss_reference"][t_idx],
                })
            runs.append({
                "N": N, "M": config.M, "seed": seed,
                "pathwise": pathwise_t[s_idx, -1], "pointwise": pointwise_t[-1],
                "w2_sq_final": c["w2_sq"][-1], "runtime_ms": c["runtime_ms"],
            })
    result = SweepResult(rows, runs, config, violations)
    if write:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_table(out / "results.csv", RESULT_COLUMNS, rows)
        write_table(out / "runs.csv", RUN_COLUMNS, runs)
        if config.mode == "rate-fit" and len(set(config.N)) >= 3:
            fit = fit_rate(rows, config.d)
            (out / "fit.json").write_text(json.dumps(fit.as_dict(), indent=2) + "\n")
    return result


def write_table(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def read_results(path) -> list:
    """Parse a results.csv; raises ValueError on a schema violation."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError("results table is empty")
        missing = [c for c in ("N", "seed", "t", "w2_sq") if c not in header]
        if missing:
            raise ValueError(f"results table lacks columns {missing}")
        rows = []
        for line in reader:
            if len(line) != len(header):
                raise ValueError("ragged row in results table")
            rec = dict(zip(header, line))
            rows.append({k: (int(v) if k in ("N", "M", "seed") else float(v)) for k, v in rec.items()})
    if not rows:
        raise ValueError("results table has no rows")
    return rows


def simulate(config: SweepConfig) -> dict:
    """Integrate the interacting system for every (N, seed) and export trajectories."""
    model, data = build_problem(config)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"runs": []}
    for N in config.N:
        for seed in config.seeds:
            init = ParticleSystem(sample_particles(particle_rng(config, seed), N, config.d))
            traj = integrate(model, data, init, config.T, config.h, config.record_every)
            name = f"trajectory_N{N}_seed{seed}.jsonl"
            traj.to_jsonl(out / name, particles=config.particles)
            summary["runs"].append({"N": N, "seed": seed, "file": name,
                                    "loss_initial": traj.losses[0], "loss_final": traj.losses[-1],
                                    "descent_violations": traj.meta["descent_violations"]})
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


# --------------------------------------------------------------------------
# rate fit
# --------------------------------------------------------------------------


@dataclass
class RateFit:
    d: int
    t: float
    N: list
    means: list
    stderr: list
    c1: float
    c1_envelope: float
    c1_upper: float
    coverage: float
    slope: float
    intercept: float
    slope_stderr: float
    residual_rms: float
    consistent: bool

    @property
    def envelope_holds(self) -> bool:
        return all(m <= self.c1_envelope * alpha_d(n, self.d) * (1 + 1e-12)
                   for n, m in zip(self.N, self.means))

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in (
            "d", "t", "N", "means", "stderr", "c1", "c1_envelope", "c1_upper", "coverage",
            "slope", "intercept", "slope_stderr", "residual_rms", "consistent")}
        out["flag"] = None if self.consistent else "rate inconsistent"
        out["stderr_c1"] = self._c1_stderr()
        return out

    def _c1_stderr(self):
        a = alpha_d(np.array(self.N, dtype=float), self.d)
        dof = max(len(self.N) - 1, 1)
        resid = np.array(self.means) - self.c1 * a
        return float(np.sqrt(resid @ resid / dof / (a @ a)))


def fit_rate(table, d: int, t: float | None = None) -> RateFit:
    """Fit ``mean W2^2(N) ~ C1 * alpha_d(N)`` at checkpoint ``t`` (default: last).

    ``table`` is a list of row dicts with at least ``N``, ``seed``, ``t`` and
    ``w2_sq``. ``c1`` is the least-squares constant through the origin,
    ``c1_envelope`` the smallest constant bounding every seed mean and
    ``c1_upper`` the 95th percentile of per-seed ratios ``w2_sq / alpha_d``.
    The fit is flagged inconsistent when the log-log slope is shallower than
    three quarters of the predicted exponent ``min(2/d, 1/2)``.
    """
    if d <= 4:
        raise ValueError("rate fit requires d > 4")
    rows = list(table)
    if not rows:
        raise ValueError("results table is empty")
    if t is None:
        t = max(r["t"] for r in rows)
    rows = [r for r in rows if r["t"] == t]
    Ns = sorted({int(r["N"]) for r in rows})
    if len(Ns) < 3:
        raise ValueError(f"rate fit needs at least 3 distinct N values, got {len(Ns)}")
    samples = [np.array([r["w2_sq"] for r in rows if r["N"] == n], dtype=float) for n in Ns]
    means = np.array([s.mean() for s in samples])
    stderr = np.array([s.std(ddof=1) / np.sqrt(len(s)) if len(s) > 1 else 0.0 for s in samples])
    a = alpha_d(np.array(Ns, dtype=float), d)
    c1 = float(means @ a / (a @ a))
    resid = means - c1 * a
    c1_env = float(np.max(means / a))
    ratios = np.concatenate([s / ai for s, ai in zip(samples, a)])
    c1_up = float(np.percentile(ratios, 95))
    coverage = float(np.mean(ratios <= c1_up))
    logN = np.log(np.array(Ns, dtype=float))
    with np.errstate(divide="ignore"):
        logm = np.log(means)
    if np.all(np.isfinite(logm)):
        coef, cov = np.polyfit(logN, logm, 1, cov=True) if len(Ns) > 3 else (np.polyfit(logN, logm, 1), None)
        slope, intercept = float(coef[0]), float(coef[1])
        slope_se = float(np.sqrt(cov[0, 0])) if cov is not None else float("nan")
    else:
        slope, intercept, slope_se = 0.0, float("-inf"), float("nan")
    consistent = slope <= -0.75 * min(2.0 / d, 0.5)
    if not consistent:
        log.warning("rate inconsistent: log-log slope %.3f", slope)
    return RateFit(d, float(t), Ns, means.tolist(), stderr.tolist(), c1, c1_env, c1_up, coverage,
                   slope, intercept, slope_se, float(np.sqrt(np.mean(resid**2))), consistent)


# --------------------------------------------------------------------------
# bound verification
# --------------------------------------------------------------------------


def drift_lipschitz_check(model, data: Dataset, rng: Rng, trials: int, max_atoms: int = 32) -> dict:
    """Test ``|b(z1,mu) - b(z2,nu)|_1 <= C (|z1 - z2|_1 + W2(mu, nu))`` on random pairs.

    Half the trials perturb ``z1`` and ``mu`` slightly, where the bound is
    tightest; the rest draw everything independently.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    C = lipschitz_constant(model, data)
    gen = rng.generator()
    worst, violations = 0.0, []
    for k in range(trials):
        na, nb = gen.integers(1, max_atoms + 1, size=2)
        z1 = gen.uniform(0, 2 * np.pi, model.d)
        mu = gen.uniform(0, 2 * np.pi, (na, model.d))
        if k % 2:
            eps = 10.0 ** gen.uniform(-6, -1)
            z2 = np.mod(z1 + gen.normal(scale=eps, size=model.d), 2 * np.pi)
            nu = np.mod(mu + gen.normal(scale=eps, size=mu.shape), 2 * np.pi)
        else:
            z2 = gen.uniform(0, 2 * np.pi, model.d)
            nu = gen.uniform(0, 2 * np.pi, (nb, model.d))
        lhs = float(np.abs(drift_field(model, z1, mu, data) - drift_field(model, z2, nu, data)).sum())
        rhs = C * (float(torus_l1_distance(z1, z2)) + w2(mu, nu))
        if rhs > 0:
            worst = max(worst, lhs / rhs)
        if lhs > rhs * (1 + 1e-12) + 1e-12:
            violations.append({"z1": z1.tolist(), "z2": z2.tolist(), "lhs": lhs, "rhs": rhs})
    return {"C": C, "trials": trials, "worst_ratio": worst, "violations": violations,
            "ok": not violations}


def verify_bounds(config: SweepConfig, trials: int = 1000, write: bool = True) -> dict:
    """Regularity bounds, Lipschitz ratios and the drift Lipschitz constant for a config."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    model, data = build_problem(config)
    root = Rng(config.seed).child(3)
    rep = verify_assumption1(model, root.child(0), trials)
    wf, wg = lipschitz_pair_check(model, root.child(1), trials, data.inputs)
    lip = drift_lipschitz_check(model, data, root.child(2), trials)
    report = {
        "expert": model.kind,
        "d": model.d,
        "declared": {"alpha": model.alpha, "beta": model.beta},
        "bounds": {
            "f": {"worst": rep.max_f, "limit": 1.0, "pass": rep.max_f <= 1 + 1e-9},
            "grad": {"worst": rep.max_grad, "limit": model.alpha,
                     "pass": not any(v["bound"] == "grad" for v in rep.violations)},
            "hess": {"worst": rep.max_hess, "limit": model.beta,
                     "pass": not any(v["bound"] == "hess" for v in rep.violations)},
            "f_lipschitz": {"worst_ratio": wf, "pass": wf <= 1 + 1e-9},
            "grad_lipschitz": {"worst_ratio": wg, "pass": wg <= 1 + 1e-6},
            "drift_lipschitz": {"C": lip["C"], "worst_ratio": lip["worst_ratio"], "pass": lip["ok"]},
        },
        "witnesses": rep.violations[:10] + lip["violations"][:10],
        "trials": trials,
    }
    report["pass"] = all(b["pass"] for b in report["bounds"].values())
    if write:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bounds_report.json").write_text(json.dumps(report, indent=2) + "\n")
    return report


def default_threads() -> int:
    return max(1, min(8, os.cpu_count() or 1))
