"""Synchronously coupled reference ensembles and the chaos metrics.

The law of the limiting process has no closed form, so a much larger
interacting ensemble of ``M`` particles stands in for it. Particle ``i`` of
both systems is drawn from the same random sub-stream, which gives the
synchronous coupling for free: the first ``N`` reference particles start
exactly where the ``N`` interacting particles start.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import ParticleSystem, Trajectory, integrate
from .experts import Dataset, ExpertModel
from .torus import Rng, coordinate_gaps, sample_particles


class CouplingError(ValueError):
    pass


@dataclass
class CoupledRun:
    interacting: Trajectory
    reference: Trajectory
    seed: int | None = None

    def __post_init__(self):
        a, b = self.interacting, self.reference
        if a.h != b.h or a.T != b.T or list(a.times) != list(b.times):
            raise CouplingError("checkpoint schedule mismatch between coupled trajectories")
        N, M = a.snapshots[0].shape[0], b.snapshots[0].shape[0]
        if M < N:
            raise CouplingError(f"reference ensemble ({M}) smaller than interacting system ({N})")
        if not np.array_equal(a.snapshots[0], b.snapshots[0][:N]):
            raise CouplingError("reference particles do not share the interacting initial positions")

    @property
    def N(self) -> int:
        return self.interacting.snapshots[0].shape[0]

    @property
    def M(self) -> int:
        return self.reference.snapshots[0].shape[0]

    def squared_displacements(self) -> np.ndarray:
        """``|theta_t^i - bar theta_t^i|_1^2`` as an array (checkpoints, N)."""
        a = self.interacting.stacked()
        b = self.reference.stacked()[:, : self.N]
        return coordinate_gaps(a, b).sum(axis=-1) ** 2


def coupled_initial(rng: Rng, N: int, M: int, d: int):
    """Interacting and reference initial conditions sharing their first ``N`` rows."""
    if M < N:
        raise ValueError("reference size must be >= N")
    ref = sample_particles(rng, M, d)
    return ParticleSystem(ref[:N].copy()), ParticleSystem(ref)


def integrate_reference(model: ExpertModel, data: Dataset, init: ParticleSystem, T: float, h: float,
                        record_every: int = 1) -> Trajectory:
    """Self-consistent reference ensemble: each particle feels the ensemble's own empirical measure."""
    if init.N < 1:
        raise ValueError("reference ensemble needs M >= 1")
    return integrate(model, data, init, T, h, record_every)


def coupled_run(model: ExpertModel, data: Dataset, rng: Rng, N: int, M: int, T: float, h: float,
                record_every: int = 1, reference: Trajectory | None = None) -> CoupledRun:
    """Integrate both systems from coupled draws; a precomputed reference may be reused."""
    init_n, init_m = coupled_initial(rng, N, M, model.d)
    if reference is None:
        reference = integrate_reference(model, data, init_m, T, h, record_every)
    inter = integrate(model, data, init_n, T, h, record_every)
    return CoupledRun(inter, reference, rng.seed)


def _check_runs(runs):
    runs = list(runs)
    if not runs:
        raise ValueError("need at least one coupled run")
    times = list(runs[0].interacting.times)
    N = runs[0].N
    for r in runs[1:]:
        if list(r.interacting.times) != times or r.N != N:
            raise CouplingError("checkpoint schedule mismatch across seeds")
    return runs


def pathwise_chaos_metric(runs) -> float:
    """Seed mean of ``(1/N) sum_i sup_t |theta_t^i - bar theta_t^i|_1^2``.

    ``runs`` is one :class:`CoupledRun` or a sequence of them, one per seed.
    """
    runs = _check_runs([runs] if isinstance(runs, CoupledRun) else runs)
    per_seed = [r.squared_displacements().max(axis=0).mean() for r in runs]
    return float(np.mean(per_seed))


def pointwise_chaos_metric(runs) -> float:
    """``(1/N) sum_i sup_t E |theta_t^i - bar theta_t^i|_1^2`` with E the seed mean."""
    runs = _check_runs([runs] if isinstance(runs, CoupledRun) else runs)
    mean_sq = np.mean([r.squared_displacements() for r in runs], axis=0)
    return float(mean_sq.max(axis=0).mean())


def pointwise_profile(runs) -> np.ndarray:
    """``(1/N) sum_i sup_{s <= t} E |.|^2`` at every checkpoint ``t``."""
    runs = _check_runs([runs] if isinstance(runs, CoupledRun) else runs)
    mean_sq = np.mean([r.squared_displacements() for r in runs], axis=0)
    return np.maximum.accumulate(mean_sq, axis=0).mean(axis=1)
