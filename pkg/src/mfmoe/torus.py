"""Geometry, metric and sampling on the flat torus of period 2*pi.

Points are plain float arrays whose last axis holds the ``d`` angles. The
canonical chart is ``[0, 2*pi)`` in every coordinate; the metric is the
geodesic l1 distance, i.e. the sum over coordinates of the shorter arc.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap(raw):
    """Map arbitrary real coordinates onto the canonical chart ``[0, 2*pi)``.

    Parameters
    ----------
    raw : array_like, shape (..., d)
        Unconstrained coordinates.

    Returns
    -------
    ndarray
        Coordinates congruent to ``raw`` modulo ``2*pi``.
    """
    raw = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(raw)):
        raise ValueError("non-finite coordinate")
    out = np.mod(raw, TWO_PI)
    # mod can round up to exactly 2*pi for tiny negative inputs
    out[out >= TWO_PI] = 0.0
    return out


def coordinate_gaps(a, b):
    """Per-coordinate shorter-arc lengths between ``a`` and ``b`` (broadcasting)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} != {b.shape[-1]}")
    delta = np.mod(np.abs(a - b), TWO_PI)
    return np.minimum(delta, TWO_PI - delta)


def torus_l1_distance(a, b):
    """Geodesic l1 distance on the torus.

    ``sum_i min(|a_i - b_i|, 2*pi - |a_i - b_i|)`` computed along the last
    axis; leading axes broadcast, so ``a[:, None]`` against ``b[None]`` yields
    the full pairwise matrix.
    """
    return coordinate_gaps(a, b).sum(axis=-1)


def pairwise_l1(a, b):
    """Matrix of torus distances between the rows of ``a`` (K, d) and ``b`` (L, d)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    return torus_l1_distance(a[:, None, :], b[None, :, :])


@dataclass(frozen=True)
class Rng:
    """Splittable, counter-based random source.

    A ``(seed, stream)`` pair always reproduces the same sequence, and
    distinct streams are statistically independent. Streams are tuples of
    non-negative integers so that nested keys such as ``(replicate, particle)``
    can be derived without coordination between workers.
    """

    seed: int
    stream: tuple[int, ...] = ()

    def child(self, *key: int) -> "Rng":
        return Rng(self.seed, self.stream + tuple(int(k) for k in key))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=self.stream)
        return np.random.Generator(np.random.Philox(ss))


def sample_uniform(rng: Rng, d: int, size: int | None = None):
    """Draw i.i.d. uniform points on the torus.

    Returns shape ``(d,)`` when ``size`` is None, else ``(size, d)``.
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    gen = rng.generator()
    shape = (d,) if size is None else (size, d)
    return wrap(gen.uniform(0.0, TWO_PI, size=shape))


def sample_particles(rng: Rng, n_particles: int, d: int):
    """Draw ``n_particles`` points, particle ``i`` taken from sub-stream ``i``.

    Because each particle owns its stream, the first ``k`` rows are the same
    for every ``n_particles >= k``. Coupled systems of different sizes rely on
    this prefix property.
    """
    if n_particles < 1:
        raise ValueError("need at least one particle")
    return np.stack([sample_uniform(rng.child(i), d) for i in range(n_particles)])
