"""Expert models, training data, the uniform mixture and its gradient-flow drift.

All models share one batched interface: ``values_and_grads(thetas, X)`` takes
particle parameters of shape (N, d) and inputs of shape (n, p) and returns
values (N, n) and gradients (N, n, d). Every other quantity is built on it.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from . import qsim
from .torus import TWO_PI, Rng, sample_particles, torus_l1_distance


def sorted_mean(values, axis=0):
    """Mean whose summation order depends only on the multiset of values.

    Sorting first makes the mixture exactly invariant under relabelling of the
    particles, and bit-identical across schedules.
    """
    values = np.asarray(values, dtype=float)
    return np.sort(values, axis=axis).sum(axis=axis) / values.shape[axis]


# --------------------------------------------------------------------------
# models
# --------------------------------------------------------------------------


class ExpertModel:
    """Base class. Subclasses set ``kind``, ``d``, ``alpha``, ``beta``."""

    kind: str
    d: int
    alpha: float
    beta: float

    def values_and_grads(self, thetas, X):
        raise NotImplementedError

    def values(self, thetas, X):
        return self.values_and_grads(thetas, X)[0]

    def hessian(self, theta, x):
        raise NotImplementedError

    def _check(self, thetas):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        if thetas.shape[-1] != self.d:
            raise ValueError(f"theta has dimension {thetas.shape[-1]}, model expects {self.d}")
        return thetas


@dataclass(eq=False)
class FourierExpert(ExpertModel):
    """``f(theta, x) = cos(<k(x), theta> + phi(x))``.

    ``k(x) = clip(rint(projection @ x), -1, 1)`` is an integer frequency in
    ``{-1, 0, 1}^d`` (so ``f`` is 2*pi-periodic and ``alpha = beta = 1``) and
    ``phi(x) = phase_weights @ x``.
    """

    projection: np.ndarray
    phase_weights: np.ndarray
    alpha: float = 1.0
    beta: float = 1.0
    kind: str = field(default="fourier", init=False)

    def __post_init__(self):
        self.projection = np.atleast_2d(np.asarray(self.projection, dtype=float))
        self.phase_weights = np.asarray(self.phase_weights, dtype=float).reshape(-1)
        if self.projection.shape[1] != self.phase_weights.shape[0]:
            raise ValueError("projection and phase weights disagree on the feature count")

    @property
    def d(self) -> int:
        return self.projection.shape[0]

    @property
    def features(self) -> int:
        return self.projection.shape[1]

    @classmethod
    def random(cls, rng: Rng, d: int, p: int) -> "FourierExpert":
        gen = rng.generator()
        proj = gen.integers(-1, 2, size=(d, p))
        # no all-zero rows: each coordinate must reach some input
        for r in range(d):
            while not proj[r].any():
                proj[r] = gen.integers(-1, 2, size=p)
        return cls(proj, gen.uniform(-np.pi, np.pi, size=p))

    def frequencies(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.clip(np.rint(X @ self.projection.T), -1, 1)

    def phases(self, X):
        return np.atleast_2d(np.asarray(X, dtype=float)) @ self.phase_weights

    def values_and_grads(self, thetas, X):
        thetas = self._check(thetas)
        K = self.frequencies(X)
        arg = np.einsum("Nd,nd->Nn", thetas, K) + self.phases(X)
        return np.cos(arg), -np.sin(arg)[:, :, None] * K[None, :, :]

    def hessian(self, theta, x):
        K = self.frequencies(x)[0]
        arg = float(np.dot(theta, K) + self.phases(x)[0])
        return -np.cos(arg) * np.outer(K, K)


@dataclass(eq=False)
class QuantumExpert(ExpertModel):
    """Expert given by a parametric circuit; ``alpha = beta = 1`` for Pauli generators."""

    circuit: qsim.CircuitSpec
    alpha: float = 1.0
    beta: float = 1.0
    kind: str = field(default="quantum", init=False)

    def __post_init__(self):
        self._matrix_cache = {}

    @property
    def d(self) -> int:
        return self.circuit.d

    def _matrices(self, X):
        key = X.tobytes() + bytes(str(X.shape), "ascii")
        mats = self._matrix_cache.get(key)
        if mats is None:
            if len(self._matrix_cache) > 64:
                self._matrix_cache.clear()
            mats = qsim.encoder_matrices(self.circuit, X)
            self._matrix_cache[key] = mats
        return mats

    def values_and_grads(self, thetas, X):
        thetas = self._check(thetas)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.circuit.m <= 8:
            return qsim.batched_value_and_grad(self.circuit, thetas, X, self._matrices(X))
        return qsim.value_and_gradient(self.circuit, thetas[:, None, :], X[None, :, :])

    def hessian(self, theta, x):
        return qsim.hessian(self.circuit, theta, x)


# --------------------------------------------------------------------------
# data
# --------------------------------------------------------------------------


@dataclass(eq=False)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    provenance: dict | None = None

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.labels = np.asarray(self.labels, dtype=float).reshape(-1)
        if len(self.labels) < 1:
            raise ValueError("a dataset needs at least one example")
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels differ in length")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def A(self) -> float:
        return float(np.max(np.abs(self.labels)))

    def to_csv(self, path):
        p = self.inputs.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x_{i + 1}" for i in range(p)] + ["y"])
            for x, y in zip(self.inputs, self.labels):
                w.writerow([repr(float(v)) for v in x] + [repr(float(y))])
        if self.provenance is not None:
            with open(str(path) + ".json", "w") as fh:
                json.dump(self.provenance, fh, indent=2, sort_keys=True)

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError("empty dataset file")
        header = rows[0]
        expected = [f"x_{i + 1}" for i in range(len(header) - 1)] + ["y"]
        if header != expected:
            raise ValueError(f"dataset header must be {expected}, got {header}")
        body = np.array([[float(v) for v in r] for r in rows[1:]])
        if body.size == 0:
            raise ValueError("a dataset needs at least one example")
        return cls(body[:, :-1], body[:, -1])


def feature_grid(p: int) -> np.ndarray:
    """The finite feature set ``{-1, 0, 1}^p``."""
    return np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=p)))


def make_dataset(model: ExpertModel, n: int, rng: Rng, p: int, labels: str = "teacher",
                 A: float = 1.0, teacher_size: int = 16) -> Dataset:
    """Draw ``n`` distinct inputs from the feature grid and label them.

    ``labels="teacher"`` uses a frozen random mixture of ``teacher_size``
    experts (realizable); ``labels="uniform"`` draws labels in ``[-A, A]``.
    For Fourier experts, inputs with zero frequency (constant ``f``) are
    excluded.
    """
    grid = feature_grid(p)
    if isinstance(model, FourierExpert):
        grid = grid[np.any(model.frequencies(grid) != 0, axis=1)]
    if n > len(grid):
        raise ValueError(f"only {len(grid)} usable inputs for n={n}")
    gen = rng.child(0).generator()
    X = grid[np.sort(gen.choice(len(grid), size=n, replace=False))]
    if labels == "teacher":
        teacher = sample_particles(rng.child(1), teacher_size, model.d)
        y = sorted_mean(model.values(teacher, X), axis=0)
        prov = {"mode": "teacher", "seed": rng.seed, "stream": list(rng.stream),
                "teacher_size": teacher_size, "teacher": teacher.tolist()}
    elif labels == "uniform":
        y = rng.child(2).generator().uniform(-A, A, size=n)
        prov = {"mode": "uniform", "seed": rng.seed, "stream": list(rng.stream), "A": A}
    else:
        raise ValueError(f"unknown label mode {labels!r}")
    return Dataset(X, y, prov)


# --------------------------------------------------------------------------
# mixture, loss, drift
# --------------------------------------------------------------------------


def expert_eval(model: ExpertModel, theta, x) -> float:
    return float(model.values(np.asarray(theta, dtype=float)[None], np.atleast_2d(x))[0, 0])


def expert_grad(model: ExpertModel, theta, x) -> np.ndarray:
    return model.values_and_grads(np.asarray(theta, dtype=float)[None], np.atleast_2d(x))[1][0, 0]


def mixture_values(model: ExpertModel, Theta, X) -> np.ndarray:
    """``F(Theta, x_j)`` for every row of ``X``."""
    return sorted_mean(model.values(Theta, X), axis=0)


def mixture_eval(model: ExpertModel, Theta, x) -> float:
    return float(mixture_values(model, Theta, np.atleast_2d(x))[0])


def residuals(model: ExpertModel, Theta, data: Dataset) -> np.ndarray:
    """``y_j - F(Theta, x_j)``: the only channel through which particles interact."""
    return data.labels - mixture_values(model, Theta, data.inputs)


def loss(model: ExpertModel, Theta, data: Dataset) -> float:
    r = residuals(model, Theta, data)
    return 0.5 * float(np.dot(r, r))


def drift(model: ExpertModel, theta, residual, data: Dataset) -> np.ndarray:
    """``b(theta, mu) = sum_j grad f(theta, x_j) * residual_j`` for one point or a batch (N, d)."""
    theta = np.asarray(theta, dtype=float)
    residual = np.asarray(residual, dtype=float)
    if residual.shape != (data.n,):
        raise ValueError(f"expected {data.n} residuals, got {residual.shape}")
    _, grads = model.values_and_grads(np.atleast_2d(theta), data.inputs)
    out = np.einsum("Nnd,n->Nd", grads, residual)
    return out[0] if theta.ndim == 1 else out


def drift_field(model: ExpertModel, points, atoms, data: Dataset) -> np.ndarray:
    """Drift at ``points`` against the empirical measure on ``atoms``."""
    return drift(model, points, residuals(model, atoms, data), data)


def particle_drifts(model: ExpertModel, Theta, data: Dataset) -> np.ndarray:
    """Self-consistent drift of every particle; one shared residual pass."""
    values, grads = model.values_and_grads(Theta, data.inputs)
    r = data.labels - sorted_mean(values, axis=0)
    return np.einsum("Nnd,n->Nd", grads, r)


def lipschitz_constant(model: ExpertModel, data: Dataset) -> float:
    """``max(d * beta * n * (A + 1), alpha**2 * d * n)``."""
    d, n, A = model.d, data.n, data.A
    return max(d * model.beta * n * (A + 1.0), model.alpha**2 * d * n)


# --------------------------------------------------------------------------
# regularity checks
# --------------------------------------------------------------------------


@dataclass
class BoundReport:
    max_f: float
    max_grad: float
    max_hess: float
    alpha: float
    beta: float
    trials: int
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def as_dict(self) -> dict:
        return {
            "max_f": self.max_f, "max_grad": self.max_grad, "max_hess": self.max_hess,
            "alpha": self.alpha, "beta": self.beta, "trials": self.trials,
            "ok": self.ok, "violations": self.violations,
        }


def _fd_hessian(model, theta, x, step=1e-5):
    d = len(theta)
    H = np.empty((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = step
        H[i] = (expert_grad(model, theta + e, x) - expert_grad(model, theta - e, x)) / (2 * step)
    return 0.5 * (H + H.T)


def verify_assumption1(model: ExpertModel, rng: Rng, trials: int, inputs=None,
                       slack: float = 1e-9) -> BoundReport:
    """Spot-check ``|f| <= 1``, ``|df| <= alpha`` and ``|d2f| <= beta`` at random points.

    Inputs default to the feature grid of the model. Fourier Hessians come from
    finite differences of the gradient; quantum ones from generator insertions.
    A violation records the witness ``theta`` and ``x``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if inputs is None:
        p = model.features if isinstance(model, FourierExpert) else model.circuit.features
        inputs = feature_grid(p)
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    gen = rng.generator()
    thetas = gen.uniform(0.0, TWO_PI, size=(trials, model.d))
    picks = gen.integers(len(inputs), size=trials)
    rep = BoundReport(0.0, 0.0, 0.0, model.alpha, model.beta, trials)
    hess_slack = 1e-6 if isinstance(model, FourierExpert) else slack
    for theta, idx in zip(thetas, picks):
        x = inputs[idx]
        f = abs(expert_eval(model, theta, x))
        g = float(np.max(np.abs(expert_grad(model, theta, x))))
        H = _fd_hessian(model, theta, x) if isinstance(model, FourierExpert) else model.hessian(theta, x)
        h = float(np.max(np.abs(H)))
        rep.max_f, rep.max_grad, rep.max_hess = max(rep.max_f, f), max(rep.max_grad, g), max(rep.max_hess, h)
        for name, val, bound, tol in (("f", f, 1.0, slack), ("grad", g, model.alpha, slack),
                                      ("hess", h, model.beta, hess_slack)):
            if val > bound + tol:
                rep.violations.append({"bound": name, "value": val, "limit": bound,
                                       "theta": theta.tolist(), "x": x.tolist()})
    return rep


def lipschitz_pair_check(model: ExpertModel, rng: Rng, trials: int, inputs):
    """Worst ratios for ``|f(a)-f(b)| <= alpha |a-b|_1`` and ``|grad a - grad b|_1 <= d beta |a-b|_1``.

    Returns ``(worst_f_ratio, worst_grad_ratio)`` where a ratio <= 1 means the
    bound held; distances are torus distances.
    """
    gen = rng.generator()
    inputs = np.atleast_2d(inputs)
    worst_f = worst_g = 0.0
    for _ in range(trials):
        a = gen.uniform(0, TWO_PI, model.d)
        b = a + gen.normal(scale=gen.choice([1e-3, 0.1, 1.0]), size=model.d)
        x = inputs[gen.integers(len(inputs))]
        dist = float(torus_l1_distance(a, np.mod(b, TWO_PI)))
        if dist == 0:
            continue
        df = abs(expert_eval(model, a, x) - expert_eval(model, b, x))
        dg = float(np.abs(expert_grad(model, a, x) - expert_grad(model, b, x)).sum())
        worst_f = max(worst_f, df / (model.alpha * dist))
        worst_g = max(worst_g, dg / (model.d * model.beta * dist))
    return worst_f, worst_g
