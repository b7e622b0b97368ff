"""Dense statevector simulation of parametric quantum circuits.

The circuit is

    U(theta, x) = V_d(x) W_d(theta_d) ... V_1(x) W_1(theta_1) V_0(x),
    W_k(t) = exp(-i t G_k / 2),

and the expert output is ``<0^m| U^dagger O U |0^m>``.

Conventions
-----------
Qubit ``q`` is bit ``m - 1 - q`` of a basis index, so qubit 0 is the most
significant bit. States are complex arrays whose last axis has length
``2**m``; any leading axes are batch axes and every gate broadcasts over them.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import yaml

MAX_QUBITS = 12

_PAULI_TOKEN = re.compile(r"([IXYZ])(\d+)")


# --------------------------------------------------------------------------
# states
# --------------------------------------------------------------------------


@dataclass
class StateVector:
    amplitudes: np.ndarray
    m: int

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (2**self.m,):
            raise ValueError(f"expected {2**self.m} amplitudes, got {self.amplitudes.shape}")

    @classmethod
    def zero(cls, m: int) -> "StateVector":
        _check_qubits(m)
        amps = np.zeros(2**m, dtype=complex)
        amps[0] = 1.0
        return cls(amps, m)

    def norm_squared(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)


def _check_qubits(m):
    if not 1 <= m <= MAX_QUBITS:
        raise ValueError(f"qubit count must be in [1, {MAX_QUBITS}], got {m}")


def zero_states(m: int, lead=()) -> np.ndarray:
    out = np.zeros(tuple(lead) + (2**m,), dtype=complex)
    out[..., 0] = 1.0
    return out


def _bits(m):
    idx = np.arange(2**m)
    # column q holds the bit of qubit q
    return (idx[:, None] >> (m - 1 - np.arange(m))[None, :]) & 1


# --------------------------------------------------------------------------
# Pauli strings and generators
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PauliString:
    """Tensor product of single-qubit Paulis, e.g. ``PauliString.parse("X0 Z2")``."""

    ops: tuple[tuple[str, int], ...]

    def __post_init__(self):
        qubits = [q for _, q in self.ops]
        if len(set(qubits)) != len(qubits):
            raise ValueError("a qubit appears twice in the Pauli string")
        for letter, q in self.ops:
            if letter not in "XYZ" or q < 0:
                raise ValueError(f"bad Pauli factor {letter}{q}")
        object.__setattr__(self, "ops", tuple(sorted(self.ops, key=lambda t: t[1])))

    @classmethod
    def parse(cls, label: str) -> "PauliString":
        compact = label.replace(" ", "").replace("*", "")
        tokens = _PAULI_TOKEN.findall(compact)
        if "".join(a + b for a, b in tokens) != compact:
            raise ValueError(f"cannot parse Pauli label {label!r}")
        return cls(tuple((a, int(b)) for a, b in tokens if a != "I"))

    @property
    def label(self) -> str:
        return " ".join(f"{a}{q}" for a, q in self.ops) or "I0"

    @property
    def support(self) -> frozenset[int]:
        return frozenset(q for _, q in self.ops)

    @property
    def is_pauli(self) -> bool:
        return True

    def operator_norm(self) -> float:
        return 1.0

    def check(self, m: int):
        for _, q in self.ops:
            if q >= m:
                raise ValueError(f"qubit index {q} out of range for {m} qubits")

    def _action(self, m):
        cache = self.__dict__.setdefault("_cache", {})
        if m not in cache:
            self.check(m)
            bits = _bits(m)
            idx = np.arange(2**m)
            xmask = 0
            phase = np.ones(2**m, dtype=complex)
            for letter, q in self.ops:
                b = bits[:, q]
                if letter in "XY":
                    xmask |= 1 << (m - 1 - q)
                if letter == "Z":
                    phase = phase * (1 - 2 * b)
                elif letter == "Y":
                    phase = phase * 1j * (1 - 2 * b)
            src = idx ^ xmask
            # (P psi)[c] = phase[src[c]] * psi[src[c]]
            cache[m] = (src, phase[src])
        return cache[m]

    def apply(self, states):
        states = np.asarray(states)
        m = int(np.log2(states.shape[-1]))
        src, ph = self._action(m)
        return states[..., src] * ph

    def rotate(self, states, angle):
        """``exp(-i angle P / 2)`` applied to ``states``; ``angle`` broadcasts over the batch axes."""
        angle = np.asarray(angle, dtype=float)[..., None]
        return np.cos(angle / 2) * states - 1j * np.sin(angle / 2) * self.apply(states)

    def matrix(self, m: int) -> np.ndarray:
        return self.apply(np.eye(2**m, dtype=complex)).T


@dataclass(frozen=True, eq=False)
class DenseGenerator:
    """Arbitrary Hermitian generator given as a dense matrix (norm <= 1).

    Supported by the simulator and the adjoint gradient, but not by the
    parameter-shift rule or the config format.
    """

    matrix_: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix_, dtype=complex)
        if not np.allclose(mat, mat.conj().T, atol=1e-12):
            raise ValueError("generator must be Hermitian")
        object.__setattr__(self, "matrix_", mat)

    @cached_property
    def _eig(self):
        return np.linalg.eigh(self.matrix_)

    @property
    def is_pauli(self) -> bool:
        return False

    @property
    def label(self) -> str:
        raise ValueError("dense generators have no Pauli label")

    def operator_norm(self) -> float:
        return float(np.max(np.abs(self._eig[0])))

    def check(self, m: int):
        if self.matrix_.shape != (2**m, 2**m):
            raise ValueError("generator dimension does not match the register")

    def apply(self, states):
        return np.einsum("ij,...j->...i", self.matrix_, states)

    def rotate(self, states, angle):
        vals, vecs = self._eig
        angle = np.asarray(angle, dtype=float)[..., None]
        coeffs = np.einsum("ji,...j->...i", vecs.conj(), states)
        coeffs = coeffs * np.exp(-0.5j * angle * vals)
        return np.einsum("ij,...j->...i", vecs, coeffs)

    def matrix(self, m: int) -> np.ndarray:
        self.check(m)
        return self.matrix_


def apply_pauli_rotation(state: StateVector, g, angle: float) -> StateVector:
    g.check(state.m)
    return StateVector(g.rotate(state.amplitudes, angle), state.m)


# --------------------------------------------------------------------------
# encoders
# --------------------------------------------------------------------------


def _apply_1q(states, q, mats):
    """Apply a 2x2 matrix (or a batch of them, shape lead+(2, 2)) to qubit ``q``."""
    lead = states.shape[:-1]
    m = int(np.log2(states.shape[-1]))
    psi = states.reshape(lead + (2**q, 2, 2 ** (m - q - 1)))
    mats = np.asarray(mats)
    if mats.ndim == 2:
        out = np.einsum("ij,...ajc->...aic", mats, psi)
    else:
        out = np.einsum("...ij,...ajc->...aic", mats, psi)
    return out.reshape(states.shape)


def _cnot_perm(m, control, target):
    bits = _bits(m)
    idx = np.arange(2**m)
    return idx ^ (bits[:, control] << (m - 1 - target))


def _rz(angle):
    angle = np.asarray(angle, dtype=float)
    out = np.zeros(angle.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = np.exp(-0.5j * angle)
    out[..., 1, 1] = np.exp(0.5j * angle)
    return out


def _ry(angle):
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    out = np.empty(angle.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    return out


@dataclass(frozen=True, eq=False)
class Encoder:
    """Data-dependent unitary ``V(x)`` as an ordered list of primitive gates.

    Gate tuples:
      ``("rz", q, feature, scale)`` / ``("ry", q, feature, scale)`` rotate qubit
      ``q`` by ``scale * x[feature]``; ``("cnot", control, target)``;
      ``("fixed", q, U)`` applies a constant 2x2 unitary.
    """

    gates: tuple = ()

    @classmethod
    def identity(cls) -> "Encoder":
        return cls(())

    @classmethod
    def cnot_ladder(cls, m: int) -> "Encoder":
        return cls(tuple(("cnot", q, q + 1) for q in range(m - 1)))

    @classmethod
    def feature_rotations(cls, axis: str, m: int, p: int, scale: float) -> "Encoder":
        return cls(tuple((axis, q, q % p, scale) for q in range(m)))

    def __add__(self, other: "Encoder") -> "Encoder":
        return Encoder(self.gates + other.gates)

    def check(self, m: int):
        for g in self.gates:
            qubits = g[1:3] if g[0] == "cnot" else g[1:2]
            if any(q >= m for q in qubits):
                raise ValueError(f"encoder gate {g[0]} acts outside {m} qubits")

    def apply(self, states, x, adjoint=False):
        """Apply ``V(x)`` (or its inverse) to ``states``; ``x`` has shape lead+(p,) or (p,)."""
        m = int(np.log2(states.shape[-1]))
        x = np.asarray(x, dtype=float)
        gates = reversed(self.gates) if adjoint else self.gates
        sign = -1.0 if adjoint else 1.0
        for g in gates:
            kind = g[0]
            if kind == "cnot":
                states = states[..., _cnot_perm(m, g[1], g[2])]
            elif kind == "fixed":
                mat = np.asarray(g[2])
                states = _apply_1q(states, g[1], mat.conj().T if adjoint else mat)
            else:
                angle = sign * g[3] * x[..., g[2]]
                mats = _rz(angle) if kind == "rz" else _ry(angle)
                states = _apply_1q(states, g[1], mats)
        return states

    def matrix(self, m: int, x) -> np.ndarray:
        return self.apply(np.eye(2**m, dtype=complex), np.asarray(x, dtype=float)).T


def apply_encoder(state: StateVector, encoder: Encoder, x) -> StateVector:
    encoder.check(state.m)
    return StateVector(encoder.apply(state.amplitudes, x), state.m)


def _haar_1q(gen):
    z = (gen.standard_normal((2, 2)) + 1j * gen.standard_normal((2, 2))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def build_encoders(family: str, m: int, d: int, p: int, seed: int = 0, feature_scale: float = 1.0):
    """Deterministically build the ``d + 1`` encoders of a named family.

    ``identity``
        every ``V_k`` is the identity.
    ``zy-ladder``
        ``V_0`` = fixed random layer, Z feature rotations, CNOT ladder;
        ``V_k`` (k >= 1) = Y feature rotations for odd k or a CNOT ladder for
        even k, each followed by a fixed random single-qubit layer. Fixed
        unitaries are Haar draws keyed on ``seed``.
    """
    if family == "identity":
        return tuple(Encoder.identity() for _ in range(d + 1))
    if family != "zy-ladder":
        raise ValueError(f"unknown encoder family {family!r}")
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))

    def fixed_layer():
        return Encoder(tuple(("fixed", q, _haar_1q(gen)) for q in range(m)))

    encs = [fixed_layer() + Encoder.feature_rotations("rz", m, p, feature_scale) + Encoder.cnot_ladder(m)]
    for k in range(1, d + 1):
        core = Encoder.feature_rotations("ry", m, p, feature_scale) if k % 2 else Encoder.cnot_ladder(m)
        encs.append(core + fixed_layer())
    return tuple(encs)


def default_generators(m: int, d: int) -> tuple[PauliString, ...]:
    """Generators cycling over qubits: X, Y and (when m > 1) a two-qubit Z-X coupling."""
    gens = []
    for k in range(d):
        q = k % m
        kind = k % 3
        if kind == 2 and m > 1:
            gens.append(PauliString((("Z", q), ("X", (q + 1) % m))))
        else:
            gens.append(PauliString(((("X", "Y", "X")[kind], q),)))
    return tuple(gens)


# --------------------------------------------------------------------------
# circuit spec
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CircuitSpec:
    m: int
    generators: tuple
    encoders: tuple
    observable: PauliString = field(default_factory=lambda: PauliString((("Z", 0),)))
    # recorded only for family-built encoders; needed for serialization
    encoder_family: str | None = None
    features: int = 1
    seed: int = 0
    feature_scale: float = 1.0

    def __post_init__(self):
        _check_qubits(self.m)
        if len(self.encoders) != len(self.generators) + 1:
            raise ValueError("need exactly one more encoder than generators")
        for g in self.generators:
            g.check(self.m)
            if g.operator_norm() > 1 + 1e-12:
                raise ValueError("generator norm exceeds 1")
        for e in self.encoders:
            e.check(self.m)
        self.observable.check(self.m)

    @property
    def d(self) -> int:
        return len(self.generators)

    @classmethod
    def from_family(cls, m, generators, family="zy-ladder", features=1, seed=0,
                    feature_scale=1.0, observable="Z0") -> "CircuitSpec":
        gens = tuple(PauliString.parse(g) if isinstance(g, str) else g for g in generators)
        obs = PauliString.parse(observable) if isinstance(observable, str) else observable
        encs = build_encoders(family, m, len(gens), features, seed, feature_scale)
        return cls(m, gens, encs, obs, family, features, seed, feature_scale)

    def to_config(self) -> dict:
        if self.encoder_family is None:
            raise ValueError("only family-built circuits can be serialized")
        return {
            "qubits": self.m,
            "depth": self.d,
            "generators": [g.label for g in self.generators],
            "encoder": {
                "family": self.encoder_family,
                "features": self.features,
                "seed": self.seed,
                "feature_scale": self.feature_scale,
            },
            "observable": self.observable.label,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "CircuitSpec":
        known = {"qubits", "depth", "generators", "encoder", "observable"}
        unknown = set(cfg) - known
        if unknown:
            raise ValueError(f"unknown circuit keys: {sorted(unknown)}")
        enc = dict(cfg.get("encoder", {}))
        bad = set(enc) - {"family", "features", "seed", "feature_scale"}
        if bad:
            raise ValueError(f"unknown encoder keys: {sorted(bad)}")
        m = int(cfg["qubits"])
        if "generators" in cfg:
            gens = [PauliString.parse(g) for g in cfg["generators"]]
        else:
            gens = list(default_generators(m, int(cfg["depth"])))
        if "depth" in cfg and int(cfg["depth"]) != len(gens):
            raise ValueError("depth does not match the number of generators")
        return cls.from_family(
            m,
            gens,
            family=enc.get("family", "zy-ladder"),
            features=int(enc.get("features", 1)),
            seed=int(enc.get("seed", 0)),
            feature_scale=float(enc.get("feature_scale", 1.0)),
            observable=cfg.get("observable", "Z0"),
        )

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_config(), sort_keys=False)

    @classmethod
    def loads(cls, text: str) -> "CircuitSpec":
        return cls.from_config(yaml.safe_load(text))


def cos_circuit() -> CircuitSpec:
    """One qubit, X rotation, Z readout: ``f(theta) = cos(theta)``."""
    return CircuitSpec.from_family(1, ["X0"], family="identity")


def random_circuit(gen: np.random.Generator, m: int, d: int, features: int = 2) -> CircuitSpec:
    """Random family-built circuit with 1- and 2-qubit Pauli generators and a Pauli observable."""
    def rand_pauli(max_weight):
        weight = int(gen.integers(1, min(max_weight, m) + 1))
        qubits = gen.choice(m, size=weight, replace=False)
        return PauliString(tuple((str(gen.choice(list("XYZ"))), int(q)) for q in qubits))

    gens = [rand_pauli(2) for _ in range(d)]
    return CircuitSpec.from_family(
        m, gens, family="zy-ladder", features=features,
        seed=int(gen.integers(2**31)), feature_scale=float(gen.uniform(0.5, 2.0)),
        observable=rand_pauli(m),
    )


# --------------------------------------------------------------------------
# evaluation and derivatives
# --------------------------------------------------------------------------


def _gate_encode(spec, x):
    def encode(states, k, adjoint=False):
        return spec.encoders[k].apply(states, x, adjoint=adjoint)
    return encode


def _forward(spec, theta, encode, lead, inserts=()):
    """Run the circuit; each index in ``inserts`` inserts ``(-i/2) G_k`` after ``W_k``."""
    psi = encode(zero_states(spec.m, lead), 0)
    for k, g in enumerate(spec.generators):
        psi = g.rotate(psi, theta[..., k])
        for _ in range(inserts.count(k)):
            psi = -0.5j * g.apply(psi)
        psi = encode(psi, k + 1)
    return psi


def _inner(a, b):
    return np.sum(a.conj() * b, axis=-1)


def _value_and_grad(spec, theta, encode, lead):
    """Expectation and adjoint gradient; one forward sweep and one backward sweep."""
    psi = _forward(spec, theta, encode, lead)
    lam = spec.observable.apply(psi)
    value = _inner(psi, lam).real
    grad = np.empty(tuple(lead) + (spec.d,))
    for k in range(spec.d - 1, -1, -1):
        psi = encode(psi, k + 1, adjoint=True)
        lam = encode(lam, k + 1, adjoint=True)
        g = spec.generators[k]
        grad[..., k] = _inner(lam, g.apply(psi)).imag
        psi = g.rotate(psi, -theta[..., k])
        lam = g.rotate(lam, -theta[..., k])
    return value, grad


def _prepare(spec, theta, x):
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != spec.d:
        raise ValueError(f"theta has dimension {theta.shape[-1]}, circuit has {spec.d} parameters")
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    lead = np.broadcast_shapes(theta.shape[:-1], x.shape[:-1])
    theta = np.broadcast_to(theta, lead + (spec.d,))
    x = np.broadcast_to(x, lead + x.shape[-1:])
    return theta, x, lead


def evaluate_f(spec: CircuitSpec, theta, x):
    """Expert output ``<0|U^dagger O U|0>``; batch axes of ``theta`` and ``x`` broadcast."""
    theta, x, lead = _prepare(spec, theta, x)
    psi = _forward(spec, theta, _gate_encode(spec, x), lead)
    out = _inner(psi, spec.observable.apply(psi)).real
    return float(out) if out.ndim == 0 else out


def gradient_adjoint(spec: CircuitSpec, theta, x):
    theta, x, lead = _prepare(spec, theta, x)
    return _value_and_grad(spec, theta, _gate_encode(spec, x), lead)[1]


def value_and_gradient(spec: CircuitSpec, theta, x):
    theta, x, lead = _prepare(spec, theta, x)
    return _value_and_grad(spec, theta, _gate_encode(spec, x), lead)


def gradient_parameter_shift(spec: CircuitSpec, theta, x):
    """Two-point shift rule, exact for generators with eigenvalues +-1."""
    if not all(g.is_pauli for g in spec.generators):
        raise ValueError("shift rule inapplicable: non-Pauli generator")
    theta, x, lead = _prepare(spec, theta, x)
    grad = np.empty(tuple(lead) + (spec.d,))
    for k in range(spec.d):
        shift = np.zeros(spec.d)
        shift[k] = np.pi / 2
        grad[..., k] = 0.5 * (evaluate_f(spec, theta + shift, x) - evaluate_f(spec, theta - shift, x))
    return grad


def hessian_entry(spec: CircuitSpec, theta, x, j: int, k: int):
    """``d^2 f / d theta_j d theta_k`` from generator insertions into the forward pass."""
    if not (0 <= j < spec.d and 0 <= k < spec.d):
        raise IndexError(f"hessian index ({j}, {k}) out of range for d={spec.d}")
    theta, x, lead = _prepare(spec, theta, x)
    encode = _gate_encode(spec, x)
    obs = spec.observable
    psi = _forward(spec, theta, encode, lead)
    d_jk = _forward(spec, theta, encode, lead, inserts=(j, k))
    d_j = _forward(spec, theta, encode, lead, inserts=(j,))
    d_k = d_j if j == k else _forward(spec, theta, encode, lead, inserts=(k,))
    out = 2.0 * (_inner(d_jk, obs.apply(psi)) + _inner(d_j, obs.apply(d_k))).real
    return float(out) if out.ndim == 0 else out


def hessian(spec: CircuitSpec, theta, x):
    """Full ``d x d`` Hessian (last two axes), reusing first-derivative states."""
    theta, x, lead = _prepare(spec, theta, x)
    encode = _gate_encode(spec, x)
    obs = spec.observable
    psi = _forward(spec, theta, encode, lead)
    o_psi = obs.apply(psi)
    firsts = [_forward(spec, theta, encode, lead, inserts=(k,)) for k in range(spec.d)]
    o_firsts = [obs.apply(s) for s in firsts]
    out = np.empty(tuple(lead) + (spec.d, spec.d))
    for j in range(spec.d):
        for k in range(j, spec.d):
            d_jk = _forward(spec, theta, encode, lead, inserts=(j, k))
            val = 2.0 * (_inner(d_jk, o_psi) + _inner(firsts[j], o_firsts[k])).real
            out[..., j, k] = val
            out[..., k, j] = val
    return out


# --------------------------------------------------------------------------
# batched evaluation over particles x data points
# --------------------------------------------------------------------------


def encoder_matrices(spec: CircuitSpec, X) -> np.ndarray:
    """Dense ``V_k(x_j)`` for every data point: shape (n, d + 1, 2**m, 2**m)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    eye = np.broadcast_to(np.eye(2**spec.m, dtype=complex), (len(X), 2**spec.m, 2**spec.m))
    xb = np.broadcast_to(X[:, None, :], (len(X), 2**spec.m, X.shape[1]))
    mats = [np.swapaxes(enc.apply(eye, xb), -1, -2) for enc in spec.encoders]
    return np.stack(mats, axis=1)


def batched_value_and_grad(spec: CircuitSpec, thetas, X, matrices=None):
    """Values (N, n) and gradients (N, n, d) for all particle / data pairs.

    ``matrices`` may carry precomputed :func:`encoder_matrices`; with them the
    encoders cost one small batched matmul each.
    """
    thetas = np.asarray(thetas, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if thetas.shape[-1] != spec.d:
        raise ValueError(f"theta has dimension {thetas.shape[-1]}, circuit has {spec.d} parameters")
    if matrices is None:
        matrices = encoder_matrices(spec, X)
    mats_h = np.conj(np.swapaxes(matrices, -1, -2))

    def encode(states, k, adjoint=False):
        mat = mats_h[:, k] if adjoint else matrices[:, k]
        return np.einsum("nij,Nnj->Nni", mat, states)

    N, n = thetas.shape[0], X.shape[0]
    theta_b = np.broadcast_to(thetas[:, None, :], (N, n, spec.d))
    return _value_and_grad(spec, theta_b, encode, (N, n))
