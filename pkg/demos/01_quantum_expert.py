"""
A circuit expert and its derivatives
====================================

Build a three-qubit parametric circuit, evaluate it on a few inputs and
compare the three ways of differentiating it: the adjoint sweep, the
parameter-shift rule and central finite differences. Then look at how large
the derivatives can get.
"""

import numpy as np

from mfmoe import qsim

gen = np.random.default_rng(0)

spec = qsim.CircuitSpec.from_family(3, qsim.default_generators(3, 6), features=2)
print(spec.dumps())

theta = gen.uniform(0, 2 * np.pi, spec.d)
X = np.array([[1.0, 0.0], [-1.0, 1.0], [0.0, -1.0]])

###############################################################################
# Values and gradients
# --------------------
# ``value_and_gradient`` runs one forward and one backward sweep, whatever d is.

for x in X:
    f, g = qsim.value_and_gradient(spec, theta, x)
    shift = qsim.gradient_parameter_shift(spec, theta, x)
    fd = np.array([(qsim.evaluate_f(spec, theta + e, x) - qsim.evaluate_f(spec, theta - e, x)) / 2e-5
                   for e in 1e-5 * np.eye(spec.d)])
    print(f"x={x}: f={f:+.6f}  |adjoint-shift|={np.abs(g - shift).max():.1e}  "
          f"|adjoint-fd|={np.abs(g - fd).max():.1e}")

###############################################################################
# How big do the derivatives get?
# -------------------------------
# Pauli generators have eigenvalues +-1, so every first and second partial
# derivative stays in [-1, 1]; random points land well inside.

worst = np.zeros(3)
for _ in range(300):
    th, x = gen.uniform(0, 2 * np.pi, spec.d), X[gen.integers(len(X))]
    f, g = qsim.value_and_gradient(spec, th, x)
    H = qsim.hessian(spec, th, x)
    worst = np.maximum(worst, [abs(f), np.abs(g).max(), np.abs(H).max()])
print("max |f|, |df|, |d2f| over 300 random points:", np.round(worst, 4))

# the one-qubit circuit f = cos(theta) reaches all three bounds
cos = qsim.cos_circuit()
print("cos circuit:", qsim.evaluate_f(cos, [0.0], [0.0]),
      qsim.gradient_adjoint(cos, [np.pi / 2], [0.0]), qsim.hessian(cos, [0.0], [0.0]))
