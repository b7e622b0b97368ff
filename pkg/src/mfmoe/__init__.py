"""Mean-field mixtures of experts on the torus: particle dynamics, chaos metrics and exact W2."""

from .dynamics import (DynamicsBlowUp, EmpiricalMeasure, ParticleSystem, Trajectory,
                       empirical_measure, integrate, step)
from .experiments import (ConfigError, RateFit, SweepConfig, alpha_d, fit_rate, run_sweep,
                          verify_bounds)
from .experts import (Dataset, FourierExpert, QuantumExpert, drift, expert_eval, expert_grad,
                      lipschitz_constant, loss, make_dataset, mixture_eval, verify_assumption1)
from .mckean import (CoupledRun, coupled_run, integrate_reference, pathwise_chaos_metric,
                     pointwise_chaos_metric)
from .qsim import CircuitSpec, PauliString, StateVector
from .torus import Rng, sample_particles, torus_l1_distance, wrap
from .transport import w1, w2, w2_squared, w2_squared_equal, w2_squared_general

__version__ = "0.1.0"
