"""Numerical laboratory for continuous-state branching processes in
varying environments (CBVE) and their rescaled Galton-Watson
approximations.

Core entry points:

* environments: ``EnvironmentSpec``, ``validate_admissible``,
  ``canonicalize``, ``compute_C0``, ``discretize_time``
* mechanism: ``MechanismView``, ``k1``, ``k_func``, ``m_phi``
* limit cumulant: ``solve_backward``, ``transition_laplace``,
  ``envelope_bounds``
* discrete approximation: ``build_discrete_model``,
  ``condition_a_residuals``, ``convergence_report``
* simulation: ``pgf_pmf``, ``simulate_trajectory``, ``mc_laplace_check``
"""

from .cumulant import (CumulantSolution, EnvelopeConstants, envelope_bounds,
                       solve_backward, solve_grid, solve_profile,
                       transition_laplace)
from .discrete import (DiscreteModel, build_discrete_model, condition_a_bound,
                       condition_a_residuals, convergence_report, h_k)
from .environment import (EnvAtom, EnvPiece, EnvironmentSpec, MomentQuery,
                          RawTriplet, beta_for_level, canonicalize, compute_C0,
                          discretize_time, environment_from_dict,
                          kernel_moments, reconstruct_raw, validate_admissible)
from .errors import (CbveError, ConfigError, EnvelopeError, ExplosionError,
                     KernelQueryError, LevelTooSmallError,
                     NegativeCumulantError, NonConvergenceError,
                     PgfCoefficientError)
from .kernels import AtomicKernel, PowerLawKernel
from .mechanism import MechanismView, c_trunc, k1, k_func, m_phi, m_phi_prime, phi
from .pgf import IDENTITY, Pgf, PowerLawTerm, point_mass_mixture, poisson_pgf
from .scenarios import builtin_config, builtin_environment, list_builtin_scenarios
from .simulate import (McReport, OffspringPmf, Trajectory, mc_laplace_check,
                       pgf_pmf, pmf_chi_square, simulate_trajectory)
from .timescale import DiscreteTimeScale, GammaAtom, GammaPiece, TimeScale

__version__ = "0.1.0"
