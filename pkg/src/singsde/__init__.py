"""Monte Carlo laboratory for SDEs with singular coefficients."""
from .coefficients import (CertificationError, Ellipticity, ExponentPair, Field, GridField, MollificationFamily,
                           MollifiedMember, bessel_norm, ellipticity_margin, mixed_norm, mollify,
                           plancherel_norm, stratonovich_correction, wz_correction)
from .mckean_vlasov import (EmpiricalMeasure, MkvProblem, chaos_report, convolve_measure, fixed_point_solve,
                            particle_system_solve, wasserstein)
from .noise import BrownianPath, RngStream, TimeGrid, refine, restrict, sample_brownian
from .reports import ConvergenceReport, RateFit, fit_rate
from .sde import SdeProblem, SolvedPath, euler_maruyama, euler_maruyama_frozen, exact_gbm, solve_stratonovich
from .stability import (NormSpec, StabilityReport, coupled_error, khasminskii_functional, stability_scan,
                        stability_scan_stratonovich)
from .wong_zakai import (WienerApproxFamily, build_approximation, estimate_c, estimate_s, solve_driven_ode,
                         two_step_experiment)

__version__ = "0.1.0"
