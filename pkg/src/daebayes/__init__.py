"""Joint Bayesian calibration of generator and network parameters in
multimachine power-system DAE models from synthetic PMU measurements."""

__version__ = "0.1.0"

from .grid import (AdmittanceMatrix, Branch, GeneratorSpec, NetworkCase,
                   assemble_ybus, builtin_case_ieee9, load_case, save_case,
                   series_admittance)
from .params import (LatentVector, ParamVector, PriorSpec, default_priors,
                     log_prior, to_latent, to_physical)
from .dae import (DaeModel, DynamicState, AlgebraicState, LoadProfile,
                  OperatingPoint, PowerFlowDiverged, SolverConfig,
                  StepDiverged, Trajectory, integrate, measure,
                  residual_f, residual_g, solve_equilibrium)
from .experiments import (MeasurementSet, Pulse, PulseSchedule, SynthesisConfig,
                          TruthSpec, WindowParams, default_experiments_ieee9,
                          draw_truth, effective_sigma, segment_weights,
                          synthesize)
from .likelihood import (FidelityConfig, Posterior, PosteriorEval,
                         noise_ratio_diagnostic)
from .identify import (CurvatureReport, SensitivityRun, co_identifiability,
                       curvature_report, fd_jacobian, gauss_newton_curvature,
                       integrate_sensitivities)
from .sampler import (BlockPartition, ChainConfig, ChainResult, ChainState,
                      GaussianTarget, InitConfig, PosteriorTarget, RunLedger,
                      Summary, adapt, da_step, propose, run_chain,
                      run_decoupled, stagewise_init, summarize)
from .config import RunConfig, config_hash, format_config, load_config, parse_config
