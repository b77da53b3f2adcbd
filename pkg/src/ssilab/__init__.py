"""Numerical laboratory for singularity-skipping inversion of diffusion flows."""

__version__ = "0.1.0"

from .errors import (ConfigError, IntegrationDivergedError, InvalidArgumentError,
                     UndefinedCorrelationError)
from .schedules import (Direction, Family, NoiseSchedule, TimeGrid, VE_KARRAS,
                        VP_LINEAR_BETA, alpha_bar_discrete, ddim_kappa_grid,
                        kappa_indices, karras_grid)
from .oracles import (PerturbedScoreOracle, PointCloudScore, ScoreOracle,
                      SubspaceGaussianScore, circle_point_cloud,
                      gaussian_on_axis, random_subspace, toy_image_subspace)
from .flow import (Formulation, IntegratorSpec, Method, Trajectory,
                   denoise_to_mean, gaussian_exact, integrate, ode_drift,
                   sample, trajectory_to_csv)
from .inversion import (AlphaMode, DDIMCoefficients, InversionConfig,
                        InversionMethod, InversionResult, ddim_coefficients,
                        ddim_invert_baseline, ddim_sample,
                        pf_ode_sigma_euler_step, reconstruct, ssi_invert_ve,
                        ssi_invert_vp)
from .interp import SlerpPair, interpolate_and_decode, slerp
from .diagnostics import (BoundCheck, ConcentrationReport, GaussianityReport,
                          chi_square_bound, correlation_metrics, mse,
                          projection_concentration, singularity_trace, ssim,
                          trace_rms)
from .config import (COMMANDS, build_grid, build_method, build_oracle,
                     build_schedule, config_hash, resolve_config)
from .experiments import (cmd_interpolate, cmd_invert, cmd_reconstruct,
                          cmd_sweep_tssi, cmd_verify_projection,
                          cmd_verify_singularity, replay, run_command)
