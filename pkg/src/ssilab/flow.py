"""Probability-flow ODE integration for VE and VP formulations.

One signed-step integrator serves both directions: descending grids sample
(high noise to low), ascending grids invert.  The VP formulation works in
scaled coordinates with the score evaluated on the unscaled state.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import IntegrationDivergedError, InvalidArgumentError
from .oracles import SubspaceGaussianScore
from .schedules import Family, NoiseSchedule, TimeGrid


class Method(str, Enum):
    EULER = "euler"
    HEUN = "heun"


class Formulation(str, Enum):
    VE = "ve"
    VP_SCALED = "vp_scaled"


@dataclass(frozen=True)
class IntegratorSpec:
    method: Method = Method.EULER
    formulation: Formulation = Formulation.VE


@dataclass(frozen=True)
class Trajectory:
    """Time-indexed path of states; ``states[i]`` matches ``grid.times[i]``.

    ``states`` has shape ``(len(grid), ..., d)`` so a batch of trajectories
    shares one grid.
    """

    states: np.ndarray
    grid: TimeGrid
    schedule: NoiseSchedule

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.shape[0] != len(self.grid):
            raise InvalidArgumentError("states and grid lengths differ")
        if not np.all(np.isfinite(states)):
            raise InvalidArgumentError("trajectory contains non-finite states")
        object.__setattr__(self, "states", states)

    @property
    def sigmas(self) -> np.ndarray:
        return np.asarray(self.schedule.sigma(self.grid.times))


def ode_drift(schedule: NoiseSchedule, oracle, x, t: float,
              formulation: Formulation = Formulation.VE):
    """Right-hand side of the flow ODE at ``(x, t)``.

    VE: ``-sigma_dot * sigma * score(x, sigma)``.  VP (scaled coordinates):
    ``(s_dot/s) x - s * sigma_dot * sigma * score(x / s, sigma)`` with the
    score evaluated on the unscaled state.
    """
    sigma = float(schedule.sigma(t))
    if sigma <= 0.0:
        raise InvalidArgumentError("drift undefined where sigma(t) = 0")
    sigma_dot = float(schedule.sigma_dot(t))
    if formulation is Formulation.VE:
        return -sigma_dot * sigma * oracle.score(x, sigma)
    s = float(schedule.scale(t))
    s_dot = float(schedule.scale_dot(t))
    return (s_dot / s) * x - s * sigma_dot * sigma * oracle.score(x / s, sigma)


def integrate(schedule: NoiseSchedule, oracle, spec: IntegratorSpec,
              x_start, grid: TimeGrid) -> Trajectory:
    """March ``x_start`` across ``grid`` with Euler or Heun steps.

    Steps are signed, so ascending and descending grids use identical code.
    Heun is the trapezoidal predictor-corrector with a single correction pass.
    Raises :class:`IntegrationDivergedError` with the failing step index if a
    state goes non-finite.
    """
    times = grid.times
    x = np.asarray(x_start, dtype=float)
    out = np.empty((times.size,) + x.shape)
    out[0] = x
    for i in range(times.size - 1):
        t0, t1 = float(times[i]), float(times[i + 1])
        h = t1 - t0
        d0 = ode_drift(schedule, oracle, x, t0, spec.formulation)
        if spec.method is Method.EULER:
            x = x + h * d0
        else:
            pred = x + h * d0
            d1 = ode_drift(schedule, oracle, pred, t1, spec.formulation)
            x = x + 0.5 * h * (d0 + d1)
        if not np.all(np.isfinite(x)):
            raise IntegrationDivergedError(i)
        out[i + 1] = x
    return Trajectory(states=out, grid=grid, schedule=schedule)


def gaussian_exact(oracle: SubspaceGaussianScore, x_start, t_start: float,
                   t_end: float, schedule: NoiseSchedule = None):
    """Closed-form VE flow map for the subspace-Gaussian oracle.

    With the linear score the flow decouples: the coefficient along basis
    column ``i`` (latent variance ``lam_i``) scales by
    ``sqrt((lam_i + t_end^2) / (lam_i + t_start^2))`` and the normal component
    scales by ``t_end / t_start``.  Used as the exact reference for
    convergence-order tests.
    """
    if not isinstance(oracle, SubspaceGaussianScore):
        raise InvalidArgumentError("exact flow map needs a subspace-Gaussian oracle")
    if schedule is not None and schedule.family is not Family.VE_KARRAS:
        raise InvalidArgumentError("exact flow map is for the VE schedule")
    x = np.asarray(x_start, dtype=float)
    y = x - oracle.offset
    coef = y @ oracle.basis
    normal = y - coef @ oracle.basis.T
    lam = oracle.latent_stddevs**2
    coef_end = coef * np.sqrt((lam + t_end**2) / (lam + t_start**2))
    if t_start == 0.0:
        if np.max(np.abs(normal)) > 0.0:
            raise InvalidArgumentError(
                "flow map from t=0 is singular for states off the subspace")
        normal_end = np.zeros_like(normal)
    else:
        normal_end = normal * (t_end / t_start)
    return oracle.offset + coef_end @ oracle.basis.T + normal_end


def denoise_to_mean(oracle, x, sigma: float):
    """Final explicit clean-up step: replace the state by its posterior mean."""
    return oracle.posterior_mean(x, sigma)


def sample(schedule: NoiseSchedule, oracle, spec: IntegratorSpec,
           grid_descending: TimeGrid, seed, count: int,
           return_trajectory: bool = False):
    """Draw ``count`` samples by integrating from pure noise down the grid.

    Initialises at ``N(0, sigma(t_max)^2 I)`` (scaled for VP), integrates to
    the grid's last (smallest) time, then applies the denoise-to-mean step.
    """
    if grid_descending.times[0] <= grid_descending.times[-1]:
        raise InvalidArgumentError("sampling needs a descending grid")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    t_max = float(grid_descending.times[0])
    sigma_max = float(schedule.sigma(t_max))
    x_init = sigma_max * rng.standard_normal((count, oracle.dim))
    if spec.formulation is Formulation.VP_SCALED:
        x_init = float(schedule.scale(t_max)) * x_init
    traj = integrate(schedule, oracle, spec, x_init, grid_descending)
    x_end = traj.states[-1]
    t_end = float(grid_descending.times[-1])
    if spec.formulation is Formulation.VP_SCALED:
        x_end = x_end / float(schedule.scale(t_end))
    x0 = denoise_to_mean(oracle, x_end, float(schedule.sigma(t_end)))
    return (x0, traj) if return_trajectory else x0


def trajectory_to_csv(traj: Trajectory, path, summary_only: bool = False) -> None:
    """Write a trajectory as CSV with columns step, t, sigma, then the state.

    With ``summary_only`` the state columns collapse to the Euclidean norm
    (useful for high-dimensional or batched trajectories).
    """
    times = traj.grid.times
    sigmas = np.asarray(traj.schedule.sigma(times))
    states = traj.states
    rows = []
    if summary_only or states.ndim > 2:
        flat = states.reshape(states.shape[0], -1, states.shape[-1])
        norms = np.linalg.norm(flat, axis=-1)
        header = ["step", "t", "sigma"] + [f"norm_{j}" for j in range(norms.shape[1])]
        for i in range(times.size):
            rows.append([i, times[i], sigmas[i], *norms[i]])
    else:
        header = ["step", "t", "sigma"] + [f"x{j}" for j in range(states.shape[-1])]
        for i in range(times.size):
            rows.append([i, times[i], sigmas[i], *states[i]])
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) if isinstance(v, int) else repr(float(v))
                              for v in row) + "\n")
