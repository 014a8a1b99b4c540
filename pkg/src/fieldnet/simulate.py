"""Forward Euler simulation of the space-discretized delay field model.

One step advances the vectorized field ``V_k`` (one entry per grid cell,
column-major pixel order) by

    V_{k+1} = V_k + (S_k + sum_l W_l V_{k+l} + h .* V_k) * dt
              + factor @ eps_k * sqrt(dt)

where ``S_k`` is the cell-aggregated stimulus, ``W_l`` are the lag weight
matrices integrating the propagation function over target cells and lag
intervals, ``h`` the cell-aggregated memory, and ``eps_k`` i.i.d. standard
normal vectors mixed by the noise covariance matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .arrays import rho_chain
from .bases import memory_field, stimulus_frames
from .errors import DivergenceError, InvalidCovarianceError, ShapeError


@dataclass
class SimConfig:
    """Simulation settings: grid, seed, and the starting trajectory.

    ``history`` holds the ``n_lags`` frames before time zero and
    ``initial_state`` the frame at time zero; both default to zeros,
    which isolates the stimulus response.
    """

    grid: object
    seed: int = 0
    history: Optional[np.ndarray] = None
    initial_state: Optional[np.ndarray] = None
    blowup_threshold: float = 1e12

    def resolved_history(self):
        g = self.grid
        hist = self.history
        if hist is None:
            hist = np.zeros((g.n_x, g.n_y, g.n_lags))
        hist = np.asarray(hist, dtype=np.float64)
        if hist.shape != (g.n_x, g.n_y, g.n_lags):
            raise ShapeError(
                f"history has shape {hist.shape}, expected {(g.n_x, g.n_y, g.n_lags)}"
            )
        state = self.initial_state
        if state is None:
            state = np.zeros((g.n_x, g.n_y))
        state = np.asarray(state, dtype=np.float64)
        if state.shape != (g.n_x, g.n_y):
            raise ShapeError(
                f"initial state has shape {state.shape}, expected {(g.n_x, g.n_y)}"
            )
        return hist, state


@dataclass
class NoiseModel:
    """Stationary spatial noise: covariance function, grid matrix, mixer.

    ``c_tilde`` has entry ``([m,n],[i,j]) = c(x_m - x_i, y_n - y_j) * cell_area^2``;
    ``factor`` is its eigendecomposition with negative eigenvalues clipped
    to zero, used as the mixing matrix for the Gaussian increments.  The
    one-step increment covariance is ``c_tilde.T @ c_tilde * dt``.
    """

    covariance_fn: Callable
    c_tilde: np.ndarray
    factor: np.ndarray


def build_noise_covariance(covariance_fn, grid):
    """Assemble the grid covariance matrix and its PSD-repaired mixer.

    ``covariance_fn`` must be a stationary, symmetric covariance function
    of the displacement, accepting ndarray arguments.  Raises
    :class:`InvalidCovarianceError` when the grid matrix is strongly
    indefinite (minimum eigenvalue below ``-1e-6 * trace``).
    """
    xc = grid.x_centers
    yc = grid.y_centers
    du = xc[:, None, None, None] - xc[None, None, :, None]
    dv = yc[None, :, None, None] - yc[None, None, None, :]
    du, dv = np.broadcast_arrays(du, dv)
    vals = np.asarray(covariance_fn(du, dv), dtype=np.float64)
    d = grid.n_pixels
    c_tilde = vals.reshape(d, d, order="F") * grid.cell_area**2
    c_tilde = (c_tilde + c_tilde.T) / 2.0
    evals, evecs = np.linalg.eigh(c_tilde)
    trace = np.trace(c_tilde)
    if evals.min() < -1e-6 * max(trace, 0.0):
        raise InvalidCovarianceError(
            f"covariance matrix strongly indefinite: min eigenvalue {evals.min():g}"
        )
    factor = (evecs * np.clip(evals, 0.0, None)) @ evecs.T
    return NoiseModel(covariance_fn=covariance_fn, c_tilde=c_tilde, factor=factor)


def gaussian_covariance(length, amplitude=1.0):
    """Isotropic squared-exponential covariance of the displacement."""
    ell2 = 2.0 * float(length) ** 2

    def cov(u, v):
        return amplitude * np.exp(-(np.asarray(u) ** 2 + np.asarray(v) ** 2) / ell2)

    return cov


def white_covariance(amplitude=1.0):
    """Covariance supported only at zero displacement."""

    def cov(u, v):
        u = np.asarray(u)
        v = np.asarray(v)
        return amplitude * ((u == 0) & (v == 0)).astype(np.float64)

    return cov


def build_weight_matrices(beta, basis):
    """Lag weight matrices of shape ``(D, D, L)`` from the propagation
    coefficients.

    Entry ``([m,n],[i,j],l)`` integrates the propagation weight over target
    cell ``(m, n)`` and lag interval ``l`` at source grid point ``(i, j)``,
    assembled from the integrated and pointwise marginal bases.
    """
    w5 = rho_chain([basis.int_x, basis.int_y, basis.phi_x, basis.phi_y, basis.int_l], beta)
    d = basis.grid.n_pixels
    return w5.reshape(d, d, basis.grid.n_lags, order="F")


def simulate_euler(config, coeffs, basis, noise=None):
    """Run the Euler recursion and return all frames,
    ``(n_x, n_y, M + L + 1)``.

    The output stacks the ``n_lags`` history frames, the initial frame,
    and the ``n_steps`` simulated frames.  Deterministic for a fixed seed.
    Raises :class:`DivergenceError` when a state entry exceeds the blow-up
    threshold or turns non-finite, naming the offending step.
    """
    grid = config.grid
    if basis.grid != grid:
        raise ShapeError("basis was built on a different grid")
    coeffs.validate(basis)
    n_lags, n_steps, d = grid.n_lags, grid.n_steps, grid.n_pixels

    hist, state = config.resolved_history()
    traj = np.zeros((d, grid.n_frames))
    traj[:, :n_lags] = hist.reshape(d, n_lags, order="F")
    traj[:, n_lags] = state.ravel(order="F")

    s_vec = grid.cell_area * stimulus_frames(coeffs, basis).reshape(d, n_steps, order="F")
    h_vec = grid.cell_area * memory_field(coeffs, basis).ravel(order="F")
    weights = build_weight_matrices(coeffs.beta, basis).reshape(d, d * n_lags, order="F")

    eps = None
    if noise is not None:
        rng = np.random.default_rng(config.seed)
        eps = rng.standard_normal((d, n_steps))
    sqdt = np.sqrt(grid.dt)

    for k in range(n_steps):
        f = n_lags + k
        lagged = traj[:, k : k + n_lags].ravel(order="F")
        drift = s_vec[:, k] + weights @ lagged + h_vec * traj[:, f]
        nxt = traj[:, f] + drift * grid.dt
        if eps is not None:
            nxt = nxt + (noise.factor @ eps[:, k]) * sqdt
        if not np.all(np.isfinite(nxt)) or np.abs(nxt).max() > config.blowup_threshold:
            raise DivergenceError(f"simulation diverged at step {k}", step=k)
        traj[:, f + 1] = nxt

    return traj.reshape(grid.n_x, grid.n_y, grid.n_frames, order="F")
