"""Matrix-free regression design over the array data.

The autoregression stacks one ``D x p`` design block per modeled frame,
but that matrix is never built.  Its action decomposes into three parts
evaluated through mode transforms on small marginal factors:

* stimulus block: ``phi_t kron phi_y kron phi_x`` acting on ``alpha``,
* propagation block: ``conv kron int_y kron int_x`` acting on ``beta``,
  where ``conv`` is the ``M x (p_x p_y p_l)`` convolution tensor of
  basis-weighted lagged field sums,
* memory block: a Hadamard product of the one-step-lagged data with the
  spatial field spanned by ``gamma``.

The response for modeled frame ``k`` is observation frame ``k + 1``; by
default the lagged frame enters as a fixed offset so the fitted
coefficients describe the frame-to-frame increment.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .arrays import rho_chain, rho_transposed_chain
from .bases import DriftCoefficients
from .errors import ShapeError


def compute_convolution_tensor(data, basis, n_lags=None):
    """Rows of basis-weighted lagged sums, shape ``(M, p_x * p_y * p_l)``.

    Row ``k`` contracts the ``n_lags`` frames before frame ``k`` with the
    pointwise source bases and the lag-interval integrals; it equals the
    mode-transform chain of the transposed marginals applied to the lag
    window, vectorized column-major.
    """
    grid = basis.grid
    n_lags = grid.n_lags if n_lags is None else int(n_lags)
    data = np.asarray(data, dtype=np.float64)
    n_steps = grid.n_steps
    if data.ndim != 3 or data.shape[:2] != (grid.n_x, grid.n_y):
        raise ShapeError(f"data has shape {data.shape}, expected ({grid.n_x}, {grid.n_y}, frames)")
    if data.shape[2] < n_steps + n_lags:
        raise ValueError(
            f"insufficient history: need at least {n_steps + n_lags} frames, got {data.shape[2]}"
        )
    # Contract the spatial modes once for all frames, then fold each lag
    # window against the lag integrals.
    spatial = rho_chain([basis.phi_x.T, basis.phi_y.T], data)  # (frames, p_x, p_y)
    rows = np.empty((n_steps, basis.p_x * basis.p_y * basis.p_l))
    for k in range(n_steps):
        window = spatial[k : k + n_lags]  # frames k-L .. k-1 of the model clock
        block = np.einsum("wab,wq->abq", window, basis.int_l)
        rows[k] = block.ravel(order="F")
    return rows


@dataclass(frozen=True)
class ImplicitDesign:
    """Factors and data views needed to act with the design matrix.

    ``response`` holds frames ``1..M``; ``offset`` (levels convention) the
    frames ``0..M-1`` entering as a fixed additive term; ``v_lag1`` the
    same lagged frames feeding the memory block.  ``omega`` optionally
    weights frames by a precision matrix during fitting.
    """

    basis: object
    response: np.ndarray
    v_lag1: np.ndarray
    phi_xyt: np.ndarray
    offset: Optional[np.ndarray] = None
    omega: Optional[np.ndarray] = None
    omega_sqrt: Optional[np.ndarray] = None

    @property
    def grid(self):
        return self.basis.grid

    @property
    def target(self):
        """Response minus the fixed offset."""
        if self.offset is None:
            return self.response
        return self.response - self.offset

    def with_omega(self, omega, omega_sqrt=None):
        return replace(self, omega=omega, omega_sqrt=omega_sqrt)

    def weight_frames(self, field):
        """Left-multiply each frame by the precision matrix, if any."""
        if self.omega is None:
            return field
        d = self.grid.n_pixels
        m = self.grid.n_steps
        flat = field.reshape(d, m, order="F")
        return (self.omega @ flat).reshape(field.shape, order="F")


def build_design(data, basis, response="levels"):
    """Slice the observed frames into an :class:`ImplicitDesign`.

    ``response='levels'`` regresses frame ``k+1`` with frame ``k`` as a
    fixed offset; ``response='increments'`` regresses the one-step
    differences directly.  Both give identical residuals and fits.
    """
    grid = basis.grid
    data = np.asarray(data, dtype=np.float64)
    expected = (grid.n_x, grid.n_y, grid.n_frames)
    if data.shape != expected:
        raise ShapeError(f"data has shape {data.shape}, expected {expected}")
    n_lags, n_steps = grid.n_lags, grid.n_steps
    lagged = data[:, :, n_lags : n_lags + n_steps]
    following = data[:, :, n_lags + 1 : n_lags + n_steps + 1]
    if response == "levels":
        resp, offset = following, lagged
    elif response == "increments":
        resp, offset = following - lagged, None
    else:
        raise ValueError(f"unknown response convention {response!r}")
    return ImplicitDesign(
        basis=basis,
        response=resp,
        v_lag1=lagged,
        phi_xyt=compute_convolution_tensor(data, basis),
        offset=offset,
    )


def memory_frames(coeffs_or_gamma, design):
    """Memory block predictor: lagged data times the spatial field."""
    gamma = getattr(coeffs_or_gamma, "gamma", coeffs_or_gamma)
    basis = design.basis
    field = rho_chain([basis.phi_x, basis.phi_y], np.asarray(gamma, dtype=np.float64))
    return design.v_lag1 * field[:, :, None]


def linear_predictor(coeffs, design):
    """Sum of the three design block actions, shape ``(n_x, n_y, M)``."""
    basis = design.basis
    coeffs.validate(basis)
    s_part = rho_chain([basis.phi_x, basis.phi_y, basis.phi_t], coeffs.alpha)
    beta3 = coeffs.beta.reshape(basis.p_x, basis.p_y, -1, order="F")
    f_part = rho_chain([basis.int_x, basis.int_y, design.phi_xyt], beta3)
    return s_part + f_part + memory_frames(coeffs, design)


def gradient(residual, design):
    """Adjoint design action on a (precision-weighted) residual array.

    Returns the three blocks of ``X^T (Omega r)`` as a
    :class:`DriftCoefficients`; the gradient of the squared-error loss at
    the point with residual ``r`` is the negative of this.
    """
    basis = design.basis
    residual = np.asarray(residual, dtype=np.float64)
    if residual.shape != design.response.shape:
        raise ShapeError(
            f"residual has shape {residual.shape}, expected {design.response.shape}"
        )
    weighted = design.weight_frames(residual)
    g_alpha = rho_transposed_chain([basis.phi_x, basis.phi_y, basis.phi_t], weighted)
    g_beta3 = rho_transposed_chain([basis.int_x, basis.int_y, design.phi_xyt], weighted)
    g_beta = g_beta3.reshape(
        basis.p_x, basis.p_y, basis.p_x, basis.p_y, basis.p_l, order="F"
    )
    summed = (design.v_lag1 * weighted).sum(axis=2)
    g_gamma = rho_transposed_chain([basis.phi_x, basis.phi_y], summed)
    return DriftCoefficients(alpha=g_alpha, beta=g_beta, gamma=g_gamma)


def model_parameter_count(p_x, p_y, p_t, p_l):
    """Total coefficient count of the three tensor-expanded components."""
    return p_x * p_y * p_t + (p_x * p_y) ** 2 * p_l + p_x * p_y


def naive_var_parameter_count(n_lags, n_pixels):
    """Parameter count of an unrestricted lag-``L`` vector autoregression."""
    return n_lags * n_pixels**2
