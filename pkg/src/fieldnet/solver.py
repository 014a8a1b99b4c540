"""Penalized estimation of the drift components.

The estimator minimizes

    1/2 sum_k || Omega^(1/2) (y_k - offset_k - (X theta)_k) ||^2
    + lambda * sum_i w_i |theta_i|

over the stacked coefficient blocks, without forming the design matrix.
A block relaxation sweep solves one component at a time against partial
residuals: the stimulus under a rank-one constraint (spatially modulated
common temporal signal), then the propagation block, then the memory
block.  Each sub-problem runs a monotone accelerated proximal gradient
method with backtracking line search, so the full penalized objective is
non-increasing across every sub-solve.  The outer loop couples this with
precision estimation (graphical lasso on the residual covariance) and a
refit on precision-weighted data.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .arrays import rho_chain, rho_transposed_chain
from .bases import DriftCoefficients
from .design import linear_predictor
from .errors import DivergenceError
from .precision import graphical_lasso, matrix_sqrt_psd


def soft_threshold(value, threshold):
    """Proximal operator of the (scaled) absolute value."""
    value = np.asarray(value, dtype=np.float64)
    out = np.sign(value) * np.maximum(np.abs(value) - threshold, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class SolverOptions:
    tol_inner: float = 1e-7
    max_inner: int = 5000
    tol_outer: float = 1e-5
    max_sweeps: int = 20
    tol_rank1: float = 1e-6
    max_rank1: int = 50
    kkt_tol_factor: float = 1e-4
    kkt_check_every: int = 25
    power_iterations: int = 60


@dataclass
class PenaltySpec:
    """Penalty path and per-coefficient weights.

    ``lambda_path`` must be decreasing and positive; zero-weight entries
    are unpenalized.  ``nu`` is the graphical-lasso penalty used by the
    precision step.
    """

    lambda_path: np.ndarray
    weights_stimulus: Optional[np.ndarray] = None
    weights_network: Optional[np.ndarray] = None
    weights_memory: Optional[np.ndarray] = None
    nu: float = 0.0

    def __post_init__(self):
        path = np.asarray(self.lambda_path, dtype=np.float64)
        if path.ndim != 1 or path.size == 0:
            raise ValueError("lambda path must be a non-empty vector")
        if (path <= 0).any():
            raise ValueError("lambda path entries must be positive")
        if (np.diff(path) > 0).any():
            raise ValueError("lambda path must be non-increasing")
        self.lambda_path = path
        for name in ("weights_stimulus", "weights_network", "weights_memory"):
            w = getattr(self, name)
            if w is not None:
                w = np.asarray(w, dtype=np.float64)
                if not np.isfinite(w).all() or (w < 0).any():
                    raise ValueError(f"{name} must be finite and non-negative")
                setattr(self, name, w)
        if self.nu < 0:
            raise ValueError("nu must be non-negative")

    def weights_for(self, basis):
        shapes = {
            "stimulus": (basis.p_x, basis.p_y, basis.p_t),
            "network": (basis.p_x, basis.p_y, basis.p_x, basis.p_y, basis.p_l),
            "memory": (basis.p_x, basis.p_y),
        }
        given = {
            "stimulus": self.weights_stimulus,
            "network": self.weights_network,
            "memory": self.weights_memory,
        }
        out = {}
        for name, shape in shapes.items():
            w = given[name]
            if w is None:
                out[name] = np.ones(shape)
            else:
                out[name] = np.broadcast_to(w, shape).astype(np.float64)
        return out


def default_lambda_path(lam_max, n_lambdas=10, min_ratio=1e-3):
    """Log-spaced path from ``lam_max`` down to ``lam_max * min_ratio``.

    Falls back to a unit path when ``lam_max`` is zero (all-zero target),
    for which every penalized fit is exactly zero anyway.
    """
    if lam_max <= 0:
        return np.geomspace(1.0, min_ratio, n_lambdas)
    return np.geomspace(lam_max, lam_max * min_ratio, n_lambdas)


def stimulus_weight_profile(spec_t, onset, offset, window, low_weight=0.1):
    """Temporal penalty weights reproducing the onset/offset down-weighting.

    Functions whose Greville abscissa falls within ``window`` after the
    stimulus onset or offset get ``low_weight``; all others get one.
    """
    knots = np.asarray(spec_t.knots)
    p = spec_t.degree
    if p == 0:
        peaks = (knots[:-1] + knots[1:]) / 2.0
    else:
        peaks = np.array([knots[q + 1 : q + p + 1].mean() for q in range(spec_t.n_basis)])
    w = np.ones(spec_t.n_basis)
    for start in (onset, offset):
        if start is None:
            continue
        w[(peaks >= start) & (peaks <= start + window)] = low_weight
    return w


# -- component fits -----------------------------------------------------------


class _KronBlock:
    """One design block: a chain of mode factors, optionally followed by a
    Hadamard multiplier, acting on a coefficient array."""

    def __init__(self, name, factors, coef_shape, kron_shape=None, multiplier=None):
        self.name = name
        self.factors = [np.asarray(f, dtype=np.float64) for f in factors]
        self.coef_shape = tuple(coef_shape)
        self.kron_shape = tuple(kron_shape) if kron_shape is not None else self.coef_shape
        self.multiplier = multiplier

    @property
    def size(self):
        return int(np.prod(self.coef_shape))

    def predict(self, coef):
        arr = np.asarray(coef, dtype=np.float64).reshape(self.kron_shape, order="F")
        out = rho_chain(self.factors, arr)
        if self.multiplier is not None:
            out = out * self.multiplier
        return out

    def adjoint(self, fieldarr):
        arr = fieldarr
        if self.multiplier is not None:
            arr = arr * self.multiplier
        out = rho_transposed_chain(self.factors, arr)
        return out.reshape(self.coef_shape, order="F")


def _apply_omega(fieldarr, omega):
    if omega is None:
        return fieldarr
    d = omega.shape[0]
    flat = fieldarr.reshape(d, -1, order="F")
    return (omega @ flat).reshape(fieldarr.shape, order="F")


def _half_sq(resid, omega):
    if omega is None:
        return 0.5 * float(np.vdot(resid, resid))
    d = omega.shape[0]
    flat = resid.reshape(d, -1, order="F")
    return 0.5 * float(np.sum(flat * (omega @ flat)))


def power_lipschitz(block, omega=None, iterations=60, seed=0):
    """Largest eigenvalue of the block's normal operator by power iteration."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(block.coef_shape)
    norm = np.linalg.norm(v)
    if norm == 0:
        return 0.0
    v /= norm
    est = 0.0
    for _ in range(iterations):
        w = block.adjoint(_apply_omega(block.predict(v), omega))
        est = float(np.linalg.norm(w))
        if est <= 0.0:
            return 0.0
        v = w / est
    return est


def kkt_residual(grad_f, coef, lam, weights, tol_factor=1e-4):
    """Stationarity residual and pass flag for the weighted-lasso optimum.

    Non-zero entries must satisfy ``|g + lam w sign(theta)| <= tol * lam``;
    zero entries ``|g| <= lam w (1 + tol)``.
    """
    grad_f = np.asarray(grad_f)
    coef = np.asarray(coef)
    weights = np.broadcast_to(weights, coef.shape)
    nz = coef != 0
    resid = 0.0
    ok = True
    if nz.any():
        r1 = float(np.abs(grad_f[nz] + lam * weights[nz] * np.sign(coef[nz])).max())
        resid = max(resid, r1)
        ok = ok and r1 <= tol_factor * lam
    if (~nz).any():
        excess = np.abs(grad_f[~nz]) - lam * weights[~nz]
        resid = max(resid, max(0.0, float(excess.max())))
        ok = ok and bool((np.abs(grad_f[~nz]) <= lam * weights[~nz] * (1 + tol_factor)).all())
    return resid, ok


@dataclass
class ComponentFit:
    coef: np.ndarray
    objective: float
    trace: np.ndarray
    n_iter: int
    converged: bool
    kkt_residual: float
    kkt_ok: bool


def fit_component(block, target, lam, weights, warm=None, omega=None, options=None,
                  lipschitz=None):
    """Weighted-lasso fit of one block by monotone accelerated proximal
    gradient with backtracking.

    ``target`` is the partial residual the block is fitted against.  The
    returned objective never exceeds the warm-start objective.
    """
    opts = options or SolverOptions()
    weights = np.broadcast_to(np.asarray(weights, dtype=np.float64), block.coef_shape)
    x = (np.zeros(block.coef_shape) if warm is None
         else np.array(warm, dtype=np.float64).reshape(block.coef_shape))

    def smooth(theta):
        return _half_sq(target - block.predict(theta), omega)

    def smooth_grad(theta):
        resid = target - block.predict(theta)
        return _half_sq(resid, omega), -block.adjoint(_apply_omega(resid, omega))

    def penalty(theta):
        return lam * float(np.sum(weights * np.abs(theta)))

    lip = power_lipschitz(block, omega, opts.power_iterations) if lipschitz is None else lipschitz
    if lip <= 1e-300:
        # Zero design: every penalized entry is optimal at zero.
        coef = np.zeros(block.coef_shape) if lam > 0 else x
        obj = smooth(coef) + penalty(coef)
        return ComponentFit(coef, obj, np.array([obj]), 0, True, 0.0, True)

    step0 = 1.0 / lip
    step = step0
    f_best = smooth(x) + penalty(x)
    if not np.isfinite(f_best):
        raise DivergenceError(f"non-finite objective at warm start of {block.name!r}")
    trace = [f_best]
    y = x.copy()
    t_mom = 1.0
    resets = 0
    n_iter = 0
    converged = False
    kkt_res, kkt_pass = np.inf, False
    last_kkt_check = -opts.kkt_check_every

    for it in range(1, opts.max_inner + 1):
        n_iter = it
        fy, gy = smooth_grad(y)
        restarted = False
        while True:
            cand = soft_threshold(y - step * gy, step * lam * weights)
            f_cand = smooth(cand)
            diff = cand - y
            quad = fy + float(np.vdot(gy, diff)) + float(np.vdot(diff, diff)) / (2 * step)
            # NaN objectives fail this test and keep shrinking the step.
            if f_cand <= quad + 1e-12 * max(1.0, abs(quad)):
                break
            step *= 0.5
            if step < 1e-30:
                if resets == 0:
                    # restart once from the incumbent with a fresh gradient
                    resets = 1
                    step = step0
                    y = x.copy()
                    t_mom = 1.0
                    restarted = True
                    break
                raise DivergenceError(f"component fit diverged for block {block.name!r}")
        if restarted:
            trace.append(f_best)
            continue
        obj_cand = f_cand + penalty(cand)
        # Monotone acceleration: keep the incumbent when the accelerated
        # candidate overshoots, but still extrapolate through it.
        accepted = obj_cand <= f_best
        if accepted:
            x_new, f_new = cand, obj_cand
        else:
            x_new, f_new = x, f_best
        t_new = (1.0 + np.sqrt(1.0 + 4.0 * t_mom**2)) / 2.0
        y = x_new + (t_mom / t_new) * (cand - x_new) + ((t_mom - 1.0) / t_new) * (x_new - x)
        rel = abs(f_best - f_new) / max(1.0, abs(f_best))
        x, f_best, t_mom = x_new, f_new, t_new
        trace.append(f_best)
        # A rejected overshoot is a transient stall, not convergence.
        if accepted and rel < opts.tol_inner:
            if lam == 0:
                _, g = smooth_grad(x)
                kkt_res, kkt_pass = float(np.abs(g).max()), True
                converged = True
                break
            if it - last_kkt_check >= opts.kkt_check_every:
                last_kkt_check = it
                _, g = smooth_grad(x)
                kkt_res, kkt_pass = kkt_residual(g, x, lam, weights, opts.kkt_tol_factor)
                if kkt_pass:
                    converged = True
                    break
    if not np.isfinite(kkt_res):
        _, g = smooth_grad(x)
        if lam == 0:
            kkt_res, kkt_pass = float(np.abs(g).max()), True
        else:
            kkt_res, kkt_pass = kkt_residual(g, x, lam, weights, opts.kkt_tol_factor)
    return ComponentFit(x, f_best, np.asarray(trace), n_iter, converged, kkt_res, kkt_pass)


# -- design blocks ------------------------------------------------------------


def stimulus_block(design):
    b = design.basis
    return _KronBlock("stimulus", [b.phi_x, b.phi_y, b.phi_t], (b.p_x, b.p_y, b.p_t))


def network_block(design):
    b = design.basis
    return _KronBlock(
        "network",
        [b.int_x, b.int_y, design.phi_xyt],
        (b.p_x, b.p_y, b.p_x, b.p_y, b.p_l),
        kron_shape=(b.p_x, b.p_y, b.p_x * b.p_y * b.p_l),
    )


def memory_block(design):
    b = design.basis
    ones_t = np.ones((b.grid.n_steps, 1))
    return _KronBlock(
        "memory",
        [b.phi_x, b.phi_y, ones_t],
        (b.p_x, b.p_y),
        kron_shape=(b.p_x, b.p_y, 1),
        multiplier=design.v_lag1,
    )


def _design_blocks(design):
    return {
        "stimulus": stimulus_block(design),
        "network": network_block(design),
        "memory": memory_block(design),
    }


def standardized_weights(design):
    """Per-coefficient penalty weights equal to the design column norms.

    Standardizes the penalty so every coefficient activates at a
    comparable correlation level.  Kronecker-block column norms factor
    into products of marginal column norms; the memory block's norms
    contract the squared lagged data against the squared spatial bases.
    Identically-zero columns get weight zero (unpenalized, never active).
    """
    basis = design.basis
    nx = np.linalg.norm(basis.phi_x, axis=0)
    ny = np.linalg.norm(basis.phi_y, axis=0)
    nt = np.linalg.norm(basis.phi_t, axis=0)
    nix = np.linalg.norm(basis.int_x, axis=0)
    niy = np.linalg.norm(basis.int_y, axis=0)
    nconv = np.linalg.norm(design.phi_xyt, axis=0)
    w_stim = np.einsum("a,b,c->abc", nx, ny, nt)
    w_net = np.einsum("a,b,c->abc", nix, niy, nconv).reshape(
        basis.p_x, basis.p_y, basis.p_x, basis.p_y, basis.p_l, order="F"
    )
    sq = np.einsum("ma,nb,mnk->ab", basis.phi_x**2, basis.phi_y**2, design.v_lag1**2)
    w_mem = np.sqrt(sq)
    return {"stimulus": w_stim, "network": w_net, "memory": w_mem}


def lambda_max(design, weights=None):
    """Smallest penalty level whose solution is exactly zero.

    Computed as the largest weighted gradient entry of the smooth loss at
    the zero coefficient vector; an all-zero target gives zero.
    """
    blocks = _design_blocks(design)
    if weights is None:
        weights = PenaltySpec(np.array([1.0])).weights_for(design.basis)
    weighted = _apply_omega(design.target, design.omega)
    out = 0.0
    for name, block in blocks.items():
        g = np.abs(block.adjoint(weighted))
        w = np.broadcast_to(weights[name], g.shape)
        mask = w > 0
        if mask.any():
            out = max(out, float((g[mask] / w[mask]).max()))
    return out


# -- reduced-rank stimulus -----------------------------------------------------


@dataclass
class Rank1Fit:
    zeta: np.ndarray
    eta: np.ndarray
    alpha: np.ndarray
    objective: float
    n_alternations: int
    n_iter: int
    converged: bool
    collapsed: bool


def _rank1_init(design, target):
    """Leading separable direction of the stimulus-block gradient at zero."""
    block = stimulus_block(design)
    g = block.adjoint(_apply_omega(target, design.omega))
    b = design.basis
    mat = g.reshape(b.p_x * b.p_y, b.p_t, order="F")
    _, _, vt = np.linalg.svd(mat, full_matrices=False)
    zeta = vt[0]
    peak = int(np.abs(zeta).argmax())
    if zeta[peak] < 0:
        zeta = -zeta
    return zeta


def _gram_norm(mat):
    return float(np.linalg.eigvalsh(mat.T @ mat).max())


def fit_reduced_rank_stimulus(design, target, lam, weights=None, warm_zeta=None,
                              warm_eta=None, options=None):
    """Rank-one stimulus fit by alternating weighted lassos.

    The stimulus coefficients are constrained to ``alpha[i,j,k] =
    zeta[k] * eta[i,j]``.  Fixing one factor reduces the problem to a
    weighted lasso for the other (the fixed factor is absorbed into the
    design and the penalty weights); alternation makes the joint
    objective non-increasing.  Returns a collapsed (all-zero) stimulus
    with a flag when either factor vanishes.
    """
    opts = options or SolverOptions()
    basis = design.basis
    omega = design.omega
    if weights is None:
        weights = np.ones((basis.p_x, basis.p_y, basis.p_t))
    weights = np.broadcast_to(np.asarray(weights, dtype=np.float64),
                              (basis.p_x, basis.p_y, basis.p_t))

    zeta = None if warm_zeta is None else np.array(warm_zeta, dtype=np.float64)
    eta = (np.zeros((basis.p_x, basis.p_y)) if warm_eta is None
           else np.array(warm_eta, dtype=np.float64))
    if zeta is None or not zeta.any():
        zeta = _rank1_init(design, target)
    # balance the factor scales without changing their product
    nz = np.linalg.norm(zeta)
    if nz > 0:
        zeta = zeta / nz
        eta = eta * nz

    omega_norm = 1.0
    if omega is not None:
        omega_norm = float(np.linalg.eigvalsh(omega).max())
    lip_x = _gram_norm(basis.phi_x)
    lip_y = _gram_norm(basis.phi_y)
    lip_t = _gram_norm(basis.phi_t)
    ones_x = np.ones((basis.grid.n_x, 1))
    ones_y = np.ones((basis.grid.n_y, 1))

    def joint_objective(z, e):
        alpha = np.einsum("k,ij->ijk", z, e)
        block = stimulus_block(design)
        resid = target - block.predict(alpha)
        return _half_sq(resid, omega) + lam * float(np.sum(weights * np.abs(alpha)))

    obj = joint_objective(zeta, eta)
    total_iter = 0
    converged = False
    collapsed = False
    n_alt = 0
    for n_alt in range(1, opts.max_rank1 + 1):
        profile = basis.phi_t @ zeta  # temporal signal implied by zeta
        if not profile.any():
            collapsed = True
            eta = np.zeros_like(eta)
            break
        eta_block = _KronBlock(
            "stimulus-eta",
            [basis.phi_x, basis.phi_y, profile[:, None]],
            (basis.p_x, basis.p_y),
            kron_shape=(basis.p_x, basis.p_y, 1),
        )
        w_eta = np.einsum("ijk,k->ij", weights, np.abs(zeta))
        lip_eta = float(profile @ profile) * lip_x * lip_y * omega_norm
        fit_e = fit_component(eta_block, target, lam, w_eta, warm=eta, omega=omega,
                              options=opts, lipschitz=lip_eta)
        eta = fit_e.coef
        total_iter += fit_e.n_iter
        if not eta.any():
            collapsed = True
            break
        field = rho_chain([basis.phi_x, basis.phi_y], eta)
        zeta_block = _KronBlock(
            "stimulus-zeta",
            [ones_x, ones_y, basis.phi_t],
            (basis.p_t,),
            kron_shape=(1, 1, basis.p_t),
            multiplier=field[:, :, None],
        )
        w_zeta = np.einsum("ijk,ij->k", weights, np.abs(eta))
        lip_zeta = float(np.sum(field * field)) * lip_t * omega_norm
        fit_z = fit_component(zeta_block, target, lam, w_zeta, warm=zeta, omega=omega,
                              options=opts, lipschitz=lip_zeta)
        zeta = fit_z.coef
        total_iter += fit_z.n_iter
        if not zeta.any():
            collapsed = True
            eta = np.zeros_like(eta)
            break
        new_obj = fit_z.objective
        if abs(obj - new_obj) <= opts.tol_rank1 * max(1.0, abs(obj)):
            obj = new_obj
            converged = True
            break
        obj = new_obj
    if collapsed:
        obj = joint_objective(zeta, np.zeros_like(eta))
        eta = np.zeros_like(eta)
        converged = True
    alpha = np.einsum("k,ij->ijk", zeta, eta)
    return Rank1Fit(zeta, eta, alpha, obj, n_alt, total_iter, converged, collapsed)


# -- block relaxation over the penalty path ------------------------------------


@dataclass
class LambdaFit:
    lam: float
    coeffs: DriftCoefficients
    objective_trace: np.ndarray
    n_nonzero: dict
    iterations: dict
    converged: dict
    kkt: dict
    n_sweeps: int
    converged_outer: bool

    @property
    def objective(self):
        return float(self.objective_trace[-1])

    @property
    def total_iterations(self):
        return int(sum(self.iterations.values()))


@dataclass
class FitResult:
    lambda_path: np.ndarray
    fits: list
    omega: Optional[np.ndarray] = None

    def best_index(self):
        """Index of the smallest final objective along the path."""
        if not self.fits:
            return None
        return int(np.argmin([f.objective for f in self.fits]))


@dataclass
class MrceResult:
    first: FitResult
    sigma_residual: np.ndarray
    precision: object
    second: FitResult
    lambda_index: int


def fit_penalized(design, lam, penalty_weights=None, omega=None, options=None,
                  warm=None, lipschitz=None):
    """Block-relaxed fit of all three components at one penalty level.

    ``lam`` may be zero (pure least squares).  ``warm`` is an optional
    ``DriftCoefficients`` whose rank-one factors seed the stimulus.
    """
    opts = options or SolverOptions()
    if omega is not None:
        design = design.with_omega(omega)
    basis = design.basis
    if penalty_weights is None:
        penalty_weights = PenaltySpec(np.array([1.0])).weights_for(basis)
    blocks = _design_blocks(design)
    if lipschitz is None:
        lipschitz = {
            name: power_lipschitz(block, design.omega, opts.power_iterations)
            for name, block in blocks.items()
            if name != "stimulus"
        }
    target = design.target

    if warm is None:
        zeta, eta = None, None
        beta3 = np.zeros(blocks["network"].coef_shape)
        gamma = np.zeros(blocks["memory"].coef_shape)
    else:
        zeta = None if warm.zeta is None else warm.zeta.copy()
        eta = None if warm.eta is None else warm.eta.copy()
        beta3 = warm.beta.copy()
        gamma = warm.gamma.copy()
    alpha = (np.zeros(blocks["stimulus"].coef_shape) if zeta is None or eta is None
             else np.einsum("k,ij->ijk", zeta, eta))

    pred_s = blocks["stimulus"].predict(alpha)
    pred_f = blocks["network"].predict(beta3)
    pred_h = blocks["memory"].predict(gamma)

    w_a = penalty_weights["stimulus"]
    w_b = penalty_weights["network"]
    w_g = penalty_weights["memory"]

    def full_objective():
        resid = target - pred_s - pred_f - pred_h
        pen = lam * (
            float(np.sum(w_a * np.abs(alpha)))
            + float(np.sum(w_b * np.abs(beta3)))
            + float(np.sum(w_g * np.abs(gamma)))
        )
        return _half_sq(resid, design.omega) + pen

    trace = [full_objective()]
    iterations = {"stimulus": 0, "network": 0, "memory": 0}
    converged_blocks = {"stimulus": True, "network": True, "memory": True}
    kkt = {"stimulus": 0.0, "network": 0.0, "memory": 0.0}
    converged_outer = False
    sweeps = 0
    for sweeps in range(1, opts.max_sweeps + 1):
        obj_start = trace[-1]

        rank1 = fit_reduced_rank_stimulus(
            design, target - pred_f - pred_h, lam, w_a, zeta, eta, opts
        )
        zeta, eta, alpha = rank1.zeta, rank1.eta, rank1.alpha
        pred_s = blocks["stimulus"].predict(alpha)
        iterations["stimulus"] += rank1.n_iter
        converged_blocks["stimulus"] = rank1.converged
        trace.append(full_objective())

        fit_b = fit_component(
            blocks["network"], target - pred_s - pred_h, lam, w_b, beta3,
            design.omega, opts, lipschitz["network"],
        )
        beta3 = fit_b.coef
        pred_f = blocks["network"].predict(beta3)
        iterations["network"] += fit_b.n_iter
        converged_blocks["network"] = fit_b.converged
        kkt["network"] = fit_b.kkt_residual
        trace.append(full_objective())

        fit_g = fit_component(
            blocks["memory"], target - pred_s - pred_f, lam, w_g, gamma,
            design.omega, opts, lipschitz["memory"],
        )
        gamma = fit_g.coef
        pred_h = blocks["memory"].predict(gamma)
        iterations["memory"] += fit_g.n_iter
        converged_blocks["memory"] = fit_g.converged
        kkt["memory"] = fit_g.kkt_residual
        trace.append(full_objective())

        if abs(obj_start - trace[-1]) <= opts.tol_outer * max(1.0, abs(obj_start)):
            converged_outer = True
            break

    beta = beta3.reshape(basis.p_x, basis.p_y, basis.p_x, basis.p_y, basis.p_l, order="F")
    coeffs = DriftCoefficients(alpha=alpha, beta=beta, gamma=gamma, zeta=zeta, eta=eta)
    return LambdaFit(
        lam=float(lam),
        coeffs=coeffs,
        objective_trace=np.asarray(trace),
        n_nonzero=coeffs.nonzero_counts(),
        iterations=iterations,
        converged=converged_blocks,
        kkt=kkt,
        n_sweeps=sweeps,
        converged_outer=converged_outer,
    )


def fit_block_relaxation(design, penalty, omega=None, options=None, warm_start=True,
                         max_workers=None):
    """Fit the whole penalty path.

    Sequential fits reuse the previous solution as a warm start; with
    ``warm_start=False`` the fits are independent (cold starts) and may
    run concurrently when ``max_workers`` is set.
    """
    opts = options or SolverOptions()
    if omega is not None:
        design = design.with_omega(omega)
    weights = penalty.weights_for(design.basis)
    blocks = _design_blocks(design)
    lipschitz = {
        name: power_lipschitz(block, design.omega, opts.power_iterations)
        for name, block in blocks.items()
        if name != "stimulus"
    }

    path = penalty.lambda_path
    fits = [None] * path.size
    if warm_start or max_workers in (None, 0, 1):
        warm = None
        for i, lam in enumerate(path):
            fits[i] = fit_penalized(design, lam, weights, None, opts,
                                    warm=warm if warm_start else None,
                                    lipschitz=lipschitz)
            if warm_start:
                warm = fits[i].coeffs
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = {
                pool.submit(fit_penalized, design, lam, weights, None, opts, None,
                            lipschitz): i
                for i, lam in enumerate(path)
            }
            for fut in concurrent.futures.as_completed(futures):
                fits[futures[fut]] = fut.result()
    return FitResult(lambda_path=path.copy(), fits=fits, omega=design.omega)


def residual_covariance(design, coeffs):
    """Average outer product of the model residual frames, ``D x D``."""
    resid = design.target - linear_predictor(coeffs, design)
    d = design.grid.n_pixels
    flat = resid.reshape(d, -1, order="F")
    return (flat @ flat.T) / design.grid.n_steps


def mrce_loop(design, penalty, options=None, lambda_index=None, max_workers=None):
    """Two-round estimation: fit, estimate the noise precision from the
    residual covariance by graphical lasso, then refit on weighted data.

    ``lambda_index`` selects the path entry feeding the precision step
    (defaults to the path midpoint).  The second-round path is rebuilt
    from the weighted problem's own zero-solution level, keeping the
    length and dynamic range of the original path.
    """
    opts = options or SolverOptions()
    first = fit_block_relaxation(design, penalty, None, opts, max_workers=max_workers)
    idx = penalty.lambda_path.size // 2 if lambda_index is None else int(lambda_index)
    sigma_r = residual_covariance(design, first.fits[idx].coeffs)
    prec = graphical_lasso(sigma_r, penalty.nu)
    omega_sqrt = matrix_sqrt_psd(prec.omega)
    design2 = design.with_omega(prec.omega, omega_sqrt)

    lam_max2 = lambda_max(design2, penalty.weights_for(design.basis))
    ratio = penalty.lambda_path[-1] / penalty.lambda_path[0]
    path2 = default_lambda_path(lam_max2, penalty.lambda_path.size, ratio)
    penalty2 = replace(penalty, lambda_path=path2)
    second = fit_block_relaxation(design2, penalty2, None, opts, max_workers=max_workers)
    return MrceResult(first=first, sigma_residual=sigma_r, precision=prec,
                      second=second, lambda_index=idx)


def support_scores(estimated, truth):
    """Support recovery summary of an estimated coefficient array."""
    est = np.asarray(estimated) != 0
    tru = np.asarray(truth) != 0
    n_true = int(tru.sum())
    n_est = int(est.sum())
    hits = int((est & tru).sum())
    return {
        "n_true": n_true,
        "n_estimated": n_est,
        "recall": hits / n_true if n_true else 1.0,
        "false_positive_rate": (n_est - hits) / n_est if n_est else 0.0,
    }
