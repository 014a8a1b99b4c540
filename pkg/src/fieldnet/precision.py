"""Sparse precision estimation by graphical lasso.

Minimizes ``tr(S Omega) - log det(Omega) + nu * ||Omega||_1,off`` over
positive definite matrices by block coordinate descent on the working
covariance: one column at a time is updated through a coordinate-descent
lasso, and the precision matrix is recovered from the column solutions.
Only off-diagonal entries are penalized, so large ``nu`` shrinks the
estimate to ``diag(1 / S_ii)`` rather than deflating the variances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass
class PrecisionEstimate:
    omega: np.ndarray
    n_nonzero: int
    converged: bool
    dual_gap: float
    n_sweeps: int
    objective_trace: np.ndarray = None


def ridge_repair(s):
    """Shift an almost-PSD matrix so its spectrum clears a small floor."""
    s = np.asarray(s, dtype=np.float64)
    d = s.shape[0]
    lam_min = float(np.linalg.eigvalsh(s).min())
    eps = max(0.0, 1e-8 * np.trace(s) / d - lam_min)
    if eps > 0:
        s = s + eps * np.eye(d)
    return s


def matrix_sqrt_psd(a, floor_rel=1e-10):
    """Symmetric PSD square root with a relative eigenvalue floor."""
    a = np.asarray(a, dtype=np.float64)
    evals, evecs = np.linalg.eigh((a + a.T) / 2.0)
    floor = floor_rel * max(evals.max(), 0.0)
    evals = np.clip(evals, floor, None)
    return (evecs * np.sqrt(evals)) @ evecs.T


def glasso_objective(s, omega, nu):
    """Penalized negative Gaussian log-likelihood (up to constants)."""
    sign, logdet = np.linalg.slogdet(omega)
    if sign <= 0:
        return np.inf
    off = np.abs(omega).sum() - np.abs(np.diag(omega)).sum()
    return float(np.sum(s * omega) - logdet + nu * off)


def _dual_gap(s, omega, w_dual, nu):
    # w_dual is dual feasible (diag equal to diag(s), off-diagonals within
    # nu of s), so logdet(w_dual) + D lower-bounds the primal optimum.
    sign, logdet = np.linalg.slogdet(w_dual)
    if sign <= 0:
        return np.inf
    return glasso_objective(s, omega, nu) - logdet - omega.shape[0]


def _lasso_cd(v, s12, nu, beta, tol, max_iter):
    # minimize 0.5 b'Vb - b's12 + nu |b|_1 by cyclic coordinate descent
    p = s12.size
    for _ in range(max_iter):
        delta = 0.0
        for q in range(p):
            r = s12[q] - v[q] @ beta + v[q, q] * beta[q]
            new = np.sign(r) * max(abs(r) - nu, 0.0) / v[q, q]
            delta = max(delta, abs(new - beta[q]))
            beta[q] = new
        if delta <= tol:
            break
    return beta


def graphical_lasso(s, nu, max_sweeps=500, gap_tol=1e-6, inner_tol=1e-10,
                    max_inner=1000):
    """Penalized precision estimate from a covariance matrix.

    ``s`` must be symmetric (a small asymmetry is averaged away, larger
    ones raise); an indefinite input is ridge-repaired first.  Exits when
    the duality gap drops below ``gap_tol``; a result that exhausts
    ``max_sweeps`` is flagged as not converged.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError(f"covariance must be square, got {s.shape}")
    scale = max(np.abs(s).max(), 1.0)
    if np.abs(s - s.T).max() > 1e-8 * scale:
        raise ShapeError("covariance must be symmetric")
    s = ridge_repair((s + s.T) / 2.0)
    d = s.shape[0]

    if nu == 0:
        omega = np.linalg.inv(s)
        omega = (omega + omega.T) / 2.0
        gap = _dual_gap(s, omega, s, 0.0)
        trace = np.array([glasso_objective(s, omega, 0.0)])
        return PrecisionEstimate(omega, int(np.count_nonzero(omega)), True, gap, 0, trace)

    w = s.copy()
    off_mask = ~np.eye(d, dtype=bool)
    w[off_mask] *= 0.95  # keeps the working covariance safely PD
    betas = np.zeros((d, d - 1))
    idx = [np.array([i for i in range(d) if i != j]) for j in range(d)]

    omega = np.eye(d)
    converged = False
    gap = np.inf
    sweep = 0
    trace = []
    for sweep in range(1, max_sweeps + 1):
        for j in range(d):
            sub = idx[j]
            v = w[np.ix_(sub, sub)]
            s12 = s[sub, j]
            beta = _lasso_cd(v, s12, nu, betas[j], inner_tol, max_inner)
            w12 = v @ beta
            w[sub, j] = w12
            w[j, sub] = w12
        # Recover the precision matrix from the column solutions; the
        # soft-threshold zeros in beta give exact zeros in omega.
        for j in range(d):
            sub = idx[j]
            denom = w[j, j] - w[sub, j] @ betas[j]
            omega[j, j] = 1.0 / denom
            omega[sub, j] = -betas[j] * omega[j, j]
        omega = (omega + omega.T) / 2.0
        trace.append(glasso_objective(s, omega, nu))
        gap = _dual_gap(s, omega, w, nu)
        if gap <= gap_tol:
            converged = True
            break
    return PrecisionEstimate(omega, int(np.count_nonzero(omega)), converged, gap, sweep,
                             np.asarray(trace))
