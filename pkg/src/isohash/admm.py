"""ADMM training loop for the worst-case-distortion hashing objective.

Each outer iteration performs four updates while the sigmoid rate grows
geometrically from alpha_start to alpha_end (continuation):

* W: accelerated gradient descent on the smooth quadratic penalty,
* u: the l-inf proximal map, computed by Moreau decomposition through an
  l1-ball projection,
* lambda: a clamped positive least-squares scalar,
* y: the scaled dual ascent step.

The residual convention is r = u - lambda * v(W) + c + y, matching the
augmented Lagrangian (the +y form).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (
    Dataset,
    HashModel,
    SecantBatch,
    hamming_pairs,
    hash_matrix,
    random_projection_matrix,
    sigmoid,
)
from .metrics import fit_lambda_chebyshev

__all__ = [
    "SolverConfig",
    "SolverState",
    "DivergenceError",
    "augmented_loss",
    "w_step",
    "w_subproblem_loss",
    "u_step",
    "project_l1_ball",
    "lambda_step",
    "y_step",
    "train_nibh",
]

# divergence guard: abort after this many consecutive iterations with the
# sup loss above 10x its running minimum
_DIVERGENCE_FACTOR = 10.0
_DIVERGENCE_PATIENCE = 20


class DivergenceError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    rho: float = 1.0
    eta: float = 1.6
    alpha_start: float = 1.0
    alpha_end: float = 10.0
    alpha_growth: float = 1.25
    max_outer_iters: int = 100
    inner_gd_iters: int = 50
    inner_gd_tol: float = 1e-9
    convergence_tol: float = 1e-5
    lambda_min: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.rho <= 0 or self.eta <= 0:
            raise ValueError("rho and eta must be positive")
        if not (0 < self.alpha_start <= self.alpha_end):
            raise ValueError("need 0 < alpha_start <= alpha_end")
        if self.alpha_growth <= 1.0:
            raise ValueError("alpha_growth must exceed 1")
        if min(self.inner_gd_tol, self.convergence_tol) < 0:
            raise ValueError("tolerances must be nonnegative")
        if self.lambda_min <= 0:
            raise ValueError("lambda_min must be positive")
        if self.max_outer_iters < 1 or self.inner_gd_iters < 1:
            raise ValueError("iteration budgets must be >= 1")


@dataclass
class SolverState:
    """Mutable ADMM state; u and y are indexed by the active secants."""

    w: np.ndarray
    u: np.ndarray
    y: np.ndarray
    lam: float
    alpha: float
    iteration: int = 0
    loss_history: list = field(default_factory=list)  # (iter, sup_loss, delta)
    converged: bool = False
    diverged: bool = False
    distance_convention: str = "unsquared-l2"


def _relaxed_dists(w, points, i_idx, j_idx, alpha):
    s = sigmoid(points @ w.T, alpha)
    d = s[i_idx] - s[j_idx]
    return np.einsum("ij,ij->i", d, d)


# ---------------------------------------------------------------------------
# the four update steps


def augmented_loss(state: SolverState, secants: SecantBatch, data: Dataset,
                   rho: float = 1.0) -> float:
    """||u||_inf + (rho/2) ||u - lambda v(W) + c + y||^2 at the current state."""
    v = _relaxed_dists(state.w, data.points, secants.i, secants.j, state.alpha)
    r = state.u - state.lam * v + secants.c + state.y
    uinf = float(np.max(np.abs(state.u))) if state.u.size else 0.0
    return uinf + 0.5 * rho * float(r @ r)


def _w_loss_grad(w, points, i_idx, j_idx, c, u, y, lam, alpha, want_grad=True):
    s = sigmoid(points @ w.T, alpha)
    d = s[i_idx] - s[j_idx]
    v = np.einsum("ij,ij->i", d, d)
    r = u - lam * v + c + y
    f = 0.5 * float(r @ r)
    if not np.isfinite(f):
        bad = int(np.argmax(~np.isfinite(r)))
        raise DivergenceError(
            f"non-finite residual at secant ({int(i_idx[bad])}, {int(j_idx[bad])})"
        )
    if not want_grad:
        return f, None
    sp = alpha * s * (1.0 - s)
    rd = r[:, None] * d
    grad = -2.0 * lam * (
        (rd * sp[i_idx]).T @ points[i_idx] - (rd * sp[j_idx]).T @ points[j_idx]
    )
    if not np.all(np.isfinite(grad)):
        bad = int(np.argmax(np.abs(r)))
        raise DivergenceError(
            f"non-finite gradient; worst residual at secant "
            f"({int(i_idx[bad])}, {int(j_idx[bad])})"
        )
    return f, grad


def w_subproblem_loss(state: SolverState, secants: SecantBatch, data: Dataset) -> float:
    """0.5 * sum of squared residuals r = u - lambda v(W) + c + y."""
    f, _ = _w_loss_grad(
        state.w, data.points, secants.i, secants.j, secants.c,
        state.u, state.y, state.lam, state.alpha, want_grad=False,
    )
    return f


def _agd(f_grad, f_only, w0, iters, tol):
    """Nesterov-style accelerated descent with backtracking; returns the best
    iterate seen, so the objective never increases past the entry point."""
    x = w0
    yv = w0
    t = 1.0
    fx = f_only(x)
    f_best, x_best = fx, x
    lip = 1.0
    for _ in range(iters):
        fy, gy = f_grad(yv)
        gnorm2 = float((gy * gy).sum())
        if gnorm2 <= 1e-30:
            break
        while True:
            cand = yv - gy / lip
            fc = f_only(cand)
            if fc <= fy - 0.5 * gnorm2 / lip + 1e-12 * max(1.0, abs(fy)):
                break
            lip *= 2.0
            if lip > 1e18:
                break
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        yv = cand + ((t - 1.0) / t_next) * (cand - x)
        f_prev = fx
        x, fx, t = cand, fc, t_next
        if fx < f_best:
            f_best, x_best = fx, x
        if fx > f_prev:  # momentum overshoot: restart
            t = 1.0
            yv = x
        if abs(f_prev - fx) <= tol * max(1.0, abs(f_prev)):
            break
        lip *= 0.7
    return x_best, f_best


def w_step(state: SolverState, secants: SecantBatch, data: Dataset,
           config: SolverConfig) -> np.ndarray:
    """Approximately minimize the quadratic penalty over W with u, y, lambda,
    alpha held fixed; never returns a worse W than it was given."""
    pts = data.points
    args = (pts, secants.i, secants.j, secants.c, state.u, state.y,
            state.lam, state.alpha)

    def f_grad(w):
        return _w_loss_grad(w, *args, want_grad=True)

    def f_only(w):
        return _w_loss_grad(w, *args, want_grad=False)[0]

    w_new, _ = _agd(f_grad, f_only, state.w, config.inner_gd_iters,
                    config.inner_gd_tol)
    return w_new


def project_l1_ball(z: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto the l1 ball of the given radius
    (sort-based, O(n log n))."""
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    z = np.asarray(z, dtype=np.float64)
    az = np.abs(z)
    if az.sum() <= radius:
        return z.copy()
    mu = np.sort(az)[::-1]
    cssv = np.cumsum(mu) - radius
    k = np.arange(1, z.size + 1)
    rho = np.nonzero(mu > cssv / k)[0][-1]
    theta = cssv[rho] / (rho + 1.0)
    return np.sign(z) * np.maximum(az - theta, 0.0)


def u_step(z: np.ndarray, rho: float) -> np.ndarray:
    """argmin_u ||u||_inf + (rho/2)||u - z||^2 via Moreau decomposition:
    u = z - proj onto the l1 ball of radius 1/rho."""
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    z = np.asarray(z, dtype=np.float64)
    return z - project_l1_ball(z, 1.0 / rho)


def lambda_step(u, v, c, y, lambda_min: float, prev_lam: float) -> float:
    """Positive least-squares scale: the unconstrained minimizer of
    0.5 ||u - lambda v + c + y||^2 clamped to [lambda_min, inf)."""
    v = np.asarray(v, dtype=np.float64)
    vv = float(v @ v)
    if vv == 0.0:
        warnings.warn("relaxed distances identically zero; keeping previous lambda")
        return prev_lam
    lam = float(v @ (np.asarray(u) + np.asarray(c) + np.asarray(y))) / vv
    return max(lambda_min, lam)


def y_step(y, u, v, c, lam: float, eta: float) -> np.ndarray:
    """Scaled dual ascent: y + eta * (u - lambda v + c)."""
    return np.asarray(y, dtype=np.float64) + eta * (
        np.asarray(u, dtype=np.float64) - lam * np.asarray(v, dtype=np.float64)
        + np.asarray(c, dtype=np.float64)
    )


# ---------------------------------------------------------------------------
# outer loop


def _emit(progress, record: dict):
    if progress is None:
        return
    if hasattr(progress, "write"):
        progress.write(json.dumps(record) + "\n")
    else:
        progress(record)


def _quantized_delta(w, points, i_idx, j_idx, c) -> float:
    """Distortion of the quantized codes over the training secants: the
    scale-fitted sup of |lambda d_H - c| (the same measurement the metrics
    module reports)."""
    codes = hash_matrix(w, points)
    dh = hamming_pairs(codes, i_idx, j_idx).astype(np.float64)
    if not np.any(c > 0):
        return 0.0
    if not np.any(dh > 0):
        return float(c.max())
    return fit_lambda_chebyshev(dh, c)[1]


def train_nibh(
    data: Dataset,
    secants: SecantBatch,
    m: int,
    config: Optional[SolverConfig] = None,
    *,
    w0: Optional[np.ndarray] = None,
    fixed_lambda: Optional[float] = None,
    progress: Optional[Callable] = None,
) -> tuple[HashModel, SolverState]:
    """Run the four-step ADMM loop until the augmented loss stabilizes.

    w0 defaults to the seeded Gaussian projection (identical to the LSH draw
    for the same seed). With ``fixed_lambda`` the scale update is skipped,
    which is how the column-generation driver freezes lambda after its first
    solve. ``progress`` receives one record per iteration (a callable taking
    a dict, or a file-like that gets JSON lines).

    Returns the trained model (built with alpha_end and the final lambda)
    and the solver state. loss_history rows are (iteration, sup_loss, delta):
    sup_loss is ||lambda v - c||_inf at the solver's lambda, delta the
    scale-fitted distortion of the quantized codes over the training secants
    (identical to what metrics.max_distortion reports for them).
    """
    if config is None:
        config = SolverConfig()
    if len(secants) < 1:
        raise ValueError("need at least one secant")
    if m < 1:
        raise ValueError(f"need M >= 1, got {m}")

    pts = data.points
    i_idx, j_idx, c = secants.i, secants.j, secants.c
    if i_idx.max() >= data.q:
        raise ValueError("secant index exceeds dataset size")

    w = np.array(w0, dtype=np.float64) if w0 is not None \
        else random_projection_matrix(m, data.n, config.seed)
    if w.shape != (m, data.n):
        raise ValueError(f"w0 has shape {w.shape}, expected ({m}, {data.n})")

    # The u-step makes u track lambda*v - c - y, so the least-squares
    # lambda update nearly reproduces the previous lambda each iteration;
    # lambda therefore has to START on the right scale. Fit it to the
    # initial embedding at the final rate, where the relaxation matches
    # the quantized codes the trained model will actually use.
    if fixed_lambda is not None:
        lam0 = float(fixed_lambda)
    else:
        v0 = _relaxed_dists(w, pts, i_idx, j_idx, config.alpha_end)
        vv0 = float(v0 @ v0)
        lam0 = max(config.lambda_min, float(v0 @ c) / vv0) if vv0 > 0 else 1.0

    n_sec = len(secants)
    state = SolverState(
        w=w,
        u=np.zeros(n_sec),
        y=np.zeros(n_sec),
        lam=lam0,
        alpha=config.alpha_start,
    )

    aug_prev = None
    loss_min = math.inf
    above_min_streak = 0
    best = (math.inf, state.w, state.lam)

    for it in range(1, config.max_outer_iters + 1):
        state.iteration = it
        state.w = w_step(state, secants, data, config)
        v = _relaxed_dists(state.w, pts, i_idx, j_idx, state.alpha)
        state.u = u_step(state.lam * v - c - state.y, config.rho)
        if fixed_lambda is None:
            state.lam = lambda_step(state.u, v, c, state.y,
                                    config.lambda_min, state.lam)
        state.y = y_step(state.y, state.u, v, c, state.lam, config.eta)

        sup_loss = float(np.max(np.abs(state.lam * v - c)))
        delta = _quantized_delta(state.w, pts, i_idx, j_idx, c)
        state.loss_history.append((it, sup_loss, delta))
        _emit(progress, {
            "iteration": it, "loss": sup_loss, "delta": delta,
            "alpha": state.alpha, "lambda": state.lam,
        })

        if sup_loss < best[0]:
            best = (sup_loss, state.w, state.lam)
        loss_min = min(loss_min, sup_loss)
        above_min_streak = above_min_streak + 1 \
            if sup_loss > _DIVERGENCE_FACTOR * loss_min else 0
        if above_min_streak >= _DIVERGENCE_PATIENCE:
            state.diverged = True
            _, state.w, state.lam = best
            delta = _quantized_delta(state.w, pts, i_idx, j_idx, c)
            state.loss_history.append((it + 1, best[0], delta))
            break

        aug = augmented_loss(state, secants, data, config.rho)
        if aug_prev is not None and \
                abs(aug - aug_prev) <= config.convergence_tol * max(1.0, abs(aug_prev)):
            state.converged = True
            break
        aug_prev = aug
        state.alpha = min(state.alpha * config.alpha_growth, config.alpha_end)

    model = HashModel(
        w=state.w, lam=state.lam, alpha=config.alpha_end,
        mean=data.mean, normalized=data.normalized,
    )
    return model, state
