"""First-order baselines and the projected quasi-Newton optimizer.

``sgd_step``/``adam_step`` act on the full parameter vector. ``psgd_step``
keeps its momentum buffer in subspace coordinates and lifts every update
back, so iterates never leave span(P). ``pbfgs_step`` runs BFGS entirely in
the d-dimensional subspace: a dense d x d inverse-Hessian approximation,
the rank-two secant update, and Armijo backtracking on the same minibatch
that produced the gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LineSearchFailed, ShapeError, SkipUpdate
from .subspace import SubspaceBasis

CURVATURE_EPS_REL = 1e-12


@dataclass
class SgdState:
    """Momentum buffer plus hyperparameters; velocity lives in the update space."""

    velocity: np.ndarray
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    k: int = 0


@dataclass
class LineSearchConfig:
    c: float = 0.4
    beta: float = 0.55
    max_backtracks: int = 50

    def __post_init__(self):
        if not 0.0 < self.c < 1.0:
            raise ValueError("c must lie in (0, 1)")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")


@dataclass
class PBfgsState:
    """Inverse-Hessian approximation and the previous (gradient, step) pair."""

    B: np.ndarray
    prev_g: np.ndarray | None = None
    prev_s: np.ndarray | None = None
    k: int = 0

    @classmethod
    def fresh(cls, d: int) -> "PBfgsState":
        return cls(B=np.eye(d))


def effective_lr(base_lr: float, schedule: list[tuple[int, float]], epoch: int) -> float:
    """base_lr times every multiplier whose epoch has been reached."""
    lr = base_lr
    for at_epoch, mult in schedule:
        if epoch >= at_epoch:
            lr *= mult
    return lr


def sgd_step(w: np.ndarray, g: np.ndarray, state: SgdState) -> np.ndarray:
    """Momentum SGD with L2 decay folded into the gradient."""
    if w.shape != g.shape or w.shape != state.velocity.shape:
        raise ShapeError(f"shape mismatch: w {w.shape}, g {g.shape}, v {state.velocity.shape}")
    g_eff = g + state.weight_decay * w
    state.velocity = state.momentum * state.velocity + g_eff
    return w - state.lr * state.velocity


def psgd_step(w: np.ndarray, g: np.ndarray, basis: SubspaceBasis,
              state: SgdState) -> np.ndarray:
    """Momentum SGD on subspace coordinates; the update is lifted back by P."""
    if w.shape != g.shape:
        raise ShapeError(f"shape mismatch: w {w.shape}, g {g.shape}")
    if state.velocity.shape != (basis.effective_d,):
        raise ShapeError(f"velocity {state.velocity.shape} is not a {basis.effective_d}-vector")
    g_proj = basis.project(g + state.weight_decay * w)
    state.velocity = state.momentum * state.velocity + g_proj
    return w - state.lr * basis.lift(state.velocity)


def adam_step(w: np.ndarray, g: np.ndarray, state: AdamState) -> np.ndarray:
    """Bias-corrected Adam; optional baseline only."""
    if w.shape != g.shape:
        raise ShapeError(f"shape mismatch: w {w.shape}, g {g.shape}")
    g_eff = g + state.weight_decay * w if state.weight_decay else g
    state.k += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g_eff
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g_eff * g_eff
    m_hat = state.m / (1.0 - state.beta1 ** state.k)
    v_hat = state.v / (1.0 - state.beta2 ** state.k)
    return w - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def bfgs_update(B: np.ndarray, y: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Rank-two inverse-Hessian update: B' = V'BV + rho s s' with rho = 1/(y's).

    Raises SkipUpdate when the curvature y's is at or below the relative
    threshold; the caller keeps its current B.
    """
    ys = float(y @ s)
    threshold = CURVATURE_EPS_REL * float(np.linalg.norm(y)) * float(np.linalg.norm(s))
    if ys <= threshold:
        raise SkipUpdate(f"curvature y's = {ys:.3e} <= threshold {threshold:.3e}")
    rho = 1.0 / ys
    v = np.eye(B.shape[0]) - rho * np.outer(y, s)
    b_new = v.T @ B @ v + rho * np.outer(s, s)
    return 0.5 * (b_new + b_new.T)


def newton_direction(B: np.ndarray, g_proj: np.ndarray) -> np.ndarray:
    """Quasi-Newton descent direction -B g in subspace coordinates."""
    if B.shape != (g_proj.shape[0], g_proj.shape[0]):
        raise ShapeError(f"B {B.shape} incompatible with gradient {g_proj.shape}")
    return -(B @ g_proj)


def line_search(loss_fn, w: np.ndarray, basis: SubspaceBasis, B: np.ndarray,
                g_proj: np.ndarray, cfg: LineSearchConfig) -> tuple[float, int]:
    """Backtrack alpha over {1, beta, beta^2, ...} until sufficient decrease.

    Accepts the first alpha with
        loss(w - alpha * P B g) <= loss(w) - c * alpha * g'Bg.
    ``loss_fn`` must evaluate the same minibatch the gradient came from.
    Returns (alpha, trial evaluations); the baseline loss is not counted.
    """
    f0 = loss_fn(w)
    direction = basis.lift(B @ g_proj)      # full-space P B g
    decrease = float(g_proj @ (B @ g_proj))
    alpha = 1.0
    evals = 0
    for _ in range(cfg.max_backtracks + 1):
        evals += 1
        if loss_fn(w - alpha * direction) <= f0 - cfg.c * alpha * decrease:
            return alpha, evals
        alpha *= cfg.beta
    raise LineSearchFailed(f"no sufficient decrease within {cfg.max_backtracks} backtracks")


def pbfgs_step(w: np.ndarray, loss_fn, grad_fn, basis: SubspaceBasis,
               state: PBfgsState, cfg: LineSearchConfig) -> tuple[np.ndarray, dict]:
    """One projected BFGS step on a fixed minibatch.

    ``grad_fn(w) -> (loss, gradient)`` and ``loss_fn(w) -> loss`` must both
    evaluate the same minibatch. The inverse-Hessian is refreshed with the
    previous step's pair before the new direction is computed. A failed line
    search skips the step and poisons the next update pair.
    """
    batch_loss, g = grad_fn(w)
    g_proj = basis.project(g)

    skipped_update = False
    if state.k > 0:
        if state.prev_g is None:
            skipped_update = True
        else:
            try:
                state.B = bfgs_update(state.B, g_proj - state.prev_g, state.prev_s)
            except SkipUpdate:
                skipped_update = True

    metrics = {"loss": batch_loss, "skipped_update": skipped_update,
               "line_search_failed": False, "alpha": 0.0, "evals": 0,
               "g_proj": g_proj}
    try:
        alpha, evals = line_search(loss_fn, w, basis, state.B, g_proj, cfg)
    except LineSearchFailed:
        state.prev_g = None
        state.prev_s = None
        state.k += 1
        metrics["line_search_failed"] = True
        metrics["evals"] = cfg.max_backtracks + 1
        return w, metrics

    step = -alpha * (state.B @ g_proj)
    w_new = w + basis.lift(step)
    state.prev_g = g_proj
    state.prev_s = step
    state.k += 1
    metrics["alpha"] = alpha
    metrics["evals"] = evals
    return w_new, metrics
