"""Full-batch Adam followed by L-BFGS, the training recipe of the pipeline.

Both optimizers are plain drivers over a ``loss_and_grad(x) -> (f, g)``
callable.  L-BFGS uses the two-loop recursion with a strong-Wolfe line search
(bracketing plus cubic-interpolation zoom); on the non-smooth LAD objective a
line-search failure near a kink counts as convergence, not an error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteLossError


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: int = 1000
    record_every: int = 50

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("Adam lr must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")


@dataclass(frozen=True)
class LbfgsConfig:
    memory: int = 50
    max_iterations: int = 5000
    gradient_tolerance: float = 1e-9
    c1: float = 1e-4
    c2: float = 0.9
    max_line_search: int = 25

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError("L-BFGS memory must be >= 1")
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")


@dataclass
class OptimizeResult:
    x: np.ndarray
    loss: float
    history: list[tuple[int, float]] = field(default_factory=list)
    iterations: int = 0
    termination: str = ""
    error: str | None = None
    armijo_flags: list[bool] = field(default_factory=list)


def adam_run(x0: np.ndarray, loss_and_grad, config: AdamConfig, callback=None) -> OptimizeResult:
    """Standard Adam with bias correction for a fixed number of steps."""
    x = np.asarray(x0, dtype=float).copy()
    try:
        f, g = loss_and_grad(x)
    except NonFiniteLossError as exc:
        return OptimizeResult(x, np.inf, [], 0, "aborted", f"initial loss: {exc.term}")
    if not np.isfinite(f):
        return OptimizeResult(x, f, [], 0, "aborted", "non-finite initial loss")
    history = [(0, f)]
    best_x, best_f = x.copy(), f
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    for t in range(1, config.iterations + 1):
        m = config.beta1 * m + (1.0 - config.beta1) * g
        v = config.beta2 * v + (1.0 - config.beta2) * g * g
        mhat = m / (1.0 - config.beta1**t)
        vhat = v / (1.0 - config.beta2**t)
        x = x - config.lr * mhat / (np.sqrt(vhat) + config.eps)
        try:
            f, g = loss_and_grad(x)
        except NonFiniteLossError as exc:
            return OptimizeResult(best_x, best_f, history, t, "aborted", str(exc))
        if not np.isfinite(f):
            return OptimizeResult(best_x, best_f, history, t, "aborted", "non-finite loss")
        if f < best_f:
            best_f, best_x = f, x.copy()
        if t % config.record_every == 0 or t == config.iterations:
            history.append((t, f))
        if callback is not None:
            callback(t, x, f)
    return OptimizeResult(x, f, history, config.iterations, "max_iterations")


def _cubic_minimum(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic through (a, fa, ga), (b, fb, gb); None if degenerate."""
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = np.sqrt(disc)
    if a > b:
        d2 = -d2
    t = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2)
    if not np.isfinite(t):
        return None
    return t


def _zoom(phi, a_lo, f_lo, g_lo, a_hi, f_hi, g_hi, f0, g0, c1, c2, max_iter):
    """Stage two of the strong-Wolfe search: shrink a bracketing interval."""
    for _ in range(max_iter):
        trial = _cubic_minimum(a_lo, f_lo, g_lo, a_hi, f_hi, g_hi)
        span = abs(a_hi - a_lo)
        lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
        if trial is None or not (lo + 0.05 * span < trial < hi - 0.05 * span):
            trial = 0.5 * (a_lo + a_hi)
        ft, gt = phi(trial)
        if ft > f0 + c1 * trial * g0 or ft >= f_lo:
            a_hi, f_hi, g_hi = trial, ft, gt
        else:
            if abs(gt) <= -c2 * g0:
                return trial, ft, gt, True
            if gt * (a_hi - a_lo) >= 0:
                a_hi, f_hi, g_hi = a_lo, f_lo, g_lo
            a_lo, f_lo, g_lo = trial, ft, gt
        if span < 1e-14:
            break
    return a_lo, f_lo, g_lo, False


def strong_wolfe(phi, f0, g0, alpha0, c1, c2, max_iter):
    """Find a step satisfying the strong Wolfe conditions for phi(a).

    phi maps a step to (value, directional derivative).  Returns
    (alpha, f, ok); ok is False when no acceptable step was bracketed,
    which the caller treats as termination near a kink or a flat direction.
    """
    if g0 >= 0:
        return 0.0, f0, False
    a_prev, f_prev, g_prev = 0.0, f0, g0
    alpha = alpha0
    for it in range(max_iter):
        f, g = phi(alpha)
        if f > f0 + c1 * alpha * g0 or (it > 0 and f >= f_prev):
            a, fa, ga, ok = _zoom(phi, a_prev, f_prev, g_prev, alpha, f, g,
                                  f0, g0, c1, c2, max_iter)
            return a, fa, ok
        if abs(g) <= -c2 * g0:
            return alpha, f, True
        if g >= 0:
            a, fa, ga, ok = _zoom(phi, alpha, f, g, a_prev, f_prev, g_prev,
                                  f0, g0, c1, c2, max_iter)
            return a, fa, ok
        a_prev, f_prev, g_prev = alpha, f, g
        alpha = 2.0 * alpha
    return 0.0, f0, False


def lbfgs_run(x0: np.ndarray, loss_and_grad, config: LbfgsConfig) -> OptimizeResult:
    """Two-loop-recursion L-BFGS with a strong-Wolfe line search."""
    x = np.asarray(x0, dtype=float).copy()
    try:
        f, g = loss_and_grad(x)
    except NonFiniteLossError as exc:
        return OptimizeResult(x, np.inf, [], 0, "aborted", f"initial loss: {exc.term}")
    history = [(0, f)]
    best_x, best_f = x.copy(), f
    if np.max(np.abs(g)) <= config.gradient_tolerance:
        return OptimizeResult(x, f, history, 0, "gradient_tolerance")
    s_list: list[np.ndarray] = []
    y_list: list[np.ndarray] = []
    rho_list: list[float] = []
    armijo: list[bool] = []
    termination = "max_iterations"

    def phi(alpha, x_base, direction):
        try:
            ft, gt = loss_and_grad(x_base + alpha * direction)
        except NonFiniteLossError:
            return np.inf, 0.0, None
        if not np.isfinite(ft):
            return np.inf, 0.0, None
        return ft, float(gt @ direction), gt

    it = 0
    for it in range(1, config.max_iterations + 1):
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_list), reversed(y_list), reversed(rho_list)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if y_list:
            gamma = (s_list[-1] @ y_list[-1]) / (y_list[-1] @ y_list[-1])
            q *= gamma
        for (s, y, rho), a in zip(zip(s_list, y_list, rho_list), reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        direction = -q
        g0d = float(g @ direction)
        if g0d >= 0:
            # stale curvature pairs made the direction non-descent; restart
            s_list, y_list, rho_list = [], [], []
            direction = -g
            g0d = float(g @ direction)

        last_eval = {}

        def phi1(alpha, _x=x, _d=direction):
            ft, gtd, gt = phi(alpha, _x, _d)
            last_eval[alpha] = (ft, gt)
            return ft, gtd

        alpha0 = min(1.0, 1.0 / max(1e-12, float(np.abs(g).sum()))) if not s_list else 1.0
        alpha, f_new, ok = strong_wolfe(
            phi1, f, g0d, alpha0, config.c1, config.c2, config.max_line_search
        )
        if not ok or alpha == 0.0:
            termination = "line_search_failure"
            it -= 1
            break
        f_at, g_new = last_eval[alpha]
        if g_new is None:
            termination = "line_search_failure"
            it -= 1
            break
        armijo.append(bool(f_new <= f + config.c1 * alpha * g0d + 1e-15))
        step = alpha * direction
        y_vec = g_new - g
        sy = float(step @ y_vec)
        if sy > 1e-12 * float(np.linalg.norm(step) * np.linalg.norm(y_vec) + 1e-300):
            s_list.append(step)
            y_list.append(y_vec)
            rho_list.append(1.0 / sy)
            if len(s_list) > config.memory:
                s_list.pop(0)
                y_list.pop(0)
                rho_list.pop(0)
        x = x + step
        f, g = f_new, g_new
        if f < best_f:
            best_f, best_x = f, x.copy()
        history.append((it, f))
        if np.max(np.abs(g)) <= config.gradient_tolerance:
            termination = "gradient_tolerance"
            break

    if termination == "line_search_failure":
        return OptimizeResult(best_x, best_f, history, max(it, 0), termination,
                              None, armijo)
    if f <= best_f:
        best_x, best_f = x, f
    return OptimizeResult(best_x, best_f, history, it, termination, None, armijo)
