"""Update rules on the flattened control vector.

`iterate` is the shared driver: it yields one `Iterate` per accepted point
and leaves the stopping decision to the caller, so the same machinery runs
both GRAPE and plain test functions like Rosenbrock.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Sequence

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "Method",
    "OptimizerOptions",
    "LineSearchResult",
    "LineSearchFailure",
    "Iterate",
    "lbfgs_direction",
    "wolfe_line_search",
    "gd_step",
    "iterate",
]

# minimum s.y relative to |s||y| for a pair to enter the L-BFGS history
CURVATURE_EPS = 1e-12


class Method(str, enum.Enum):
    LBFGS = "lbfgs"
    GRADIENT_DESCENT = "gd"


@dataclass
class OptimizerOptions:
    """Update rule and stopping criteria.

    A tolerance of 0 disables the corresponding criterion (except
    `max_iter`, which always applies).
    """

    method: Method = Method.LBFGS
    memory: int = 10
    alpha: float = 0.1
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_linesearch: int = 20
    j_t_tol: float = 1e-4
    delta_j_tol: float = 0.0
    grad_tol: float = 0.0
    max_iter: int = 1000

    def __post_init__(self):
        self.method = Method(self.method)
        if self.memory < 1:
            raise ValueError(f"memory must be >= 1, got {self.memory}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise ValueError(
                f"need 0 < wolfe_c1 < wolfe_c2 < 1, got c1={self.wolfe_c1}, c2={self.wolfe_c2}"
            )
        if self.max_linesearch < 1:
            raise ValueError("max_linesearch must be >= 1")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")
        for name in ("j_t_tol", "delta_j_tol", "grad_tol"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def lbfgs_direction(
    grad: NDArray[np.float64], history: Sequence[tuple[NDArray, NDArray]]
) -> NDArray[np.float64]:
    """Two-loop recursion for ``-H grad``, history ordered oldest first."""
    q = np.array(grad, dtype=np.float64)
    if not history:
        return -q
    rhos = [1.0 / np.dot(y, s) for s, y in history]
    alphas = []
    for (s, y), rho in zip(reversed(history), reversed(rhos)):
        a = rho * np.dot(s, q)
        q -= a * y
        alphas.append(a)
    s, y = history[-1]
    r = (np.dot(s, y) / np.dot(y, y)) * q
    for (s, y), rho, a in zip(history, rhos, reversed(alphas)):
        b = rho * np.dot(y, r)
        r += (a - b) * s
    return -r


@dataclass
class LineSearchResult:
    """Accepted step along the search ray.

    `wolfe` is False when the search ran out of trials and fell back to the
    best step satisfying sufficient decrease only.
    """

    step: float
    f: float
    derphi: float
    wolfe: bool
    evaluations: int


class LineSearchFailure(RuntimeError):
    """No step with sufficient decrease was found."""


def _cubic_step(t_lo, f_lo, d_lo, t_hi, f_hi, d_hi):
    """Minimizer of the cubic interpolating both ends, or None."""
    try:
        d1 = d_lo + d_hi - 3.0 * (f_lo - f_hi) / (t_lo - t_hi)
        rad = d1 * d1 - d_lo * d_hi
        if not rad >= 0:
            return None
        d2 = math.copysign(math.sqrt(rad), t_hi - t_lo)
        t = t_hi - (t_hi - t_lo) * (d_hi + d2 - d1) / (d_hi - d_lo + 2.0 * d2)
    except (ZeroDivisionError, OverflowError, ValueError):
        return None
    return t if math.isfinite(t) else None


def wolfe_line_search(
    phi: Callable[[float], tuple[float, float]],
    f0: float,
    g0: float,
    c1: float = 1e-4,
    c2: float = 0.9,
    max_evals: int = 20,
    t_init: float = 1.0,
    t_max: float = 1e10,
) -> LineSearchResult:
    """Bracket-and-zoom search for a step satisfying the strong Wolfe conditions.

    Args:
        phi: ``t -> (f(x + t d), f'(x + t d) . d)``.
        f0: ``phi(0)`` value.
        g0: ``phi'(0)``; must be negative.

    Raises:
        ValueError: `g0` is not negative.
        LineSearchFailure: no sufficient-decrease step within `max_evals`.
    """
    if not g0 < 0:
        raise ValueError(f"not a descent direction: directional derivative {g0!r} >= 0")
    evals = 0
    best: tuple[float, float, float] | None = None

    def armijo(t, f):
        # f < f0 as well: near machine precision c1 * t * g0 rounds away
        return f <= f0 + c1 * t * g0 and f < f0

    def curvature(d):
        return abs(d) <= -c2 * g0

    def evaluate(t):
        nonlocal evals, best
        evals += 1
        f, d = phi(t)
        f, d = float(f), float(d)
        if not (math.isfinite(f) and math.isfinite(d)):
            f, d = math.inf, math.nan
        if armijo(t, f) and (best is None or f < best[1]):
            best = (t, f, d)
        return f, d

    def fallback():
        if best is None:
            raise LineSearchFailure(f"no sufficient decrease after {evals} function evaluations")
        return LineSearchResult(best[0], best[1], best[2], False, evals)

    def zoom(lo, hi):
        # lo: (t, f, d) satisfying sufficient decrease with the lowest f so far
        while evals < max_evals:
            (t_lo, f_lo, d_lo), (t_hi, f_hi, d_hi) = lo, hi
            a, b = min(t_lo, t_hi), max(t_lo, t_hi)
            width = b - a
            t = None
            if math.isfinite(f_hi) and math.isfinite(d_hi):
                t = _cubic_step(t_lo, f_lo, d_lo, t_hi, f_hi, d_hi)
            if t is None or not (a + 0.1 * width <= t <= b - 0.1 * width):
                t = 0.5 * (t_lo + t_hi)
            f, d = evaluate(t)
            if not armijo(t, f) or f >= f_lo:
                hi = (t, f, d)
            else:
                if curvature(d):
                    return LineSearchResult(t, f, d, True, evals)
                if d * (t_hi - t_lo) >= 0:
                    hi = lo
                lo = (t, f, d)
        return fallback()

    prev = (0.0, float(f0), float(g0))
    t = t_init
    while evals < max_evals:
        f, d = evaluate(t)
        if not armijo(t, f) or (evals > 1 and f >= prev[1]):
            return zoom(prev, (t, f, d))
        if curvature(d):
            return LineSearchResult(t, f, d, True, evals)
        if d >= 0:
            return zoom((t, f, d), prev)
        prev = (t, f, d)
        if t >= t_max:
            break
        t = min(2.0 * t, t_max)
    return fallback()


def gd_step(grad: NDArray[np.float64], alpha: float) -> NDArray[np.float64]:
    """Fixed-width step ``-alpha * grad``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    return -alpha * np.asarray(grad, dtype=np.float64)


@dataclass
class Iterate:
    """One accepted point of the optimization.

    Attributes:
        iteration: 0 for the starting point.
        x: Current variables.
        f: Objective value at `x`.
        grad: Gradient at `x`.
        extra: Whatever the objective function returned as its third value.
        step: Line-search step (L-BFGS) or alpha (gradient descent); 0 at
            iteration 0.
        line_search: Line-search details for L-BFGS iterations.
        f_prev: Objective before the step; `None` at iteration 0.
        derphi0: Directional derivative along the search direction before
            the step (L-BFGS only).
    """

    iteration: int
    x: NDArray[np.float64]
    f: float
    grad: NDArray[np.float64]
    extra: Any = None
    step: float = 0.0
    line_search: LineSearchResult | None = None
    f_prev: float | None = None
    derphi0: float | None = None


Objective = Callable[[NDArray[np.float64]], tuple[float, NDArray[np.float64], Any]]
LineSearch = Callable[[Callable[[float], tuple[float, float]], float, float], LineSearchResult]


def iterate(
    fun: Objective,
    x0: NDArray[np.float64],
    options: OptimizerOptions | None = None,
    line_search: LineSearch | None = None,
) -> Iterator[Iterate]:
    """Yield the starting point and then every accepted iterate, indefinitely.

    Args:
        fun: ``x -> (f, grad, extra)``.
        x0: Starting point.
        options: Update rule and line-search parameters.
        line_search: Replacement for the strong-Wolfe search, called as
            ``line_search(phi, f0, g0)``.

    Raises:
        LineSearchFailure: L-BFGS could not make progress (including a
            vanishing gradient).
    """
    options = options or OptimizerOptions()
    x = np.array(x0, dtype=np.float64)
    f, g, extra = fun(x)
    g = np.asarray(g, dtype=np.float64)
    yield Iterate(0, x.copy(), f, g.copy(), extra)

    history: deque[tuple[NDArray, NDArray]] = deque(maxlen=options.memory)
    k = 0
    while True:
        k += 1
        if options.method is Method.GRADIENT_DESCENT:
            f_prev = f
            x = x + gd_step(g, options.alpha)
            f, g, extra = fun(x)
            g = np.asarray(g, dtype=np.float64)
            yield Iterate(k, x.copy(), f, g.copy(), extra, options.alpha, f_prev=f_prev)
            continue

        d = lbfgs_direction(g, history)
        g0 = float(np.dot(d, g))
        if not g0 < 0:
            history.clear()
            d = -g
            g0 = -float(np.dot(g, g))
            if not g0 < 0:
                raise LineSearchFailure("gradient vanishes; no descent direction")

        evaluated: dict[float, tuple[float, NDArray, Any]] = {}

        def phi(t, x=x, d=d, evaluated=evaluated):
            ft, gt, et = fun(x + t * d)
            gt = np.asarray(gt, dtype=np.float64)
            evaluated[t] = (ft, gt, et)
            return ft, float(np.dot(gt, d))

        if line_search is None:
            result = wolfe_line_search(
                phi, f, g0, options.wolfe_c1, options.wolfe_c2, options.max_linesearch
            )
        else:
            result = line_search(phi, f, g0)
        t = result.step
        if t not in evaluated:
            phi(t)
        f_new, g_new, extra = evaluated[t]
        x_new = x + t * d
        s = x_new - x
        y = g_new - g
        sy = float(np.dot(s, y))
        if sy > CURVATURE_EPS * np.linalg.norm(s) * np.linalg.norm(y):
            history.append((s, y))
        f_prev = f
        x, f, g = x_new, f_new, g_new
        yield Iterate(k, x.copy(), f, g.copy(), extra, t, result, f_prev, g0)
