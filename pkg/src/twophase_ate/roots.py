"""Scalar root finding used by the fluctuation, raking, and plug-in solvers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

__all__ = ["RootResult", "newton_bisect", "bisect", "secant", "expand_bracket"]


@dataclass(frozen=True)
class RootResult:
    x: float
    f: float
    n_iter: int
    converged: bool


def newton_bisect(
    f: Callable[[float], float],
    df: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float,
    x0: float | None = None,
    max_iter: int = 100,
) -> RootResult:
    """Safeguarded Newton on a bracket [lo, hi] with f(lo), f(hi) of opposite sign.

    Newton steps that leave the current bracket (or divide by a vanishing
    derivative) fall back to bisection, so convergence is guaranteed for
    continuous f. Stops when |f| <= tol.
    """
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return RootResult(lo, 0.0, 0, True)
    if fhi == 0.0:
        return RootResult(hi, 0.0, 0, True)
    if flo * fhi > 0:
        raise ValueError("newton_bisect requires a sign change on [lo, hi]")
    x = x0 if x0 is not None and lo <= x0 <= hi else 0.5 * (lo + hi)
    fx = f(x)
    for it in range(1, max_iter + 1):
        if abs(fx) <= tol:
            return RootResult(x, fx, it - 1, True)
        # shrink bracket around the root
        if flo * fx <= 0:
            hi, fhi = x, fx
        else:
            lo, flo = x, fx
        d = df(x)
        if d != 0.0:
            x_new = x - fx / d
        else:
            x_new = lo  # force bisection below
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi)
        x, fx = x_new, f(x_new)
    return RootResult(x, fx, max_iter, abs(fx) <= tol)


def bisect(f: Callable[[float], float], lo: float, hi: float, tol: float,
           max_iter: int = 200) -> RootResult:
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return RootResult(lo, 0.0, 0, True)
    if fhi == 0.0:
        return RootResult(hi, 0.0, 0, True)
    if flo * fhi > 0:
        raise ValueError("bisect requires a sign change on [lo, hi]")
    x, fx = 0.5 * (lo + hi), None
    for it in range(1, max_iter + 1):
        x = 0.5 * (lo + hi)
        fx = f(x)
        if abs(fx) <= tol:
            return RootResult(x, fx, it, True)
        if flo * fx <= 0:
            hi = x
        else:
            lo, flo = x, fx
    return RootResult(x, fx, max_iter, False)


def secant(f: Callable[[float], float], x0: float, x1: float, tol: float,
           max_iter: int = 100) -> RootResult:
    f0, f1 = f(x0), f(x1)
    if abs(f0) <= tol:
        return RootResult(x0, f0, 0, True)
    for it in range(1, max_iter + 1):
        if abs(f1) <= tol:
            return RootResult(x1, f1, it - 1, True)
        denom = f1 - f0
        if denom == 0.0:
            return RootResult(x1, f1, it - 1, False)
        x2 = x1 - f1 * (x1 - x0) / denom
        x0, f0, x1 = x1, f1, x2
        f1 = f(x1)
    return RootResult(x1, f1, max_iter, abs(f1) <= tol)


def expand_bracket(f: Callable[[float], float], x0: float = 0.0, step: float = 1.0,
                   factor: float = 2.0, max_expand: int = 60) -> tuple[float, float] | None:
    """Grow [x0-step, x0+step] geometrically until f changes sign; None if never."""
    f0 = f(x0)
    if f0 == 0.0:
        return (x0, x0)
    s = step
    for _ in range(max_expand):
        lo, hi = x0 - s, x0 + s
        if f(lo) * f0 < 0:
            return (lo, x0)
        if f(hi) * f0 < 0:
            return (x0, hi)
        s *= factor
    return None
