"""Weighted GLM engine and one-dimensional offset fluctuation fits.

Two families are supported, gaussian and bernoulli, fit by iteratively
reweighted least squares on a caller-supplied design matrix. The same
machinery drives every nuisance regression, and `fit_fluctuation` solves
the univariate offset-logistic score equation used by every targeting
step. No coefficient standard errors are produced: inference elsewhere
is influence-curve based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import expit as _expit

from .roots import bisect as _bisect

__all__ = [
    "GlmError",
    "GlmFit",
    "FluctuationFit",
    "expit",
    "logit",
    "fit_glm",
    "fit_fluctuation",
]

# Probability clipping inside logit/expit pipelines (offsets, working
# responses). Distinct from the Pi/g truncation policy in `nuisance`.
P_MIN = 1e-6
# Hard clip for logit itself; keeps expit(logit(p)) = p to 1e-10 elsewhere.
LOGIT_CLIP = 1e-12
# Bernoulli predictions are kept strictly inside (0, 1).
PRED_CLIP = 1e-12

MAX_ITER = 100
COEF_TOL = 1e-10
SCORE_TOL = 1e-8
RIDGE_SCALE = 1e-8
FLUCT_BRACKET = 20.0


class GlmError(RuntimeError):
    """A regression could not be fit (degenerate design or response)."""


def expit(x):
    return _expit(x)


def logit(p, eps: float = LOGIT_CLIP):
    p = np.clip(p, eps, 1.0 - eps)
    return np.log(p) - np.log1p(-p)


def _solve_spd(H: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, bool]:
    """Solve H x = b for symmetric positive definite H, with a ridge retry.

    Returns (solution, ridge_used). Raises GlmError when even the ridged
    system is singular.
    """
    try:
        c, low = scipy.linalg.cho_factor(H, check_finite=False)
        return scipy.linalg.cho_solve((c, low), b, check_finite=False), False
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
        pass
    dim = H.shape[0]
    lam = RIDGE_SCALE * np.trace(H) / dim
    if lam <= 0 or not np.isfinite(lam):
        raise GlmError("singular weighted Gram matrix (zero trace)")
    try:
        c, low = scipy.linalg.cho_factor(H + lam * np.eye(dim), check_finite=False)
        return scipy.linalg.cho_solve((c, low), b, check_finite=False), True
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
        raise GlmError("singular weighted Gram matrix even after ridge retry") from None


@dataclass(frozen=True)
class GlmFit:
    """A fitted weighted GLM on a fixed design.

    `converged` is True only when the weighted score equations are solved
    to SCORE_TOL in max-norm.
    """

    coefficients: np.ndarray
    family: str
    converged: bool
    n_iter: int
    feature_dim: int

    def linear_predictor(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.feature_dim:
            raise GlmError(
                f"design has {X.shape[-1] if X.ndim == 2 else '?'} columns, "
                f"fit expects {self.feature_dim}"
            )
        return X @ self.coefficients

    def predict(self, X: np.ndarray) -> np.ndarray:
        eta = self.linear_predictor(X)
        if self.family == "gaussian":
            return eta
        return np.clip(expit(eta), PRED_CLIP, 1.0 - PRED_CLIP)


def _validate_inputs(X, y, w):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    if X.ndim != 2:
        raise GlmError("design matrix must be 2-d")
    if not (X.shape[0] == len(y) == len(w)):
        raise GlmError("X, y, w lengths disagree")
    if X.shape[0] == 0:
        raise GlmError("empty design")
    if np.any(~np.isfinite(X)) or np.any(~np.isfinite(y)) or np.any(~np.isfinite(w)):
        raise GlmError("non-finite values in X, y or w")
    if np.any(w < 0):
        raise GlmError("negative weights")
    if not np.any(w > 0):
        raise GlmError("no positive weights")
    return X, y, w


def fit_glm(X, y, w=None, family: str = "gaussian",
            max_iter: int = MAX_ITER, tol: float = COEF_TOL) -> GlmFit:
    """Weighted GLM via IRLS on the design X (caller supplies the intercept).

    gaussian: closed-form weighted least squares. bernoulli: Newton/IRLS with
    probability clipping; a singular weighted Gram matrix triggers one ridge
    retry (ridge = 1e-8 * trace/dim) before failing.
    """
    if w is None:
        w = np.ones(np.shape(y))
    X, y, w = _validate_inputs(X, y, w)
    p_dim = X.shape[1]

    if family == "gaussian":
        Xw = X * w[:, None]
        H = Xw.T @ X
        beta, _ = _solve_spd(H, Xw.T @ y)
        score = X.T @ (w * (y - X @ beta))
        converged = bool(np.max(np.abs(score)) <= SCORE_TOL) if p_dim else True
        return GlmFit(beta, "gaussian", converged, 1, p_dim)

    if family != "bernoulli":
        raise GlmError(f"unknown family {family!r}")
    if y.min() < 0.0 or y.max() > 1.0:
        raise GlmError("bernoulli responses must lie in [0, 1]")

    beta = np.zeros(p_dim)
    n_iter = 0
    score_norm = np.inf
    for n_iter in range(1, max_iter + 1):
        p = np.clip(expit(X @ beta), P_MIN, 1.0 - P_MIN)
        score = X.T @ (w * (y - p))
        score_norm = float(np.max(np.abs(score)))
        if score_norm <= SCORE_TOL:
            break
        H = (X * (w * p * (1.0 - p))[:, None]).T @ X
        step, _ = _solve_spd(H, score)
        beta = beta + step
        if np.max(np.abs(step)) <= tol:
            p = np.clip(expit(X @ beta), P_MIN, 1.0 - P_MIN)
            score_norm = float(np.max(np.abs(X.T @ (w * (y - p)))))
            break
    converged = score_norm <= SCORE_TOL
    return GlmFit(beta, "bernoulli", bool(converged), n_iter, p_dim)


@dataclass(frozen=True)
class FluctuationFit:
    """Solution of the weighted univariate offset-logistic score equation."""

    epsilon: float
    score: float
    n_iter: int
    converged: bool


def fit_fluctuation(y, offset_logit, h, w=None, tol: float = 1e-10,
                    bracket: float = FLUCT_BRACKET) -> FluctuationFit:
    """Solve sum_i w_i h_i (y_i - expit(offset_i + eps * h_i)) = 0 for eps.

    The score is monotone non-increasing in eps, so a safeguarded Newton
    iteration with a bisection fallback on [-bracket, bracket] is used.
    Returns eps=0 immediately when the score at zero is already below tol
    (this covers h identically zero).
    """
    y = np.asarray(y, dtype=float).ravel()
    offset = np.asarray(offset_logit, dtype=float).ravel()
    h = np.asarray(h, dtype=float).ravel()
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float).ravel()
    if not (len(y) == len(offset) == len(h) == len(w)):
        raise GlmError("fluctuation inputs disagree in length")
    if np.any(~np.isfinite(offset)):
        raise GlmError("non-finite offset in fluctuation fit")
    if np.any(w < 0):
        raise GlmError("negative weights in fluctuation fit")
    wh = w * h

    def score(eps: float) -> float:
        return float(wh @ (y - expit(offset + eps * h)))

    def dscore(eps: float) -> float:
        p = expit(offset + eps * h)
        return float(-(wh * h) @ (p * (1.0 - p)))

    s0 = score(0.0)
    if abs(s0) <= tol:
        return FluctuationFit(0.0, s0, 0, True)

    # plain Newton from zero; fall back to bracketed solve if it stalls
    eps, s = 0.0, s0
    for it in range(1, 31):
        d = dscore(eps)
        if d == 0.0 or not np.isfinite(d):
            break
        eps_new = eps - s / d
        if not np.isfinite(eps_new) or abs(eps_new) > bracket:
            break
        eps, s = eps_new, score(eps_new)
        if abs(s) <= tol:
            return FluctuationFit(eps, s, it, True)

    s_lo, s_hi = score(-bracket), score(bracket)
    if s_lo == 0.0:
        return FluctuationFit(-bracket, 0.0, 0, True)
    if s_hi == 0.0:
        return FluctuationFit(bracket, 0.0, 0, True)
    if s_lo * s_hi > 0:
        raise GlmError(
            "degenerate fluctuation: score has no sign change on "
            f"[-{bracket}, {bracket}]"
        )
    res = _bisect(score, -bracket, bracket, tol)
    return FluctuationFit(res.x, res.f, res.n_iter, res.converged)
