"""Fitting and wrapping of the four nuisance functions.

Pi (phase-2 sampling mechanism), g (treatment mechanism), Q (outcome
regression) and the conditional regression of full-data influence values
on phase-1 variables are all exposed through one small Predictor protocol
so that alternative learners can be plugged in later. Everything shipped
here is a main-term GLM; probability outputs are truncated.

Feature conventions (columns, in order):
  V-features : w1 columns, a, y          (all rows)
  W-features : w1 columns, w2 columns    (phase-2 rows only)
  AW-features: a, w1 columns, w2 columns (phase-2 rows only)
An intercept is added internally by the GLM-backed predictors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data_model import Dataset
from .glm import GlmError, GlmFit, fit_glm

__all__ = [
    "NuisanceError",
    "Predictor",
    "GlmPredictor",
    "AnalyticPredictor",
    "PinnedPredictor",
    "NuisanceSet",
    "NuisanceConfig",
    "TRUNC_PI_DEFAULT",
    "TRUNC_G_DEFAULT",
    "v_features",
    "w_features",
    "aw_features",
    "fit_pi",
    "fit_g_ipcw",
    "fit_q_ipcw",
    "fit_mbar",
    "fix_known",
    "pin_known",
    "predict_on",
    "fit_nuisances",
]

# Default truncation: positivity floors for the sampling and treatment
# mechanisms. Configurable; these are practical floors, not estimates.
TRUNC_PI_DEFAULT = (0.01, 1.0)
TRUNC_G_DEFAULT = (0.01, 0.99)


class NuisanceError(RuntimeError):
    """A nuisance function is unidentifiable or cannot be fit."""


# ---------------------------------------------------------------------------
# feature builders
# ---------------------------------------------------------------------------


def v_features(ds: Dataset, rows: np.ndarray | None = None) -> np.ndarray:
    """Phase-1 feature rows (w1, a, y); defined for every record."""
    if rows is None:
        rows = slice(None)
    return np.column_stack([ds.w1[rows], ds.a[rows].astype(float), ds.y[rows]])


def w_features(ds: Dataset, rows: np.ndarray) -> np.ndarray:
    """Full covariate rows (w1, w2); valid on phase-2 rows only."""
    return np.column_stack([ds.w1[rows], ds.w2[rows]])


def aw_features(ds: Dataset, rows: np.ndarray, a_value: int | None = None) -> np.ndarray:
    """Treatment-plus-covariate rows; a_value overrides the observed arm."""
    a = ds.a[rows].astype(float) if a_value is None else np.full(len(rows), float(a_value))
    return np.column_stack([a, ds.w1[rows], ds.w2[rows]])


def _add_intercept(X: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(X.shape[0]), X])


# ---------------------------------------------------------------------------
# predictors
# ---------------------------------------------------------------------------


class Predictor:
    """Opaque fitted function over feature rows.

    Subclasses implement `_raw(X)`; `predict` applies the declared
    truncation. `output` is "probability" or "real".
    """

    output: str = "real"
    bounds: tuple[float, float] | None = None

    def _raw(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict(self, X: np.ndarray) -> np.ndarray:
        vals = np.asarray(self._raw(np.asarray(X, dtype=float)), dtype=float)
        if self.bounds is not None:
            vals = np.clip(vals, self.bounds[0], self.bounds[1])
        return vals


@dataclass
class GlmPredictor(Predictor):
    """GLM fit plus main-term feature map (intercept added here)."""

    fit: GlmFit
    output: str = "probability"
    bounds: tuple[float, float] | None = None

    def _raw(self, X: np.ndarray) -> np.ndarray:
        return self.fit.predict(_add_intercept(X))


@dataclass
class AnalyticPredictor(Predictor):
    """Closed-form mechanism wrapped as a predictor (known-truth injection)."""

    fn: Callable[[np.ndarray], np.ndarray]
    output: str = "probability"
    bounds: tuple[float, float] | None = None

    def _raw(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(X), dtype=float)


@dataclass
class PinnedPredictor(Predictor):
    """Per-row known values aligned with one specific dataset.

    Used to inject simulation truths that depend on latent variables and
    therefore cannot be written as functions of the observed features.
    """

    values: np.ndarray
    output: str = "probability"
    bounds: tuple[float, float] | None = None

    def _raw(self, X: np.ndarray) -> np.ndarray:
        if X.shape[0] != len(self.values):
            raise NuisanceError(
                f"pinned predictor holds {len(self.values)} rows, asked for {X.shape[0]}"
            )
        return np.asarray(self.values, dtype=float)


def fix_known(fn: Callable[[np.ndarray], np.ndarray], output: str = "probability",
              bounds: tuple[float, float] | None = None) -> AnalyticPredictor:
    """Wrap an analytic mechanism; truncation (bounds) still applies."""
    return AnalyticPredictor(fn=fn, output=output, bounds=bounds)


def predict_on(pred: Predictor, X: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
    """Evaluate a predictor on feature rows.

    Pinned predictors ignore the features and are indexed by `rows`
    (dataset row positions), since their values are dataset-aligned.
    """
    if isinstance(pred, PinnedPredictor):
        vals = pred.values if rows is None else pred.values[rows]
        if pred.bounds is not None:
            vals = np.clip(vals, pred.bounds[0], pred.bounds[1])
        return np.asarray(vals, dtype=float)
    return pred.predict(X)


def pin_known(values: np.ndarray, output: str = "probability",
              bounds: tuple[float, float] | None = None) -> PinnedPredictor:
    return PinnedPredictor(values=np.asarray(values, dtype=float), output=output, bounds=bounds)


# ---------------------------------------------------------------------------
# nuisance fits
# ---------------------------------------------------------------------------


def fit_pi(ds: Dataset, trunc: tuple[float, float] = TRUNC_PI_DEFAULT) -> Predictor:
    """Logistic regression of the phase-2 indicator on (w1, a, y), all rows."""
    delta = ds.delta
    if delta.min() == delta.max():
        raise NuisanceError("phase-2 indicator is constant: sampling mechanism unidentifiable")
    X = _add_intercept(v_features(ds))
    fit = fit_glm(X, delta.astype(float), family="bernoulli")
    return GlmPredictor(fit=fit, output="probability", bounds=trunc)


def _ipcw_weights(ds: Dataset, pi: Predictor) -> np.ndarray:
    p2 = ds.phase2
    pi_vals = predict_on(pi, v_features(ds, p2), rows=p2)
    if np.any(pi_vals <= 0):
        raise NuisanceError("nonpositive sampling probabilities after truncation")
    return 1.0 / pi_vals


def fit_q_ipcw(ds: Dataset, pi: Predictor) -> Predictor:
    """Outcome regression on (a, w1, w2) over phase-2 rows, weights 1/Pi.

    The outcome must already live in [0, 1] (binary, or scaled); the fit is
    bernoulli-family so predictions respect the outcome bounds.
    """
    p2 = ds.phase2
    y2 = ds.y[p2]
    if y2.min() < 0.0 or y2.max() > 1.0:
        raise NuisanceError("outcome must be in [0, 1]; scale continuous outcomes first")
    a2 = ds.a[p2]
    for arm in (0, 1):
        if np.sum(a2 == arm) < 2:
            raise NuisanceError(f"fewer than 2 phase-2 records with a={arm}: Q({arm},.) unidentifiable")
    X = _add_intercept(aw_features(ds, p2))
    fit = fit_glm(X, y2, w=_ipcw_weights(ds, pi), family="bernoulli")
    return GlmPredictor(fit=fit, output="probability", bounds=None)


def fit_g_ipcw(ds: Dataset, pi: Predictor,
               trunc: tuple[float, float] = TRUNC_G_DEFAULT) -> Predictor:
    """Propensity regression of a on (w1, w2) over phase-2 rows, weights 1/Pi."""
    p2 = ds.phase2
    a2 = ds.a[p2].astype(float)
    for arm in (0, 1):
        if np.sum(a2 == arm) < 2:
            raise NuisanceError(f"fewer than 2 phase-2 records with a={arm}: g unidentifiable")
    X = _add_intercept(w_features(ds, p2))
    fit = fit_glm(X, a2, w=_ipcw_weights(ds, pi), family="bernoulli")
    return GlmPredictor(fit=fit, output="probability", bounds=trunc)


def fit_mbar(ds: Dataset, values: np.ndarray, weights: np.ndarray | None = None) -> Predictor:
    """Gaussian regression of per-phase-2-row values on (w1, a, y).

    The prediction is defined for every record since the features are
    phase-1 measurable. Rank-deficient designs fall back to the GLM ridge;
    only total singularity raises.
    """
    p2 = ds.phase2
    values = np.asarray(values, dtype=float).ravel()
    if len(values) != len(p2):
        raise NuisanceError("values must align with the phase-2 rows")
    X = _add_intercept(v_features(ds, p2))
    try:
        fit = fit_glm(X, values, w=weights, family="gaussian")
    except GlmError as exc:
        raise NuisanceError(f"regression of influence values failed: {exc}") from exc
    return GlmPredictor(fit=fit, output="real", bounds=None)


# ---------------------------------------------------------------------------
# bundled nuisance set
# ---------------------------------------------------------------------------


@dataclass
class NuisanceSet:
    """Fitted nuisance functions plus their truncation policy."""

    pi: Predictor
    g: Predictor
    q: Predictor
    mbar: Predictor | None = None
    trunc_pi: tuple[float, float] = TRUNC_PI_DEFAULT
    trunc_g: tuple[float, float] = TRUNC_G_DEFAULT


@dataclass
class NuisanceConfig:
    """How to obtain the nuisance set for one dataset.

    known_pi / known_g may be per-row value arrays (aligned with the
    dataset; e.g. simulation truths) or callables over the V-/W-features.
    """

    trunc_pi: tuple[float, float] = TRUNC_PI_DEFAULT
    trunc_g: tuple[float, float] = TRUNC_G_DEFAULT
    known_pi: np.ndarray | Callable | None = None
    known_g: np.ndarray | Callable | None = None


def _known_predictor(spec, bounds, n_expected=None) -> Predictor:
    if callable(spec):
        return fix_known(spec, output="probability", bounds=bounds)
    values = np.asarray(spec, dtype=float)
    if n_expected is not None and len(values) != n_expected:
        raise NuisanceError("known mechanism values do not align with the dataset")
    return pin_known(values, output="probability", bounds=bounds)


def fit_nuisances(ds: Dataset, config: NuisanceConfig | None = None) -> NuisanceSet:
    """Fit (or inject) Pi and g, then the IPCW-weighted outcome regression."""
    cfg = config or NuisanceConfig()
    if cfg.known_pi is not None:
        pi = _known_predictor(cfg.known_pi, cfg.trunc_pi, ds.n)
    else:
        pi = fit_pi(ds, trunc=cfg.trunc_pi)
    if cfg.known_g is not None:
        # pinned g values are aligned with the full dataset; phase-2 slices
        # are taken by the evaluator
        g = _known_predictor(cfg.known_g, cfg.trunc_g,
                             ds.n if not callable(cfg.known_g) else None)
    else:
        g = fit_g_ipcw(ds, pi, trunc=cfg.trunc_g)
    q = fit_q_ipcw(ds, pi)
    return NuisanceSet(pi=pi, g=g, q=q, mbar=None, trunc_pi=cfg.trunc_pi, trunc_g=cfg.trunc_g)
