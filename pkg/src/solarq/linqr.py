"""Linear quantile regression by pinball-loss minimization, and the Poly1-3
model family built on polynomially expanded features.

The solver runs iteratively reweighted least squares on a smoothed pinball
objective (smoothing decayed 1e-2 to 1e-6), then polishes with an exact
vertex search on small instances.  Correctness is defined by objective value
against a brute-force oracle, not by solver identity.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .dataio import HOURS_PER_DAY
from .errors import TrainingError
from .features import (
    FeatureSpec,
    SampleSet,
    Standardizer,
    apply_standardizer,
    fit_standardizer,
    polynomial_expand,
)
from .qcore import QuantileForecast, QuantileGrid, pinball

logger = logging.getLogger(__name__)

ETA_LADDER = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
# Vertex polish is exact but O(n * p) solves per sweep; restrict to instances
# where that is cheap.  The optimality oracle in the tests stays inside these.
POLISH_MAX_ROWS = 160
POLISH_MAX_COLS = 9


@dataclass
class LinearQRModel:
    """Fitted quantile regression: y_hat = X @ weights + intercept."""

    tau: float
    intercept: float
    weights: np.ndarray
    degree: int = 1
    horizon_hour: int | None = None
    training_objective: float = 0.0
    n_iterations: int = 0
    converged: bool = True

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if not np.all(np.isfinite(self.weights)) or not np.isfinite(self.intercept):
            raise ValueError("model parameters must be finite")
        if self.training_objective < 0:
            raise ValueError("training objective cannot be negative")

    @property
    def n_features(self) -> int:
        return self.weights.shape[0]

    def to_record(self, feature_names=None) -> dict:
        return {
            "tau": self.tau,
            "horizon": self.horizon_hour,
            "degree": self.degree,
            "intercept": self.intercept,
            "weights": self.weights.tolist(),
            "feature_names": list(feature_names) if feature_names is not None else None,
            "training_objective": self.training_objective,
        }

    @classmethod
    def from_record(cls, record: dict) -> "LinearQRModel":
        return cls(
            tau=float(record["tau"]),
            intercept=float(record["intercept"]),
            weights=np.asarray(record["weights"], dtype=float),
            degree=int(record["degree"]),
            horizon_hour=record.get("horizon"),
            training_objective=float(record.get("training_objective", 0.0)),
        )


def _augment(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))])


def _objective(A: np.ndarray, y: np.ndarray, beta: np.ndarray, tau: float) -> float:
    return float(np.mean(pinball(A @ beta, y, tau)))


def _solve_weighted(A: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    # lstsq returns the minimum-norm solution on rank-deficient designs,
    # which is the documented tie-break.
    sw = np.sqrt(w)[:, None]
    beta, *_ = np.linalg.lstsq(sw * A, sw[:, 0] * y, rcond=None)
    return beta


def _polish_vertices(
    A: np.ndarray, y: np.ndarray, beta: np.ndarray, tau: float, max_moves: int = 200
) -> np.ndarray:
    """Exact local search over interpolation vertices.

    A minimizer of the piecewise-linear objective sits at a point where m
    residuals vanish (m = parameter count).  Starting from the m smallest
    IRLS residuals, single-point exchanges are applied while they strictly
    decrease the objective; for a convex objective this terminates at a
    global minimizer in the generic case.
    """
    n, m = A.shape
    if n <= m:
        return beta

    def solve(rows):
        sub = A[rows]
        try:
            cand = np.linalg.solve(sub, y[rows])
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(cand)):
            return None
        return cand

    start_obj = _objective(A, y, beta, tau)
    resid = np.abs(y - A @ beta)
    basis = list(np.argsort(resid, kind="stable")[:m])
    best = solve(basis)
    if best is None:
        return beta
    best_obj = _objective(A, y, best, tau)

    moves = 0
    improved = True
    while improved and moves < max_moves:
        improved = False
        in_basis = set(basis)
        for pos in range(m):
            for j in range(n):
                if j in in_basis:
                    continue
                trial = list(basis)
                trial[pos] = j
                cand = solve(trial)
                if cand is None:
                    continue
                obj = _objective(A, y, cand, tau)
                if obj < best_obj - 1e-15 - 1e-9 * best_obj:
                    basis, best, best_obj = trial, cand, obj
                    moves += 1
                    improved = True
                    break
            if improved:
                break
    return best if best_obj <= start_obj else beta


def fit_linear_qr(
    X: np.ndarray,
    y: np.ndarray,
    tau: float,
    tol: float = 1e-6,
    max_iter: int = 500,
    polish: bool | None = None,
    degree: int = 1,
    horizon_hour: int | None = None,
) -> LinearQRModel:
    """Fit y ~ X @ w + b minimizing the mean pinball loss at level ``tau``.

    ``X`` may have zero columns, giving an intercept-only (empirical
    quantile) fit.  ``polish`` None enables the exact vertex polish
    automatically on small instances; True/False forces it.  Non-convergence
    within ``max_iter`` raises TrainingError carrying the best objective.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    n, p = X.shape
    if n < p + 1:
        raise ValueError(f"need at least {p + 1} rows for {p} features, have {n}")

    A = _augment(X)
    beta, *_ = np.linalg.lstsq(A, y, rcond=None)
    best_beta = beta.copy()
    best_obj = _objective(A, y, beta, tau)
    iterations = 0

    # Early smoothing stages only need a rough solve; the final stage owns
    # the tolerance.  Near the nonsmooth optimum IRLS can creep by a nearly
    # constant tiny step forever, so sub-creep_slack stagnation counts as
    # converged rather than burning the whole budget.
    early_budget = max(1, max_iter // 10)
    creep_slack = 100.0 * tol
    converged = False
    for stage, eta in enumerate(ETA_LADDER):
        final = stage == len(ETA_LADDER) - 1
        stage_tol = tol if final else max(tol, 1e-4)
        budget = (max_iter - iterations) if final else early_budget
        prev_obj = _objective(A, y, beta, tau)
        stage_converged = prev_obj <= 1e-13
        creep_run = 0
        stage_iter = 0
        while not stage_converged and stage_iter < budget and iterations < max_iter:
            iterations += 1
            stage_iter += 1
            resid = y - A @ beta
            c = np.where(resid > 0.0, tau, 1.0 - tau)
            w = c / np.maximum(np.abs(resid), eta)
            beta = _solve_weighted(A, y, w)
            obj = _objective(A, y, beta, tau)
            if obj < best_obj:
                best_obj = obj
                best_beta = beta.copy()
            rel = abs(prev_obj - obj) / max(prev_obj, 1e-8)
            if obj <= 1e-13 or rel <= stage_tol:
                stage_converged = True
                break
            creep_run = creep_run + 1 if rel <= creep_slack else 0
            if creep_run >= 5:
                stage_converged = True
                break
            prev_obj = obj
        if final:
            converged = stage_converged
    if not converged:
        raise TrainingError(
            f"quantile regression did not converge in {max_iter} iterations "
            f"(tau={tau})",
            best_objective=best_obj,
        )

    if polish is None:
        polish = n <= POLISH_MAX_ROWS and A.shape[1] <= POLISH_MAX_COLS
    if polish:
        polished = _polish_vertices(A, y, best_beta, tau)
        pol_obj = _objective(A, y, polished, tau)
        if pol_obj < best_obj:
            best_beta, best_obj = polished, pol_obj

    return LinearQRModel(
        tau=tau,
        intercept=float(best_beta[-1]),
        weights=best_beta[:-1],
        degree=degree,
        horizon_hour=horizon_hour,
        training_objective=best_obj,
        n_iterations=iterations,
        converged=converged,
    )


def predict_linear(model: LinearQRModel, X: np.ndarray, clip: bool = True) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a matrix")
    if X.shape[1] != model.n_features:
        raise ValueError(
            f"X has {X.shape[1]} columns but model expects {model.n_features}"
        )
    y_hat = X @ model.weights + model.intercept
    if clip:
        y_hat = np.clip(y_hat, 0.0, 1.0)
    return y_hat


@dataclass
class HorizonPolyModels:
    """All 99 quantile models of one forecast hour, with the feature recipe
    and the standardizer of the expanded design."""

    spec: FeatureSpec
    expanded_std: Standardizer | None
    expanded_names: tuple[str, ...]
    models: dict[int, LinearQRModel]

    @property
    def is_night(self) -> bool:
        return self.spec.is_night


@dataclass
class PolyFamily:
    """Per-horizon polynomial quantile regressions of one maximal degree."""

    degree: int
    grid: QuantileGrid
    horizons: list[HorizonPolyModels]

    @property
    def name(self) -> str:
        return f"Poly{self.degree}"


def _expanded_design(
    samples: SampleSet, spec: FeatureSpec, degree: int
) -> tuple[np.ndarray, list[str]]:
    base = samples.X[:, list(spec.selected_indices)]
    z = apply_standardizer(spec.standardization, base)
    names = spec.selected_names(samples.feature_names)
    return polynomial_expand(z, range(z.shape[1]), degree, names=names)


def fit_poly_family(
    samples: SampleSet,
    specs,
    grid: QuantileGrid,
    degree: int,
    tol: float = 1e-6,
    max_iter: int = 500,
) -> PolyFamily:
    """Fit one model per (horizon, tau): 24 x 99 quantile regressions.

    ``specs`` holds one FeatureSpec per forecast hour.  Night horizons carry
    no models and predict zero.  Fit errors are re-raised annotated with the
    (horizon, tau) that failed.
    """
    specs = list(specs)
    if len(specs) != HOURS_PER_DAY:
        raise ValueError(f"need {HOURS_PER_DAY} feature specs, got {len(specs)}")
    horizons = []
    for h, spec in enumerate(specs):
        if spec.horizon_hour != h:
            raise ValueError(f"spec at position {h} is for hour {spec.horizon_hour}")
        if spec.is_night or not spec.selected_indices:
            horizons.append(
                HorizonPolyModels(spec=spec, expanded_std=None, expanded_names=(), models={})
            )
            continue
        E, names = _expanded_design(samples, spec, degree)
        estd = fit_standardizer(E)
        Z = apply_standardizer(estd, E)
        y_col = samples.Y[:, h]
        models = {}
        for j, tau in enumerate(grid.levels):
            try:
                models[j] = fit_linear_qr(
                    Z, y_col, tau, tol=tol, max_iter=max_iter, polish=False,
                    degree=degree, horizon_hour=h,
                )
            except TrainingError as exc:
                raise TrainingError(
                    f"poly{degree} fit failed at horizon {h}, tau {tau}: {exc}",
                    best_objective=exc.best_objective,
                ) from exc
        horizons.append(
            HorizonPolyModels(
                spec=spec, expanded_std=estd, expanded_names=tuple(names), models=models
            )
        )
        logger.debug("poly%d horizon %d fitted (%d quantiles)", degree, h, len(models))
    return PolyFamily(degree=degree, grid=grid, horizons=horizons)


def predict_poly_family(family: PolyFamily, samples: SampleSet) -> list[QuantileForecast]:
    """Day-ahead quantile forecasts for every sample day.

    Night hours are zero across all quantile levels; estimates are clipped
    to [0, 1] and crossing-repaired per hour.
    """
    n = len(samples)
    n_tau = len(family.grid)
    estimates = np.zeros((n, HOURS_PER_DAY, n_tau))
    for h, horizon in enumerate(family.horizons):
        if horizon.is_night:
            continue
        E, _ = _expanded_design(samples, horizon.spec, family.degree)
        Z = apply_standardizer(horizon.expanded_std, E)
        for j in range(n_tau):
            estimates[:, h, j] = predict_linear(horizon.models[j], Z)
    estimates = np.sort(estimates, axis=2)

    forecasts = []
    for i in range(n):
        forecasts.append(
            QuantileForecast(
                day_index=samples.day_indices[i],
                timestamps=samples.target_timestamps[i],
                estimates=estimates[i],
            )
        )
    return forecasts


def family_to_json(family: PolyFamily, samples_names) -> str:
    horizons = []
    for horizon in family.horizons:
        entry = {
            "spec": json.loads(horizon.spec.to_json(samples_names)),
            "expanded_names": list(horizon.expanded_names),
            "expanded_means": []
            if horizon.expanded_std is None
            else horizon.expanded_std.mean.tolist(),
            "expanded_scales": []
            if horizon.expanded_std is None
            else horizon.expanded_std.scale.tolist(),
            "models": [
                horizon.models[j].to_record() for j in sorted(horizon.models)
            ],
        }
        horizons.append(entry)
    return json.dumps(
        {"degree": family.degree, "levels": list(family.grid.levels), "horizons": horizons}
    )


def family_from_json(text: str, samples_names) -> PolyFamily:
    record = json.loads(text)
    grid = QuantileGrid(levels=tuple(record["levels"]))
    horizons = []
    for entry in record["horizons"]:
        spec = FeatureSpec.from_json(json.dumps(entry["spec"]), samples_names)
        estd = None
        if entry["expanded_means"]:
            estd = Standardizer(
                np.asarray(entry["expanded_means"]), np.asarray(entry["expanded_scales"])
            )
        models = {
            j: LinearQRModel.from_record(rec) for j, rec in enumerate(entry["models"])
        }
        horizons.append(
            HorizonPolyModels(
                spec=spec,
                expanded_std=estd,
                expanded_names=tuple(entry["expanded_names"]),
                models=models,
            )
        )
    return PolyFamily(degree=int(record["degree"]), grid=grid, horizons=horizons)
