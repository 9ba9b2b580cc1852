"""Per-day sample construction, polynomial expansion, standardization, and
greedy forward feature selection."""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .dataio import HOURS_PER_DAY, NightMask, RawDataset
from .qcore import pinball

logger = logging.getLogger(__name__)

LAG_COLUMNS = HOURS_PER_DAY
RADIATION_BLOCKS = ("SSRD", "STRD", "TSR")
RAW_FEATURE_COUNT = LAG_COLUMNS + HOURS_PER_DAY * len(RADIATION_BLOCKS)  # 96
MAX_SELECTED = 4


def raw_feature_names() -> tuple[str, ...]:
    """Names of the 96 raw sample columns: 24 power lags then 24 hourly values
    of each radiation variable."""
    names = [f"lag_{h:02d}" for h in range(LAG_COLUMNS)]
    for block in RADIATION_BLOCKS:
        names.extend(f"{block}_{h:02d}" for h in range(HOURS_PER_DAY))
    return tuple(names)


@dataclass(eq=False)
class SampleSet:
    """One row per forecast day: previous-day power lags plus same-day
    radiation forecasts against the day's 24 target powers."""

    X: np.ndarray
    Y: np.ndarray
    feature_names: tuple[str, ...]
    day_indices: tuple[int, ...]
    target_timestamps: tuple[tuple[datetime, ...], ...] = ()
    night_hours: frozenset[int] = frozenset()
    skipped_days: int = 0

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        if self.X.ndim != 2 or self.Y.ndim != 2:
            raise ValueError("X and Y must be matrices")
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError("X and Y row counts differ")
        if self.Y.shape[1] != HOURS_PER_DAY:
            raise ValueError(f"Y must have {HOURS_PER_DAY} target columns")
        if self.X.shape[1] != len(self.feature_names):
            raise ValueError("feature_names length does not match X")
        if len(self.day_indices) != self.X.shape[0]:
            raise ValueError("day_indices length does not match X")
        if np.isnan(self.X).any() or np.isnan(self.Y).any():
            raise ValueError("samples contain NaN entries")

    def __len__(self) -> int:
        return self.X.shape[0]

    def take(self, rows) -> "SampleSet":
        rows = np.asarray(rows, dtype=int)
        return SampleSet(
            X=self.X[rows],
            Y=self.Y[rows],
            feature_names=self.feature_names,
            day_indices=tuple(self.day_indices[i] for i in rows),
            target_timestamps=tuple(self.target_timestamps[i] for i in rows)
            if self.target_timestamps
            else (),
            night_hours=self.night_hours,
            skipped_days=self.skipped_days,
        )

    def split_by_day(self, boundary_day: int) -> tuple["SampleSet", "SampleSet"]:
        """Rows forecasting days before ``boundary_day`` vs. from it onward."""
        first = [i for i, d in enumerate(self.day_indices) if d < boundary_day]
        second = [i for i, d in enumerate(self.day_indices) if d >= boundary_day]
        return self.take(first), self.take(second)


def build_samples(data: RawDataset, mask: NightMask | None = None) -> SampleSet:
    """Assemble the design and target matrices from an aligned dataset.

    For each whole day d >= 1 the feature row is the previous day's 24 power
    values followed by day d's 24 hourly values of SSRD, STRD, and TSR (96
    columns); the target row is day d's 24 power values.  A trailing partial
    day cannot form a sample and is counted in ``skipped_days``.
    """
    n_days = data.n_whole_days
    if n_days < 2:
        raise ValueError(f"need at least 2 whole days to build samples, have {n_days}")
    skipped = 1 if len(data) % HOURS_PER_DAY else 0

    P = data.day_matrix("power")
    blocks = [P[:-1]]
    for var in RADIATION_BLOCKS:
        blocks.append(data.day_matrix(var)[1:])
    X = np.hstack(blocks)
    Y = P[1:]

    timestamps = data.timestamps
    target_ts = tuple(
        tuple(timestamps[d * HOURS_PER_DAY + h] for h in range(HOURS_PER_DAY))
        for d in range(1, n_days)
    )
    return SampleSet(
        X=X,
        Y=Y,
        feature_names=raw_feature_names(),
        day_indices=tuple(range(1, n_days)),
        target_timestamps=target_ts,
        night_hours=mask.night_hours if mask is not None else frozenset(),
        skipped_days=skipped,
    )


def candidates_for_horizon(samples: SampleSet, hour: int) -> list[int]:
    """Column indices considered for forecast hour ``hour``: all 24 power lags
    plus the three radiation values of that hour (27 candidates)."""
    if not 0 <= hour < HOURS_PER_DAY:
        raise ValueError(f"horizon hour must lie in 0..{HOURS_PER_DAY - 1}, got {hour}")
    if samples.X.shape[1] != RAW_FEATURE_COUNT:
        raise ValueError("samples do not carry the raw 96-column layout")
    return list(range(LAG_COLUMNS)) + [
        LAG_COLUMNS + b * HOURS_PER_DAY + hour for b in range(len(RADIATION_BLOCKS))
    ]


def polynomial_expand(
    X: np.ndarray, columns, degree: int, names=None
) -> tuple[np.ndarray, list[str]]:
    """All monomials of the given columns up to total ``degree``.

    The constant term is excluded (the models carry their own intercept) and
    degree 1 returns the selected columns unchanged.
    """
    if not 1 <= degree <= 3:
        raise ValueError(f"degree must lie in 1..3, got {degree}")
    columns = list(columns)
    if not columns:
        raise ValueError("polynomial expansion needs at least one column")
    X = np.asarray(X, dtype=float)
    if names is None:
        names = [f"x{c}" for c in columns]

    out_cols = []
    out_names = []
    for total in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(len(columns)), total):
            col = np.ones(X.shape[0])
            for j in combo:
                col = col * X[:, columns[j]]
            out_cols.append(col)
            out_names.append(_monomial_name([names[j] for j in combo]))
    return np.column_stack(out_cols), out_names


def _monomial_name(parts: list[str]) -> str:
    pieces = []
    for name, group in itertools.groupby(parts):
        power = len(list(group))
        pieces.append(name if power == 1 else f"{name}^{power}")
    return "*".join(pieces)


@dataclass
class Standardizer:
    """Per-column shift and scale fitted on training data."""

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.scale = np.asarray(self.scale, dtype=float)
        if self.mean.shape != self.scale.shape or self.mean.ndim != 1:
            raise ValueError("mean and scale must be matching vectors")
        if np.any(self.scale <= 0.0):
            raise ValueError("scales must be positive")

    def restrict(self, columns) -> "Standardizer":
        cols = np.asarray(list(columns), dtype=int)
        return Standardizer(self.mean[cols], self.scale[cols])


def fit_standardizer(X_train: np.ndarray) -> Standardizer:
    """Column means and population standard deviations; constant columns get
    scale 1 so they transform to exactly zero."""
    X_train = np.asarray(X_train, dtype=float)
    if X_train.ndim != 2 or X_train.shape[0] < 2:
        raise ValueError("standardizer needs a matrix with at least 2 rows")
    mean = X_train.mean(axis=0)
    scale = X_train.std(axis=0)
    scale = np.where(scale > 0.0, scale, 1.0)
    return Standardizer(mean=mean, scale=scale)


def apply_standardizer(std: Standardizer, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != std.mean.shape[0]:
        raise ValueError(f"width mismatch: data has {X.shape[-1]} columns, standardizer "
                         f"{std.mean.shape[0]}")
    return (X - std.mean) / std.scale


def invert_standardizer(std: Standardizer, X_std: np.ndarray) -> np.ndarray:
    return np.asarray(X_std, dtype=float) * std.scale + std.mean


@dataclass
class ForwardSelection:
    """Greedy selection result: chosen columns in pick order, with the
    cross-validated loss after each pick."""

    selected: list[int]
    cv_losses: list[float]


def _default_trainer(X: np.ndarray, y: np.ndarray):
    # Degree-1 median regression; imported lazily to avoid a module cycle.
    from .linqr import fit_linear_qr, predict_linear

    model = fit_linear_qr(X, y, tau=0.5, tol=1e-5, max_iter=200, polish=False)

    def predict(X_new: np.ndarray) -> np.ndarray:
        return predict_linear(model, X_new, clip=False)

    return predict


def _contiguous_folds(n: int, folds: int) -> list[np.ndarray]:
    return [f for f in np.array_split(np.arange(n), folds) if len(f)]


def forward_select(
    X: np.ndarray,
    y: np.ndarray,
    candidates,
    k: int,
    folds: int = 5,
    seed: int = 0,
    trainer=None,
) -> ForwardSelection:
    """Greedy forward selection of ``k`` columns by cross-validated median
    pinball loss.

    Starting from the empty set, each step adds the candidate whose addition
    gives the lowest CV loss of the trainer (by default a degree-1 linear
    quantile regression at tau 0.5).  Folds are contiguous blocks so the
    temporal ordering of samples is preserved; the procedure is deterministic
    and ``seed`` is kept only for interface stability.  Ties are broken
    toward the lowest column index.
    """
    del seed
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    candidates = sorted(int(c) for c in candidates)
    if k > len(candidates):
        raise ValueError(f"cannot select {k} features from {len(candidates)} candidates")
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if trainer is None:
        trainer = _default_trainer

    if not np.any(y != 0.0):
        logger.warning("forward_select: all-zero targets; returning first %d candidates", k)
        return ForwardSelection(selected=candidates[:k], cv_losses=[0.0] * k)

    fold_rows = _contiguous_folds(len(y), folds)

    def cv_loss(cols: list[int]) -> float:
        losses = []
        for val_rows in fold_rows:
            train_rows = np.setdiff1d(np.arange(len(y)), val_rows)
            predict = trainer(X[np.ix_(train_rows, cols)], y[train_rows])
            pred = predict(X[np.ix_(val_rows, cols)])
            losses.append(float(np.mean(pinball(pred, y[val_rows], 0.5))))
        return float(np.mean(losses))

    selected: list[int] = []
    cv_losses: list[float] = []
    remaining = list(candidates)
    for _ in range(k):
        best_col = None
        best_loss = np.inf
        for col in remaining:
            loss = cv_loss(selected + [col])
            if loss < best_loss:  # strict: first (lowest-index) candidate wins ties
                best_loss = loss
                best_col = col
        selected.append(best_col)
        cv_losses.append(best_loss)
        remaining.remove(best_col)
    return ForwardSelection(selected=selected, cv_losses=cv_losses)


@dataclass
class FeatureSpec:
    """Fitted per-horizon feature recipe: which raw columns feed the models
    for one forecast hour and how they are standardized."""

    horizon_hour: int
    candidate_names: tuple[str, ...]
    selected_indices: tuple[int, ...]
    poly_degree: int = 1
    standardization: Standardizer | None = None
    is_night: bool = False
    cv_losses: tuple[float, ...] = ()

    def __post_init__(self):
        if not 0 <= self.horizon_hour < HOURS_PER_DAY:
            raise ValueError(f"bad horizon hour {self.horizon_hour}")
        if len(self.selected_indices) > MAX_SELECTED:
            raise ValueError(f"at most {MAX_SELECTED} selected features allowed")
        if len(set(self.selected_indices)) != len(self.selected_indices):
            raise ValueError("selected indices must be distinct")
        if not 1 <= self.poly_degree <= 3:
            raise ValueError(f"poly degree must lie in 1..3, got {self.poly_degree}")
        if not self.is_night and self.standardization is not None:
            if len(self.selected_indices) != self.standardization.mean.shape[0]:
                raise ValueError("standardizer width does not match selection")

    def selected_names(self, all_names) -> list[str]:
        return [all_names[i] for i in self.selected_indices]

    def to_json(self, all_names) -> str:
        record = {
            "horizon": self.horizon_hour,
            "selected": self.selected_names(all_names),
            "degree": self.poly_degree,
            "means": [] if self.standardization is None else self.standardization.mean.tolist(),
            "scales": [] if self.standardization is None else self.standardization.scale.tolist(),
            "night": self.is_night,
        }
        return json.dumps(record, indent=2)

    @classmethod
    def from_json(cls, text: str, all_names) -> "FeatureSpec":
        record = json.loads(text)
        name_to_idx = {n: i for i, n in enumerate(all_names)}
        selected = tuple(name_to_idx[n] for n in record["selected"])
        std = None
        if record["means"]:
            std = Standardizer(np.array(record["means"]), np.array(record["scales"]))
        return cls(
            horizon_hour=int(record["horizon"]),
            candidate_names=tuple(all_names),
            selected_indices=selected,
            poly_degree=int(record["degree"]),
            standardization=std,
            is_night=bool(record.get("night", False)),
        )


def select_features_for_horizon(
    samples: SampleSet,
    hour: int,
    k: int = MAX_SELECTED,
    folds: int = 5,
    seed: int = 0,
) -> FeatureSpec:
    """Run forward selection for one forecast hour on training samples.

    Night hours get an empty selection.  Candidates are standardized before
    selection and the per-column standardizer of the chosen raw columns is
    recorded in the returned spec.
    """
    if hour in samples.night_hours:
        return FeatureSpec(
            horizon_hour=hour,
            candidate_names=samples.feature_names,
            selected_indices=(),
            is_night=True,
        )
    cand = candidates_for_horizon(samples, hour)
    std_all = fit_standardizer(samples.X[:, cand])
    X_cand = apply_standardizer(std_all, samples.X[:, cand])
    result = forward_select(
        X_cand, samples.Y[:, hour], candidates=range(len(cand)), k=k, folds=folds, seed=seed
    )
    raw_selected = tuple(cand[i] for i in result.selected)
    return FeatureSpec(
        horizon_hour=hour,
        candidate_names=samples.feature_names,
        selected_indices=raw_selected,
        standardization=std_all.restrict(result.selected),
        cv_losses=tuple(result.cv_losses),
    )
