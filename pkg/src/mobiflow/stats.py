"""Bivariate Moran's I (global and local) with conditional-permutation inference."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .validation import check_vector, check_weights

PERMUTATIONS = 999
LABELS = ("HH", "LL", "LH", "HL", "NotSignificant", "Island")


class ConstantVariableError(ValueError):
    pass


class AllIslandsError(ValueError):
    pass


def standardize(values) -> np.ndarray:
    """z-scores with the population (n) standard deviation."""
    x = check_vector(values, "values", min_length=2)
    sd = x.std()
    if not sd > 0:
        raise ConstantVariableError("constant variable: zero variance, index undefined")
    return (x - x.mean()) / sd


def _islands(W: np.ndarray) -> np.ndarray:
    return ~np.any(W != 0, axis=1)


def spatial_lag(W, z) -> np.ndarray:
    W = check_weights(W, row_standardized=False)
    return W @ np.asarray(z, dtype=float)


def local_bivariate_moran(zx, zy, W) -> np.ndarray:
    """``I_i = zx_i * sum_j w_ij zy_j``; islands get 0."""
    W = check_weights(W, len(zx))
    islands = _islands(W)
    if np.all(islands):
        raise AllIslandsError("every unit is an island")
    local = np.asarray(zx, dtype=float) * (W @ np.asarray(zy, dtype=float))
    local[islands] = 0.0
    return local


def global_bivariate_moran(zx, zy, W) -> float:
    """Mean of the local statistics over non-island units."""
    W = check_weights(W, len(zx))
    local = local_bivariate_moran(zx, zy, W)
    return float(local[~_islands(W)].sum() / np.count_nonzero(~_islands(W)))


def _unit_pvalue(i, zx, zy, W, permutations, seed, observed, alternative):
    row = W[i]
    nb = np.flatnonzero(row)
    w = row[nb]
    others = np.delete(zy, i)
    rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
    order = rng.permuted(np.tile(np.arange(len(others)), (permutations, 1)), axis=1)
    reps = zx[i] * (others[order[:, : len(nb)]] * w).sum(axis=1)
    extreme = np.abs(reps) >= abs(observed)
    if alternative == "directed":
        extreme &= np.sign(reps) == np.sign(observed)
    return (np.count_nonzero(extreme) + 1) / (permutations + 1)


def permutation_test(zx, zy, W, permutations: int = PERMUTATIONS, seed: int = 0,
                     alternative: str = "two-sided", n_jobs: int = 1) -> np.ndarray:
    """Conditional-permutation pseudo p-values for the local statistics.

    For unit ``i`` the value ``zx_i`` is held fixed and its neighbours' ``zy``
    values are redrawn without replacement from the other ``n - 1`` units.
    ``alternative="two-sided"`` counts replicates at least as large in magnitude
    as the observed statistic; ``"directed"`` additionally requires the same
    sign. Each unit draws from its own stream seeded by ``(seed, i)`` so results
    do not depend on ``n_jobs``. Islands get p = 1.
    """
    if permutations < 99:
        raise ValueError("permutations must be at least 99")
    if alternative not in ("two-sided", "directed"):
        raise ValueError(f"unknown alternative {alternative!r}")
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    zx = np.asarray(zx, dtype=float)
    zy = np.asarray(zy, dtype=float)
    W = check_weights(W, len(zx))
    observed = local_bivariate_moran(zx, zy, W)
    units = np.flatnonzero(~_islands(W))
    p = np.ones(len(zx))

    def one(i):
        return _unit_pvalue(i, zx, zy, W, permutations, seed, observed[i], alternative)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            p[units] = list(pool.map(one, units))
    else:
        p[units] = [one(i) for i in units]
    return p


def classify_clusters(zx, lag, pseudo_p, alpha: float = 0.05, islands=None) -> np.ndarray:
    """LISA labels from the sign of ``zx``, the sign of the lag and ``p <= alpha``."""
    zx = np.asarray(zx, dtype=float)
    lag = np.asarray(lag, dtype=float)
    p = np.asarray(pseudo_p, dtype=float)
    labels = np.full(len(zx), "NotSignificant", dtype=object)
    sig = p <= alpha
    labels[sig & (zx > 0) & (lag > 0)] = "HH"
    labels[sig & (zx < 0) & (lag < 0)] = "LL"
    labels[sig & (zx < 0) & (lag > 0)] = "LH"
    labels[sig & (zx > 0) & (lag < 0)] = "HL"
    if islands is not None:
        labels[np.asarray(islands, dtype=bool)] = "Island"
    return labels


@dataclass
class MoranResult:
    ids: list[str]
    x: np.ndarray
    y: np.ndarray
    zx: np.ndarray
    zy: np.ndarray
    lag: np.ndarray
    global_I: float
    local_I: np.ndarray
    pseudo_p: np.ndarray
    labels: np.ndarray
    n_permutations: int
    seed: int

    @property
    def n(self) -> int:
        """Units entering the global statistic (islands excluded)."""
        return int(np.count_nonzero(self.labels != "Island"))

    def rows(self):
        for k, uid in enumerate(self.ids):
            yield {
                "district_id": uid,
                "x": repr(float(self.x[k])),
                "y": repr(float(self.y[k])),
                "zx": repr(float(self.zx[k])),
                "lag_zy": repr(float(self.lag[k])),
                "local_I": repr(float(self.local_I[k])),
                "pseudo_p": repr(float(self.pseudo_p[k])),
                "label": self.labels[k],
            }

    def write(self, csv_path, global_path) -> None:
        with Path(csv_path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["district_id", "x", "y", "zx", "lag_zy", "local_I", "pseudo_p", "label"],
                lineterminator="\n",
            )
            writer.writeheader()
            writer.writerows(self.rows())
        Path(global_path).write_text(
            f"I {self.global_I!r}\nn {self.n}\nP {self.n_permutations}\nseed {self.seed}\n", encoding="utf-8"
        )


class BivariateMoran(BaseEstimator):
    """Bivariate local and global Moran's I between ``x`` and the spatial lag of ``y``.

    Parameters
    ----------
    weights : WeightsMatrix or array-like
        Row-standardized spatial weights aligned with the inputs.
    permutations : int
        Conditional permutations per unit.
    alpha : float
        Significance level for the cluster labels.
    seed : int
        Root seed; unit ``i`` uses the stream seeded by ``(seed, i)``.
    alternative : {"two-sided", "directed"}
        Which replicates count as extreme, see :func:`permutation_test`.
    n_jobs : int
        Threads for the per-unit permutation loops.

    Attributes
    ----------
    zx_, zy_, lag_ : ndarray
    local_I_, p_sim_ : ndarray
    global_I_ : float
    labels_ : ndarray of str
    islands_ : ndarray of bool
    """

    def __init__(self, weights=None, permutations=PERMUTATIONS, alpha=0.05, seed=0,
                 alternative="two-sided", n_jobs=1):
        self.weights = weights
        self.permutations = permutations
        self.alpha = alpha
        self.seed = seed
        self.alternative = alternative
        self.n_jobs = n_jobs

    def fit(self, x, y):
        x = check_vector(x, "x", min_length=2)
        y = check_vector(y, "y", min_length=2)
        if len(x) != len(y):
            raise ValueError(f"x and y differ in length ({len(x)} vs {len(y)})")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        W = check_weights(self.weights, len(x))
        self.x_, self.y_ = x, y
        self.zx_, self.zy_ = standardize(x), standardize(y)
        self.islands_ = _islands(W)
        self.lag_ = W @ self.zy_
        self.local_I_ = local_bivariate_moran(self.zx_, self.zy_, W)
        self.global_I_ = global_bivariate_moran(self.zx_, self.zy_, W)
        self.p_sim_ = permutation_test(self.zx_, self.zy_, W, self.permutations, self.seed,
                                       self.alternative, self.n_jobs)
        self.labels_ = classify_clusters(self.zx_, self.lag_, self.p_sim_, self.alpha, self.islands_)
        return self

    def fit_predict(self, x, y):
        return self.fit(x, y).labels_

    def result(self, ids=None) -> MoranResult:
        check_is_fitted(self, "labels_")
        ids = list(ids) if ids is not None else getattr(self.weights, "ids", None) or [str(i) for i in range(len(self.x_))]
        return MoranResult(ids, self.x_, self.y_, self.zx_, self.zy_, self.lag_, self.global_I_,
                           self.local_I_, self.p_sim_, self.labels_, self.permutations, self.seed)
