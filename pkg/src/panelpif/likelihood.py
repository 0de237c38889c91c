"""Replicated likelihood evaluation and panel likelihood combiners.

Each unit is filtered ``R`` times with independent streams. Two unbiased
estimators of the panel likelihood can be formed from the ``U x R`` matrix of
estimates: the mean over replicates of the product over units, and the product
over units of the mean over replicates. The second has lower variance and is
the default throughout the package. All combination happens in log space.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .core import PanelData, ParameterSet, model_for_unit, unit_parameters
from .smc import FilterOptions, FilterResult, log_mean_exp, particle_filter
from .streams import EVAL, make_rng


@dataclass
class ReplicateMatrix:
    """Per-unit, per-replicate log-likelihood estimates (shape ``U x R``)."""

    logliks: np.ndarray
    J: int = 0
    seed: int = 0
    labels: list[str] = field(default_factory=list)
    results: list[list[FilterResult]] | None = None
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.logliks = np.atleast_2d(np.asarray(self.logliks, dtype=float))
        if self.logliks.shape[1] < 1:
            raise ValueError("need at least one replicate")

    @property
    def n_units(self) -> int:
        return self.logliks.shape[0]

    @property
    def n_reps(self) -> int:
        return self.logliks.shape[1]


def _eval_cell(args):
    model, unit, params, J, seed, r, u, resampler, keep = args
    opts = FilterOptions(J=J, seed=seed, resampler=resampler, on_failure="neg_inf")
    res = particle_filter(model, unit, params, opts, rng=make_rng(seed, EVAL, r, u))
    return res if keep else FilterResult(res.loglik, res.cond_loglik[:0], res.ess[:0],
                                         failed_at=res.failed_at, warnings=res.warnings)


def replicated_eval(models, data: PanelData, theta: ParameterSet, J: int, R: int, seed: int,
                    resampler: str = "systematic", keep_results: bool = False,
                    executor=None) -> ReplicateMatrix:
    """Filter every unit ``R`` times; cell ``(u, r)`` uses stream ``(seed, EVAL, r, u)``.

    Filtering failures become ``-inf`` entries and are reported as warnings.
    ``executor`` may be any object with an order-preserving ``map``.
    """
    if R < 1 or J < 1:
        raise ValueError("R and J must be at least 1")
    if theta.n_units != len(data):
        raise ValueError(f"parameters cover {theta.n_units} units, data has {len(data)}")
    cells = [(model_for_unit(models, u), data[u], unit_parameters(theta, u), J, seed, r, u,
              resampler, keep_results)
             for u in range(len(data)) for r in range(R)]
    mapper = executor.map if executor is not None else map
    results = list(mapper(_eval_cell, cells))
    ll = np.array([res.loglik for res in results]).reshape(len(data), R)
    msgs = [w for res in results for w in res.warnings]
    for msg in msgs:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    grid = [results[u * R:(u + 1) * R] for u in range(len(data))] if keep_results else None
    return ReplicateMatrix(ll, J, seed, data.labels, grid, msgs)


def _as_matrix(m) -> np.ndarray:
    return m.logliks if isinstance(m, ReplicateMatrix) else np.atleast_2d(np.asarray(m, dtype=float))


def combine_product_of_means(m) -> float:
    """Sum over units of the log of the replicate-mean likelihood."""
    ll = _as_matrix(m)
    return float(np.sum(log_mean_exp(ll, axis=1)))


def combine_mean_of_products(m) -> float:
    """Log of the replicate mean of the product of unit likelihoods."""
    ll = _as_matrix(m)
    return log_mean_exp(ll.sum(axis=0))


COMBINERS = {
    "product_of_means": combine_product_of_means,
    "mean_of_products": combine_mean_of_products,
}


def jackknife_se(m, combiner=combine_product_of_means) -> float:
    """Jackknife standard error of a combined log-likelihood over replicates."""
    ll = _as_matrix(m)
    R = ll.shape[1]
    if R < 2:
        return math.nan
    loo = np.array([combiner(np.delete(ll, r, axis=1)) for r in range(R)])
    if not np.all(np.isfinite(loo)):
        return math.nan
    return float(math.sqrt((R - 1) / R * np.sum((loo - loo.mean()) ** 2)))


def variance_mean_of_products(sigma2, ell, R: int) -> float:
    """Natural-scale variance of the mean-of-products estimator.

    ``(1/R) * (prod(sigma2 + ell^2) - prod(ell)^2)``
    """
    sigma2 = np.asarray(sigma2, dtype=float)
    ell = np.asarray(ell, dtype=float)
    if np.any(sigma2 < 0):
        raise ValueError("variances must be nonnegative")
    return float((np.prod(sigma2 + ell**2) - np.prod(ell) ** 2) / R)


def variance_product_of_means(sigma2, ell, R: int) -> float:
    """Natural-scale variance of the product-of-means estimator.

    ``prod(sigma2/R + ell^2) - prod(ell)^2``
    """
    sigma2 = np.asarray(sigma2, dtype=float)
    ell = np.asarray(ell, dtype=float)
    if np.any(sigma2 < 0):
        raise ValueError("variances must be nonnegative")
    return float(np.prod(sigma2 / R + ell**2) - np.prod(ell) ** 2)


def variance_terms(sigma2, ell, R: int):
    """Summands of both variance expansions, indexed by ``k`` in ``{0,1}^U \\ {0}``.

    Yields ``(k, mean_of_products_term, product_of_means_term)``. Enumerates
    ``2^U - 1`` terms, so keep ``U`` small.
    """
    sigma2 = np.asarray(sigma2, dtype=float)
    ell = np.asarray(ell, dtype=float)
    for k in product((0, 1), repeat=sigma2.size):
        k = np.array(k)
        if not k.any():
            continue
        base = float(np.prod(np.where(k == 1, sigma2, ell**2)))
        yield tuple(int(v) for v in k), base / R, base / float(R) ** k.sum()
