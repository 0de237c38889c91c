"""Sequential Monte Carlo for a single panel unit."""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field

import numpy as np

from .core import UnitData, UnitModel, check_finite_or_neginf
from .streams import as_rng


class FilteringError(RuntimeError):
    """Every particle received zero weight at some observation."""

    def __init__(self, n: int, unit: str | None = None, iteration: int | None = None):
        self.n = n
        self.unit = unit
        self.iteration = iteration
        where = f"observation {n}"
        if unit is not None:
            where = f"unit {unit}, " + where
        if iteration is not None:
            where = f"iteration {iteration}, " + where
        super().__init__(f"filtering failure at {where}: all particle weights are zero")


# ---------------------------------------------------------------------------
# log-space helpers


def log_mean_exp(values, axis=None):
    """``log(mean(exp(values)))`` computed without overflow or underflow.

    Returns ``-inf`` exactly when every input is ``-inf``.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0 or (axis is not None and v.shape[axis] == 0):
        raise ValueError("log_mean_exp of an empty sequence")
    mx = np.max(v, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.mean(np.exp(v - safe), axis=axis, keepdims=True)) + safe
    out = np.where(np.isneginf(mx), -math.inf, out)
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def _check_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    if not w.sum() > 0:
        raise ValueError("weights sum to zero")
    return w


def effective_sample_size(weights) -> float:
    """``(sum w)^2 / sum w^2``."""
    w = _check_weights(weights)
    w = w / w.max()
    return float(w.sum() ** 2 / np.dot(w, w))


# ---------------------------------------------------------------------------
# resampling


def resample_systematic(weights, rng, J: int | None = None) -> np.ndarray:
    """Systematic resampling: one uniform offset, ``J`` evenly spaced points.

    Offspring counts satisfy ``floor(J w_i) <= c_i <= ceil(J w_i)``.
    """
    w = _check_weights(weights)
    J = w.size if J is None else J
    cum = np.cumsum(w)
    cum /= cum[-1]
    positions = (rng.random() + np.arange(J)) / J
    idx = np.searchsorted(cum, positions, side="right")
    return np.minimum(idx, w.size - 1)


def resample_multinomial(weights, rng, J: int | None = None) -> np.ndarray:
    """Independent draws from the normalized weights."""
    w = _check_weights(weights)
    J = w.size if J is None else J
    cum = np.cumsum(w)
    cum /= cum[-1]
    idx = np.searchsorted(cum, rng.random(J), side="right")
    return np.minimum(idx, w.size - 1)


RESAMPLERS = {
    "systematic": resample_systematic,
    "multinomial": resample_multinomial,
}


def get_resampler(name: str):
    try:
        return RESAMPLERS[name]
    except KeyError:
        raise ValueError(f"unknown resampler {name!r}; choose from {sorted(RESAMPLERS)}") from None


# ---------------------------------------------------------------------------
# storage instrumentation


class ParticleMonitor:
    """Counts latent-state particles held in live arrays.

    Arrays are registered as they are created; a finalizer releases their count
    when the array is garbage collected, so ``peak`` records the largest number
    of state particles simultaneously alive.
    """

    def __init__(self):
        self.live = 0
        self.peak = 0

    def track(self, x: np.ndarray) -> np.ndarray:
        n = int(x.shape[0])
        self.live += n
        self.peak = max(self.peak, self.live)
        weakref.finalize(x, self._release, n)
        return x

    def _release(self, n: int) -> None:
        self.live -= n


def _track(monitor, x):
    return monitor.track(x) if monitor is not None else x


# ---------------------------------------------------------------------------
# particle filter


@dataclass(frozen=True)
class FilterOptions:
    J: int = 1000
    seed: int = 0
    resampler: str = "systematic"
    on_failure: str = "error"  # or "neg_inf"
    save_means: bool = False

    def __post_init__(self):
        if int(self.J) < 1:
            raise ValueError("J must be at least 1")
        if self.on_failure not in ("error", "neg_inf"):
            raise ValueError(f"unknown failure policy {self.on_failure!r}")
        get_resampler(self.resampler)


@dataclass
class FilterResult:
    loglik: float
    cond_loglik: np.ndarray
    ess: np.ndarray
    filter_means: np.ndarray | None = None
    failed_at: int | None = None
    warnings: list[str] = field(default_factory=list)


def normalize_log_weights(logw: np.ndarray) -> tuple[float, np.ndarray | None]:
    """Return ``(log mean weight, weights scaled to max 1)``; weights None on total failure."""
    mx = float(np.max(logw))
    if not np.isfinite(mx):
        if mx == math.inf:
            raise ValueError("measurement log-density of +inf")
        return -math.inf, None
    w = np.exp(logw - mx)
    return mx + math.log(w.mean()), w


def particle_filter(model: UnitModel, unit: UnitData, params, opts: FilterOptions,
                    rng: np.random.Generator | None = None,
                    monitor: ParticleMonitor | None = None) -> FilterResult:
    """Bootstrap particle filter for one unit at fixed parameters.

    Particles are resampled at every observation time. ``exp(loglik)`` is an
    unbiased estimate of the unit likelihood.
    """
    rng = as_rng(opts.seed) if rng is None else rng
    resample = get_resampler(opts.resampler)
    J = int(opts.J)
    N = unit.n_obs
    cov = unit.covariates
    cond = np.empty(N)
    ess = np.empty(N)
    means = np.empty((N, len(model.state_names))) if opts.save_means else None

    x = _track(monitor, model.rinit(params, J, unit.t0, cov, rng))
    t = unit.t0
    failed = None
    for n in range(N):
        tn = float(unit.times[n])
        x = _track(monitor, model.rprocess(x, t, tn, params, cov, rng))
        t = tn
        logw = check_finite_or_neginf(model.dmeasure(unit.y[n], x, params, tn, cov))
        cond[n], w = normalize_log_weights(logw)
        if w is None:
            if opts.on_failure == "error":
                raise FilteringError(n, unit.label)
            failed = n
            cond[n:] = -math.inf
            ess[n:] = J
            if means is not None:
                means[n:] = np.nan
            break
        ess[n] = w.sum() ** 2 / np.dot(w, w)
        if means is not None:
            means[n] = np.average(x, axis=0, weights=w)
        x = _track(monitor, x[resample(w, rng)])

    result = FilterResult(float(cond.sum()), cond, ess, means, failed)
    if failed is not None:
        result.warnings.append(f"unit {unit.label}: all weights zero at observation {failed}")
    return result
