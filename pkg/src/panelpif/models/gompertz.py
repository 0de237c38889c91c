"""Stochastic Gompertz population model with lognormal measurement error.

On the log scale the model is a linear Gaussian AR(1) observed with Gaussian
noise, so the exact likelihood is available from a scalar Kalman filter.
"""

from __future__ import annotations

import math

import numpy as np

from ..core import UnitData, UnitModel

LOG_2PI = math.log(2 * math.pi)


def gompertz_rprocess(x, params, rng, steps: int = 1):
    """Advance Gompertz densities ``x`` (any shape, positive) by ``steps`` steps.

    ``X' = K^(1 - exp(-r)) * X^exp(-r) * eps`` with ``log eps ~ N(0, sigma_G^2)``.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("Gompertz state must be positive")
    if steps == 0:
        return x.copy()
    a = np.exp(-np.asarray(params["r"], dtype=float))
    logk = np.log(params["K"])
    sigma = params["sigma_G"]
    z = np.log(x)
    for _ in range(steps):
        z = a * z + (1 - a) * logk + sigma * rng.standard_normal(x.shape)
    return np.exp(z)


def gompertz_dmeasure(y, x, params):
    """Lognormal log-density of ``y`` given density ``x``; ``-inf`` for ``y <= 0``."""
    x = np.asarray(x, dtype=float)
    tau = np.asarray(params["tau"], dtype=float)
    y = float(np.asarray(y).reshape(-1)[0])
    if y <= 0:
        return np.full(x.shape, -math.inf)
    ly = math.log(y)
    with np.errstate(divide="ignore"):
        d = (ly - np.log(x)) / tau
    return -0.5 * d * d - np.log(tau) - 0.5 * LOG_2PI - ly


def gompertz_exact_loglik(unit: UnitData, params) -> float:
    """Exact log-likelihood of one unit's data by a scalar Kalman filter.

    The latent log density follows ``Z' = a Z + (1-a) log K + N(0, sigma_G^2)``
    with ``a = exp(-r)`` and ``Z_0 = log X_0`` known; the data satisfy
    ``log y = Z + N(0, tau^2)``. The lognormal Jacobian ``-sum(log y)`` is
    included so the value is comparable with particle-filter estimates.
    """
    y = unit.y[:, 0]
    if np.any(y <= 0):
        raise ValueError("Gompertz data must be positive")
    r = float(params["r"])
    K = float(params["K"])
    s2 = float(params["sigma_G"]) ** 2
    t2 = float(params["tau"]) ** 2
    a = math.exp(-r)
    c = (1 - a) * math.log(K)
    mean = math.log(float(params["X_0"]))
    var = 0.0
    ll = 0.0
    t = unit.t0
    for n in range(unit.n_obs):
        steps = int(round(unit.times[n] - t))
        t = unit.times[n]
        for _ in range(steps):
            mean = a * mean + c
            var = a * a * var + s2
        ly = math.log(y[n])
        f = var + t2
        resid = ly - mean
        ll += -0.5 * (LOG_2PI + math.log(f) + resid * resid / f) - ly
        gain = var / f
        mean = mean + gain * resid
        var = var * (1 - gain)
    return ll


class GompertzModel(UnitModel):
    name = "gompertz"
    param_names = ("K", "r", "sigma_G", "tau", "X_0")
    state_names = ("X",)
    obs_names = ("y",)
    time_step = 1.0

    def rinit(self, params, J, t0, covariates, rng):
        x0 = np.broadcast_to(np.asarray(params["X_0"], dtype=float), (J,))
        return x0.reshape(J, 1).copy()

    def rprocess(self, x, t_from, t_to, params, covariates, rng):
        steps = self.n_steps(t_from, t_to)
        p = {k: _column(params[k]) for k in ("K", "r", "sigma_G")}
        return gompertz_rprocess(x, p, rng, steps)

    def dmeasure(self, y, x, params, t, covariates):
        return gompertz_dmeasure(y, x[:, 0], params)

    def rmeasure(self, x, params, t, covariates, rng):
        tau = np.asarray(params["tau"], dtype=float)
        return (x[:, 0] * np.exp(tau * rng.standard_normal(x.shape[0]))).reshape(-1, 1)

    def exact_loglik(self, unit: UnitData, params) -> float:
        return gompertz_exact_loglik(unit, params)


def _column(v):
    v = np.asarray(v, dtype=float)
    return v.reshape(-1, 1) if v.ndim == 1 else v
