"""Sexual contact counts with episodic latent rates and negative binomial reporting.

Each unit has a latent contact rate that is constant within behavioral
episodes; episodes renew at rate ``mu_R`` and each new episode draws its rate
from a gamma law with mean ``mu_X`` and sd ``sigma_X``. A unit dispersion
``D ~ Gamma(mu_D, sigma_D)`` is drawn once at the start. The count for
reporting interval ``n`` is negative binomial with mean
``alpha^(n-1) * integral(rate)`` and size ``D``.

Time unit: one reporting interval (six months), so ``mu_R`` is a rate per
interval.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln, xlogy

from ..core import UnitModel

RATE, DISP, INTEGRAL, COUNT = 0, 1, 2, 3
STATE_NAMES = ("X", "D", "integral", "interval")


def gamma_mean_sd(mean, sd, rng, size: int):
    """Gamma draws parameterized by mean and standard deviation."""
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (size,))
    sd = np.broadcast_to(np.asarray(sd, dtype=float), (size,))
    zero_sd = sd <= 0
    safe_sd = np.where(zero_sd, 1.0, sd)
    shape = (mean / safe_sd) ** 2
    scale = safe_sd**2 / mean
    draws = rng.gamma(shape, scale)
    return np.where(zero_sd, mean, draws)


def renewal_integral(rate, delta: float, params, rng, record: bool = False):
    """Integrate an episodic rate over an interval of length ``delta``.

    Episode boundaries form a Poisson process of rate ``mu_R``; at each boundary
    a fresh rate is drawn. Returns ``(end rate, integral, renewals)`` and, when
    ``record`` is true, the per-particle list of ``(segment length, segment rate)``
    pairs as a fourth element.
    """
    rate = np.array(rate, dtype=float)
    J = rate.size
    mu_r = np.broadcast_to(np.asarray(params["mu_R"], dtype=float), (J,))
    mu_x = np.broadcast_to(np.asarray(params["mu_X"], dtype=float), (J,))
    sd_x = np.broadcast_to(np.asarray(params["sigma_X"], dtype=float), (J,))
    remaining = np.full(J, float(delta))
    integral = np.zeros(J)
    renewals = np.zeros(J, dtype=np.int64)
    segments = [[] for _ in range(J)] if record else None
    active = np.flatnonzero(mu_r > 0)
    # particles that never renew contribute one segment
    still = np.flatnonzero(mu_r <= 0)
    integral[still] = rate[still] * delta
    if record:
        for j in still:
            segments[j].append((float(delta), float(rate[j])))
    while active.size:
        wait = rng.standard_exponential(active.size) / mu_r[active]
        ends = wait >= remaining[active]
        done = active[ends]
        integral[done] += rate[done] * remaining[done]
        if record:
            for j in done:
                segments[j].append((float(remaining[j]), float(rate[j])))
        go = active[~ends]
        w = wait[~ends]
        integral[go] += rate[go] * w
        if record:
            for j, wj in zip(go, w):
                segments[j].append((float(wj), float(rate[j])))
        remaining[go] -= w
        rate[go] = gamma_mean_sd(mu_x[go], sd_x[go], rng, go.size)
        renewals[go] += 1
        active = go
    if record:
        return rate, integral, renewals, segments
    return rate, integral, renewals


def nb_log_pmf(y, mean, size):
    """Negative binomial log-pmf with the given mean and size (variance ``mean + mean^2/size``)."""
    y = float(np.asarray(y).reshape(-1)[0])
    if y < 0 or y != math.floor(y):
        raise ValueError(f"counts must be nonnegative integers, got {y}")
    mean = np.asarray(mean, dtype=float)
    size = np.asarray(size, dtype=float)
    mean, size = np.broadcast_arrays(mean, size)
    out = np.empty(mean.shape)
    zero = mean <= 0
    out[zero] = 0.0 if y == 0 else -math.inf
    m, d = mean[~zero], size[~zero]
    log_md = np.log(m + d)
    out[~zero] = (gammaln(y + d) - gammaln(d) - gammaln(y + 1)
                  + d * (np.log(d) - log_md) + xlogy(y, m) - y * log_md)
    return out


class ContactsModel(UnitModel):
    name = "contacts"
    param_names = ("mu_X", "sigma_X", "mu_D", "sigma_D", "mu_R", "alpha")
    state_names = STATE_NAMES
    obs_names = ("contacts",)
    time_step = 1.0

    def rinit(self, params, J, t0, covariates, rng):
        x = np.zeros((J, 4))
        x[:, RATE] = gamma_mean_sd(params["mu_X"], params["sigma_X"], rng, J)
        x[:, DISP] = gamma_mean_sd(params["mu_D"], params["sigma_D"], rng, J)
        return x

    def rprocess(self, x, t_from, t_to, params, covariates, rng):
        delta = t_to - t_from
        if delta < 0:
            raise ValueError("time must not run backwards")
        if delta == 0:
            return x.copy()
        out = x.copy()
        out[:, RATE], out[:, INTEGRAL], _ = renewal_integral(x[:, RATE], delta, params, rng)
        out[:, COUNT] += 1
        return out

    def expected_count(self, x, params):
        alpha = np.asarray(params["alpha"], dtype=float)
        return alpha ** (x[:, COUNT] - 1) * x[:, INTEGRAL]

    def dmeasure(self, y, x, params, t, covariates):
        return nb_log_pmf(y, self.expected_count(x, params), x[:, DISP])

    def rmeasure(self, x, params, t, covariates, rng):
        c = self.expected_count(x, params)
        d = x[:, DISP]
        lam = rng.gamma(d, np.divide(c, d, out=np.zeros_like(c), where=d > 0))
        return rng.poisson(lam).astype(float).reshape(-1, 1)
