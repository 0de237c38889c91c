"""Monthly polio transmission model with infant cohorts and birth covariates.

Time is measured in years; the latent process moves in one-month steps. The
state columns are six one-month susceptible infant cohorts, infected infants,
susceptible older individuals and infected older individuals. Recovered
individuals are implicit.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import log_ndtr

from ..core import CovariateTable, UnitModel

N_BASIS = 6
MORTALITY = 1.0 / 60.0  # per year
MONTH = 1.0 / 12.0

SB = slice(0, 6)
IB, SO, IO = 6, 7, 8
STATE_NAMES = ("SB1", "SB2", "SB3", "SB4", "SB5", "SB6", "IB", "SO", "IO")
SPLINE_NAMES = tuple(f"b{k}" for k in range(1, N_BASIS + 1))
SHARED_NAMES = ("rho", "sigma_dem", "psi", "tau")
UNIT_NAMES = SPLINE_NAMES + ("sigma_env", "SO_0", "IO_0")


def _cardinal_cubic(s):
    """Uniform cubic B-spline supported on [0, 4)."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = (s >= 0) & (s < 1)
    out[m] = s[m] ** 3 / 6
    m = (s >= 1) & (s < 2)
    v = s[m]
    out[m] = (-3 * v**3 + 12 * v**2 - 12 * v + 4) / 6
    m = (s >= 2) & (s < 3)
    v = s[m]
    out[m] = (3 * v**3 - 24 * v**2 + 60 * v - 44) / 6
    m = (s >= 3) & (s < 4)
    out[m] = (4 - s[m]) ** 3 / 6
    return out


def periodic_bspline_basis(t, K: int = N_BASIS) -> np.ndarray:
    """Periodic cubic B-spline basis with period 1 and ``K`` evenly spaced knots.

    Returns an array of shape ``t.shape + (K,)``; the values are nonnegative
    and sum to one at every ``t``.
    """
    if K < 4:
        raise ValueError("a periodic cubic basis needs at least 4 knots")
    t = np.asarray(t, dtype=float)
    u = K * (t - np.floor(t))
    k = np.arange(K)
    s = np.mod(u[..., None] - k, K)
    return _cardinal_cubic(s)


def seasonality(t, b) -> np.ndarray:
    """Transmission rate ``exp(sum_k b_k xi_k(t))``.

    ``b`` has shape ``(K,)`` (any ``t``) or ``(J, K)`` (scalar ``t``).
    """
    xi = periodic_bspline_basis(t)
    b = np.asarray(b, dtype=float)
    return np.exp(xi @ b if b.ndim == 1 else b @ xi)


def gamma_noise(mean_force, sigma_env, sigma_dem, rng, size: int):
    """Multiplicative gamma noise with mean 1 and variance ``sigma_env^2 + sigma_dem^2 / mean_force``.

    Where the variance is zero the noise is exactly 1. Where the mean force is
    zero the returned noise is irrelevant (the force stays zero) and is set to 1.
    """
    lam = np.broadcast_to(np.asarray(mean_force, dtype=float), (size,))
    se = np.broadcast_to(np.asarray(sigma_env, dtype=float), (size,))
    sd = np.broadcast_to(np.asarray(sigma_dem, dtype=float), (size,))
    pos = lam > 0
    var = se**2 + np.divide(sd**2, lam, out=np.zeros(size), where=pos)
    noisy = pos & (var > 0)
    shape = np.divide(1.0, var, out=np.ones(size), where=noisy)
    scale = np.where(noisy, var, 1.0)
    draws = rng.gamma(shape, scale)
    return np.where(noisy, draws, 1.0)


def polio_step(x, mean_force_fn, births_next, params, rng):
    """One month of the polio recursion.

    ``mean_force_fn`` gives the mean force of infection (per year) for the
    current state. Returns the next state and the realized force of infection.
    """
    J = x.shape[0]
    lam_bar = mean_force_fn(x)
    eps = gamma_noise(lam_bar, params["sigma_env"], params["sigma_dem"], rng, J)
    lam = lam_bar * eps
    p = np.exp(-(MORTALITY + lam) * MONTH)
    q = -np.expm1(-(MORTALITY + lam) * MONTH) * lam / (lam + MORTALITY)
    out = np.empty_like(x)
    sb = x[:, SB]
    out[:, IB] = q * sb.sum(axis=1)
    out[:, 0] = births_next
    out[:, 1:6] = p[:, None] * sb[:, 0:5]
    out[:, IO] = q * x[:, SO]
    out[:, SO] = p * (x[:, SO] + sb[:, 5])
    return out, lam


def polio_log_density(y, io, rho, tau):
    """Log-probability of reported count ``y`` under the rounded, zero-truncated normal.

    ``Z ~ Normal(rho*IO, rho*IO + (tau*IO)^2)`` and ``Y = max(round(Z), 0)``.
    """
    y = float(np.asarray(y).reshape(-1)[0])
    if y < 0 or y != math.floor(y):
        raise ValueError(f"polio observations must be nonnegative integers, got {y}")
    io = np.asarray(io, dtype=float)
    rho = np.asarray(rho, dtype=float)
    tau = np.asarray(tau, dtype=float)
    m = rho * io
    s = np.sqrt(rho * io + (tau * io) ** 2)
    shape = np.broadcast(m, s).shape
    m = np.broadcast_to(m, shape)
    s = np.broadcast_to(s, shape)
    out = np.empty(shape)
    # zero variance implies zero mean: point mass at 0
    degen = s <= 0
    out[degen] = 0.0 if y == 0 else -math.inf
    ok = ~degen
    mo, so = m[ok], s[ok]
    upper = (y + 0.5 - mo) / so
    if y == 0:
        out[ok] = log_ndtr(upper)
    else:
        lower = (y - 0.5 - mo) / so
        out[ok] = _log_ndtr_diff(upper, lower)
    return out


def _log_ndtr_diff(upper, lower):
    """``log(Phi(upper) - Phi(lower))`` for ``upper > lower``, stable in both tails."""
    # work in the tail where the larger value is small
    flip = lower > 0
    a = np.where(flip, -lower, upper)
    b = np.where(flip, -upper, lower)
    la = log_ndtr(a)
    lb = log_ndtr(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = la + np.log(-np.expm1(lb - la))
    return np.where(np.isnan(out), -math.inf, out)


class PolioModel(UnitModel):
    """Polio panel model; covariates ``births`` (per month) and ``population``."""

    name = "polio"
    param_names = SHARED_NAMES + UNIT_NAMES
    state_names = STATE_NAMES
    obs_names = ("cases",)
    covariate_names = ("births", "population")
    covariate_lead = 5 * MONTH
    time_step = MONTH

    def rinit(self, params, J, t0, covariates, rng):
        if covariates is None:
            raise ValueError("polio model needs births and population covariates")
        x = np.zeros((J, len(STATE_NAMES)))
        for k in range(6):
            t = t0 - k * MONTH
            if t < covariates.start - 1e-9:
                raise ValueError(f"births before t={covariates.start} are missing; "
                                 f"need births at t={t}")
            x[:, k] = covariates.interpolate("births", t)
        pop0 = covariates.interpolate("population", t0)
        x[:, SO] = pop0 * np.asarray(params["SO_0"], dtype=float)
        x[:, IO] = pop0 * np.asarray(params["IO_0"], dtype=float)
        return x

    def rprocess(self, x, t_from, t_to, params, covariates, rng):
        steps = self.n_steps(t_from, t_to)
        if steps == 0:
            return x.copy()
        b = np.stack([np.broadcast_to(np.asarray(params[k], dtype=float), (x.shape[0],))
                      for k in SPLINE_NAMES], axis=1)
        psi = np.asarray(params["psi"], dtype=float)
        t = t_from
        for _ in range(steps):
            pop = covariates.interpolate("population", t)
            births = covariates.interpolate("births", t + MONTH)
            if pop <= 0 or births < 0:
                raise ValueError(f"negative or zero covariate at t={t}")
            beta = np.exp(b @ periodic_bspline_basis(t))

            def force(state, beta=beta, pop=pop):
                return beta * (state[:, IO] + state[:, IB]) / pop + psi

            x, _ = polio_step(x, force, births, params, rng)
            t = t + MONTH
        return x

    def dmeasure(self, y, x, params, t, covariates):
        return polio_log_density(y, x[:, IO], params["rho"], params["tau"])

    def rmeasure(self, x, params, t, covariates, rng):
        io = x[:, IO]
        rho = np.asarray(params["rho"], dtype=float)
        tau = np.asarray(params["tau"], dtype=float)
        m = rho * io
        s = np.sqrt(rho * io + (tau * io) ** 2)
        z = m + s * rng.standard_normal(io.shape)
        return np.maximum(np.floor(z + 0.5), 0.0).reshape(-1, 1)


def synthetic_covariates(n_months: int, t0: float, rng, population: float = 1e6,
                         growth: float = 0.01, birth_rate: float = 0.02,
                         seasonal_amplitude: float = 0.05) -> CovariateTable:
    """Monthly births and population for a synthetic polio unit.

    The table starts five months before ``t0`` (births of the initial infant
    cohorts) and ends ``n_months`` months after it.
    """
    times = t0 + MONTH * np.arange(-5, n_months + 1)
    trend = population * np.exp(growth * (times - t0))
    noise = np.exp(0.02 * rng.standard_normal(times.size))
    births = birth_rate * trend * MONTH * (1 + seasonal_amplitude * np.sin(2 * np.pi * times)) * noise
    return CovariateTable(times, {"births": births, "population": trend})
