"""Monte Carlo adjusted profile (MCAP) confidence intervals.

Profile log-likelihood points carry Monte Carlo noise. They are smoothed with
a degree-2 local regression; a weighted quadratic fitted near the smoothed
maximum gives the statistical standard error (from its curvature) and a
Monte Carlo standard error (delta method on the location of its vertex). The
usual chi-square cutoff is enlarged by the ratio of total to statistical
variance, so that the interval widens when Monte Carlo error is not negligible.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import chi2

from .core import ParameterSet
from .pif import CoolingSchedule


class McapError(ValueError):
    """The profile cannot support an MCAP interval."""


@dataclass(frozen=True)
class ProfilePoint:
    phi: float
    loglik: float


@dataclass
class McapResult:
    grid: np.ndarray
    smoothed: np.ndarray
    phi_hat: float
    se_stat: float
    se_mc: float
    delta: float
    ci: tuple[float, float]
    lam: float
    confidence: float
    quadratic: tuple[float, float, float]   # (c0, b, a): loglik ~ c0 + b*phi - a*phi^2
    truncated: tuple[bool, bool] = (False, False)
    multimodal: bool = False
    n_points: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def se_total(self) -> float:
        return math.sqrt(self.se_stat**2 + self.se_mc**2)

    def curve(self, phi):
        """Smoothed profile interpolated at ``phi`` (within the design range)."""
        return np.interp(phi, self.grid, self.smoothed)


def tricube(d):
    d = np.clip(np.abs(d), 0.0, 1.0)
    return (1 - d**3) ** 3


def neighborhood_weights(phi: np.ndarray, at: np.ndarray, lam: float) -> np.ndarray:
    """Tricube weights of ``phi`` around each point of ``at`` (shape ``(len(at), len(phi))``).

    The bandwidth is the distance to the ``ceil(lam * K)``-th nearest point;
    points at or beyond it get weight zero.
    """
    K = phi.size
    q = min(K, max(1, math.ceil(lam * K - 1e-12)))
    dist = np.abs(phi[None, :] - np.asarray(at, dtype=float)[:, None])
    h = np.sort(dist, axis=1)[:, q - 1]
    h = np.where(h > 0, h, 1.0)
    return tricube(dist / h[:, None])


def loess_quadratic(phi, y, at, lam: float) -> np.ndarray:
    """Degree-2 local regression of ``y`` on ``phi`` evaluated at ``at``."""
    phi = np.asarray(phi, dtype=float)
    y = np.asarray(y, dtype=float)
    at = np.asarray(at, dtype=float)
    w = neighborhood_weights(phi, at, lam)
    scale = max(np.ptp(phi), 1e-300)
    d = (phi[None, :] - at[:, None]) / scale
    X = np.stack([np.ones_like(d), d, d**2], axis=-1)        # (G, K, 3)
    sw = np.sqrt(w)[..., None]
    coef = np.linalg.pinv(X * sw) @ (sw[..., 0] * y)[..., None]
    return coef[:, 0, 0]


def _weighted_quadratic(phi, y, w, center, scale):
    """WLS fit of ``y ~ c0 + b x - a x^2`` with ``x = (phi - center)/scale``.

    Returns coefficients ``(c0, b, a)``, their covariance and the residual
    degrees of freedom.
    """
    x = (phi - center) / scale
    X = np.column_stack([np.ones_like(x), x, -x**2])
    pos = w > 0
    df = int(pos.sum()) - 3
    if df < 0 or np.unique(x[pos]).size < 3:
        raise McapError("fewer than three distinct profile points near the maximum")
    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    yw = y * sw
    coef, *_ = np.linalg.lstsq(Xw, yw, rcond=None)
    resid = yw - Xw @ coef
    xtx_inv = np.linalg.inv(Xw.T @ Xw)
    s2 = float(resid @ resid) / df if df > 0 else math.nan
    return coef, s2 * xtx_inv, df


def _crossings(grid, values, cutoff):
    """Intervals of ``grid`` where ``values >= cutoff``, endpoints linearly interpolated."""
    above = values >= cutoff
    runs = []
    start = None
    for i, a in enumerate(above):
        if a and start is None:
            start = i
        if not a and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(grid) - 1))

    def cross(i, j):
        # cutoff crossing between grid[i] and grid[j]
        vi, vj = values[i] - cutoff, values[j] - cutoff
        if vi == vj:
            return grid[i]
        return grid[i] + (grid[j] - grid[i]) * vi / (vi - vj)

    out = []
    for a, b in runs:
        lo = grid[a] if a == 0 else cross(a - 1, a)
        hi = grid[b] if b == len(grid) - 1 else cross(b, b + 1)
        out.append((float(lo), float(hi), a == 0, b == len(grid) - 1))
    return out


def mcap(phi, loglik=None, lam: float = 0.9, confidence: float = 0.95,
         n_grid: int = 1000) -> McapResult:
    """MCAP confidence interval from profile points.

    Parameters
    ----------
    phi : array_like or sequence of ProfilePoint
        Profiled parameter values (natural scale). Repeated values are allowed.
    loglik : array_like, optional
        Evaluated log-likelihoods; omit when ``phi`` holds ProfilePoints.
        Non-finite values are dropped with a warning.
    lam : float
        Fraction of points in each local neighborhood.
    confidence : float
        Nominal coverage.
    n_grid : int
        Points in the evaluation grid spanning the range of ``phi``.

    Returns
    -------
    McapResult

    Raises
    ------
    McapError
        Fewer than 5 distinct values, too small a neighborhood, or a fitted
        quadratic that is not concave.
    """
    if loglik is None:
        pts = list(phi)
        phi = np.array([p.phi for p in pts], dtype=float)
        loglik = np.array([p.loglik for p in pts], dtype=float)
    phi = np.asarray(phi, dtype=float).ravel()
    loglik = np.asarray(loglik, dtype=float).ravel()
    if phi.shape != loglik.shape:
        raise ValueError("phi and loglik must have the same length")
    if not 0 < lam <= 1:
        raise ValueError("lam must lie in (0, 1]")
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    notes = []
    keep = np.isfinite(loglik) & np.isfinite(phi)
    if not keep.all():
        notes.append(f"dropped {int((~keep).sum())} non-finite profile points")
    phi, loglik = phi[keep], loglik[keep]
    if np.unique(phi).size < 5:
        raise McapError("need at least 5 distinct profile values")
    if lam * phi.size < 3:
        raise McapError("lam * (number of points) must be at least 3")

    grid = np.linspace(phi.min(), phi.max(), n_grid)
    smoothed = loess_quadratic(phi, loglik, grid, lam)
    imax = int(np.argmax(smoothed))
    phi_hat = float(grid[imax])

    scale = float(np.ptp(phi))
    w = neighborhood_weights(phi, np.array([phi_hat]), lam)[0]
    coef, cov, df = _weighted_quadratic(phi, loglik, w, phi_hat, scale)
    c0, b, a = coef
    if a <= 0:
        raise McapError("profile not locally concave")
    if df == 0:
        raise McapError("no residual degrees of freedom for the Monte Carlo error")
    var_b, var_a, cov_ab = cov[1, 1], cov[2, 2], cov[1, 2]
    se_mc2 = (var_b - 2 * b / a * cov_ab + b**2 / a**2 * var_a) / (4 * a**2)
    se_mc2 = max(float(se_mc2), 0.0)
    se_stat2 = 1 / (2 * a)
    delta = float(chi2.ppf(confidence, 1) * (a * se_mc2 + 0.5))

    cutoff = smoothed[imax] - delta
    runs = _crossings(grid, smoothed, cutoff)
    multimodal = len(runs) > 1
    if multimodal:
        notes.append("smoothed profile crosses the cutoff more than twice; "
                     "reporting the outermost interval")
    lo, hi = runs[0][0], runs[-1][1]
    truncated = (runs[0][2], runs[-1][3])
    if any(truncated):
        notes.append("interval truncated by design range")
    for n in notes:
        warnings.warn(n, RuntimeWarning, stacklevel=2)

    # back to the natural scale of phi
    a_nat = a / scale**2
    b_nat = b / scale + 2 * a_nat * phi_hat
    c_nat = c0 - b / scale * phi_hat - a_nat * phi_hat**2
    return McapResult(grid, smoothed, phi_hat, math.sqrt(se_stat2) * scale,
                      math.sqrt(se_mc2) * scale, delta, (lo, hi), lam, confidence,
                      (float(c_nat), float(b_nat), float(a_nat)), truncated, multimodal,
                      int(phi.size), notes)


# ---------------------------------------------------------------------------
# profile construction


@dataclass(frozen=True)
class ProfileTask:
    """One profile point: a multi-start search with ``parameter`` fixed at ``phi``."""

    index: int
    parameter: str
    phi: float
    starts: tuple[ParameterSet, ...]
    box: Mapping[str, tuple[float, float]]
    cooling: CoolingSchedule
    cooling_u: CoolingSchedule | None = None

    @property
    def fixed(self) -> bool:
        return self.cooling.sigma0.get(self.parameter, 0.0) == 0.0


def profile_design(parameter: str, lo: float, hi: float, K: int, base: ParameterSet,
                   box: Mapping[str, tuple[float, float]], cooling: CoolingSchedule,
                   pool: Sequence[ParameterSet] = (),
                   cooling_u: CoolingSchedule | None = None) -> list[ProfileTask]:
    """``K`` evenly spaced profile tasks over ``[lo, hi]``.

    Each task fixes ``parameter`` (zero random-walk sd, degenerate start box)
    and starts from the members of ``pool`` with ``parameter`` overwritten;
    searches needing more starts draw them uniformly from ``box``.
    """
    if not lo < hi:
        raise ValueError("profile range needs lo < hi")
    if K < 5:
        raise ValueError("a profile needs at least 5 points")
    if parameter not in base.shared:
        raise ValueError(f"only shared parameters can be profiled; {parameter!r} is not shared")
    fixed = cooling.fix(parameter)
    fixed_u = cooling_u.fix(parameter) if cooling_u is not None else None
    tasks = []
    for k, phi in enumerate(np.linspace(lo, hi, K)):
        phi = float(phi)
        b = dict(box)
        b[parameter] = (phi, phi)
        starts = tuple(p.replace(shared={parameter: phi}) for p in pool)
        tasks.append(ProfileTask(k, parameter, phi, starts, b, fixed, fixed_u))
    return tasks
