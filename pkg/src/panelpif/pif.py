"""Panel iterated filtering.

A swarm of ``J`` parameter particles is carried through every unit and every
observation time. At each step the parameters governing the current unit
(shared parameters plus that unit's own block) receive Gaussian random-walk
perturbations on the estimation scale; each parameter particle is paired with
a latent-state particle, and the pairs are weighted by the measurement density
and resampled together. The swarm leaving one unit seeds the next; the swarm
leaving the last unit seeds the next iteration. Perturbations shrink
geometrically across iterations.

Only the current unit's latent states are held in memory, so storage is
``O(J)`` states plus the ``J x P`` parameter matrix.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .core import (PanelData, ParameterSet, Transform, check_finite_or_neginf,
                   from_estimation_scale, model_for_unit, to_estimation_scale)
from .likelihood import combine_product_of_means, jackknife_se, replicated_eval
from .smc import FilteringError, ParticleMonitor, get_resampler, normalize_log_weights
from .streams import (EVAL, MARGINAL, MARGINAL_EVAL, PIF_FILTER, PIF_PERTURB, SEARCH, START,
                      child_seed, make_rng)


# ---------------------------------------------------------------------------
# swarm layout


@dataclass(frozen=True)
class Layout:
    """Column layout of a flattened parameter vector.

    Shared parameters come first, then the unit-specific block of each unit in
    unit order.
    """

    shared: tuple[str, ...]
    specific: tuple[str, ...]
    n_units: int
    transforms: Mapping[str, Transform]

    @classmethod
    def of(cls, ps: ParameterSet) -> "Layout":
        return cls(tuple(ps.shared_names), tuple(ps.specific_names), ps.n_units, dict(ps.transforms))

    @property
    def width(self) -> int:
        return len(self.shared) + self.n_units * len(self.specific)

    def column(self, name: str, unit: int | None = None) -> int:
        if name in self.shared:
            return self.shared.index(name)
        if unit is None:
            raise KeyError(f"{name} is unit-specific; give a unit")
        return len(self.shared) + unit * len(self.specific) + self.specific.index(name)

    def shared_columns(self) -> np.ndarray:
        return np.arange(len(self.shared))

    def specific_columns(self, u: int) -> np.ndarray:
        start = len(self.shared) + u * len(self.specific)
        return np.arange(start, start + len(self.specific))

    def unit_columns(self, u: int) -> tuple[list[str], np.ndarray]:
        names = list(self.shared) + list(self.specific)
        return names, np.concatenate([self.shared_columns(), self.specific_columns(u)])

    def column_labels(self) -> list[tuple[str, int | None]]:
        labels = [(n, None) for n in self.shared]
        for u in range(self.n_units):
            labels.extend((n, u) for n in self.specific)
        return labels

    def natural(self, values: np.ndarray) -> np.ndarray:
        """Map estimation-scale values (``(..., P)``) to the natural scale."""
        out = np.empty_like(values, dtype=float)
        for c, (name, _) in enumerate(self.column_labels()):
            out[..., c] = self.transforms[name].inverse(values[..., c])
        return out

    def unit_params(self, theta: np.ndarray, u: int) -> dict[str, np.ndarray]:
        """Natural-scale parameters of unit ``u`` from a parameter-major ``(P, J)`` matrix."""
        names, cols = self.unit_columns(u)
        return {n: self.transforms[n].inverse(theta[c]) for n, c in zip(names, cols)}

    def to_parameter_set(self, vector: np.ndarray, estimation_scale: bool = True) -> ParameterSet:
        A, B = len(self.shared), len(self.specific)
        shared = dict(zip(self.shared, vector[:A]))
        specific = tuple(dict(zip(self.specific, vector[A + u * B:A + (u + 1) * B]))
                         for u in range(self.n_units))
        return ParameterSet(shared, specific, self.transforms, estimation_scale)


@dataclass
class Swarm:
    """``J`` parameter particles on the estimation scale, stored as a ``J x P`` matrix."""

    values: np.ndarray
    layout: Layout
    m: int = 0

    @property
    def J(self) -> int:
        return self.values.shape[0]

    @classmethod
    def constant(cls, ps: ParameterSet, J: int) -> "Swarm":
        est = to_estimation_scale(ps)
        return cls(np.tile(est.vector(), (J, 1)), Layout.of(ps))

    @classmethod
    def from_members(cls, members: Sequence[ParameterSet]) -> "Swarm":
        layout = Layout.of(members[0])
        rows = []
        for ps in members:
            if Layout.of(ps).column_labels() != layout.column_labels():
                raise ValueError("swarm members must share names and units")
            rows.append(to_estimation_scale(ps).vector())
        return cls(np.array(rows), layout)

    def member(self, j: int) -> ParameterSet:
        return self.layout.to_parameter_set(self.values[j])

    def members(self) -> list[ParameterSet]:
        return [self.member(j) for j in range(self.J)]

    def mean(self) -> ParameterSet:
        """Swarm mean on the estimation scale, returned on the natural scale."""
        return from_estimation_scale(self.layout.to_parameter_set(self.values.mean(axis=0)))


# ---------------------------------------------------------------------------
# perturbations


@dataclass(frozen=True)
class CoolingSchedule:
    """Random-walk sds ``sigma0 * factor**(m / horizon)`` per parameter name.

    Names missing from ``sigma0`` have sd zero and are never moved.
    """

    sigma0: Mapping[str, float]
    factor: float = 0.5
    horizon: float = 50.0

    def __post_init__(self):
        if not 0 < self.factor <= 1:
            raise ValueError("cooling factor must lie in (0, 1]")
        if self.horizon <= 0:
            raise ValueError("cooling horizon must be positive")
        for k, v in self.sigma0.items():
            if v < 0:
                raise ValueError(f"sigma0[{k}] must be nonnegative")

    def scale(self, m: float) -> float:
        return self.factor ** (m / self.horizon)

    def sigma(self, m: float) -> dict[str, float]:
        f = self.scale(m)
        return {k: v * f for k, v in self.sigma0.items()}

    def sd_vector(self, layout: Layout, m: float) -> np.ndarray:
        f = self.scale(m)
        return np.array([self.sigma0.get(name, 0.0) * f for name, _ in layout.column_labels()])

    def fix(self, *names: str) -> "CoolingSchedule":
        s = dict(self.sigma0)
        for n in names:
            s[n] = 0.0
        return replace(self, sigma0=s)


@dataclass(frozen=True)
class PerturbationPolicy:
    """Which coordinates move while a unit is filtered.

    Only shared parameters (if ``shared``) and the current unit's own block (if
    ``specific``) are ever perturbed; other units' blocks are left untouched.
    ``ivp_multiplier`` scales the sd of the perturbation applied at the head of
    each unit relative to the per-observation perturbations.
    """

    shared: bool = True
    specific: bool = True
    ivp_multiplier: float = 1.0

    def columns(self, layout: Layout, u: int) -> np.ndarray:
        parts = []
        if self.shared:
            parts.append(layout.shared_columns())
        if self.specific:
            parts.append(layout.specific_columns(u))
        return np.concatenate(parts) if parts else np.arange(0)


def _perturb_inplace(theta: np.ndarray, cols: np.ndarray, sd: np.ndarray, rng) -> None:
    # theta is parameter-major: (P, J)
    if cols.size:
        theta[cols] += rng.standard_normal((cols.size, theta.shape[1])) * sd[:, None]


def perturb(swarm: Swarm, sd: np.ndarray | Mapping[str, float], policy: PerturbationPolicy,
            u: int, rng, stage: str = "step") -> Swarm:
    """Return a perturbed copy of ``swarm`` for filtering unit ``u``.

    ``sd`` is a per-column vector or a per-name mapping. At ``stage="initial"``
    the sds are multiplied by ``policy.ivp_multiplier``. Coordinates outside the
    policy, or with sd zero, are returned bit-identical.
    """
    layout = swarm.layout
    if isinstance(sd, Mapping):
        sd = np.array([sd.get(name, 0.0) for name, _ in layout.column_labels()])
    sd = np.asarray(sd, dtype=float)
    if np.any(sd < 0):
        raise ValueError("perturbation sds must be nonnegative")
    if stage == "initial":
        sd = sd * policy.ivp_multiplier
    cols = policy.columns(layout, u)
    cols = cols[sd[cols] > 0]
    theta = swarm.values.T.copy()
    _perturb_inplace(theta, cols, sd[cols], rng)
    return Swarm(theta.T.copy(), layout, swarm.m)


# ---------------------------------------------------------------------------
# the algorithm


@dataclass
class PifResult:
    final: Swarm
    mean_trace: np.ndarray      # (M, P) natural-scale swarm means after each iteration
    loglik_trace: np.ndarray    # (M,) perturbed-model log-likelihood per iteration
    sigma_trace: np.ndarray     # (M, P) random-walk sds used in each iteration
    warnings: list[str] = field(default_factory=list)
    peak_particles: int | None = None

    @property
    def estimate(self) -> ParameterSet:
        return self.final.mean()

    @property
    def layout(self) -> Layout:
        return self.final.layout


def pif_run(models, data: PanelData, swarm0: Swarm, M: int, cooling: CoolingSchedule,
            policy: PerturbationPolicy | None = None, seed: int = 0,
            resampler: str = "systematic", on_failure: str = "neg_inf",
            monitor: ParticleMonitor | None = None) -> PifResult:
    """Run ``M`` iterations of panel iterated filtering from ``swarm0``.

    Iteration ``m`` (1-based) uses random-walk sds ``cooling.sd_vector(m)``.
    Unit ``u`` in iteration ``m`` draws its filtering randomness from stream
    ``(seed, PIF_FILTER, m, u)`` and its perturbations from
    ``(seed, PIF_PERTURB, m, u)``.

    With ``on_failure="neg_inf"`` a step at which every particle has zero
    weight resamples uniformly and is recorded in ``warnings``; with
    ``"error"`` it raises :class:`FilteringError`.
    """
    policy = policy or PerturbationPolicy()
    J = swarm0.J
    if J < 2:
        raise ValueError("panel iterated filtering needs J >= 2")
    if M < 0:
        raise ValueError("M must be nonnegative")
    if on_failure not in ("error", "neg_inf"):
        raise ValueError(f"unknown failure policy {on_failure!r}")
    layout = swarm0.layout
    if layout.n_units != len(data):
        raise ValueError(f"swarm covers {layout.n_units} units, data has {len(data)}")
    resample = get_resampler(resampler)
    P = layout.width
    mean_trace = np.empty((M, P))
    loglik_trace = np.empty(M)
    sigma_trace = np.empty((M, P))
    notes: list[str] = []
    track = monitor.track if monitor is not None else (lambda a: a)

    theta = np.ascontiguousarray(swarm0.values.T)   # (P, J)
    if theta is swarm0.values.T:
        theta = theta.copy()
    for m in range(1, M + 1):
        sd = cooling.sd_vector(layout, m)
        sigma_trace[m - 1] = sd
        total = 0.0
        for u, unit in enumerate(data.units):
            model = model_for_unit(models, u)
            rng_f = make_rng(seed, PIF_FILTER, m, u)
            rng_p = make_rng(seed, PIF_PERTURB, m, u)
            cols = policy.columns(layout, u)
            cols = cols[sd[cols] > 0]
            sd_cols = sd[cols]
            cov = unit.covariates

            _perturb_inplace(theta, cols, sd_cols * policy.ivp_multiplier, rng_p)
            params = layout.unit_params(theta, u)
            x = track(model.rinit(params, J, unit.t0, cov, rng_f))
            t = unit.t0
            for n in range(unit.n_obs):
                _perturb_inplace(theta, cols, sd_cols, rng_p)
                params = layout.unit_params(theta, u)
                tn = float(unit.times[n])
                x = track(model.rprocess(x, t, tn, params, cov, rng_f))
                t = tn
                logw = check_finite_or_neginf(model.dmeasure(unit.y[n], x, params, tn, cov))
                cond, w = normalize_log_weights(logw)
                if w is None:
                    if on_failure == "error":
                        raise FilteringError(n, unit.label, m)
                    notes.append(f"iteration {m}, unit {unit.label}, observation {n}: "
                                 "all weights zero; resampled uniformly")
                    w = np.ones(J)
                total += cond
                idx = resample(w, rng_f)
                theta = np.take(theta, idx, axis=1)
                x = track(x[idx])
            del x
        loglik_trace[m - 1] = total
        mean_trace[m - 1] = layout.natural(theta.mean(axis=1))

    for msg in notes[:5]:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return PifResult(Swarm(theta.T.copy(), layout, swarm0.m + M), mean_trace, loglik_trace, sigma_trace,
                     notes, monitor.peak if monitor is not None else None)


# ---------------------------------------------------------------------------
# marginal refinement


@dataclass(frozen=True)
class MarginalSettings:
    """Per-unit refinement: ``M`` iterations with ``J`` particles and ``cooling``.

    When ``eval_reps > 0`` the unit log-likelihood is evaluated before and
    after refinement with ``eval_reps`` filters of ``eval_J`` particles and the
    better unit block is kept.
    """

    M: int
    J: int
    cooling: CoolingSchedule
    eval_J: int = 1000
    eval_reps: int = 0


def _refine_unit(models, data: PanelData, fitted: ParameterSet, u: int,
                 settings: MarginalSettings, seed: int, resampler: str):
    model = model_for_unit(models, u)
    unit_data = PanelData((data[u],))
    sub = ParameterSet(fitted.shared, (fitted.specific[u],), fitted.transforms)
    sigma0 = {n: settings.cooling.sigma0.get(n, 0.0) for n in fitted.specific_names}
    cooling = replace(settings.cooling, sigma0=sigma0)
    policy = PerturbationPolicy(shared=False, specific=True)
    res = pif_run(model, unit_data, Swarm.constant(sub, settings.J), settings.M, cooling, policy,
                  seed=child_seed(seed, MARGINAL, u), resampler=resampler)
    new_block = dict(res.estimate.specific[0])
    if settings.eval_reps > 0:
        eval_seed = child_seed(seed, MARGINAL_EVAL, u)
        old = replicated_eval(model, unit_data, sub, settings.eval_J, settings.eval_reps,
                              eval_seed, resampler)
        new = replicated_eval(model, unit_data, sub.replace(specific=[new_block]),
                              settings.eval_J, settings.eval_reps, eval_seed, resampler)
        if combine_product_of_means(new) < combine_product_of_means(old):
            new_block = dict(fitted.specific[u])
    return new_block, res.warnings


def marginal_refine(models, data: PanelData, fitted: ParameterSet, settings: MarginalSettings,
                    seed: int = 0, units: Sequence[int] | None = None,
                    resampler: str = "systematic", executor=None) -> ParameterSet:
    """Refine each unit's block separately with the shared values held fixed.

    Unit ``u``'s refinement is a single-unit iterated filtering run that
    perturbs only that unit's block, so units are independent and may run in
    any order or in parallel.
    """
    if not fitted.specific_names:
        return fitted
    units = range(fitted.n_units) if units is None else list(units)
    args = [(models, data, fitted, u, settings, seed, resampler) for u in units]
    mapper = executor.map if executor is not None else map
    results = list(mapper(_refine_star, args))
    specific = [dict(s) for s in fitted.specific]
    for u, (block, _) in zip(units, results):
        specific[u] = block
    return fitted.replace(specific=specific)


def _refine_star(args):
    return _refine_unit(*args)


# ---------------------------------------------------------------------------
# multi-start searches


@dataclass
class SearchResult:
    replicate: int
    start: ParameterSet
    estimate: ParameterSet | None
    loglik: float
    se: float
    joint_estimate: ParameterSet | None = None
    pif: PifResult | None = None
    error: str | None = None


def draw_start(base: ParameterSet, box: Mapping[str, tuple[float, float]], rng) -> ParameterSet:
    """Uniform draw on the natural-scale box; names outside the box keep their base values."""
    shared = {}
    specific = [dict() for _ in range(base.n_units)]
    for name in base.names:
        if name not in box:
            continue
        lo, hi = box[name]
        if hi < lo:
            raise ValueError(f"start box for {name} has lo > hi")
        if name in base.shared:
            shared[name] = lo + (hi - lo) * rng.random()
        else:
            for u in range(base.n_units):
                specific[u][name] = lo + (hi - lo) * rng.random()
    return base.replace(shared=shared, specific=specific)


@dataclass(frozen=True)
class SearchSettings:
    M: int
    J: int
    cooling: CoolingSchedule
    policy: PerturbationPolicy = PerturbationPolicy()
    marginal: MarginalSettings | None = None
    eval_J: int = 1000
    eval_reps: int = 10
    resampler: str = "systematic"
    keep_pif: bool = False


def run_search_task(args) -> SearchResult:
    """Run one search replicate built by :func:`search_tasks`."""
    models, data, start, settings, seed, r = args
    try:
        pif_seed = child_seed(seed, SEARCH, r)
        res = pif_run(models, data, Swarm.constant(start, settings.J), settings.M,
                      settings.cooling, settings.policy, seed=pif_seed,
                      resampler=settings.resampler)
        joint = res.estimate
        est = joint
        if settings.marginal is not None and joint.specific_names:
            est = marginal_refine(models, data, joint, settings.marginal,
                                  seed=child_seed(seed, MARGINAL, r), resampler=settings.resampler)
        ev = replicated_eval(models, data, est, settings.eval_J, settings.eval_reps,
                             child_seed(seed, EVAL), settings.resampler)
        ll = combine_product_of_means(ev)
        return SearchResult(r, start, est, ll, jackknife_se(ev), joint,
                            res if settings.keep_pif else None)
    except (FilteringError, ValueError, FloatingPointError) as exc:
        return SearchResult(r, start, None, -math.inf, math.nan, error=f"{type(exc).__name__}: {exc}")


def search_tasks(models, data: PanelData, base: ParameterSet,
                 box: Mapping[str, tuple[float, float]], R: int, settings: SearchSettings,
                 seed: int = 0, starts: Sequence[ParameterSet] | None = None) -> list[tuple]:
    """Argument tuples for :func:`run_search_task`, one per replicate.

    Starting points are ``starts`` (if given) followed by uniform draws on
    ``box``; replicate ``r`` draws from stream ``(seed, START, r)``.
    """
    if R < 1:
        raise ValueError("need at least one replicate")
    starts = list(starts or [])
    tasks = []
    for r in range(R):
        start = starts[r] if r < len(starts) else draw_start(base, box, make_rng(seed, START, r))
        tasks.append((models, data, start, settings, seed, r))
    return tasks


def rank_results(results: Sequence[SearchResult]) -> list[SearchResult]:
    """Sort by evaluated log-likelihood, best first; ties and failures by replicate index."""
    def key(s):
        return (-s.loglik if not math.isnan(s.loglik) else math.inf, s.replicate)
    return sorted(results, key=key)


def multi_start(models, data: PanelData, base: ParameterSet,
                box: Mapping[str, tuple[float, float]], R: int, settings: SearchSettings,
                seed: int = 0, starts: Sequence[ParameterSet] | None = None,
                executor=None) -> list[SearchResult]:
    """Independent searches from ``R`` starting points, ranked by evaluated log-likelihood.

    Each endpoint is re-evaluated with the unperturbed model. A failed
    replicate is reported with ``loglik=-inf`` and does not stop the others.
    """
    tasks = search_tasks(models, data, base, box, R, settings, seed, starts)
    mapper = executor.map if executor is not None else map
    return rank_results(list(mapper(run_search_task, tasks)))
