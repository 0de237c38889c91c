"""Domain types for panel POMP models.

A panel model is a collection of independent unit-level partially observed
Markov processes linked by shared parameters. This module holds the parameter
container (shared values plus one block of unit-specific values per unit),
parameter transforms, the panel data containers, and the plug-and-play model
interface that the filtering and search code consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from collections.abc import Mapping
from typing import Sequence

import numpy as np
from scipy.special import expit


class DomainError(ValueError):
    """A parameter value lies on or outside its transform domain."""


# ---------------------------------------------------------------------------
# transforms


@dataclass(frozen=True)
class Transform:
    """Map between the natural scale and an unconstrained estimation scale.

    ``kind`` is one of ``"identity"``, ``"log"`` or ``"logit"``. A logit
    transform maps the open interval ``(lower, upper)`` onto the real line.
    """

    kind: str = "identity"
    lower: float = 0.0
    upper: float = 1.0

    def __post_init__(self):
        if self.kind not in ("identity", "log", "logit"):
            raise ValueError(f"unknown transform {self.kind!r}")
        if self.kind == "logit" and not self.lower < self.upper:
            raise ValueError("logit transform needs lower < upper")

    def inside(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "log":
            return x > 0
        if self.kind == "logit":
            return (x > self.lower) & (x < self.upper)
        return np.isfinite(x)

    def forward(self, x, name: str = "parameter"):
        x = np.asarray(x, dtype=float)
        if not np.all(self.inside(x)):
            raise DomainError(f"{name}={x!r} is outside the domain of its {self.describe()} transform")
        if self.kind == "log":
            out = np.log(x)
        elif self.kind == "logit":
            out = np.log((x - self.lower) / (self.upper - x))
        else:
            out = x.copy()
        return out if out.ndim else float(out)

    def inverse(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "log":
            out = np.exp(z)
        elif self.kind == "logit":
            out = self.lower + (self.upper - self.lower) * expit(z)
        else:
            out = z.copy()
        return out if out.ndim else float(out)

    def describe(self) -> str:
        if self.kind == "logit":
            return f"logit({self.lower:g},{self.upper:g})"
        return self.kind


IDENTITY = Transform()
LOG = Transform("log")
LOGIT = Transform("logit")


def parse_transform(text: str, lower: float | None = None, upper: float | None = None) -> Transform:
    text = (text or "identity").strip().lower()
    if text in ("", "none", "-", "identity"):
        return IDENTITY
    if text == "log":
        return LOG
    if text == "logit":
        return Transform("logit", 0.0 if lower is None else float(lower), 1.0 if upper is None else float(upper))
    raise ValueError(f"unknown transform {text!r}")


# ---------------------------------------------------------------------------
# parameters


class FrozenMap(Mapping):
    """Read-only, picklable mapping."""

    __slots__ = ("_d",)

    def __init__(self, d=()):
        self._d = dict(d)

    def __getitem__(self, k):
        return self._d[k]

    def __iter__(self):
        return iter(self._d)

    def __len__(self):
        return len(self._d)

    def __repr__(self):
        return repr(self._d)

    def __getstate__(self):
        return self._d

    def __setstate__(self, d):
        self._d = d


def _freeze(d: Mapping[str, float]) -> Mapping[str, float]:
    return FrozenMap({str(k): float(v) for k, v in d.items()})


@dataclass(frozen=True)
class ParameterSet:
    """Shared values plus one block of unit-specific values per unit.

    Parameters
    ----------
    shared : mapping
        Values common to all units.
    specific : sequence of mappings
        One mapping per unit; every unit has the same names. May be a
        sequence of empty mappings when the model has no unit-specific
        parameters.
    transforms : mapping
        Transform per parameter name; names without an entry use identity.
    estimation_scale : bool
        Whether the stored values are on the estimation scale.
    """

    shared: Mapping[str, float]
    specific: tuple[Mapping[str, float], ...]
    transforms: Mapping[str, Transform] = field(default_factory=dict)
    estimation_scale: bool = False

    def __post_init__(self):
        object.__setattr__(self, "shared", _freeze(self.shared))
        specific = tuple(_freeze(s) for s in self.specific)
        if not specific:
            raise ValueError("a ParameterSet needs at least one unit")
        object.__setattr__(self, "specific", specific)
        names = set(specific[0])
        for u, s in enumerate(specific):
            if set(s) != names:
                raise ValueError(f"unit {u} has unit-specific names {sorted(s)}, expected {sorted(names)}")
        clash = names & set(self.shared)
        if clash:
            raise ValueError(f"parameters {sorted(clash)} appear as both shared and unit-specific")
        transforms = dict(self.transforms)
        for name in self.names:
            transforms.setdefault(name, IDENTITY)
        object.__setattr__(self, "transforms", FrozenMap(transforms))

    @property
    def n_units(self) -> int:
        return len(self.specific)

    @property
    def shared_names(self) -> list[str]:
        return list(self.shared)

    @property
    def specific_names(self) -> list[str]:
        return list(self.specific[0])

    @property
    def names(self) -> list[str]:
        return self.shared_names + self.specific_names

    def scope(self, name: str) -> str:
        if name in self.shared:
            return "shared"
        if name in self.specific[0]:
            return "specific"
        raise KeyError(name)

    def replace(self, shared: Mapping[str, float] | None = None,
                specific: Sequence[Mapping[str, float]] | None = None) -> "ParameterSet":
        """Return a copy with some values replaced (names must already exist)."""
        new_shared = dict(self.shared)
        if shared:
            for k, v in shared.items():
                if k not in new_shared:
                    raise KeyError(f"{k} is not a shared parameter")
                new_shared[k] = v
        new_specific = [dict(s) for s in self.specific]
        if specific is not None:
            if len(specific) != self.n_units:
                raise ValueError("specific must have one entry per unit")
            for u, block in enumerate(specific):
                for k, v in block.items():
                    if k not in new_specific[u]:
                        raise KeyError(f"{k} is not a unit-specific parameter")
                    new_specific[u][k] = v
        return ParameterSet(new_shared, tuple(new_specific), self.transforms, self.estimation_scale)

    def set_value(self, name: str, value: float) -> "ParameterSet":
        """Set ``name`` to ``value`` (for every unit if unit-specific)."""
        if name in self.shared:
            return self.replace(shared={name: value})
        return self.replace(specific=[{name: value}] * self.n_units)

    def vector(self) -> np.ndarray:
        """Flattened values: shared block, then unit-specific blocks in unit order."""
        vals = list(self.shared.values())
        for s in self.specific:
            vals.extend(s.values())
        return np.array(vals, dtype=float)


def unit_parameters(ps: ParameterSet, u: int) -> dict[str, float]:
    """Values governing unit ``u`` (0-based): shared values then unit ``u``'s block."""
    if not 0 <= u < ps.n_units:
        raise IndexError(f"unit index {u} out of range for {ps.n_units} units")
    out = dict(ps.shared)
    out.update(ps.specific[u])
    return out


def to_estimation_scale(ps: ParameterSet) -> ParameterSet:
    if ps.estimation_scale:
        return ps
    tf = ps.transforms
    shared = {k: tf[k].forward(v, k) for k, v in ps.shared.items()}
    specific = tuple({k: tf[k].forward(v, f"{k}[unit {u}]") for k, v in s.items()}
                     for u, s in enumerate(ps.specific))
    return ParameterSet(shared, specific, tf, True)


def from_estimation_scale(ps: ParameterSet) -> ParameterSet:
    if not ps.estimation_scale:
        return ps
    tf = ps.transforms
    shared = {k: tf[k].inverse(v) for k, v in ps.shared.items()}
    specific = tuple({k: tf[k].inverse(v) for k, v in s.items()} for s in ps.specific)
    return ParameterSet(shared, specific, tf, False)


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class CovariateTable:
    """Time-indexed real-valued covariate columns for one unit."""

    times: np.ndarray
    columns: Mapping[str, np.ndarray]

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        cols = {}
        for k, v in self.columns.items():
            v = np.asarray(v, dtype=float)
            if v.shape != times.shape:
                raise ValueError(f"covariate {k!r} has {v.size} values for {times.size} times")
            cols[k] = v
        object.__setattr__(self, "columns", FrozenMap(cols))

    @property
    def start(self) -> float:
        return float(self.times[0])

    @property
    def end(self) -> float:
        return float(self.times[-1])

    def interpolate(self, name: str, t: float) -> float:
        """Linear interpolation of column ``name`` at time ``t`` (no extrapolation)."""
        if t < self.times[0] - 1e-9 or t > self.times[-1] + 1e-9:
            raise ValueError(f"covariate {name!r} requested at t={t}, table covers "
                             f"[{self.times[0]}, {self.times[-1]}]")
        return float(np.interp(t, self.times, self.columns[name]))


@dataclass(frozen=True)
class UnitData:
    """One unit's observation series.

    ``y`` has shape ``(N, d)``: one observation vector per observation time.
    """

    label: str
    t0: float
    times: np.ndarray
    y: np.ndarray
    obs_names: tuple[str, ...] = ("y",)
    covariates: CovariateTable | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        y = np.asarray(self.y, dtype=float)
        if y.ndim == 1:
            y = y.reshape(-1, 1)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "obs_names", tuple(self.obs_names))
        object.__setattr__(self, "t0", float(self.t0))
        if y.shape[0] != times.size:
            raise ValueError(f"unit {self.label}: {y.shape[0]} observations for {times.size} times")
        if y.shape[1] != len(self.obs_names):
            raise ValueError(f"unit {self.label}: observation width {y.shape[1]} but names {self.obs_names}")

    @property
    def n_obs(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class PanelData:
    units: tuple[UnitData, ...]

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        labels = [u.label for u in self.units]
        if len(set(labels)) != len(labels):
            raise ValueError("unit labels must be unique")

    def __len__(self) -> int:
        return len(self.units)

    def __iter__(self):
        return iter(self.units)

    def __getitem__(self, i) -> UnitData:
        return self.units[i]

    @property
    def labels(self) -> list[str]:
        return [u.label for u in self.units]

    def subset(self, indices: Sequence[int]) -> "PanelData":
        return PanelData(tuple(self.units[i] for i in indices))


# ---------------------------------------------------------------------------
# model interface


class UnitModel:
    """Plug-and-play model for a single panel unit.

    Implementations are vectorized over particles. ``params`` maps each
    parameter name to either a float or an array with one value per particle;
    latent states are arrays of shape ``(J, n_states)``. All randomness must
    come from the ``rng`` argument.
    """

    name: str = "model"
    param_names: tuple[str, ...] = ()
    state_names: tuple[str, ...] = ()
    obs_names: tuple[str, ...] = ("y",)
    covariate_names: tuple[str, ...] = ()
    # covariate history required before t0 (model time units)
    covariate_lead: float = 0.0
    time_step: float = 1.0

    def rinit(self, params, J: int, t0: float, covariates: CovariateTable | None,
              rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def rprocess(self, x: np.ndarray, t_from: float, t_to: float, params,
                 covariates: CovariateTable | None, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def dmeasure(self, y: np.ndarray, x: np.ndarray, params, t: float,
                 covariates: CovariateTable | None) -> np.ndarray:
        raise NotImplementedError

    def rmeasure(self, x: np.ndarray, params, t: float, covariates: CovariateTable | None,
                 rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def default_t0(self, times: np.ndarray) -> float:
        return float(times[0]) - self.time_step

    def n_steps(self, t_from: float, t_to: float) -> int:
        steps = (t_to - t_from) / self.time_step
        k = int(round(steps))
        if k < 0 or abs(steps - k) > 1e-6:
            raise ValueError(f"interval [{t_from}, {t_to}] is not a whole number of "
                             f"{self.time_step}-steps")
        return k

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


def model_for_unit(models, u: int) -> UnitModel:
    if isinstance(models, UnitModel):
        return models
    return models[u]


# ---------------------------------------------------------------------------
# validation


@dataclass
class Violation:
    unit: str
    kind: str
    detail: str

    def __str__(self) -> str:
        return f"unit {self.unit}: {self.kind}: {self.detail}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def kinds(self) -> list[str]:
        return [v.kind for v in self.violations]


def validate_panel(data: PanelData, models=None) -> ValidationReport:
    """Check panel data invariants, returning every violation found."""
    report = ValidationReport()
    add = report.violations.append
    for u, unit in enumerate(data.units):
        model = model_for_unit(models, u) if models is not None else None
        if unit.n_obs < 1:
            add(Violation(unit.label, "empty unit", "no observations"))
            continue
        diffs = np.diff(unit.times)
        if np.any(diffs <= 0):
            bad = int(np.argmax(diffs <= 0))
            add(Violation(unit.label, "non-increasing times",
                          f"t[{bad}]={unit.times[bad]} is not < t[{bad + 1}]={unit.times[bad + 1]}"))
        if unit.t0 > unit.times[0]:
            add(Violation(unit.label, "initial time", f"t0={unit.t0} exceeds first time {unit.times[0]}"))
        if not np.all(np.isfinite(unit.y)):
            add(Violation(unit.label, "missing observations", "non-finite observation values"))
        if model is not None and model.obs_names and unit.y.shape[1] != len(model.obs_names):
            add(Violation(unit.label, "observation width",
                          f"model {model.name} expects {len(model.obs_names)} columns"))
        cov = unit.covariates
        needs = model.covariate_names if model is not None else ()
        if cov is None:
            if needs:
                add(Violation(unit.label, "covariate coverage", "no covariate table supplied"))
            continue
        missing = [c for c in needs if c not in cov.columns]
        if missing:
            add(Violation(unit.label, "covariate coverage", f"missing columns {missing}"))
        lead = model.covariate_lead if model is not None else 0.0
        if np.any(np.diff(cov.times) <= 0):
            add(Violation(unit.label, "covariate times", "covariate times not strictly increasing"))
        if cov.start > unit.t0 - lead + 1e-9:
            add(Violation(unit.label, "covariate coverage",
                          f"table starts at {cov.start}, needs {unit.t0 - lead}"))
        if cov.end < unit.times[-1] - 1e-9:
            add(Violation(unit.label, "covariate coverage",
                          f"table ends at {cov.end}, before last observation {unit.times[-1]}"))
    return report


def check_finite_or_neginf(logd: np.ndarray) -> np.ndarray:
    """Replace NaN log-densities by -inf so callers never see NaN."""
    logd = np.asarray(logd, dtype=float)
    if np.isnan(logd).any():
        logd = np.where(np.isnan(logd), -math.inf, logd)
    return logd
