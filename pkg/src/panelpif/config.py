"""Run configuration: a sectioned key-value file read with :mod:`configparser`.

Sections::

    [model]       id
    [data]        panel, covariates, t0           (or a [simulate] section)
    [simulate]    units, n_obs, t0, dt, seed
    [algorithm]   preset, Np_pf, Nrep_pf, Np_if, Nrep_if, Nmif, Np_if_u,
                  Nrep_pf_u, Nmif_u, lambda, cooling, cooling_u, horizon,
                  resampler, ivp_multiplier, marginal
    [run]         seed, workers
    [profile]     parameter, lo, hi, points, select (best or all replicate rows into MCAP)
    [param:NAME]  scope, value, transform, lower, upper, start_lo, start_hi,
                  sigma, sigma_u, fixed

Algorithmic values not given fall back to the preset column (the model id by
default); parameter settings not given fall back to the model's defaults.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .core import ParameterSet, parse_transform
from .models import DEFAULTS, MODELS
from .pif import CoolingSchedule, PerturbationPolicy


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


# Algorithmic settings per model. ``None`` marks a step the column does not use.
TABLE_S1 = {
    "gompertz": dict(Np_pf=4000, Nrep_pf=10, Np_if=2000, Nrep_if=13, Nmif=100,
                     Np_if_u=1000, Nrep_pf_u=4, Nmif_u=50, lam=0.9),
    "polio": dict(Np_pf=5000, Nrep_pf=10, Np_if=4000, Nrep_if=19, Nmif=236,
                  Np_if_u=6000, Nrep_pf_u=2, Nmif_u=118, lam=0.6),
    "polio_mcap": dict(Np_pf=5000, Nrep_pf=10, Np_if=4000, Nrep_if=27, Nmif=236,
                       Np_if_u=6000, Nrep_pf_u=3, Nmif_u=118, lam=0.9),
    "contacts": dict(Np_pf=4000, Nrep_pf=10, Np_if=4000, Nrep_if=13, Nmif=200,
                     Np_if_u=None, Nrep_pf_u=None, Nmif_u=None, lam=0.9),
}
COUNT_KEYS = ("Np_pf", "Nrep_pf", "Np_if", "Nrep_if", "Nmif", "Np_if_u", "Nrep_pf_u", "Nmif_u")


@dataclass(frozen=True)
class ParamSpec:
    scope: str
    value: float
    transform: str
    lower: float | None
    upper: float | None
    start: tuple[float, float] | None
    sigma: float
    sigma_u: float
    fixed: bool = False


@dataclass(frozen=True)
class SimulateSpec:
    units: int
    n_obs: int
    t0: float | None = None
    dt: float | None = None
    seed: int | None = None


@dataclass(frozen=True)
class ProfileSpec:
    parameter: str | None = None
    lo: float | None = None
    hi: float | None = None
    points: int = 10
    select: str = "best"


@dataclass
class RunConfig:
    model_id: str
    params: dict[str, ParamSpec]
    algorithm: dict[str, float | int | None]
    lam: float = 0.9
    cooling: float = 0.5
    cooling_u: float = 0.25
    horizon: float = 50.0
    resampler: str = "systematic"
    ivp_multiplier: float = 1.0
    marginal: bool = True
    seed: int = 0
    workers: int = 1
    panel: str | None = None
    covariates: str | None = None
    t0: float | None = None
    simulate: SimulateSpec | None = None
    profile: ProfileSpec = field(default_factory=ProfileSpec)
    text: str = ""
    base_dir: Path = Path(".")

    # -- derived objects ---------------------------------------------------

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    def base_parameters(self, n_units: int) -> ParameterSet:
        shared = {k: p.value for k, p in self.params.items() if p.scope == "shared"}
        unit = {k: p.value for k, p in self.params.items() if p.scope == "unit"}
        transforms = {k: parse_transform(p.transform, p.lower, p.upper) for k, p in self.params.items()}
        return ParameterSet(shared, tuple(dict(unit) for _ in range(n_units)), transforms)

    def box(self) -> dict[str, tuple[float, float]]:
        return {k: p.start for k, p in self.params.items() if p.start is not None and not p.fixed}

    def cooling_schedule(self) -> CoolingSchedule:
        return CoolingSchedule({k: 0.0 if p.fixed else p.sigma for k, p in self.params.items()},
                               self.cooling, self.horizon)

    def marginal_cooling(self) -> CoolingSchedule:
        return CoolingSchedule({k: 0.0 if p.fixed else p.sigma_u for k, p in self.params.items()},
                               self.cooling_u, self.horizon)

    def policy(self) -> PerturbationPolicy:
        return PerturbationPolicy(ivp_multiplier=self.ivp_multiplier)

    def use_marginal(self) -> bool:
        has_unit = any(p.scope == "unit" and not p.fixed and p.sigma_u > 0 for p in self.params.values())
        a = self.algorithm
        return (self.marginal and has_unit and a.get("Nmif_u") is not None
                and a.get("Np_if_u") is not None)

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


# ---------------------------------------------------------------------------
# parsing


def _get(section, key, conv, where, default=None):
    if section is None or key not in section:
        return default
    raw = section[key].strip()
    try:
        return conv(raw)
    except (ValueError, TypeError):
        raise ConfigError(f"{where}.{key}: cannot read {raw!r}") from None


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def _optional_int(text: str):
    return None if text.lower() in ("", "none", "-") else int(text)


def parse_config(text: str, base_dir: Path | str = ".") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep key case (Np_pf etc.)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config: {exc}") from None

    model = cp["model"] if cp.has_section("model") else None
    model_id = _get(model, "id", str, "model")
    if model_id is None:
        raise ConfigError("model.id: missing")
    if model_id not in MODELS:
        raise ConfigError(f"model.id: unknown model {model_id!r}")

    alg = cp["algorithm"] if cp.has_section("algorithm") else None
    preset = _get(alg, "preset", str, "algorithm", model_id)
    if preset not in TABLE_S1:
        raise ConfigError(f"algorithm.preset: unknown preset {preset!r}")
    table = dict(TABLE_S1[preset])
    algorithm = {}
    for k in COUNT_KEYS:
        v = _get(alg, k, _optional_int, "algorithm", table[k])
        if v is not None and v < 1:
            raise ConfigError(f"algorithm.{k}: must be at least 1")
        algorithm[k] = v
    lam = _get(alg, "lambda", float, "algorithm", table["lam"])
    if not 0 < lam <= 1:
        raise ConfigError("algorithm.lambda: must lie in (0, 1]")
    cooling = _get(alg, "cooling", float, "algorithm", 0.5)
    cooling_u = _get(alg, "cooling_u", float, "algorithm", 0.25)
    for k, v in (("cooling", cooling), ("cooling_u", cooling_u)):
        if not 0 < v <= 1:
            raise ConfigError(f"algorithm.{k}: must lie in (0, 1]")
    horizon = _get(alg, "horizon", float, "algorithm", 50.0)
    if horizon <= 0:
        raise ConfigError("algorithm.horizon: must be positive")
    resampler = _get(alg, "resampler", str, "algorithm", "systematic")
    if resampler not in ("systematic", "multinomial"):
        raise ConfigError("algorithm.resampler: systematic or multinomial")
    ivp = _get(alg, "ivp_multiplier", float, "algorithm", 1.0)
    if ivp < 0:
        raise ConfigError("algorithm.ivp_multiplier: must be nonnegative")
    marginal = _get(alg, "marginal", _bool, "algorithm", True)

    run = cp["run"] if cp.has_section("run") else None
    seed = _get(run, "seed", int, "run", 0)
    workers = _get(run, "workers", int, "run", 1)
    if workers < 1:
        raise ConfigError("run.workers: must be at least 1")

    params = {}
    for name, d in DEFAULTS[model_id].items():
        params[name] = ParamSpec(d.scope, d.value, d.transform, d.lower, d.upper, d.box,
                                 d.sigma, d.sigma_u)
    for sec in cp.sections():
        if not sec.startswith("param:"):
            continue
        name = sec[6:]
        where = sec
        if name not in params:
            raise ConfigError(f"{where}: {name!r} is not a parameter of {model_id}")
        s = cp[sec]
        old = params[name]
        scope = _get(s, "scope", str, where, old.scope)
        if scope not in ("shared", "unit"):
            raise ConfigError(f"{where}.scope: shared or unit")
        value = _get(s, "value", float, where, old.value)
        transform = _get(s, "transform", str, where, old.transform)
        lower = _get(s, "lower", float, where, old.lower)
        upper = _get(s, "upper", float, where, old.upper)
        try:
            parse_transform(transform, lower, upper)
        except ValueError as exc:
            raise ConfigError(f"{where}.transform: {exc}") from None
        start = old.start
        if "start_lo" in s or "start_hi" in s:
            lo = _get(s, "start_lo", float, where, None if start is None else start[0])
            hi = _get(s, "start_hi", float, where, None if start is None else start[1])
            if lo is None or hi is None:
                raise ConfigError(f"{where}: give both start_lo and start_hi")
            if hi < lo:
                raise ConfigError(f"{where}.start_hi: below start_lo")
            start = (lo, hi)
        sigma = _get(s, "sigma", float, where, old.sigma)
        sigma_u = _get(s, "sigma_u", float, where, old.sigma_u)
        if sigma < 0 or sigma_u < 0:
            raise ConfigError(f"{where}.sigma: must be nonnegative")
        fixed = _get(s, "fixed", _bool, where, False)
        params[name] = ParamSpec(scope, value, transform, lower, upper, start, sigma, sigma_u, fixed)

    data = cp["data"] if cp.has_section("data") else None
    panel = _get(data, "panel", str, "data")
    covariates = _get(data, "covariates", str, "data")
    t0 = _get(data, "t0", float, "data")

    simulate = None
    if cp.has_section("simulate"):
        s = cp["simulate"]
        units = _get(s, "units", int, "simulate")
        n_obs = _get(s, "n_obs", int, "simulate")
        if units is None or units < 1:
            raise ConfigError("simulate.units: must be at least 1")
        if n_obs is None or n_obs < 1:
            raise ConfigError("simulate.n_obs: must be at least 1")
        simulate = SimulateSpec(units, n_obs, _get(s, "t0", float, "simulate"),
                                _get(s, "dt", float, "simulate"), _get(s, "seed", int, "simulate"))

    prof = cp["profile"] if cp.has_section("profile") else None
    select = _get(prof, "select", str, "profile", "best")
    if select not in ("best", "all"):
        raise ConfigError("profile.select: best or all")
    profile = ProfileSpec(_get(prof, "parameter", str, "profile"), _get(prof, "lo", float, "profile"),
                          _get(prof, "hi", float, "profile"), _get(prof, "points", int, "profile", 10),
                          select)

    return RunConfig(model_id, params, algorithm, lam, cooling, cooling_u, horizon, resampler,
                     ivp, marginal, seed, workers, panel, covariates, t0, simulate, profile,
                     text, Path(base_dir))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    return parse_config(text, path.parent)
