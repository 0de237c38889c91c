"""Built-in panel models, their default parameter tables, and a panel simulator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import (CovariateTable, PanelData, ParameterSet, UnitData, UnitModel,
                    parse_transform, unit_parameters)
from ..streams import SIMULATE, make_rng
from .contacts import ContactsModel
from .gompertz import GompertzModel, gompertz_exact_loglik
from .polio import PolioModel, synthetic_covariates

MODELS = {
    "gompertz": GompertzModel,
    "polio": PolioModel,
    "contacts": ContactsModel,
}


def get_model(model_id: str) -> UnitModel:
    try:
        return MODELS[model_id]()
    except KeyError:
        raise ValueError(f"unknown model {model_id!r}; choose from {sorted(MODELS)}") from None


@dataclass(frozen=True)
class ParamDefault:
    """Default value and search settings for one model parameter.

    ``box`` is the start hyper-rectangle on the natural scale (None: not
    searched by default); ``sigma`` and ``sigma_u`` are random-walk sds on the
    estimation scale for joint and marginal searches.
    """

    scope: str
    value: float
    transform: str = "identity"
    lower: float | None = None
    upper: float | None = None
    box: tuple[float, float] | None = None
    sigma: float = 0.0
    sigma_u: float = 0.0


_G = ParamDefault
DEFAULTS: dict[str, dict[str, ParamDefault]] = {
    "gompertz": {
        "K": _G("shared", 1.0, "log"),
        "r": _G("shared", 0.1, "log", box=(0.05, 0.20), sigma=0.00125),
        "sigma_G": _G("shared", 0.1, "log", box=(0.05, 0.20), sigma=0.02),
        "tau": _G("unit", 0.1, "log", box=(0.05, 0.20), sigma=0.05, sigma_u=0.05),
        "X_0": _G("shared", 1.0, "log"),
    },
    "polio": {
        "rho": _G("shared", 0.02, "logit", box=(0.01, 0.03), sigma=0.02),
        "sigma_dem": _G("shared", 0.1, "log", box=(0.0, 0.5), sigma=0.02),
        "psi": _G("shared", 0.05, "log", box=(0.0, 0.1), sigma=0.02),
        "tau": _G("shared", 0.01, "log", box=(0.0, 0.1), sigma=0.02),
        "b1": _G("unit", 3.0, box=(-2.0, 8.0), sigma=0.02, sigma_u=0.02),
        "b2": _G("unit", 2.5, box=(-2.0, 8.0), sigma=0.02, sigma_u=0.02),
        "b3": _G("unit", 3.5, box=(-2.0, 8.0), sigma=0.02, sigma_u=0.02),
        "b4": _G("unit", 6.0, box=(1.0, 11.0), sigma=0.02, sigma_u=0.02),
        "b5": _G("unit", 5.0, box=(-2.0, 8.0), sigma=0.02, sigma_u=0.02),
        "b6": _G("unit", 3.0, box=(-2.0, 8.0), sigma=0.02, sigma_u=0.02),
        "sigma_env": _G("unit", 0.1, "log", box=(0.0, 1.0), sigma=0.02, sigma_u=0.02),
        "SO_0": _G("unit", 0.05, "logit", box=(0.0, 1.0), sigma=0.1, sigma_u=0.1),
        "IO_0": _G("unit", 2e-5, "logit", box=(0.0, 4e-4), sigma=0.2, sigma_u=0.2),
    },
    "contacts": {
        "mu_X": _G("shared", 1.5, "log", box=(0.8, 3.0), sigma=0.01),
        "sigma_X": _G("shared", 3.0, "log", box=(1.4, 5.0), sigma=0.01),
        "mu_D": _G("shared", 3.0, "log", box=(1.8, 7.0), sigma=0.01),
        "sigma_D": _G("shared", 4.0, "log", box=(2.0, 8.5), sigma=0.01),
        "mu_R": _G("shared", 1.0, "log", box=(0.2, 3.0), sigma=0.01),
        "alpha": _G("shared", 0.9, "logit", box=(0.7, 0.99), sigma=0.01),
    },
}

# first observation time and spacing of simulated series
TIME_GRID = {
    "gompertz": (0.0, 1.0),
    "polio": (1932 + 4 / 12, 1 / 12),
    "contacts": (0.0, 1.0),
}


def default_parameters(model_id: str, n_units: int) -> ParameterSet:
    table = DEFAULTS[model_id]
    shared = {k: d.value for k, d in table.items() if d.scope == "shared"}
    unit = {k: d.value for k, d in table.items() if d.scope == "unit"}
    transforms = {k: parse_transform(d.transform, d.lower, d.upper) for k, d in table.items()}
    return ParameterSet(shared, tuple(dict(unit) for _ in range(n_units)), transforms)


def simulate_panel(model_id: str, params: ParameterSet, n_obs: int, seed: int,
                   t0: float | None = None, dt: float | None = None,
                   covariates: list[CovariateTable] | None = None,
                   labels: list[str] | None = None) -> PanelData:
    """Draw a synthetic panel from a built-in model.

    One unit is simulated per unit block in ``params``, each with ``n_obs``
    observations at ``t0 + dt, t0 + 2 dt, ...``. Polio units get synthetic
    birth and population covariates unless ``covariates`` is supplied.
    """
    model = get_model(model_id)
    grid_t0, grid_dt = TIME_GRID[model_id]
    t0 = grid_t0 if t0 is None else float(t0)
    dt = grid_dt if dt is None else float(dt)
    if n_obs < 1:
        raise ValueError("n_obs must be at least 1")
    U = params.n_units
    labels = labels or [f"u{u + 1}" for u in range(U)]
    times = t0 + dt * np.arange(1, n_obs + 1)
    units = []
    for u in range(U):
        p = unit_parameters(params, u)
        cov = None
        if covariates is not None:
            cov = covariates[u]
        elif model.covariate_names:
            cov = synthetic_covariates(n_obs, t0, make_rng(seed, SIMULATE, u, 1))
        rng = make_rng(seed, SIMULATE, u, 0)
        x = model.rinit(p, 1, t0, cov, rng)
        t = t0
        ys = []
        for tn in times:
            x = model.rprocess(x, t, tn, p, cov, rng)
            t = tn
            ys.append(model.rmeasure(x, p, tn, cov, rng)[0])
        units.append(UnitData(labels[u], t0, times, np.array(ys), model.obs_names, cov))
    return PanelData(tuple(units))


__all__ = [
    "ContactsModel", "GompertzModel", "PolioModel", "MODELS", "DEFAULTS", "ParamDefault",
    "default_parameters", "get_model", "gompertz_exact_loglik", "simulate_panel",
]
