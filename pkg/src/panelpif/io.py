"""CSV ingestion and emission for panels, covariates, parameters and results."""

from __future__ import annotations

import csv
import math
from collections import OrderedDict
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import CovariateTable, PanelData, ParameterSet, UnitData, UnitModel, parse_transform


class DataError(ValueError):
    """Malformed input file."""


def fmt(x) -> str:
    """Shortest round-trip text for numbers; other values via ``str``."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return "" if x is None else str(x)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [[c.strip() for c in r] for r in rows[1:]]
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise DataError(f"{path}: row {i + 2} has {len(r)} fields, header has {len(header)}")
    return header, body


def _float(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataError(f"{where}: not a number: {text!r}") from None


def _group_by_unit(path, header, body):
    if header[:2] != ["unit", "time"]:
        raise DataError(f"{path}: header must start with unit,time")
    groups: "OrderedDict[str, list]" = OrderedDict()
    for i, r in enumerate(body):
        groups.setdefault(r[0], []).append([_float(v, f"{path}:{i + 2}") for v in r[1:]])
    return {k: np.array(v, dtype=float) for k, v in groups.items()}


def read_covariates(path) -> dict[str, CovariateTable]:
    header, body = read_csv(path)
    cols = header[2:]
    out = {}
    for label, arr in _group_by_unit(path, header, body).items():
        out[label] = CovariateTable(arr[:, 0], {c: arr[:, k + 1] for k, c in enumerate(cols)})
    return out


def read_panel(path, model: UnitModel | None = None, covariates=None,
               t0: float | None = None) -> PanelData:
    """Read a ``unit,time,<obs...>`` panel CSV.

    Units keep their order of first appearance. ``covariates`` is a path or a
    mapping from unit label to table. The initial time defaults to one model
    time step before each unit's first observation.
    """
    header, body = read_csv(path)
    obs_names = tuple(header[2:])
    if not obs_names:
        raise DataError(f"{path}: no observation columns")
    if isinstance(covariates, (str, Path)):
        covariates = read_covariates(covariates)
    units = []
    for label, arr in _group_by_unit(path, header, body).items():
        times = arr[:, 0]
        if t0 is not None:
            u_t0 = float(t0)
        elif model is not None:
            u_t0 = model.default_t0(times)
        else:
            u_t0 = float(times[0])
        cov = None
        if covariates is not None:
            if label not in covariates:
                raise DataError(f"no covariates for unit {label!r}")
            cov = covariates[label]
        units.append(UnitData(label, u_t0, times, arr[:, 1:], obs_names, cov))
    return PanelData(tuple(units))


def write_panel(data: PanelData, path) -> None:
    header = ["unit", "time"] + list(data[0].obs_names)
    rows = []
    for unit in data:
        for t, y in zip(unit.times, unit.y):
            rows.append([unit.label, t, *y])
    write_csv(path, header, rows)


def write_covariates(data: PanelData, path) -> bool:
    """Write covariate tables; returns False (and writes nothing) if no unit has any."""
    tables = [(u.label, u.covariates) for u in data if u.covariates is not None]
    if not tables:
        return False
    cols = list(tables[0][1].columns)
    rows = []
    for label, cov in tables:
        for k, t in enumerate(cov.times):
            rows.append([label, t, *(cov.columns[c][k] for c in cols)])
    write_csv(path, ["unit", "time"] + cols, rows)
    return True


# ---------------------------------------------------------------------------
# parameter files


def read_params(path, labels: Sequence[str]) -> ParameterSet:
    """Read ``name,scope,value,transform[,lo,hi]`` lines.

    ``scope`` is ``shared`` or ``unit:<label>``. Every unit-specific name must
    be given for every label in ``labels``.
    """
    with open(path, newline="") as fh:
        rows = [[c.strip() for c in r] for r in csv.reader(fh)
                if r and r[0].strip() and not r[0].startswith("#")]
    if rows and rows[0][0] == "name":
        rows = rows[1:]
    shared, transforms = {}, {}
    specific = {lab: {} for lab in labels}
    for i, r in enumerate(rows):
        where = f"{path}:{i + 1}"
        if len(r) not in (4, 6):
            raise DataError(f"{where}: expected name,scope,value,transform[,lo,hi]")
        name, scope, value, tr = r[:4]
        lo, hi = (None, None) if len(r) == 4 else (_float(r[4], where), _float(r[5], where))
        try:
            t = parse_transform(tr, lo, hi)
        except ValueError as exc:
            raise DataError(f"{where}: {exc}") from None
        if name in transforms and transforms[name] != t:
            raise DataError(f"{where}: conflicting transforms for {name}")
        transforms[name] = t
        v = _float(value, where)
        if scope == "shared":
            shared[name] = v
        elif scope.startswith("unit:"):
            lab = scope[5:]
            if lab not in specific:
                raise DataError(f"{where}: unknown unit {lab!r}")
            specific[lab][name] = v
        else:
            raise DataError(f"{where}: scope must be shared or unit:<label>")
    try:
        return ParameterSet(shared, tuple(specific[lab] for lab in labels), transforms)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def param_rows(ps: ParameterSet, labels: Sequence[str]):
    def tail(name):
        t = ps.transforms[name]
        if t.kind == "logit":
            return [name, t.kind, t.lower, t.upper]
        return [name, t.kind]

    for name, v in ps.shared.items():
        n, *tr = tail(name)
        yield [n, "shared", v, *tr]
    for lab, block in zip(labels, ps.specific):
        for name, v in block.items():
            n, *tr = tail(name)
            yield [n, f"unit:{lab}", v, *tr]


def write_params(ps: ParameterSet, path, labels: Sequence[str]) -> None:
    """Write a parameter file readable by :func:`read_params` (no header)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in param_rows(ps, labels):
            w.writerow([fmt(v) for v in row])


def flat_columns(ps: ParameterSet, labels: Sequence[str]) -> list[str]:
    return list(ps.shared) + [f"{n}[{lab}]" for lab in labels for n in ps.specific_names]


def flat_values(ps: ParameterSet) -> list[float]:
    return list(ps.shared.values()) + [b[n] for b in ps.specific for n in ps.specific_names]


def read_profile_points(path) -> tuple[np.ndarray, np.ndarray]:
    """``phi,loglik`` columns of a profile CSV (other columns ignored)."""
    header, body = read_csv(path)
    try:
        i, j = header.index("phi"), header.index("loglik")
    except ValueError:
        raise DataError(f"{path}: need phi and loglik columns") from None
    phi = np.array([_float(r[i], str(path)) for r in body])
    ll = np.array([_float(r[j], str(path)) for r in body])
    return phi, ll
