"""Named parameter vectors and box-shaped parameter spaces.

Values carry a unit string as metadata; units are compared by name only,
there is no conversion machinery.  Default spaces for data generation and
for sensitivity analysis are built from the baseline tables in
:mod:`heartrom.circulation` and :mod:`heartrom.refventricle`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "ParamDim",
    "ParamSpace",
    "ParamVector",
    "training_space",
    "gsa_space",
    "PARAM_UNITS",
    "THETA_M_NAMES",
    "THETA_C_NAMES",
]


# Units for every parameter this package knows about, keyed by name.
PARAM_UNITS = {
    "a_xb": "MPa",
    "sigma_f": "mm/s",
    "alpha": "deg",
    "c_pass": "kPa",
    "v_tot": "mL",
    "e_act_la": "mmHg/mL",
    "e_act_ra": "mmHg/mL",
    "e_act_rv": "mmHg/mL",
    "e_pass_la": "mmHg/mL",
    "e_pass_ra": "mmHg/mL",
    "e_pass_rv": "mmHg/mL",
    "t_contr_la": "s",
    "t_contr_ra": "s",
    "t_contr_rv": "s",
    "t_rel_la": "s",
    "t_rel_ra": "s",
    "t_rel_rv": "s",
    "v0_la": "mL",
    "v0_ra": "mL",
    "v0_rv": "mL",
    "t_av_l": "s",
    "t_av_r": "s",
    "r_min": "mmHg.s/mL",
    "r_max": "mmHg.s/mL",
    "r_ar_sys": "mmHg.s/mL",
    "r_ven_sys": "mmHg.s/mL",
    "r_ar_pul": "mmHg.s/mL",
    "r_ven_pul": "mmHg.s/mL",
    "c_ar_sys": "mL/mmHg",
    "c_ven_sys": "mL/mmHg",
    "c_ar_pul": "mL/mmHg",
    "c_ven_pul": "mL/mmHg",
    "l_ar_sys": "mmHg.s2/mL",
    "l_ven_sys": "mmHg.s2/mL",
    "l_ar_pul": "mmHg.s2/mL",
    "l_ven_pul": "mmHg.s2/mL",
}

THETA_M_NAMES = ("a_xb", "sigma_f", "alpha", "c_pass")

# Circulation parameters grouped by network region (LA, RA, RV, systemic,
# pulmonary, valves, total volume); this ordering is reused by the
# sensitivity-analysis outputs.
THETA_C_NAMES = (
    "e_act_la", "e_pass_la", "t_contr_la", "t_rel_la", "v0_la", "t_av_l",
    "e_act_ra", "e_pass_ra", "t_contr_ra", "t_rel_ra", "v0_ra", "t_av_r",
    "e_act_rv", "e_pass_rv", "t_contr_rv", "t_rel_rv", "v0_rv",
    "r_ar_sys", "r_ven_sys", "c_ar_sys", "c_ven_sys", "l_ar_sys", "l_ven_sys",
    "r_ar_pul", "r_ven_pul", "c_ar_pul", "c_ven_pul", "l_ar_pul", "l_ven_pul",
    "r_min", "r_max",
    "v_tot",
)


@dataclass(frozen=True)
class ParamDim:
    """One axis of a parameter box."""

    name: str
    lower: float
    upper: float
    unit: str
    baseline: float

    def __post_init__(self):
        if not np.isfinite([self.lower, self.upper, self.baseline]).all():
            raise ValueError(f"dimension '{self.name}': non-finite bounds")
        if not self.lower < self.upper:
            raise ValueError(
                f"dimension '{self.name}': lower ({self.lower}) must be "
                f"strictly below upper ({self.upper})"
            )
        if not (self.lower <= self.baseline <= self.upper):
            raise ValueError(
                f"dimension '{self.name}': baseline {self.baseline} outside "
                f"[{self.lower}, {self.upper}]"
            )


@dataclass(frozen=True)
class ParamSpace:
    """Ordered box of named parameter ranges."""

    dims: tuple[ParamDim, ...]
    space_id: str = "space"

    def __post_init__(self):
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise ValueError("duplicate dimension names in parameter space")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.dims)

    @property
    def lower(self) -> np.ndarray:
        return np.array([d.lower for d in self.dims])

    @property
    def upper(self) -> np.ndarray:
        return np.array([d.upper for d in self.dims])

    @property
    def baseline(self) -> np.ndarray:
        return np.array([d.baseline for d in self.dims])

    @property
    def ndim(self) -> int:
        return len(self.dims)

    def contains(self, values: np.ndarray, atol: float = 0.0) -> bool:
        v = np.asarray(values, dtype=float)
        return bool(
            np.all(v >= self.lower - atol) and np.all(v <= self.upper + atol)
        )

    def subset(self, names: Sequence[str]) -> "ParamSpace":
        by_name = {d.name: d for d in self.dims}
        missing = [n for n in names if n not in by_name]
        if missing:
            raise KeyError(f"unknown dimensions: {missing}")
        return ParamSpace(
            dims=tuple(by_name[n] for n in names),
            space_id=self.space_id,
        )

    def vector(self, values: Mapping[str, float] | Sequence[float] | None = None) -> "ParamVector":
        """Build a bound ParamVector; defaults to the baseline point."""
        if values is None:
            vals = self.baseline
        elif isinstance(values, Mapping):
            vals = np.array([values[d.name] for d in self.dims], dtype=float)
        else:
            vals = np.asarray(values, dtype=float)
            if vals.shape != (self.ndim,):
                raise ValueError(
                    f"expected {self.ndim} values, got shape {vals.shape}"
                )
        entries = tuple(
            (d.name, float(v), d.unit) for d, v in zip(self.dims, vals)
        )
        return ParamVector(entries=entries, space_id=self.space_id, _space=self)

    def to_json_dict(self) -> dict:
        return {
            "space_id": self.space_id,
            "dims": [
                {
                    "name": d.name,
                    "lower": d.lower,
                    "upper": d.upper,
                    "unit": d.unit,
                    "baseline": d.baseline,
                }
                for d in self.dims
            ],
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ParamSpace":
        dims = tuple(
            ParamDim(
                name=d["name"],
                lower=float(d["lower"]),
                upper=float(d["upper"]),
                unit=str(d["unit"]),
                baseline=float(d["baseline"]),
            )
            for d in obj["dims"]
        )
        return cls(dims=dims, space_id=obj.get("space_id", "space"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "ParamSpace":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ParamVector:
    """Ordered list of (name, value, unit) entries, optionally bound to a space."""

    entries: tuple[tuple[str, float, str], ...]
    space_id: str = ""
    _space: ParamSpace | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        names = [e[0] for e in self.entries]
        if len(set(names)) != len(names):
            raise ValueError("duplicate names in parameter vector")
        if self._space is not None:
            if self.names != self._space.names:
                raise ValueError("vector entries do not match bound space dims")
            for (name, value, unit), dim in zip(self.entries, self._space.dims):
                if unit != dim.unit:
                    raise ValueError(
                        f"unit mismatch for '{name}': vector carries '{unit}', "
                        f"space declares '{dim.unit}'"
                    )
                if not (dim.lower <= value <= dim.upper):
                    raise ValueError(
                        f"value {value} for '{name}' outside "
                        f"[{dim.lower}, {dim.upper}]"
                    )

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e[0] for e in self.entries)

    @property
    def values(self) -> np.ndarray:
        return np.array([e[1] for e in self.entries])

    def as_dict(self) -> dict[str, float]:
        return {name: value for name, value, _ in self.entries}

    def __getitem__(self, name: str) -> float:
        for n, v, _ in self.entries:
            if n == name:
                return v
        raise KeyError(name)

    def to_json_dict(self) -> dict:
        return {
            "space_id": self.space_id,
            "entries": [
                {"name": n, "value": v, "unit": u} for n, v, u in self.entries
            ],
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ParamVector":
        entries = tuple(
            (str(e["name"]), float(e["value"]), str(e["unit"]))
            for e in obj["entries"]
        )
        return cls(entries=entries, space_id=obj.get("space_id", ""))

    @classmethod
    def from_dict(cls, values: Mapping[str, float], space_id: str = "") -> "ParamVector":
        entries = tuple(
            (name, float(value), PARAM_UNITS.get(name, ""))
            for name, value in values.items()
        )
        return cls(entries=entries, space_id=space_id)


def _baseline_values() -> dict[str, float]:
    # Imported lazily: circulation/refventricle depend on this module for units.
    from .circulation import CircParams
    from .refventricle import RefVentricleParams

    out = dict(RefVentricleParams().as_dict())
    out.update(CircParams().as_dict())
    return out


def training_space(names: Iterable[str] | None = None, space_id: str = "training") -> ParamSpace:
    """Default sampling box for generating training data.

    Ranges are 50%-200% of baseline, except the electrical conductivity and
    the passive stiffness (50%-150%), the fiber angle (40-80 degrees) and the
    atrioventricular delays (0.08-0.24 s).  ``names`` selects a subset of the
    thirteen dimensions varied by default (the four ventricle parameters plus
    the nine most influential circulation parameters).
    """
    base = _baseline_values()
    default_names = (
        "a_xb", "sigma_f", "alpha", "c_pass",
        "v_tot", "e_pass_la", "t_av_l", "e_pass_ra", "t_av_r",
        "e_act_rv", "e_pass_rv", "r_ar_sys", "r_ven_sys",
    )
    if names is None:
        names = default_names
    dims = []
    for name in names:
        b = base[name]
        if name == "alpha":
            lo, hi = 40.0, 80.0
        elif name in ("t_av_l", "t_av_r"):
            lo, hi = 0.08, 0.24
        elif name in ("sigma_f", "c_pass"):
            lo, hi = 0.5 * b, 1.5 * b
        else:
            lo, hi = 0.5 * b, 2.0 * b
        dims.append(ParamDim(name, lo, hi, PARAM_UNITS[name], b))
    return ParamSpace(dims=tuple(dims), space_id=space_id)


def gsa_space(names: Iterable[str] | None = None, space_id: str = "gsa") -> ParamSpace:
    """Default sampling box for sensitivity analysis.

    Ranges are 80%-120% of baseline, except the total heart blood volume
    (193-593 mL) and the atrioventricular delays (0.04-0.28 s).  By default
    all 36 parameters are included, grouped by region: LA, ventricle model,
    RA, RV, systemic, pulmonary, valves, total volume.
    """
    base = _baseline_values()
    if names is None:
        names = (
            "e_act_la", "e_pass_la", "t_contr_la", "t_rel_la", "v0_la", "t_av_l",
            "a_xb", "sigma_f", "alpha", "c_pass",
            "e_act_ra", "e_pass_ra", "t_contr_ra", "t_rel_ra", "v0_ra", "t_av_r",
            "e_act_rv", "e_pass_rv", "t_contr_rv", "t_rel_rv", "v0_rv",
            "r_ar_sys", "r_ven_sys", "c_ar_sys", "c_ven_sys", "l_ar_sys", "l_ven_sys",
            "r_ar_pul", "r_ven_pul", "c_ar_pul", "c_ven_pul", "l_ar_pul", "l_ven_pul",
            "r_min", "r_max",
            "v_tot",
        )
    dims = []
    for name in names:
        b = base[name]
        if name == "v_tot":
            lo, hi = 193.0, 593.0
        elif name in ("t_av_l", "t_av_r"):
            lo, hi = 0.04, 0.28
        else:
            lo, hi = 0.8 * b, 1.2 * b
        dims.append(ParamDim(name, lo, hi, PARAM_UNITS[name], b))
    return ParamSpace(dims=tuple(dims), space_id=space_id)
