"""Pressure/volume transients and their on-disk CSV + JSON format.

A transient is a uniformly sampled (p_LV, V_LV) time series together with
the heartbeat period and the parameter vectors it was generated from.
Datasets are directories of ``record_NNNN.csv`` files (columns
``t,p_lv,v_lv``) with one JSON metadata sidecar each and a ``dataset.json``
manifest.  Floats are printed with 17 significant digits so that the
round-trip is bit-faithful.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .params import ParamVector

__all__ = ["Transient", "Dataset", "TransientParseError",
           "read_transients", "write_transients"]

_COLUMNS = ("t", "p_lv", "v_lv")


class TransientParseError(ValueError):
    """Malformed transient file; carries the offending file and line."""

    def __init__(self, message: str, path: str | Path = "", line: int | None = None):
        loc = str(path)
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {message}" if loc else message)
        self.path = str(path)
        self.line = line


@dataclass(frozen=True)
class Transient:
    """Uniformly sampled (p_LV, V_LV) series over an integer number of beats."""

    t0: float
    dt: float
    t_hb: float
    p_lv: np.ndarray
    v_lv: np.ndarray
    params_m: ParamVector
    params_c: ParamVector
    split: str | None = None  # train | validation | test

    def __post_init__(self):
        p = np.ascontiguousarray(self.p_lv, dtype=float)
        v = np.ascontiguousarray(self.v_lv, dtype=float)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_hb <= 0:
            raise ValueError("T_HB must be positive")
        if p.ndim != 1 or p.size == 0 or p.shape != v.shape:
            raise ValueError("p_lv and v_lv must be equal-length non-empty 1d arrays")
        if not (np.isfinite(p).all() and np.isfinite(v).all()):
            raise ValueError("non-finite samples in transient")
        if not (v > 0).all():
            raise ValueError("V_LV must be strictly positive")
        duration = (p.size - 1) * self.dt
        beats = duration / self.t_hb
        if abs(duration - round(beats) * self.t_hb) > 1e-9:
            raise ValueError(
                f"duration {duration} s is not an integer multiple of "
                f"T_HB = {self.t_hb} s"
            )
        object.__setattr__(self, "p_lv", p)
        object.__setattr__(self, "v_lv", v)
        p.setflags(write=False)
        v.setflags(write=False)

    def __len__(self) -> int:
        return self.p_lv.size

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self))

    @property
    def n_beats(self) -> int:
        return int(round((len(self) - 1) * self.dt / self.t_hb))


@dataclass(frozen=True)
class Dataset:
    """A list of transients sharing dt and T_HB."""

    records: tuple[Transient, ...]

    def __post_init__(self):
        if self.records:
            dt, t_hb = self.records[0].dt, self.records[0].t_hb
            for i, r in enumerate(self.records):
                if abs(r.dt - dt) > 1e-15 or abs(r.t_hb - t_hb) > 1e-15:
                    raise ValueError(
                        f"record {i} has dt/T_HB differing from record 0"
                    )

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def dt(self) -> float:
        return self.records[0].dt

    @property
    def t_hb(self) -> float:
        return self.records[0].t_hb

    def subset(self, indices) -> "Dataset":
        return Dataset(records=tuple(self.records[i] for i in indices))


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _write_record(rec: Transient, csv_path: Path) -> None:
    lines = [",".join(_COLUMNS)]
    t = rec.t
    for i in range(len(rec)):
        lines.append(f"{_fmt(t[i])},{_fmt(rec.p_lv[i])},{_fmt(rec.v_lv[i])}")
    csv_path.write_text("\n".join(lines) + "\n")
    meta = {
        "t0": rec.t0,
        "dt": rec.dt,
        "t_hb": rec.t_hb,
        "split": rec.split,
        "params_m": rec.params_m.to_json_dict(),
        "params_c": rec.params_c.to_json_dict(),
        "units": {"t": "s", "p_lv": "mmHg", "v_lv": "mL"},
    }
    csv_path.with_suffix(".json").write_text(json.dumps(meta, indent=1))


def _read_record(csv_path: Path) -> Transient:
    meta_path = csv_path.with_suffix(".json")
    if not meta_path.exists():
        raise TransientParseError("missing metadata sidecar", meta_path)
    meta = json.loads(meta_path.read_text())
    text = csv_path.read_text().splitlines()
    if not text:
        raise TransientParseError("empty file", csv_path, 1)
    header = [c.strip() for c in text[0].split(",")]
    for col in _COLUMNS:
        if col not in header:
            raise TransientParseError(f"missing column '{col}'", csv_path, 1)
    idx = {c: header.index(c) for c in _COLUMNS}
    t_list, p_list, v_list = [], [], []
    for ln, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != len(header):
            raise TransientParseError(
                f"expected {len(header)} fields, got {len(fields)}", csv_path, ln
            )
        try:
            t_list.append(float(fields[idx["t"]]))
            p_list.append(float(fields[idx["p_lv"]]))
            v_list.append(float(fields[idx["v_lv"]]))
        except ValueError as exc:
            raise TransientParseError(str(exc), csv_path, ln) from None
    t = np.array(t_list)
    t0, dt = float(meta["t0"]), float(meta["dt"])
    expected = t0 + dt * np.arange(t.size)
    bad = np.nonzero(np.abs(t - expected) > 1e-9)[0]
    if bad.size:
        raise TransientParseError(
            f"non-uniform time grid (dt = {dt})", csv_path, int(bad[0]) + 2
        )
    return Transient(
        t0=t0,
        dt=dt,
        t_hb=float(meta["t_hb"]),
        p_lv=np.array(p_list),
        v_lv=np.array(v_list),
        params_m=ParamVector.from_json_dict(meta["params_m"]),
        params_c=ParamVector.from_json_dict(meta["params_c"]),
        split=meta.get("split"),
    )


def write_transients(ds: Dataset, path: str | Path) -> None:
    """Write a dataset to a directory, one CSV + JSON sidecar per record."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for i, rec in enumerate(ds.records):
        _write_record(rec, root / f"record_{i:04d}.csv")
    manifest = {
        "n_records": len(ds),
        "dt": ds.dt if len(ds) else None,
        "t_hb": ds.t_hb if len(ds) else None,
        "splits": [r.split for r in ds.records],
    }
    (root / "dataset.json").write_text(json.dumps(manifest, indent=1))


def read_transients(path: str | Path) -> Dataset:
    """Read a dataset directory written by :func:`write_transients`."""
    root = Path(path)
    manifest_path = root / "dataset.json"
    if not manifest_path.exists():
        raise TransientParseError("missing dataset.json manifest", manifest_path)
    manifest = json.loads(manifest_path.read_text())
    n = int(manifest["n_records"])
    records = []
    for i in range(n):
        csv_path = root / f"record_{i:04d}.csv"
        if not csv_path.exists():
            raise TransientParseError("missing record file", csv_path)
        records.append(_read_record(csv_path))
    return Dataset(records=tuple(records))
