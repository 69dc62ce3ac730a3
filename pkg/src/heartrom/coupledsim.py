"""Coupling of a ventricle model (reference or surrogate) to a closure
(closed-loop circulation or windkessel), with limit-cycle detection, QoI
extraction, dataset generation and surrogate-vs-reference error tables.

The two submodels exchange only the LV pressure and volume: at every
explicit Euler step the pressure is found by a scalar root solve so that
the circulation-side and ventricle-side LV volumes agree after the step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path
from typing import Mapping

import numpy as np

from . import _kernels as K
from .annrom import RomModel
from .circulation import (CircParams, WindkesselParams, initial_circ_state,
                          total_blood_volume)
from .params import ParamVector
from .refventricle import (RefVentricleParams, V_UNSTRESSED,
                           pressure_from_volume)
from .transients import Dataset, Transient

__all__ = [
    "CoupledConfig",
    "RefVentricle",
    "RomVentricle",
    "ClosedLoop",
    "Windkessel",
    "CoupledState",
    "CoupledResult",
    "QoiVector",
    "QOI_NAMES",
    "LV_QOI_NAMES",
    "CL_COLUMNS",
    "WK_COLUMNS",
    "initial_coupled_state",
    "coupled_step",
    "coupling_residual",
    "consistency_error",
    "run_fixed_beats",
    "run_to_limit_cycle",
    "extract_qois",
    "generate_dataset",
    "compare_rom_vs_ref",
    "lv_errors_vs_record",
    "ErrorTable",
    "CouplingError",
]

CL_COLUMNS = (
    "t", "v_la", "v_lv", "v_ra", "v_rv",
    "p_la", "p_lv", "p_ra", "p_rv",
    "p_ar_sys", "p_ven_sys", "p_ar_pul", "p_ven_pul",
    "q_ar_sys", "q_ven_sys", "q_ar_pul", "q_ven_pul",
)
WK_COLUMNS = ("t", "v_lv", "p_lv", "phase")

QOI_NAMES = (
    "v_la_min", "v_la_max", "p_la_min", "p_la_max",
    "v_lv_min", "v_lv_max", "p_lv_min", "p_lv_max", "sv_lv",
    "v_ra_min", "v_ra_max", "p_ra_min", "p_ra_max",
    "v_rv_min", "v_rv_max", "p_rv_min", "p_rv_max", "sv_rv",
    "p_ar_sys_min", "p_ar_sys_max",
)
LV_QOI_NAMES = ("p_lv_min", "p_lv_max", "v_lv_min", "v_lv_max", "sv_lv")

_REF_FIELDS = frozenset(f.name for f in dc_fields(RefVentricleParams))
_CIRC_FIELDS = frozenset(f.name for f in dc_fields(CircParams))


class CouplingError(RuntimeError):
    """Coupled step failed (pressure bracket or root-find non-convergence)."""

    def __init__(self, message: str, step: int | None = None,
                 beat: int | None = None):
        loc = []
        if beat is not None:
            loc.append(f"beat {beat}")
        if step is not None:
            loc.append(f"step {step}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.step = step
        self.beat = beat


@dataclass(frozen=True)
class CoupledConfig:
    """Time-stepping, limit-cycle and pressure-solver settings."""

    t_hb: float = 0.8
    dt_ref: float = 1e-4
    dt_rom: float = 5e-3
    dt_out_ref: float = 1e-3
    dt_out_rom: float = 5e-3
    max_beats: int = 30
    min_beats: int = 5
    cycle_tol_p: float = 0.8   # mmHg
    cycle_tol_v: float = 0.8   # mL
    vol_tol: float = 1e-8      # mL, pressure-solver tolerance
    max_pressure_iters: int = 50
    p_lo: float = -20.0        # mmHg, pressure bracket
    p_hi: float = 400.0
    v_lv_init: float = 135.0   # mL, initial LV volume for data generation
    p_lv_init: float = 25.0    # mmHg, first-step solver start for surrogates
    valve_smoothing: float = 0.0

    def __post_init__(self):
        for name in ("t_hb", "dt_ref", "dt_rom", "dt_out_ref", "dt_out_rom",
                     "cycle_tol_p", "cycle_tol_v", "vol_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.min_beats < 1 or self.max_beats < self.min_beats:
            raise ValueError("need max_beats >= min_beats >= 1")
        for dt, out in ((self.dt_ref, self.dt_out_ref),
                        (self.dt_rom, self.dt_out_rom)):
            if abs(out / dt - round(out / dt)) > 1e-9:
                raise ValueError("output step must be a multiple of dt")
            spb = self.t_hb / dt
            if abs(spb - round(spb)) > 1e-9:
                raise ValueError("t_hb must be a multiple of dt")

    def dt_for(self, ventricle) -> float:
        return self.dt_ref if isinstance(ventricle, RefVentricle) else self.dt_rom

    def dt_out_for(self, ventricle) -> float:
        return self.dt_out_ref if isinstance(ventricle, RefVentricle) else self.dt_out_rom


@dataclass(frozen=True)
class RefVentricle:
    params: RefVentricleParams


@dataclass(frozen=True)
class RomVentricle:
    model: RomModel
    theta_m: np.ndarray  # values ordered per model.param_names

    def __post_init__(self):
        th = np.ascontiguousarray(self.theta_m, dtype=float)
        if th.shape != (self.model.arch.n_params,):
            raise ValueError(
                f"theta_m must have {self.model.arch.n_params} entries"
            )
        object.__setattr__(self, "theta_m", th)


@dataclass(frozen=True)
class ClosedLoop:
    params: CircParams


@dataclass(frozen=True)
class Windkessel:
    params: WindkesselParams


@dataclass
class CoupledState:
    """Mutable state of a coupled simulation between steps."""

    t: float
    p_lv: float
    circ: np.ndarray | None = None   # closed loop only
    s: float | None = None           # reference ventricle only
    z: np.ndarray | None = None      # surrogate only
    phase: int = K.PHASE_FILLING     # windkessel only
    v_lv: float = 0.0
    v_prev: float = 0.0
    v_hold: float = 0.0

    def copy(self) -> "CoupledState":
        return CoupledState(
            t=self.t, p_lv=self.p_lv,
            circ=None if self.circ is None else self.circ.copy(),
            s=self.s, z=None if self.z is None else self.z.copy(),
            phase=self.phase, v_lv=self.v_lv, v_prev=self.v_prev,
            v_hold=self.v_hold)


@dataclass(frozen=True)
class CoupledResult:
    """Recorded multi-channel trajectory on the uniform output grid."""

    columns: tuple[str, ...]
    data: np.ndarray
    dt_out: float
    t_hb: float
    n_beats: int
    converged: bool = True

    def __post_init__(self):
        d = np.ascontiguousarray(self.data, dtype=float)
        object.__setattr__(self, "data", d)

    @property
    def samples_per_beat(self) -> int:
        return int(round(self.t_hb / self.dt_out))

    def channel(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    def last_beat(self) -> "CoupledResult":
        spb = self.samples_per_beat
        return CoupledResult(columns=self.columns, data=self.data[-(spb + 1):],
                             dt_out=self.dt_out, t_hb=self.t_hb, n_beats=1,
                             converged=self.converged)

    def to_csv(self, path: str | Path) -> None:
        lines = [",".join(self.columns)]
        for row in self.data:
            lines.append(",".join(f"{x:.17g}" for x in row))
        Path(path).write_text("\n".join(lines) + "\n")

    def to_transient(self, params_m: ParamVector, params_c: ParamVector,
                     split: str | None = None) -> Transient:
        return Transient(
            t0=float(self.data[0, 0]), dt=self.dt_out, t_hb=self.t_hb,
            p_lv=self.channel("p_lv").copy(), v_lv=self.channel("v_lv").copy(),
            params_m=params_m, params_c=params_c, split=split)


@dataclass(frozen=True)
class QoiVector:
    """Per-beat biomarkers; entries are None for channels the closure lacks."""

    values: dict[str, float | None]

    def __post_init__(self):
        unknown = set(self.values) - set(QOI_NAMES)
        if unknown:
            raise ValueError(f"unknown QoI names: {sorted(unknown)}")
        vals = {n: self.values.get(n) for n in QOI_NAMES}
        for prefix in ("v_la", "p_la", "v_lv", "p_lv", "v_ra", "p_ra",
                       "v_rv", "p_rv", "p_ar_sys"):
            lo, hi = vals.get(prefix + "_min"), vals.get(prefix + "_max")
            if lo is not None and hi is not None and hi < lo - 1e-12:
                raise ValueError(f"{prefix}: max below min")
        object.__setattr__(self, "values", vals)

    def __getitem__(self, name: str) -> float | None:
        return self.values[name]

    def as_array(self, names=QOI_NAMES) -> np.ndarray:
        return np.array([np.nan if self.values[n] is None else self.values[n]
                         for n in names])

    def to_json_dict(self) -> dict:
        return dict(self.values)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=1))


# ------------------------------------------------------------- state handling

def _rom_kernel_args(model: RomModel, theta_m: np.ndarray):
    W1, b1, Wh, bh, W2, b2 = model.unpack()
    xtheta = model.normalized_theta(theta_m)
    return (model.in_center, model.in_halfwidth, model.out_scale, xtheta,
            W1, b1, Wh, bh, W2, b2, model.arch.layers)


def initial_coupled_state(ventricle, closure, cfg: CoupledConfig) -> CoupledState:
    """Standard initial state.

    The LV starts at a fixed volume (config for the reference model, the
    trained v0 for the surrogate); for the closed loop the remaining
    chambers share what is left of v_tot and the initial pressure makes the
    ventricle law consistent; for the windkessel closure the cycle starts in
    the filling phase at the filling-entry pressure.
    """
    if isinstance(ventricle, RefVentricle):
        v_lv = cfg.v_lv_init
        s0 = 0.0
        if isinstance(closure, Windkessel):
            p0 = closure.params.p_filling
            v0, st = K.ref_volume(p0, s0, ventricle.params.pack())
            if st != 0:
                raise CouplingError("initial volume solve failed")
            return CoupledState(t=0.0, p_lv=p0, s=s0, v_lv=float(v0),
                                v_prev=float(v0), v_hold=float(v0),
                                phase=K.PHASE_FILLING)
        p0 = pressure_from_volume(v_lv, s0, ventricle.params)
        circ = initial_circ_state(closure.params, v_lv)
        return CoupledState(t=0.0, p_lv=p0, s=s0, circ=circ.c.copy(),
                            v_lv=v_lv, v_prev=v_lv, v_hold=v_lv)
    if isinstance(ventricle, RomVentricle):
        v_lv = ventricle.model.v0
        z0 = np.zeros(ventricle.model.arch.n_z)
        z0[0] = v_lv
        if isinstance(closure, Windkessel):
            p0 = closure.params.p_filling
            return CoupledState(t=0.0, p_lv=p0, z=z0, v_lv=v_lv,
                                v_prev=v_lv, v_hold=v_lv,
                                phase=K.PHASE_FILLING)
        p0 = cfg.p_lv_init
        circ = initial_circ_state(closure.params, v_lv)
        return CoupledState(t=0.0, p_lv=p0, z=z0, circ=circ.c.copy(),
                            v_lv=v_lv, v_prev=v_lv, v_hold=v_lv)
    raise TypeError(f"unknown ventricle type {type(ventricle)!r}")


def _advance(ventricle, closure, state: CoupledState, n_steps: int,
             rec_every: int, cfg: CoupledConfig) -> np.ndarray:
    """Run n_steps explicit steps in place; returns the recorded block."""
    dt = cfg.dt_for(ventricle)
    n_rec = n_steps // rec_every if rec_every > 0 else 0
    if isinstance(closure, ClosedLoop):
        cp = closure.params.pack()
        rec = np.empty((n_rec, K.REC_CL_WIDTH))
        if isinstance(ventricle, RefVentricle):
            s, p, status, step = K.run_cl_ref(
                state.circ, state.s, state.p_lv, state.t, dt, n_steps,
                rec_every, cp, ventricle.params.pack(), cfg.t_hb,
                cfg.valve_smoothing, cfg.vol_tol, cfg.max_pressure_iters,
                cfg.p_lo, cfg.p_hi, rec)
            state.s = float(s)
        else:
            z, p, status, step = K.run_cl_rom(
                state.circ, state.z, state.p_lv, state.t, dt, n_steps,
                rec_every, cp, cfg.t_hb, cfg.valve_smoothing,
                *_rom_kernel_args(ventricle.model, ventricle.theta_m),
                cfg.vol_tol, cfg.max_pressure_iters, cfg.p_lo, cfg.p_hi, rec)
        if status == 1:
            raise CouplingError("pressure solve failed", step=step)
        if status == 2:
            raise CouplingError("non-finite state", step=step)
        state.p_lv = float(p)
        state.t += n_steps * dt
        state.v_lv = float(state.circ[K.IC_V_LV])
        return rec
    if isinstance(closure, Windkessel):
        wp = closure.params.pack()
        rec = np.empty((n_rec, K.REC_WK_WIDTH))
        if isinstance(ventricle, RefVentricle):
            s, p, v_cur, v_prev, v_hold, phase, status, step = K.run_wk_ref(
                state.s, state.p_lv, state.v_lv, state.v_prev, state.v_hold,
                state.phase, state.t, dt, n_steps, rec_every, wp,
                ventricle.params.pack(), cfg.t_hb, rec)
            state.s = float(s)
        else:
            z, p, v_prev, v_hold, phase, status, step = K.run_wk_rom(
                state.z, state.p_lv, state.v_prev, state.v_hold, state.phase,
                state.t, dt, n_steps, rec_every, wp, cfg.t_hb,
                *_rom_kernel_args(ventricle.model, ventricle.theta_m),
                cfg.vol_tol, cfg.max_pressure_iters, cfg.p_lo, cfg.p_hi, rec)
            v_cur = float(state.z[0])
        if status == 1:
            raise CouplingError("pressure solve failed", step=step)
        if status == 2:
            raise CouplingError("non-finite state", step=step)
        state.p_lv = float(p)
        state.v_lv = float(v_cur)
        state.v_prev = float(v_prev)
        state.v_hold = float(v_hold)
        state.phase = int(phase)
        state.t += n_steps * dt
        return rec
    raise TypeError(f"unknown closure type {type(closure)!r}")


def _initial_row(ventricle, closure, state: CoupledState,
                 cfg: CoupledConfig) -> np.ndarray:
    if isinstance(closure, ClosedLoop):
        rec = np.empty((1, K.REC_CL_WIDTH))
        K.record_cl_row(rec, 0, state.circ, state.p_lv, state.t,
                        closure.params.pack(), cfg.t_hb)
        return rec
    return np.array([[state.t, state.v_lv, state.p_lv, float(state.phase)]])


def coupled_step(ventricle, closure, state: CoupledState, dt: float,
                 cfg: CoupledConfig) -> CoupledState:
    """One explicit coupled step; the pressure solve enforces volume
    consistency to cfg.vol_tol."""
    new = state.copy()
    sub_cfg = cfg
    if isinstance(ventricle, RefVentricle) and abs(dt - cfg.dt_ref) > 1e-15:
        sub_cfg = _config_with_dt(cfg, dt_ref=dt)
    if isinstance(ventricle, RomVentricle) and abs(dt - cfg.dt_rom) > 1e-15:
        sub_cfg = _config_with_dt(cfg, dt_rom=dt)
    _advance(ventricle, closure, new, 1, 0, sub_cfg)
    return new


def _config_with_dt(cfg: CoupledConfig, dt_ref=None, dt_rom=None) -> CoupledConfig:
    kw = {f.name: getattr(cfg, f.name) for f in dc_fields(cfg)}
    if dt_ref is not None:
        kw["dt_ref"] = dt_ref
        kw["dt_out_ref"] = dt_ref
    if dt_rom is not None:
        kw["dt_rom"] = dt_rom
        kw["dt_out_rom"] = dt_rom
    # keep t_hb divisibility satisfied for arbitrary test steps
    kw["t_hb"] = cfg.t_hb
    return CoupledConfig(**kw)


def coupling_residual(ventricle, closure: ClosedLoop, state: CoupledState,
                      p: float, dt: float, cfg: CoupledConfig) -> float:
    """Volume-consistency residual r(p) after one tentative step.

    r is strictly decreasing in p for the reference ventricle: raising the
    pressure shifts valve fluxes so the circulation-side LV volume falls
    while the ventricle-side volume rises.
    """
    cp = closure.params.pack()
    if isinstance(ventricle, RefVentricle):
        rp = ventricle.params.pack()
        s_new = state.s + dt * K.ref_act_rhs(state.s, state.t, rp, cfg.t_hb)
        s_new = min(max(s_new, 0.0), 1.0)
        return float(K.cl_resid_ref(p, state.circ, s_new, dt, state.t, cp,
                                    rp, cfg.t_hb, cfg.valve_smoothing))
    model = ventricle.model
    in_c, in_hw, out_scale, xtheta, W1, b1, Wh, bh, W2, b2, L = \
        _rom_kernel_args(model, ventricle.theta_m)
    nz = model.arch.n_z
    xbuf = np.empty(model.arch.n_inputs)
    xbuf[nz + 3:] = xtheta
    n_h = W1.shape[0] if L > 0 else 1
    hcache = np.empty((max(L, 1), n_h))
    ybuf = np.empty(nz)
    fbuf = np.empty(nz)
    ang = K.phase_angle(state.t, cfg.t_hb)
    return float(K.cl_resid_rom(
        p, state.circ, state.z, np.cos(ang), np.sin(ang), dt, state.t, cp,
        cfg.t_hb, cfg.valve_smoothing, xbuf, hcache, ybuf, in_c, in_hw,
        out_scale, W1, b1, Wh, bh, W2, b2, L, fbuf))


def consistency_error(ventricle, state: CoupledState) -> float:
    """|circulation-side LV volume - ventricle-side LV volume|."""
    if state.circ is None:
        return 0.0
    v_circ = float(state.circ[K.IC_V_LV])
    if isinstance(ventricle, RefVentricle):
        v_vent, st = K.ref_volume(state.p_lv, state.s, ventricle.params.pack())
        if st != 0:
            raise CouplingError("ventricle volume solve failed")
        return abs(v_circ - float(v_vent))
    return abs(v_circ - float(state.z[0]))


# ------------------------------------------------------------------ simulation

def run_fixed_beats(ventricle, closure, n_beats: int, cfg: CoupledConfig,
                    state: CoupledState | None = None
                    ) -> tuple[CoupledResult, CoupledState]:
    """Simulate exactly n_beats heartbeats from the standard initial state."""
    if state is None:
        state = initial_coupled_state(ventricle, closure, cfg)
    dt = cfg.dt_for(ventricle)
    rec_every = int(round(cfg.dt_out_for(ventricle) / dt))
    steps = int(round(n_beats * cfg.t_hb / dt))
    blocks = [_initial_row(ventricle, closure, state, cfg)]
    blocks.append(_advance(ventricle, closure, state, steps, rec_every, cfg))
    columns = CL_COLUMNS if isinstance(closure, ClosedLoop) else WK_COLUMNS
    return CoupledResult(columns=columns, data=np.vstack(blocks),
                         dt_out=cfg.dt_out_for(ventricle), t_hb=cfg.t_hb,
                         n_beats=n_beats), state


_CYCLE_P_CHANNELS = ("p_la", "p_lv", "p_ra", "p_rv")
_CYCLE_V_CHANNELS = ("v_la", "v_lv", "v_ra", "v_rv")


def run_to_limit_cycle(ventricle, closure, cfg: CoupledConfig
                       ) -> tuple[CoupledResult, int, bool]:
    """Simulate beats until successive cycles differ by less than the
    configured pressure/volume tolerances in every available chamber.

    Returns (trajectory, n_beats_used, converged); converged is False when
    max_beats was reached first.  At least min_beats are always simulated.
    """
    state = initial_coupled_state(ventricle, closure, cfg)
    dt = cfg.dt_for(ventricle)
    rec_every = int(round(cfg.dt_out_for(ventricle) / dt))
    steps_per_beat = int(round(cfg.t_hb / dt))
    columns = CL_COLUMNS if isinstance(closure, ClosedLoop) else WK_COLUMNS
    p_cols = [columns.index(c) for c in _CYCLE_P_CHANNELS if c in columns]
    v_cols = [columns.index(c) for c in _CYCLE_V_CHANNELS if c in columns]
    blocks = [_initial_row(ventricle, closure, state, cfg)]
    prev_beat = None
    converged = False
    beats = 0
    try:
        while beats < cfg.max_beats:
            block = _advance(ventricle, closure, state, steps_per_beat,
                             rec_every, cfg)
            blocks.append(block)
            beats += 1
            if prev_beat is not None and beats >= cfg.min_beats:
                dp = np.abs(block[:, p_cols] - prev_beat[:, p_cols]).max()
                dv = np.abs(block[:, v_cols] - prev_beat[:, v_cols]).max()
                if dp < cfg.cycle_tol_p and dv < cfg.cycle_tol_v:
                    converged = True
                    break
            prev_beat = block
    except CouplingError as exc:
        raise CouplingError(str(exc), beat=beats + 1) from None
    return (CoupledResult(columns=columns, data=np.vstack(blocks),
                          dt_out=cfg.dt_out_for(ventricle), t_hb=cfg.t_hb,
                          n_beats=beats, converged=converged),
            beats, converged)


def extract_qois(beat: CoupledResult) -> QoiVector:
    """Per-channel min/max and stroke volumes from one recorded beat."""
    n_expected = beat.samples_per_beat + 1
    if beat.data.shape[0] != n_expected:
        raise ValueError(
            f"expected exactly one beat of samples ({n_expected} rows), got "
            f"{beat.data.shape[0]}"
        )
    vals: dict[str, float | None] = {}
    for ch in ("v_la", "p_la", "v_lv", "p_lv", "v_ra", "p_ra", "v_rv",
               "p_rv", "p_ar_sys"):
        if ch in beat.columns:
            series = beat.channel(ch)
            vals[ch + "_min"] = float(series.min())
            vals[ch + "_max"] = float(series.max())
    if "v_lv_min" in vals:
        vals["sv_lv"] = vals["v_lv_max"] - vals["v_lv_min"]
    if "v_rv_min" in vals:
        vals["sv_rv"] = vals["v_rv_max"] - vals["v_rv_min"]
    return QoiVector(values=vals)


# ------------------------------------------------------------ data generation

def split_overrides(names, values) -> tuple[dict, dict]:
    """Route named parameter values to the ventricle and circulation models."""
    ref_kw, circ_kw = {}, {}
    for name, value in zip(names, values):
        if name in _REF_FIELDS:
            ref_kw[name] = float(value)
        elif name in _CIRC_FIELDS:
            circ_kw[name] = float(value)
        else:
            raise KeyError(f"parameter '{name}' is neither a ventricle nor a "
                           f"circulation parameter")
    return ref_kw, circ_kw


def _full_param_vectors(ref: RefVentricleParams, circ: CircParams
                        ) -> tuple[ParamVector, ParamVector]:
    return (ParamVector.from_dict(ref.as_dict()),
            ParamVector.from_dict(circ.as_dict()))


def generate_dataset(design, n_beats: int, cfg: CoupledConfig,
                     jobs: int = 1) -> tuple[Dataset, list[tuple[int, str]]]:
    """Reference-model transients for every design row.

    Rows whose simulation fails (or whose LV volume leaves the sane range)
    are collected in the failure report instead of being silently dropped.
    """
    names = design.space.names
    rows = [design.points[i] for i in range(design.n)]
    from ._parallel import parallel_map

    def one(row):
        ref_kw, circ_kw = split_overrides(names, row)
        ref = RefVentricleParams().replace(**ref_kw)
        circ = CircParams().replace(**circ_kw)
        result, _ = run_fixed_beats(RefVentricle(ref), ClosedLoop(circ),
                                    n_beats, cfg)
        v = result.channel("v_lv")
        if v.min() <= 0.5 * V_UNSTRESSED or v.max() >= 4.0 * V_UNSTRESSED:
            raise CouplingError(
                f"LV volume left ({0.5 * V_UNSTRESSED}, {4 * V_UNSTRESSED}) mL: "
                f"range [{v.min():.2f}, {v.max():.2f}]"
            )
        pm, pc = _full_param_vectors(ref, circ)
        return result.to_transient(pm, pc)

    outcomes = parallel_map(_try_one, [(one, row) for row in rows], jobs)
    records, failures = [], []
    for i, (ok, payload) in enumerate(outcomes):
        if ok:
            records.append(payload)
        else:
            failures.append((i, payload))
    return Dataset(records=tuple(records)), failures


def _try_one(args):
    fn, row = args
    try:
        return True, fn(row)
    except Exception as exc:  # reported upstream with the row index
        return False, f"{type(exc).__name__}: {exc}"


# ------------------------------------------------------- error tables / R^2

def _rel_l2(pred: np.ndarray, truth: np.ndarray) -> float:
    denom = float(np.linalg.norm(truth))
    return float(np.linalg.norm(pred - truth)) / denom if denom > 0 else np.nan


def _beat_qois(t_hb: float, dt: float, p: np.ndarray, v: np.ndarray) -> dict:
    spb = int(round(t_hb / dt))
    p_b, v_b = p[-(spb + 1):], v[-(spb + 1):]
    return {
        "p_lv_min": float(p_b.min()), "p_lv_max": float(p_b.max()),
        "v_lv_min": float(v_b.min()), "v_lv_max": float(v_b.max()),
        "sv_lv": float(v_b.max() - v_b.min()),
    }


def _lv_error_row(p_true, v_true, dt_true, p_pred, v_pred, dt_pred,
                  t_hb: float) -> dict:
    ratio = dt_pred / dt_true
    if abs(ratio - round(ratio)) > 1e-9:
        raise ValueError("prediction grid must subsample the truth grid")
    k = int(round(ratio))
    p_t, v_t = p_true[::k], v_true[::k]
    if p_t.size != p_pred.size:
        raise ValueError("series lengths do not match after resampling")
    row = {
        "rel_l2_p": _rel_l2(p_pred, p_t),
        "rel_l2_v": _rel_l2(v_pred, v_t),
    }
    q_true = _beat_qois(t_hb, dt_true, p_true, v_true)
    q_pred = _beat_qois(t_hb, dt_pred, p_pred, v_pred)
    for name in LV_QOI_NAMES:
        row[f"true_{name}"] = q_true[name]
        row[f"pred_{name}"] = q_pred[name]
        denom = abs(q_true[name])
        row[f"err_{name}"] = (abs(q_pred[name] - q_true[name]) / denom
                              if denom > 0 else np.nan)
    return row


@dataclass(frozen=True)
class ErrorTable:
    """Per-row surrogate-vs-reference errors plus aggregate metrics."""

    rows: tuple[dict, ...]
    summary: dict = field(default_factory=dict)

    def to_csv(self, path: str | Path) -> None:
        if not self.rows:
            Path(path).write_text("")
            return
        cols = list(self.rows[0].keys())
        lines = [",".join(cols)]
        for r in self.rows:
            lines.append(",".join(f"{r[c]:.17g}" for c in cols))
        Path(path).write_text("\n".join(lines) + "\n")

    def save_summary(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary, indent=1))


def _r_squared(pred: np.ndarray, truth: np.ndarray) -> float:
    ss_res = float(np.sum((pred - truth) ** 2))
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else -np.inf
    return 1.0 - ss_res / ss_tot


def summarize_error_rows(rows) -> dict:
    """Aggregate mean relative errors and per-QoI R^2 across test rows."""
    summary = {
        "mean_rel_l2_p": float(np.mean([r["rel_l2_p"] for r in rows])),
        "mean_rel_l2_v": float(np.mean([r["rel_l2_v"] for r in rows])),
    }
    for name in LV_QOI_NAMES:
        errs = np.array([r[f"err_{name}"] for r in rows])
        summary[f"mean_err_{name}"] = float(np.mean(errs))
        truth = np.array([r[f"true_{name}"] for r in rows])
        pred = np.array([r[f"pred_{name}"] for r in rows])
        summary[f"r2_{name}"] = _r_squared(pred, truth)
    return summary


def compare_rom_vs_ref(design, model: RomModel, closure_kind: str,
                       cfg: CoupledConfig, n_beats: int,
                       wk_params: WindkesselParams | None = None,
                       jobs: int = 1) -> ErrorTable:
    """Run reference and surrogate side by side over a test design.

    ``closure_kind`` is 'closed_loop' or 'windkessel'; both submodels always
    use the same closure.  Relative L2 errors cover the full recorded
    series; QoI errors and R^2 use the last beat.
    """
    if closure_kind not in ("closed_loop", "windkessel"):
        raise ValueError("closure_kind must be 'closed_loop' or 'windkessel'")
    names = design.space.names
    model_names = set(model.param_names)
    from ._parallel import parallel_map

    def one(row):
        ref_kw, circ_kw = split_overrides(names, row)
        unknown = set(ref_kw) - model_names
        if unknown:
            raise KeyError(
                f"design varies ventricle parameters {sorted(unknown)} the "
                f"surrogate was not trained on"
            )
        ref = RefVentricleParams().replace(**ref_kw)
        theta = np.array([ref.as_dict()[n] for n in model.param_names])
        if closure_kind == "closed_loop":
            closure = ClosedLoop(CircParams().replace(**circ_kw))
        else:
            closure = Windkessel(wk_params or WindkesselParams())
        res_ref, _ = run_fixed_beats(RefVentricle(ref), closure, n_beats, cfg)
        res_rom, _ = run_fixed_beats(RomVentricle(model, theta), closure,
                                     n_beats, cfg)
        return _lv_error_row(
            res_ref.channel("p_lv"), res_ref.channel("v_lv"), cfg.dt_out_ref,
            res_rom.channel("p_lv"), res_rom.channel("v_lv"), cfg.dt_out_rom,
            cfg.t_hb)

    rows = parallel_map(_call, [(one, design.points[i]) for i in range(design.n)],
                        jobs)
    return ErrorTable(rows=tuple(rows), summary=summarize_error_rows(rows))


def _call(args):
    fn, row = args
    return fn(row)


def lv_errors_vs_record(model: RomModel, rec: Transient,
                        cfg: CoupledConfig) -> dict:
    """Closed-loop surrogate errors against one recorded reference transient.

    Used as the validation metric in hyperparameter selection: the record
    carries the full parameter vectors, so the surrogate is rerun coupled
    with the same circulation and compared on the LV usages (p/V series and
    beat biomarkers).
    """
    circ = CircParams(**{k: rec.params_c[k] for k in CircParams().as_dict()})
    theta = np.array([rec.params_m[n] for n in model.param_names])
    res, _ = run_fixed_beats(RomVentricle(model, theta), ClosedLoop(circ),
                             rec.n_beats, cfg)
    return _lv_error_row(rec.p_lv, rec.v_lv, rec.dt,
                         res.channel("p_lv"), res.channel("v_lv"),
                         cfg.dt_out_rom, cfg.t_hb)


def mean_lv_error(row: dict) -> float:
    """Mean of the seven LV validation errors of one error row."""
    parts = [row["rel_l2_p"], row["rel_l2_v"]]
    parts += [row[f"err_{name}"] for name in LV_QOI_NAMES]
    return float(np.mean(parts))
