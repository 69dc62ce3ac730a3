"""Lumped-parameter closed-loop circulation with an externally driven LV.

The network is LA -> mitral valve -> LV -> aortic valve -> systemic
arterial RLC -> systemic venous RLC -> RA -> tricuspid valve -> RV ->
pulmonary valve -> pulmonary arterial RLC -> pulmonary venous RLC -> LA.
LA, RA and RV are time-varying elastance chambers; valves are two-level
resistances; the LV is left open as an external chamber whose pressure is
supplied by the caller and whose volume is a state of the network.

A phase-based afterload/preload closure (two-element windkessel during
ejection, linear pressure ramp during filling) is provided as an
alternative to the closed loop for testing surrogate transferability.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import _kernels as K

__all__ = [
    "CircParams",
    "CircState",
    "WindkesselParams",
    "STATE_NAMES",
    "chamber_activation",
    "circ_rhs",
    "v_lv_of_circ",
    "initial_circ_state",
    "total_blood_volume",
    "windkessel_pressure_step",
    "PHASE_NAMES",
]

STATE_NAMES = (
    "v_la", "v_ra", "v_rv", "v_lv",
    "p_ar_sys", "p_ven_sys", "p_ar_pul", "p_ven_pul",
    "q_ar_sys", "q_ven_sys", "q_ar_pul", "q_ven_pul",
)

PHASE_NAMES = {0: "filling", 1: "isovolumic", 2: "ejection"}
_PHASE_IDS = {v: k for k, v in PHASE_NAMES.items()}


@dataclass(frozen=True)
class CircParams:
    """Circulation parameters with their baseline values.

    Units: volumes mL, elastances mmHg/mL, times s, resistances mmHg.s/mL,
    capacitances mL/mmHg, inductances mmHg.s^2/mL.
    """

    v_tot: float = 400.15
    e_act_la: float = 0.07
    e_act_ra: float = 0.06
    e_act_rv: float = 0.55
    e_pass_la: float = 0.18
    e_pass_ra: float = 0.07
    e_pass_rv: float = 0.05
    t_contr_la: float = 0.14
    t_contr_ra: float = 0.14
    t_contr_rv: float = 0.20
    t_rel_la: float = 0.14
    t_rel_ra: float = 0.14
    t_rel_rv: float = 0.32
    v0_la: float = 4.0
    v0_ra: float = 4.0
    v0_rv: float = 16.0
    t_av_l: float = 0.16
    t_av_r: float = 0.16
    r_min: float = 0.0075
    r_max: float = 75006.2
    r_ar_sys: float = 0.64
    r_ven_sys: float = 0.32
    r_ar_pul: float = 0.032
    r_ven_pul: float = 0.036
    c_ar_sys: float = 1.2
    c_ven_sys: float = 60.0
    c_ar_pul: float = 10.0
    c_ven_pul: float = 16.0
    l_ar_sys: float = 0.005
    l_ven_sys: float = 0.0005
    l_ar_pul: float = 0.0005
    l_ven_pul: float = 0.0005

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"circulation parameter '{f.name}' must be "
                                 f"positive and finite, got {v}")
        if not self.r_min < self.r_max:
            raise ValueError("r_min must be below r_max")

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def replace(self, **overrides) -> "CircParams":
        vals = self.as_dict()
        unknown = set(overrides) - set(vals)
        if unknown:
            raise KeyError(f"unknown circulation parameters: {sorted(unknown)}")
        vals.update(overrides)
        return CircParams(**vals)

    def pack(self) -> np.ndarray:
        cp = np.empty(K.N_CP)
        cp[K.CP_V_TOT] = self.v_tot
        cp[K.CP_E_ACT_LA] = self.e_act_la
        cp[K.CP_E_ACT_RA] = self.e_act_ra
        cp[K.CP_E_ACT_RV] = self.e_act_rv
        cp[K.CP_E_PASS_LA] = self.e_pass_la
        cp[K.CP_E_PASS_RA] = self.e_pass_ra
        cp[K.CP_E_PASS_RV] = self.e_pass_rv
        cp[K.CP_T_CONTR_LA] = self.t_contr_la
        cp[K.CP_T_CONTR_RA] = self.t_contr_ra
        cp[K.CP_T_CONTR_RV] = self.t_contr_rv
        cp[K.CP_T_REL_LA] = self.t_rel_la
        cp[K.CP_T_REL_RA] = self.t_rel_ra
        cp[K.CP_T_REL_RV] = self.t_rel_rv
        cp[K.CP_V0_LA] = self.v0_la
        cp[K.CP_V0_RA] = self.v0_ra
        cp[K.CP_V0_RV] = self.v0_rv
        cp[K.CP_T_AV_L] = self.t_av_l
        cp[K.CP_T_AV_R] = self.t_av_r
        cp[K.CP_R_MIN] = self.r_min
        cp[K.CP_R_MAX] = self.r_max
        cp[K.CP_R_AR_SYS] = self.r_ar_sys
        cp[K.CP_R_VEN_SYS] = self.r_ven_sys
        cp[K.CP_R_AR_PUL] = self.r_ar_pul
        cp[K.CP_R_VEN_PUL] = self.r_ven_pul
        cp[K.CP_C_AR_SYS] = self.c_ar_sys
        cp[K.CP_C_VEN_SYS] = self.c_ven_sys
        cp[K.CP_C_AR_PUL] = self.c_ar_pul
        cp[K.CP_C_VEN_PUL] = self.c_ven_pul
        cp[K.CP_L_AR_SYS] = self.l_ar_sys
        cp[K.CP_L_VEN_SYS] = self.l_ven_sys
        cp[K.CP_L_AR_PUL] = self.l_ar_pul
        cp[K.CP_L_VEN_PUL] = self.l_ven_pul
        return cp

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "CircParams":
        return cls(**json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class CircState:
    """Circulation state vector (chamber volumes, pressures, fluxes)."""

    c: np.ndarray

    def __post_init__(self):
        c = np.ascontiguousarray(self.c, dtype=float)
        if c.shape != (K.N_STATE,):
            raise ValueError(f"state must have shape ({K.N_STATE},)")
        if not np.isfinite(c).all():
            raise ValueError("non-finite circulation state")
        if (c[:4] < 0).any():
            raise ValueError("chamber volumes must be non-negative")
        object.__setattr__(self, "c", c)
        c.setflags(write=False)

    def __getitem__(self, name: str) -> float:
        return float(self.c[STATE_NAMES.index(name)])

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(STATE_NAMES, self.c)}


@dataclass(frozen=True)
class WindkesselParams:
    """Two-element windkessel afterload plus linear-ramp preload closure.

    ``p_filling`` is the pressure at which the ventricle re-enters the
    filling phase after relaxation; ``p_open`` is the aortic opening
    pressure that starts ejection.
    """

    resistance: float = 1.0      # mmHg.s/mL
    capacitance: float = 1.5     # mL/mmHg
    ramp_rate: float = 5.0       # mmHg/s
    p_filling: float = 22.0      # mmHg
    p_open: float = 55.0         # mmHg

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"windkessel parameter '{f.name}' must be "
                                 f"positive and finite, got {v}")

    def pack(self) -> np.ndarray:
        wp = np.empty(K.N_WP)
        wp[K.WP_R] = self.resistance
        wp[K.WP_C] = self.capacitance
        wp[K.WP_RAMP] = self.ramp_rate
        wp[K.WP_P_FILL] = self.p_filling
        wp[K.WP_P_OPEN] = self.p_open
        return wp

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def chamber_activation(t: float, t_hb: float, t_onset: float,
                       t_contr: float, t_rel: float) -> float:
    """Piecewise-cosine activation in [0, 1], periodic in t_hb."""
    if t_contr <= 0 or t_rel <= 0:
        raise ValueError("contraction and relaxation times must be positive")
    if t_contr + t_rel > t_hb:
        raise ValueError("t_contr + t_rel must not exceed t_hb")
    return float(K.chamber_activation_kernel(
        float(t), float(t_hb), float(t_onset), float(t_contr), float(t_rel)))


def circ_rhs(c: CircState | np.ndarray, p_lv: float, t: float,
             params: CircParams, t_hb: float = 0.8,
             valve_smoothing: float = 0.0) -> np.ndarray:
    """Time derivative of the circulation state at externally given p_LV."""
    arr = c.c if isinstance(c, CircState) else np.ascontiguousarray(c, dtype=float)
    if not (np.isfinite(arr).all() and np.isfinite(p_lv)):
        raise ValueError("non-finite state or pressure")
    dc = np.empty(K.N_STATE)
    K.circ_rhs_kernel(arr, float(p_lv), float(t), params.pack(), float(t_hb),
                      float(valve_smoothing), dc)
    return dc


def v_lv_of_circ(c: CircState | np.ndarray) -> float:
    """Circulation-side LV volume (pure accessor)."""
    arr = c.c if isinstance(c, CircState) else np.asarray(c, dtype=float)
    return float(arr[K.IC_V_LV])


# Initial compartment pressures [mmHg] and the LA/RA/RV shares of the
# non-LV heart pool, read off the baseline limit cycle at the beat onset so
# that the slow venous redistribution modes start close to equilibrium and
# the cycle criterion triggers within a handful of beats.
_INIT_P_AR_SYS = 52.0
_INIT_P_VEN_SYS = 25.0
_INIT_P_AR_PUL = 26.0
_INIT_P_VEN_PUL = 25.0
_INIT_CHAMBER_FRACTIONS = np.array([0.42, 0.17, 0.41])  # LA, RA, RV


def initial_circ_state(params: CircParams, v_lv: float) -> CircState:
    """Standard initial state with the LV pinned at ``v_lv``.

    LA, RA and RV split the remaining v_tot - v_lv in fixed proportions;
    compartment pressures start at nominal near-cycle values and all fluxes
    at zero.  The limit-cycle criterion makes the residual arbitrariness
    immaterial.
    """
    budget = params.v_tot - v_lv
    if budget <= 0:
        raise ValueError(
            f"v_tot = {params.v_tot} mL leaves no volume for the atria and "
            f"RV once the LV holds {v_lv} mL"
        )
    c = np.zeros(K.N_STATE)
    shares = _INIT_CHAMBER_FRACTIONS / _INIT_CHAMBER_FRACTIONS.sum()
    c[K.IC_V_LA], c[K.IC_V_RA], c[K.IC_V_RV] = budget * shares
    c[K.IC_V_LV] = v_lv
    c[K.IC_P_AR_SYS] = _INIT_P_AR_SYS
    c[K.IC_P_VEN_SYS] = _INIT_P_VEN_SYS
    c[K.IC_P_AR_PUL] = _INIT_P_AR_PUL
    c[K.IC_P_VEN_PUL] = _INIT_P_VEN_PUL
    return CircState(c=c)


def total_blood_volume(c: CircState | np.ndarray, params: CircParams) -> float:
    """Chamber volumes plus capacitor-stored volumes; conserved quantity."""
    arr = c.c if isinstance(c, CircState) else np.asarray(c, dtype=float)
    return float(
        arr[K.IC_V_LA] + arr[K.IC_V_RA] + arr[K.IC_V_RV] + arr[K.IC_V_LV]
        + params.c_ar_sys * arr[K.IC_P_AR_SYS]
        + params.c_ven_sys * arr[K.IC_P_VEN_SYS]
        + params.c_ar_pul * arr[K.IC_P_AR_PUL]
        + params.c_ven_pul * arr[K.IC_P_VEN_PUL]
    )


def windkessel_pressure_step(p_lv: float, v_lv: float, dvdt: float,
                             phase: str, wk: WindkesselParams,
                             dt: float) -> tuple[float, str]:
    """One explicit step of the closure pressure law and phase logic.

    During filling the pressure ramps linearly; during ejection it follows
    the two-element windkessel charged by -dV/dt; in the isovolumic phases
    the pressure itself is set by the coupling solver, so only the phase
    transitions are evaluated here.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if phase not in _PHASE_IDS:
        raise ValueError(f"unknown phase '{phase}'")
    if phase == "filling":
        p_next = p_lv + dt * wk.ramp_rate
        next_phase = "isovolumic" if dvdt < 0 else "filling"
    elif phase == "isovolumic":
        p_next = p_lv
        if p_lv >= wk.p_open:
            next_phase = "ejection"
        elif p_lv <= wk.p_filling:
            next_phase = "filling"
        else:
            next_phase = "isovolumic"
    else:  # ejection
        p_next = p_lv + dt * (-dvdt - p_lv / wk.resistance) / wk.capacitance
        next_phase = "isovolumic" if dvdt >= 0 else "ejection"
    return float(p_next), next_phase
