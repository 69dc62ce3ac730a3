"""Synthetic reference left ventricle used as the expensive ground truth.

The model maps an input pressure transient p_LV(t) to a volume transient
V_LV(t) through one internal activation state s(t) and an algebraic
pressure-volume law: p = E_act(s) * (V - V_un) + p_pass(V), where the
active elastance scales with contractility and fiber-angle effectiveness
and the passive branch is exponential in volume.  It is a self-consistent
stand-in for a full electromechanical model, not a validated physiological
model; the internal constants below are configuration defaults chosen to
give pressure/volume excursions in the usual clinical ranges.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable

import numpy as np

from . import _kernels as K
from .params import ParamVector
from .transients import Transient

__all__ = [
    "RefVentricleParams",
    "activation_rhs",
    "activation_drive",
    "volume_from_pressure",
    "pressure_from_volume",
    "simulate_ref",
    "V_UNSTRESSED",
]

# Fixed internal constants of the synthetic ventricle.
V_UNSTRESSED = 50.0      # mL, unstressed volume
E_SCALE = 2.5            # mmHg/mL, peak active elastance at baseline
KAPPA = 1.0              # mmHg, passive stiffness scale
GAMMA = 2.0              # passive exponential steepness
TAU_RISE = 0.03          # s, activation rise time constant
TAU_FALL = 0.06          # s, activation decay time constant
TAU_DELAY0 = 0.05        # s, drive onset delay at baseline conductivity
DRIVE_WIDTH = 0.30       # s, total width of the systolic drive pulse
# Exponent of the sin-based fiber-angle effectiveness g(alpha); 1.0 keeps the
# fiber-angle influence on systolic pressure below the contractility
# influence over matched +-20% ranges while leaving alpha identifiable.
FIBER_EXPONENT = 1.0


@dataclass(frozen=True)
class RefVentricleParams:
    """The four physiological parameters of the reference ventricle."""

    a_xb: float = 160.0     # MPa, contractility
    sigma_f: float = 76.43  # mm/s, conduction speed along fibers
    alpha: float = 60.0     # degrees, fiber angle
    c_pass: float = 0.88    # kPa, passive stiffness

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"parameter '{f.name}' must be positive, got {v}")
        if not (0.0 < self.alpha < 90.0):
            raise ValueError(f"alpha must lie in (0, 90) degrees, got {self.alpha}")

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def replace(self, **overrides) -> "RefVentricleParams":
        vals = self.as_dict()
        unknown = set(overrides) - set(vals)
        if unknown:
            raise KeyError(f"unknown ventricle parameters: {sorted(unknown)}")
        vals.update(overrides)
        return RefVentricleParams(**vals)

    def pack(self) -> np.ndarray:
        rp = np.empty(K.N_RP)
        rp[K.RP_A_XB] = self.a_xb
        rp[K.RP_SIGMA_F] = self.sigma_f
        rp[K.RP_ALPHA] = self.alpha
        rp[K.RP_C_PASS] = self.c_pass
        rp[K.RP_V_UN] = V_UNSTRESSED
        rp[K.RP_E_SCALE] = E_SCALE
        rp[K.RP_KAPPA] = KAPPA
        rp[K.RP_GAMMA] = GAMMA
        rp[K.RP_TAU_RISE] = TAU_RISE
        rp[K.RP_TAU_FALL] = TAU_FALL
        rp[K.RP_TAU_D0] = TAU_DELAY0
        rp[K.RP_DRIVE_WIDTH] = DRIVE_WIDTH
        rp[K.RP_FIBER_EXP] = FIBER_EXPONENT
        return rp


def activation_drive(t: float, params: RefVentricleParams, t_hb: float) -> float:
    """Systolic drive pulse u(t) in [0, 1]; onset delay scales as 1/sigma_f."""
    return float(K.ref_drive(float(t), params.pack(), float(t_hb)))


def activation_rhs(s: float, t: float, params: RefVentricleParams,
                   t_hb: float) -> float:
    """ds/dt = (u(t) - s)/tau with tau = tau_rise while u > s, else tau_fall."""
    return float(K.ref_act_rhs(float(s), float(t), params.pack(), float(t_hb)))


def volume_from_pressure(p_lv: float, s: float,
                         params: RefVentricleParams) -> float:
    """Unique volume solving the pressure-volume law at activation s.

    Safeguarded Newton to |residual| < 1e-10 mmHg; the law is strictly
    increasing in V so the root is unique.
    """
    v, status = K.ref_volume(float(p_lv), float(s), params.pack())
    if status == 1:
        raise ValueError(
            f"pressure {p_lv} mmHg is below the reach of the passive law at "
            f"zero activation"
        )
    if status == 2:
        raise RuntimeError("volume solve did not converge within 100 iterations")
    return float(v)


def pressure_from_volume(v_lv: float, s: float,
                         params: RefVentricleParams) -> float:
    """Direct evaluation of the pressure-volume law."""
    return float(K.ref_pressure(float(v_lv), float(s), params.pack()))


def simulate_ref(p_lv: Callable[[float], float], params: RefVentricleParams,
                 T: float, dt: float, t_hb: float, s0: float = 0.0,
                 params_c: ParamVector | None = None) -> Transient:
    """Forward Euler on the activation state with algebraic volume solves.

    ``p_lv`` is a callable of time; samples are recorded on the uniform dt
    grid, so T must span an integer number of heartbeats for the returned
    transient to be valid.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = int(round(T / dt))
    rp = params.pack()
    s = float(s0)
    p_arr = np.empty(n + 1)
    v_arr = np.empty(n + 1)
    for k in range(n + 1):
        t = k * dt
        p = float(p_lv(t))
        p_arr[k] = p
        v, status = K.ref_volume(p, s, rp)
        if status != 0:
            raise RuntimeError(f"volume solve failed at step {k} (t = {t})")
        v_arr[k] = v
        if k < n:
            s += dt * K.ref_act_rhs(s, t, rp, t_hb)
            s = min(max(s, 0.0), 1.0)
    pm = ParamVector.from_dict(params.as_dict())
    pc = params_c if params_c is not None else ParamVector(entries=())
    return Transient(t0=0.0, dt=dt, t_hb=t_hb, p_lv=p_arr, v_lv=v_arr,
                     params_m=pm, params_c=pc)
