"""ODE surrogate of the ventricle: reduced state z with a neural-network
right-hand side.

The network maps [z, p_LV, cos(2*pi*t/T_HB), sin(2*pi*t/T_HB), theta] to
dz/dt; the first reduced state is the LV volume itself, so reading the
output is just reading z[0].  Periodicity in time is built in through the
angle encoding, which is what makes the surrogate usable beyond the time
horizon seen in training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels as K
from .params import ParamVector
from .transients import Transient

__all__ = [
    "RomArchitecture",
    "RomModel",
    "make_model",
    "unpack_weights",
    "init_weights",
    "nn_eval",
    "nn_input_jacobian",
    "rom_rhs",
    "rom_volume",
    "rom_initial_state",
    "simulate_rom",
]


@dataclass(frozen=True)
class RomArchitecture:
    """Shape of the surrogate: reduced states, exposed parameters, network."""

    n_z: int
    n_params: int
    layers: int
    neurons: int
    t_hb: float

    def __post_init__(self):
        if self.n_z < 1:
            raise ValueError("n_z must be >= 1")
        if self.n_params < 0:
            raise ValueError("n_params must be >= 0")
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if self.layers > 0 and self.neurons < 1:
            raise ValueError("neurons must be >= 1 for hidden layers")
        if self.t_hb <= 0:
            raise ValueError("t_hb must be positive")

    @property
    def n_inputs(self) -> int:
        return self.n_z + self.n_params + 3

    @property
    def n_weights(self) -> int:
        n_in, n_out, h, L = self.n_inputs, self.n_z, self.neurons, self.layers
        if L == 0:
            return n_out * (n_in + 1)
        return (h * (n_in + 1) + (L - 1) * h * (h + 1) + n_out * (h + 1))

    def to_json_dict(self) -> dict:
        return {"n_z": self.n_z, "n_params": self.n_params,
                "layers": self.layers, "neurons": self.neurons,
                "t_hb": self.t_hb}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "RomArchitecture":
        return cls(n_z=int(obj["n_z"]), n_params=int(obj["n_params"]),
                   layers=int(obj["layers"]), neurons=int(obj["neurons"]),
                   t_hb=float(obj["t_hb"]))


def unpack_weights(arch: RomArchitecture, w: np.ndarray):
    """Split the flat weight vector into (W1, b1, Wh, bh, W2, b2).

    Layout: [W1 row-major, b1, (Wh[l], bh[l]) per extra hidden layer,
    W2 row-major, b2]; with layers == 0 only (W1, b1) are meaningful and the
    remaining arrays are empty placeholders.
    """
    w = np.ascontiguousarray(w, dtype=float)
    if w.shape != (arch.n_weights,):
        raise ValueError(
            f"weight vector has length {w.size}, architecture needs "
            f"{arch.n_weights}"
        )
    n_in, n_out, h, L = arch.n_inputs, arch.n_z, arch.neurons, arch.layers
    if L == 0:
        W1 = w[:n_out * n_in].reshape(n_out, n_in).copy()
        b1 = w[n_out * n_in:].copy()
        Wh = np.zeros((0, 1, 1))
        bh = np.zeros((0, 1))
        W2 = np.zeros((0, 0))
        b2 = np.zeros(0)
        return W1, b1, Wh, bh, W2, b2
    pos = 0
    W1 = w[pos:pos + h * n_in].reshape(h, n_in).copy()
    pos += h * n_in
    b1 = w[pos:pos + h].copy()
    pos += h
    Wh = np.zeros((max(L - 1, 0), h, h)) if L > 1 else np.zeros((0, h, h))
    bh = np.zeros((max(L - 1, 0), h)) if L > 1 else np.zeros((0, h))
    for l in range(L - 1):
        Wh[l] = w[pos:pos + h * h].reshape(h, h)
        pos += h * h
        bh[l] = w[pos:pos + h]
        pos += h
    W2 = w[pos:pos + n_out * h].reshape(n_out, h).copy()
    pos += n_out * h
    b2 = w[pos:pos + n_out].copy()
    return W1, b1, np.ascontiguousarray(Wh), np.ascontiguousarray(bh), W2, b2


def init_weights(arch: RomArchitecture, rng: np.random.Generator,
                 scale: float = 0.1) -> np.ndarray:
    """Uniform init in [-scale, scale]; small so early dynamics stay mild."""
    return rng.uniform(-scale, scale, size=arch.n_weights)


@dataclass(frozen=True)
class RomModel:
    """Trained surrogate: architecture, flat weights, normalization, z0."""

    arch: RomArchitecture
    w: np.ndarray
    in_center: np.ndarray     # (n_inputs,)
    in_halfwidth: np.ndarray  # (n_inputs,)
    out_scale: np.ndarray     # (n_z,)
    v0: float
    param_names: tuple[str, ...] = ()

    def __post_init__(self):
        w = np.ascontiguousarray(self.w, dtype=float)
        ic = np.ascontiguousarray(self.in_center, dtype=float)
        ih = np.ascontiguousarray(self.in_halfwidth, dtype=float)
        osc = np.ascontiguousarray(self.out_scale, dtype=float)
        if w.shape != (self.arch.n_weights,):
            raise ValueError(
                f"weight vector length {w.size} does not match architecture "
                f"count {self.arch.n_weights}"
            )
        if ic.shape != (self.arch.n_inputs,) or ih.shape != (self.arch.n_inputs,):
            raise ValueError("normalization arrays must have n_inputs entries")
        if osc.shape != (self.arch.n_z,):
            raise ValueError("out_scale must have n_z entries")
        if not (ih > 0).all():
            raise ValueError("normalization half-widths must be positive")
        if not (osc > 0).all():
            raise ValueError("output scales must be positive")
        if len(self.param_names) != self.arch.n_params:
            raise ValueError("param_names must match n_params")
        for a in (w, ic, ih, osc):
            a.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "in_center", ic)
        object.__setattr__(self, "in_halfwidth", ih)
        object.__setattr__(self, "out_scale", osc)
        object.__setattr__(self, "param_names", tuple(self.param_names))

    def with_weights(self, w: np.ndarray) -> "RomModel":
        return RomModel(arch=self.arch, w=w, in_center=self.in_center.copy(),
                        in_halfwidth=self.in_halfwidth.copy(),
                        out_scale=self.out_scale.copy(), v0=self.v0,
                        param_names=self.param_names)

    def unpack(self):
        return unpack_weights(self.arch, self.w)

    def normalize_inputs(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.in_center) / self.in_halfwidth

    def denormalize_inputs(self, xn: np.ndarray) -> np.ndarray:
        return np.asarray(xn, dtype=float) * self.in_halfwidth + self.in_center

    def normalized_theta(self, theta_m: np.ndarray) -> np.ndarray:
        th = np.asarray(theta_m, dtype=float)
        if th.shape != (self.arch.n_params,):
            raise ValueError(
                f"theta must have {self.arch.n_params} entries, got {th.shape}"
            )
        off = self.arch.n_z + 3
        return (th - self.in_center[off:]) / self.in_halfwidth[off:]

    def to_json_dict(self) -> dict:
        return {
            "architecture": self.arch.to_json_dict(),
            "normalization": {
                "in_center": self.in_center.tolist(),
                "in_halfwidth": self.in_halfwidth.tolist(),
                "out_scale": self.out_scale.tolist(),
            },
            "weights": self.w.tolist(),
            "v0": self.v0,
            "param_names": list(self.param_names),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "RomModel":
        norm = obj["normalization"]
        return cls(
            arch=RomArchitecture.from_json_dict(obj["architecture"]),
            w=np.array(obj["weights"], dtype=float),
            in_center=np.array(norm["in_center"], dtype=float),
            in_halfwidth=np.array(norm["in_halfwidth"], dtype=float),
            out_scale=np.array(norm["out_scale"], dtype=float),
            v0=float(obj["v0"]),
            param_names=tuple(obj.get("param_names", ())),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "RomModel":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def make_model(arch: RomArchitecture, w: np.ndarray | None = None,
               in_center: np.ndarray | None = None,
               in_halfwidth: np.ndarray | None = None,
               out_scale: np.ndarray | None = None,
               v0: float = 100.0,
               param_names: tuple[str, ...] | None = None) -> RomModel:
    """RomModel with identity normalization defaults; handy for tests."""
    if w is None:
        w = np.zeros(arch.n_weights)
    if in_center is None:
        in_center = np.zeros(arch.n_inputs)
    if in_halfwidth is None:
        in_halfwidth = np.ones(arch.n_inputs)
    if out_scale is None:
        out_scale = np.ones(arch.n_z)
    if param_names is None:
        param_names = tuple(f"theta_{i}" for i in range(arch.n_params))
    return RomModel(arch=arch, w=np.asarray(w, dtype=float),
                    in_center=np.asarray(in_center, dtype=float),
                    in_halfwidth=np.asarray(in_halfwidth, dtype=float),
                    out_scale=np.asarray(out_scale, dtype=float),
                    v0=v0, param_names=param_names)


def _forward(model: RomModel, x_norm: np.ndarray) -> np.ndarray:
    W1, b1, Wh, bh, W2, b2 = model.unpack()
    L = model.arch.layers
    n_h = W1.shape[0] if L > 0 else 1
    hcache = np.empty((max(L, 1), n_h))
    y = np.empty(model.arch.n_z)
    K.nn_forward(np.ascontiguousarray(x_norm, dtype=float),
                 W1, b1, Wh, bh, W2, b2, L, hcache, y)
    return y


def nn_eval(model: RomModel, inputs: np.ndarray) -> np.ndarray:
    """Network output in physical units for physical inputs.

    ``inputs`` is [z..., p_lv, cos, sin, theta...]; it is normalized with
    the model's affine scalings, pushed through the network, and the output
    is scaled back.
    """
    x = np.asarray(inputs, dtype=float)
    if x.shape != (model.arch.n_inputs,):
        raise ValueError(
            f"expected {model.arch.n_inputs} inputs, got shape {x.shape}"
        )
    return model.out_scale * _forward(model, model.normalize_inputs(x))


def nn_input_jacobian(model: RomModel, inputs: np.ndarray) -> np.ndarray:
    """Analytic Jacobian of nn_eval wrt the physical inputs, (n_z, n_in)."""
    x = np.asarray(inputs, dtype=float)
    if x.shape != (model.arch.n_inputs,):
        raise ValueError(
            f"expected {model.arch.n_inputs} inputs, got shape {x.shape}"
        )
    W1, b1, Wh, bh, W2, b2 = model.unpack()
    L = model.arch.layers
    n_h = W1.shape[0] if L > 0 else 1
    hcache = np.empty((max(L, 1), n_h))
    y = np.empty(model.arch.n_z)
    xn = np.ascontiguousarray(model.normalize_inputs(x))
    K.nn_forward(xn, W1, b1, Wh, bh, W2, b2, L, hcache, y)
    dfdx = np.empty((model.arch.n_z, model.arch.n_inputs))
    dfdw = np.empty((model.arch.n_z, model.arch.n_weights))
    d_cur = np.empty(n_h)
    d_prev = np.empty(n_h)
    K.nn_backprop(xn, W1, b1, Wh, bh, W2, b2, L, hcache, d_cur, d_prev,
                  dfdx, dfdw)
    return (model.out_scale[:, None] * dfdx) / model.in_halfwidth[None, :]


def rom_rhs(z: np.ndarray, p_lv: float, t: float, theta_m: np.ndarray,
            model: RomModel) -> np.ndarray:
    """dz/dt at time t; exactly periodic in t with period t_hb."""
    z = np.asarray(z, dtype=float)
    if z.shape != (model.arch.n_z,):
        raise ValueError(f"z must have {model.arch.n_z} entries")
    if not np.isfinite(z).all():
        raise ValueError("non-finite reduced state")
    ang = K.phase_angle(float(t), model.arch.t_hb)
    x = np.concatenate([
        z, [float(p_lv), np.cos(ang), np.sin(ang)],
        np.asarray(theta_m, dtype=float),
    ])
    return nn_eval(model, x)


def rom_volume(z: np.ndarray) -> float:
    """LV volume of the surrogate: the first reduced state."""
    z = np.asarray(z, dtype=float)
    if z.size < 1:
        raise ValueError("empty reduced state")
    return float(z.flat[0])


def rom_initial_state(model: RomModel) -> np.ndarray:
    """z0 = (v0, 0, ..., 0)."""
    z0 = np.zeros(model.arch.n_z)
    z0[0] = model.v0
    return z0


def simulate_rom(p_lv: Callable[[float], float] | np.ndarray,
                 theta_m: np.ndarray, model: RomModel, T: float, dt: float,
                 z0: np.ndarray | None = None,
                 params_c: ParamVector | None = None
                 ) -> tuple[Transient, np.ndarray]:
    """Forward Euler on the surrogate driven by a prescribed pressure.

    ``p_lv`` is either a callable of time or an array of pressures on the
    step grid (n_steps + 1 values).  Returns the recorded transient and the
    full reduced-state trajectory.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n_steps = int(round(T / dt))
    t_grid = dt * np.arange(n_steps + 1)
    if callable(p_lv):
        p_steps = np.array([float(p_lv(t)) for t in t_grid])
    else:
        p_steps = np.ascontiguousarray(p_lv, dtype=float)
        if p_steps.shape != (n_steps + 1,):
            raise ValueError(
                f"pressure array must have {n_steps + 1} values, got "
                f"{p_steps.shape}"
            )
    ang = 2.0 * np.pi * ((t_grid / model.arch.t_hb) % 1.0)
    cs, sn = np.cos(ang), np.sin(ang)
    if z0 is None:
        z0 = rom_initial_state(model)
    theta = np.asarray(theta_m, dtype=float)
    xtheta = model.normalized_theta(theta)
    W1, b1, Wh, bh, W2, b2 = model.unpack()
    z_traj = np.empty((n_steps + 1, model.arch.n_z))
    status, step = K.rom_open_loop(
        np.ascontiguousarray(z0, dtype=float), p_steps, cs, sn, xtheta,
        n_steps, dt, model.in_center, model.in_halfwidth, model.out_scale,
        W1, b1, Wh, bh, W2, b2, model.arch.layers, z_traj)
    if status != 0:
        raise RuntimeError(f"non-finite surrogate state at step {step} "
                           f"(t = {step * dt})")
    pm = ParamVector.from_dict(
        {n: v for n, v in zip(model.param_names, theta)})
    pc = params_c if params_c is not None else ParamVector(entries=())
    rec = Transient(t0=0.0, dt=dt, t_hb=model.arch.t_hb, p_lv=p_steps,
                    v_lv=z_traj[:, 0].copy(), params_m=pm, params_c=pc)
    return rec, z_traj
