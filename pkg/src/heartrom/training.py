"""Trajectory-fitting of the ODE surrogate.

The loss is the trapezoidal discretization of the integrated squared volume
error over every training transient, plus a Tikhonov term on the weights;
the surrogate trajectory is produced by forward Euler driven by the
recorded pressure.  Gradients are exact discrete sensitivities of that
recursion (tangent propagation), which yields the full residual Jacobian
needed by the Levenberg-Marquardt loop and is verifiable against finite
differences to round-off-limited accuracy.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from . import _kernels as K
from .annrom import RomArchitecture, RomModel, init_weights, unpack_weights
from .coupledsim import CoupledConfig, lv_errors_vs_record, mean_lv_error
from .transients import Dataset, Transient

__all__ = [
    "TrainingConfig",
    "TrainingReport",
    "loss",
    "residual_jacobian",
    "train",
    "train_restarts",
    "cross_validate",
    "build_normalization",
    "infer_param_names",
    "DEFAULT_ARCH_SINGLE_PARAM",
    "DEFAULT_ARCH_FULL_PARAM",
    "DEFAULT_BETA_SINGLE_PARAM",
    "DEFAULT_BETA_FULL_PARAM",
]

# Hyperparameter settings selected by cross-validation for the two standard
# surrogates: contractility-only and full four-parameter.
DEFAULT_ARCH_SINGLE_PARAM = dict(n_z=2, n_params=1, layers=1, neurons=8)
DEFAULT_BETA_SINGLE_PARAM = 0.0
DEFAULT_ARCH_FULL_PARAM = dict(n_z=1, n_params=4, layers=1, neurons=12)
DEFAULT_BETA_FULL_PARAM = 0.01


@dataclass(frozen=True)
class TrainingConfig:
    dt_ode: float = 0.005
    dt_quad: float = 0.010
    beta: float = 0.0
    max_lm_iters: int = 2000
    lm_lambda0: float = 1e-2
    lm_up: float = 10.0
    lm_down: float = 0.1
    seed: int = 0
    n_restarts: int = 3
    grad_tol: float = 1e-10
    lambda_max: float = 1e12
    init_scale: float = 0.1

    def __post_init__(self):
        if self.dt_ode <= 0 or self.dt_quad <= 0:
            raise ValueError("time steps must be positive")
        ratio = self.dt_quad / self.dt_ode
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("dt_quad must be an integer multiple of dt_ode")
        if not (self.lm_up > 1.0 > self.lm_down > 0.0):
            raise ValueError("need lm_up > 1 > lm_down > 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.max_lm_iters < 0 or self.n_restarts < 1:
            raise ValueError("bad iteration/restart counts")


@dataclass(frozen=True)
class TrainingReport:
    final_loss: float
    per_sample_errors: tuple[float, ...]
    history: tuple[dict, ...]   # per LM iteration: loss, lambda, grad_norm
    wall_time_s: float
    n_iters: int
    restart_index: int
    restart_losses: tuple[float, ...]

    def to_json_dict(self) -> dict:
        return {
            "final_loss": self.final_loss,
            "per_sample_errors": list(self.per_sample_errors),
            "history": list(self.history),
            "wall_time_s": self.wall_time_s,
            "n_iters": self.n_iters,
            "restart_index": self.restart_index,
            "restart_losses": list(self.restart_losses),
        }


@dataclass(frozen=True)
class _SamplePrep:
    """Per-record arrays on the training grids."""

    n_steps: int
    p_steps: np.ndarray      # (n_steps + 1,)
    cs: np.ndarray           # (n_steps,)
    sn: np.ndarray           # (n_steps,)
    theta: np.ndarray        # raw parameter values, (n_params,)
    quad_idx: np.ndarray     # (n_quad,) int64 step indices
    sqrt_w: np.ndarray       # (n_quad,)
    v_quad: np.ndarray       # (n_quad,)
    v_norm: float            # ||v_quad||_2, for relative errors


def infer_param_names(ds: Dataset, n_params: int) -> tuple[str, ...]:
    """Exposed parameter names: the theta dimensions that vary across the
    dataset, falling back to leading names when nothing (or everything)
    varies."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    names = ds[0].params_m.names
    values = np.array([[r.params_m[n] for n in names] for r in ds])
    varying = [n for i, n in enumerate(names)
               if values[:, i].max() - values[:, i].min() > 0]
    if len(varying) == n_params:
        return tuple(varying)
    if len(varying) < n_params:
        fill = [n for n in names if n not in varying]
        return tuple(varying + fill[: n_params - len(varying)])
    raise ValueError(
        f"{len(varying)} parameters vary across the dataset but the "
        f"architecture exposes {n_params}; pass param_names explicitly"
    )


def _prepare_sample(rec: Transient, cfg: TrainingConfig, t_hb: float,
                    param_names) -> _SamplePrep:
    duration = (len(rec) - 1) * rec.dt
    n_steps = duration / cfg.dt_ode
    n_quad = duration / cfg.dt_quad
    if abs(n_steps - round(n_steps)) > 1e-9 or abs(n_quad - round(n_quad)) > 1e-9:
        raise ValueError(
            f"record duration {duration} s is not a multiple of the ODE/"
            f"quadrature steps ({cfg.dt_ode}, {cfg.dt_quad})"
        )
    n_steps, n_quad = int(round(n_steps)), int(round(n_quad))
    t_steps = cfg.dt_ode * np.arange(n_steps + 1)
    t_rec = rec.t
    p_steps = np.interp(t_steps, t_rec, rec.p_lv)
    ang = 2.0 * np.pi * ((t_steps[:-1] / t_hb) % 1.0)
    t_quad = cfg.dt_quad * np.arange(n_quad + 1)
    v_quad = np.interp(t_quad, t_rec, rec.v_lv)
    w = np.full(n_quad + 1, cfg.dt_quad)
    w[0] *= 0.5
    w[-1] *= 0.5
    quad_idx = np.round(t_quad / cfg.dt_ode).astype(np.int64)
    theta = np.array([rec.params_m[n] for n in param_names])
    return _SamplePrep(
        n_steps=n_steps, p_steps=p_steps, cs=np.cos(ang), sn=np.sin(ang),
        theta=theta, quad_idx=quad_idx, sqrt_w=np.sqrt(w), v_quad=v_quad,
        v_norm=float(np.linalg.norm(v_quad)))


def build_normalization(ds: Dataset, arch: RomArchitecture, param_names
                        ) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Affine input scalings from training-set min/max.

    Volume scaling is shared by all reduced states; outputs are scaled by
    the volume half-width over one heartbeat period.
    """
    v_all = np.concatenate([r.v_lv for r in ds])
    p_all = np.concatenate([r.p_lv for r in ds])

    def center_halfwidth(x):
        lo, hi = float(np.min(x)), float(np.max(x))
        c, hw = 0.5 * (lo + hi), 0.5 * (hi - lo)
        if hw <= 0:
            hw = max(1.0, abs(c))
        return c, hw

    v_c, v_hw = center_halfwidth(v_all)
    p_c, p_hw = center_halfwidth(p_all)
    in_center = np.zeros(arch.n_inputs)
    in_halfwidth = np.ones(arch.n_inputs)
    in_center[:arch.n_z] = v_c
    in_halfwidth[:arch.n_z] = v_hw
    in_center[arch.n_z] = p_c
    in_halfwidth[arch.n_z] = p_hw
    for j, name in enumerate(param_names):
        vals = np.array([r.params_m[name] for r in ds])
        c, hw = center_halfwidth(vals)
        in_center[arch.n_z + 3 + j] = c
        in_halfwidth[arch.n_z + 3 + j] = hw
    out_scale = np.full(arch.n_z, v_hw / arch.t_hb)
    v0 = float(np.mean([r.v_lv[0] for r in ds]))
    return in_center, in_halfwidth, out_scale, v0


def _model_from_w(template: RomModel, w: np.ndarray) -> RomModel:
    return template.with_weights(w)


def _sample_residual_jacobian(prep: _SamplePrep, model: RomModel,
                              w: np.ndarray, cfg: TrainingConfig):
    arch = model.arch
    W1, b1, Wh, bh, W2, b2 = unpack_weights(arch, w)
    xtheta = model.normalized_theta(prep.theta)
    z0 = np.zeros(arch.n_z)
    z0[0] = model.v0
    n_quad = prep.quad_idx.size
    r = np.empty(n_quad)
    J = np.empty((n_quad, arch.n_weights))
    status, step = K.rom_traj_res_jac(
        z0, prep.p_steps, prep.cs, prep.sn, xtheta, prep.n_steps, cfg.dt_ode,
        model.in_center, model.in_halfwidth, model.out_scale,
        W1, b1, Wh, bh, W2, b2, arch.layers, prep.quad_idx, prep.sqrt_w,
        prep.v_quad, r, J)
    if status != 0:
        raise FloatingPointError(f"non-finite trajectory at step {step}")
    return r, J


def _sample_residual(prep: _SamplePrep, model: RomModel, w: np.ndarray,
                     cfg: TrainingConfig) -> np.ndarray:
    arch = model.arch
    W1, b1, Wh, bh, W2, b2 = unpack_weights(arch, w)
    xtheta = model.normalized_theta(prep.theta)
    z0 = np.zeros(arch.n_z)
    z0[0] = model.v0
    z_traj = np.empty((prep.n_steps + 1, arch.n_z))
    status, step = K.rom_open_loop(
        z0, prep.p_steps, prep.cs, prep.sn, xtheta, prep.n_steps, cfg.dt_ode,
        model.in_center, model.in_halfwidth, model.out_scale,
        W1, b1, Wh, bh, W2, b2, arch.layers, z_traj)
    if status != 0:
        raise FloatingPointError(f"non-finite trajectory at step {step}")
    return prep.sqrt_w * (z_traj[prep.quad_idx, 0] - prep.v_quad)


def _preps_for(model: RomModel, ds: Dataset, cfg: TrainingConfig):
    return [_prepare_sample(rec, cfg, model.arch.t_hb, model.param_names)
            for rec in ds]


def loss(model: RomModel, ds: Dataset, cfg: TrainingConfig) -> float:
    """Trapezoidal trajectory misfit plus beta * |w|^2."""
    preps = _preps_for(model, ds, cfg)
    return _loss_from_preps(preps, model, model.w, cfg)


def _loss_from_preps(preps, model: RomModel, w: np.ndarray,
                     cfg: TrainingConfig) -> float:
    total = cfg.beta * float(w @ w)
    for prep in preps:
        r = _sample_residual(prep, model, w, cfg)
        total += float(r @ r)
    return total


def residual_jacobian(model: RomModel, ds: Dataset, cfg: TrainingConfig
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Stacked residual vector and its exact Jacobian wrt the weights.

    The squared norm of the residual equals the loss to round-off; the last
    n_weights entries are the sqrt(beta)-scaled regularizer block.
    """
    preps = _preps_for(model, ds, cfg)
    return _residual_jacobian_from_preps(preps, model, model.w, cfg)


def _residual_jacobian_from_preps(preps, model: RomModel, w: np.ndarray,
                                  cfg: TrainingConfig):
    r_blocks, J_blocks = [], []
    for prep in preps:
        r, J = _sample_residual_jacobian(prep, model, w, cfg)
        r_blocks.append(r)
        J_blocks.append(J)
    sb = np.sqrt(cfg.beta)
    r_blocks.append(sb * w)
    J_blocks.append(sb * np.eye(w.size))
    return np.concatenate(r_blocks), np.vstack(J_blocks)


def _lm_minimize(preps, template: RomModel, w0: np.ndarray,
                 cfg: TrainingConfig):
    """Levenberg-Marquardt on the stacked residual; returns (w, history)."""
    w = w0.copy()
    r, J = _residual_jacobian_from_preps(preps, template, w, cfg)
    cur_loss = float(r @ r)
    lam = cfg.lm_lambda0
    history = []
    eye = np.eye(w.size)
    for it in range(cfg.max_lm_iters):
        g = J.T @ r
        gnorm = float(np.linalg.norm(g))
        history.append({"iter": it, "loss": cur_loss, "lambda": lam,
                        "grad_norm": gnorm})
        if gnorm < cfg.grad_tol:
            break
        jtj = J.T @ J
        accepted = False
        while lam <= cfg.lambda_max:
            try:
                delta = scipy.linalg.solve(jtj + lam * eye, -g,
                                           assume_a="pos")
            except scipy.linalg.LinAlgError:
                lam *= cfg.lm_up
                continue
            w_try = w + delta
            try:
                loss_try = _loss_from_preps(preps, template, w_try, cfg)
            except FloatingPointError:
                loss_try = np.inf
            if np.isfinite(loss_try) and loss_try < cur_loss:
                w = w_try
                cur_loss = loss_try
                lam = max(lam * cfg.lm_down, 1e-14)
                accepted = True
                break
            lam *= cfg.lm_up
        if not accepted:
            break
        r, J = _residual_jacobian_from_preps(preps, template, w, cfg)
    return w, cur_loss, history


def train_restarts(arch: RomArchitecture, ds_train: Dataset,
                   cfg: TrainingConfig, param_names=None
                   ) -> list[tuple[RomModel, TrainingReport]]:
    """Train n_restarts surrogates from independent weight initializations.

    Each restart is deterministic given cfg.seed.  Raises when every
    restart diverges.
    """
    if len(ds_train) == 0:
        raise ValueError("empty training dataset")
    if param_names is None:
        param_names = infer_param_names(ds_train, arch.n_params)
    param_names = tuple(param_names)
    if len(param_names) != arch.n_params:
        raise ValueError("param_names must match the architecture")
    in_c, in_hw, out_s, v0 = build_normalization(ds_train, arch, param_names)
    template = RomModel(arch=arch, w=np.zeros(arch.n_weights), in_center=in_c,
                        in_halfwidth=in_hw, out_scale=out_s, v0=v0,
                        param_names=param_names)
    preps = [_prepare_sample(rec, cfg, arch.t_hb, param_names)
             for rec in ds_train]
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_restarts)
    out = []
    failures = []
    for idx, seq in enumerate(seeds):
        t_start = time.perf_counter()
        w0 = init_weights(arch, np.random.default_rng(seq), cfg.init_scale)
        try:
            w, final_loss, history = _lm_minimize(preps, template, w0, cfg)
        except FloatingPointError as exc:
            failures.append(f"restart {idx}: {exc}")
            continue
        model = _model_from_w(template, w)
        errs = []
        for prep in preps:
            r = _sample_residual(prep, model, w, cfg)
            e = r / prep.sqrt_w  # back to plain volume errors at the nodes
            errs.append(float(np.linalg.norm(e) / max(prep.v_norm, 1e-300)))
        report = TrainingReport(
            final_loss=final_loss, per_sample_errors=tuple(errs),
            history=tuple(history), wall_time_s=time.perf_counter() - t_start,
            n_iters=len(history), restart_index=idx,
            restart_losses=(final_loss,))
        out.append((model, report))
    if not out:
        raise RuntimeError(
            "all training restarts diverged: " + "; ".join(failures))
    return out


def train(arch: RomArchitecture, ds_train: Dataset, cfg: TrainingConfig,
          param_names=None) -> tuple[RomModel, TrainingReport]:
    """Best-of-n_restarts training by final training loss."""
    runs = train_restarts(arch, ds_train, cfg, param_names)
    losses = [rep.final_loss for _, rep in runs]
    best = int(np.argmin(losses))
    model, rep = runs[best]
    rep = replace(rep, restart_index=best, restart_losses=tuple(losses))
    return model, rep


def cross_validate(settings, ds: Dataset, k: int, cfg: TrainingConfig,
                   param_names=None, coupled_cfg: CoupledConfig | None = None,
                   jobs: int = 1) -> list[dict]:
    """k-fold hyperparameter comparison.

    For every (architecture, beta) setting and every fold, the model is
    trained on the other folds with three random initializations and the
    one with the lowest validation error is kept.  Validation error is the
    mean relative error on the LV usages (p/V series and beat biomarkers)
    of the coupled surrogate rerun against the held-out records; the
    validation/training error ratio flags overfitting.  Returns a table of
    settings ranked by fold-averaged validation error.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(ds) < k:
        raise ValueError("dataset smaller than the number of folds")
    if coupled_cfg is None:
        coupled_cfg = CoupledConfig()
    folds = np.array_split(np.arange(len(ds)), k)
    results = []
    for arch, beta in settings:
        run_cfg = replace(cfg, beta=beta, n_restarts=3)
        val_errors, train_errors = [], []
        for fold in folds:
            val_idx = set(int(i) for i in fold)
            train_idx = [i for i in range(len(ds)) if i not in val_idx]
            ds_train = ds.subset(train_idx)
            ds_val = ds.subset(sorted(val_idx))
            candidates = train_restarts(arch, ds_train, run_cfg, param_names)

            def val_error(model):
                rows = [lv_errors_vs_record(model, rec, coupled_cfg)
                        for rec in ds_val]
                return float(np.mean([mean_lv_error(r) for r in rows]))

            errs = [val_error(m) for m, _ in candidates]
            best = int(np.argmin(errs))
            model = candidates[best][0]
            val_errors.append(errs[best])
            train_rows = [lv_errors_vs_record(model, rec, coupled_cfg)
                          for rec in ds_train]
            train_errors.append(
                float(np.mean([mean_lv_error(r) for r in train_rows])))
        mean_val = float(np.mean(val_errors))
        mean_train = float(np.mean(train_errors))
        results.append({
            "n_z": arch.n_z, "layers": arch.layers, "neurons": arch.neurons,
            "beta": beta, "val_error": mean_val, "train_error": mean_train,
            "ratio": mean_val / mean_train if mean_train > 0 else np.inf,
        })
    results.sort(key=lambda r: r["val_error"])
    return results
