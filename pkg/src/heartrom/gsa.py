"""Variance-based global sensitivity analysis over the coupled surrogate.

First-order indices use the B*(AB - A) estimator and total-effect indices
the Jansen estimator, both normalized by the variance of the pooled A and B
evaluations; confidence half-widths come from a seeded bootstrap over the
base sample.  Model evaluations run each parameter row to its limit cycle
and read the biomarkers off the last beat.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._parallel import parallel_map
from .annrom import RomModel
from .circulation import CircParams
from .coupledsim import (ClosedLoop, CoupledConfig, CouplingError,
                         QOI_NAMES, RomVentricle, extract_qois,
                         run_to_limit_cycle, split_overrides)
from .params import ParamSpace
from .refventricle import RefVentricleParams
from .sampling import SampleDesign, saltelli_blocks, saltelli_design

__all__ = ["SobolResult", "sobol_indices", "run_gsa", "evaluate_design"]

_VAR_FLOOR = 1e-14


@dataclass(frozen=True)
class SobolResult:
    """First-order and total-effect indices with bootstrap half-widths."""

    param_names: tuple[str, ...]
    qoi_names: tuple[str, ...]
    s1: np.ndarray        # (n_params, n_qois)
    st: np.ndarray
    s1_ci: np.ndarray     # 95% half-widths
    st_ci: np.ndarray
    defined: np.ndarray   # (n_qois,) bool; False when output variance ~ 0
    n_base: int
    n_failed: int = 0

    def to_json_dict(self) -> dict:
        return {
            "param_names": list(self.param_names),
            "qoi_names": list(self.qoi_names),
            "s1": self.s1.tolist(),
            "st": self.st.tolist(),
            "s1_ci": self.s1_ci.tolist(),
            "st_ci": self.st_ci.tolist(),
            "defined": self.defined.tolist(),
            "n_base": self.n_base,
            "n_failed": self.n_failed,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()))

    def matrix_csv(self, which: str) -> str:
        mat = getattr(self, which)
        lines = ["param," + ",".join(self.qoi_names)]
        for i, name in enumerate(self.param_names):
            lines.append(name + "," + ",".join(f"{x:.17g}" for x in mat[i]))
        return "\n".join(lines) + "\n"


def _estimate(f_a: np.ndarray, f_b: np.ndarray, f_ab: np.ndarray
              ) -> tuple[np.ndarray, np.ndarray, bool]:
    """S1/ST for one QoI from (n,), (n,), (d, n) evaluations."""
    pooled = np.concatenate([f_a, f_b])
    var = float(np.var(pooled))
    mean = float(np.mean(pooled))
    if var <= _VAR_FLOOR * max(mean * mean, 1.0):
        d = f_ab.shape[0]
        return np.full(d, np.nan), np.full(d, np.nan), False
    s1 = np.mean(f_b[None, :] * (f_ab - f_a[None, :]), axis=1) / var
    st = 0.5 * np.mean((f_a[None, :] - f_ab) ** 2, axis=1) / var
    return s1, st, True


def sobol_indices(f_a: np.ndarray, f_b: np.ndarray, f_ab: np.ndarray,
                  param_names=None, qoi_names=None, n_bootstrap: int = 1000,
                  seed: int = 0) -> SobolResult:
    """Sobol indices from Saltelli-design evaluations.

    f_a, f_b: (n_base, n_qois); f_ab: (n_params, n_base, n_qois).  QoIs whose
    pooled variance is negligible relative to the squared mean are flagged
    undefined instead of propagating NaNs silently.
    """
    f_a = np.atleast_2d(np.asarray(f_a, dtype=float))
    f_b = np.atleast_2d(np.asarray(f_b, dtype=float))
    f_ab = np.asarray(f_ab, dtype=float)
    if f_ab.ndim == 2:
        f_ab = f_ab[:, :, None]
    d, n, q = f_ab.shape
    if f_a.shape != (n, q) or f_b.shape != (n, q):
        raise ValueError("A/B/AB evaluation blocks are inconsistent")
    if param_names is None:
        param_names = tuple(f"x{i}" for i in range(d))
    if qoi_names is None:
        qoi_names = tuple(f"y{j}" for j in range(q))
    s1 = np.empty((d, q))
    st = np.empty((d, q))
    defined = np.empty(q, dtype=bool)
    for j in range(q):
        s1[:, j], st[:, j], defined[j] = _estimate(f_a[:, j], f_b[:, j],
                                                   f_ab[:, :, j])
    rng = np.random.default_rng(seed)
    boots_s1 = np.empty((n_bootstrap, d, q))
    boots_st = np.empty((n_bootstrap, d, q))
    for b in range(n_bootstrap):
        idx = rng.integers(0, n, n)
        for j in range(q):
            if not defined[j]:
                boots_s1[b, :, j] = np.nan
                boots_st[b, :, j] = np.nan
                continue
            bs1, bst, ok = _estimate(f_a[idx, j], f_b[idx, j], f_ab[:, idx, j])
            boots_s1[b, :, j] = bs1
            boots_st[b, :, j] = bst
    with np.errstate(invalid="ignore"):
        s1_ci = 1.96 * np.nanstd(boots_s1, axis=0)
        st_ci = 1.96 * np.nanstd(boots_st, axis=0)
    return SobolResult(param_names=tuple(param_names),
                       qoi_names=tuple(qoi_names), s1=s1, st=st,
                       s1_ci=s1_ci, st_ci=st_ci, defined=defined,
                       n_base=n, n_failed=0)


def _evaluate_row(args):
    row, names, model, cfg = args
    ref_kw, circ_kw = split_overrides(names, row)
    theta_by_name = RefVentricleParams().replace(**ref_kw).as_dict()
    theta = np.array([theta_by_name[n] for n in model.param_names])
    circ = CircParams().replace(**circ_kw)
    try:
        result, _, _ = run_to_limit_cycle(
            RomVentricle(model, theta), ClosedLoop(circ), cfg)
        return extract_qois(result.last_beat()).as_array()
    except (CouplingError, ValueError):
        return np.full(len(QOI_NAMES), np.nan)


def evaluate_design(design: SampleDesign, model: RomModel,
                    cfg: CoupledConfig, jobs: int = 1) -> np.ndarray:
    """Biomarkers of the converged beat for every design row, (n, n_qois).

    Failed rows come back as NaN rows; callers decide how to handle them.
    """
    names = design.space.names
    items = [(design.points[i], names, model, cfg) for i in range(design.n)]
    rows = parallel_map(_evaluate_row, items, jobs)
    return np.vstack(rows)


def run_gsa(space: ParamSpace, model: RomModel, n_base: int,
            cfg: CoupledConfig | None = None, seed: int = 0,
            jobs: int = 1, max_failure_fraction: float = 0.05
            ) -> SobolResult:
    """Saltelli-design sensitivity analysis of the coupled surrogate.

    The space may mix ventricle-model and circulation dimensions, but the
    ventricle dimensions must be ones the surrogate was trained on.  Failed
    simulations are imputed by the per-QoI column mean and counted; more
    than ``max_failure_fraction`` failures is a hard error.
    """
    if cfg is None:
        cfg = CoupledConfig()
    from .coupledsim import _REF_FIELDS
    theta_dims = [n for n in space.names if n in _REF_FIELDS]
    unknown = set(theta_dims) - set(model.param_names)
    if unknown:
        raise ValueError(
            f"space varies ventricle parameters {sorted(unknown)} the "
            f"surrogate was not trained on; indices can only be estimated "
            f"for trained parameters"
        )
    design = saltelli_design(space, n_base)
    y = evaluate_design(design, model, cfg, jobs=jobs)
    failed = np.isnan(y).any(axis=1)
    n_failed = int(failed.sum())
    if n_failed > max_failure_fraction * y.shape[0]:
        raise RuntimeError(
            f"{n_failed}/{y.shape[0]} coupled simulations failed "
            f"(> {max_failure_fraction:.0%})"
        )
    if n_failed:
        col_mean = np.nanmean(y, axis=0)
        y = np.where(np.isnan(y), col_mean[None, :], y)
    d = space.ndim
    f_a = y[:n_base]
    f_b = y[n_base:2 * n_base]
    f_ab = y[2 * n_base:(2 + d) * n_base].reshape(d, n_base, -1)
    result = sobol_indices(f_a, f_b, f_ab, param_names=space.names,
                           qoi_names=QOI_NAMES, seed=seed)
    return SobolResult(param_names=result.param_names,
                       qoi_names=result.qoi_names, s1=result.s1,
                       st=result.st, s1_ci=result.s1_ci, st_ci=result.st_ci,
                       defined=result.defined, n_base=n_base,
                       n_failed=n_failed)
