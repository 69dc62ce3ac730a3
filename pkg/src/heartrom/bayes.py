"""Bayesian parameter estimation with random-walk Metropolis.

The likelihood is Gaussian in the observed biomarkers with total covariance
Sigma = Sigma_rom + Sigma_exp (surrogate-approximation error plus
measurement error); priors are uniform boxes.  Chains are seeded
independently from one master seed and merged in a fixed order, so results
do not depend on how many run in parallel.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.stats import gaussian_kde

from ._parallel import parallel_map
from .annrom import RomModel
from .circulation import CircParams
from .coupledsim import (ClosedLoop, CoupledConfig, CouplingError, QOI_NAMES,
                         RomVentricle, extract_qois, run_to_limit_cycle,
                         split_overrides)
from .refventricle import RefVentricleParams

__all__ = [
    "InverseProblem",
    "PosteriorSamples",
    "CredibilityRegion",
    "log_posterior",
    "metropolis_chains",
    "run_mcmc",
    "credibility_region",
    "sigma_rom_from_errors",
    "potential_scale_reduction",
    "DEFAULT_SIGMA_ROM_ARTERIAL",
]

logger = logging.getLogger(__name__)

# Surrogate-error variance per arterial-pressure biomarker [mmHg^2],
# estimated from the validation-set error distribution.
DEFAULT_SIGMA_ROM_ARTERIAL = 0.2


def _check_psd(mat: np.ndarray, name: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(mat, dtype=float))
    if m.shape[0] != m.shape[1] or not np.allclose(m, m.T, atol=1e-12):
        raise ValueError(f"{name} must be a symmetric matrix")
    eig = np.linalg.eigvalsh(m)
    if eig.min() < -1e-12 * max(1.0, eig.max()):
        raise ValueError(f"{name} must be positive semidefinite")
    return m


@dataclass(frozen=True)
class InverseProblem:
    """Unknown parameters, observed biomarkers, and error covariances."""

    param_names: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray
    qoi_names: tuple[str, ...]
    y_obs: np.ndarray
    sigma_exp: np.ndarray
    sigma_rom: np.ndarray
    fixed: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        y = np.asarray(self.y_obs, dtype=float)
        d = len(self.param_names)
        if lo.shape != (d,) or hi.shape != (d,):
            raise ValueError("prior bounds must match param_names")
        if not (lo < hi).all():
            raise ValueError("prior box must have lower < upper")
        q = len(self.qoi_names)
        unknown = set(self.qoi_names) - set(QOI_NAMES)
        if unknown:
            raise ValueError(f"unknown QoI names: {sorted(unknown)}")
        if y.shape != (q,):
            raise ValueError("y_obs must match qoi_names")
        se = _check_psd(self.sigma_exp, "sigma_exp")
        sr = _check_psd(self.sigma_rom, "sigma_rom")
        if se.shape != (q, q) or sr.shape != (q, q):
            raise ValueError("covariances must be n_qois x n_qois")
        total = se + sr
        try:
            scipy.linalg.cholesky(total, lower=True)
        except scipy.linalg.LinAlgError:
            raise ValueError("sigma_rom + sigma_exp must be positive definite")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "y_obs", y)
        object.__setattr__(self, "sigma_exp", se)
        object.__setattr__(self, "sigma_rom", sr)

    @property
    def sigma_total(self) -> np.ndarray:
        return self.sigma_exp + self.sigma_rom

    def in_box(self, theta: np.ndarray) -> bool:
        t = np.asarray(theta, dtype=float)
        return bool((t >= self.lower).all() and (t <= self.upper).all())


def forward_qois(theta: np.ndarray, prob: InverseProblem, model: RomModel,
                 cfg: CoupledConfig) -> np.ndarray:
    """Coupled-surrogate biomarkers at theta (limit cycle, last beat)."""
    names = list(prob.param_names) + list(prob.fixed.keys())
    values = list(np.asarray(theta, dtype=float)) + list(prob.fixed.values())
    ref_kw, circ_kw = split_overrides(names, values)
    theta_by_name = RefVentricleParams().replace(**ref_kw).as_dict()
    theta_in = np.array([theta_by_name[n] for n in model.param_names])
    circ = CircParams().replace(**circ_kw)
    result, _, _ = run_to_limit_cycle(RomVentricle(model, theta_in),
                                      ClosedLoop(circ), cfg)
    qois = extract_qois(result.last_beat())
    return np.array([qois[name] for name in prob.qoi_names])


def log_posterior(theta, prob: InverseProblem, model: RomModel,
                  cfg: CoupledConfig | None = None) -> float:
    """Unnormalized log posterior; -inf outside the prior box or on
    simulation failure."""
    if cfg is None:
        cfg = CoupledConfig()
    theta = np.asarray(theta, dtype=float)
    if not prob.in_box(theta):
        return -np.inf
    try:
        g = forward_qois(theta, prob, model, cfg)
    except (CouplingError, ValueError, RuntimeError) as exc:
        logger.warning("forward simulation failed at theta=%s: %s",
                       theta.tolist(), exc)
        return -np.inf
    resid = prob.y_obs - g
    cho = scipy.linalg.cho_factor(prob.sigma_total, lower=True)
    return float(-0.5 * resid @ scipy.linalg.cho_solve(cho, resid))


@dataclass(frozen=True)
class PosteriorSamples:
    """Retained MCMC samples per chain, plus the prior box they live in."""

    param_names: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray
    chains: tuple[np.ndarray, ...]
    acceptance_rates: tuple[float, ...]
    burn_in: int
    jump_period: int
    seed: int

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        for i, ch in enumerate(self.chains):
            if ch.ndim != 2 or ch.shape[1] != len(self.param_names):
                raise ValueError(f"chain {i} has wrong shape {ch.shape}")
            if not ((ch >= lo - 1e-12).all() and (ch <= hi + 1e-12).all()):
                raise ValueError(f"chain {i} leaves the prior box")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def pooled(self) -> np.ndarray:
        return np.vstack(self.chains)

    @property
    def n_retained(self) -> int:
        return sum(ch.shape[0] for ch in self.chains)

    def to_csv(self, path: str | Path) -> None:
        lines = ["chain," + ",".join(self.param_names)]
        for ci, ch in enumerate(self.chains):
            for row in ch:
                lines.append(f"{ci}," + ",".join(f"{x:.17g}" for x in row))
        Path(path).write_text("\n".join(lines) + "\n")


def _run_chain(args):
    (log_post, lower, upper, samples_per_chain, burn_in, jump_period,
     scale, seed_state) = args
    rng = np.random.default_rng(seed_state)
    d = lower.size
    step = scale * (upper - lower)
    theta = lower + rng.random(d) * (upper - lower)
    lp = log_post(theta)
    retained = np.empty((samples_per_chain, d))
    n_raw = burn_in + samples_per_chain * jump_period
    n_accept = 0
    got = 0
    for i in range(n_raw):
        prop = theta + rng.normal(0.0, 1.0, d) * step
        lp_prop = log_post(prop)
        if lp_prop - lp > np.log(rng.random()):
            theta = prop
            lp = lp_prop
            n_accept += 1
        if i >= burn_in and (i - burn_in + 1) % jump_period == 0:
            retained[got] = theta
            got += 1
    return retained, n_accept / n_raw


def metropolis_chains(log_post, lower, upper, chains: int,
                      samples_per_chain: int, burn_in: int, jump_period: int,
                      proposal_scale: float, seed: int, jobs: int = 1,
                      param_names=None) -> PosteriorSamples:
    """Random-walk Metropolis with a Gaussian proposal.

    The componentwise proposal std is proposal_scale times the prior width.
    burn_in counts raw proposals; after it, every jump_period-th state is
    retained until samples_per_chain are collected.
    """
    if min(chains, samples_per_chain, jump_period) < 1 or burn_in < 0:
        raise ValueError("counts must be >= 1 (burn_in >= 0)")
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if param_names is None:
        param_names = tuple(f"theta_{i}" for i in range(lower.size))
    seeds = np.random.SeedSequence(seed).spawn(chains)
    items = [(log_post, lower, upper, samples_per_chain, burn_in,
              jump_period, proposal_scale, s) for s in seeds]
    results = parallel_map(_run_chain, items, jobs)
    return PosteriorSamples(
        param_names=tuple(param_names), lower=lower, upper=upper,
        chains=tuple(r[0] for r in results),
        acceptance_rates=tuple(r[1] for r in results),
        burn_in=burn_in, jump_period=jump_period, seed=seed)


def run_mcmc(prob: InverseProblem, model: RomModel, chains: int = 20,
             samples_per_chain: int = 500, burn_in: int = 1000,
             jump_period: int = 10, proposal_scale: float = 0.05,
             seed: int = 0, cfg: CoupledConfig | None = None,
             jobs: int = 1) -> PosteriorSamples:
    """Posterior sampling of the coupled-surrogate inverse problem."""
    if cfg is None:
        cfg = CoupledConfig()

    def log_post(theta):
        return log_posterior(theta, prob, model, cfg)

    return metropolis_chains(log_post, prob.lower, prob.upper, chains,
                             samples_per_chain, burn_in, jump_period,
                             proposal_scale, seed, jobs=jobs,
                             param_names=prob.param_names)


@dataclass(frozen=True)
class CredibilityRegion:
    """Highest-density region of the KDE posterior on a regular grid."""

    param_names: tuple[str, ...]
    axes: tuple[np.ndarray, ...]
    density: np.ndarray
    mask: np.ndarray
    level: float
    enclosed_mass: float
    area: float
    quantiles: dict
    correlation: np.ndarray

    def contains(self, point) -> bool:
        """Whether the nearest grid cell to ``point`` is inside the region."""
        idx = tuple(
            int(np.clip(np.searchsorted(ax, p), 0, ax.size - 1))
            for ax, p in zip(self.axes, np.asarray(point, dtype=float))
        )
        return bool(self.mask[idx])

    def to_json_dict(self) -> dict:
        return {
            "param_names": list(self.param_names),
            "level": self.level,
            "enclosed_mass": self.enclosed_mass,
            "area": self.area,
            "quantiles": self.quantiles,
            "correlation": self.correlation.tolist(),
            "axes": [ax.tolist() for ax in self.axes],
            "mask": self.mask.astype(int).tolist(),
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()))


def credibility_region(samples: PosteriorSamples, level: float,
                       grid_resolution: int = 100) -> CredibilityRegion:
    """Highest-density region with posterior mass >= level.

    A Gaussian KDE with Silverman bandwidth is evaluated on a regular grid
    over the prior box; cells are added in decreasing density order until
    the requested mass is covered.  Also reports per-parameter quantiles
    and the sample correlation matrix.
    """
    if not (0.0 < level <= 1.0):
        raise ValueError("level must lie in (0, 1]")
    pooled = samples.pooled()
    if pooled.shape[0] < 100:
        raise ValueError("need at least 100 retained samples")
    d = pooled.shape[1]
    kde = gaussian_kde(pooled.T, bw_method="silverman")
    axes = tuple(np.linspace(samples.lower[i], samples.upper[i],
                             grid_resolution) for i in range(d))
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.vstack([m.ravel() for m in mesh])
    density = kde(pts).reshape(mesh[0].shape)
    cell = float(np.prod([(ax[1] - ax[0]) for ax in axes]))
    total = float(density.sum()) * cell
    flat = density.ravel()
    order = np.argsort(flat)[::-1]
    if level >= 1.0:
        mask_flat = flat > flat.max() * 1e-12
        enclosed = float(flat[mask_flat].sum()) * cell / total
    else:
        cum = np.cumsum(flat[order]) * cell / total
        k = int(np.searchsorted(cum, level)) + 1
        mask_flat = np.zeros(flat.size, dtype=bool)
        mask_flat[order[:k]] = True
        enclosed = float(cum[k - 1])
    mask = mask_flat.reshape(density.shape)
    qs = (0.05, 0.25, 0.5, 0.75, 0.95)
    quantiles = {
        name: {f"q{int(100 * q)}": float(np.quantile(pooled[:, i], q))
               for q in qs}
        for i, name in enumerate(samples.param_names)
    }
    corr = np.corrcoef(pooled, rowvar=False)
    corr = np.atleast_2d(corr)
    return CredibilityRegion(
        param_names=samples.param_names, axes=axes, density=density,
        mask=mask, level=level, enclosed_mass=enclosed,
        area=float(mask.sum()) * cell, quantiles=quantiles, correlation=corr)


def sigma_rom_from_errors(qoi_errors: np.ndarray) -> np.ndarray:
    """Sample covariance of surrogate-vs-reference QoI errors.

    ``qoi_errors`` has one row per test case and one column per biomarker;
    the result can be plugged into InverseProblem.sigma_rom.
    """
    e = np.atleast_2d(np.asarray(qoi_errors, dtype=float))
    if e.shape[0] < 2:
        raise ValueError("need at least two error rows")
    return np.atleast_2d(np.cov(e, rowvar=False))


def potential_scale_reduction(samples: PosteriorSamples) -> np.ndarray:
    """Split-chain potential-scale-reduction diagnostic per parameter.

    Values near 1 indicate mixed chains; above ~1.1 is suspect.  Advisory
    only, never enforced.
    """
    halves = []
    for ch in samples.chains:
        n = ch.shape[0] // 2
        if n < 2:
            raise ValueError("chains too short for split diagnostics")
        halves.append(ch[:n])
        halves.append(ch[n:2 * n])
    arr = np.stack(halves)          # (m, n, d)
    m, n, d = arr.shape
    means = arr.mean(axis=1)        # (m, d)
    within = arr.var(axis=1, ddof=1).mean(axis=0)
    between = n * means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * within + between / n
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = np.sqrt(var_plus / within)
    return np.where(within > 0, rhat, 1.0)
