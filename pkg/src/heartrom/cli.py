"""Batch command-line pipeline: data generation, training, cross-validation,
coupled simulation, sensitivity analysis and MCMC calibration.

One JSON config file per run; ``--seed`` overrides the config seed and
``--jobs`` sets the parallel-map width (results are independent of it).
Exit codes: 0 success, 2 config error, 3 numerical failure; failures print
a machine-readable JSON object on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .annrom import RomArchitecture, RomModel
from .bayes import (InverseProblem, credibility_region,
                    potential_scale_reduction, run_mcmc)
from .circulation import CircParams, WindkesselParams
from .coupledsim import (ClosedLoop, CoupledConfig, CouplingError,
                         RefVentricle, RomVentricle, Windkessel,
                         compare_rom_vs_ref, extract_qois, generate_dataset,
                         run_fixed_beats, run_to_limit_cycle)
from .gsa import run_gsa
from .params import ParamSpace, gsa_space, training_space
from .refventricle import RefVentricleParams
from .sampling import sample_monte_carlo
from .training import TrainingConfig, cross_validate, train
from .transients import TransientParseError, read_transients, write_transients


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


def _expect(cfg: dict, key: str, typ, default=None, required=False):
    if key not in cfg:
        if required:
            raise ConfigError(f"missing required key '{key}'", key)
        return default
    value = cfg[key]
    if typ is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, typ):
        raise ConfigError(
            f"key '{key}' must be {getattr(typ, '__name__', typ)}, got "
            f"{type(value).__name__}", key)
    return value


def _config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _coupled_config(cfg: dict) -> CoupledConfig:
    overrides = _expect(cfg, "coupled", dict, {})
    base = CoupledConfig()
    known = set(base.__dataclass_fields__)
    unknown = set(overrides) - known
    if unknown:
        raise ConfigError(f"unknown coupled settings: {sorted(unknown)}",
                          "coupled")
    return CoupledConfig(**{**{k: getattr(base, k) for k in known},
                            **overrides})


def _space_from_config(cfg: dict) -> ParamSpace:
    spec = _expect(cfg, "space", dict, required=True)
    if "dims" in spec:
        return ParamSpace.from_json_dict(spec)
    kind = spec.get("kind", "training")
    names = spec.get("names")
    if kind == "training":
        return training_space(names)
    if kind == "gsa":
        return gsa_space(names)
    raise ConfigError(f"unknown space kind '{kind}'", "space")


def _write_manifest(out: Path, command: str, cfg: dict, seed: int) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config_hash": _config_hash(cfg),
        "config": cfg,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))


def _with_hash(obj: dict, cfg: dict) -> dict:
    obj["config_hash"] = _config_hash(cfg)
    return obj


def cmd_generate(cfg: dict, out: Path, seed: int, jobs: int) -> None:
    space = _space_from_config(cfg)
    n = _expect(cfg, "n_samples", int, required=True)
    n_beats = _expect(cfg, "n_beats", int, 5)
    split = _expect(cfg, "split", str)
    coupled = _coupled_config(cfg)
    design = sample_monte_carlo(space, n, seed)
    ds, failures = generate_dataset(design, n_beats, coupled, jobs=jobs)
    if failures:
        raise CouplingError(
            "failed rows: " + "; ".join(f"[{i}] {m}" for i, m in failures))
    if split is not None:
        from dataclasses import replace
        from .transients import Dataset
        ds = Dataset(records=tuple(replace(r, split=split) for r in ds))
    write_transients(ds, out / "dataset")
    design.save(out / "design.json")


def cmd_train(cfg: dict, out: Path, seed: int, jobs: int) -> None:
    ds = read_transients(_expect(cfg, "dataset", str, required=True))
    arch_cfg = _expect(cfg, "architecture", dict, required=True)
    arch = RomArchitecture(
        n_z=int(arch_cfg["n_z"]), n_params=int(arch_cfg["n_params"]),
        layers=int(arch_cfg["layers"]), neurons=int(arch_cfg["neurons"]),
        t_hb=float(arch_cfg.get("t_hb", ds.t_hb)))
    param_names = _expect(cfg, "param_names", list)
    tr_overrides = _expect(cfg, "training", dict, {})
    tcfg = TrainingConfig(**{**tr_overrides, "seed": seed})
    model, report = train(arch, ds, tcfg, param_names=param_names)
    model.save(out / "model.json")
    (out / "report.json").write_text(
        json.dumps(_with_hash(report.to_json_dict(), cfg), indent=1))


def cmd_xval(cfg: dict, out: Path, seed: int, jobs: int) -> None:
    ds = read_transients(_expect(cfg, "dataset", str, required=True))
    settings = []
    for s in _expect(cfg, "settings", list, required=True):
        arch = RomArchitecture(
            n_z=int(s["n_z"]), n_params=int(s["n_params"]),
            layers=int(s["layers"]), neurons=int(s["neurons"]),
            t_hb=float(s.get("t_hb", ds.t_hb)))
        settings.append((arch, float(s.get("beta", 0.0))))
    k = _expect(cfg, "k", int, 5)
    tr_overrides = _expect(cfg, "training", dict, {})
    tcfg = TrainingConfig(**{**tr_overrides, "seed": seed})
    table = cross_validate(settings, ds, k, tcfg,
                           param_names=_expect(cfg, "param_names", list),
                           coupled_cfg=_coupled_config(cfg), jobs=jobs)
    (out / "xval.json").write_text(
        json.dumps(_with_hash({"ranking": table}, cfg), indent=1))
    cols = list(table[0].keys()) if table else []
    lines = [",".join(cols)]
    for row in table:
        lines.append(",".join(f"{row[c]:.17g}" for c in cols))
    (out / "xval.csv").write_text("\n".join(lines) + "\n")


def _build_ventricle(cfg: dict):
    kind = _expect(cfg, "ventricle", str, "ref")
    theta_m = _expect(cfg, "theta_m", dict, {})
    if kind == "ref":
        return RefVentricle(RefVentricleParams().replace(**theta_m))
    if kind == "rom":
        model = RomModel.load(_expect(cfg, "model", str, required=True))
        defaults = RefVentricleParams().replace(**theta_m).as_dict()
        theta = np.array([defaults[n] for n in model.param_names])
        return RomVentricle(model, theta)
    raise ConfigError(f"ventricle must be 'ref' or 'rom', got '{kind}'",
                      "ventricle")


def _build_closure(cfg: dict):
    kind = _expect(cfg, "closure", str, "closed_loop")
    if kind == "closed_loop":
        return ClosedLoop(CircParams().replace(
            **_expect(cfg, "theta_c", dict, {})))
    if kind == "windkessel":
        wk = _expect(cfg, "windkessel", dict, {})
        return Windkessel(WindkesselParams(**wk))
    raise ConfigError(
        f"closure must be 'closed_loop' or 'windkessel', got '{kind}'",
        "closure")


def cmd_simulate(cfg: dict, out: Path, seed: int, jobs: int) -> None:
    ventricle = _build_ventricle(cfg)
    closure = _build_closure(cfg)
    coupled = _coupled_config(cfg)
    if _expect(cfg, "to_limit_cycle", bool, False):
        result, n_beats, converged = run_to_limit_cycle(ventricle, closure,
                                                        coupled)
    else:
        n_beats = _expect(cfg, "n_beats", int, 5)
        result, _ = run_fixed_beats(ventricle, closure, n_beats, coupled)
        converged = True
    result.to_csv(out / "transient.csv")
    qois = extract_qois(result.last_beat())
    payload = _with_hash(qois.to_json_dict(), cfg)
    payload["n_beats"] = n_beats
    payload["converged"] = bool(converged)
    (out / "qois.json").write_text(json.dumps(payload, indent=1))


def cmd_gsa(cfg: dict, out: Path, seed: int, jobs: int) -> None:
    model = RomModel.load(_expect(cfg, "model", str, required=True))
    space = _space_from_config(cfg)
    n_base = _expect(cfg, "n_base", int, 256)
    result = run_gsa(space, model, n_base, cfg=_coupled_config(cfg),
                     seed=seed, jobs=jobs)
    (out / "sobol.json").write_text(
        json.dumps(_with_hash(result.to_json_dict(), cfg)))
    for which in ("s1", "st", "s1_ci", "st_ci"):
        (out / f"sobol_{which}.csv").write_text(result.matrix_csv(which))


def cmd_mcmc(cfg: dict, out: Path, seed: int, jobs: int) -> None:
    model = RomModel.load(_expect(cfg, "model", str, required=True))
    p = _expect(cfg, "problem", dict, required=True)
    q = len(p["qoi_names"])
    prob = InverseProblem(
        param_names=tuple(p["param_names"]),
        lower=np.array(p["lower"], dtype=float),
        upper=np.array(p["upper"], dtype=float),
        qoi_names=tuple(p["qoi_names"]),
        y_obs=np.array(p["y_obs"], dtype=float),
        sigma_exp=np.diag(np.array(p.get("sigma_exp_diag", [0.0] * q))),
        sigma_rom=np.diag(np.array(p.get("sigma_rom_diag", [0.2] * q))),
        fixed=p.get("fixed", {}))
    samples = run_mcmc(
        prob, model,
        chains=_expect(cfg, "chains", int, 20),
        samples_per_chain=_expect(cfg, "samples_per_chain", int, 500),
        burn_in=_expect(cfg, "burn_in", int, 1000),
        jump_period=_expect(cfg, "jump_period", int, 10),
        proposal_scale=_expect(cfg, "proposal_scale", float, 0.05),
        seed=seed, cfg=_coupled_config(cfg), jobs=jobs)
    samples.to_csv(out / "samples.csv")
    region = credibility_region(
        samples, _expect(cfg, "credibility_level", float, 0.9),
        _expect(cfg, "grid_resolution", int, 100))
    region.save(out / "region.json")
    marginals = _with_hash({
        "quantiles": region.quantiles,
        "correlation": region.correlation.tolist(),
        "acceptance_rates": list(samples.acceptance_rates),
        "rhat": potential_scale_reduction(samples).tolist(),
        "region_area": region.area,
    }, cfg)
    (out / "marginals.json").write_text(json.dumps(marginals, indent=1))


def cmd_compare(cfg: dict, out: Path, seed: int, jobs: int) -> None:
    model = RomModel.load(_expect(cfg, "model", str, required=True))
    space = _space_from_config(cfg)
    n = _expect(cfg, "n_samples", int, required=True)
    design = sample_monte_carlo(space, n, seed)
    table = compare_rom_vs_ref(
        design, model, _expect(cfg, "closure", str, "closed_loop"),
        _coupled_config(cfg), _expect(cfg, "n_beats", int, 5), jobs=jobs)
    table.to_csv(out / "errors.csv")
    (out / "summary.json").write_text(
        json.dumps(_with_hash(dict(table.summary), cfg), indent=1))


_COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "xval": cmd_xval,
    "simulate": cmd_simulate,
    "gsa": cmd_gsa,
    "mcmc": cmd_mcmc,
    "compare": cmd_compare,
}


def _error_json(kind: str, exc: Exception) -> str:
    payload = {"error": kind, "message": str(exc)}
    key = getattr(exc, "key", None)
    if key is not None:
        payload["key"] = key
    return json.dumps(payload)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="heartrom",
        description="surrogate-based cardiac simulation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    try:
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise ConfigError(f"config file not found: {cfg_path}")
        try:
            cfg = json.loads(cfg_path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _COMMANDS[args.command](cfg, out, seed, args.jobs)
        _write_manifest(out, args.command, cfg, seed)
        return 0
    except (ConfigError, TransientParseError, KeyError, TypeError) as exc:
        print(_error_json("config", exc), file=sys.stderr)
        return 2
    except (CouplingError, RuntimeError, ValueError,
            FloatingPointError) as exc:
        print(_error_json("numerical", exc), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
