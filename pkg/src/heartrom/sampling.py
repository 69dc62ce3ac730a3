"""Random and quasi-random sampling of parameter boxes.

All samplers are pure functions of (space, n, seed): repeated calls give
identical designs, regardless of threads or processes.  The Sobol sequence
uses the Joe-Kuo direction numbers (via scipy) with the all-zeros first
point skipped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from .params import ParamSpace

__all__ = [
    "SampleDesign",
    "sample_monte_carlo",
    "sample_sobol_sequence",
    "saltelli_design",
    "saltelli_blocks",
]


@dataclass(frozen=True)
class SampleDesign:
    """A matrix of sample points in physical units, one row per point."""

    space: ParamSpace
    method: str  # monte_carlo | sobol_sequence | saltelli
    seed: int
    points: np.ndarray  # (n, ndim)
    n_base: int | None = None  # saltelli only

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != self.space.ndim:
            raise ValueError(
                f"points shape {pts.shape} does not match space dimension "
                f"{self.space.ndim}"
            )
        if not self.space.contains(pts, atol=1e-12):
            raise ValueError("design contains points outside the space")
        if self.method == "saltelli":
            if self.n_base is None:
                raise ValueError("saltelli design requires n_base")
            expected = self.n_base * (2 * self.space.ndim + 2)
            if pts.shape[0] != expected:
                raise ValueError(
                    f"saltelli design must have n_base*(2D+2) = {expected} "
                    f"rows, got {pts.shape[0]}"
                )
        object.__setattr__(self, "points", pts)
        pts.setflags(write=False)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def to_json_dict(self) -> dict:
        return {
            "space": self.space.to_json_dict(),
            "method": self.method,
            "seed": self.seed,
            "n_base": self.n_base,
            "points": [[float(x) for x in row] for row in self.points],
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "SampleDesign":
        return cls(
            space=ParamSpace.from_json_dict(obj["space"]),
            method=obj["method"],
            seed=int(obj["seed"]),
            points=np.array(obj["points"], dtype=float),
            n_base=None if obj.get("n_base") is None else int(obj["n_base"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "SampleDesign":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def _map_to_box(unit_points: np.ndarray, space: ParamSpace) -> np.ndarray:
    """Affine map from the unit cube to the space box; exact at endpoints."""
    lo, hi = space.lower, space.upper
    return lo + unit_points * (hi - lo)


def sample_monte_carlo(space: ParamSpace, n: int, seed: int) -> SampleDesign:
    """Uniform independent samples on the box, deterministic for fixed seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    unit = rng.random((n, space.ndim))
    return SampleDesign(space=space, method="monte_carlo", seed=seed,
                        points=_map_to_box(unit, space))


def _sobol_unit(d: int, n: int) -> np.ndarray:
    """First n points of the base-2 Sobol sequence, zero point skipped."""
    if d > 21201:
        raise ValueError(
            f"Sobol direction-number table supports up to 21201 dimensions, "
            f"got {d}"
        )
    gen = qmc.Sobol(d=d, scramble=False)
    gen.fast_forward(1)
    return gen.random(n)


def sample_sobol_sequence(space: ParamSpace, n: int) -> SampleDesign:
    """First n Sobol points mapped to the box (no scrambling, no seed)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    unit = _sobol_unit(space.ndim, n)
    return SampleDesign(space=space, method="sobol_sequence", seed=0,
                        points=_map_to_box(unit, space))


def saltelli_design(space: ParamSpace, n_base: int) -> SampleDesign:
    """Saltelli sample arrangement of n_base*(2D+2) rows.

    Rows are ordered [A block, B block, AB_1..AB_D blocks, BA_1..BA_D
    blocks]; AB_i equals A with column i replaced from B, and vice versa for
    BA_i.  A and B are drawn from a 2D-dimensional Sobol sequence.
    """
    if n_base < 2:
        raise ValueError("n_base must be >= 2")
    d = space.ndim
    unit = _sobol_unit(2 * d, n_base)
    a, b = unit[:, :d], unit[:, d:]
    blocks = [a, b]
    for i in range(d):
        ab = a.copy()
        ab[:, i] = b[:, i]
        blocks.append(ab)
    for i in range(d):
        ba = b.copy()
        ba[:, i] = a[:, i]
        blocks.append(ba)
    pts = _map_to_box(np.vstack(blocks), space)
    return SampleDesign(space=space, method="saltelli", seed=0,
                        points=pts, n_base=n_base)


def saltelli_blocks(design: SampleDesign) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Split a saltelli design's rows back into (A, B, AB, BA).

    AB and BA are returned with shape (D, n_base, ndim).
    """
    if design.method != "saltelli":
        raise ValueError("not a saltelli design")
    n, d = design.n_base, design.space.ndim
    pts = design.points
    a = pts[:n]
    b = pts[n:2 * n]
    ab = pts[2 * n:(2 + d) * n].reshape(d, n, d)
    ba = pts[(2 + d) * n:].reshape(d, n, d)
    return a, b, ab, ba
