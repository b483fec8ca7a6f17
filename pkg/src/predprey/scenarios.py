"""Scenario configurations and the builtin experiments.

Domains, final times and report intervals of the builtins are our own
choices: wide enough that no mass reaches the boundary and long enough that
the steady or travelling regime is established.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .density import Density1D, Grid1D, SpeciesPair
from .kernels import KernelTriple

METHODS = ("fv", "particles", "both")


class ConfigError(ValueError):
    """Invalid scenario configuration."""


@dataclass(frozen=True)
class Segment:
    a: float
    b: float
    height: float

    @property
    def mass(self) -> float:
        return (self.b - self.a) * self.height


def rescale_to_common_diffusion(d1: float, d2: float, kernels: KernelTriple, alpha: float):
    """Map diffusion coefficients ``(d1, d2)`` to a single ``d``.

    Multiplying the predator equation by ``d2 / d1`` scales ``S_rho`` and
    ``K`` by that factor; ``alpha`` is divided by it so the prey equation,
    which sees ``alpha * K``, is unchanged.  Stationary states are preserved
    exactly; the predator dynamics run on a time scale changed by ``d2/d1``.
    """
    if not (d1 > 0 and d2 > 0):
        raise ValueError("diffusion coefficients must be positive")
    if d1 == d2:
        return d2, kernels, alpha
    f = d2 / d1
    return d2, KernelTriple(kernels.s_rho.scaled(f), kernels.s_eta, kernels.k.scaled(f)), alpha / f


@dataclass(frozen=True)
class Scenario:
    name: str
    alpha: float
    d: float
    domain: tuple[float, float]
    n_cells: int
    t_final: float
    report_dt: float
    rho: tuple[Segment, ...]
    eta: tuple[Segment, ...]
    n_particles: int | None = None
    kernels: KernelTriple = field(default_factory=KernelTriple.gaussian)
    method: str = "both"
    snapshot_dt: float | None = None
    description: str = ""

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ConfigError("alpha must be positive")
        if not self.d > 0:
            raise ConfigError("d must be positive")
        lo, hi = self.domain
        if not hi > lo:
            raise ConfigError("domain must satisfy x_min < x_max")
        if self.n_cells < 2 or (self.n_particles is not None and self.n_particles < 2):
            raise ConfigError("need at least two cells and two particles")
        if not (self.t_final > 0 and self.report_dt > 0):
            raise ConfigError("t_final and report_dt must be positive")
        for species, segs in (("rho", self.rho), ("eta", self.eta)):
            if not segs:
                raise ConfigError(f"{species} has no initial segments")
            for s in segs:
                if s.height < 0 or not s.b > s.a:
                    raise ConfigError(f"{species} segment {s} must have a < b and height >= 0")
                if s.a < lo or s.b > hi:
                    raise ConfigError(f"{species} segment {s} leaves the domain {self.domain}")
            if sum(s.mass for s in segs) <= 0:
                raise ConfigError(f"{species} has zero mass")

    @property
    def particles(self) -> int:
        return self.n_cells if self.n_particles is None else self.n_particles

    @property
    def length(self) -> float:
        return self.domain[1] - self.domain[0]

    @property
    def grid(self) -> Grid1D:
        return Grid1D.from_bounds(self.domain[0], self.domain[1], self.n_cells)

    def masses(self) -> dict[str, float]:
        return {"rho": sum(s.mass for s in self.rho), "eta": sum(s.mass for s in self.eta)}

    def initial_pair(self) -> SpeciesPair:
        g = self.grid
        rho = Density1D.from_segments(g, [(s.a, s.b, s.height) for s in self.rho])
        eta = Density1D.from_segments(g, [(s.a, s.b, s.height) for s in self.eta])
        return SpeciesPair(rho, eta, self.alpha, self.d)

    def reflected(self) -> "Scenario":
        """Mirror image ``x -> -x`` of the initial data and domain."""

        def mirror(segs):
            return tuple(Segment(-s.b, -s.a, s.height) for s in reversed(segs))

        lo, hi = self.domain
        return replace(self, name=self.name + "-reflected", domain=(-hi, -lo), rho=mirror(self.rho), eta=mirror(self.eta))

    def with_overrides(self, **changes) -> "Scenario":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})

    @classmethod
    def from_dict(cls, spec: dict) -> "Scenario":
        try:
            kernels = KernelTriple.from_dict(spec["kernels"]) if "kernels" in spec else KernelTriple.gaussian()
            alpha = float(spec["alpha"])
            if "d" in spec:
                d = float(spec["d"])
            else:
                d, kernels, alpha = rescale_to_common_diffusion(float(spec["d1"]), float(spec["d2"]), kernels, alpha)
            initial = spec["initial"]
            segs = {
                k: tuple(Segment(float(s["a"]), float(s["b"]), float(s["height"])) for s in initial[k])
                for k in ("rho", "eta")
            }
            return cls(
                name=str(spec.get("name", "scenario")),
                alpha=alpha,
                d=d,
                domain=(float(spec["domain"][0]), float(spec["domain"][1])),
                n_cells=int(spec["n_cells"]),
                n_particles=int(spec["n_particles"]) if spec.get("n_particles") is not None else None,
                t_final=float(spec["t_final"]),
                report_dt=float(spec["report_dt"]),
                rho=segs["rho"],
                eta=segs["eta"],
                kernels=kernels,
                method=str(spec.get("method", "both")),
                snapshot_dt=float(spec["snapshot_dt"]) if spec.get("snapshot_dt") is not None else None,
                description=str(spec.get("description", "")),
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise ConfigError(f"malformed scenario: {exc!r}") from exc
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "kernels": self.kernels.to_dict(),
            "alpha": self.alpha,
            "d": self.d,
            "domain": list(self.domain),
            "n_cells": self.n_cells,
            "n_particles": self.particles,
            "t_final": self.t_final,
            "report_dt": self.report_dt,
            "snapshot_dt": self.snapshot_dt,
            "method": self.method,
            "initial": {
                k: [{"a": s.a, "b": s.b, "height": s.height} for s in segs]
                for k, segs in (("rho", self.rho), ("eta", self.eta))
            },
        }


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(spec, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return Scenario.from_dict(spec)


def _segs(*triples) -> tuple[Segment, ...]:
    return tuple(Segment(*t) for t in triples)


def builtin_scenarios() -> list[Scenario]:
    """The six experiments, each with unit mass per species."""
    blob1 = _segs((-0.7, 0.7, 10 / 14))
    return [
        Scenario(
            "initial1",
            alpha=0.1,
            d=0.4,
            domain=(-4.0, 4.0),
            n_cells=71,
            t_final=50.0,
            report_dt=0.5,
            rho=blob1,
            eta=blob1,
            description="mixed steady state",
        ),
        Scenario(
            "initial2",
            alpha=0.2,
            d=0.4,
            domain=(-6.0, 6.0),
            n_cells=91,
            t_final=100.0,
            report_dt=0.5,
            rho=_segs((-1.0, 1.0, 0.5)),
            eta=_segs((-4.0, -3.0, 0.5), (3.0, 4.0, 0.5)),
            description="separated steady state",
        ),
        Scenario(
            "initial1-alpha6",
            alpha=6.0,
            d=0.4,
            domain=(-12.0, 12.0),
            n_cells=71,
            t_final=60.0,
            report_dt=0.5,
            rho=blob1,
            eta=blob1,
            description="transition from mixed towards separated",
        ),
        Scenario(
            "initial3",
            alpha=0.05,
            d=0.3,
            domain=(-9.0, 9.0),
            n_cells=181,
            t_final=50.0,
            report_dt=0.5,
            rho=blob1,
            eta=_segs((-6.0, -5.0, 1 / 3), (-0.7, 0.7, 5 / 21), (5.0, 6.0, 1 / 3)),
            description="four bumps",
        ),
        Scenario(
            "initial4",
            alpha=1.0,
            d=0.3,
            domain=(-13.0, 13.0),
            n_cells=181,
            t_final=50.0,
            report_dt=0.5,
            rho=_segs((-5.0, -4.0, 0.5), (4.0, 5.0, 0.5)),
            eta=_segs((-9.0, -8.0, 1 / 3), (-0.5, 0.5, 1 / 3), (8.0, 9.0, 1 / 3)),
            description="five bumps",
        ),
        Scenario(
            "initial5",
            alpha=1.0,
            d=0.2,
            domain=(-4.0, 8.0),
            n_cells=101,
            t_final=40.0,
            report_dt=0.5,
            rho=_segs((-0.6, 0.6, 10 / 12)),
            eta=_segs((1.7, 2.9, 10 / 12)),
            description="travelling wave",
        ),
    ]


def builtin(name: str) -> Scenario:
    for s in builtin_scenarios():
        if s.name == name:
            return s
    raise ConfigError(f"unknown builtin scenario {name!r}")
