"""Cell-averaged densities, pseudo-inverse particle ensembles and the
diagnostics defined on them (mass, centres of mass, Wasserstein distances,
relative energy)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Generic, TypeVar

import numpy as np

from .kernels import Kernel, KernelTriple

T = TypeVar("T")


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    dx: float
    n_cells: int

    def __post_init__(self):
        if not self.dx > 0:
            raise ValueError("grid spacing must be positive")
        if self.n_cells < 2:
            raise ValueError("grid needs at least two cells")

    @classmethod
    def from_bounds(cls, x_min: float, x_max: float, n_cells: int) -> "Grid1D":
        return cls(float(x_min), (float(x_max) - float(x_min)) / n_cells, int(n_cells))

    @property
    def x_max(self) -> float:
        return self.x_min + self.n_cells * self.dx

    @property
    def length(self) -> float:
        return self.n_cells * self.dx

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[:-1] + e[1:])

    @property
    def edges(self) -> np.ndarray:
        # each edge is measured from the nearer end, so the edges of the
        # mirrored grid are exactly the negated edges
        n = self.n_cells
        k = np.arange(n + 1)
        left = self.x_min + k * self.dx
        right = self.x_max - (n - k) * self.dx
        e = np.where(2 * k < n, left, right)
        if n % 2 == 0:
            e[n // 2] = 0.5 * (left[n // 2] + right[n // 2])
        return e

    def reflected(self) -> "Grid1D":
        return Grid1D(-self.x_max, self.dx, self.n_cells)


@dataclass(frozen=True, eq=False)
class Density1D:
    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_cells,):
            raise ValueError(f"expected {self.grid.n_cells} cell values, got shape {values.shape}")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("density values must be finite and non-negative")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_segments(cls, grid: Grid1D, segments) -> "Density1D":
        """Exact cell averages of a sum of indicator functions ``height * 1_[a,b]``."""
        edges = grid.edges
        values = np.zeros(grid.n_cells)
        for a, b, height in segments:
            overlap = np.clip(np.minimum(edges[1:], b) - np.maximum(edges[:-1], a), 0.0, None)
            values += height * overlap / grid.dx
        return cls(grid, values)

    def reflected(self) -> "Density1D":
        return Density1D(self.grid.reflected(), self.values[::-1].copy())

    @property
    def mass(self) -> float:
        return mass(self)


@dataclass(frozen=True, eq=False)
class PseudoInverse:
    """Sorted particle positions sampling a quantile function at equal mass steps."""

    positions: np.ndarray
    mass: float = 1.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 1 or pos.size < 2:
            raise ValueError("a pseudo-inverse needs at least two particles")
        if np.any(np.diff(pos) < 0):
            raise ValueError("particle positions must be non-decreasing")
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        object.__setattr__(self, "positions", pos)

    @property
    def n(self) -> int:
        return self.positions.size


@dataclass(frozen=True)
class SpeciesPair(Generic[T]):
    """Predators ``rho`` and prey ``eta`` with escape propensity and diffusion."""

    rho: T
    eta: T
    alpha: float
    d: float

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError("alpha must be finite and positive")
        if not (np.isfinite(self.d) and self.d >= 0):
            raise ValueError("d must be finite and non-negative")

    def with_states(self, rho: T, eta: T) -> "SpeciesPair[T]":
        return replace(self, rho=rho, eta=eta)


@dataclass(frozen=True, eq=False)
class CDF:
    """Piecewise-linear cumulative distribution tabulated at the cell edges."""

    edges: np.ndarray
    values: np.ndarray

    @property
    def mass(self) -> float:
        return float(self.values[-1])

    def __call__(self, x):
        return np.interp(x, self.edges, self.values, left=0.0, right=self.mass)


def mass(p) -> float:
    if isinstance(p, PseudoInverse):
        return float(p.mass)
    return math.fsum(p.values) * p.grid.dx


def center_of_mass(p) -> float:
    if isinstance(p, PseudoInverse):
        return float(np.mean(p.positions))
    m = mass(p)
    if m <= 0:
        raise ValueError("centre of mass of a zero-mass density")
    return float(p.grid.dx * np.dot(p.grid.centers, p.values) / m)


def joint_center(pair: SpeciesPair, alpha: float | None = None) -> float:
    """``alpha * cm(rho) - cm(eta)``, the quantity preserved by the dynamics."""
    a = pair.alpha if alpha is None else alpha
    return a * center_of_mass(pair.rho) - center_of_mass(pair.eta)


def cdf(p: Density1D) -> CDF:
    cum = np.concatenate(([0.0], np.cumsum(p.values) * p.grid.dx))
    if cum[-1] <= 0:
        raise ValueError("cumulative distribution of a zero-mass density")
    return CDF(p.grid.edges, cum)


def _quantiles(F: CDF, targets: np.ndarray) -> np.ndarray:
    """Leftmost ``x`` with ``F(x) = t``; ``t = 0`` maps to the start of the support.

    Targets within round-off of a flat stretch of ``F`` (a gap in the
    support) map to the left end of the gap.
    """
    edges, cum = F.edges, F.values
    k = np.searchsorted(cum, targets - 1e-12 * cum[-1], side="left")
    at_zero = targets <= 0
    k[at_zero] = np.searchsorted(cum, 0.0, side="right")
    k = np.clip(k, 1, cum.size - 1)
    lo, hi = cum[k - 1], cum[k]
    frac = np.where(hi > lo, (targets - lo) / np.where(hi > lo, hi - lo, 1.0), 0.0)
    frac = np.clip(frac, 0.0, 1.0)
    return edges[k - 1] + frac * (edges[k] - edges[k - 1])


def pseudo_inverse(p: Density1D, n_particles: int) -> PseudoInverse:
    """Equal-mass quantile positions ``F(X_i) = (i-1) * mass / (N-1)``.

    Levels below one half are searched from the left end of the grid and
    levels above one half from the right end, with the same arithmetic, so
    the particles of a mirrored density are exactly the mirrored particles.
    On a gap between support components a particle therefore sits at the
    end of the gap nearer to its own side of the distribution.
    """
    if n_particles < 2:
        raise ValueError("need at least two particles")
    g = p.grid
    total = math.fsum(p.values) * g.dx
    if total <= 0:
        raise ValueError("cumulative distribution of a zero-mass density")
    levels = np.arange(n_particles) / (n_particles - 1)
    k = np.arange(n_particles)
    low, high = 2 * k < n_particles - 1, 2 * k > n_particles - 1
    x = np.empty(n_particles)
    x[low] = _from_left(p.values, g.x_min, g.dx, total * levels[low])
    x[high] = -_from_left(p.values[::-1].copy(), -g.x_max, g.dx, total * levels[n_particles - 1 - k[high]])
    if n_particles % 2:
        mid = (n_particles - 1) // 2
        a = _from_left(p.values, g.x_min, g.dx, np.array([0.5 * total]))[0]
        b = -_from_left(p.values[::-1].copy(), -g.x_max, g.dx, np.array([0.5 * total]))[0]
        # the two searches differ only by round-off unless the median lies on a gap
        x[mid] = 0.5 * (a + b) if abs(a - b) <= 1e-6 * g.dx else a
    return PseudoInverse(x, total)


def _from_left(values: np.ndarray, x_min: float, dx: float, targets: np.ndarray) -> np.ndarray:
    edges = x_min + np.arange(values.size + 1) * dx
    cum = np.concatenate(([0.0], np.cumsum(values) * dx))
    return _quantiles(CDF(edges, cum), targets)


def quantile_function(p: Density1D, z) -> np.ndarray:
    """Quantile function of the normalised density at levels ``z`` in [0, 1]."""
    F = cdf(p)
    return _quantiles(F, F.mass * np.atleast_1d(np.asarray(z, dtype=float)))


def quantile_positions(p: Density1D, n_levels: int) -> np.ndarray:
    """Quantile function at the midpoint levels ``(k + 1/2) / n_levels``.

    ``n_levels`` is forced even so that no level coincides with a mass
    fraction ``p/q`` with odd ``q`` (in particular 1/2), where the quantile
    function jumps across a gap between support components.
    """
    m = n_levels + (n_levels % 2)
    return quantile_function(p, (np.arange(m) + 0.5) / m)


def density_from_particles(u: PseudoInverse, grid: Grid1D) -> Density1D:
    """Deposit the piecewise-constant particle density onto ``grid``.

    Between consecutive particles the density is ``mass / ((N-1) * gap)``;
    cell averages are exact overlap integrals, obtained by differencing the
    piecewise-linear particle CDF at the cell edges.
    """
    X = u.positions
    gaps = np.diff(X)
    if np.any(gaps <= 0):
        i = int(np.argmax(gaps <= 0))
        raise ValueError(f"coincident particles at indices {i} and {i + 1}")
    outside = np.flatnonzero((X < grid.x_min) | (X > grid.x_max))
    if outside.size:
        raise ValueError(f"particle index {int(outside[0])} at {X[outside[0]]:.6g} lies outside the grid")
    cum = u.mass * np.arange(X.size) / (X.size - 1)
    F = np.interp(grid.edges, X, cum, left=0.0, right=u.mass)
    return Density1D(grid, np.clip(np.diff(F), 0.0, None) / grid.dx)


def wasserstein(p: Density1D, q: Density1D, order: float = 1.0, n_nodes: int = 4096) -> float:
    """``W_order`` between two equal-mass densities via their quantile functions.

    Masses are normalised to one; the quantile-space integral uses the
    midpoint rule on ``n_nodes`` uniform levels.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    mp, mq = mass(p), mass(q)
    if abs(mp - mq) > 1e-9 * max(mp, mq):
        raise ValueError(f"mass mismatch: {mp!r} vs {mq!r}")
    z = (np.arange(max(n_nodes, 1024)) + 0.5) / max(n_nodes, 1024)
    diff = np.abs(quantile_function(p, z) - quantile_function(q, z))
    return float(np.mean(diff**order) ** (1.0 / order))


def product_w2(a: SpeciesPair, b: SpeciesPair) -> float:
    return float(np.hypot(wasserstein(a.rho, b.rho, 2.0), wasserstein(a.eta, b.eta, 2.0)))


def convolve(kernel: Kernel, p: Density1D) -> np.ndarray:
    """``(kernel * p)(x_i) = sum_j kernel(x_i - x_j) p_j dx`` at the cell centres.

    Kernel samples are taken at integer multiples of ``dx`` and summed
    directly (no FFT), so results are reproducible bit for bit.
    """
    n = p.grid.n_cells
    table = kernel(np.arange(-(n - 1), n) * p.grid.dx)
    return np.convolve(p.values, table)[n - 1 : 2 * n - 1] * p.grid.dx


def energy(pair: SpeciesPair, reference: SpeciesPair, kernels: KernelTriple) -> float:
    """Relative energy of ``pair`` with cross interactions frozen at ``reference``.

    The predators feel the reference prey and the prey feel the reference
    predators, so ``reference = pair`` gives the energy whose descent the
    evolution follows over short times.
    """
    grids = {pair.rho.grid, pair.eta.grid, reference.rho.grid, reference.eta.grid}
    if len(grids) != 1:
        raise ValueError("all densities must live on the same grid")
    dx = pair.rho.grid.dx
    rho, eta = pair.rho.values, pair.eta.values
    diffusion = 0.5 * pair.d * np.sum(rho**2 + eta**2) * dx
    self_rho = 0.5 * np.sum(rho * convolve(kernels.s_rho, pair.rho)) * dx
    self_eta = 0.5 * np.sum(eta * convolve(kernels.s_eta, pair.eta)) * dx
    cross_rho = np.sum(rho * convolve(kernels.k, reference.eta)) * dx
    cross_eta = pair.alpha * np.sum(eta * convolve(kernels.k, reference.rho)) * dx
    return float(diffusion - self_rho - self_eta - cross_rho + cross_eta)


def write_snapshot(path, pair: SpeciesPair) -> None:
    """Write ``x,rho,eta`` rows at the cell centres with 17 significant digits."""
    path = Path(path)
    xs = pair.rho.grid.centers
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "rho", "eta"])
        for x, r, e in zip(xs, pair.rho.values, pair.eta.values):
            writer.writerow([f"{x:.17g}", f"{r:.17g}", f"{e:.17g}"])


def read_snapshot(path, alpha: float, d: float) -> SpeciesPair:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    xs = data[:, 0]
    dx = float(xs[1] - xs[0])
    grid = Grid1D(float(xs[0] - 0.5 * dx), dx, xs.size)
    return SpeciesPair(Density1D(grid, data[:, 1]), Density1D(grid, data[:, 2]), alpha, d)
