"""Positivity-preserving finite-volume scheme for the predator-prey system.

Cell averages evolve by flux differences.  Interface velocities combine the
discrete gradient of the quadratic diffusion with the discrete gradients of
the interaction potentials; fluxes are upwinded with minmod-limited linear
reconstructions and the semi-discrete system is advanced with SSP-RK3.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .density import Density1D, Grid1D, SpeciesPair, center_of_mass, energy, mass
from .kernels import Kernel, KernelTriple

log = logging.getLogger(__name__)

RHO = "rho"
ETA = "eta"

CLIP_REJECT = 1e-10
MAX_HALVINGS = 20
BOUNDARY_TOL = 1e-12


class BoundaryContactError(RuntimeError):
    """Mass reached the outermost cells of the computational domain."""


class StepRejected(RuntimeError):
    pass


def minmod(*args):
    """Smallest-magnitude argument when all share a strict sign, else zero.

    Works elementwise on arrays.
    """
    a = np.stack(np.broadcast_arrays(*[np.asarray(v, dtype=float) for v in args]))
    out = np.where(np.all(a > 0, axis=0), a.min(axis=0), np.where(np.all(a < 0, axis=0), a.max(axis=0), 0.0))
    return float(out) if out.ndim == 0 else out


def _difference_matrix(kernel: Kernel, n: int, dx: float) -> np.ndarray:
    """Rows ``i``: ``kernel(x_{i+1} - x_j) - kernel(x_i - x_j)`` for interior interfaces.

    Kernel arguments are built from integer offsets so the matrix is exactly
    Toeplitz (needed for exact translation equivariance).
    """
    offsets = np.arange(-n, n + 1)
    table = kernel(offsets * dx)
    i = np.arange(n - 1)[:, None]
    j = np.arange(n)[None, :]
    return table[i + 1 - j + n] - table[i - j + n]


@dataclass
class FvWorkspace:
    grid: Grid1D
    kernels: KernelTriple
    alpha: float
    d: float
    cfl: float = 0.45
    theta_rho: np.ndarray = field(init=False, repr=False)
    theta_eta: np.ndarray = field(init=False, repr=False)
    slope_rho: np.ndarray = field(init=False, repr=False)
    slope_eta: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")
        n, dx = self.grid.n_cells, self.grid.dx
        self._s_rho = _difference_matrix(self.kernels.s_rho, n, dx)
        self._s_eta = _difference_matrix(self.kernels.s_eta, n, dx)
        self._k = _difference_matrix(self.kernels.k, n, dx)
        self.theta_rho = np.zeros(n + 1)
        self.theta_eta = np.zeros(n + 1)
        self.slope_rho = np.zeros(n)
        self.slope_eta = np.zeros(n)


def _values(p) -> np.ndarray:
    return p.values if isinstance(p, Density1D) else np.asarray(p, dtype=float)


def _check_grid(w: FvWorkspace, *densities):
    for p in densities:
        if isinstance(p, Density1D) and p.grid != w.grid:
            raise ValueError("density grid does not match the workspace grid")


def interface_velocity(w: FvWorkspace, rho, eta, species: str) -> np.ndarray:
    """Velocities at the ``n_cells + 1`` interfaces; the two outer ones are zero."""
    _check_grid(w, rho, eta)
    r, e = _values(rho), _values(eta)
    dx = w.grid.dx
    theta = np.zeros(w.grid.n_cells + 1)
    if species == RHO:
        theta[1:-1] = -(w.d / dx) * np.diff(r) + w._s_rho @ r + w._k @ e
    elif species == ETA:
        theta[1:-1] = -(w.d / dx) * np.diff(e) + w._s_eta @ e - w.alpha * (w._k @ r)
    else:
        raise ValueError(f"unknown species {species!r}")
    return theta


def limited_slopes(values: np.ndarray, dx: float) -> np.ndarray:
    padded = np.concatenate(([0.0], values, [0.0]))
    fwd = (padded[2:] - padded[1:-1]) / dx
    bwd = (padded[1:-1] - padded[:-2]) / dx
    return minmod(2.0 * fwd, 0.5 * (fwd + bwd), 2.0 * bwd)


def numerical_flux(w: FvWorkspace, values, theta: np.ndarray, slopes: np.ndarray | None = None) -> np.ndarray:
    """Upwind fluxes at the interfaces; boundary fluxes vanish."""
    v = _values(values)
    dx = w.grid.dx
    if slopes is None:
        slopes = limited_slopes(v, dx)
    east = np.maximum(v + 0.5 * dx * slopes, 0.0)
    west = np.maximum(v - 0.5 * dx * slopes, 0.0)
    inner = theta[1:-1]
    flux = np.zeros(v.size + 1)
    flux[1:-1] = np.maximum(inner, 0.0) * east[:-1] + np.minimum(inner, 0.0) * west[1:]
    return flux


def _rhs_arrays(w: FvWorkspace, r: np.ndarray, e: np.ndarray):
    dx = w.grid.dx
    w.theta_rho = interface_velocity(w, r, e, RHO)
    w.theta_eta = interface_velocity(w, r, e, ETA)
    w.slope_rho = limited_slopes(r, dx)
    w.slope_eta = limited_slopes(e, dx)
    f_rho = numerical_flux(w, r, w.theta_rho, w.slope_rho)
    f_eta = numerical_flux(w, e, w.theta_eta, w.slope_eta)
    return -np.diff(f_rho) / dx, -np.diff(f_eta) / dx


def rhs(w: FvWorkspace, pair: SpeciesPair) -> tuple[np.ndarray, np.ndarray]:
    """Time derivatives of the cell averages of both species."""
    _check_grid(w, pair.rho, pair.eta)
    return _rhs_arrays(w, pair.rho.values, pair.eta.values)


def stable_dt(w: FvWorkspace, r: np.ndarray, e: np.ndarray, guard: float = 1e-14) -> float:
    dx = w.grid.dx
    t_r = interface_velocity(w, r, e, RHO)
    t_e = interface_velocity(w, r, e, ETA)
    vmax = max(np.max(np.abs(t_r)), np.max(np.abs(t_e)))
    adv = dx / vmax if vmax > 0 else np.inf
    diff = dx * dx / (2.0 * w.d * max(r.max(), e.max()) + guard)
    return w.cfl * min(adv, diff)


def _ssprk3_arrays(w: FvWorkspace, r: np.ndarray, e: np.ndarray, dt: float):
    lr, le = _rhs_arrays(w, r, e)
    r1, e1 = r + dt * lr, e + dt * le
    lr, le = _rhs_arrays(w, r1, e1)
    r2, e2 = 0.75 * r + 0.25 * (r1 + dt * lr), 0.75 * e + 0.25 * (e1 + dt * le)
    lr, le = _rhs_arrays(w, r2, e2)
    return r / 3.0 + 2.0 / 3.0 * (r2 + dt * lr), e / 3.0 + 2.0 / 3.0 * (e2 + dt * le)


def _clip(v: np.ndarray) -> tuple[np.ndarray, float]:
    neg = np.minimum(v, 0.0)
    return v - neg, float(-neg.sum())


def step_ssprk3(w: FvWorkspace, pair: SpeciesPair, dt: float) -> tuple[SpeciesPair, float, float]:
    """Advance one SSP-RK3 step.

    Returns the new pair, the step actually taken (halved when positivity
    clipping would remove more than ``1e-10`` of the mass) and the clipped
    mass.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    _check_grid(w, pair.rho, pair.eta)
    r, e = pair.rho.values, pair.eta.values
    dx = w.grid.dx
    m_total = dx * (r.sum() + e.sum())
    for _ in range(MAX_HALVINGS + 1):
        nr, ne = _ssprk3_arrays(w, r, e, dt)
        nr, cr = _clip(nr)
        ne, ce = _clip(ne)
        clipped = dx * (cr + ce)
        if clipped <= CLIP_REJECT * m_total:
            if clipped > 0:
                log.debug("positivity clip removed %.3e mass", clipped)
            new = pair.with_states(Density1D(w.grid, nr), Density1D(w.grid, ne))
            return new, dt, clipped
        dt *= 0.5
    raise StepRejected(f"positivity could not be restored after {MAX_HALVINGS} halvings")


def diagnostics(pair: SpeciesPair, kernels: KernelTriple, clipped_mass: float = 0.0) -> dict:
    cm_r = center_of_mass(pair.rho)
    cm_e = center_of_mass(pair.eta)
    return {
        "mass_rho": mass(pair.rho),
        "mass_eta": mass(pair.eta),
        "cm_rho": cm_r,
        "cm_eta": cm_e,
        "cm_alpha": pair.alpha * cm_r - cm_e,
        "energy": energy(pair, pair, kernels),
        "clipped_mass": clipped_mass,
    }


@dataclass
class Trajectory:
    times: list[float] = field(default_factory=list)
    states: list[SpeciesPair] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)
    n_steps: int = 0

    def __len__(self):
        return len(self.times)

    @property
    def final(self) -> SpeciesPair:
        return self.states[-1]


Observer = Callable[[float, SpeciesPair, dict], None]


def _check_boundary(pair: SpeciesPair, t: float):
    for name, p in ((RHO, pair.rho), (ETA, pair.eta)):
        v = p.values
        if v[0] > BOUNDARY_TOL or v[-1] > BOUNDARY_TOL:
            raise BoundaryContactError(f"{name} reached the domain boundary at t={t:.6g}")


def simulate(
    w: FvWorkspace,
    pair: SpeciesPair,
    t_final: float,
    observer: Observer | None = None,
    report_dt: float | None = None,
    max_dt: float | None = None,
) -> Trajectory:
    """Integrate to ``t_final`` with adaptive CFL steps, recording the state
    every ``report_dt`` (default: only the endpoints)."""
    if pair.alpha != w.alpha or pair.d != w.d:
        raise ValueError("pair parameters differ from the workspace parameters")
    report_dt = t_final if report_dt is None else report_dt
    n_reports = int(round(t_final / report_dt))
    report_times = [min(k * report_dt, t_final) for k in range(1, n_reports + 1)]
    if not report_times or report_times[-1] < t_final:
        report_times.append(t_final)
    max_dt = report_dt if max_dt is None else max_dt

    traj = Trajectory()
    clipped_since_report = 0.0

    def record(t, state):
        diag = diagnostics(state, w.kernels, clipped_since_report)
        traj.times.append(t)
        traj.states.append(state)
        traj.diagnostics.append(diag)
        if observer is not None:
            observer(t, state, diag)

    _check_boundary(pair, 0.0)
    record(0.0, pair)
    t = 0.0
    for target in report_times:
        while t < target:
            dt = min(stable_dt(w, pair.rho.values, pair.eta.values), max_dt, target - t)
            pair, taken, clipped = step_ssprk3(w, pair, dt)
            clipped_since_report += clipped
            t = target if taken == target - t else t + taken
            traj.n_steps += 1
            _check_boundary(pair, t)
        record(t, pair)
        clipped_since_report = 0.0
    return traj
