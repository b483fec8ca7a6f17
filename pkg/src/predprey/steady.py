"""Multi-bump steady states for small diffusion.

A layout fixes, per species, the bump masses and centres.  When the centres
are an equilibrium of the purely non-local particle system (all force sums
``B`` vanish) and the curvature sums ``D`` are positive, each bump is, to
leading order in ``d**(1/3)``, a Barenblatt parabola of radius
``lambda = (3 z / (2 D))**(1/3)`` in the rescaled variable.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .density import Density1D, Grid1D, PseudoInverse, SpeciesPair, convolve, mass
from .kernels import KernelTriple

log = logging.getLogger(__name__)

COLLISION_TOL = 1e-9


class DisjointnessViolated(ValueError):
    """Two bumps of the same species overlap."""


class NonPositiveCurvature(ValueError):
    """Some ``D`` is not strictly positive, so no bump radius exists."""


class ConvergenceError(RuntimeError):
    pass


def _arr(values) -> np.ndarray:
    return np.atleast_1d(np.asarray(values, dtype=float))


@dataclass(frozen=True, eq=False)
class BumpLayout:
    rho_masses: np.ndarray
    rho_centers: np.ndarray
    eta_masses: np.ndarray
    eta_centers: np.ndarray

    def __post_init__(self):
        for name in ("rho_masses", "rho_centers", "eta_masses", "eta_centers"):
            object.__setattr__(self, name, _arr(getattr(self, name)))
        if self.rho_masses.shape != self.rho_centers.shape or self.eta_masses.shape != self.eta_centers.shape:
            raise ValueError("each species needs one mass per centre")
        if self.rho_masses.size + self.eta_masses.size == 0:
            raise ValueError("layout has no bumps")
        if np.any(self.rho_masses <= 0) or np.any(self.eta_masses <= 0):
            raise ValueError("bump masses must be positive")
        if np.any(np.diff(self.rho_centers) < 0) or np.any(np.diff(self.eta_centers) < 0):
            raise ValueError("centres must be sorted within each species")

    @property
    def n_rho(self) -> int:
        return self.rho_centers.size

    @property
    def n_eta(self) -> int:
        return self.eta_centers.size

    @property
    def z_rho(self) -> float:
        return float(self.rho_masses.sum())

    @property
    def z_eta(self) -> float:
        return float(self.eta_masses.sum())

    def joint_center(self, alpha: float) -> float:
        cm_r = float(np.dot(self.rho_masses, self.rho_centers) / self.z_rho) if self.n_rho else 0.0
        cm_e = float(np.dot(self.eta_masses, self.eta_centers) / self.z_eta) if self.n_eta else 0.0
        return alpha * cm_r - cm_e

    def shifted(self, s: float) -> "BumpLayout":
        return BumpLayout(self.rho_masses, self.rho_centers + s, self.eta_masses, self.eta_centers + s)

    def with_centers(self, centers: np.ndarray) -> "BumpLayout":
        n = self.n_rho
        return BumpLayout(self.rho_masses, centers[:n], self.eta_masses, centers[n:])

    @classmethod
    def from_dict(cls, spec: dict) -> "BumpLayout":
        rho, eta = spec.get("rho", {}), spec.get("eta", {})
        return cls(rho.get("masses", []), rho.get("centers", []), eta.get("masses", []), eta.get("centers", []))

    def to_dict(self, alpha: float | None = None) -> dict:
        out = {
            "rho": {"masses": self.rho_masses.tolist(), "centers": self.rho_centers.tolist()},
            "eta": {"masses": self.eta_masses.tolist(), "centers": self.eta_centers.tolist()},
        }
        if alpha is not None:
            out["alpha"] = alpha
        return out


def _sums(layout: BumpLayout, kernels: KernelTriple, alpha: float, order: int):
    """Per-bump sums of the ``order``-th kernel derivatives weighted by mass."""
    deriv = {1: "d1", 2: "d2"}[order]
    s_rho = getattr(kernels.s_rho, deriv)
    s_eta = getattr(kernels.s_eta, deriv)
    k = getattr(kernels.k, deriv)
    cr, ce = layout.rho_centers, layout.eta_centers
    zr, ze = layout.rho_masses, layout.eta_masses
    rho = s_rho(cr[:, None] - cr[None, :]) @ zr + k(cr[:, None] - ce[None, :]) @ ze
    eta = s_eta(ce[:, None] - ce[None, :]) @ ze - alpha * (k(ce[:, None] - cr[None, :]) @ zr)
    return np.atleast_1d(rho), np.atleast_1d(eta)


def compute_B(layout: BumpLayout, kernels: KernelTriple, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Net interaction force at every bump centre; zero at an equilibrium."""
    return _sums(layout, kernels, alpha, 1)


def compute_D(layout: BumpLayout, kernels: KernelTriple, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Curvature sums; all must be positive for the bumps to exist."""
    rho, eta = _sums(layout, kernels, alpha, 2)
    return -rho, -eta


def jacobian_B(layout: BumpLayout, kernels: KernelTriple, alpha: float) -> np.ndarray:
    """Derivative of the stacked ``(B_rho, B_eta)`` w.r.t. the stacked centres."""
    cr, ce = layout.rho_centers, layout.eta_centers
    zr, ze = layout.rho_masses, layout.eta_masses
    n, m = cr.size, ce.size
    srr = kernels.s_rho.d2(cr[:, None] - cr[None, :]) * zr[None, :]
    see = kernels.s_eta.d2(ce[:, None] - ce[None, :]) * ze[None, :]
    kre = kernels.k.d2(cr[:, None] - ce[None, :]) * ze[None, :]
    ker = kernels.k.d2(ce[:, None] - cr[None, :]) * zr[None, :]
    J = np.zeros((n + m, n + m))
    J[:n, :n] = -srr
    J[:n, :n][np.diag_indices(n)] += srr.sum(axis=1) + kre.sum(axis=1)
    J[:n, n:] = -kre
    J[n:, n:] = -see
    J[n:, n:][np.diag_indices(m)] += see.sum(axis=1) - alpha * ker.sum(axis=1)
    J[n:, :n] = alpha * ker
    return J


def _check_collisions(layout: BumpLayout):
    for name, c in (("rho", layout.rho_centers), ("eta", layout.eta_centers)):
        gaps = np.diff(np.sort(c))
        if np.any(gaps < COLLISION_TOL):
            raise ConvergenceError(f"two {name} centres collided; try fewer bumps")


def solve_centers(
    layout: BumpLayout,
    kernels: KernelTriple,
    alpha: float,
    cm_alpha: float,
    max_iter: int = 100,
    tol: float = 1e-12,
) -> BumpLayout:
    """Damped Newton solve for equilibrium centres with prescribed joint centre.

    ``layout`` supplies the masses and the initial guess.  The force
    equations are linearly dependent (their combination with weights
    ``alpha * z_rho`` and ``-z_eta`` vanishes identically), so the row with
    the largest weight is replaced by the joint-centre constraint.
    """
    n, m = layout.n_rho, layout.n_eta
    zr, ze = layout.rho_masses, layout.eta_masses
    weights = np.concatenate((alpha * zr, ze))
    dropped = int(np.argmax(weights))
    grad_c = np.concatenate((alpha * zr / zr.sum() if n else [], -ze / ze.sum() if m else []))

    def residual(lay):
        B = np.concatenate(compute_B(lay, kernels, alpha))
        c = np.concatenate((lay.rho_centers, lay.eta_centers))
        F = B.copy()
        F[dropped] = float(np.dot(grad_c, c)) - cm_alpha
        return F, B

    current = layout
    F, B = residual(current)
    for it in range(max_iter):
        if np.max(np.abs(B)) <= tol and abs(F[dropped]) <= tol:
            _check_collisions(current)
            return current
        J = jacobian_B(current, kernels, alpha)
        J[dropped] = grad_c
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"singular Jacobian at iteration {it}") from exc
        c0 = np.concatenate((current.rho_centers, current.eta_centers))
        f0 = float(F @ F)
        t = 1.0
        for _ in range(40):
            trial = c0 + t * step
            if np.all(np.diff(trial[:n]) >= 0) and np.all(np.diff(trial[n:]) >= 0):
                cand = current.with_centers(trial)
                Fc, Bc = residual(cand)
                if float(Fc @ Fc) <= (1.0 - 1e-4 * t) * f0 or f0 == 0.0:
                    break
            t *= 0.5
        else:
            raise ConvergenceError(f"line search failed at iteration {it}")
        current, F, B = cand, Fc, Bc
        _check_collisions(current)
    if np.max(np.abs(B)) <= tol and abs(F[dropped]) <= tol:
        return current
    raise ConvergenceError(f"Newton did not converge in {max_iter} iterations (max|B|={np.max(np.abs(B)):.3e})")


@dataclass(frozen=True, eq=False)
class BumpAnalysis:
    B_rho: np.ndarray
    B_eta: np.ndarray
    D_rho: np.ndarray
    D_eta: np.ndarray
    lambda_rho: np.ndarray
    lambda_eta: np.ndarray
    alpha_threshold: float

    @property
    def admissible(self) -> bool:
        return bool(np.all(self.D_rho > 0) and np.all(self.D_eta > 0))

    def intervals(self, layout: BumpLayout, d: float | None = None):
        """Supports ``cm -/+ radius``; with ``d`` the physical radius ``d**(1/3) * lambda``."""
        scale = 1.0 if d is None else d ** (1.0 / 3.0)
        rho = [(c - scale * r, c + scale * r) for c, r in zip(layout.rho_centers, self.lambda_rho)]
        eta = [(c - scale * r, c + scale * r) for c, r in zip(layout.eta_centers, self.lambda_eta)]
        return rho, eta

    def to_dict(self, layout: BumpLayout) -> dict:
        rho_iv, eta_iv = self.intervals(layout)
        return {
            "B": {"rho": self.B_rho.tolist(), "eta": self.B_eta.tolist()},
            "D": {"rho": self.D_rho.tolist(), "eta": self.D_eta.tolist()},
            "lambda": {"rho": self.lambda_rho.tolist(), "eta": self.lambda_eta.tolist()},
            "intervals": {"rho": [list(iv) for iv in rho_iv], "eta": [list(iv) for iv in eta_iv]},
            "alpha_threshold": self.alpha_threshold,
        }


def bump_radius(z, D):
    """``(3 (z/2) / D)**(1/3)``; NaN where ``D <= 0``."""
    z = np.asarray(z, dtype=float)
    D = np.asarray(D, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(D > 0, np.cbrt(1.5 * z / np.where(D > 0, D, 1.0)), np.nan)


def alpha_threshold(layout: BumpLayout, kernels: KernelTriple) -> float:
    """Largest escape propensity keeping every prey curvature sum positive.

    Only bumps whose cross-curvature sum is negative impose an upper bound;
    the others are unconstrained and contribute ``+inf``.
    """
    cr, ce = layout.rho_centers, layout.eta_centers
    if ce.size == 0 or cr.size == 0:
        return float("inf")
    num = kernels.s_eta.d2(ce[:, None] - ce[None, :]) @ layout.eta_masses
    den = kernels.k.d2(ce[:, None] - cr[None, :]) @ layout.rho_masses
    bounds = [nu / de if de < 0 else np.inf for nu, de in zip(np.atleast_1d(num), np.atleast_1d(den))]
    return float(min(bounds))


def analyze(layout: BumpLayout, kernels: KernelTriple, alpha: float) -> BumpAnalysis:
    B_rho, B_eta = compute_B(layout, kernels, alpha)
    D_rho, D_eta = compute_D(layout, kernels, alpha)
    return BumpAnalysis(
        B_rho,
        B_eta,
        D_rho,
        D_eta,
        bump_radius(layout.rho_masses, D_rho),
        bump_radius(layout.eta_masses, D_eta),
        alpha_threshold(layout, kernels),
    )


def _parabola_cell_averages(grid: Grid1D, center: float, radius: float, height_coef: float) -> np.ndarray:
    """Exact cell averages of ``height_coef * (radius^2 - (x - center)^2)`` on its support."""
    edges = grid.edges
    a = np.clip(edges[:-1], center - radius, center + radius) - center
    b = np.clip(edges[1:], center - radius, center + radius) - center
    integral = radius * radius * (b - a) - (b**3 - a**3) / 3.0
    return height_coef * integral / grid.dx


def _check_disjoint(intervals, name):
    ordered = sorted(intervals)
    for (l0, r0), (l1, r1) in zip(ordered, ordered[1:]):
        if l1 < r0:
            raise DisjointnessViolated(f"{name} bumps [{l0:.6g}, {r0:.6g}] and [{l1:.6g}, {r1:.6g}] overlap")


@dataclass(frozen=True, eq=False)
class MultiBumpState:
    layout: BumpLayout
    analysis: BumpAnalysis
    pair: SpeciesPair
    d: float | None


def build_state(
    layout: BumpLayout,
    analysis: BumpAnalysis,
    grid: Grid1D,
    alpha: float,
    d: float | None = None,
) -> MultiBumpState:
    """Assemble the Barenblatt bumps on ``grid``.

    Without ``d`` each bump is ``(D/2)(lambda^2 - (x - cm)^2)``.  With a
    diffusion coefficient ``d`` the rescaled physical profile is used:
    radius ``d**(1/3) * lambda`` and height coefficient ``D / (2 d)``.  Both
    carry exactly the bump mass since ``(2/3) D lambda^3 = z``.
    """
    if not analysis.admissible:
        raise NonPositiveCurvature("every curvature sum D must be strictly positive")
    rho_iv, eta_iv = analysis.intervals(layout, d)
    _check_disjoint(rho_iv, "rho")
    _check_disjoint(eta_iv, "eta")
    if alpha >= analysis.alpha_threshold:
        log.warning("alpha=%g is not below the curvature threshold %g", alpha, analysis.alpha_threshold)

    scale = 1.0 if d is None else d ** (1.0 / 3.0)
    coef_div = 1.0 if d is None else d

    def assemble(centers, masses, D, lam):
        values = np.zeros(grid.n_cells)
        for c, z, Di, li in zip(centers, masses, D, lam):
            if not np.isclose(2.0 / 3.0 * Di * li**3, z, rtol=1e-12, atol=0.0):
                raise AssertionError("parabola mass identity violated")
            values += _parabola_cell_averages(grid, c, scale * li, 0.5 * Di / coef_div)
        return Density1D(grid, values)

    rho = assemble(layout.rho_centers, layout.rho_masses, analysis.D_rho, analysis.lambda_rho)
    eta = assemble(layout.eta_centers, layout.eta_masses, analysis.D_eta, analysis.lambda_eta)
    for name, p, z in (("rho", rho, layout.z_rho), ("eta", eta, layout.z_eta)):
        if z > 0 and abs(mass(p) - z) > 1e-10 * z:
            raise ValueError(f"{name} bumps are not fully contained in the grid")
    return MultiBumpState(layout, analysis, SpeciesPair(rho, eta, alpha, 0.0 if d is None else d), d)


def support_components(values: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """Maximal runs of cells ``[first, last]`` with value above ``threshold``."""
    above = np.concatenate(([False], values > threshold, [False]))
    flips = np.flatnonzero(np.diff(above.astype(np.int8)))
    return [(int(a), int(b) - 1) for a, b in zip(flips[::2], flips[1::2])]


def euler_lagrange(pair: SpeciesPair, kernels: KernelTriple) -> tuple[np.ndarray, np.ndarray]:
    """Chemical potentials; stationary states keep them constant on each support component."""
    rho, eta = pair.rho, pair.eta
    el_rho = pair.d * rho.values - convolve(kernels.s_rho, rho) - convolve(kernels.k, eta)
    el_eta = pair.d * eta.values - convolve(kernels.s_eta, eta) + pair.alpha * convolve(kernels.k, rho)
    return el_rho, el_eta


def stationarity_residual(pair: SpeciesPair, kernels: KernelTriple) -> dict[str, list[float]]:
    """Relative spread (std / mean magnitude) of the chemical potential on
    every support component of each species; 0.02 is the pass threshold."""
    grid = pair.rho.grid
    el = euler_lagrange(pair, kernels)
    out = {}
    for name, p, e in (("rho", pair.rho, el[0]), ("eta", pair.eta, el[1])):
        m = mass(p)
        if m <= 0:
            out[name] = []
            continue
        comps = support_components(p.values, m * 1e-8 / grid.length)
        res = []
        for a, b in comps:
            seg = e[a : b + 1]
            scale = float(np.mean(np.abs(seg)))
            res.append(float(np.std(seg) / scale) if scale > 0 else 0.0)
        out[name] = res
    if not out["rho"] and not out["eta"]:
        raise ValueError("empty support")
    return out


class Regime(enum.Enum):
    MIXED = "Mixed"
    SEPARATED = "Separated"
    MULTI_BUMP = "MultiBump"
    INDETERMINATE = "Indeterminate"


@dataclass(frozen=True)
class Classification:
    regime: Regime
    n_rho: int
    n_eta: int

    @property
    def total_bumps(self) -> int:
        return self.n_rho + self.n_eta

    def __str__(self):
        if self.regime is Regime.MULTI_BUMP:
            return f"MultiBump({self.n_rho},{self.n_eta})"
        return self.regime.value


def _components_x(p: Density1D, support_tol: float):
    vmax = float(p.values.max())
    if vmax <= 0:
        return []
    edges = p.grid.edges
    return [(edges[a], edges[b + 1]) for a, b in support_components(p.values, support_tol * vmax)]


def classify(pair: SpeciesPair, support_tol: float = 1e-6) -> Classification:
    """Mixed, separated, multi-bump or indeterminate, from the support components."""
    tol = pair.rho.grid.dx
    rho = _components_x(pair.rho, support_tol)
    eta = _components_x(pair.eta, support_tol)

    def inside(a, b):
        return a[0] >= b[0] - tol and a[1] <= b[1] + tol

    def disjoint(a, b):
        return a[1] <= b[0] or b[1] <= a[0]

    nr, ne = len(rho), len(eta)
    for r in rho:
        for e in eta:
            if not disjoint(r, e) and not inside(r, e) and not inside(e, r):
                return Classification(Regime.INDETERMINATE, nr, ne)
    if nr == 1 and ne == 1 and inside(rho[0], eta[0]):
        return Classification(Regime.MIXED, 1, 1)
    if nr == 1 and ne == 2:
        left, right = eta
        r = rho[0]
        if disjoint(left, r) and disjoint(right, r) and left[1] <= r[0] and right[0] >= r[1]:
            return Classification(Regime.SEPARATED, 1, 2)
    return Classification(Regime.MULTI_BUMP, nr, ne)


def layout_from_state(pair: SpeciesPair, support_tol: float = 1e-6) -> BumpLayout:
    """Bump masses and centres read off the support components of a state."""
    dx = pair.rho.grid.dx
    x = pair.rho.grid.centers
    out = []
    for p in (pair.rho, pair.eta):
        vmax = float(p.values.max())
        comps = support_components(p.values, support_tol * vmax) if vmax > 0 else []
        masses, centers = [], []
        for a, b in comps:
            v = p.values[a : b + 1]
            z = float(v.sum() * dx)
            masses.append(z)
            centers.append(float(np.dot(x[a : b + 1], v) * dx / z))
        out.append((masses, centers))
    return BumpLayout(out[0][0], out[0][1], out[1][0], out[1][1])


def particle_clusters(u: PseudoInverse, gap_factor: float = 10.0) -> tuple[list[float], list[float]]:
    """Masses and centres of the particle clusters of one species.

    The piecewise-constant particle density never vanishes between the first
    and last particle, so bumps are separated where a gap exceeds
    ``gap_factor`` times the median gap.  The mass ``mass / (N-1)`` of a
    bridging interval is shared equally by the two clusters it joins.
    """
    x = u.positions
    gaps = np.diff(x)
    cuts = np.flatnonzero(gaps > gap_factor * np.median(gaps)) + 1
    h = u.mass / (x.size - 1)
    masses, centers = [], []
    for k, c in enumerate(np.split(x, cuts)):
        bridges = (k > 0) + (k < cuts.size)
        masses.append(h * (c.size - 1 + 0.5 * bridges))
        centers.append(float(c.mean()))
    return masses, centers


def layout_from_particles(X_rho: PseudoInverse, X_eta: PseudoInverse, gap_factor: float = 10.0) -> BumpLayout:
    """Bump layout read off the particle clusters of both species."""
    (mr, cr), (me, ce) = particle_clusters(X_rho, gap_factor), particle_clusters(X_eta, gap_factor)
    return BumpLayout(mr, cr, me, ce)
