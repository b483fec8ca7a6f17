"""Deterministic particle method on the pseudo-inverse (quantile) variables.

Each species is represented by ``N`` sorted particles carrying equal slices
of mass.  Particles move under the discrete porous-medium pressure of the
reconstructed piecewise-constant density plus the self and cross
interaction forces; time stepping uses an embedded Bogacki-Shampine 3(2)
pair with PI step-size control.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np

from .density import PseudoInverse
from .kernels import KernelTriple

log = logging.getLogger(__name__)


class OrderingError(RuntimeError):
    """Particles of one species collided or crossed."""


@dataclass(frozen=True, eq=False)
class ParticleState:
    X_rho: PseudoInverse
    X_eta: PseudoInverse
    alpha: float
    d: float

    def __post_init__(self):
        for name, u in (("rho", self.X_rho), ("eta", self.X_eta)):
            gaps = np.diff(u.positions)
            if np.any(gaps <= 0):
                i = int(np.argmax(gaps <= 0))
                raise OrderingError(f"{name} particles {i} and {i + 1} are not strictly increasing")

    @property
    def cm_alpha(self) -> float:
        return self.alpha * float(np.mean(self.X_rho.positions)) - float(np.mean(self.X_eta.positions))

    def packed(self) -> np.ndarray:
        return np.concatenate((self.X_rho.positions, self.X_eta.positions))

    def unpacked(self, y: np.ndarray) -> "ParticleState":
        n = self.X_rho.n
        return ParticleState(
            PseudoInverse(y[:n].copy(), self.X_rho.mass),
            PseudoInverse(y[n:].copy(), self.X_eta.mass),
            self.alpha,
            self.d,
        )


def _pressure_velocity(X: np.ndarray, m: float, d: float) -> np.ndarray:
    """``d/(2h) * (rho_{i-1}^2 - rho_i^2)`` with zero density outside the cloud."""
    h = m / (X.size - 1)
    dens = np.zeros(X.size + 1)
    dens[1:-1] = h / np.diff(X)
    sq = dens * dens
    return d / (2.0 * h) * (sq[:-1] - sq[1:])


@numba.njit(cache=True)
def _gaussian_exponents(xr, xe, inv_r, inv_e, inv_k, buf):
    """Fill ``buf`` with ``-(dx / width)**2`` for the strict upper triangles of
    the two self blocks followed by the full cross block."""
    n, m = xr.size, xe.size
    p = 0
    for i in range(n):
        for j in range(i + 1, n):
            s = (xr[i] - xr[j]) * inv_r
            buf[p] = -s * s
            p += 1
    for i in range(m):
        for j in range(i + 1, m):
            s = (xe[i] - xe[j]) * inv_e
            buf[p] = -s * s
            p += 1
    for i in range(n):
        for j in range(m):
            s = (xr[i] - xe[j]) * inv_k
            buf[p] = -s * s
            p += 1


@numba.njit(cache=True)
def _pressure_at(x, i, c, h):
    left = h / (x[i] - x[i - 1]) if i > 0 else 0.0
    right = h / (x[i + 1] - x[i]) if i < x.size - 1 else 0.0
    return c * (left * left - right * right)


@numba.njit(cache=True)
def _pair_index(a, b, n):
    """Position of the pair ``a < b`` in the packed strict upper triangle."""
    return a * n - a * (a + 1) // 2 + b - a - 1


@numba.njit(cache=True)
def _self_sum(x, i, ex, offset):
    # left and right neighbours are summed separately, nearest first, so a
    # mirrored configuration gives exactly the negated result
    n = x.size
    left = 0.0
    for j in range(i - 1, -1, -1):
        left += (x[i] - x[j]) * ex[offset + _pair_index(j, i, n)]
    right = 0.0
    for j in range(i + 1, n):
        right += (x[i] - x[j]) * ex[offset + _pair_index(i, j, n)]
    return left + right


@numba.njit(cache=True)
def _gaussian_accumulate(xr, xe, ex, c_r, c_e, c_k, w_rho, w_eta, alpha, m_rho, m_eta, d, out):
    n, m = xr.size, xe.size
    off_e = n * (n - 1) // 2
    off_k = off_e + m * (m - 1) // 2
    h_r, h_e = m_rho / (n - 1), m_eta / (m - 1)
    p_r, p_e = d / (2.0 * h_r), d / (2.0 * h_e)
    k = 0
    for i in range(n):
        # prey strictly left of predator i are xe[:k]
        while k < m and xe[k] < xr[i]:
            k += 1
        left = 0.0
        for j in range(k - 1, -1, -1):
            left += (xr[i] - xe[j]) * ex[off_k + i * m + j]
        right = 0.0
        for j in range(k, m):
            right += (xr[i] - xe[j]) * ex[off_k + i * m + j]
        v = _pressure_at(xr, i, p_r, h_r) if d > 0 else 0.0
        out[i] = v + w_rho * c_r * _self_sum(xr, i, ex, 0) + w_eta * c_k * (left + right)
    k = 0
    for j in range(m):
        while k < n and xr[k] < xe[j]:
            k += 1
        left = 0.0
        for i in range(k - 1, -1, -1):
            left += (xr[i] - xe[j]) * ex[off_k + i * m + j]
        right = 0.0
        for i in range(k, n):
            right += (xr[i] - xe[j]) * ex[off_k + i * m + j]
        v = _pressure_at(xe, j, p_e, h_e) if d > 0 else 0.0
        out[n + j] = v + w_eta * c_e * _self_sum(xe, j, ex, off_e) + alpha * w_rho * c_k * (left + right)


class _Forces:
    """Velocity field of the packed particle vector for fixed parameters."""

    def __init__(self, state: ParticleState, kernels: KernelTriple):
        self.n_rho = state.X_rho.n
        self.m_rho = state.X_rho.mass
        self.m_eta = state.X_eta.mass
        self.w_rho = self.m_rho / state.X_rho.n
        self.w_eta = self.m_eta / state.X_eta.n
        self.alpha = state.alpha
        self.d = state.d
        self.kernels = kernels
        self.evaluations = 0
        ks = (kernels.s_rho, kernels.s_eta, kernels.k)
        self.gaussian = all(k.family == "gaussian" for k in ks)
        if self.gaussian:
            n, m = state.X_rho.n, state.X_eta.n
            self._buf = np.empty(n * (n - 1) // 2 + m * (m - 1) // 2 + n * m)
            self._inv = tuple(1.0 / k.width for k in ks)
            # d/dx a*exp(-(x/w)^2) = (-2a/w^2) * x * exp(-(x/w)^2)
            self._coef = tuple(-2.0 * k.amplitude / k.width**2 for k in ks)

    def __call__(self, y: np.ndarray) -> np.ndarray:
        self.evaluations += 1
        if self.gaussian:
            return self._gaussian(y)
        return self._generic(y)

    def _gaussian(self, y: np.ndarray) -> np.ndarray:
        n = self.n_rho
        xr, xe = y[:n], y[n:]
        _gaussian_exponents(xr, xe, *self._inv, self._buf)
        np.exp(self._buf, out=self._buf)
        out = np.empty(y.size)
        _gaussian_accumulate(
            xr, xe, self._buf, *self._coef, self.w_rho, self.w_eta, self.alpha, self.m_rho, self.m_eta, self.d, out
        )
        return out

    def _generic(self, y: np.ndarray) -> np.ndarray:
        n = self.n_rho
        xr, xe = y[:n], y[n:]
        ks = self.kernels
        rr = ks.s_rho.d1(xr[:, None] - xr[None, :])
        ee = ks.s_eta.d1(xe[:, None] - xe[None, :])
        re = ks.k.d1(xr[:, None] - xe[None, :])
        v_rho = self.w_rho * rr.sum(axis=1) + self.w_eta * re.sum(axis=1)
        # K' is odd, so the prey-predator block is minus the transpose
        v_eta = self.w_eta * ee.sum(axis=1) + self.alpha * self.w_rho * re.sum(axis=0)
        if self.d > 0:
            v_rho += _pressure_velocity(xr, self.m_rho, self.d)
            v_eta += _pressure_velocity(xe, self.m_eta, self.d)
        return np.concatenate((v_rho, v_eta))


def particle_rhs(s: ParticleState, kernels: KernelTriple) -> tuple[np.ndarray, np.ndarray]:
    """Velocities of the predator and prey particles."""
    v = _Forces(s, kernels)(s.packed())
    return v[: s.X_rho.n], v[s.X_rho.n :]


@dataclass
class ParticleTrajectory:
    times: list[float] = field(default_factory=list)
    rho: list[np.ndarray] = field(default_factory=list)
    eta: list[np.ndarray] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)
    m_rho: float = 1.0
    m_eta: float = 1.0
    alpha: float = 1.0
    d: float = 0.0
    n_accepted: int = 0
    n_rejected: int = 0

    def __len__(self):
        return len(self.times)

    def state(self, k: int = -1) -> ParticleState:
        return ParticleState(
            PseudoInverse(self.rho[k], self.m_rho), PseudoInverse(self.eta[k], self.m_eta), self.alpha, self.d
        )

    @property
    def final(self) -> ParticleState:
        return self.state(-1)

    def position_matrix(self) -> np.ndarray:
        return np.hstack((np.asarray(self.rho), np.asarray(self.eta)))


def particle_diagnostics(s: ParticleState) -> dict:
    cm_r = float(np.mean(s.X_rho.positions))
    cm_e = float(np.mean(s.X_eta.positions))
    return {
        "mass_rho": s.X_rho.mass,
        "mass_eta": s.X_eta.mass,
        "cm_rho": cm_r,
        "cm_eta": cm_e,
        "cm_alpha": s.alpha * cm_r - cm_e,
    }


# Bogacki-Shampine 3(2) tableau
_A21 = 0.5
_A32 = 0.75
_B = (2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0)
_E = (-5.0 / 72.0, 1.0 / 12.0, 1.0 / 9.0, -1.0 / 8.0)
_SAFETY = 0.9
_BETA1 = 0.7 / 3.0
_BETA2 = 0.4 / 3.0
MAX_HALVINGS = 30


def _sorted_species(y: np.ndarray, n: int) -> bool:
    return bool(np.all(np.diff(y[:n]) > 0) and np.all(np.diff(y[n:]) > 0))


def _rms(v: np.ndarray) -> float:
    # exactly rounded, so independent of the particle order
    return math.sqrt(math.fsum(v * v) / v.size)


def _initial_step(f, y, f0, rtol, atol) -> float:
    scale = atol + rtol * np.abs(y)
    d0 = _rms(y / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y + h0 * f0
    d2 = _rms((f(y1) - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 3.0)
    return min(100 * h0, h1)


def integrate_rk23(
    s: ParticleState,
    kernels: KernelTriple,
    t_final: float,
    rtol: float = 1e-6,
    atol: float = 1e-9,
    observer: Callable[[float, ParticleState, dict], None] | None = None,
    report_dt: float | None = None,
    max_step: float = np.inf,
) -> ParticleTrajectory:
    """Adaptive Bogacki-Shampine integration of the particle system.

    Steps that would break the ordering of a species are retried at half
    the step size; the run fails after 30 consecutive halvings.
    """
    if not (rtol > 0 and atol > 0):
        raise ValueError("tolerances must be positive")
    report_dt = t_final if report_dt is None else report_dt
    n_reports = int(round(t_final / report_dt))
    report_times = [min(k * report_dt, t_final) for k in range(1, n_reports + 1)]
    if not report_times or report_times[-1] < t_final:
        report_times.append(t_final)

    f = _Forces(s, kernels)
    n = s.X_rho.n
    traj = ParticleTrajectory(m_rho=s.X_rho.mass, m_eta=s.X_eta.mass, alpha=s.alpha, d=s.d)

    def record(t, y):
        st = s.unpacked(y)
        diag = particle_diagnostics(st)
        traj.times.append(t)
        traj.rho.append(y[:n].copy())
        traj.eta.append(y[n:].copy())
        traj.diagnostics.append(diag)
        if observer is not None:
            observer(t, st, diag)

    y = s.packed()
    t = 0.0
    record(t, y)
    k1 = f(y)
    h = min(_initial_step(f, y, k1, rtol, atol), max_step)
    err_prev = 1.0
    halvings = 0
    for target in report_times:
        while t < target:
            last = h >= target - t
            step = target - t if last else h
            k2 = f(y + step * _A21 * k1)
            k3 = f(y + step * _A32 * k2)
            y_new = y + step * (_B[0] * k1 + _B[1] * k2 + _B[2] * k3)
            if not _sorted_species(y_new, n):
                traj.n_rejected += 1
                halvings += 1
                if halvings > MAX_HALVINGS:
                    raise OrderingError(f"particle ordering violated irrecoverably at t={t:.6g}")
                h = 0.5 * step
                continue
            k4 = f(y_new)
            err = step * (_E[0] * k1 + _E[1] * k2 + _E[2] * k3 + _E[3] * k4)
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err_norm = _rms(err / scale)
            if err_norm <= 1.0:
                t = target if last else t + step
                y, k1 = y_new, k4
                traj.n_accepted += 1
                halvings = 0
                factor = _SAFETY * max(err_norm, 1e-10) ** -_BETA1 * err_prev**_BETA2
                err_prev = max(err_norm, 1e-4)
                h = min(step * min(5.0, max(0.2, factor)), max_step) if not last else max(h, step)
            else:
                traj.n_rejected += 1
                h = step * max(0.2, _SAFETY * err_norm ** (-1.0 / 3.0))
        record(t, y)
    log.debug("rk23: %d accepted, %d rejected, %d evaluations", traj.n_accepted, traj.n_rejected, f.evaluations)
    return traj


def steady_detect(times, positions, window: float, tol: float, scale: float = 1.0) -> float | None:
    """Earliest report time after which positions move by at most
    ``tol * scale`` (max norm) over the following ``window``.

    ``positions`` is an array of shape ``(n_times, n_particles)``.
    """
    times = np.asarray(times, dtype=float)
    pos = np.asarray(positions, dtype=float)
    bound = tol * scale
    for k, t in enumerate(times):
        if t + window > times[-1] + 1e-12:
            break
        stop = np.searchsorted(times, t + window + 1e-12, side="right")
        change = np.max(np.abs(pos[k:stop] - pos[k]))
        if change <= bound:
            return float(t)
    return None
