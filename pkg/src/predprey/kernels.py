"""Radial interaction potentials.

Every kernel exposes its value, first and second derivatives and an odd
antiderivative ``G`` with ``G(0) = 0``.  Two families are supported: the
closed-form Gaussian ``amplitude * exp(-(x / width)**2)`` and a tabulated
kernel interpolated by a cubic spline (used to inject unusual kernels in
tests).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import erf

DEFAULT_AMPLITUDE = 1.0 / np.sqrt(np.pi)


def _checked(x):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("kernel evaluated at a non-finite point")
    return arr


def _out(arr, value):
    return float(value) if arr.ndim == 0 else value


@dataclass(frozen=True, eq=False)
class Kernel:
    """An even interaction potential.

    Use :meth:`gaussian` or :meth:`tabulated` rather than the constructor.
    """

    family: str
    amplitude: float = DEFAULT_AMPLITUDE
    width: float = 1.0
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    _spline: CubicSpline | None = field(default=None, repr=False)
    _d1: object = field(default=None, repr=False)
    _d2: object = field(default=None, repr=False)
    _anti: object = field(default=None, repr=False)

    @classmethod
    def gaussian(cls, amplitude: float = DEFAULT_AMPLITUDE, width: float = 1.0) -> "Kernel":
        if not width > 0:
            raise ValueError("gaussian width must be positive")
        return cls("gaussian", float(amplitude), float(width))

    @classmethod
    def tabulated(cls, x, y) -> "Kernel":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or x.size < 4:
            raise ValueError("tabulated kernel needs matching 1D arrays with at least 4 samples")
        if np.any(np.diff(x) <= 0):
            raise ValueError("tabulated kernel abscissae must be strictly increasing")
        if not (x[0] <= 0.0 <= x[-1]):
            raise ValueError("tabulated kernel must cover the origin")
        spline = CubicSpline(x, y)
        anti = spline.antiderivative()
        anti_at_zero = float(anti(0.0))

        def antider(t):
            # constant extension outside the table: the kernel is zero there
            return anti(np.clip(t, x[0], x[-1])) - anti_at_zero

        return cls(
            "tabulated",
            x=x,
            y=y,
            _spline=spline,
            _d1=spline.derivative(1),
            _d2=spline.derivative(2),
            _anti=antider,
        )

    @classmethod
    def zero(cls) -> "Kernel":
        grid = np.linspace(-1.0, 1.0, 5)
        return cls.tabulated(grid, np.zeros_like(grid))

    @classmethod
    def from_dict(cls, spec: dict) -> "Kernel":
        family = spec.get("family", "gaussian").lower()
        if family == "gaussian":
            return cls.gaussian(spec.get("amplitude", DEFAULT_AMPLITUDE), spec.get("width", 1.0))
        if family == "tabulated":
            return cls.tabulated(spec["x"], spec["y"])
        raise ValueError(f"unknown kernel family {family!r}")

    def to_dict(self) -> dict:
        if self.family == "gaussian":
            return {"family": "gaussian", "amplitude": self.amplitude, "width": self.width}
        return {"family": "tabulated", "x": self.x.tolist(), "y": self.y.tolist()}

    def scaled(self, factor: float) -> "Kernel":
        """Kernel multiplied by a constant factor."""
        if self.family == "gaussian":
            return Kernel.gaussian(self.amplitude * factor, self.width)
        return Kernel.tabulated(self.x, self.y * factor)

    def _inside(self, arr):
        return (arr >= self.x[0]) & (arr <= self.x[-1])

    def __call__(self, x):
        arr = _checked(x)
        if self.family == "gaussian":
            return _out(arr, self.amplitude * np.exp(-((arr / self.width) ** 2)))
        return _out(arr, np.where(self._inside(arr), self._spline(arr), 0.0))

    eval = __call__

    def d1(self, x):
        arr = _checked(x)
        if self.family == "gaussian":
            s = arr / self.width
            return _out(arr, -2.0 * self.amplitude * s / self.width * np.exp(-s * s))
        return _out(arr, np.where(self._inside(arr), self._d1(arr), 0.0))

    def d2(self, x):
        arr = _checked(x)
        if self.family == "gaussian":
            s = arr / self.width
            return _out(arr, self.amplitude / self.width**2 * (4.0 * s * s - 2.0) * np.exp(-s * s))
        return _out(arr, np.where(self._inside(arr), self._d2(arr), 0.0))

    def antider(self, x):
        arr = _checked(x)
        if self.family == "gaussian":
            scale = 0.5 * np.sqrt(np.pi) * self.amplitude * self.width
            return _out(arr, scale * erf(arr / self.width))
        return _out(arr, np.asarray(self._anti(arr), dtype=float))


@dataclass(frozen=True)
class KernelTriple:
    """Self-interaction kernels for each species and the cross kernel."""

    s_rho: Kernel
    s_eta: Kernel
    k: Kernel

    @classmethod
    def gaussian(cls, amplitude: float = DEFAULT_AMPLITUDE, width: float = 1.0) -> "KernelTriple":
        g = Kernel.gaussian(amplitude, width)
        return cls(g, g, g)

    @classmethod
    def zero(cls) -> "KernelTriple":
        z = Kernel.zero()
        return cls(z, z, z)

    @classmethod
    def from_dict(cls, spec: dict) -> "KernelTriple":
        return cls(
            Kernel.from_dict(spec["s_rho"]),
            Kernel.from_dict(spec["s_eta"]),
            Kernel.from_dict(spec["k"]),
        )

    def to_dict(self) -> dict:
        return {"s_rho": self.s_rho.to_dict(), "s_eta": self.s_eta.to_dict(), "k": self.k.to_dict()}

    def items(self):
        return (("s_rho", self.s_rho), ("s_eta", self.s_eta), ("k", self.k))


@dataclass(frozen=True)
class KernelCheck:
    symmetric: bool
    nonincreasing_radial: bool
    nonnegative: bool
    concavity_range: tuple[float, float]

    @property
    def ok(self) -> bool:
        return self.symmetric and self.nonincreasing_radial and self.nonnegative


@dataclass(frozen=True)
class AssumptionReport:
    radius: float
    n_samples: int
    kernels: dict[str, KernelCheck]

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.kernels.values())

    @property
    def concavity_range(self) -> tuple[float, float]:
        """Intersection of the per-kernel concavity ranges."""
        lo = max(c.concavity_range[0] for c in self.kernels.values())
        hi = min(c.concavity_range[1] for c in self.kernels.values())
        return lo, hi


def _check_kernel(kernel: Kernel, xs: np.ndarray, sym_tol: float) -> KernelCheck:
    vals = kernel(xs)
    mirrored = kernel(-xs)
    scale = max(1.0, float(np.max(np.abs(vals))))
    symmetric = bool(np.max(np.abs(vals - mirrored)) <= sym_tol * scale)
    nonnegative = bool(np.all(vals >= -sym_tol * scale))
    pos = xs[xs > 0]
    radial = kernel(pos)
    nonincreasing = bool(np.all(np.diff(radial) <= sym_tol * scale)) and bool(
        np.all(kernel.d1(pos) <= sym_tol * scale)
    )

    # largest window around the origin on which the second derivative stays negative
    centre = int(np.argmin(np.abs(xs)))
    concave = kernel.d2(xs) < 0
    if not concave[centre]:
        return KernelCheck(symmetric, nonincreasing, nonnegative, (0.0, 0.0))
    lo = hi = centre
    while lo > 0 and concave[lo - 1]:
        lo -= 1
    while hi < xs.size - 1 and concave[hi + 1]:
        hi += 1
    return KernelCheck(symmetric, nonincreasing, nonnegative, (float(xs[lo]), float(xs[hi])))


def check_assumptions(triple: KernelTriple, radius: float, n_samples: int) -> AssumptionReport:
    """Sample each kernel on ``[-radius, radius]`` and report symmetry,
    monotonicity, sign and the concavity window around the origin."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    if n_samples < 3:
        raise ValueError("need at least 3 samples")
    xs = np.linspace(-radius, radius, n_samples)
    checks = {name: _check_kernel(k, xs, 1e-10 if k.family == "tabulated" else 0.0) for name, k in triple.items()}
    return AssumptionReport(float(radius), int(n_samples), checks)
