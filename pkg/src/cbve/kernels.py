"""Jump kernels of the branching mechanism and their moment queries.

Two families are supported:

* ``AtomicKernel`` -- finitely many jump sizes; every query is an exact
  finite sum.
* ``PowerLawKernel`` -- density ``scale * z**(-1-alpha)`` on
  ``(zmin, zmax)`` with ``alpha`` in (0, 2).  With ``zmin == 0`` the kernel
  has infinite activity, so only compensated combinations are finite near
  the origin.  Moments are served by incomplete-gamma closed forms; an
  adaptive-quadrature route (``quad``) is kept as an independent
  cross-check and as the backing of the public moment query contract.

All interval queries use the half-open convention m((a, b]).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import exp1, gammainc, gammaincc, gammaln

from .errors import KernelQueryError

# Below this value of lam*z the direct e^{-x}-1+x form loses all digits;
# a 4-term Taylor tail keeps the remainder under 1e-20.
SERIES_CUTOFF = 1e-4
# Split point for power-law integrals: the series branch handles lam*z
# below this, the incomplete-gamma branch the rest.
_SPLIT = 0.1
_SERIES_TERMS = 14


def k_compensated(x: float) -> float:
    """e^{-x} - 1 + x, stable for small x >= 0."""
    if x < SERIES_CUTOFF:
        return x * x * (0.5 + x * (-1.0 / 6.0 + x * (1.0 / 24.0 - x / 120.0)))
    return math.expm1(-x) + x


def _upper_gamma(s: float, x: float) -> float:
    """Upper incomplete gamma for s > -2, extended below 0 by recursion."""
    if x == math.inf:
        return 0.0
    if s > 0.0:
        return math.exp(gammaln(s)) * float(gammaincc(s, x))
    if s == 0.0:
        return float(exp1(x))
    return (_upper_gamma(s + 1.0, x) - x**s * math.exp(-x)) / s


@dataclass(frozen=True)
class AtomicKernel:
    """Finitely many jump sizes z_j > 0 with weights w_j >= 0."""

    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self):
        for z, w in self.atoms:
            if z <= 0.0:
                raise KernelQueryError(f"atomic jump size must be positive, got {z}")
            if w < 0.0:
                raise KernelQueryError(f"atomic jump weight must be nonnegative, got {w}")

    def _window(self, a: float, b: float):
        if a > b:
            raise KernelQueryError(f"invalid bounds a={a} > b={b}")
        return [(z, w) for z, w in self.atoms if a < z <= b]

    def mass(self, a: float, b: float) -> float:
        return math.fsum(w for _, w in self._window(a, b))

    def zn_moment(self, n: int, a: float, b: float) -> float:
        return math.fsum(w * z**n for z, w in self._window(a, b))

    def z_moment(self, a: float, b: float) -> float:
        return self.zn_moment(1, a, b)

    def z2_moment(self, a: float, b: float) -> float:
        return self.zn_moment(2, a, b)

    def one_wedge_z2(self) -> float:
        return math.fsum(w * min(1.0, z * z) for z, w in self.atoms)

    def expm1_moment(self, lam: float, a: float, b: float) -> float:
        """Integral of (e^{-lam z} - 1) over (a, b]."""
        return math.fsum(w * math.expm1(-lam * z) for z, w in self._window(a, b))

    def k_moment(self, lam: float, a: float, b: float) -> float:
        """Integral of (e^{-lam z} - 1 + lam z) over (a, b]."""
        return math.fsum(w * k_compensated(lam * z) for z, w in self._window(a, b))

    def z_expm1_moment(self, lam: float, a: float, b: float) -> float:
        """Integral of z (1 - e^{-lam z}) over (a, b]."""
        return math.fsum(w * z * -math.expm1(-lam * z) for z, w in self._window(a, b))

    def k1_moment(self, lam: float) -> float:
        """Integral of K_1(lam, z) = e^{-lam z} - 1 + lam z 1_{z<=1} over the support."""
        out = 0.0
        for z, w in self.atoms:
            if z <= 1.0:
                out += w * k_compensated(lam * z)
            else:
                out += w * math.expm1(-lam * z)
        return out

    def exp_pmf_weights(self, rate: float, a: float, b: float, n_max: int,
                        with_zero: bool = True) -> np.ndarray:
        """Array over n = 0..n_max of the integrals e^{-rate z}(rate z)^n / n!."""
        out = np.zeros(n_max + 1)
        ns = np.arange(n_max + 1)
        for z, w in self._window(a, b):
            mu = rate * z
            out += w * np.exp(ns * math.log(mu) - mu - gammaln(ns + 1)) if mu > 0 else w * (ns == 0)
        if not with_zero:
            out[0] = 0.0
        return out

    def scaled(self, factor: float) -> "AtomicKernel":
        return AtomicKernel(tuple((z, w * factor) for z, w in self.atoms))

    def quad(self, f, a: float, b: float, tol: float = 1e-10):
        """Exact route: atomic kernels integrate f by direct summation."""
        return math.fsum(w * f(z) for z, w in self._window(a, b)), 0.0

    def to_dict(self) -> dict:
        return {"type": "atomic", "atoms": [{"z": z, "w": w} for z, w in self.atoms]}


@dataclass(frozen=True)
class PowerLawKernel:
    """Density scale * z**(-1-alpha) on (zmin, zmax), alpha in (0, 2)."""

    alpha: float
    scale: float
    zmin: float = 0.0
    zmax: float = math.inf

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise KernelQueryError(f"power-law exponent must be in (0,2), got {self.alpha}")
        if self.scale <= 0.0:
            raise KernelQueryError("power-law scale must be positive")
        if not 0.0 <= self.zmin < self.zmax:
            raise KernelQueryError("power-law support needs 0 <= zmin < zmax")

    def _clip(self, a: float, b: float):
        if a > b:
            raise KernelQueryError(f"invalid bounds a={a} > b={b}")
        lo, hi = max(a, self.zmin), min(b, self.zmax)
        if lo >= hi:
            return None
        return lo, hi

    def zn_moment(self, n: int, a: float, b: float) -> float:
        win = self._clip(a, b)
        if win is None:
            return 0.0
        lo, hi = win
        p = n - self.alpha
        if lo == 0.0 and p <= 0.0:
            raise KernelQueryError(f"divergent moment z^{n} near 0 for alpha={self.alpha}")
        if hi == math.inf:
            if p >= 0.0:
                raise KernelQueryError(f"divergent moment z^{n} at infinity")
            return -self.scale * lo**p / p
        if abs(p) < 1e-12:
            return self.scale * math.log(hi / lo)
        return self.scale * (hi**p - lo**p) / p

    def mass(self, a: float, b: float) -> float:
        return self.zn_moment(0, a, b)

    def z_moment(self, a: float, b: float) -> float:
        return self.zn_moment(1, a, b)

    def z2_moment(self, a: float, b: float) -> float:
        return self.zn_moment(2, a, b)

    def one_wedge_z2(self) -> float:
        out = 0.0
        if self.zmin < 1.0:
            out += self.zn_moment(2, self.zmin, min(1.0, self.zmax))
        if self.zmax > 1.0:
            out += self.mass(max(1.0, self.zmin), self.zmax)
        return out

    def exp_moment(self, beta: float, a: float, b: float) -> float:
        """Integral of e^{-beta z}; requires an effective lower bound > 0."""
        win = self._clip(a, b)
        if win is None:
            return 0.0
        lo, hi = win
        if beta == 0.0:
            return self.mass(a, b)
        if lo == 0.0:
            raise KernelQueryError("divergent exponential moment at 0 (use a compensated query)")
        s = -self.alpha
        return self.scale * beta**self.alpha * (
            _upper_gamma(s, beta * lo) - _upper_gamma(s, beta * hi)
        )

    def _series(self, lam: float, lo: float, hi: float, j0: int) -> float:
        # sum_{j>=j0} (-1)^j lam^j / j! * int z^j over (lo, hi]; valid for lam*hi <= _SPLIT
        acc, coef = 0.0, 1.0
        for j in range(1, j0 + _SERIES_TERMS):
            coef *= -lam / j
            if j >= j0:
                acc += coef * self.zn_moment(j, lo, hi)
        return acc

    def expm1_moment(self, lam: float, a: float, b: float) -> float:
        win = self._clip(a, b)
        if win is None or lam == 0.0:
            return 0.0
        lo, hi = win
        if lo == 0.0 and self.alpha >= 1.0:
            raise KernelQueryError("divergent expm1 moment at 0 for alpha >= 1")
        zc = min(hi, max(lo, _SPLIT / lam))
        out = 0.0
        if zc > lo:
            out += self._series(lam, lo, zc, 1)
        if hi > zc:
            out += self.exp_moment(lam, zc, hi) - self.mass(zc, hi)
        return out

    def k_moment(self, lam: float, a: float, b: float) -> float:
        win = self._clip(a, b)
        if win is None or lam == 0.0:
            return 0.0
        lo, hi = win
        zc = min(hi, max(lo, _SPLIT / lam))
        out = 0.0
        if zc > lo:
            out += self._series(lam, lo, zc, 2)
        if hi > zc:
            out += self.exp_moment(lam, zc, hi) - self.mass(zc, hi) + lam * self.z_moment(zc, hi)
        return out

    def z_expm1_moment(self, lam: float, a: float, b: float) -> float:
        """Integral of z (1 - e^{-lam z}); finite for every alpha in (0,2)."""
        win = self._clip(a, b)
        if win is None or lam == 0.0:
            return 0.0
        lo, hi = win
        zc = min(hi, max(lo, _SPLIT / lam))
        out = 0.0
        if zc > lo:
            # z(1 - e^{-lam z}) = sum_{j>=1} (-1)^{j+1} lam^j z^{j+1} / j!
            acc, coef = 0.0, 1.0
            for j in range(1, _SERIES_TERMS + 2):
                coef *= -lam / j
                acc -= coef * self.zn_moment(j + 1, lo, zc)
            out += acc
        if hi > zc:
            pmf1 = self.exp_pmf_weights(lam, zc, hi, 1)[1]
            out += self.z_moment(zc, hi) - pmf1 / lam
        return out

    def k1_moment(self, lam: float) -> float:
        out = 0.0
        if self.zmin < 1.0:
            out += self.k_moment(lam, self.zmin, min(1.0, self.zmax))
        if self.zmax > 1.0:
            out += self.expm1_moment(lam, max(1.0, self.zmin), self.zmax)
        return out

    def exp_pmf_weights(self, rate: float, a: float, b: float, n_max: int,
                        with_zero: bool = False) -> np.ndarray:
        """Array over n = 0..n_max of the integrals e^{-rate z}(rate z)^n / n!.

        The n = 0 entry diverges when the effective lower bound is 0 and is
        only filled in when ``with_zero`` is set.
        """
        out = np.zeros(n_max + 1)
        win = self._clip(a, b)
        if win is None or rate == 0.0:
            return out
        lo, hi = win
        if n_max >= 1:
            ns = np.arange(1, n_max + 1)
            s = ns - self.alpha
            plo = gammainc(s, rate * lo) if lo > 0 else np.zeros_like(s)
            phi = gammainc(s, rate * hi) if hi != math.inf else np.ones_like(s)
            out[1:] = self.scale * rate**self.alpha * np.exp(gammaln(s) - gammaln(ns + 1)) * (phi - plo)
        if with_zero:
            out[0] = self.exp_moment(rate, lo, hi)
        return out

    def scaled(self, factor: float) -> "PowerLawKernel":
        return PowerLawKernel(self.alpha, self.scale * factor, self.zmin, self.zmax)

    def restricted(self, a: float, b: float) -> "PowerLawKernel | None":
        win = self._clip(a, b)
        if win is None:
            return None
        return PowerLawKernel(self.alpha, self.scale, win[0], win[1])

    def quad(self, f, a: float, b: float, tol: float = 1e-10):
        """Adaptive-quadrature route: integral of f(z) against the density.

        Independent of the closed forms above; returns (value, error
        estimate).  Integrable endpoint singularities are left to QUADPACK's
        extrapolation.
        """
        win = self._clip(a, b)
        if win is None:
            return 0.0, 0.0
        lo, hi = win
        c, al = self.scale, self.alpha
        val, err = integrate.quad(
            lambda z: f(z) * c * z ** (-1.0 - al), lo, hi, epsabs=tol, epsrel=1e-13, limit=400
        )
        return val, err

    def to_dict(self) -> dict:
        return {
            "type": "powerlaw",
            "alpha": self.alpha,
            "scale": self.scale,
            "zmin": self.zmin,
            "zmax": None if self.zmax == math.inf else self.zmax,
        }


Kernel = AtomicKernel | PowerLawKernel


def kernel_from_dict(spec: dict) -> Kernel:
    """Build a kernel from its config-file form."""
    kind = spec.get("type")
    if kind == "atomic":
        return AtomicKernel(tuple((float(a["z"]), float(a["w"])) for a in spec["atoms"]))
    if kind == "powerlaw":
        zmax = spec.get("zmax")
        return PowerLawKernel(
            float(spec["alpha"]),
            float(spec["scale"]),
            float(spec.get("zmin", 0.0)),
            math.inf if zmax is None else float(zmax),
        )
    raise KernelQueryError(f"unknown kernel type {kind!r}")
