"""Structural probability generating functions.

A ``Pgf`` is a closed-form mixture, never a truncated coefficient vector:

    g(u) = const + linear u + quad u^2
           + sum_j w_j e^{(u-1) mu_j}                      (exp_terms)
           + sum_l coef_l int phi_l(u, z) m_l(dz)          (pl_terms)

Power-law terms keep the kernel slice symbolic so evaluation at
u = e^{-lam/k} retains full float precision; series coefficients are
extracted only on demand (the simulation layer).  The compensated variant
integrates e^{-k(1-u)z} - 1 + k(1-u)z, which stays finite for
infinite-activity slices; the plain variant integrates e^{-k(1-u)z} - 1
and requires a slice bounded away from 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PgfCoefficientError
from .kernels import PowerLawKernel

COEFF_TOL = 1e-14
NORM_TOL = 1e-12


@dataclass(frozen=True)
class PowerLawTerm:
    """coef * integral of a jump functional against a power-law slice."""

    coef: float
    kernel: PowerLawKernel  # already restricted to the slice (lo, hi)
    rate_scale: float       # the k multiplying z in the exponent
    compensated: bool

    def __call__(self, u: float) -> float:
        lam = self.rate_scale * (1.0 - u)
        lo, hi = self.kernel.zmin, self.kernel.zmax
        if self.compensated:
            return self.coef * self.kernel.k_moment(lam, lo, hi)
        return self.coef * self.kernel.expm1_moment(lam, lo, hi)

    def mean_contribution(self) -> float:
        if self.compensated:
            return 0.0
        return self.coef * self.rate_scale * self.kernel.z_moment(
            self.kernel.zmin, self.kernel.zmax)

    def series(self, n_max: int) -> np.ndarray:
        """Coefficients of the term's expansion in u, n = 0..n_max."""
        k = self.rate_scale
        lo, hi = self.kernel.zmin, self.kernel.zmax
        out = self.kernel.exp_pmf_weights(k, lo, hi, n_max, with_zero=False)
        if self.compensated:
            out[0] = self.kernel.k_moment(k, lo, hi)
            if n_max >= 1:
                out[1] -= k * self.kernel.z_moment(lo, hi)
        else:
            out[0] = self.kernel.expm1_moment(k, lo, hi)
        return self.coef * out

    def finite_mass(self) -> float | None:
        """Total slice mass if finite (needed for mixture sampling)."""
        try:
            return self.kernel.mass(self.kernel.zmin, self.kernel.zmax)
        except Exception:
            return None


@dataclass(frozen=True)
class Pgf:
    """Offspring generating function as a structural mixture."""

    const: float = 0.0
    linear: float = 0.0
    quad: float = 0.0
    exp_terms: tuple[tuple[float, float], ...] = ()  # (weight, rate)
    pl_terms: tuple[PowerLawTerm, ...] = ()

    def __call__(self, u: float) -> float:
        if not -1e-12 <= u <= 1.0 + 1e-12:
            raise ValueError(f"pgf argument u = {u} outside [0, 1]")
        acc = self.const + u * (self.linear + u * self.quad)
        for w, rate in self.exp_terms:
            acc += w * math.exp((u - 1.0) * rate)
        for t in self.pl_terms:
            acc += t(u)
        return acc

    @property
    def is_identity(self) -> bool:
        return (self.const == 0.0 and self.linear == 1.0 and self.quad == 0.0
                and not self.exp_terms and not self.pl_terms)

    def value_at_one(self) -> float:
        return (self.const + self.linear + self.quad
                + math.fsum(w for w, _ in self.exp_terms))

    def mean(self) -> float:
        """g'(1), the offspring mean."""
        out = self.linear + 2.0 * self.quad
        out += math.fsum(w * r for w, r in self.exp_terms)
        out += math.fsum(t.mean_contribution() for t in self.pl_terms)
        return out

    def series(self, n_max: int) -> np.ndarray:
        """Power-series coefficients p_0..p_{n_max} (exact, on demand)."""
        out = np.zeros(n_max + 1)
        out[0] = self.const
        if n_max >= 1:
            out[1] = self.linear
        if n_max >= 2:
            out[2] = self.quad
        ns = np.arange(n_max + 1)
        for w, rate in self.exp_terms:
            if rate == 0.0:
                out[0] += w
            else:
                out += w * np.exp(ns * math.log(rate) - rate - _lgamma_cache(n_max))
        for t in self.pl_terms:
            out += t.series(n_max)
        return out

    def head_coefficients(self) -> tuple[float, float, float]:
        """p_0, p_1, p_2; with nonnegative term weights all higher
        coefficients are automatically nonnegative."""
        s = self.series(2)
        return float(s[0]), float(s[1]), float(s[2])

    def defects(self) -> list[str]:
        """Violations of pgf-validity (empty list means valid)."""
        out = []
        gap = abs(self.value_at_one() - 1.0)
        if gap > NORM_TOL:
            out.append(f"g(1) off by {gap:.3e}")
        for w, rate in self.exp_terms:
            if w < 0.0:
                out.append(f"negative exponential weight {w:.3e}")
            if rate < 0.0:
                out.append(f"negative exponential rate {rate:.3e}")
        for t in self.pl_terms:
            if t.coef < 0.0:
                out.append(f"negative power-law term weight {t.coef:.3e}")
        p0, p1, p2 = self.head_coefficients()
        for n, p in enumerate((p0, p1, p2)):
            if p < -COEFF_TOL:
                out.append(f"coefficient p_{n} = {p:.3e} < 0")
        return out

    def require_valid(self) -> "Pgf":
        defects = self.defects()
        if defects:
            raise PgfCoefficientError("; ".join(defects))
        return self


IDENTITY = Pgf(linear=1.0)

_LGAMMA: dict[int, np.ndarray] = {}


def _lgamma_cache(n_max: int) -> np.ndarray:
    got = _LGAMMA.get(n_max)
    if got is None:
        from scipy.special import gammaln

        got = gammaln(np.arange(n_max + 1) + 1.0)
        _LGAMMA[n_max] = got
    return got


def poisson_pgf(rate: float) -> Pgf:
    return Pgf(exp_terms=((1.0, rate),))


def point_mass_mixture(p0: float, p1: float, p2: float) -> Pgf:
    return Pgf(const=p0, linear=p1, quad=p2)
