"""The branching mechanism phi(s, lambda) and its truncated variant.

phi(s, lam) = b1(s) lam + c(s) lam^2 + int K_1(lam, z) m(s, dz)

with K_1(lam, z) = e^{-lam z} - 1 + lam z 1_{z<=1}.  The truncated
mechanism of the level-k construction drops the large jumps above
c_k = C0^{-1} k^{1/3} - 1 and the adjusted drift:

phi_{0,k}(s, lam) = c(s) lam^2 + int_0^{c_k} K(lam, z) m(s, dz),

where K(lam, z) = e^{-lam z} - 1 + lam z.  ``MechanismView`` caches the
lambda-independent per-piece moments; evaluation is pure and safe to call
concurrently.
"""

from __future__ import annotations

import math

from .environment import EnvironmentSpec, compute_C0
from .errors import LevelTooSmallError
from .kernels import k_compensated

INV_E = math.exp(-1.0)


def k1(lam: float, z: float) -> float:
    """K_1(lam, z) = e^{-lam z} - 1 + lam z 1_{z<=1}."""
    if lam < 0.0 or z <= 0.0:
        raise ValueError("k1 requires lam >= 0 and z > 0")
    if z <= 1.0:
        return k_compensated(lam * z)
    return math.expm1(-lam * z)


def k_func(lam: float, z: float) -> float:
    """K(lam, z) = e^{-lam z} - 1 + lam z (compensator always on)."""
    if lam < 0.0 or z <= 0.0:
        raise ValueError("k_func requires lam >= 0 and z > 0")
    return k_compensated(lam * z)


def m_phi(c0: float, lam: float) -> float:
    """Growth envelope M_phi(lam) = (1 + lam)^2 C0 of |phi(s, .)|."""
    if lam < 0.0:
        raise ValueError("lam must be nonnegative")
    return (1.0 + lam) ** 2 * c0


def m_phi_prime(c0: float, lam1: float, lam2: float) -> float:
    """Lipschitz envelope M'_phi(lam1, lam2) = M_phi(lam2 + e^{-1}/lam1)."""
    if not 0.0 < lam1 <= lam2:
        raise ValueError("need 0 < lam1 <= lam2")
    return m_phi(c0, lam2 + INV_E / lam1)


def c_trunc(c0: float, k: int) -> float:
    """Jump truncation level c_k = C0^{-1} k^{1/3} - 1, valid when in [1, k]."""
    if c0 <= 0.0:
        raise LevelTooSmallError("c_k undefined for a null mechanism (C0 = 0)")
    ck = k ** (1.0 / 3.0) / c0 - 1.0
    if not 1.0 <= ck <= k:
        raise LevelTooSmallError(
            f"k = {k} violates the truncation constraint 1 <= c_k <= k "
            f"(c_k = {ck:.6g} for C0 = {c0:.6g})")
    return ck


class MechanismView:
    """Evaluator for phi over one environment, with cached C0 and moments."""

    def __init__(self, env: EnvironmentSpec, c0: float | None = None):
        self.env = env
        self.c0 = compute_C0(env) if c0 is None else c0
        ts = env.timescale
        self._n_intervals = len(ts.times) - 1

    def phi_coeffs(self, coeffs, lam: float) -> float:
        out = coeffs.b1 * lam + coeffs.c * lam * lam
        if coeffs.kernel is not None:
            out += coeffs.kernel.k1_moment(lam)
        return out

    def phi_interval(self, i: int, lam: float) -> float:
        """phi on breakpoint interval i (the solver's hot path)."""
        return self.phi_coeffs(self.env.interval_coeffs(i), lam)

    def phi_atom(self, j: int, lam: float) -> float:
        return self.phi_coeffs(self.env.atom_coeffs(j), lam)

    def __call__(self, s: float, lam: float) -> float:
        if lam < 0.0:
            raise ValueError("lam must be nonnegative")
        return self.phi_coeffs(self.env.coeffs_at(s), lam)

    def phi0k_coeffs(self, coeffs, lam: float, k: int) -> float:
        ck = c_trunc(self.c0, k)
        out = coeffs.c * lam * lam
        if coeffs.kernel is not None:
            out += coeffs.kernel.k_moment(lam, 0.0, ck)
        return out

    def phi0k(self, s: float, lam: float, k: int) -> float:
        """Truncated mechanism phi_{0,k}(s, lam) = c lam^2 + int_0^{c_k} K m."""
        return self.phi0k_coeffs(self.env.coeffs_at(s), lam, k)

    def phi0k_via_phi(self, s: float, lam: float, k: int) -> float:
        """The subtraction route phi - b_k lam - int_{c_k}^inf (e^{-lam z}-1) m;
        agreement with phi0k is a cross-check of the kernel moments."""
        ck = c_trunc(self.c0, k)
        coeffs = self.env.coeffs_at(s)
        out = self(s, lam) - self.b_trunc_coeffs(coeffs, k) * lam
        if coeffs.kernel is not None:
            out -= coeffs.kernel.expm1_moment(lam, ck, math.inf)
        return out

    def b_trunc_coeffs(self, coeffs, k: int) -> float:
        ck = c_trunc(self.c0, k)
        out = coeffs.b1
        if coeffs.kernel is not None:
            out -= coeffs.kernel.z_moment(1.0, ck)
        return out

    def b_trunc(self, s: float, k: int) -> float:
        """Adjusted drift b_k(s) = b1(s) - int_1^{c_k} z m(s, dz)."""
        return self.b_trunc_coeffs(self.env.coeffs_at(s), k)


def phi(env: EnvironmentSpec, s: float, lam: float) -> float:
    """One-shot evaluation of the mechanism (builds a throwaway view)."""
    return MechanismView(env)(s, lam)
