"""Backward cumulant equation of the CBVE limit and its envelope constants.

The cumulant v(r, t; lam) solves

    v(r, t; lam) = lam - int_{(r, t]} phi(s, v(s, t; lam)) gamma(ds).

Integration runs backward from t, which makes every gamma atom an explicit
jump  v(s-) = v(s) - phi(s, v(s)) * dgamma(s)  (the forward orientation
would need a fixed-point solve at each atom).  Continuous stretches are
handled by an adaptive 4th-order stepper with step-doubling control; the
reported error estimate is the accumulated |two-half-steps - full-step|/15.
Positivity is a theorem for admissible environments, so a non-positive
value aborts the run instead of being clamped.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .environment import EnvironmentSpec
from .errors import EnvelopeError, NegativeCumulantError, NonConvergenceError
from .mechanism import MechanismView
from .timescale import AtomSeg, ContinuousSeg

DEFAULT_TOL = 1e-10
_MIN_STEP_FACTOR = 1e-14
_SAFETY = 0.9


def _rk4_step(f, v: float, h: float) -> float:
    k1 = f(v)
    k2 = f(v + 0.5 * h * k1)
    k3 = f(v + 0.5 * h * k2)
    k4 = f(v + h * k3)
    return v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _integrate_backward(f, v: float, s_hi: float, s_lo: float, tol_rate: float):
    """Advance dv/ds = f(v) from s_hi down to s_lo; returns (v, error_sum).

    ``tol_rate`` is the admissible local error per unit time, so the whole
    solve meets its budget regardless of how many segments it crosses.
    """
    span = s_hi - s_lo
    if span <= 0.0:
        return v, 0.0
    s = s_hi
    h = -span
    err_sum = 0.0
    min_step = span * _MIN_STEP_FACTOR
    while s > s_lo:
        if s + h < s_lo:
            h = s_lo - s
        full = _rk4_step(f, v, h)
        half = _rk4_step(f, v, 0.5 * h)
        two_half = _rk4_step(f, half, 0.5 * h)
        err = abs(two_half - full) / 15.0
        # The proportional budget needs a roundoff floor: on short
        # capture-to-capture spans the halved-step difference is pure
        # float noise and would otherwise never pass.
        budget = max(tol_rate * abs(h), 4.0 * np.finfo(float).eps * (abs(v) + 1.0))
        if err <= budget or abs(h) <= min_step:
            s += h
            v = two_half
            err_sum += err
            if v <= 0.0:
                raise NegativeCumulantError(
                    f"cumulant reached {v} at s = {s}; environment inadmissible "
                    "or tolerance too loose")
            if err > budget:
                raise NonConvergenceError(
                    f"step control underflowed at s = {s} (err {err:.3e} > {budget:.3e})")
        grow = _SAFETY * (budget / err) ** 0.2 if err > 0.0 else 5.0
        h *= min(5.0, max(0.2, grow))
        if abs(h) < min_step:
            h = -min_step if h < 0 else min_step
    return v, err_sum


@dataclass(frozen=True)
class CumulantSolution:
    """Grid of v(r, t; lam) values with per-solve error estimates."""

    t: float
    lam_grid: tuple[float, ...]
    r_grid: tuple[float, ...]
    values: np.ndarray  # shape (len(r_grid), len(lam_grid))
    errors: np.ndarray  # shape (len(lam_grid),), accumulated per backward solve


def solve_profile(env: EnvironmentSpec, t: float, lam: float,
                  r_points, tol: float = DEFAULT_TOL,
                  mech: MechanismView | None = None):
    """One backward sweep from t, capturing v(r, t; lam) at each r in r_points.

    Returns (values aligned with r_points, accumulated error estimate).
    The value at a gamma atom is the right limit (the atom's own mass is
    not yet integrated), matching the (r, t] convention.
    """
    if lam <= 0.0:
        raise ValueError("lam must be positive")
    if any(r < 0.0 or r > t for r in r_points):
        raise ValueError("capture points must lie in [0, t]")
    mech = mech or MechanismView(env)
    desc = sorted(set(float(r) for r in r_points), reverse=True)
    out: dict[float, float] = {}
    v = lam
    err_sum = 0.0
    idx = 0
    while idx < len(desc) and desc[idx] >= t:
        out[desc[idx]] = v
        idx += 1
    r_min = desc[-1] if desc else t
    if t > r_min:
        tol_rate = tol / (t - r_min)
        for seg in reversed(list(env.timescale.segments(r_min, t))):
            hi = seg.time if isinstance(seg, AtomSeg) else seg.hi
            while idx < len(desc) and desc[idx] >= hi:
                out[desc[idx]] = v
                idx += 1
            if isinstance(seg, AtomSeg):
                v -= mech.phi_atom(seg.atom_index, v) * seg.mass
                if v <= 0.0:
                    raise NegativeCumulantError(
                        f"cumulant reached {v} after the atom at s = {seg.time}")
            else:
                f = _make_density_rhs(mech, seg)
                s_hi = hi
                while idx < len(desc) and desc[idx] > seg.lo:
                    c = desc[idx]
                    v, e = _integrate_backward(f, v, s_hi, c, tol_rate)
                    err_sum += e
                    out[c] = v
                    s_hi = c
                    idx += 1
                v, e = _integrate_backward(f, v, s_hi, seg.lo, tol_rate)
                err_sum += e
    while idx < len(desc):
        out[desc[idx]] = v
        idx += 1
    return [out[float(r)] for r in r_points], err_sum


def _make_density_rhs(mech: MechanismView, seg: ContinuousSeg):
    d = seg.density
    i = seg.interval
    coeffs = mech.env.interval_coeffs(i)
    kern = coeffs.kernel
    b1, c = coeffs.b1, coeffs.c
    if kern is None:
        return lambda v: d * (b1 * v + c * v * v)
    return lambda v: d * (b1 * v + c * v * v + kern.k1_moment(v))


def solve_backward(env: EnvironmentSpec, r: float, t: float, lam: float,
                   tol: float = DEFAULT_TOL, mech: MechanismView | None = None):
    """v(r, t; lam) together with its accumulated error estimate."""
    if not 0.0 <= r <= t <= env.horizon:
        raise ValueError("need 0 <= r <= t <= horizon")
    vals, err = solve_profile(env, t, lam, [r], tol, mech)
    return vals[0], err


def solve_grid(env: EnvironmentSpec, t: float, lam_grid, r_grid,
               tol: float = DEFAULT_TOL, mech: MechanismView | None = None) -> CumulantSolution:
    """Solutions on a (r, lam) grid; one backward sweep per lambda."""
    mech = mech or MechanismView(env)
    r_grid = tuple(sorted(set(float(r) for r in r_grid)))
    lam_grid = tuple(float(x) for x in lam_grid)
    values = np.empty((len(r_grid), len(lam_grid)))
    errors = np.empty(len(lam_grid))
    for j, lam in enumerate(lam_grid):
        vals, err = solve_profile(env, t, lam, list(r_grid), tol, mech)
        values[:, j] = vals
        errors[j] = err
    return CumulantSolution(t, lam_grid, r_grid, values, errors)


def transition_laplace(env: EnvironmentSpec, x: float, r: float, t: float,
                       lam: float, tol: float = DEFAULT_TOL) -> float:
    """Laplace functional of the transition kernel, e^{-x v(r,t;lam)}.

    The state space is [0, inf]; by convention the functional vanishes at
    x = inf.
    """
    if x < 0.0:
        raise ValueError("x must be in [0, inf]")
    if math.isinf(x):
        return 0.0
    if x == 0.0:
        return 1.0
    v, _ = solve_backward(env, r, t, lam, tol)
    return math.exp(-x * v)


# -- envelope constants of the corridor theorem -----------------------------

@dataclass(frozen=True)
class EnvelopeConstants:
    """Bounds l <= v_k <= U on [0,T] x [a,b] plus the comparison function alpha."""

    T: float
    a: float
    b: float
    eta_T: float
    c0: float
    gamma_T: float
    U: float
    l: float
    F: float
    H: float
    eps: float
    alpha_total_variation: float
    alpha_times: tuple[float, ...]  # breakpoints where alpha is tabulated
    alpha_values: tuple[float, ...]  # alpha(r) at those times (right-continuous)
    alpha_jumps: tuple[tuple[float, float], ...]  # (atom time, jump of alpha)

    def alpha(self, r: float) -> float:
        """alpha(r), right-continuous; linear between tabulated breakpoints."""
        if r <= 0.0:
            return 0.0
        i = bisect_right(self.alpha_times, r) - 1
        if self.alpha_times[i] == r or i == len(self.alpha_times) - 1:
            return self.alpha_values[i]
        t0, v0 = self.alpha_times[i], self.alpha_values[i]
        t1, v1_left = self.alpha_times[i + 1], self.alpha_values[i + 1]
        for s, j in self.alpha_jumps:
            if s == t1:
                v1_left -= j
        return v0 + (r - t0) / (t1 - t0) * (v1_left - v0)


def envelope_bounds(env: EnvironmentSpec, T: float, a: float, b: float,
                    eta_T: float = 2.0, c0: float | None = None) -> EnvelopeConstants:
    """Constants of the two-sided corridor for v_k on [0,T] x [a,b].

    U = (b + C0 gamma(T) + 1) e^{C0 gamma(T)};
    F = U^{-1}(1-e^{-U}); H = (eta_T U)^{-1}(1-e^{-eta_T U}); eps = 1 ^ (F/U);
    alpha is assembled from its five integral terms with density Lambda, and
    l = (a/2) prod_s [1 + (0 ^ dalpha(s))] e^{-||alpha||(T)}.
    """
    if not 0.0 < a <= b:
        raise ValueError("need 0 < a <= b")
    if eta_T <= 1.0:
        raise ValueError("eta_T must exceed 1")
    mech = MechanismView(env) if c0 is None else None
    c0 = mech.c0 if c0 is None else c0
    gamma_T = env.timescale.value(T)
    U = (b + c0 * gamma_T + 1.0) * math.exp(c0 * gamma_T)
    F = (1.0 - math.exp(-U)) / U
    H = (1.0 - math.exp(-eta_T * U)) / (eta_T * U)
    eps = min(1.0, F / U)

    def lam_density(coeffs) -> float:
        out = -coeffs.b1 - U * coeffs.c
        kern = coeffs.kernel
        if kern is not None:
            out -= 0.5 * U * kern.z2_moment(0.0, eps)
            out += H * kern.z_moment(1.0, eta_T)
            out -= (1.0 - F) * kern.z_moment(eps, 1.0)
        return out

    times = [0.0]
    values = [0.0]
    jumps = []
    tv = 0.0
    acc = 0.0
    for seg in env.timescale.segments(0.0, T):
        if isinstance(seg, ContinuousSeg):
            if times[-1] != seg.lo:
                times.append(seg.lo)  # flat stretch before this piece
                values.append(acc)
            lam_s = lam_density(env.interval_coeffs(seg.interval))
            acc += lam_s * seg.gamma_mass
            tv += abs(lam_s) * seg.gamma_mass
            times.append(seg.hi)
            values.append(acc)
        else:
            coeffs = env.atom_coeffs(seg.atom_index)
            if abs(coeffs.b1 * seg.mass - 1.0) <= 1e-12:
                window = coeffs.kernel.mass(1.0, eta_T) if coeffs.kernel is not None else 0.0
                if window * seg.mass <= 0.0:
                    raise EnvelopeError(
                        f"atom at {seg.time}: b1*dgamma = 1 needs jump mass on "
                        f"(1, eta_T] (raise eta_T above {eta_T})")
            d_alpha = lam_density(coeffs) * seg.mass
            if d_alpha <= -1.0:
                raise EnvelopeError(
                    f"envelope inapplicable: dalpha = {d_alpha:.6g} <= -1 "
                    f"at the atom t = {seg.time}")
            acc += d_alpha
            tv += abs(d_alpha)
            jumps.append((seg.time, d_alpha))
            if times[-1] == seg.time:
                values[-1] = acc
            else:
                times.append(seg.time)
                values.append(acc)

    prod = 1.0
    for _, j in jumps:
        prod *= 1.0 + min(0.0, j)
    l = 0.5 * a * prod * math.exp(-tv)
    return EnvelopeConstants(T, a, b, eta_T, c0, gamma_T, U, l, F, H, eps,
                             tv, tuple(times), tuple(values), tuple(jumps))
