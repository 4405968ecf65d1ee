"""The explicit level-k Galton-Watson approximation and its diagnostics.

``build_discrete_model`` constructs the per-generation offspring pgfs:

* cell generations (indices in S_k): the half/half mixture of
  ``g_hat`` (the integrated truncated mechanism over the clock cell) and
  ``g_tilde`` (the three-point lattice law absorbing the adjusted drift);
* atom-entry generations (the first skipped index above a multi-step
  clock jump): the exponential/compound law with the theta-truncated
  atom coefficients;
* every other skipped index: the identity, stored once per run.

Validity of each constructed pgf is checked constructively; below the
"sufficiently large k" threshold the builder falls back to the identity
for that generation and records the downgrade, which biases convergence
and therefore must stay visible in reports.
"""

from __future__ import annotations

import math
import time as _time
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .cumulant import EnvelopeConstants, envelope_bounds, solve_grid
from .environment import EnvironmentSpec, beta_for_level, discretize_time
from .errors import PgfCoefficientError
from .kernels import AtomicKernel, PowerLawKernel
from .mechanism import MechanismView, c_trunc, m_phi
from .pgf import COEFF_TOL, IDENTITY, Pgf, PowerLawTerm
from .timescale import AtomSeg, ClockEvent, ContinuousSeg, DiscreteTimeScale


def h_k(k: int, z: float) -> float:
    """h_k(z) = k(1 - e^{-z/k}); satisfies z - z^2/(2k) <= h_k(z) <= z."""
    return -k * math.expm1(-z / k)


@dataclass(frozen=True)
class GenEntry:
    """One run of generations sharing a pgf."""

    gen_lo: int
    gen_hi: int  # inclusive
    kind: str  # "cell" | "atom" | "identity"
    pgf: Pgf
    cell_lo: float = math.nan
    cell_hi: float = math.nan
    event_time: float = math.nan
    atom_index: int = -1
    downgraded: bool = False

    @property
    def count(self) -> int:
        return self.gen_hi - self.gen_lo + 1


@dataclass(frozen=True)
class Downgrade:
    gen: int
    kind: str
    time: float
    reason: str


@dataclass
class DiscreteModel:
    """Level-k GWVE approximation of one environment."""

    env: EnvironmentSpec
    k: int
    theta: float
    c0: float
    beta_k: float
    c_k: float
    clock: DiscreteTimeScale
    entries: tuple[GenEntry, ...]
    downgrades: tuple[Downgrade, ...]

    def __post_init__(self):
        self._entry_starts = [e.gen_lo for e in self.entries]

    @property
    def n_generations(self) -> int:
        return self.clock.n_generations

    def entry_for_gen(self, gen: int) -> GenEntry:
        i = bisect_right(self._entry_starts, gen) - 1
        e = self.entries[i]
        if not e.gen_lo <= gen <= e.gen_hi:
            raise IndexError(f"generation {gen} outside the model")
        return e

    def pgf_for_gen(self, gen: int) -> Pgf:
        return self.entry_for_gen(gen).pgf

    # -- composition ------------------------------------------------------

    def compose(self, m: int, n: int, u: float) -> float:
        """g_{k,m,n}(u): apply generation n-1 first, then down to m."""
        if not 0 <= m <= n <= self.n_generations:
            raise ValueError(f"need 0 <= m <= n <= {self.n_generations}")
        if m == n:
            return u
        cur = u
        i = bisect_right(self._entry_starts, n - 1) - 1
        while i >= 0:
            e = self.entries[i]
            if e.gen_hi < m:
                break
            if e.kind != "identity":
                for _ in range(min(e.gen_hi, n - 1), max(e.gen_lo, m) - 1, -1):
                    cur = e.pgf(cur)
            i -= 1
        return cur

    def compose_profile(self, n: int, u: float, capture: set[int]) -> dict[int, float]:
        """Values of g_{k,g,n}(u) for every g in ``capture`` (one sweep)."""
        out: dict[int, float] = {}
        if n in capture:
            out[n] = u
        cur = u
        i = bisect_right(self._entry_starts, n - 1) - 1
        lowest = min(capture) if capture else n
        while i >= 0:
            e = self.entries[i]
            if e.gen_hi < lowest:
                break
            hi = min(e.gen_hi, n - 1)
            if e.kind == "identity":
                for g in capture:
                    if e.gen_lo <= g <= hi:
                        out[g] = cur
            else:
                for g in range(hi, e.gen_lo - 1, -1):
                    cur = e.pgf(cur)
                    if g in capture:
                        out[g] = cur
            i -= 1
        return out

    # -- cumulants ---------------------------------------------------------

    def discrete_cumulant(self, r: float, t: float, lam: float) -> float:
        """v_k(r,t;lam) = -k log g_{k,gamma_k(r),gamma_k(t)}(e^{-lam/k})."""
        if lam <= 0.0:
            raise ValueError("lam must be positive")
        m = self.clock.gamma_k(r)
        n = self.clock.gamma_k(t)
        if m == n:
            return lam  # empty composition, exactly the identity
        u = math.exp(-lam / self.k)
        val = self.compose(m, n, u)
        if val <= 0.0:
            raise PgfCoefficientError(
                f"composed pgf value {val} <= 0; coefficients are corrupt")
        return -self.k * math.log(val)

    def cumulant_profile(self, r_points, t: float, lam: float) -> list[float]:
        """v_k(r, t; lam) for every r in r_points via one composition sweep."""
        if lam <= 0.0:
            raise ValueError("lam must be positive")
        n = self.clock.gamma_k(t)
        targets = {self.clock.gamma_k(r) for r in r_points}
        u = math.exp(-lam / self.k)
        prof = self.compose_profile(n, u, targets)
        out = []
        for r in r_points:
            g = self.clock.gamma_k(r)
            if g == n:
                out.append(lam)
                continue
            val = prof[g]
            if val <= 0.0:
                raise PgfCoefficientError(
                    f"composed pgf value {val} <= 0; coefficients are corrupt")
            out.append(-self.k * math.log(val))
        return out

    # -- generating-function increments -------------------------------------

    def _event_at(self, s: float) -> ClockEvent:
        times = self.clock._event_times
        i = bisect_right(times, s) - 1
        if i >= 0 and times[i] == s:
            return self.clock.events[i]
        raise ValueError(f"s = {s} is not a clock-advance time of level {self.k}")

    def big_phi(self, s: float, lam: float, which: int) -> float:
        """Increment functionals of the pgfs at a clock event.

        which=1 uses the cell pgf at generation gamma_k(s-); which=2 the
        composed skipped block between gamma_k(s-)+1 and gamma_k(s).
        """
        if not 0.0 < lam <= self.k:
            raise ValueError(f"need 0 < lam <= k = {self.k}")
        ev = self._event_at(s)
        x = 1.0 - lam / self.k
        if which == 1:
            y = self.pgf_for_gen(ev.level_before)(x)
        elif which == 2:
            y = self.compose(ev.level_before + 1, ev.level_after, x)
        else:
            raise ValueError("which must be 1 or 2")
        return self.k * (y - x)

    def small_phi(self, s: float, lam: float, which: int,
                  route: str = "definition") -> float:
        """Logarithmic increment; two algebraically equal routes.

        "definition": lam + k log g(e^{-lam/k});
        "via_big_phi": k log[1 + e^{lam/k} Phi(s, k(1-e^{-lam/k})) / k].
        """
        if not 0.0 < lam <= self.k:
            raise ValueError(f"need 0 < lam <= k = {self.k}")
        k = self.k
        if route == "via_big_phi":
            lam_h = -k * math.expm1(-lam / k)
            big = self.big_phi(s, lam_h, which)
            return k * math.log1p(math.exp(lam / k) * big / k)
        ev = self._event_at(s)
        u = math.exp(-lam / k)
        if which == 1:
            y = self.pgf_for_gen(ev.level_before)(u)
        elif which == 2:
            y = self.compose(ev.level_before + 1, ev.level_after, u)
        else:
            raise ValueError("which must be 1 or 2")
        return lam + k * math.log(y)


# -- builder ----------------------------------------------------------------


def _cell_ingredients(env: EnvironmentSpec, mech: MechanismView, k: int,
                      ck: float, t_lo: float, t_hi: float, exact_mass: float | None):
    """Integrals of the truncated mechanism over one clock cell (t_lo, t_hi).

    ``exact_mass`` replaces the float time difference when the cell is a
    full interior cell of one piece (its gamma mass is exactly 1/beta_k);
    this keeps interior cells bitwise identical so downstream caches hit.
    """
    segs = list(env.timescale.segments(t_lo, t_hi, include_right_atom=False))
    use_exact = (exact_mass is not None and len(segs) == 1
                 and isinstance(segs[0], ContinuousSeg))
    i_b = 0.0
    c_cell = 0.0
    jumps: list[tuple[object, float]] = []  # (kernel, gamma mass)
    for seg in segs:
        if isinstance(seg, ContinuousSeg):
            coeffs = env.interval_coeffs(seg.interval)
            mass = exact_mass if use_exact else seg.gamma_mass
        else:
            coeffs = env.atom_coeffs(seg.atom_index)
            mass = seg.mass
        i_b += mech.b_trunc_coeffs(coeffs, k) * mass
        c_cell += coeffs.c * mass
        if coeffs.kernel is not None:
            jumps.append((coeffs.kernel, mass))
    return i_b, c_cell, jumps


def _build_cell_pgf(k: int, ck: float, q_pad: float, i_b: float, c_cell: float,
                    jumps) -> tuple[Pgf, str | None]:
    """Half/half mixture of g_hat and g_tilde; returns (pgf, defect or None)."""
    # g_hat(u) = u + (2/k) * int phi_{0,k}(s, k(1-u)) gamma(ds) over the cell
    q = 2.0 * k * c_cell
    const_h, lin_h, quad_h = q, 1.0 - 2.0 * q, q
    exp_h: list[tuple[float, float]] = []
    pl_h: list[PowerLawTerm] = []
    for kern, gmass in jumps:
        if isinstance(kern, AtomicKernel):
            for z, w in kern.atoms:
                if z > ck or w == 0.0:
                    continue
                omega = 2.0 * w * gmass / k
                mu = k * z
                const_h += omega * (mu - 1.0)
                lin_h -= omega * mu
                exp_h.append((omega, mu))
        else:
            sliced = kern.restricted(0.0, ck)
            if sliced is not None:
                pl_h.append(PowerLawTerm(2.0 * gmass / k, sliced, float(k), True))
    g_hat = Pgf(const_h, lin_h, quad_h, tuple(exp_h), tuple(pl_h))
    # g_tilde: three-point law carrying the adjusted drift
    a_t = 2.0 * (q_pad + i_b)
    b_t = 1.0 - 2.0 * i_b - 4.0 * q_pad
    c_t = 2.0 * q_pad
    defect = None
    if min(a_t, b_t, c_t) < -COEFF_TOL:
        defect = f"g_tilde coefficients ({a_t:.3e}, {b_t:.3e}, {c_t:.3e})"
    else:
        hat_defects = g_hat.defects()
        if hat_defects:
            defect = "g_hat: " + "; ".join(hat_defects)
    if defect is not None:
        return IDENTITY, defect
    combined = Pgf(
        0.5 * (const_h + a_t),
        0.5 * (lin_h + b_t),
        0.5 * (quad_h + c_t),
        tuple((0.5 * w, mu) for w, mu in exp_h),
        tuple(PowerLawTerm(0.5 * t.coef, t.kernel, t.rate_scale, t.compensated)
              for t in pl_h),
    )
    return combined, None


def _build_atom_pgf(env: EnvironmentSpec, k: int, theta: float,
                    atom_index: int) -> tuple[Pgf, str | None]:
    atom = env.atoms[atom_index]
    zcut = k ** (-theta)
    comp = atom.kernel.z_moment(zcut, 1.0) if atom.kernel is not None else 0.0
    delta_k = (atom.b1 + comp) * atom.mass
    const = 0.0
    exp_terms: list[tuple[float, float]] = [(1.0, 1.0 - delta_k)]
    pl_terms: list[PowerLawTerm] = []
    if atom.kernel is not None:
        if isinstance(atom.kernel, AtomicKernel):
            for z, w in atom.kernel.atoms:
                if z <= zcut or w == 0.0:
                    continue
                wt = w * atom.mass / k
                exp_terms.append((wt, k * z))
                const -= wt
        else:
            sliced = atom.kernel.restricted(zcut, math.inf)
            if sliced is not None:
                pl_terms.append(PowerLawTerm(atom.mass / k, sliced, float(k), False))
    g = Pgf(const, 0.0, 0.0, tuple(exp_terms), tuple(pl_terms))
    defects = g.defects()
    if defects:
        return IDENTITY, "; ".join(defects)
    return g, None


def build_discrete_model(env: EnvironmentSpec, k: int, theta: float = 0.5,
                         c0: float | None = None) -> DiscreteModel:
    """Construct the level-k model; never fatal, downgrades are recorded.

    A null mechanism (C0 = 0) produces the trivial model: the clock never
    ticks, there are no generations, and v_k(r,t;lam) = lam exactly.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must be in (0, 1)")
    mech = MechanismView(env, c0)
    c0 = mech.c0
    if c0 == 0.0:
        clock = discretize_time(env, k, 0.0)
        return DiscreteModel(env, k, theta, 0.0, 0.0, math.nan, clock, (), ())
    ck = c_trunc(c0, k)
    clock = discretize_time(env, k, c0)
    beta = clock.beta
    q_pad = k ** (1.0 / 3.0) / beta
    entries: list[GenEntry] = []
    downgrades: list[Downgrade] = []
    prev = None  # previous event
    prev_time = 0.0
    cell_cache: dict[tuple, tuple[Pgf, str | None]] = {}
    for ev in clock.events:
        gen = ev.level_before
        interior = (prev is not None and prev.atom_index < 0 and ev.atom_index < 0)
        exact_mass = 1.0 / beta if interior else None
        i_b, c_cell, jumps = _cell_ingredients(env, mech, k, ck, prev_time, ev.time,
                                               exact_mass)
        key = (round(i_b, 18), round(c_cell, 18),
               tuple((id(kn), m) for kn, m in jumps))
        hit = cell_cache.get(key)
        if hit is None:
            hit = _build_cell_pgf(k, ck, q_pad, i_b, c_cell, jumps)
            cell_cache[key] = hit
        cell_pgf, defect = hit
        if defect is not None:
            downgrades.append(Downgrade(gen, "cell", ev.time, defect))
        entries.append(GenEntry(gen, gen, "cell", cell_pgf, prev_time, ev.time,
                                ev.time, ev.atom_index, defect is not None))
        if ev.span >= 2:
            if ev.atom_index < 0:
                raise AssertionError("multi-step clock jump without a gamma atom")
            atom_pgf, adefect = _build_atom_pgf(env, k, theta, ev.atom_index)
            if adefect is not None:
                downgrades.append(Downgrade(gen + 1, "atom", ev.time, adefect))
            entries.append(GenEntry(gen + 1, gen + 1, "atom", atom_pgf,
                                    event_time=ev.time, atom_index=ev.atom_index,
                                    downgraded=adefect is not None))
            if ev.span >= 3:
                entries.append(GenEntry(gen + 2, ev.level_after - 1, "identity",
                                        IDENTITY, event_time=ev.time))
        prev = ev
        prev_time = ev.time
    return DiscreteModel(env, k, theta, c0, beta, ck, clock,
                         tuple(entries), tuple(downgrades))


# -- condition (A) residuals --------------------------------------------------


@dataclass
class ResidualTable:
    """I_{k,s,1/2} on a lambda grid for every clock event in (r, t]."""

    k: int
    r: float
    t: float
    lam_grid: tuple[float, ...]
    times: tuple[float, ...]
    in_j_plus: tuple[bool, ...]
    i1: np.ndarray  # (events, lams)
    i2: np.ndarray

    @property
    def per_event_sup(self) -> np.ndarray:
        if len(self.times) == 0:
            return np.zeros(0)
        return np.max(np.abs(self.i1) + np.abs(self.i2), axis=1)

    @property
    def total(self) -> float:
        """Sum over events of sup over the grid of I_{k,s}; the empirical
        F_k(t) - F_k(r) proxy."""
        return float(np.sum(self.per_event_sup))


def _phi_integral(env: EnvironmentSpec, mech: MechanismView, lo: float, hi: float,
                  lam: float, include_right_atom: bool) -> float:
    out = 0.0
    for seg in env.timescale.segments(lo, hi, include_right_atom=include_right_atom):
        if isinstance(seg, ContinuousSeg):
            out += mech.phi_interval(seg.interval, lam) * seg.gamma_mass
        else:
            out += mech.phi_atom(seg.atom_index, lam) * seg.mass
    return out


def condition_a_residuals(model: DiscreteModel, r: float, t: float,
                          lam_grid, mech: MechanismView | None = None) -> ResidualTable:
    """Exact residuals between pgf increments and the integrated mechanism."""
    env = model.env
    mech = mech or MechanismView(env, model.c0)
    k = model.k
    lam_grid = tuple(float(x) for x in lam_grid)
    events = model.clock.events_between(r, t)
    times, plus = [], []
    i1 = np.zeros((len(events), len(lam_grid)))
    i2 = np.zeros_like(i1)
    for row, ev in enumerate(events):
        times.append(ev.time)
        plus.append(ev.in_j_plus)
        entry = model.entry_for_gen(ev.level_before)
        atom_mass = env.timescale.mass_at(ev.time)
        for col, lam in enumerate(lam_grid):
            x = 1.0 - lam / k
            cell_val = k * (entry.pgf(x) - x)
            i1[row, col] = cell_val - _phi_integral(env, mech, entry.cell_lo,
                                                    ev.time, lam, False)
            phi_jump = 0.0
            if atom_mass > 0.0:
                phi_jump = mech.phi_atom(ev.atom_index, lam) * atom_mass
            inner = k * (model.compose(ev.level_before + 1, ev.level_after, x) - x)
            i2[row, col] = inner - phi_jump
    return ResidualTable(k, r, t, lam_grid, tuple(times), tuple(plus), i1, i2)


@dataclass(frozen=True)
class ResidualBound:
    """The analytic condition-(A) majorant evaluated for one level."""

    step1_tail: float
    step1_drift: float
    step2_atoms: float
    step2_small_jumps: float
    step2_dropped_atoms: float

    @property
    def total(self) -> float:
        return (self.step1_tail + self.step1_drift + self.step2_atoms
                + self.step2_small_jumps + self.step2_dropped_atoms)


def condition_a_bound(model: DiscreteModel, r: float, t: float, m_cap: float,
                      mech: MechanismView | None = None) -> ResidualBound:
    """Sum of the step-1 and step-2 analytic bounds over (r, t] at lambda cap M."""
    env = model.env
    mech = mech or MechanismView(env, model.c0)
    k, beta, ck = model.k, model.beta_k, model.c_k
    clock = model.clock
    lo_env = clock.inverse(clock.gamma_k(r))
    hi_env = clock.inverse(clock.gamma_k(t))
    tail = 0.0
    small = 0.0
    zcut = k ** (-model.theta)
    for seg in env.timescale.segments(lo_env, hi_env):
        if isinstance(seg, ContinuousSeg):
            kern = env.interval_coeffs(seg.interval).kernel
            mass = seg.gamma_mass
        else:
            kern = env.atom_coeffs(seg.atom_index).kernel
            mass = seg.mass
        if kern is not None:
            tail += mass * kern.mass(ck, math.inf)
    for seg in env.timescale.segments(r, t):
        kern = (env.interval_coeffs(seg.interval).kernel
                if isinstance(seg, ContinuousSeg) else
                env.atom_coeffs(seg.atom_index).kernel)
        mass = seg.gamma_mass if isinstance(seg, ContinuousSeg) else seg.mass
        if kern is not None:
            small += mass * kern.z2_moment(0.0, zcut)
    n_span = clock.gamma_k(t) - clock.gamma_k(r)
    step1_drift = m_cap**2 * n_span / (k ** (2.0 / 3.0) * beta) if beta else 0.0
    atoms_term = 0.0
    dropped = 0.0
    for ev in clock.events_between(r, t):
        if ev.atom_index < 0:
            continue
        a = env.atoms[ev.atom_index]
        if ev.in_j_plus:
            delta_b1 = a.b1 * a.mass
            atoms_term += (1.0 - delta_b1) ** 2 / k
    for a in env.atoms:
        if r < a.time <= t and a.mass <= 2.0 / beta:
            dropped += a.mass
    return ResidualBound(tail, step1_drift, 0.5 * m_cap**2 * atoms_term,
                         0.5 * m_cap**2 * small,
                         model.c0 * (1.0 + m_cap) ** 2 * dropped)


# -- convergence study ---------------------------------------------------------


@dataclass
class LevelReport:
    k: int
    n_generations: int
    sup_error: float
    sup_error_metric: float
    corridor_violations: int
    residual_sum: float
    residual_bound: float
    downgrade_count: int
    build_seconds: float
    eval_seconds: float


@dataclass
class ConvergenceReport:
    horizon: float
    lam_grid: tuple[float, ...]
    r_grid: tuple[float, ...]
    t_grid: tuple[float, ...]
    theta: float
    eta_t: float
    tol: float
    envelope: EnvelopeConstants
    levels: list[LevelReport] = field(default_factory=list)
    downgrades: dict[int, tuple[Downgrade, ...]] = field(default_factory=dict)


def default_r_grid(env: EnvironmentSpec, T: float, n: int = 17) -> tuple[float, ...]:
    """Uniform grid plus points straddling every gamma atom."""
    pts = set(np.linspace(0.0, T, n).tolist())
    for a in env.atoms:
        if a.time <= T:
            pts.add(a.time)
            pts.add(max(0.0, a.time - 1e-9))
    return tuple(sorted(pts))


def convergence_report(env: EnvironmentSpec, k_list, T: float, a: float, b: float,
                       n_lam: int = 7, r_grid=None, t_grid=None,
                       theta: float = 0.5, eta_t: float = 2.0,
                       tol: float = 1e-10) -> ConvergenceReport:
    """Uniform-convergence study of v_k towards v on a desk-scale grid.

    For each level: the sup over the (r, t, lambda) grid of |v_k - v|, the
    same through the compactifying metric d(x,y) = |e^{-x} - e^{-y}|,
    corridor violations against the envelope constants, and the
    condition-(A) residual sum with its analytic majorant.
    """
    if not 0.0 < a < b:
        raise ValueError("need 0 < a < b")
    k_list = list(k_list)
    if sorted(k_list) != k_list or len(set(k_list)) != len(k_list):
        raise ValueError("k_list must be strictly increasing")
    mech = MechanismView(env)
    lam_grid = tuple(np.linspace(a, b, n_lam).tolist())
    r_grid = tuple(default_r_grid(env, T) if r_grid is None else r_grid)
    t_grid = tuple(sorted(set([T] if t_grid is None else list(t_grid))))
    envelope = envelope_bounds(env, T, a, b, eta_t, c0=mech.c0)
    limits = {
        t: solve_grid(env, t, lam_grid, [r for r in r_grid if r <= t], tol, mech)
        for t in t_grid
    }
    report = ConvergenceReport(T, lam_grid, r_grid, t_grid, theta, eta_t, tol, envelope)
    for k in k_list:
        t0 = _time.perf_counter()
        model = build_discrete_model(env, k, theta, mech.c0)
        t1 = _time.perf_counter()
        sup_err = 0.0
        sup_d = 0.0
        violations = 0
        for t in t_grid:
            sol = limits[t]
            rs = sol.r_grid
            for j, lam in enumerate(lam_grid):
                vk = model.cumulant_profile(rs, t, lam)
                for i in range(len(rs)):
                    diff = abs(vk[i] - sol.values[i, j])
                    sup_err = max(sup_err, diff)
                    sup_d = max(sup_d, abs(math.exp(-vk[i]) - math.exp(-sol.values[i, j])))
                    if not envelope.l <= vk[i] <= envelope.U:
                        violations += 1
        resid = condition_a_residuals(model, 0.0, T, lam_grid, mech)
        bound = condition_a_bound(model, 0.0, T, b, mech)
        t2 = _time.perf_counter()
        report.levels.append(LevelReport(
            k, model.n_generations, sup_err, sup_d, violations,
            resid.total, bound.total, len(model.downgrades), t1 - t0, t2 - t1))
        report.downgrades[k] = model.downgrades
    return report
