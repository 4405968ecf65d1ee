"""Varying-environment specification: time scale plus mechanism coefficients.

An ``EnvironmentSpec`` bundles the time scale gamma with piecewise-constant
drift b1, diffusion c and jump kernel m.  Admissibility of the triple is
checked by ``validate_admissible`` (violations are report entries, never
exceptions).  ``canonicalize`` performs the constructive decomposition of a
raw measure triplet into (gamma, b1, c, m) with gamma = |b1~| + c~ + m1~.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import CanonicalizationError, KernelQueryError
from .kernels import AtomicKernel, Kernel, PowerLawKernel, k_compensated, kernel_from_dict
from .timescale import DiscreteTimeScale, GammaAtom, GammaPiece, TimeScale


@dataclass(frozen=True)
class EnvPiece:
    """One constant stretch of the environment on [start, end)."""

    start: float
    end: float
    gamma_density: float
    b1: float = 0.0
    c: float = 0.0
    kernel: Kernel | None = None


@dataclass(frozen=True)
class EnvAtom:
    """A gamma atom with its own coefficients; c must vanish at atoms."""

    time: float
    mass: float
    b1: float = 0.0
    kernel: Kernel | None = None
    c: float = 0.0


@dataclass(frozen=True)
class Coeffs:
    b1: float
    c: float
    kernel: Kernel | None


_NULL = Coeffs(0.0, 0.0, None)


class EnvironmentSpec:
    """Admissible-parameter container (gamma, b1, c, m) on a finite horizon.

    Immutable after construction; safe to share across workers.
    """

    def __init__(self, horizon: float, pieces: tuple[EnvPiece, ...] = (),
                 atoms: tuple[EnvAtom, ...] = ()):
        self.horizon = float(horizon)
        self.pieces = tuple(pieces)
        self.atoms = tuple(atoms)
        self.timescale = TimeScale(
            horizon,
            tuple(GammaPiece(p.start, p.end, p.gamma_density) for p in pieces),
            tuple(GammaAtom(a.time, a.mass) for a in atoms),
        )
        # Coefficients aligned with the breakpoint intervals of the time scale.
        n = len(self.timescale.times) - 1
        self._interval_coeffs: list[Coeffs] = [_NULL] * n
        for p in pieces:
            i0 = self.timescale.times.index(p.start)
            i1 = self.timescale.times.index(p.end)
            for i in range(i0, i1):
                self._interval_coeffs[i] = Coeffs(p.b1, p.c, p.kernel)
        self._atom_coeffs: list[Coeffs] = [Coeffs(a.b1, a.c, a.kernel) for a in atoms]

    def interval_coeffs(self, i: int) -> Coeffs:
        return self._interval_coeffs[i]

    def atom_coeffs(self, j: int) -> Coeffs:
        return self._atom_coeffs[j]

    def coeffs_at(self, s: float) -> Coeffs:
        """Coefficients acting at time s: atom coefficients if gamma has an
        atom there (the piece density carries no mass at a point)."""
        ts = self.timescale
        i = ts._locate(s)
        if ts.times[i] == s and ts.atom_mass[i] > 0.0:
            return self._atom_coeffs[ts.atom_index[i]]
        if ts.times[i] == s and i > 0 and s == self.horizon:
            return self._interval_coeffs[i - 1]
        return self._interval_coeffs[min(i, len(self._interval_coeffs) - 1)]

    def delta_at_atom(self, j: int) -> float:
        """delta(s) = [b1(s) + int_0^1 z m(s,dz)] * dgamma(s) at atom j."""
        a = self.atoms[j]
        comp = a.kernel.z_moment(0.0, 1.0) if a.kernel is not None else 0.0
        return (a.b1 + comp) * a.mass

    def to_dict(self) -> dict:
        def kd(k):
            return None if k is None else k.to_dict()

        return {
            "horizon": self.horizon,
            "pieces": [
                {"start": p.start, "end": p.end, "gamma_density": p.gamma_density,
                 "b1": p.b1, "c": p.c, "kernel": kd(p.kernel)}
                for p in self.pieces
            ],
            "atoms": [
                {"time": a.time, "mass": a.mass, "b1": a.b1, "kernel": kd(a.kernel)}
                for a in self.atoms
            ],
        }


def environment_from_dict(spec: dict) -> EnvironmentSpec:
    """Build an environment from its config-file form."""
    def kernel_of(d):
        k = d.get("kernel")
        return None if not k else kernel_from_dict(k)

    pieces = tuple(
        EnvPiece(float(p["start"]), float(p["end"]), float(p["gamma_density"]),
                 float(p.get("b1", 0.0)), float(p.get("c", 0.0)), kernel_of(p))
        for p in spec.get("pieces", [])
    )
    atoms = tuple(
        EnvAtom(float(a["time"]), float(a["mass"]), float(a.get("b1", 0.0)),
                kernel_of(a), float(a.get("c", 0.0)))
        for a in spec.get("atoms", [])
    )
    return EnvironmentSpec(float(spec["horizon"]), pieces, atoms)


# -- admissibility -------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    condition: str
    where: str
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def admissible(self) -> bool:
        return not self.violations

    def add(self, condition: str, where: str, detail: str) -> None:
        self.violations.append(Violation(condition, where, detail))

    def summary(self) -> str:
        if self.admissible:
            return "admissible"
        return "; ".join(f"{v.condition} at {v.where}: {v.detail}" for v in self.violations)


def validate_admissible(env: EnvironmentSpec, tol: float = 1e-12) -> ValidationReport:
    """Check conditions (1')-(3') for the canonical parametrization.

    Violations are collected, not raised; an empty report means admissible.
    """
    rep = ValidationReport()
    for p in env.pieces:
        if p.c < 0.0:
            rep.add("(1')", f"piece[{p.start},{p.end})", f"c = {p.c} < 0")
    for j, a in enumerate(env.atoms):
        where = f"atom@{a.time}"
        if a.c != 0.0:
            rep.add("(1')", where, f"c(s)*dgamma(s) = {a.c * a.mass} != 0")
        delta = env.delta_at_atom(j)
        if delta > 1.0 + tol:
            rep.add("(2')", where, f"delta(s) = {delta} > 1")
        b1_jump = a.b1 * a.mass
        if abs(b1_jump - 1.0) <= tol:
            tail = a.kernel.mass(1.0, math.inf) if a.kernel is not None else 0.0
            if tail * a.mass <= tol:
                rep.add("(3')", where,
                        "b1(s)*dgamma(s) = 1 but m(s,(1,inf))*dgamma(s) = 0")
    return rep


def compute_C0(env: EnvironmentSpec) -> float:
    """sup_s [ |b1(s)| + c(s) + int (1 ^ z^2) m(s, dz) ] over pieces and atoms."""
    best = 0.0
    for p in env.pieces:
        if p.gamma_density > 0.0:
            jump = p.kernel.one_wedge_z2() if p.kernel is not None else 0.0
            best = max(best, abs(p.b1) + p.c + jump)
    for a in env.atoms:
        jump = a.kernel.one_wedge_z2() if a.kernel is not None else 0.0
        best = max(best, abs(a.b1) + a.c + jump)
    return best


# -- kernel moment queries ------------------------------------------------

@dataclass(frozen=True)
class MomentQuery:
    """Named moment of the jump kernel at a fixed time.

    kinds: "z" (int z m), "z2" (int z^2 m), "mass" (m((a,b])),
    "k1" (int K_1(lam, z) m over the support), "k" (int K(lam, z) m over (a,b]).
    """

    kind: str
    a: float = 0.0
    b: float = math.inf
    lam: float = 0.0


@dataclass(frozen=True)
class MomentResult:
    value: float
    error: float


def kernel_moments(env: EnvironmentSpec, s: float, query: MomentQuery,
                   tol: float = 1e-10) -> MomentResult:
    """Evaluate a moment query of m(s, .).

    Atomic kernels are exact (error 0).  Power-law kernels go through
    adaptive quadrature with absolute tolerance ``tol``; closed forms exist
    for every query and are used as a cross-check in the test suite.
    """
    if query.a > query.b:
        raise KernelQueryError(f"invalid bounds a={query.a} > b={query.b}")
    kern = env.coeffs_at(s).kernel
    if kern is None:
        return MomentResult(0.0, 0.0)
    if isinstance(kern, AtomicKernel):
        return MomentResult(_closed_moment(kern, query), 0.0)
    lam = query.lam
    if query.kind == "z":
        f = lambda z: z
    elif query.kind == "z2":
        f = lambda z: z * z
    elif query.kind == "mass":
        f = lambda z: 1.0
    elif query.kind == "k":
        f = lambda z: k_compensated(lam * z)
    elif query.kind == "k1":
        f = lambda z: k_compensated(lam * z) if z <= 1.0 else math.expm1(-lam * z)
    else:
        raise KernelQueryError(f"unknown query kind {query.kind!r}")
    lo, hi = query.a, query.b
    if query.kind == "k1":
        lo, hi = 0.0, math.inf
    # Integrability screen: reject queries that diverge for this kernel.
    _closed_moment(kern, query)
    if query.kind == "k1" and kern.zmax > 1.0 > kern.zmin:
        v1, e1 = kern.quad(f, lo, 1.0, tol / 2)
        v2, e2 = kern.quad(f, 1.0, hi, tol / 2)
        return MomentResult(v1 + v2, e1 + e2)
    v, e = kern.quad(f, lo, hi, tol)
    return MomentResult(v, e)


def _closed_moment(kern: Kernel, query: MomentQuery) -> float:
    if query.kind == "z":
        return kern.z_moment(query.a, query.b)
    if query.kind == "z2":
        return kern.z2_moment(query.a, query.b)
    if query.kind == "mass":
        return kern.mass(query.a, query.b)
    if query.kind == "k":
        return kern.k_moment(query.lam, query.a, query.b)
    if query.kind == "k1":
        return kern.k1_moment(query.lam)
    raise KernelQueryError(f"unknown query kind {query.kind!r}")


# -- canonicalization of raw triplets --------------------------------------

@dataclass(frozen=True)
class RawDensityPiece:
    start: float
    end: float
    value: float  # signed for b1~, nonnegative for c~


@dataclass(frozen=True)
class RawAtomMass:
    time: float
    mass: float  # signed for b1~


@dataclass(frozen=True)
class RawKernelPiece:
    start: float
    end: float
    rate: float  # m~(ds, dz) = rate * kernel(dz) ds on the piece
    kernel: Kernel


@dataclass(frozen=True)
class RawKernelAtom:
    time: float
    scale: float  # m~({time}, dz) = scale * kernel(dz)
    kernel: Kernel


@dataclass(frozen=True)
class RawTriplet:
    """Free-form admissible parameters (b1~, c~, m~) before canonicalization."""

    horizon: float
    b1_pieces: tuple[RawDensityPiece, ...] = ()
    b1_atoms: tuple[RawAtomMass, ...] = ()
    c_pieces: tuple[RawDensityPiece, ...] = ()
    m_pieces: tuple[RawKernelPiece, ...] = ()
    m_atoms: tuple[RawKernelAtom, ...] = ()


def _scaled_kernel(kern: Kernel, factor: float) -> Kernel:
    return kern.scaled(factor)


def canonicalize(raw: RawTriplet) -> EnvironmentSpec:
    """Decompose (b1~, c~, m~) into (gamma, b1, c, m).

    gamma(ds) = |b1~|(ds) + c~(ds) + m1~(ds) with m1~ the (1 ^ z^2)-mass of
    m~; the coefficient fields are the densities of the inputs against
    gamma.  Exact for piecewise-constant inputs: reconstructing b1*gamma,
    c*gamma, m*gamma returns the inputs piece by piece and atom by atom.
    """
    T = raw.horizon
    for cp in raw.c_pieces:
        if cp.value < 0.0:
            raise CanonicalizationError("c~ must be nonnegative")
    cuts = {0.0, T}
    for p in (*raw.b1_pieces, *raw.c_pieces, *raw.m_pieces):
        if not 0.0 <= p.start < p.end <= T:
            raise CanonicalizationError(f"piece [{p.start},{p.end}) outside [0,{T}]")
        cuts.update((p.start, p.end))
    times = sorted(cuts)

    def window_value(pieces, lo, hi):
        vals = [p for p in pieces if p.start <= lo and hi <= p.end]
        if len(vals) > 1:
            raise CanonicalizationError("overlapping raw pieces")
        return vals[0] if vals else None

    env_pieces: list[EnvPiece] = []
    for lo, hi in zip(times, times[1:]):
        b = window_value(raw.b1_pieces, lo, hi)
        c = window_value(raw.c_pieces, lo, hi)
        mk = window_value(raw.m_pieces, lo, hi)
        b_dens = b.value if b else 0.0
        c_dens = c.value if c else 0.0
        m1_dens = mk.rate * mk.kernel.one_wedge_z2() if mk else 0.0
        g_dens = abs(b_dens) + c_dens + m1_dens
        if g_dens == 0.0:
            if b_dens != 0.0 or (mk and mk.rate != 0.0):
                raise CanonicalizationError(
                    f"measure mass without gamma mass on [{lo},{hi})")
            continue
        kern = _scaled_kernel(mk.kernel, mk.rate / g_dens) if mk and mk.rate else None
        env_pieces.append(EnvPiece(lo, hi, g_dens, b_dens / g_dens, c_dens / g_dens, kern))

    atom_times = sorted({a.time for a in raw.b1_atoms} | {a.time for a in raw.m_atoms})
    env_atoms: list[EnvAtom] = []
    for t in atom_times:
        if not 0.0 < t <= T:
            raise CanonicalizationError(f"atom time {t} outside (0,{T}]")
        b_mass = math.fsum(a.mass for a in raw.b1_atoms if a.time == t)
        mk = [a for a in raw.m_atoms if a.time == t]
        if len(mk) > 1:
            raise CanonicalizationError("duplicate m~ atoms")
        m1_mass = mk[0].scale * mk[0].kernel.one_wedge_z2() if mk else 0.0
        g_mass = abs(b_mass) + m1_mass
        if g_mass == 0.0:
            continue
        kern = _scaled_kernel(mk[0].kernel, mk[0].scale / g_mass) if mk else None
        env_atoms.append(EnvAtom(t, g_mass, b_mass / g_mass, kern))

    return EnvironmentSpec(T, tuple(env_pieces), tuple(env_atoms))


def reconstruct_raw(env: EnvironmentSpec) -> RawTriplet:
    """Inverse of canonicalize: the measures b1*gamma, c*gamma, m*gamma."""
    b1_pieces, c_pieces, m_pieces = [], [], []
    for p in env.pieces:
        if p.gamma_density == 0.0:
            continue
        if p.b1 != 0.0:
            b1_pieces.append(RawDensityPiece(p.start, p.end, p.b1 * p.gamma_density))
        if p.c != 0.0:
            c_pieces.append(RawDensityPiece(p.start, p.end, p.c * p.gamma_density))
        if p.kernel is not None:
            m_pieces.append(RawKernelPiece(p.start, p.end, p.gamma_density, p.kernel))
    b1_atoms, m_atoms = [], []
    for a in env.atoms:
        if a.b1 != 0.0:
            b1_atoms.append(RawAtomMass(a.time, a.b1 * a.mass))
        if a.kernel is not None:
            m_atoms.append(RawKernelAtom(a.time, a.mass, a.kernel))
    return RawTriplet(env.horizon, tuple(b1_pieces), tuple(b1_atoms),
                      tuple(c_pieces), tuple(m_pieces), tuple(m_atoms))


# -- discretization --------------------------------------------------------

def beta_for_level(c0: float, k: int) -> float:
    """Scaling constant beta_k = 4 C0 (k+1)."""
    return 4.0 * c0 * (k + 1)


def discretize_time(env: EnvironmentSpec, k: int, c0: float) -> DiscreteTimeScale:
    """Level-k clock for the environment; beta_k = 4 C0 (k+1).

    A null mechanism (C0 = 0) yields the empty clock: gamma_k = 0
    everywhere and the discrete chain has no generations.
    """
    if c0 < 0.0:
        raise ValueError("C0 must be nonnegative")
    return DiscreteTimeScale(env.timescale, k, beta_for_level(c0, k))
