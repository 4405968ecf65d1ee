"""Exact offspring sampling and Monte-Carlo Laplace verification.

Offspring laws come out of the structural pgfs in two interchangeable
forms: an explicit pmf (coefficients extracted with Poisson-tail-bounded
truncation) and, when every mixture weight is nonnegative, a component
decomposition (point masses at {0,1,2}, Poisson components, mixed-Poisson
power-law components).  A generation advances the whole replicate vector
at once: multinomial split over components, then point masses contribute
deterministically and Poisson components through a single aggregated
draw, so the cost per generation does not depend on the population size.
Pgfs whose decomposition has a negative weight (compensated small-jump
parts can push the constant below zero) fall back to one multinomial over
the explicit pmf, which is equally exact in distribution.

Randomness is counter-based: each (seed, replicate-block, generation)
triple owns a Philox stream, so identity generations consume nothing,
blocks are order-independent, and parallel reduction is deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .discrete import DiscreteModel
from .errors import ExplosionError, PgfCoefficientError
from .kernels import PowerLawKernel
from .pgf import Pgf

POPULATION_GUARD = 10**12
DEFAULT_TAIL_TOL = 1e-12
DEFAULT_BLOCK = 16384


@dataclass(frozen=True)
class MixedComponent:
    """Mixed Poisson: rate = rate_scale * Z with Z ~ normalized kernel slice."""

    weight: float
    kernel: PowerLawKernel
    rate_scale: float

    def sample_z(self, rng: np.random.Generator, n: int) -> np.ndarray:
        a, b, al = self.kernel.zmin, self.kernel.zmax, self.kernel.alpha
        u = rng.random(n)
        ta, tb = a**-al, b**-al
        return (ta - u * (ta - tb)) ** (-1.0 / al)


@dataclass(frozen=True)
class SamplingComponents:
    """Nonnegative mixture decomposition backing the fast sampler."""

    point_weights: tuple[float, float, float]
    poisson: tuple[tuple[float, float], ...]
    mixed: tuple[MixedComponent, ...]

    def pvals(self) -> np.ndarray:
        out = np.array(
            [*self.point_weights, *(w for w, _ in self.poisson),
             *(m.weight for m in self.mixed)])
        return out / out.sum()


@dataclass(frozen=True)
class OffspringPmf:
    """Exact truncated offspring law of one structural pgf."""

    probs: np.ndarray
    tail: float
    mean: float
    pgf_mean: float
    components: SamplingComponents | None

    @property
    def support(self) -> int:
        return len(self.probs)


def _components_of(g: Pgf, tol: float = 1e-13) -> SamplingComponents | None:
    d0, d1, d2 = g.const, g.linear, g.quad
    mixed = []
    for t in g.pl_terms:
        mass = t.finite_mass()
        if mass is None:
            return None
        k = t.rate_scale
        if t.compensated:
            zm = t.kernel.z_moment(t.kernel.zmin, t.kernel.zmax)
            d0 += t.coef * (k * zm - mass)
            d1 -= t.coef * k * zm
        else:
            d0 -= t.coef * mass
        mixed.append(MixedComponent(t.coef * mass, t.kernel, k))
    weights = [d0, d1, d2, *(w for w, _ in g.exp_terms), *(m.weight for m in mixed)]
    if min(weights) < -tol:
        return None
    return SamplingComponents(
        (max(d0, 0.0), max(d1, 0.0), max(d2, 0.0)),
        tuple((max(w, 0.0), r) for w, r in g.exp_terms),
        tuple(mixed),
    )


def pgf_pmf(g: Pgf, tail_tol: float = DEFAULT_TAIL_TOL) -> OffspringPmf:
    """Extract the exact offspring pmf with total truncated tail <= tail_tol.

    Raises when any extracted coefficient is below -1e-12 (corrupt pgf).
    """
    rates = [r for w, r in g.exp_terms if w > 0.0]
    for t in g.pl_terms:
        if t.kernel.zmax == math.inf:
            raise PgfCoefficientError(
                "cannot truncate a power-law term with unbounded jump sizes")
        rates.append(t.rate_scale * t.kernel.zmax)
    max_rate = max(rates, default=0.0)
    n = 2
    if max_rate > 0.0:
        n = max(n, int(stats.poisson.isf(tail_tol / 4.0, max_rate)) + 2)
    probs = g.series(n)
    bad = probs.min()
    if bad < -1e-12:
        raise PgfCoefficientError(f"extracted coefficient {bad:.3e} < -1e-12")
    probs = np.clip(probs, 0.0, None)
    tail = max(0.0, 1.0 - float(probs.sum()))
    mean = float(probs @ np.arange(len(probs)))
    return OffspringPmf(probs, tail, mean, g.mean(), _components_of(g))


class _PlanCache:
    """Per-model cache of sampling plans keyed by pgf value."""

    def __init__(self, tail_tol: float = DEFAULT_TAIL_TOL):
        self.tail_tol = tail_tol
        self._plans: dict[Pgf, OffspringPmf] = {}

    def plan(self, g: Pgf) -> OffspringPmf:
        got = self._plans.get(g)
        if got is None:
            got = pgf_pmf(g, self.tail_tol)
            self._plans[g] = got
        return got


def _rng_for(seed: int, block: int, gen: int) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, block], dtype=np.uint64)
    counter = np.array([0, 0, gen, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def _advance(rng: np.random.Generator, z: np.ndarray, plan: OffspringPmf) -> np.ndarray:
    comps = plan.components
    if comps is not None:
        counts = rng.multinomial(z, comps.pvals())
        out = counts[:, 1] + 2 * counts[:, 2]
        n_p = len(comps.poisson)
        if n_p:
            rates = np.array([r for _, r in comps.poisson])
            lam = counts[:, 3:3 + n_p] @ rates
            out = out + rng.poisson(lam)
        for j, mix in enumerate(comps.mixed):
            col = counts[:, 3 + n_p + j]
            total = int(col.sum())
            if total:
                zs = mix.sample_z(rng, total)
                offs = rng.poisson(mix.rate_scale * zs)
                idx = np.repeat(np.arange(len(z)), col)
                out = out + np.bincount(idx, weights=offs,
                                        minlength=len(z)).astype(np.int64)
        return out.astype(np.int64)
    counts = rng.multinomial(z, plan.probs / plan.probs.sum())
    return (counts @ np.arange(plan.support, dtype=np.int64)).astype(np.int64)


def _walk_generations(model: DiscreteModel, z: np.ndarray, seed: int, block: int,
                      cache: _PlanCache, snapshots: dict[int, np.ndarray],
                      record_all: list[np.ndarray] | None = None) -> np.ndarray:
    """Advance one replicate block through every generation of the model."""
    if 0 in snapshots:
        snapshots[0] = z.copy()
    for entry in model.entries:
        if entry.kind == "identity":
            for g in range(entry.gen_lo + 1, entry.gen_hi + 2):
                if g in snapshots:
                    snapshots[g] = z.copy()
                if record_all is not None:
                    record_all.append(z.copy())
            continue
        plan = cache.plan(entry.pgf)
        for g in range(entry.gen_lo, entry.gen_hi + 1):
            alive = z.max() if len(z) else 0
            if alive > POPULATION_GUARD:
                raise ExplosionError(
                    f"population exceeded {POPULATION_GUARD:.0e} at generation {g}")
            if alive > 0:
                rng = _rng_for(seed, block, g)
                z = _advance(rng, z, plan)
            if g + 1 in snapshots:
                snapshots[g + 1] = z.copy()
            if record_all is not None:
                record_all.append(z.copy())
    return z


@dataclass(frozen=True)
class Trajectory:
    """One simulated path of the scaled chain."""

    k: int
    seed: int
    z_path: np.ndarray       # population per generation, length n_gen + 1
    times: tuple[float, ...]
    x_path: np.ndarray       # X_k on the requested time grid

    @property
    def absorbed(self) -> bool:
        return self.z_path[-1] == 0


def simulate_trajectory(model: DiscreteModel, z0: int, time_grid,
                        seed: int) -> Trajectory:
    """Single trajectory of Z_k with the scaled path sampled on time_grid."""
    if z0 < 0:
        raise ValueError("z0 must be nonnegative")
    times = tuple(float(t) for t in time_grid)
    if any(t < 0.0 or t > model.env.horizon for t in times):
        raise ValueError("time_grid must lie in [0, T]")
    cache = _PlanCache()
    path: list[np.ndarray] = [np.array([z0], dtype=np.int64)]
    z = _walk_generations(model, path[0].copy(), seed, 0, cache, {}, path)
    z_path = np.array([p[0] for p in path], dtype=np.int64)
    x_path = np.array([z_path[model.clock.gamma_k(t)] / model.k for t in times])
    return Trajectory(model.k, seed, z_path, times, x_path)


@dataclass(frozen=True)
class McCell:
    t: float
    lam: float
    estimate: float
    stderr: float
    exact_vk: float
    exact_target: float
    z_score: float
    limit_v: float
    limit_target: float


@dataclass(frozen=True)
class McReport:
    k: int
    x0: float
    replicates: int
    seed: int
    cells: tuple[McCell, ...]

    def worst_abs_z(self) -> float:
        return max((abs(c.z_score) for c in self.cells), default=0.0)


def mc_laplace_check(model: DiscreteModel, x0: float, t_list, lam_list,
                     replicates: int, seed: int,
                     limit_values: dict | None = None,
                     block_size: int = DEFAULT_BLOCK) -> McReport:
    """Estimate E[e^{-lam X_k(t)}] and compare with the exact pgf target.

    The exact target is e^{-x0 v_k(0,t;lam)}; z-scores quantify sampler
    agreement.  ``limit_values`` maps (t, lam) to the limiting cumulant
    v(0,t;lam) and fills the comparison columns of the distributional gap.
    """
    k = model.k
    z0 = x0 * k
    if abs(z0 - round(z0)) > 1e-9:
        raise ValueError(f"k*x0 = {z0} must be an integer population")
    z0 = int(round(z0))
    if replicates < 100:
        raise ValueError("need at least 100 replicates")
    t_list = [float(t) for t in t_list]
    lam_list = [float(x) for x in lam_list]
    snap_gens = sorted({model.clock.gamma_k(t) for t in t_list})
    cache = _PlanCache()
    sums = {(t, lam): [] for t in t_list for lam in lam_list}
    sums_sq = {(t, lam): [] for t in t_list for lam in lam_list}
    n_blocks = (replicates + block_size - 1) // block_size
    for block in range(n_blocks):
        size = min(block_size, replicates - block * block_size)
        z = np.full(size, z0, dtype=np.int64)
        snaps = {g: None for g in snap_gens}
        _walk_generations(model, z, seed, block, cache, snaps)
        for t in t_list:
            zt = snaps[model.clock.gamma_k(t)]
            for lam in lam_list:
                y = np.exp(-lam * zt / k)
                sums[(t, lam)].append(float(y.sum()))
                sums_sq[(t, lam)].append(float((y * y).sum()))
    cells = []
    for t in t_list:
        for lam in lam_list:
            s1 = math.fsum(sums[(t, lam)])
            s2 = math.fsum(sums_sq[(t, lam)])
            est = s1 / replicates
            var = max(0.0, (s2 - s1 * s1 / replicates) / (replicates - 1))
            se = math.sqrt(var / replicates)
            vk = model.discrete_cumulant(0.0, t, lam)
            target = math.exp(-x0 * vk)
            if se > 0.0:
                zsc = (est - target) / se
            else:
                zsc = 0.0 if est == target else math.inf
            v_lim = math.nan
            lim_target = math.nan
            if limit_values is not None and (t, lam) in limit_values:
                v_lim = limit_values[(t, lam)]
                lim_target = math.exp(-x0 * v_lim)
            cells.append(McCell(t, lam, est, se, vk, target, zsc, v_lim, lim_target))
    return McReport(k, x0, replicates, seed, tuple(cells))


def pmf_chi_square(plan: OffspringPmf, n_draws: int, seed: int,
                   min_expected: float = 5.0) -> tuple[float, float]:
    """Chi-square test of the sampler against the extracted pmf.

    Draws n_draws single individuals through the same path trajectories
    use, histograms the offspring counts, and tests against the pmf with
    small-expectation bins merged into an overflow bin.
    Returns (statistic, p_value).
    """
    rng = _rng_for(seed, 0, 0)
    comps = plan.components
    top = plan.support + 1
    if comps is not None:
        pv = comps.pvals()
        counts = rng.multinomial(n_draws, pv)
        hist = np.zeros(top, dtype=np.int64)
        hist[0] += counts[0]
        hist[1] += counts[1]
        hist[2] += counts[2]
        col = 3
        for _, rate in comps.poisson:
            draws = rng.poisson(rate, size=counts[col])
            hist += np.bincount(np.minimum(draws, top - 1), minlength=top)
            col += 1
        for mix in comps.mixed:
            n_c = counts[col]
            if n_c:
                zs = mix.sample_z(rng, int(n_c))
                draws = rng.poisson(mix.rate_scale * zs)
                hist += np.bincount(np.minimum(draws, top - 1), minlength=top)
            col += 1
    else:
        probs = plan.probs / plan.probs.sum()
        counts = rng.multinomial(n_draws, probs)
        hist = np.concatenate([counts, [0]]).astype(np.int64)
    expected = np.concatenate([plan.probs, [plan.tail]]) * n_draws
    obs_bins, exp_bins = [], []
    acc_o, acc_e = 0.0, 0.0
    for o, e in zip(hist, expected):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            obs_bins.append(acc_o)
            exp_bins.append(acc_e)
            acc_o, acc_e = 0.0, 0.0
    if acc_e > 0.0 and exp_bins:
        obs_bins[-1] += acc_o
        exp_bins[-1] += acc_e
    if len(exp_bins) < 2:
        return 0.0, 1.0
    obs = np.array(obs_bins)
    exp = np.array(exp_bins) * (obs.sum() / sum(exp_bins))
    stat, p = stats.chisquare(obs, exp)
    return float(stat), float(p)
