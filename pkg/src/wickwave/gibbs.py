"""Truncated Gibbs measures and invariance tests.

The measure is ``Z^-1 exp(-V_N(u)) dmu1(u) x dmu0(du/dt)`` with the Wick
potential ``V_N(u) = 1/(k+1) mean_x H_(k+1)(P_N u(x); alpha_N)``. Spatial
averages use the normalized measure on the torus, the same convention as
the coefficient-space dynamics, which is what makes the measure invariant.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats
from scipy.optimize import minimize

from .dynamics import TruncatedSdNLW
from .noise import NoiseStream, ordered_map
from .snapshot import encode
from .stochastic import ModeSet, alpha_n, hermite, mu1_modes
from .torus import FieldPair, LatticeSpec, SpectralField, coeffs_to_grid

PROVENANCE = ("rejection", "dynamics", "gaussian-prior")
PRIOR_CHUNK = 1 << 15
BOUND_INFLATION = 1.1


class BoundViolated(RuntimeError):
    """A density value exceeded the rejection envelope."""

    def __init__(self, log_bound: float, log_value: float):
        super().__init__(f"bound-violated: log R = {log_value:.6g} > log bound {log_bound:.6g}")
        self.log_bound = log_bound
        self.log_value = log_value


@dataclass(frozen=True)
class GibbsSpec:
    N: float
    k: int = 3
    wick_variance: Optional[float] = None

    def __post_init__(self):
        if self.k < 3 or self.k % 2 == 0:
            raise ValueError("k must be an odd integer >= 3")
        if not self.N >= 0:
            raise ValueError("N must be non-negative")

    @property
    def alpha_N(self) -> float:
        """Wick parameter; the exact variance unless explicitly overridden."""
        return alpha_n(self.N) if self.wick_variance is None else float(self.wick_variance)

    def lattice(self) -> LatticeSpec:
        """Smallest lattice that contains the disc ``|n| <= N``."""
        return LatticeSpec(max(1, int(math.floor(self.N))))


# ---------------------------------------------------------------------------
# potential


class LowModePotential:
    """``V_N`` on mode vectors of ``P_N u`` by exact odd-grid quadrature.

    The integrand has per-axis degree at most ``(k+1) floor(N)``, so a
    uniform grid of ``Q > (k+1) floor(N)`` points integrates it exactly.
    """

    def __init__(self, spec: GibbsSpec, lattice: Optional[LatticeSpec] = None):
        self.spec = spec
        self.lattice = lattice or spec.lattice()
        self.modes = ModeSet.build(self.lattice, spec.N)
        Q = (spec.k + 1) * int(math.floor(spec.N)) + 1
        x = 2 * np.pi * np.arange(Q) / Q
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        arg = np.outer(self.modes.n1, X1.ravel()) + np.outer(self.modes.n2, X2.ravel())
        # rows interleave (cos, -sin) to match the (re, im) layout of a complex vector
        self._basis = np.stack([np.cos(arg), -np.sin(arg)], axis=1).reshape(2 * self.modes.size, -1)
        # H_(k+1)(x; a) is even in x: coefficients of the polynomial in x^2
        self._even = hermite_coefficients(spec.k + 1, spec.alpha_N)[::2]

    def values(self, low: np.ndarray) -> np.ndarray:
        """Grid values of ``P_N u`` for mode vectors ``(..., size)``."""
        low = np.ascontiguousarray(low, dtype=complex)
        return low.view(float) @ self._basis

    def __call__(self, low: np.ndarray) -> np.ndarray:
        y = self.values(low)
        np.multiply(y, y, out=y)
        acc = np.full_like(y, self._even[-1])
        for a in self._even[-2::-1]:
            acc *= y
            acc += a
        return np.mean(acc, axis=-1) / (self.spec.k + 1)

    def from_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        return self(self.modes.from_coeffs(coeffs))


def hermite_coefficients(n: int, sigma: float) -> np.ndarray:
    """Monomial coefficients (ascending) of ``H_n(x; sigma)``."""
    prev, cur = np.array([1.0]), np.array([0.0, 1.0])
    if n == 0:
        return prev
    for j in range(1, n):
        nxt = np.zeros(j + 2)
        nxt[1:] = cur
        nxt[:j] -= j * sigma * prev
        prev, cur = cur, nxt
    return cur


def wick_potential(u: SpectralField, spec: GibbsSpec, grid_size: Optional[int] = None,
                   volume: float = 1.0) -> float:
    """``volume/(k+1) * mean_x H_(k+1)(P_N u(x); alpha_N)`` on a dealiased grid.

    ``volume = 1`` is the normalized measure used throughout; pass
    ``(2 pi)^2`` for the Lebesgue measure on ``[0, 2 pi)^2``.
    """
    lat = u.lattice
    deg = spec.k + 1
    G = grid_size or lat.dealias_size(deg)
    if not lat.can_dealias(deg, G):
        raise ValueError(f"grid of {G} points cannot resolve degree-{deg} products on K={lat.K}")
    low = u.coeffs * lat.disc_mask(spec.N)
    g = coeffs_to_grid(low, G)
    return float(volume * np.mean(hermite(deg, g, spec.alpha_N)) / deg)


def gibbs_density_rn(u: SpectralField, spec: GibbsSpec, log: bool = False) -> float:
    """``R_N(u) = exp(-V_N(u))``, or its logarithm."""
    v = -wick_potential(u, spec)
    if log:
        return v
    if v > 709.0:
        raise OverflowError("R_N overflows; request log=True")
    return math.exp(v)


def potential_lower_bound(spec: GibbsSpec, starts: int = 32, seed: int = 0,
                          lattice: Optional[LatticeSpec] = None) -> float:
    """Numerical minimum of ``V_N`` over ``P_N u`` by multi-start BFGS."""
    pot = LowModePotential(spec, lattice)
    modes = pot.modes
    scale = 1.0 / np.sqrt(modes.w2)
    rng = np.random.default_rng(seed)

    def f(z):
        return float(pot(modes.hermitian_normal(z.reshape(-1, 2)) * scale))

    best = f(np.zeros(2 * modes.size))
    amp = math.sqrt(3.0 * max(spec.alpha_N, 1e-12))
    for j in range(starts):
        z0 = rng.standard_normal(2 * modes.size) * (1.0 + 2.0 * amp * (j % 2))
        res = minimize(f, z0, method="BFGS")
        best = min(best, float(res.fun))
    # constant fields realize the pointwise minimum at x^2 = 3 alpha (k=3) or similar
    for c in np.linspace(-3 * amp, 3 * amp, 121):
        z = np.zeros((modes.size, 2))
        z[np.flatnonzero((modes.n1 == 0) & (modes.n2 == 0)), 0] = c
        best = min(best, f(z.ravel()))
    return best


# ---------------------------------------------------------------------------
# ensembles


@dataclass(frozen=True, eq=False)
class Ensemble:
    lattice: LatticeSpec
    positions: np.ndarray = field(repr=False)
    velocities: np.ndarray = field(repr=False)
    provenance: str
    weights: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.provenance not in PROVENANCE:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.positions.shape != self.velocities.shape:
            raise ValueError("position and velocity arrays differ in shape")
        if self.weights is not None:
            w = np.asarray(self.weights)
            if w.shape != (len(self.positions),) or not np.all(np.isfinite(w) & (w > 0)):
                raise ValueError("weights must be positive and finite, one per member")

    def __len__(self) -> int:
        return len(self.positions)

    def member(self, i: int) -> FieldPair:
        return FieldPair.from_arrays(self.lattice, self.positions[i], self.velocities[i])

    @property
    def members(self) -> list[FieldPair]:
        return [self.member(i) for i in range(len(self))]

    def to_bytes(self) -> bytes:
        """Snapshot with positions and velocities interleaved per member."""
        arrays = []
        for p, v in zip(self.positions, self.velocities):
            arrays += [p, v]
        return encode(self.lattice, arrays)


def sample_prior(lattice: LatticeSpec, M: int, noise: NoiseStream, first: int = 0) -> Ensemble:
    if M <= 0:
        raise ValueError("M must be positive")
    modes = ModeSet.build(lattice, None)
    p, v = mu1_modes(modes, noise.substream("prior"), first, M)
    return Ensemble(lattice, modes.to_coeffs(p), modes.to_coeffs(v), "gaussian-prior")


def _prior_low_chunk(pot: LowModePotential, stream: NoiseStream, chunk: int):
    rng = stream.generator("chunk", chunk)
    z = rng.standard_normal((PRIOR_CHUNK, pot.modes.size, 2))
    u = rng.random(PRIOR_CHUNK)
    low = pot.modes.hermitian_normal(z) / np.sqrt(pot.modes.w2)
    return low, u


def _complete(spec: GibbsSpec, lattice: LatticeSpec, low: np.ndarray, stream: NoiseStream) -> tuple:
    """Attach velocities and high modes from the prior to accepted low modes."""
    full = ModeSet.build(lattice, None)
    pos, vel = mu1_modes(full, stream, 0, len(low))
    P, V = full.to_coeffs(pos), full.to_coeffs(vel)
    lowset = ModeSet.build(lattice, spec.N)
    Pf = P.reshape(len(low), -1)
    Pf[:, lowset.flat] = low
    return Pf.reshape(P.shape), V


def sample_gibbs_rejection(spec: GibbsSpec, M: int, noise: NoiseStream,
                           lattice: Optional[LatticeSpec] = None, log_bound: Optional[float] = None,
                           max_restarts: int = 3, max_chunks: int = 1 << 16) -> Ensemble:
    """Exact samples from the truncated Gibbs measure by rejection from the prior.

    A proposal is accepted with probability ``R_N(u) / Rbar`` where
    ``Rbar = 1.1 * exp(-min V_N)``. Only ``P_N u`` enters the density, so the
    remaining components are drawn from the prior for accepted members only.
    """
    if M <= 0:
        raise ValueError("M must be positive")
    lattice = lattice or spec.lattice()
    pot = LowModePotential(spec, lattice)
    if log_bound is None:
        log_bound = -potential_lower_bound(spec, lattice=lattice) + math.log(BOUND_INFLATION)
    stream = noise.substream("gibbs-rejection")
    for restart in range(max_restarts + 1):
        try:
            return _rejection_pass(spec, lattice, pot, M, stream.substream(restart), log_bound, max_chunks)
        except BoundViolated as err:
            log_bound = err.log_value + math.log(BOUND_INFLATION)
    raise RuntimeError("rejection envelope kept failing after re-estimation")


def _rejection_pass(spec, lattice, pot, M, stream, log_bound, max_chunks) -> Ensemble:
    accepted = []
    n_acc = 0
    proposals = 0
    for chunk in range(max_chunks):
        low, u = _prior_low_chunk(pot, stream, chunk)
        logR = -pot(low)
        top = float(np.max(logR))
        if top > log_bound:
            raise BoundViolated(log_bound, top)
        take = np.log(u) < logR - log_bound
        need = M - n_acc
        idx = np.flatnonzero(take)[:need]
        accepted.append(low[idx])
        n_acc += idx.size
        if n_acc >= M:
            proposals += int(idx[-1]) + 1
            break
        proposals += PRIOR_CHUNK
    else:
        raise RuntimeError(f"only {n_acc} of {M} samples accepted within the proposal budget")
    low = np.concatenate(accepted)
    P, V = _complete(spec, lattice, low, stream.substream("complete"))
    info = {"proposals": proposals, "acceptance": M / proposals, "logBound": log_bound}
    return Ensemble(lattice, P, V, "rejection", info=info)


@dataclass(frozen=True)
class WeightedEstimate:
    mean: float
    se: float
    ess: float
    draws: int


def importance_estimate(spec: GibbsSpec, observables: dict, draws: int, noise: NoiseStream,
                        lattice: Optional[LatticeSpec] = None) -> dict:
    """Self-normalized importance estimates of ``E_rho[O]`` from prior draws.

    ``observables`` maps names to functions of low-mode vectors
    ``(n, size)``. Standard errors are the delta-method ones for a ratio
    estimator.
    """
    if draws <= 0:
        raise ValueError("draws must be positive")
    lattice = lattice or spec.lattice()
    pot = LowModePotential(spec, lattice)
    stream = noise.substream("gibbs-importance")
    names = list(observables)
    # streaming sums of w, w^2 and w x, w^2 x, w^2 x^2, rescaled to a running max of log w
    shift = -np.inf
    sw = sw2 = 0.0
    acc = {n: np.zeros(3) for n in names}
    for chunk in range(-(-draws // PRIOR_CHUNK)):
        low, _ = _prior_low_chunk(pot, stream, chunk)
        low = low[:min(PRIOR_CHUNK, draws - chunk * PRIOR_CHUNK)]
        logw = -pot(low)
        top = float(logw.max())
        if top > shift:
            r = math.exp(shift - top) if np.isfinite(shift) else 0.0
            sw, sw2 = sw * r, sw2 * r * r
            for n in names:
                acc[n] *= (r, r * r, r * r)
            shift = top
        w = np.exp(logw - shift)
        w2 = w * w
        sw += float(w.sum())
        sw2 += float(w2.sum())
        for n in names:
            x = observables[n](low)
            acc[n] += (float(w @ x), float(w2 @ x), float(w2 @ (x * x)))
    ess = sw * sw / sw2
    out = {}
    for n in names:
        swx, sw2x, sw2x2 = acc[n]
        mu = swx / sw
        var = max(sw2x2 - 2 * mu * sw2x + mu * mu * sw2, 0.0)
        out[n] = WeightedEstimate(float(mu), float(math.sqrt(var) / sw), float(ess), draws)
    return out


# ---------------------------------------------------------------------------
# observables


def default_observables(spec: GibbsSpec, lattice: LatticeSpec, eps: float = 0.1) -> dict:
    """Named scalar observables of ``(pos, vel)`` coefficient batches."""
    low = lattice.disc_mask(spec.N)
    weight = lattice.bessel() ** (-2 * eps)
    K = lattice.K
    a = spec.alpha_N

    def mode(n1, n2):
        return lambda p, v: np.abs(p[:, n1 + K, n2 + K]) ** 2

    obs = {
        "wick2": lambda p, v: np.sum(low * np.abs(p) ** 2, axis=(-2, -1)) - a,
        "hminus_eps": lambda p, v: np.sum(weight * np.abs(p) ** 2, axis=(-2, -1)),
        "mode_0_0": mode(0, 0),
        "mode_1_0": mode(1, 0) if K >= 1 else mode(0, 0),
        "mode_1_1": mode(1, 1) if K >= 1 else mode(0, 0),
        "velocity_var": lambda p, v: np.sum(np.abs(v) ** 2, axis=(-2, -1)),
    }
    return obs


def low_mode_observables(spec: GibbsSpec, pot: LowModePotential) -> dict:
    """Observables of ``P_N u`` mode vectors, for rejection/importance comparisons."""
    modes = pot.modes
    zero = int(np.flatnonzero((modes.n1 == 0) & (modes.n2 == 0))[0])
    ten = np.flatnonzero((modes.n1 == 1) & (modes.n2 == 0))
    a = spec.alpha_N
    out = {
        "wick2": lambda low: np.sum(np.abs(low) ** 2, axis=-1) - a,
        "mode_0_0": lambda low: np.real(low[..., zero]) ** 2,
    }
    if ten.size:
        out["mode_1_0"] = lambda low: np.abs(low[..., int(ten[0])]) ** 2
    else:
        out["wick4"] = lambda low: np.mean(hermite(4, pot.values(low), a), axis=-1)
    return out


# ---------------------------------------------------------------------------
# invariance


@dataclass(frozen=True)
class InvarianceReport:
    observables: list
    M: int
    T: float
    dt: float
    seed: int
    level: float
    nonlinear: bool
    wick_variance: float

    @property
    def rejected(self) -> bool:
        return any(o["rejected"] for o in self.observables)

    @property
    def passed(self) -> bool:
        return not self.rejected

    def to_json(self) -> str:
        doc = {
            "M": self.M, "T": self.T, "dt": self.dt, "seed": self.seed, "level": self.level,
            "nonlinear": self.nonlinear, "wickVariance": self.wick_variance,
            "passed": self.passed, "observables": self.observables,
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def invariance_test(spec: GibbsSpec, ensemble: Ensemble, T: float, dt: float, noise: NoiseStream,
                    observables: Optional[dict] = None, level: float = 0.01,
                    nonlinear: bool = True, dynamics_variance: Optional[float] = None,
                    batch: int = 4096, threads: int = 1) -> InvarianceReport:
    """Evolve the ensemble for time ``T`` and KS-test every observable between t=0 and t=T.

    ``dynamics_variance`` overrides the Wick parameter inside the dynamics
    only (a deliberately wrong value is a power control).
    """
    if T < 0 or dt <= 0:
        raise ValueError("need T >= 0 and dt > 0")
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("dt must divide T")
    lattice = ensemble.lattice
    integ = TruncatedSdNLW(lattice, spec.N, spec.k, dt,
                           wick_variance=spec.alpha_N if dynamics_variance is None else dynamics_variance,
                           nonlinear=nonlinear)
    stream = noise.substream("invariance")
    M = len(ensemble)

    def run(first):
        sl = slice(first, min(M, first + batch))
        return integ.run(ensemble.positions[sl], ensemble.velocities[sl], stream, steps, first)

    parts = ordered_map(run, range(0, M, batch), threads)
    P1 = np.concatenate([p for p, _ in parts])
    V1 = np.concatenate([v for _, v in parts])
    observables = observables or default_observables(spec, lattice)
    corrected = level / len(observables)
    rows = []
    for name, fn in observables.items():
        a = fn(ensemble.positions, ensemble.velocities)
        b = fn(P1, V1)
        res = stats.ks_2samp(a, b)
        rows.append({"observable": name, "ks": float(res.statistic), "pValue": float(res.pvalue),
                     "threshold": corrected, "rejected": bool(res.pvalue < corrected)})
    return InvarianceReport(rows, M, float(T), float(dt), int(noise.seed), level, nonlinear,
                            float(integ.alpha))


# ---------------------------------------------------------------------------
# convergence of the densities


def mc_convergence_rn(k: int, Nlist: Sequence[float], M: int, noise: NoiseStream,
                      batch: int = 1024) -> list[dict]:
    """Coupled estimates of ``E|R_N' - R_N|^p`` (p = 1, 2) for successive cutoffs.

    All cutoffs are evaluated on the same prior draws on the lattice of the
    largest cutoff, so ``P_N u`` is a projection of one common field.
    """
    Nlist = [float(n) for n in Nlist]
    if any(b < a for a, b in zip(Nlist, Nlist[1:])):
        raise ValueError("Nlist must be non-decreasing")
    if M <= 0:
        raise ValueError("M must be positive")
    lattice = LatticeSpec(max(1, int(math.floor(max(Nlist)))))
    specs = [GibbsSpec(N, k) for N in Nlist]
    G = lattice.dealias_size(k + 1)
    masks = [lattice.disc_mask(N) for N in Nlist]
    stream = noise.substream("rn-convergence")
    full = ModeSet.build(lattice, None)
    logR = np.empty((len(Nlist), M))
    for first in range(0, M, batch):
        n = min(batch, M - first)
        pos, _ = mu1_modes(full, stream, first, n)
        c = full.to_coeffs(pos)
        for i, (sp, mk) in enumerate(zip(specs, masks)):
            g = coeffs_to_grid(c * mk, G)
            logR[i, first:first + n] = -np.mean(hermite(k + 1, g, sp.alpha_N), axis=(-2, -1)) / (k + 1)
    R = np.exp(logR)
    out = []
    for i in range(len(Nlist)):
        row = {"N": Nlist[i], "meanR": float(R[i].mean()), "minR": float(R[i].min())}
        if i > 0:
            d = np.abs(R[i] - R[i - 1])
            row.update({
                "diffL1": float(d.mean()), "diffL1SE": float(d.std(ddof=1) / math.sqrt(M)),
                "diffL2": float(np.sqrt(np.mean(d ** 2))),
                "diffL2sqSE": float((d ** 2).std(ddof=1) / math.sqrt(M)),
            })
        out.append(row)
    return out
