"""Modified-energy monitoring for the I-method.

For the v-equation with forcing ``sum_l C(k,l) Xi_l v^(k-l)`` the energy of
``Iv`` obeys, on the lattice,

    dE/dt = -gamma ||d_t Iv||^2 + <d_t Iv, (Iv)^k - I(v^k)>
            - sum_{l>=1} C(k,l) <d_t Iv, I(Xi_l v^(k-l))>

and the increments ``A1 .. A(k+1)`` below are the time integrals of these
terms. All spatial integrals use the normalized measure on the torus.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .dynamics import Trajectory
from .ioperator import IOperatorSpec
from .stochastic import StochasticConvolutionPath, WickPowerSeries
from .torus import (FieldPair, LatticeSpec, SpectralField, coeffs_to_grid, embed_coeffs,
                    grid_to_coeffs)

CSV_COLUMNS = ("t", "E", "E_quad", "E_kin", "E_quartic", "A1", "A2", "A3", "A4", "Nk", "stage")


@dataclass(frozen=True)
class EnergyReport:
    t: float
    E: float
    quad: float
    kin: float
    quartic: float
    increments: tuple = (0.0, 0.0, 0.0, 0.0)
    Nk: float = float("nan")
    stage: int = 0

    def row(self) -> list:
        inc = list(self.increments[:4]) + [0.0] * (4 - len(self.increments[:4]))
        return [self.t, self.E, self.quad, self.kin, self.quartic, *inc, self.Nk, self.stage]


def _inner(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Normalized ``L^2`` pairing of real fields given by coefficients (batched)."""
    return np.real(np.sum(a * np.conj(b), axis=(-2, -1)))


def _energy_parts(pos, vel, m, lattice: LatticeSpec, k: int):
    Ip, Iv = m * pos, m * vel
    w2 = lattice.norm_sq() + 1.0
    quad = 0.5 * np.sum(w2 * np.abs(Ip) ** 2, axis=(-2, -1))
    kin = 0.5 * np.sum(np.abs(Iv) ** 2, axis=(-2, -1))
    G = lattice.dealias_size(k + 1)
    quartic = np.mean(coeffs_to_grid(Ip, G) ** (k + 1), axis=(-2, -1)) / (k + 1)
    return quad, kin, quartic


def modified_energy(v: FieldPair, spec: Optional[IOperatorSpec], k: int = 3, t: float = 0.0) -> EnergyReport:
    """``1/2 int (Iv)^2 + |grad Iv|^2 + 1/2 int (d_t Iv)^2 + 1/(k+1) int (Iv)^(k+1)``.

    ``spec=None`` means ``I`` is the identity.
    """
    if k % 2 == 0:
        raise ValueError("k must be odd so that the potential term is non-negative")
    lat = v.lattice
    m = spec.on_lattice(lat) if spec is not None else 1.0
    quad, kin, quartic = _energy_parts(v.position.coeffs, v.velocity.coeffs, m, lat, k)
    quad, kin, quartic = float(quad), float(kin), float(quartic)
    return EnergyReport(t, quad + kin + quartic, quad, kin, quartic,
                        Nk=spec.N if spec is not None else float("inf"))


# ---------------------------------------------------------------------------
# increments


@dataclass(frozen=True, eq=False)
class EnergyBudget:
    """Energies at every node and per-step increments.

    ``increments[j]`` holds ``(A1, A2, ..., A(k+1))`` over ``[t_j, t_(j+1)]``
    and ``dissipation[j]`` the damping contribution over the same step.
    """

    times: np.ndarray
    energies: np.ndarray
    parts: np.ndarray = field(repr=False)
    increments: np.ndarray = field(repr=False)
    dissipation: np.ndarray = field(repr=False)

    def total(self, i: int = 0, j: Optional[int] = None) -> np.ndarray:
        j = len(self.times) - 1 if j is None else j
        return self.increments[i:j].sum(axis=0)

    def defect(self, i: int = 0, j: Optional[int] = None) -> float:
        """``E(t_j) - E(t_i) - (sum of increments + dissipation)``."""
        j = len(self.times) - 1 if j is None else j
        change = self.energies[j] - self.energies[i]
        return float(change - self.increments[i:j].sum() - self.dissipation[i:j].sum())

    def reports(self, Nk: float = float("nan"), stage: int = 0) -> list[EnergyReport]:
        out = []
        for j, t in enumerate(self.times):
            inc = tuple(self.increments[j - 1]) if j > 0 else (0.0,) * self.increments.shape[1]
            q, kn, qt = self.parts[j]
            out.append(EnergyReport(float(t), float(self.energies[j]), float(q), float(kn), float(qt),
                                    tuple(float(x) for x in inc), Nk, stage))
        return out


def _forcing_at_nodes(traj: Trajectory, wick: Optional[WickPowerSeries]) -> Optional[np.ndarray]:
    if wick is None:
        return None
    if wick.grid_size != traj.grid_size:
        raise ValueError("Wick series and trajectory must share the product grid")
    wt = np.asarray(wick.times)
    idx = np.clip(np.searchsorted(wt, traj.times - 1e-12), 0, len(wt) - 1)
    if not np.allclose(wt[idx], traj.times, atol=1e-9):
        raise ValueError("Wick series is not sampled at the trajectory nodes")
    return wick.values[idx, :traj.k]


def energy_increments(traj: Trajectory, wick: Optional[WickPowerSeries],
                      spec: Optional[IOperatorSpec]) -> EnergyBudget:
    """Energies and trapezoidal increments along a trajectory."""
    lat = traj.lattice
    k = traj.k
    m = spec.on_lattice(lat) if spec is not None else np.ones(lat.shape)
    G = traj.grid_size
    pos, vel = traj.positions, traj.velocities
    xi = _forcing_at_nodes(traj, wick)

    dIv = m * vel
    v = coeffs_to_grid(pos, G)
    Ivg = coeffs_to_grid(m * pos, G)
    comm = grid_to_coeffs(Ivg ** k, lat.K) - m * grid_to_coeffs(v ** k, lat.K)
    dens = [_inner(dIv, comm)]
    for l in range(1, k + 1):
        if xi is None:
            dens.append(np.zeros(len(traj.times)))
            continue
        term = grid_to_coeffs(xi[:, l - 1] * v ** (k - l), lat.K)
        dens.append(-math.comb(k, l) * _inner(dIv, m * term))
    dens = np.stack(dens, axis=-1)
    gamma = 1.0 if traj.damped else 0.0
    diss = -gamma * np.sum(np.abs(dIv) ** 2, axis=(-2, -1))

    h = np.diff(traj.times)
    inc = 0.5 * h[:, None] * (dens[1:] + dens[:-1])
    dinc = 0.5 * h * (diss[1:] + diss[:-1])
    quad, kin, quartic = _energy_parts(pos, vel, m, lat, k)
    parts = np.stack([quad, kin, quartic], axis=-1)
    return EnergyBudget(np.asarray(traj.times), parts.sum(axis=-1), parts, inc, dinc)


# ---------------------------------------------------------------------------
# commutator


def commutator_defect(f: SpectralField, k: int, spec: IOperatorSpec) -> float:
    """``||(If)^k - I(f^k)||_L2`` with every product resolved exactly."""
    if k not in (1, 2, 3):
        raise ValueError("k must be 1, 2 or 3")
    if k == 1:
        return 0.0
    K = f.lattice.K
    big = LatticeSpec(k * K)
    m = spec.on_lattice(big)
    c = embed_coeffs(f.coeffs, big.K)
    G = big.gridSize
    # f^k is band-limited to k times the support radius of f; masking removes FFT roundoff there
    nz = np.abs(c) > 0
    radius = math.sqrt(float(big.norm_sq()[nz].max())) if nz.any() else 0.0
    band = big.norm_sq() <= (k * radius) ** 2 + 1e-9
    fk = band * grid_to_coeffs(coeffs_to_grid(c, G) ** k, big.K)
    Ifk = band * grid_to_coeffs(coeffs_to_grid(m * c, G) ** k, big.K)
    return float(np.sqrt(np.sum(np.abs(Ifk - m * fk) ** 2)))


def random_field(lattice: LatticeSpec, rng: np.random.Generator, decay: float) -> SpectralField:
    """Gaussian field with coefficients ``g_n <n>^(-decay)``."""
    z = rng.standard_normal(lattice.shape) + 1j * rng.standard_normal(lattice.shape)
    return SpectralField(lattice, _sym(z * lattice.bessel() ** (-decay)))


def _sym(c: np.ndarray) -> np.ndarray:
    return 0.5 * (c + np.conj(c[::-1, ::-1]))


def normalize_h1(f: SpectralField, spec: IOperatorSpec) -> SpectralField:
    """Rescale so that ``||I f||_H1 = 1``."""
    lat = f.lattice
    n = math.sqrt(float(np.sum(lat.bessel() ** 2 * np.abs(spec.on_lattice(lat) * f.coeffs) ** 2)))
    if n == 0:
        raise ValueError("cannot normalize the zero field")
    return f * (1.0 / n)


# ---------------------------------------------------------------------------
# cutoff schedule


def check_exponents(s: float, alpha: float, beta: float) -> None:
    """Require ``2(1-s) < beta < alpha <= 1 - 3(1-s)`` (which forces ``s > 4/5``)."""
    lo, hi = 2 * (1 - s), 1 - 3 * (1 - s)
    if not (lo < beta < alpha <= hi + 1e-15):
        raise ValueError(
            f"need 2(1-s) < beta < alpha <= 1-3(1-s): got {lo:.4g} < {beta} < {alpha} <= {hi:.4g} (s = {s})"
        )


def z3_margin(log_nk: float, sigma: float, s: float, alpha: float, beta: float) -> float:
    """``beta log N_(k+1) - log(N_(k+1)^(2(1-s)) N_k^alpha + N_k^(2 alpha))``; positive means (Z3) holds."""
    log_next = sigma * log_nk
    return beta * log_next - float(np.logaddexp(2 * (1 - s) * log_next + alpha * log_nk,
                                                2 * alpha * log_nk))


@dataclass(frozen=True)
class ScheduleState:
    """Stage ``k`` of the cutoff schedule ``N_k = N0^(sigma^k)`` held in log form."""

    N0: float
    sigmaGrowth: float
    s: float
    alpha: float
    beta: float
    tau: float = 1.0
    k: int = 0
    violations: int = 0

    def __post_init__(self):
        if not self.N0 > 1:
            raise ValueError("N0 must exceed 1")
        if not self.sigmaGrowth > 1:
            raise ValueError("sigmaGrowth must exceed 1")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        check_exponents(self.s, self.alpha, self.beta)

    @property
    def log_N(self) -> float:
        return math.log(self.N0) * self.sigmaGrowth ** self.k

    @property
    def N(self) -> float:
        L = self.log_N
        return math.exp(L) if L < 700 else float("inf")

    def energy_bound_log(self) -> float:
        return self.alpha * self.log_N

    def z3(self) -> float:
        return z3_margin(self.log_N, self.sigmaGrowth, self.s, self.alpha, self.beta)

    def i_operator(self, profile: str = "smoothstep") -> IOperatorSpec:
        return IOperatorSpec(self.N, self.s, profile)


def stage_length(T: float, c_tau: float = 1.0) -> float:
    """``tau = min(1, c_tau / T)``."""
    return min(1.0, c_tau / T)


def advance_schedule(state: ScheduleState, energyAtStageEnd: float) -> tuple[ScheduleState, list[dict]]:
    """Close stage ``k`` and open stage ``k+1``.

    Returns the new state and the diagnostic events raised: a
    ``schedule-violation`` when ``E > N_k^alpha`` and a ``z3-violation`` when
    the growth condition fails for the transition.
    """
    events = []
    bound = state.energy_bound_log()
    logE = math.log(energyAtStageEnd) if energyAtStageEnd > 0 else -math.inf
    ok = logE <= bound
    base = {"stage": state.k, "logN": state.log_N, "logE": logE, "logBound": bound}
    if not ok:
        events.append({"event": "schedule-violation", **base})
    margin = state.z3()
    if margin <= 0:
        events.append({"event": "z3-violation", **base, "margin": margin})
    new = replace(state, k=state.k + 1, violations=state.violations + (0 if ok else 1))
    events.append({"event": "stage", "stage": new.k, "logN": new.log_N, "logBound": new.energy_bound_log(),
                   "energyOk": ok, "z3Margin": margin})
    return new, events


def initial_cutoff(v: FieldPair, s: float, beta: float, k: int = 3, start: float = 2.0,
                   max_doublings: int = 64, profile: str = "smoothstep") -> float:
    """Smallest ``N = start * 2^j`` with ``E(I_N v)(0) <= N^beta``."""
    N = float(start)
    for _ in range(max_doublings):
        E = modified_energy(v, IOperatorSpec(N, s, profile), k).E
        if E <= N ** beta:
            return N
        N *= 2.0
    raise RuntimeError("no admissible initial cutoff within the doubling budget")


def schedule_event_lines(events: Sequence[dict]) -> str:
    return "".join(json.dumps(e, sort_keys=True) + "\n" for e in events)


# ---------------------------------------------------------------------------
# growth envelope


@dataclass(frozen=True)
class GrowthFit:
    C: float
    c: float
    C_omega: float
    exceeded: bool
    residual: float


def _envelope(t, a, b, kappa):
    return a + b * np.exp(kappa * t ** 2)


def growth_diagnostics(times, norms, norm0: Optional[float] = None) -> GrowthFit:
    """Fit ``||v(t)|| <= C exp(c log(2 + ||v(0)||) e^(C_omega t^2))``.

    On the log scale the model is ``a + b exp(kappa t^2)``; for each
    ``kappa`` the pair ``(a, b)`` follows from linear least squares and
    ``kappa`` is found by a bounded scalar search. The intercept is then
    raised by the largest positive residual so the envelope bounds the data.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(norms, dtype=float)
    if t.size < 10:
        raise ValueError("insufficient-data: need at least 10 samples")
    if np.any(y <= 0):
        raise ValueError("norms must be positive")
    logy = np.log(y)
    L = math.log(2.0 + (y[0] if norm0 is None else norm0))
    if np.ptp(logy) <= 1e-12 * max(1.0, abs(logy).max()):
        return GrowthFit(float(y[0]), 0.0, 0.0, False, 0.0)

    def solve(kappa):
        X = np.stack([np.ones_like(t), np.exp(kappa * t ** 2)], axis=1)
        coef, *_ = np.linalg.lstsq(X, logy, rcond=None)
        r = logy - X @ coef
        return coef, float(r @ r)

    tmax = max(float(np.max(np.abs(t))), 1e-12)
    # kappa -> 0 trades a against b without bound, so keep it away from zero
    res = minimize_scalar(lambda q: solve(q)[1], bounds=(0.01 / tmax ** 2, 40.0 / tmax ** 2), method="bounded",
                          options={"xatol": 1e-12 / tmax ** 2, "maxiter": 500})
    kappa = float(res.x)
    (a, b), sse = solve(kappa)
    shift = max(0.0, float(np.max(logy - _envelope(t, a, b, kappa))))
    a += shift
    exceeded = bool(np.any(logy > _envelope(t, a, b, kappa) + 1e-12))
    return GrowthFit(math.exp(a), float(b / L), kappa, exceeded, math.sqrt(sse / t.size))


# ---------------------------------------------------------------------------
# truncated V / R diagnostics


def _neg_sobolev_lp(values: np.ndarray, lattice: LatticeSpec, order: float, p: float) -> np.ndarray:
    """``||<grad>^(-order) P_K f||_(L^p)`` for grid samples ``(..., G, G)``."""
    c = grid_to_coeffs(values, lattice.K) * lattice.bessel() ** (-order)
    g = coeffs_to_grid(c, lattice.gridSize)
    return np.mean(np.abs(g) ** p, axis=(-2, -1)) ** (1.0 / p)


def truncated_v(wick: WickPowerSeries, J: Optional[int] = None, theta: float = 10.0,
                sigma0: float = 0.05, gamma: float = 0.05, p: float = 16.0) -> float:
    """Truncated ``V`` from windows ``[j, j+1]``, ``j < J``, covered by the series."""
    if wick.maxDegree < 3:
        raise ValueError("need Wick powers up to degree 3")
    t = np.asarray(wick.times)
    lat = wick.base.lattice
    Jmax = int(math.floor(t[-1] + 1e-9))
    J = Jmax if J is None else min(J, Jmax)
    if J < 1:
        raise ValueError("series must cover at least one unit window")
    a = np.stack([_neg_sobolev_lp(wick.values[:, l - 1], lat, sigma0, p) for l in (1, 2)], axis=-1).max(-1)
    b = np.stack([_neg_sobolev_lp(wick.values[:, l - 1], lat, gamma, 4.0) for l in (2, 3)], axis=-1).max(-1)
    terms = []
    for j in range(J):
        w = (t >= j - 1e-12) & (t <= j + 1 + 1e-12)
        Vj = float(np.max(a[w]) + np.max(b[w]))
        terms.append(-theta * j + Vj ** (1.0 / 3.0))
    return float(np.logaddexp.reduce(terms) ** 3)


def truncated_r(path: StochasticConvolutionPath, cutoffs: Sequence[float], s: float,
                J: Optional[int] = None, theta: float = 10.0, profile: str = "smoothstep") -> float:
    """Truncated ``R``: finite sums over the cutoffs given and ``j = 1..J``."""
    if path.kind != "psi":
        raise ValueError("R is defined for the undamped convolution")
    t = np.asarray(path.times)
    Jmax = int(math.floor(t[-1] + 1e-9))
    J = Jmax if J is None else min(J, Jmax)
    lat = path.lattice
    total = 0.0
    for N in cutoffs:
        m = IOperatorSpec(N, s, profile).on_lattice(lat)
        g = np.mean(np.exp(np.abs(coeffs_to_grid(m * path.positions, lat.gridSize))), axis=(-2, -1))
        for j in range(1, J + 1):
            w = t <= j + 1e-12
            total += math.exp(-theta * j * math.log(N)) * float(np.trapezoid(g[w], t[w]))
    return total
