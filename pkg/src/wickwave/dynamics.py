"""Deterministic time integration of the shifted (damped) wave equations.

The v-equation is ``v'' + gamma v' + (1 - Lap) v + sum_l C(k,l) Xi_l v^(k-l) = 0``
with ``Xi_0 = 1``. The linear part is always advanced by its exact Fourier
flow; nonlinear products are evaluated on a padded grid and projected back
to the lattice without aliasing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import simpson

from .noise import NoiseStream
from .stochastic import (ModeSet, WickPowerSeries, alpha_n, chol2, hermite,
                         oscillator_response, transition_covariance,
                         transition_matrix)
from .torus import (FieldPair, LatticeSpec, SpectralField, coeffs_to_grid,
                    grid_to_coeffs, hs_norm_coeffs)

DEFAULT_EPS = 0.1


class NoContractionError(RuntimeError):
    """Picard iteration stopped without contracting; the window is too long."""

    def __init__(self, ratio: float, iterations: int):
        super().__init__(
            f"no-contraction: ratio {ratio:.3g} after {iterations} iterations; halve T"
        )
        self.ratio = ratio
        self.iterations = iterations


class BlowupError(RuntimeError):
    """The working norm exceeded the configured ceiling."""

    def __init__(self, t: float, norm: float, ceiling: float, last_good=None):
        super().__init__(
            f"blowup guard: ||v||_H^(1-eps) = {norm:.4g} exceeds {ceiling:.4g} at t = {t:.6g}"
        )
        self.t = t
        self.norm = norm
        self.ceiling = ceiling
        self.last_good = last_good


def check_eps(eps: float, k: int) -> None:
    """Reject working-norm exponents outside ``0 <= eps < 1/(2(k-1))``."""
    bound = 1.0 / (2 * (k - 1))
    if not 0 <= eps < bound:
        raise ValueError(f"eps = {eps} violates 0 <= eps < 1/(2(k-1)) = {bound:.4g} for k = {k}")


# ---------------------------------------------------------------------------
# propagators


def propagator_s(t: float) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Symbol of ``S(t) = sin(t<nabla>)/<nabla>``."""

    def m(n1, n2):
        w = np.sqrt(1.0 + np.asarray(n1) ** 2 + np.asarray(n2) ** 2)
        return np.sin(t * w) / w

    return m


def propagator_d(t: float) -> tuple[Callable, Callable]:
    """Symbols of the damped propagator ``D(t)`` and of ``dD/dt``.

    ``D(t) = e^{-t/2} sin(t sqrt(3/4 + |n|^2)) / sqrt(3/4 + |n|^2)``.
    """
    if t < 0:
        raise ValueError("the damped propagator is only defined for t >= 0")

    def d(n1, n2):
        return oscillator_response(1.0 + np.asarray(n1) ** 2 + np.asarray(n2) ** 2, 1.0, t)[0]

    def dd(n1, n2):
        return oscillator_response(1.0 + np.asarray(n1) ** 2 + np.asarray(n2) ** 2, 1.0, t)[1]

    return d, dd


def _gamma(damped: bool) -> float:
    return 1.0 if damped else 0.0


def linear_flow_coeffs(pos, vel, lattice: LatticeSpec, t: float, damped: bool):
    """Exact homogeneous flow of coefficient arrays over time ``t``."""
    P = transition_matrix(lattice.norm_sq() + 1.0, _gamma(damped), t)
    return (P[..., 0, 0] * pos + P[..., 0, 1] * vel,
            P[..., 1, 0] * pos + P[..., 1, 1] * vel)


def linear_flow(state: FieldPair, t: float, damped: bool = False) -> FieldPair:
    p, v = linear_flow_coeffs(state.position.coeffs, state.velocity.coeffs, state.lattice, t, damped)
    return FieldPair.from_arrays(state.lattice, p, v)


def linear_energy(state: FieldPair) -> float:
    """``1/2 sum <n>^2 |u_n|^2 + 1/2 sum |v_n|^2``."""
    w2 = state.lattice.norm_sq() + 1.0
    return float(0.5 * np.sum(w2 * np.abs(state.position.coeffs) ** 2)
                 + 0.5 * np.sum(np.abs(state.velocity.coeffs) ** 2))


# ---------------------------------------------------------------------------
# nonlinearity


def nonlinear_term(pos: np.ndarray, xi_grid: Optional[np.ndarray], k: int, grid_size: int,
                   mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Lattice coefficients of ``sum_l C(k,l) Xi_l v^(k-l)`` (``Xi_0 = 1``).

    ``pos`` has shape ``(..., 2K+1, 2K+1)``; ``xi_grid`` (if given) holds
    ``Xi_1..Xi_k`` as grid values of shape ``(..., k, G, G)``.
    """
    K = (pos.shape[-1] - 1) // 2
    if grid_size <= (k + 1) * K:
        raise ValueError(f"grid of {grid_size} points aliases degree-{k} products on K={K}")
    v = coeffs_to_grid(pos, grid_size)
    powers = [np.ones_like(v), v]
    for _ in range(2, k + 1):
        powers.append(powers[-1] * v)
    total = powers[k].copy()
    if xi_grid is not None:
        for l in range(1, k + 1):
            total += math.comb(k, l) * xi_grid[..., l - 1, :, :] * powers[k - l]
    c = grid_to_coeffs(total, K)
    if mask is not None:
        c = c * mask
    return c


def working_norm(pos: np.ndarray, lattice: LatticeSpec, eps: float = DEFAULT_EPS):
    """``H^(1-eps)`` norm used as the solver surrogate norm."""
    return hs_norm_coeffs(pos, 1.0 - eps, lattice)


# ---------------------------------------------------------------------------
# enhanced data and Picard iteration


@dataclass(frozen=True, eq=False)
class EnhancedDataSet:
    """Initial data plus the Wick forcings ``Xi_1..Xi_k`` on a common time grid.

    ``xi`` holds grid values of shape ``(len(times), k, G, G)``; ``Xi_0 = 1``
    is implicit.
    """

    v0: SpectralField
    v1: SpectralField
    times: np.ndarray
    xi: np.ndarray = field(repr=False)
    k: int
    grid_size: int
    sNorm: float = float("nan")

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.v0.lattice != self.v1.lattice:
            raise ValueError("v0 and v1 must share a lattice")
        if self.xi.shape[:2] != (len(self.times), self.k):
            raise ValueError("xi must have shape (len(times), k, G, G)")
        if not self.lattice.can_dealias(self.k, self.grid_size):
            raise ValueError("grid too small to dealias the nonlinearity")
        if math.isnan(self.sNorm):
            object.__setattr__(self, "sNorm", self._size())

    @property
    def lattice(self) -> LatticeSpec:
        return self.v0.lattice

    @classmethod
    def from_wick(cls, series: WickPowerSeries, v0: SpectralField, v1: SpectralField,
                  k: Optional[int] = None) -> "EnhancedDataSet":
        k = k or series.maxDegree
        if k > series.maxDegree:
            raise ValueError("Wick series has too few degrees")
        return cls(v0, v1, np.asarray(series.times), series.values[:, :k], k, series.grid_size)

    @classmethod
    def from_coefficients(cls, v0: SpectralField, v1: SpectralField, times, xi_coeffs: np.ndarray,
                          k: int, grid_size: Optional[int] = None) -> "EnhancedDataSet":
        lat = v0.lattice
        G = grid_size or lat.dealias_size(k)
        return cls(v0, v1, np.asarray(times, dtype=float), coeffs_to_grid(xi_coeffs, G), k, G)

    @classmethod
    def zero(cls, lattice: LatticeSpec, times, k: int) -> "EnhancedDataSet":
        G = lattice.dealias_size(k)
        z = SpectralField.zeros(lattice)
        return cls(z, z, np.asarray(times, dtype=float), np.zeros((len(times), k, G, G)), k, G)

    def _size(self, eps: float = DEFAULT_EPS) -> float:
        """``||(v0, v1)||_{H^(1-eps) x H^(-eps)} + sum_l ||Xi_l||_{L^2_t W^(-eps,inf)}`` surrogate."""
        lat = self.lattice
        data = float(np.sqrt(working_norm(self.v0.coeffs, lat, eps) ** 2
                             + hs_norm_coeffs(self.v1.coeffs, -eps, lat) ** 2))
        if len(self.times) < 2:
            return data
        w = lat.bessel() ** (-eps)
        c = grid_to_coeffs(self.xi, lat.K) * w
        sup = np.max(np.abs(coeffs_to_grid(c, lat.gridSize)), axis=(-2, -1))
        l2 = np.sqrt(np.trapezoid(sup ** 2, self.times, axis=0))
        return data + float(np.sum(l2))


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    T: float
    fixedPointTol: float = 1e-10
    maxPicardIters: int = 60
    dealias: bool = True
    eps: float = DEFAULT_EPS
    ceiling: float = 1e8

    def __post_init__(self):
        if not (self.dt > 0 and self.T > 0 and self.fixedPointTol > 0):
            raise ValueError("dt, T and fixedPointTol must be positive")
        if self.maxPicardIters < 1:
            raise ValueError("maxPicardIters must be >= 1")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError("dt must divide T")
        if not self.dealias:
            raise ValueError("only dealiased products are supported")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    def nodes(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt


@dataclass(frozen=True, eq=False)
class PicardResult:
    times: np.ndarray
    positions: np.ndarray = field(repr=False)
    velocities: np.ndarray = field(repr=False)
    iterations: int
    differences: list
    ratios: list
    converged: bool

    @property
    def contraction(self) -> float:
        """First observed ratio of successive iterate differences."""
        return self.ratios[0] if self.ratios else 0.0

    def state(self, j: int, lattice: LatticeSpec) -> FieldPair:
        return FieldPair.from_arrays(lattice, self.positions[j], self.velocities[j])


def _node_indices(data_times: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(data_times, nodes - 1e-12)
    idx = np.clip(idx, 0, len(data_times) - 1)
    if not np.allclose(data_times[idx], nodes, rtol=0, atol=1e-9):
        raise ValueError("forcing is not sampled at every solver node (dt must divide the sampling)")
    return idx


def _simpson_weights(n: int, dt: float) -> np.ndarray:
    """Row ``j`` holds composite-Simpson weights for integrating over nodes ``0..j``."""
    W = np.zeros((n + 1, n + 1))
    for j in range(1, n + 1):
        W[j, :j + 1] = simpson(np.eye(j + 1), dx=dt, axis=0)
    return W


def picard_solve(data: EnhancedDataSet, damped: bool, cfg: SolverConfig,
                 initial: str = "zero") -> PicardResult:
    """Fixed point of the Duhamel map by Picard iteration.

    ``v(t) = [linear flow of (v0, v1)](t) - sum_l C(k,l) int_0^t D(t-t') Xi_l v^(k-l) dt'``
    with the integral evaluated by composite Simpson on the solver nodes.
    Iteration stops once successive iterates differ by less than
    ``fixedPointTol`` in ``C_T H^(1-eps)``.
    """
    check_eps(cfg.eps, data.k)
    lat = data.lattice
    nodes = cfg.nodes()
    n = cfg.steps
    xi = data.xi[_node_indices(np.asarray(data.times), nodes)]
    w2 = lat.norm_sq() + 1.0
    gamma = _gamma(damped)

    P = transition_matrix(w2, gamma, nodes[:, None, None])
    lin_p = P[..., 0, 0] * data.v0.coeffs + P[..., 0, 1] * data.v1.coeffs
    lin_v = P[..., 1, 0] * data.v0.coeffs + P[..., 1, 1] * data.v1.coeffs
    lag = nodes[:, None] - nodes[None, :]
    D, dD = oscillator_response(w2, gamma, np.maximum(lag, 0.0)[..., None, None])
    W = _simpson_weights(n, cfg.dt)
    KD = W[..., None, None] * D
    KdD = W[..., None, None] * dD

    if initial == "zero":
        cur = np.zeros_like(lin_p)
    elif initial == "linear":
        cur = lin_p.copy()
    else:
        raise ValueError(f"unknown initial iterate {initial!r}")

    diffs, ratios = [], []
    converged = False
    it = 0
    vel = lin_v
    while it < cfg.maxPicardIters:
        with np.errstate(over="ignore", invalid="ignore"):
            # divergence is reported as NoContractionError below
            F = nonlinear_term(cur, xi, data.k, data.grid_size)
        new = lin_p - np.einsum("jiab,iab->jab", KD, F)
        vel = lin_v - np.einsum("jiab,iab->jab", KdD, F)
        it += 1
        d = float(np.max(working_norm(new - cur, lat, cfg.eps)))
        if diffs and diffs[-1] > 0:
            ratios.append(d / diffs[-1])
        diffs.append(d)
        cur = new
        if not np.all(np.isfinite(cur)):
            raise NoContractionError(float("inf"), it)
        if d < cfg.fixedPointTol:
            converged = True
            break
    if not converged and ratios and ratios[-1] >= 1:
        raise NoContractionError(ratios[-1], it)
    return PicardResult(nodes, cur, vel, it, diffs, ratios, converged)


# ---------------------------------------------------------------------------
# long-time Strang stepper


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States at step ends plus the midpoint forcing used on each step."""

    lattice: LatticeSpec
    times: np.ndarray
    positions: np.ndarray = field(repr=False)
    velocities: np.ndarray = field(repr=False)
    forcing: Optional[np.ndarray] = field(repr=False)
    k: int
    damped: bool
    grid_size: int

    def state(self, j: int) -> FieldPair:
        return FieldPair.from_arrays(self.lattice, self.positions[j], self.velocities[j])

    def __len__(self) -> int:
        return len(self.times)


def _strang(pos, vel, xi_mid, k, dt, damped, lattice, grid_size, mask=None):
    half = 0.5 * dt
    vel = vel - half * nonlinear_term(pos, xi_mid, k, grid_size, mask)
    pos, vel = linear_flow_coeffs(pos, vel, lattice, dt, damped)
    vel = vel - half * nonlinear_term(pos, xi_mid, k, grid_size, mask)
    return pos, vel


def step_v_equation(state: FieldPair, wick: Optional[np.ndarray], damped: bool, dt: float,
                    k: int = 3, grid_size: Optional[int] = None, eps: float = DEFAULT_EPS,
                    ceiling: Optional[float] = None, t: float = 0.0) -> FieldPair:
    """One Strang step: half nonlinear kick, exact linear flow, half kick.

    ``wick`` holds ``Xi_1..Xi_k`` at the step midpoint as grid values
    ``(k, G, G)`` (``None`` for no forcing).
    """
    lat = state.lattice
    G = grid_size or (wick.shape[-1] if wick is not None else lat.dealias_size(k))
    p, v = _strang(state.position.coeffs, state.velocity.coeffs, wick, k, dt, damped, lat, G)
    if ceiling is not None:
        nrm = float(working_norm(p, lat, eps))
        if not np.isfinite(nrm) or nrm > ceiling:
            raise BlowupError(t + dt, nrm, ceiling, last_good=state)
    return FieldPair.from_arrays(lat, p, v)


def integrate_v(v0: SpectralField, v1: SpectralField, dt: float, steps: int, damped: bool,
                k: int = 3, wick: Optional[WickPowerSeries] = None, eps: float = DEFAULT_EPS,
                ceiling: float = 1e8, t0_index: int = 0) -> Trajectory:
    """Run ``steps`` Strang steps of size ``dt``.

    ``wick`` must be sampled on a grid of spacing ``dt/2`` so that the
    midpoint of step ``j`` is sample ``t0_index + 2j + 1``.
    """
    lat = v0.lattice
    G = wick.grid_size if wick is not None else lat.dealias_size(k)
    if wick is not None:
        if wick.maxDegree < k:
            raise ValueError("Wick series has too few degrees")
        needed = t0_index + 2 * steps
        if len(wick.times) <= needed:
            raise ValueError("Wick series too short for the requested steps")
        mids = wick.times[t0_index + 1:needed:2]
        expected = wick.times[t0_index] + dt * (np.arange(steps) + 0.5)
        if not np.allclose(mids, expected, atol=1e-9):
            raise ValueError("Wick series must be sampled with spacing dt/2")
        forcing = wick.values[t0_index + 1:needed:2, :k]
    else:
        forcing = None
    P = np.empty((steps + 1,) + lat.shape, dtype=complex)
    V = np.empty_like(P)
    P[0], V[0] = v0.coeffs, v1.coeffs
    p, v = P[0], V[0]
    for j in range(steps):
        xm = forcing[j] if forcing is not None else None
        p, v = _strang(p, v, xm, k, dt, damped, lat, G)
        nrm = float(working_norm(p, lat, eps))
        if not np.isfinite(nrm) or nrm > ceiling:
            raise BlowupError((j + 1) * dt, nrm, ceiling,
                              last_good=FieldPair.from_arrays(lat, P[j], V[j]))
        P[j + 1], V[j + 1] = p, v
    times = dt * np.arange(steps + 1)
    if wick is not None:
        times = times + wick.times[t0_index]
    return Trajectory(lat, times, P, V, forcing, k, damped, G)


# ---------------------------------------------------------------------------
# truncated damped dynamics: Hamiltonian + Ornstein-Uhlenbeck splitting


class TruncatedSdNLW:
    """Splitting integrator for the renormalized truncated damped equation.

    Low modes ``|n| <= N``: half OU step on the velocity, a kick-oscillate-kick
    step of the truncated Hamiltonian flow, half OU step. High modes evolve by
    the exact linear damped stochastic flow. States are coefficient arrays
    ``(M, 2K+1, 2K+1)`` so whole ensembles advance together.
    """

    def __init__(self, lattice: LatticeSpec, N: float, k: int, dt: float,
                 wick_variance: Optional[float] = None, nonlinear: bool = True,
                 ceiling: float = 1e8):
        if k < 1 or k % 2 == 0:
            raise ValueError("k must be odd (defocusing)")
        self.lattice = lattice
        self.N = float(N)
        self.k = k
        self.dt = float(dt)
        self.alpha = alpha_n(N) if wick_variance is None else float(wick_variance)
        self.nonlinear = nonlinear
        self.ceiling = ceiling
        self.modes = ModeSet.build(lattice, None)
        self.low = lattice.disc_mask(N)
        self.grid_size = lattice.dealias_size(k)
        w2 = lattice.norm_sq() + 1.0
        self.rot = transition_matrix(w2, 0.0, self.dt)
        self.high_P = transition_matrix(w2, 1.0, self.dt)
        self.high_L = chol2(2.0 * transition_covariance(w2, 1.0, self.dt))
        self.ou_decay = math.exp(-0.5 * self.dt)
        self.ou_sd = math.sqrt(-math.expm1(-self.dt))

    def force(self, pos: np.ndarray) -> np.ndarray:
        """``P_N(:(P_N u)^k:)`` with Wick variance ``alpha``."""
        if not self.nonlinear:
            return np.zeros_like(pos)
        u = coeffs_to_grid(pos * self.low, self.grid_size)
        c = grid_to_coeffs(hermite(self.k, u, self.alpha), self.lattice.K)
        return c * self.low

    def potential(self, pos: np.ndarray) -> np.ndarray:
        """``1/(k+1) int H_{k+1}(P_N u; alpha) dx`` (batched)."""
        G = self.lattice.dealias_size(self.k + 1)
        u = coeffs_to_grid(pos * self.low, G)
        return np.mean(hermite(self.k + 1, u, self.alpha), axis=(-2, -1)) / (self.k + 1)

    def hamiltonian(self, pos: np.ndarray, vel: np.ndarray) -> np.ndarray:
        w2 = self.lattice.norm_sq() + 1.0
        quad = 0.5 * np.sum(self.low * (w2 * np.abs(pos) ** 2 + np.abs(vel) ** 2), axis=(-2, -1))
        return quad + (self.potential(pos) if self.nonlinear else 0.0)

    def hamiltonian_step(self, pos: np.ndarray, vel: np.ndarray):
        """Kick-oscillate-kick on the low modes (high modes untouched)."""
        half = 0.5 * self.dt
        low = self.low
        vel = vel - half * self.force(pos)
        R = self.rot
        p = np.where(low, R[..., 0, 0] * pos + R[..., 0, 1] * vel, pos)
        v = np.where(low, R[..., 1, 0] * pos + R[..., 1, 1] * vel, vel)
        v = v - half * self.force(p)
        return p, v

    def ou_half(self, vel: np.ndarray, noise: np.ndarray) -> np.ndarray:
        """Exact OU flow ``dv = -v dt + sqrt(2) dW`` over ``dt/2`` on the low modes."""
        return np.where(self.low, self.ou_decay * vel + self.ou_sd * noise, vel)

    def _hermitian(self, z: np.ndarray) -> np.ndarray:
        return self.modes.to_coeffs(self.modes.hermitian_normal(z))

    def step(self, pos: np.ndarray, vel: np.ndarray, noise: NoiseStream, step: int,
             first: int = 0):
        """One full step for members ``first..first+len(pos)`` (step counter ``step``)."""
        M = pos.shape[0]
        z = noise.block_normal(first, M, (4, self.modes.size, 2), "split", step)
        low = self.low
        # high modes: exact damped stochastic flow
        P, L = self.high_P, self.high_L
        z3, z4 = self._hermitian(z[:, 2]), self._hermitian(z[:, 3])
        hp = P[..., 0, 0] * pos + P[..., 0, 1] * vel + L[..., 0, 0] * z3
        hv = P[..., 1, 0] * pos + P[..., 1, 1] * vel + L[..., 1, 0] * z3 + L[..., 1, 1] * z4
        # low modes: OU half, Hamiltonian, OU half
        v = self.ou_half(vel, self._hermitian(z[:, 0]))
        p, v = self.hamiltonian_step(pos, v)
        v = self.ou_half(v, self._hermitian(z[:, 1]))
        p = np.where(low, p, hp)
        v = np.where(low, v, hv)
        if self.ceiling is not None:
            nrm = hs_norm_coeffs(p, 1.0 - DEFAULT_EPS, self.lattice)
            if not np.all(np.isfinite(nrm)) or np.max(nrm) > self.ceiling:
                raise BlowupError(float("nan"), float(np.max(nrm)), self.ceiling)
        return p, v

    def run(self, pos: np.ndarray, vel: np.ndarray, noise: NoiseStream, steps: int,
            first: int = 0, start_step: int = 0):
        for j in range(steps):
            pos, vel = self.step(pos, vel, noise, start_step + j, first)
        return pos, vel


def split_step_truncated_sdnlw(state: FieldPair, N: float, k: int, dt: float, noise: NoiseStream,
                               step: int = 0, member: int = 0, **kw) -> FieldPair:
    """One Strang step of the truncated renormalized damped equation for a single state."""
    integ = TruncatedSdNLW(state.lattice, N, k, dt, **kw)
    p, v = integ.step(state.position.coeffs[None], state.velocity.coeffs[None], noise, step, member)
    return FieldPair.from_arrays(state.lattice, p[0], v[0])
