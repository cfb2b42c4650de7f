"""Stochastic convolutions, their variances, and Wick powers.

Each Fourier mode of the linear (damped) stochastic wave equation is a
two-dimensional linear SDE with constant coefficients, so it is advanced by
its exact Gaussian transition: ``X(t+h) = Phi(h) X(t) + eta`` with ``eta``
Gaussian of covariance ``q * Q(h)``. ``Phi`` and ``Q`` are closed forms.
Noise intensity ``q`` is 1 for the undamped convolution Psi and 2 for the
damped convolution Phi (forcing ``sqrt(2) xi``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterator

import numpy as np

from .ioperator import IOperatorSpec
from .noise import NoiseStream, ordered_map
from .torus import (FieldPair, LatticeSpec, SpectralField, coeffs_to_grid,
                    grid_to_coeffs)

CHOL_FLOOR = 1e-14
PSI, PHI = "psi", "phi"


# ---------------------------------------------------------------------------
# Hermite polynomials


def hermite(k: int, x, sigma):
    """``H_k(x; sigma)`` via ``H_{j+1} = x H_j - j sigma H_{j-1}``."""
    if k < 0:
        raise ValueError("degree must be non-negative")
    x = np.asarray(x, dtype=float)
    h_prev, h = np.ones_like(x), x.copy()
    if k == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    for j in range(1, k):
        h_prev, h = h, x * h - j * sigma * h_prev
    return h if h.ndim else float(h)


def hermite_all(kmax: int, x, sigma) -> list[np.ndarray]:
    """``[H_0, ..., H_kmax]`` evaluated at ``x``."""
    x = np.asarray(x, dtype=float)
    out = [np.ones_like(x)]
    if kmax >= 1:
        out.append(x.copy())
    for j in range(1, kmax):
        out.append(x * out[j] - j * sigma * out[j - 1])
    return out


# ---------------------------------------------------------------------------
# exact lattice sums


@lru_cache(maxsize=64)
def _disc_bessel_sq(N: float) -> np.ndarray:
    R = int(math.floor(N + 1e-9))
    r = np.arange(-R, R + 1)
    n1, n2 = np.meshgrid(r, r, indexing="ij")
    nsq = (n1 * n1 + n2 * n2).ravel()
    w2 = 1.0 + nsq[nsq <= N * N + 1e-9]
    w2.setflags(write=False)
    return w2


def disc_size(N: float) -> int:
    return int(_disc_bessel_sq(float(N)).size)


def sigma_n(N: float, t):
    """Variance of the truncated undamped stochastic convolution at time ``t``.

    ``sum_{|n| <= N} [ t / (2<n>^2) - sin(2 t <n>) / (4 <n>^3) ]``.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    w2 = _disc_bessel_sq(float(N))
    w = np.sqrt(w2)
    tt = t[..., None]
    val = np.sum(tt / (2 * w2) - np.sin(2 * tt * w) / (4 * w2 * w), axis=-1)
    return float(val) if val.ndim == 0 else val


def alpha_n(N: float) -> float:
    """``sum_{|n| <= N} <n>^{-2}`` (variance of the truncated free field)."""
    if N < 0:
        raise ValueError("N must be non-negative")
    return float(np.sum(1.0 / _disc_bessel_sq(float(N))))


def variance_i_psi(spec: IOperatorSpec, t: float, radius: float | None = None,
                   tail: bool = True) -> float:
    """Variance of ``I_N Psi(x, t)``.

    Exact lattice sum of ``m_N(n)^2 int_0^t sin^2((t-t')<n>)/<n>^2 dt'`` over
    ``|n| <= radius`` (default ``16 N``), accumulated one lattice row at a
    time. With ``tail=True`` the remainder ``|n| > radius`` is added from the
    continuum integral of the non-oscillatory part,
    ``pi t N^(2-2s) R^(2s-2) / (2-2s)``.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    R = float(radius if radius is not None else 16 * spec.N)
    Ri = int(math.floor(R + 1e-9))
    n2 = np.arange(-Ri, Ri + 1, dtype=float)
    total = 0.0
    for n1 in range(-Ri, Ri + 1):
        nsq = n1 * n1 + n2 * n2
        nsq = nsq[nsq <= R * R + 1e-9]
        w2 = 1.0 + nsq
        w = np.sqrt(w2)
        m = spec.symbol(np.sqrt(nsq))
        total += float(np.sum(m * m * (t / (2 * w2) - np.sin(2 * t * w) / (4 * w2 * w))))
    if tail and radius is None:
        s = spec.s
        total += math.pi * t * spec.N ** (2 - 2 * s) * R ** (2 * s - 2) / (2 - 2 * s)
    return total


# ---------------------------------------------------------------------------
# exact per-mode transitions


def oscillator_response(w2, gamma: float, t) -> tuple[np.ndarray, np.ndarray]:
    """Impulse response ``D(t) = e^{-gamma t/2} sin(omega t)/omega`` and ``D'(t)``.

    ``omega = sqrt(w2 - gamma^2/4)``; solves ``x'' + gamma x' + w2 x = 0``
    with ``x(0) = 0``, ``x'(0) = 1``.
    """
    w2 = np.asarray(w2, dtype=float)
    t = np.asarray(t, dtype=float)
    om = np.sqrt(w2 - 0.25 * gamma * gamma)
    env = np.exp(-0.5 * gamma * t)
    s, c = np.sin(om * t), np.cos(om * t)
    D = env * s / om
    dD = env * (c - 0.5 * gamma * s / om)
    return D, dD


def transition_matrix(w2, gamma: float, h) -> np.ndarray:
    """Fundamental matrix (shape ``(..., 2, 2)``) of ``x'' + gamma x' + w2 x = 0``."""
    w2 = np.asarray(w2, dtype=float)
    D, dD = oscillator_response(w2, gamma, h)
    out = np.empty(np.broadcast(D, w2).shape + (2, 2))
    out[..., 0, 0] = dD + gamma * D
    out[..., 0, 1] = D
    out[..., 1, 0] = -w2 * D
    out[..., 1, 1] = dD
    return out


def transition_covariance(w2, gamma: float, h) -> np.ndarray:
    """Covariance of the noise-driven part over a step ``h`` for unit intensity.

    Entries are ``int_0^h g g``, ``int g g'``, ``int g' g'`` with ``g`` the
    impulse response, from sin/cos antiderivatives against ``e^{-gamma s}``.
    """
    w2 = np.asarray(w2, dtype=float)
    h = float(h)
    om = np.sqrt(w2 - 0.25 * gamma * gamma)
    b = 2 * om
    eg = math.exp(-gamma * h)
    e0 = h if gamma == 0 else -math.expm1(-gamma * h) / gamma
    den = gamma * gamma + b * b
    ec = (gamma - eg * (gamma * np.cos(b * h) - b * np.sin(b * h))) / den
    es = (b - eg * (gamma * np.sin(b * h) + b * np.cos(b * h))) / den
    s2 = 0.5 * (e0 - ec)
    c2 = 0.5 * (e0 + ec)
    sc = 0.5 * es
    cc = gamma / (2 * om)
    D, _ = oscillator_response(w2, gamma, h)
    out = np.empty(w2.shape + (2, 2))
    out[..., 0, 0] = s2 / (om * om)
    out[..., 0, 1] = out[..., 1, 0] = 0.5 * D * D
    out[..., 1, 1] = c2 - 2 * cc * sc + cc * cc * s2
    return out


def stationary_covariance(w2, intensity: float = 2.0, gamma: float = 1.0) -> np.ndarray:
    """Stationary per-mode covariance ``diag(q/(2 gamma w2), q/(2 gamma))``."""
    w2 = np.asarray(w2, dtype=float)
    out = np.zeros(w2.shape + (2, 2))
    out[..., 0, 0] = intensity / (2 * gamma * w2)
    out[..., 1, 1] = intensity / (2 * gamma)
    return out


def chol2(cov: np.ndarray, floor: float = CHOL_FLOOR) -> np.ndarray:
    """Lower Cholesky factors of a stack of 2x2 covariances with a diagonal floor."""
    l11 = np.sqrt(np.maximum(cov[..., 0, 0], floor))
    l21 = cov[..., 1, 0] / l11
    l22 = np.sqrt(np.maximum(cov[..., 1, 1] - l21 * l21, floor))
    out = np.zeros(cov.shape)
    out[..., 0, 0] = l11
    out[..., 1, 0] = l21
    out[..., 1, 1] = l22
    return out


# ---------------------------------------------------------------------------
# retained mode sets


@dataclass(frozen=True, eq=False)
class ModeSet:
    """Flattened lattice modes with ``|n| <= cutoff`` and their ``-n`` partners."""

    lattice: LatticeSpec
    cutoff: float
    flat: np.ndarray = field(repr=False)
    partner: np.ndarray = field(repr=False)
    n1: np.ndarray = field(repr=False)
    n2: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, lattice: LatticeSpec, cutoff: float | None = None) -> "ModeSet":
        N = float(lattice.K * math.sqrt(2.0) if cutoff is None else cutoff)
        n1, n2 = lattice.frequencies()
        n1, n2 = n1.ravel(), n2.ravel()
        keep = np.nonzero(n1 * n1 + n2 * n2 <= N * N + 1e-9)[0]
        W = lattice.width
        K = lattice.K
        lookup = {int(i): j for j, i in enumerate(keep)}
        partner = np.array([lookup[(-n1[i] + K) * W + (-n2[i] + K)] for i in keep], dtype=int)
        return cls(lattice, N, keep, partner, n1[keep], n2[keep])

    @property
    def size(self) -> int:
        return int(self.flat.size)

    @property
    def w2(self) -> np.ndarray:
        return 1.0 + self.n1 * self.n1 + self.n2 * self.n2

    def hermitian_normal(self, z: np.ndarray) -> np.ndarray:
        """Map real normals ``(..., size, 2)`` to Hermitian standard complex Gaussians.

        Result has ``c(-n) = conj(c(n))``, ``E|c(n)|^2 = 1`` and is real
        standard normal at ``n = 0``.
        """
        zc = (z[..., 0] + 1j * z[..., 1]) / math.sqrt(2.0)
        return (zc + np.conj(zc[..., self.partner])) / math.sqrt(2.0)

    def to_coeffs(self, vec: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec)
        out = np.zeros(vec.shape[:-1] + (self.lattice.width ** 2,), dtype=complex)
        out[..., self.flat] = vec
        return out.reshape(vec.shape[:-1] + self.lattice.shape)

    def from_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        coeffs = np.asarray(coeffs)
        return coeffs.reshape(coeffs.shape[:-2] + (-1,))[..., self.flat]

    def phase(self, x=(0.0, 0.0), weights: np.ndarray | None = None) -> np.ndarray:
        ph = np.exp(1j * (self.n1 * x[0] + self.n2 * x[1]))
        return ph if weights is None else ph * weights

    def point_value(self, vec: np.ndarray, x=(0.0, 0.0), weights=None) -> np.ndarray:
        return np.real(vec @ self.phase(x, weights))


def _evolve_modes(modes: ModeSet, times: np.ndarray, gamma: float, intensity: float,
                  noise: NoiseStream, first: int, count: int,
                  pos0: np.ndarray, vel0: np.ndarray) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(pos, vel)`` mode vectors of shape ``(count, size)`` at each time."""
    pos, vel = pos0, vel0
    yield pos, vel
    w2 = modes.w2
    for j in range(1, len(times)):
        h = times[j] - times[j - 1]
        Phi = transition_matrix(w2, gamma, h)
        L = chol2(intensity * transition_covariance(w2, gamma, h))
        z = noise.block_normal(first, count, (2, modes.size, 2), "step", j)
        z1 = modes.hermitian_normal(z[:, 0])
        z2 = modes.hermitian_normal(z[:, 1])
        pos, vel = (Phi[:, 0, 0] * pos + Phi[:, 0, 1] * vel + L[:, 0, 0] * z1,
                    Phi[:, 1, 0] * pos + Phi[:, 1, 1] * vel + L[:, 1, 0] * z1 + L[:, 1, 1] * z2)
        yield pos, vel


def _check_times(times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a non-empty 1-d array")
    if times[0] != 0.0:
        raise ValueError("times must start at 0")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    return times


def mu1_modes(modes: ModeSet, noise: NoiseStream, first: int, count: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``(g_n/<n>, h_n)`` mode vectors from the free-field x white-noise prior."""
    z = noise.block_normal(first, count, (2, modes.size, 2), "mu1")
    g = modes.hermitian_normal(z[:, 0])
    h = modes.hermitian_normal(z[:, 1])
    return g / np.sqrt(modes.w2), h


def sample_mu1_pair(lattice: LatticeSpec, noise: NoiseStream, member: int = 0,
                    cutoff: float | None = None) -> FieldPair:
    """One draw of ``(u1, u2)``: free-field position, white-noise velocity."""
    modes = ModeSet.build(lattice, cutoff)
    p, v = mu1_modes(modes, noise, member, 1)
    return FieldPair.from_arrays(lattice, modes.to_coeffs(p[0]), modes.to_coeffs(v[0]))


def sample_mu1_ensemble(lattice: LatticeSpec, noise: NoiseStream, count: int, first: int = 0,
                        cutoff: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Coefficient arrays ``(count, 2K+1, 2K+1)`` for position and velocity."""
    modes = ModeSet.build(lattice, cutoff)
    p, v = mu1_modes(modes, noise, first, count)
    return modes.to_coeffs(p), modes.to_coeffs(v)


# ---------------------------------------------------------------------------
# paths


@dataclass(frozen=True, eq=False)
class StochasticConvolutionPath:
    """A sampled trajectory of Psi_N or Phi_N with its variance parameter."""

    lattice: LatticeSpec
    times: np.ndarray
    positions: np.ndarray = field(repr=False)
    velocities: np.ndarray = field(repr=False)
    kind: str
    variance: np.ndarray
    cutoff: float
    seed: int

    def state(self, j: int) -> FieldPair:
        return FieldPair.from_arrays(self.lattice, self.positions[j], self.velocities[j])

    @property
    def states(self) -> list[FieldPair]:
        return [self.state(j) for j in range(len(self.times))]

    def subsample(self, stride: int, start: int = 0, stop: int | None = None) -> "StochasticConvolutionPath":
        """Every ``stride``-th sample (the same realization on a coarser grid)."""
        sl = slice(start, stop, stride)
        return replace(self, times=self.times[sl], positions=self.positions[sl],
                       velocities=self.velocities[sl], variance=self.variance[sl])

    def to_bytes(self) -> bytes:
        return self.times.tobytes() + self.positions.tobytes() + self.velocities.tobytes()

    def sidecar(self) -> dict:
        return {
            "kind": self.kind,
            "N": self.cutoff,
            "K": self.lattice.K,
            "times": [float(t) for t in self.times],
            "variance": [float(v) for v in self.variance],
            "seed": int(self.seed),
        }


def _path_from_modes(modes, times, kind, variance, noise, init) -> StochasticConvolutionPath:
    gamma, q = (0.0, 1.0) if kind == PSI else (1.0, 2.0)
    if init is None:
        p0 = np.zeros((1, modes.size), dtype=complex)
        v0 = np.zeros_like(p0)
    else:
        p0, v0 = init
    P, V = [], []
    for p, v in _evolve_modes(modes, times, gamma, q, noise, 0, 1, p0, v0):
        P.append(modes.to_coeffs(p[0]))
        V.append(modes.to_coeffs(v[0]))
    return StochasticConvolutionPath(modes.lattice, times, np.array(P), np.array(V), kind,
                                     np.asarray(variance, dtype=float), modes.cutoff, noise.seed)


def sample_psi(lattice: LatticeSpec, times, noise: NoiseStream,
               cutoff: float | None = None) -> StochasticConvolutionPath:
    """Sample ``P_N Psi`` (zero initial data, undamped) at ``times``."""
    times = _check_times(times)
    modes = ModeSet.build(lattice, cutoff)
    return _path_from_modes(modes, times, PSI, sigma_n(modes.cutoff, times), noise.substream("psi"), None)


def sample_phi(lattice: LatticeSpec, times, noise: NoiseStream,
               initial: FieldPair | str = "sample-from-mu1",
               cutoff: float | None = None) -> StochasticConvolutionPath:
    """Sample ``P_N Phi`` (damped) from the given or a free-field initial state."""
    times = _check_times(times)
    modes = ModeSet.build(lattice, cutoff)
    stream = noise.substream("phi")
    if isinstance(initial, str):
        if initial != "sample-from-mu1":
            raise ValueError(f"unknown initial data mode {initial!r}")
        init = mu1_modes(modes, stream, 0, 1)
    else:
        if initial.lattice != lattice:
            raise ValueError("initial data lattice mismatch")
        init = (modes.from_coeffs(initial.position.coeffs)[None],
                modes.from_coeffs(initial.velocity.coeffs)[None])
    var = np.full(times.shape, alpha_n(modes.cutoff))
    return _path_from_modes(modes, times, PHI, var, stream, init)


def ensemble_point_values(kind: str, lattice: LatticeSpec, times, noise: NoiseStream, M: int,
                          cutoff: float | None = None, x=(0.0, 0.0), weights=None,
                          batch: int = 256, velocity: bool = False, threads: int = 1) -> np.ndarray:
    """Point values ``Z_N(x, t)`` for ``M`` independent members; shape ``(len(times), M)``.

    Only one mode of each ``{n, -n}`` pair is simulated, stored as real
    ``(re, im)`` pairs, so every update is a real multiply-add. Members are
    the same as the first ``M`` members that any other batch size or thread
    count would produce. ``weights`` is an optional multiplier on the
    retained modes (e.g. the I-operator symbol).
    """
    if M <= 0:
        raise ValueError("M must be positive")
    if kind not in (PSI, PHI):
        raise ValueError(f"unknown kind {kind!r}")
    times = _check_times(times)
    modes = ModeSet.build(lattice, cutoff)
    half = (modes.n2 > 0) | ((modes.n2 == 0) & (modes.n1 >= 0))
    zero = (modes.n1[half] == 0) & (modes.n2[half] == 0)
    ph = modes.phase(x, weights)[half]
    # Re sum_n c_n e^{in.x} = c_0 + 2 Re sum_{half, n != 0} c_n e^{in.x}
    mult = np.where(zero, 1.0, 2.0)
    proj = np.stack([mult * ph.real, -mult * ph.imag], axis=-1).ravel()
    # unit complex Gaussians: (z1 + i z2)/sqrt(2); the zero mode is real N(0, 1)
    scale = np.stack([np.where(zero, 1.0, math.sqrt(0.5)), np.where(zero, 0.0, math.sqrt(0.5))],
                     axis=-1).ravel()
    w2 = np.repeat(modes.w2[half], 2)
    gamma, q = (0.0, 1.0) if kind == PSI else (1.0, 2.0)
    stream = noise.substream(kind, "half-plane")
    size = w2.size
    steps = []
    for j in range(1, len(times)):
        h = times[j] - times[j - 1]
        P = transition_matrix(w2, gamma, h)
        L = chol2(q * transition_covariance(w2, gamma, h))
        steps.append((P[:, 0, 0], P[:, 0, 1], P[:, 1, 0], P[:, 1, 1],
                      L[:, 0, 0] * scale, L[:, 1, 0] * scale, L[:, 1, 1] * scale))

    def run(first: int) -> np.ndarray:
        count = min(batch, M - first)
        if kind == PSI:
            pos = np.zeros((count, size))
            vel = np.zeros((count, size))
        else:
            z = stream.block_normal(first, count, (2, size), "mu1")
            pos = z[:, 0] * (scale / np.sqrt(w2))
            vel = z[:, 1] * scale
        out = np.empty((len(times), count))
        out[0] = (vel if velocity else pos) @ proj
        for j, (a, b, c, d, l11, l21, l22) in enumerate(steps, start=1):
            z = stream.block_normal(first, count, (2, size), "step", j)
            new_pos = a * pos + b * vel + l11 * z[:, 0]
            vel = c * pos + d * vel + l21 * z[:, 0] + l22 * z[:, 1]
            pos = new_pos
            out[j] = (vel if velocity else pos) @ proj
        return out

    return np.concatenate(ordered_map(run, range(0, M, batch), threads), axis=1)


# ---------------------------------------------------------------------------
# Wick powers


@dataclass(frozen=True, eq=False)
class WickPowerSeries:
    """Grid values of ``:Z_N^l: = H_l(Z_N; variance)`` for ``l = 1..maxDegree``.

    ``values[j, l-1]`` holds degree ``l`` at ``base.times[j]`` on a
    ``grid_size`` grid large enough to project degree-``maxDegree + 1``
    products back to the lattice exactly.
    """

    base: StochasticConvolutionPath
    maxDegree: int
    grid_size: int
    values: np.ndarray = field(repr=False)

    @property
    def times(self) -> np.ndarray:
        return self.base.times

    def coefficients(self, j: int, degree: int) -> np.ndarray:
        return grid_to_coeffs(self.values[j, degree - 1], self.base.lattice.K)

    def power(self, j: int, degree: int) -> SpectralField:
        """Lattice projection of ``:Z^degree:`` at time index ``j``."""
        return SpectralField(self.base.lattice, self.coefficients(j, degree))

    def at(self, j: int) -> np.ndarray:
        return self.values[j]

    def subsample(self, stride: int, start: int = 0, stop: int | None = None) -> "WickPowerSeries":
        sl = slice(start, stop, stride)
        return WickPowerSeries(self.base.subsample(stride, start, stop), self.maxDegree,
                               self.grid_size, self.values[sl])


def wick_powers(path: StochasticConvolutionPath, k: int, grid_size: int | None = None) -> WickPowerSeries:
    """Evaluate ``H_l(Z_N(x, t); variance(t))`` pointwise on a dealiased grid."""
    if k < 1:
        raise ValueError("k must be >= 1")
    lat = path.lattice
    G = grid_size or lat.dealias_size(k)
    if not lat.can_dealias(k, G):
        raise ValueError(
            f"grid of {G} points cannot dealias degree-{k} Wick products on K={lat.K}; "
            f"need more than {(k + 1) * lat.K}"
        )
    z = coeffs_to_grid(path.positions, G)
    vals = np.empty((len(path.times), k, G, G))
    for j in range(len(path.times)):
        hs = hermite_all(k, z[j], path.variance[j])
        for l in range(1, k + 1):
            vals[j, l - 1] = hs[l]
    return WickPowerSeries(path, k, G, vals)


def zero_wick_series(lattice: LatticeSpec, times, k: int, grid_size: int | None = None) -> WickPowerSeries:
    """A series with all Wick forcings identically zero (noise-free runs)."""
    times = np.asarray(times, dtype=float)
    G = grid_size or lattice.dealias_size(k)
    z = np.zeros((len(times),) + lattice.shape, dtype=complex)
    base = StochasticConvolutionPath(lattice, times, z, z, PSI, np.zeros(len(times)),
                                     lattice.K * math.sqrt(2), 0)
    return WickPowerSeries(base, k, G, np.zeros((len(times), k, G, G)))
