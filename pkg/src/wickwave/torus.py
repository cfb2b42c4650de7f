"""Fourier representation of real fields on the two-torus.

Fields are stored as complex coefficients ``c[n1 + K, n2 + K]`` of
``u(x) = sum_n c_n exp(i n.x)`` on the square lattice ``|n1|, |n2| <= K``.
The collocation grid is ``[0, 2*pi)^2`` with ``gridSize`` points per axis.
Spatial integrals use the normalized measure (total area 1), so
Parseval reads ``int |u|^2 dx = sum_n |c_n|^2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

HERMITIAN_ATOL = 1e-12

MultiplierLike = Union[np.ndarray, Callable[[np.ndarray, np.ndarray], np.ndarray], float]


def _even_at_least(n: int) -> int:
    return n + (n % 2)


@dataclass(frozen=True)
class LatticeSpec:
    """Square frequency lattice ``|n1|, |n2| <= K`` with a collocation grid."""

    K: int
    gridSize: int | None = None

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 0:
            raise ValueError(f"K must be a non-negative integer, got {self.K}")
        if self.gridSize is None:
            object.__setattr__(self, "gridSize", 2 * self.K + 2)
        g = self.gridSize
        if g % 2 != 0 or g < 2 * self.K + 2:
            raise ValueError(
                f"gridSize must be even and >= 2K+2 = {2 * self.K + 2}, got {g}"
            )

    @property
    def width(self) -> int:
        return 2 * self.K + 1

    @property
    def shape(self) -> tuple[int, int]:
        return (self.width, self.width)

    def frequencies(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer frequency arrays ``(n1, n2)`` with ``indexing='ij'``."""
        r = np.arange(-self.K, self.K + 1)
        return np.meshgrid(r, r, indexing="ij")

    def norm_sq(self) -> np.ndarray:
        n1, n2 = self.frequencies()
        return (n1 * n1 + n2 * n2).astype(float)

    def bessel(self) -> np.ndarray:
        """``<n> = (1 + |n|^2)^(1/2)`` on the lattice."""
        return np.sqrt(1.0 + self.norm_sq())

    def dealias_size(self, degree: int) -> int:
        """Padded grid size on which degree-``degree`` products project exactly.

        Uses ``ceil((degree + 1) / 2) * (2K + 1)`` rounded up to even, which
        exceeds ``(degree + 1) K``.
        """
        n = math.ceil((degree + 1) / 2) * self.width
        return max(_even_at_least(n), self.gridSize)

    def can_dealias(self, degree: int, grid_size: int) -> bool:
        return grid_size > (degree + 1) * self.K

    def disc_mask(self, N: float) -> np.ndarray:
        return self.norm_sq() <= float(N) ** 2 + 1e-9


def bessel_weight(n) -> float | np.ndarray:
    """Japanese bracket ``(1 + n1^2 + n2^2)^(1/2)`` of a frequency (or array of them)."""
    n = np.asarray(n, dtype=float)
    return np.sqrt(1.0 + np.sum(n * n, axis=-1))


# ---------------------------------------------------------------------------
# raw coefficient <-> grid transforms (leading batch axes allowed)


def _scatter_index(K: int, G: int) -> np.ndarray:
    return np.arange(-K, K + 1) % G


def coeffs_to_grid(coeffs: np.ndarray, grid_size: int) -> np.ndarray:
    """Evaluate ``sum_n c_n e^{i n.x}`` on a ``grid_size``-point grid (real part)."""
    coeffs = np.asarray(coeffs)
    K = (coeffs.shape[-1] - 1) // 2
    G = int(grid_size)
    if G < 2 * K + 1:
        raise ValueError(f"grid of {G} points cannot hold lattice K={K}")
    idx = _scatter_index(K, G)
    full = np.zeros(coeffs.shape[:-2] + (G, G), dtype=complex)
    full[..., idx[:, None], idx[None, :]] = coeffs
    return np.fft.ifft2(full, axes=(-2, -1)).real * (G * G)


def grid_to_coeffs(values: np.ndarray, K: int) -> np.ndarray:
    """Fourier coefficients ``|n_i| <= K`` of real grid values (exact for band-limited data)."""
    values = np.asarray(values, dtype=float)
    G = values.shape[-1]
    if G < 2 * K + 1:
        raise ValueError(f"grid of {G} points cannot resolve lattice K={K}")
    spec = np.fft.fft2(values, axes=(-2, -1)) / (G * G)
    idx = _scatter_index(K, G)
    c = spec[..., idx[:, None], idx[None, :]]
    return hermitian_part(c)


def hermitian_part(coeffs: np.ndarray) -> np.ndarray:
    """Project onto Hermitian-symmetric coefficients ``c(-n) = conj(c(n))``."""
    return 0.5 * (coeffs + np.conj(coeffs[..., ::-1, ::-1]))


def hermitian_defect(coeffs: np.ndarray) -> float:
    coeffs = np.asarray(coeffs)
    if coeffs.size == 0:
        return 0.0
    return float(np.max(np.abs(coeffs - np.conj(coeffs[..., ::-1, ::-1]))))


def embed_coeffs(coeffs: np.ndarray, K_new: int) -> np.ndarray:
    """Zero-pad (or truncate) a coefficient array to lattice ``K_new``."""
    coeffs = np.asarray(coeffs)
    K = (coeffs.shape[-1] - 1) // 2
    out = np.zeros(coeffs.shape[:-2] + (2 * K_new + 1, 2 * K_new + 1), dtype=complex)
    m = min(K, K_new)
    out[..., K_new - m:K_new + m + 1, K_new - m:K_new + m + 1] = coeffs[
        ..., K - m:K + m + 1, K - m:K + m + 1
    ]
    return out


def dealiased_power(coeffs: np.ndarray, k: int, grid_size: int | None = None) -> np.ndarray:
    """Lattice coefficients of ``u^k`` computed pseudo-spectrally without aliasing."""
    K = (np.shape(coeffs)[-1] - 1) // 2
    G = grid_size or _even_at_least((k + 1) * K + 2)
    if G <= (k + 1) * K:
        raise ValueError(f"grid of {G} points aliases degree-{k} products on K={K}")
    u = coeffs_to_grid(coeffs, G)
    return grid_to_coeffs(u ** k, K)


def convolution_power(coeffs: np.ndarray, k: int) -> np.ndarray:
    """Exact ``u^k`` by repeated discrete convolution, truncated to the lattice.

    O(K^4) per factor; only meant as an oracle on small lattices.
    """
    from scipy.signal import convolve2d

    c = np.asarray(coeffs, dtype=complex)
    K = (c.shape[-1] - 1) // 2
    acc = np.ones((1, 1), dtype=complex)
    for _ in range(k):
        acc = convolve2d(acc, c)
    Kfull = (acc.shape[-1] - 1) // 2
    return acc[Kfull - K:Kfull + K + 1, Kfull - K:Kfull + K + 1]


# ---------------------------------------------------------------------------
# field value objects


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Hermitian-symmetric Fourier coefficients of a real field."""

    lattice: LatticeSpec
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.shape != self.lattice.shape:
            raise ValueError(f"coeffs shape {c.shape} != lattice shape {self.lattice.shape}")
        scale = max(1.0, float(np.max(np.abs(c)))) if c.size else 1.0
        if hermitian_defect(c) > HERMITIAN_ATOL * scale:
            raise ValueError("coefficients are not Hermitian-symmetric (field not real)")
        c = hermitian_part(c)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    # constructors
    @classmethod
    def zeros(cls, lattice: LatticeSpec) -> "SpectralField":
        return cls(lattice, np.zeros(lattice.shape, dtype=complex))

    @classmethod
    def from_grid(cls, lattice: LatticeSpec, values: np.ndarray) -> "SpectralField":
        return cls(lattice, grid_to_coeffs(values, lattice.K))

    @classmethod
    def from_modes(cls, lattice: LatticeSpec, modes: dict) -> "SpectralField":
        """Build from ``{(n1, n2): value}``; the conjugate partner is filled in."""
        K = lattice.K
        c = np.zeros(lattice.shape, dtype=complex)
        for (n1, n2), val in modes.items():
            c[n1 + K, n2 + K] = val
            c[-n1 + K, -n2 + K] = np.conj(val)
        return cls(lattice, c)

    def coeff(self, n1: int, n2: int) -> complex:
        K = self.lattice.K
        if abs(n1) > K or abs(n2) > K:
            return 0j
        return complex(self.coeffs[n1 + K, n2 + K])

    def to_grid(self, grid_size: int | None = None) -> np.ndarray:
        return coeffs_to_grid(self.coeffs, grid_size or self.lattice.gridSize)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _check_same(self, other)
        return SpectralField(self.lattice, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _check_same(self, other)
        return SpectralField(self.lattice, self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> "SpectralField":
        return SpectralField(self.lattice, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def l2_inner(self, other: "SpectralField") -> float:
        _check_same(self, other)
        return float(np.real(np.vdot(other.coeffs, self.coeffs)))


def _check_same(a: SpectralField, b: SpectralField) -> None:
    if a.lattice != b.lattice:
        raise ValueError("fields live on different lattices")


@dataclass(frozen=True, eq=False)
class FieldPair:
    """Phase-space state ``(u, du/dt)``."""

    position: SpectralField
    velocity: SpectralField

    def __post_init__(self):
        if self.position.lattice != self.velocity.lattice:
            raise ValueError("position and velocity must share a lattice")

    @property
    def lattice(self) -> LatticeSpec:
        return self.position.lattice

    @classmethod
    def zeros(cls, lattice: LatticeSpec) -> "FieldPair":
        z = SpectralField.zeros(lattice)
        return cls(z, z)

    @classmethod
    def from_arrays(cls, lattice: LatticeSpec, pos: np.ndarray, vel: np.ndarray) -> "FieldPair":
        return cls(SpectralField(lattice, pos), SpectralField(lattice, vel))


# ---------------------------------------------------------------------------
# operators


def _multiplier_values(lattice: LatticeSpec, m: MultiplierLike) -> np.ndarray:
    if callable(m):
        n1, n2 = lattice.frequencies()
        vals = np.asarray(m(n1, n2), dtype=float)
    else:
        vals = np.asarray(m, dtype=float)
    return np.broadcast_to(vals, lattice.shape)


def apply_multiplier(f: SpectralField, m: MultiplierLike) -> SpectralField:
    """Fourier multiplier ``c(n) -> m(n) c(n)`` for a real, even symbol ``m``.

    ``m`` may be a scalar, an array on the lattice, or a callable ``m(n1, n2)``.
    """
    vals = _multiplier_values(f.lattice, m)
    if not np.all(np.isfinite(vals)):
        raise ValueError("multiplier has non-finite values")
    if np.max(np.abs(vals - vals[::-1, ::-1]), initial=0.0) > 1e-12 * max(
        1.0, float(np.max(np.abs(vals), initial=0.0))
    ):
        raise ValueError("multiplier is not even (m(-n) != m(n)); it would break realness")
    return SpectralField(f.lattice, f.coeffs * vals)


def project_low(f: SpectralField, N: float) -> SpectralField:
    """Keep frequencies ``|n| <= N``."""
    if N < 0:
        raise ValueError("cutoff must be non-negative")
    return SpectralField(f.lattice, np.where(f.lattice.disc_mask(N), f.coeffs, 0))


def project_high(f: SpectralField, N: float) -> SpectralField:
    """Keep frequencies ``|n| > N``."""
    if N < 0:
        raise ValueError("cutoff must be non-negative")
    return SpectralField(f.lattice, np.where(f.lattice.disc_mask(N), 0, f.coeffs))


def sobolev_norm(f: SpectralField, s: float, p: float = 2.0, grid_size: int | None = None) -> float:
    """``|| <nabla>^s f ||_{L^p}``.

    ``p = 2`` is the exact Parseval sum; other ``p`` use the plain collocation
    average on the grid (weight ``1/gridSize^2`` per point).
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    w = f.lattice.bessel() ** s
    if p == 2:
        return float(np.sqrt(np.sum(w * w * np.abs(f.coeffs) ** 2)))
    vals = coeffs_to_grid(f.coeffs * w, grid_size or f.lattice.gridSize)
    if math.isinf(p):
        return float(np.max(np.abs(vals)))
    return float(np.mean(np.abs(vals) ** p) ** (1.0 / p))


def hs_norm_coeffs(coeffs: np.ndarray, s: float, lattice: LatticeSpec) -> np.ndarray:
    """Batched ``H^s`` norms of raw coefficient arrays (reduces the last two axes)."""
    w = lattice.bessel() ** (2 * s)
    return np.sqrt(np.sum(w * np.abs(coeffs) ** 2, axis=(-2, -1)))
