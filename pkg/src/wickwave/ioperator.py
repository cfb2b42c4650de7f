"""The I-operator: identity below N, fractional integration of order 1-s above 2N."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .torus import LatticeSpec, SpectralField, apply_multiplier

PROFILES = ("smoothstep", "sharp")


@dataclass(frozen=True)
class IOperatorSpec:
    """Cutoff ``N``, regularity ``s`` and the interpolation rule on ``N < |xi| < 2N``.

    ``smoothstep`` (default) uses ``m = (N/|xi|)^((1-s) w(t))`` with
    ``w(t) = 3t^2 - 2t^3`` and ``t = log2(|xi|/N)``; this is C^1, monotone
    and matches both pieces. ``sharp`` uses ``(N/|xi|)^(1-s)`` for every
    ``|xi| > N`` (continuous, not C^1).
    """

    N: float
    s: float
    profile: str = "smoothstep"

    def __post_init__(self):
        if not self.N > 0:
            raise ValueError(f"N must be positive, got {self.N}")
        if not 0 < self.s < 1:
            raise ValueError(f"s must lie in (0, 1), got {self.s}")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}; choose from {PROFILES}")

    def symbol(self, xi) -> np.ndarray:
        """``m_N(|xi|)`` for radii ``xi >= 0``."""
        r = np.asarray(xi, dtype=float)
        out = np.ones_like(r)
        hi = r > self.N
        if not np.any(hi):
            return out
        ratio = r[hi] / self.N
        expo = np.full(ratio.shape, 1.0 - self.s)
        if self.profile == "smoothstep":
            t = np.clip(np.log2(ratio), 0.0, 1.0)
            expo = expo * (3 * t * t - 2 * t ** 3)
        out[hi] = np.exp(-expo * np.log(ratio))
        return out

    def on_lattice(self, lattice: LatticeSpec) -> np.ndarray:
        return self.symbol(np.sqrt(lattice.norm_sq()))

    def is_identity_on(self, lattice: LatticeSpec) -> bool:
        return self.N >= math.sqrt(2.0) * lattice.K


def i_multiplier(spec: IOperatorSpec, n) -> float | np.ndarray:
    """``m_N(n)`` at lattice frequency ``n = (n1, n2)`` (or an array of them)."""
    n = np.asarray(n, dtype=float)
    vals = spec.symbol(np.sqrt(np.sum(n * n, axis=-1)))
    return float(vals) if vals.ndim == 0 else vals


def apply_i(f: SpectralField, spec: IOperatorSpec) -> SpectralField:
    return apply_multiplier(f, spec.on_lattice(f.lattice))
