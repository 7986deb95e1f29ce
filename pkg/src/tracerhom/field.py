"""Mode set, stationary OU amplitudes, the rotation group and the 2-d stream field.

Amplitude vectors are stored as arrays of shape ``(..., 2N)`` laid out as
``[a_1, ..., a_N, b_1, ..., b_N]``.  Slow-variable gradients of the amplitudes
have shape ``(..., 2N, 2)``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .profiles import Constant, Profile, profile_from_dict
from .rng import RngStream


def perp(k):
    """``k^perp = (k_2, -k_1)``."""
    k = np.asarray(k, dtype=float)
    return np.stack([k[..., 1], -k[..., 0]], axis=-1)


@dataclass(frozen=True)
class ModeSet:
    k: np.ndarray
    alpha: tuple
    sigma: tuple
    gamma0: float
    sigma_star: float
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        k = np.array(self.k, dtype=float).reshape(-1, 2)
        k.setflags(write=False)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "alpha", tuple(self.alpha))
        object.__setattr__(self, "sigma", tuple(self.sigma))
        n = k.shape[0]
        if n < 1 or len(self.alpha) != n or len(self.sigma) != n:
            raise ValueError("need one alpha and one sigma profile per wavevector")
        if not (0 < self.gamma0 < 1 and 0 < self.sigma_star < 1):
            raise ValueError("gamma0 and sigma_star must lie in (0, 1)")
        if np.any(np.all(k == 0, axis=1)):
            raise ValueError("wavevectors must be nonzero")
        if len({tuple(r) for r in k}) != n:
            raise ValueError("wavevectors must be distinct")
        tol = 1e-12
        for p in self.alpha:
            lo, hi = p.bounds()
            if lo < self.gamma0 - tol or hi > 1 / self.gamma0 + tol:
                raise ValueError(f"alpha profile {p} leaves [gamma0, 1/gamma0]")
        for p in self.sigma:
            lo, hi = p.bounds()
            if lo < self.sigma_star - tol or hi > 1 / self.sigma_star + tol:
                raise ValueError(f"sigma profile {p} leaves [sigma_star, 1/sigma_star]")

    @property
    def N(self) -> int:
        return self.k.shape[0]

    @property
    def kperp(self) -> np.ndarray:
        return perp(self.k)

    @property
    def delta(self) -> np.ndarray:
        """``delta[i, j] = k_i . k_j^perp``; antisymmetric with zero diagonal."""
        if "delta" not in self._cache:
            k = self.k
            d = np.outer(k[:, 0], k[:, 1]) - np.outer(k[:, 1], k[:, 0])
            d.setflags(write=False)
            self._cache["delta"] = d
        return self._cache["delta"]

    @property
    def is_stationary(self) -> bool:
        return all(p.is_constant for p in self.alpha + self.sigma)

    def alpha_at(self, y):
        return np.stack([p.value(y) for p in self.alpha], axis=-1)

    def sigma_at(self, y):
        return np.stack([p.value(y) for p in self.sigma], axis=-1)

    def alpha_grad(self, y):
        return np.stack([p.grad(y) for p in self.alpha], axis=-2)

    def sigma_grad(self, y):
        return np.stack([p.grad(y) for p in self.sigma], axis=-2)

    def gap_at(self, y) -> float:
        """Spectral gap of the cell generator at ``y`` (the smallest rate)."""
        return float(np.min(self.alpha_at(np.asarray(y, dtype=float))))

    def reflected(self) -> "ModeSet":
        return ModeSet(self.k, tuple(p.reflected() for p in self.alpha),
                       tuple(p.reflected() for p in self.sigma), self.gamma0, self.sigma_star)

    def with_profiles(self, alpha=None, sigma=None) -> "ModeSet":
        return ModeSet(self.k, alpha if alpha is not None else self.alpha,
                       sigma if sigma is not None else self.sigma, self.gamma0, self.sigma_star)

    def to_dict(self) -> dict:
        return {
            "k": self.k.tolist(),
            "alpha": [p.to_dict() for p in self.alpha],
            "sigma": [p.to_dict() for p in self.sigma],
            "gamma0": self.gamma0,
            "sigma_star": self.sigma_star,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModeSet":
        k = np.asarray(d["k"], dtype=float).reshape(-1, 2)
        n = k.shape[0]
        alpha = d.get("alpha", 1.0)
        sigma = d.get("sigma", 1.0)
        if not isinstance(alpha, (list, tuple)):
            alpha = [alpha] * n
        if not isinstance(sigma, (list, tuple)):
            sigma = [sigma] * n
        return cls(k, tuple(profile_from_dict(p) for p in alpha),
                   tuple(profile_from_dict(p) for p in sigma),
                   float(d.get("gamma0", 0.5)), float(d.get("sigma_star", 0.5)))

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def reference_modes(alpha: float = 1.0, sigma: float = 0.5) -> ModeSet:
    """Three modes k = (1,0), (0,1), (1,1) with constant coefficients."""
    k = [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
    return ModeSet(k, (Constant(alpha),) * 3, (Constant(sigma),) * 3, 0.5, 0.25)


@dataclass(frozen=True)
class PhasePoint:
    a: np.ndarray
    b: np.ndarray

    def __array__(self, dtype=None, copy=None):
        return np.concatenate([np.asarray(self.a, dtype=float), np.asarray(self.b, dtype=float)], axis=-1)

    @classmethod
    def from_array(cls, amp) -> "PhasePoint":
        a, b = split(amp)
        return cls(a, b)


@dataclass(frozen=True)
class InvariantMeasureSpec:
    y: np.ndarray
    sigmas: np.ndarray

    @classmethod
    def at(cls, modes: ModeSet, y) -> "InvariantMeasureSpec":
        y = np.asarray(y, dtype=float)
        return cls(y, modes.sigma_at(y))

    def std(self) -> np.ndarray:
        """Per-coordinate standard deviations in ``[a, b]`` layout."""
        return np.concatenate([self.sigmas, self.sigmas])


def split(amp):
    amp = np.asarray(amp, dtype=float)
    n = amp.shape[-1] // 2
    return amp[..., :n], amp[..., n:]


def join(a, b):
    return np.concatenate([a, b], axis=-1)


def sample_invariant(modes: ModeSet, y, rng: RngStream, size=()) -> np.ndarray:
    """Draw from the product Gaussian with variance sigma_i(y)^2 per a_i and b_i."""
    size = (size,) if np.isscalar(size) else tuple(size)
    std = InvariantMeasureSpec.at(modes, y).std()
    return std * rng.normal(size + (2 * modes.N,))


def ou_exact_step(amp, y, dt: float, modes: ModeSet, rng: RngStream) -> np.ndarray:
    if dt <= 0:
        raise ValueError("dt must be positive")
    amp = np.asarray(amp, dtype=float)
    alpha = np.tile(modes.alpha_at(y), 2)
    sigma = np.tile(modes.sigma_at(y), 2)
    decay = np.exp(-alpha * dt)
    std = sigma * np.sqrt(-np.expm1(-2.0 * alpha * dt))
    return decay * amp + std * rng.normal(amp.shape)


def rotate(amp, x, modes: ModeSet) -> np.ndarray:
    """The group action tau_x on amplitude vectors."""
    a, b = split(amp)
    ph = np.asarray(x, dtype=float) @ modes.k.T
    c, s = np.cos(ph), np.sin(ph)
    return join(a * c + b * s, -a * s + b * c)


def w_map(amp, modes: ModeSet) -> np.ndarray:
    """``w(a) = sum_i k_i^perp b_i``: the frame velocity."""
    _, b = split(amp)
    return b @ modes.kperp


def eval_H(amp, x, modes: ModeSet):
    a, b = split(amp)
    ph = np.asarray(x, dtype=float) @ modes.k.T
    return np.sum(a * np.cos(ph) + b * np.sin(ph), axis=-1)


def eval_W(amp, x, modes: ModeSet):
    a, b = split(amp)
    ph = np.asarray(x, dtype=float) @ modes.k.T
    coef = -a * np.sin(ph) + b * np.cos(ph)
    return coef @ modes.kperp


def eval_U(amp_grad, x, modes: ModeSet):
    """``sum_i [grad_perp a_i cos(k_i.x) + grad_perp b_i sin(k_i.x)]``.

    ``amp_grad[..., m, j]`` is the derivative of amplitude ``m`` in ``y_j``;
    the perpendicular gradient is ``(d/dy2, -d/dy1)``.
    """
    g = np.asarray(amp_grad, dtype=float)
    n = g.shape[-2] // 2
    ph = np.asarray(x, dtype=float) @ modes.k.T
    c, s = np.cos(ph), np.sin(ph)
    rot = g[..., :n, :] * c[..., None] + g[..., n:, :] * s[..., None]
    tot = rot.sum(axis=-2)
    return np.stack([tot[..., 1], -tot[..., 0]], axis=-1)


def scaled_velocity(amp, amp_grad, x, eps: float, modes: ModeSet):
    """Right-hand side of the diffusively scaled characteristics at position ``x``."""
    xf = np.asarray(x, dtype=float) / eps
    return eval_W(amp, xf, modes) / eps + eval_U(amp_grad, xf, modes)
