"""Smooth coefficient profiles y -> alpha_i(y), sigma_i(y) on the slow variable.

Every profile returns values, gradients and Hessians in closed form so that
the velocity's slow-gradient term and the effective drift never rely on
numerical differentiation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class Profile:
    """Base class; subclasses implement ``value``, ``grad`` and ``hess``."""

    kind: str = ""

    def value(self, y):
        raise NotImplementedError

    def grad(self, y):
        raise NotImplementedError

    def hess(self, y):
        raise NotImplementedError

    def bounds(self) -> tuple[float, float]:
        raise NotImplementedError

    def reflected(self) -> "Profile":
        """Profile of ``y -> self(-y)``."""
        raise NotImplementedError

    @property
    def is_constant(self) -> bool:
        return False

    def to_dict(self) -> dict:
        raise NotImplementedError

    def encode(self) -> tuple[int, list[float]]:
        """``(kind_code, params)`` consumed by the compiled kernels."""
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(Profile):
    c: float
    kind = "constant"

    def value(self, y):
        y = np.asarray(y, dtype=float)
        return np.full(y.shape[:-1], float(self.c))

    def grad(self, y):
        y = np.asarray(y, dtype=float)
        return np.zeros(y.shape)

    def hess(self, y):
        y = np.asarray(y, dtype=float)
        return np.zeros(y.shape[:-1] + (2, 2))

    def bounds(self):
        return float(self.c), float(self.c)

    def reflected(self):
        return self

    @property
    def is_constant(self):
        return True

    def to_dict(self):
        return {"kind": self.kind, "c": float(self.c)}

    def encode(self):
        return 0, [float(self.c)]


@dataclass(frozen=True)
class LogisticRidge(Profile):
    """``lo + (hi - lo) * s(v . y - c)`` with ``s`` the logistic sigmoid.

    The ridge is perpendicular to ``v``; ``|v|`` sets its inverse width.
    """

    lo: float
    hi: float
    v: tuple[float, float]
    c: float = 0.0
    kind = "logistic"

    def _s(self, y):
        y = np.asarray(y, dtype=float)
        z = y @ np.asarray(self.v, dtype=float) - self.c
        return 0.5 * (1.0 + np.tanh(0.5 * z))

    def value(self, y):
        return self.lo + (self.hi - self.lo) * self._s(y)

    def grad(self, y):
        s = self._s(y)
        ds = s * (1.0 - s)
        return (self.hi - self.lo) * ds[..., None] * np.asarray(self.v, dtype=float)

    def hess(self, y):
        s = self._s(y)
        d2s = s * (1.0 - s) * (1.0 - 2.0 * s)
        v = np.asarray(self.v, dtype=float)
        return (self.hi - self.lo) * d2s[..., None, None] * np.outer(v, v)

    def bounds(self):
        return min(self.lo, self.hi), max(self.lo, self.hi)

    def reflected(self):
        return LogisticRidge(self.lo, self.hi, (-self.v[0], -self.v[1]), self.c)

    def to_dict(self):
        return {"kind": self.kind, "lo": self.lo, "hi": self.hi,
                "v": list(self.v), "c": self.c}

    def encode(self):
        return 1, [self.lo, self.hi, self.v[0], self.v[1], self.c]


@dataclass(frozen=True)
class GaussianBump(Profile):
    """``base + amp * exp(-|y - center|^2 / (2 width^2))``."""

    base: float
    amp: float
    center: tuple[float, float] = (0.0, 0.0)
    width: float = 1.0
    kind = "bump"

    def _g(self, y):
        d = np.asarray(y, dtype=float) - np.asarray(self.center, dtype=float)
        return d, np.exp(-0.5 * np.sum(d * d, axis=-1) / self.width**2)

    def value(self, y):
        _, g = self._g(y)
        return self.base + self.amp * g

    def grad(self, y):
        d, g = self._g(y)
        return -self.amp * (g / self.width**2)[..., None] * d

    def hess(self, y):
        d, g = self._g(y)
        w2 = self.width**2
        outer = d[..., :, None] * d[..., None, :] / w2**2
        return self.amp * g[..., None, None] * (outer - np.eye(2) / w2)

    def bounds(self):
        return min(self.base, self.base + self.amp), max(self.base, self.base + self.amp)

    def reflected(self):
        return GaussianBump(self.base, self.amp,
                            (-self.center[0], -self.center[1]), self.width)

    def to_dict(self):
        return {"kind": self.kind, "base": self.base, "amp": self.amp,
                "center": list(self.center), "width": self.width}

    def encode(self):
        return 2, [self.base, self.amp, self.center[0], self.center[1], self.width]


def profile_from_dict(d) -> Profile:
    if isinstance(d, (int, float)):
        return Constant(float(d))
    d = dict(d)
    kind = d.pop("kind")
    if kind == "constant":
        return Constant(float(d["c"]))
    if kind == "logistic":
        return LogisticRidge(float(d["lo"]), float(d["hi"]),
                             tuple(float(t) for t in d["v"]), float(d.get("c", 0.0)))
    if kind == "bump":
        return GaussianBump(float(d["base"]), float(d["amp"]),
                            tuple(float(t) for t in d.get("center", (0.0, 0.0))),
                            float(d.get("width", 1.0)))
    raise ValueError(f"unknown profile kind {kind!r}")


def encode_profiles(profiles) -> tuple[np.ndarray, np.ndarray]:
    """Pack profiles into ``(codes[n], params[n, 5])`` arrays."""
    codes = np.zeros(len(profiles), dtype=np.int64)
    params = np.zeros((len(profiles), 5))
    for i, p in enumerate(profiles):
        c, v = p.encode()
        codes[i] = c
        params[i, :len(v)] = v
    return codes, params
