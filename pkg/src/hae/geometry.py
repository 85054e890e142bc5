"""Poincaré ball primitives with curvature ``-c`` (``c > 0``).

Points are float64 tensors whose last axis is the vector axis; leading axes
broadcast.  Every ball-valued result goes through :meth:`PoincareBall.project`,
so outputs always satisfy ``sqrt(c) * ||x|| <= 1 - eps``.
"""

from __future__ import annotations

import math

import numpy as np
import torch

DTYPE = torch.float64
# Norms below this are treated as zero in direction-dependent formulas.
MIN_NORM = 1e-15
# Default clamp: r_max = ln((2 - eps) / eps) = 6.2126...
DEFAULT_EPS = 4e-3


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if x.dtype == DTYPE else x.to(DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def safe_norm(x: torch.Tensor, keepdim: bool = True) -> torch.Tensor:
    """Euclidean norm along the last axis with a zero-safe gradient."""
    sq = (x * x).sum(dim=-1, keepdim=keepdim)
    return torch.sqrt(sq.clamp_min(MIN_NORM * MIN_NORM))


def artanh(x: torch.Tensor) -> torch.Tensor:
    return torch.atanh(x.clamp(-1 + 1e-15, 1 - 1e-15))


def _zero_where(mask: torch.Tensor, out: torch.Tensor) -> torch.Tensor:
    """Exact zeros on ``mask`` rows while keeping the derivative of ``out``."""
    if not mask.any():
        return out
    return torch.where(mask, out - out.detach(), out)


def _check_dims(x: torch.Tensor, y: torch.Tensor) -> None:
    if x.shape[-1] != y.shape[-1]:
        raise ValueError(f"dimension mismatch: {x.shape[-1]} vs {y.shape[-1]}")


class PoincareBall:
    """The ball ``{x : c ||x||^2 < 1}`` with a boundary clamp ``eps``."""

    def __init__(self, c: float = 1.0, eps: float = DEFAULT_EPS):
        if not c > 0:
            raise ValueError(f"curvature magnitude must be positive, got {c}")
        if not 0 < eps < 1:
            raise ValueError(f"boundary eps must lie in (0, 1), got {eps}")
        self.c = float(c)
        self.eps = float(eps)
        self.sqrt_c = math.sqrt(self.c)
        self.max_norm = (1.0 - self.eps) / self.sqrt_c

    def __repr__(self) -> str:
        return f"PoincareBall(c={self.c}, eps={self.eps})"

    def __eq__(self, other) -> bool:
        return isinstance(other, PoincareBall) and (self.c, self.eps) == (other.c, other.eps)

    def __hash__(self) -> int:
        return hash((self.c, self.eps))

    @property
    def max_radius(self) -> float:
        """Hyperbolic radius of the clamp sphere, ``(2/sqrt c) artanh(1 - eps)``."""
        return 2.0 / self.sqrt_c * math.atanh(1.0 - self.eps)

    def project(self, x) -> torch.Tensor:
        x = as_tensor(x)
        if not torch.isfinite(x).all():
            raise ValueError("non-finite coordinates cannot be projected")
        norm = safe_norm(x)
        scale = torch.where(norm > self.max_norm, self.max_norm / norm, torch.ones_like(norm))
        return x * scale

    def conformal_factor(self, x) -> torch.Tensor:
        x = as_tensor(x)
        return 2.0 / (1.0 - self.c * (x * x).sum(dim=-1, keepdim=True))

    def _add(self, x, y) -> torch.Tensor:
        """Möbius addition without the boundary clamp.

        Used for internal gyrovectors such as ``(-x) + y`` whose radius can
        reach twice the clamp radius; ball-valued results go through ``project``.
        """
        x, y = as_tensor(x), as_tensor(y)
        _check_dims(x, y)
        c = self.c
        xy = (x * y).sum(dim=-1, keepdim=True)
        x2 = (x * x).sum(dim=-1, keepdim=True)
        y2 = (y * y).sum(dim=-1, keepdim=True)
        num = (1 + 2 * c * xy + c * y2) * x + (1 - c * x2) * y
        den = 1 + 2 * c * xy + c * c * x2 * y2
        out = num / den.clamp_min(MIN_NORM)
        # (-x) + x = 0 exactly, not up to the rounding of the two coefficients
        return _zero_where((x == -y).all(dim=-1, keepdim=True), out)

    def mobius_add(self, x, y) -> torch.Tensor:
        return self.project(self._add(x, y))

    def mobius_scalar_mul(self, t, x) -> torch.Tensor:
        x = as_tensor(x)
        t = as_tensor(t)
        if t.dim() > 0:
            t = t.unsqueeze(-1)
        norm = safe_norm(x)
        out = torch.tanh(t * artanh(self.sqrt_c * norm)) * x / (self.sqrt_c * norm)
        return self.project(out)

    def expmap(self, base, v) -> torch.Tensor:
        base, v = as_tensor(base), as_tensor(v)
        _check_dims(base, v)
        norm = safe_norm(v)
        lam = self.conformal_factor(base)
        second = torch.tanh(self.sqrt_c * lam * norm / 2) * v / (self.sqrt_c * norm)
        return self.mobius_add(base, second)

    def logmap(self, base, y) -> torch.Tensor:
        base, y = as_tensor(base), as_tensor(y)
        _check_dims(base, y)
        sub = self._add(-base, y)
        norm = safe_norm(sub)
        lam = self.conformal_factor(base)
        out = 2 / (self.sqrt_c * lam) * artanh(self.sqrt_c * norm) * sub / norm
        return out

    def expmap0(self, v) -> torch.Tensor:
        v = as_tensor(v)
        norm = safe_norm(v)
        return self.project(torch.tanh(self.sqrt_c * norm) * v / (self.sqrt_c * norm))

    def logmap0(self, y) -> torch.Tensor:
        y = as_tensor(y)
        norm = safe_norm(y)
        return artanh(self.sqrt_c * norm) * y / (self.sqrt_c * norm)

    def distance(self, x, y) -> torch.Tensor:
        """Closed-form distance: arcosh(1 + 2c||x-y||^2 / ((1-c||x||^2)(1-c||y||^2))) / sqrt c."""
        x, y = as_tensor(x), as_tensor(y)
        _check_dims(x, y)
        c = self.c
        diff2 = ((x - y) ** 2).sum(dim=-1)
        den = (1 - c * (x * x).sum(dim=-1)) * (1 - c * (y * y).sum(dim=-1))
        arg = 2 * c * diff2 / den
        # acosh(1 + a) = log1p(a + sqrt(a (a + 2))); the sqrt is guarded for a = 0
        root = torch.sqrt((arg * (arg + 2)).clamp_min(MIN_NORM * MIN_NORM))
        root = torch.where(arg > 0, root, torch.zeros_like(root))
        return torch.log1p(arg + root) / self.sqrt_c

    def distance_gyro(self, x, y) -> torch.Tensor:
        """Gyrovector form ``(2/sqrt c) artanh(sqrt c ||(-x) + y||)``."""
        sub = self._add(-as_tensor(x), y)
        return 2 / self.sqrt_c * artanh(self.sqrt_c * safe_norm(sub, keepdim=False))

    def radius(self, x) -> torch.Tensor:
        x = as_tensor(x)
        norm = safe_norm(x, keepdim=False)
        r = 2 / self.sqrt_c * artanh(self.sqrt_c * norm)
        return torch.where(norm > MIN_NORM, r, torch.zeros_like(r))

    def geodesic(self, x, y, t, extrapolate: bool = False) -> torch.Tensor:
        """Point at fraction ``t`` of the geodesic from ``x`` to ``y``."""
        t_arr = as_tensor(t)
        if not extrapolate and ((t_arr < 0).any() or (t_arr > 1).any()):
            raise ValueError(f"geodesic fraction must lie in [0, 1], got {t}")
        x = as_tensor(x)
        if t_arr.dim() > 0:
            t_arr = t_arr.unsqueeze(-1)
        # t (x) ((-x) + y) without clamping the intermediate gyrovector
        direction = self._add(-x, y)
        norm = safe_norm(direction)
        step = torch.tanh(t_arr * artanh(self.sqrt_c * norm)) * direction / (self.sqrt_c * norm)
        return self.mobius_add(x, step)

    def rescale_to_radius(self, x, r) -> torch.Tensor:
        x = as_tensor(x)
        r = as_tensor(r)
        if (r < 0).any() or (r > self.max_radius + 1e-12).any():
            raise ValueError(f"target radius must lie in [0, {self.max_radius}], got {r}")
        if (safe_norm(x, keepdim=False) <= MIN_NORM).any():
            raise ValueError("cannot rescale the origin: direction undefined")
        return self.mobius_scalar_mul(r / self.radius(x), x)
