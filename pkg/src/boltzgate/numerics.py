"""Scalar primitives and gradient-checking helpers.

All tensors in this package are float64 torch tensors; torch autograd plays
the role of the reverse-mode tape. The helpers here are the scalar
primitives shared across modules plus an independent central-difference
oracle used to check every tape gradient.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
import torch

DTYPE = torch.float64
EPS_PROB = 1e-6
NEG_MASK = -1e4


class NonFiniteError(ArithmeticError):
    """Raised when a function evaluation used for differencing is not finite."""

    def __init__(self, index: int, value: float):
        super().__init__(f"non-finite function value {value!r} at coordinate {index}")
        self.index = index
        self.value = value


def sigmoid(x: float) -> float:
    """Logistic function, stable for large |x|."""
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def logsumexp(v: Sequence[float] | np.ndarray) -> float:
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("empty reduction")
    m = float(np.max(v))
    if not math.isfinite(m):
        return m
    return m + math.log(float(np.sum(np.exp(v - m))))


def finite_diff_gradient(
    f: Callable[[np.ndarray], float], theta: Sequence[float] | np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central differences ``(f(θ+h e_i) - f(θ-h e_i)) / 2h`` for each coordinate."""
    if h <= 0:
        raise ValueError("step must be positive")
    theta = np.array(theta, dtype=np.float64).ravel()
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + h
        fp = float(f(theta.copy()))
        theta[i] = orig - h
        fm = float(f(theta.copy()))
        theta[i] = orig
        for val in (fp, fm):
            if not math.isfinite(val):
                raise NonFiniteError(i, val)
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


def tape_gradient(f: Callable[[torch.Tensor], torch.Tensor], theta) -> np.ndarray:
    """Reverse-mode gradient of a scalar torch function of a flat parameter vector."""
    x = torch.tensor(np.asarray(theta, dtype=np.float64).ravel(), requires_grad=True)
    y = f(x)
    if not (isinstance(y, torch.Tensor) and y.requires_grad):
        return np.zeros(x.numel())
    (g,) = torch.autograd.grad(y, x, allow_unused=True)
    if g is None:
        return np.zeros(x.numel())
    return g.detach().numpy().copy()


def relative_error(a, b, floor: float = 1e-6) -> float:
    """Max elementwise ``|a-b| / max(|a|, |b|, floor)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))
