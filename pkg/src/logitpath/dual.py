"""Forward-mode dual numbers and overflow-safe logistic primitives.

A Dual carries a value and a derivative with respect to one scalar seed.
Pushing Dual(x, 1.0) through the marginal-logit evaluators yields exact
analytic derivatives without any finite differencing.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit as _np_expit


class Dual:
    """value + derivative pair with arithmetic closed under +, -, *."""

    __slots__ = ("val", "dot")

    def __init__(self, val: float, dot: float = 0.0):
        self.val = float(val)
        self.dot = float(dot)

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.dot + other.dot)
        return Dual(self.val + other, self.dot)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, -self.dot)

    def __sub__(self, other):
        return self + (-other if isinstance(other, Dual) else -other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val,
                        self.dot * other.val + self.val * other.dot)
        return Dual(self.val * other, self.dot * other)

    __rmul__ = __mul__

    def __repr__(self):
        return f"Dual({self.val!r}, {self.dot!r})"


def value(t):
    """Strip a Dual down to its value; pass plain numbers through."""
    return t.val if isinstance(t, Dual) else float(t)


def _softplus_float(t: float) -> float:
    # log(1 + e^t) without overflow: max(t, 0) + log1p(e^{-|t|})
    return max(t, 0.0) + math.log1p(math.exp(-abs(t)))


def _expit_float(t: float) -> float:
    if t >= 0.0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def softplus(t):
    """log(1 + exp(t)) for floats, numpy arrays, or Duals."""
    if isinstance(t, Dual):
        return Dual(_softplus_float(t.val), _expit_float(t.val) * t.dot)
    if isinstance(t, np.ndarray):
        return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))
    return _softplus_float(float(t))


def expit(t):
    """Logistic function for floats, numpy arrays, or Duals."""
    if isinstance(t, Dual):
        p = _expit_float(t.val)
        return Dual(p, p * (1.0 - p) * t.dot)
    if isinstance(t, np.ndarray):
        return _np_expit(t)
    return _expit_float(float(t))
