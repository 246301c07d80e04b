"""Adaptive Gauss-Kronrod (15/31 point) quadrature."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

__all__ = [
    "QuadratureSpec",
    "QuadratureError",
    "kronrod_rule",
    "gauss_kronrod",
    "gauss_legendre",
]


class QuadratureError(RuntimeError):
    """Adaptive integration stopped before reaching the requested tolerance."""

    def __init__(self, message, value, error_estimate):
        super().__init__(f"{message} (value={value!r}, error estimate={error_estimate:.3e})")
        self.value = value
        self.error_estimate = error_estimate


@dataclass(frozen=True)
class QuadratureSpec:
    rel_tol: float = 1e-12
    abs_tol: float = 1e-13
    max_subdivisions: int = 200
    lower_truncation: float = -8.0

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")
        if self.lower_truncation > -8.0:
            raise ValueError("lower_truncation must be <= -8 standard deviations")


def _legendre_recurrence(n):
    # monic Legendre: alpha_k = 0, beta_0 = 2, beta_k = k^2 / (4k^2 - 1)
    k = np.arange(n, dtype=float)
    beta = np.empty(n)
    beta[0] = 2.0
    beta[1:] = k[1:] ** 2 / (4.0 * k[1:] ** 2 - 1.0)
    return np.zeros(n), beta


def _golub_welsch(alpha, beta):
    jac = np.diag(alpha) + np.diag(np.sqrt(beta[1:]), 1) + np.diag(np.sqrt(beta[1:]), -1)
    nodes, vecs = np.linalg.eigh(jac)
    return nodes, beta[0] * vecs[0, :] ** 2


def _kronrod_recurrence(n, a0, b0):
    """Laurie's algorithm for the Jacobi-Kronrod matrix (1-based indexing kept internally)."""
    a = np.zeros(2 * n + 2)
    b = np.zeros(2 * n + 2)
    ka = math.floor(3 * n / 2) + 1
    kb = math.ceil(3 * n / 2) + 1
    a[1 : ka + 1] = a0[:ka]
    b[1 : kb + 1] = b0[:kb]
    size = n // 2 + 3
    s = np.zeros(size)
    t = np.zeros(size)
    t[2] = b[n + 2]
    for m in range(n - 1):
        u = 0.0
        for k in range((m + 1) // 2, -1, -1):
            l = m - k
            u += (a[k + n + 2] - a[l + 1]) * t[k + 2] + b[k + n + 2] * s[k + 1] - b[l + 1] * s[k + 2]
            s[k + 2] = u
        s, t = t, s
    for j in range(n // 2, -1, -1):
        s[j + 2] = s[j + 1]
    for m in range(n - 1, 2 * n - 2):
        u = 0.0
        j = 0
        for k in range(m + 1 - n, (m - 1) // 2 + 1):
            l = m - k
            j = n - 1 - l
            u += -(a[k + n + 2] - a[l + 1]) * t[j + 2] - b[k + n + 2] * s[j + 2] + b[l + 1] * s[j + 3]
            s[j + 2] = u
        k = (m + 1) // 2
        if m % 2 == 0:
            a[k + n + 2] = a[k + 1] + (s[j + 2] - b[k + n + 2] * s[j + 3]) / t[j + 3]
        else:
            b[k + n + 2] = s[j + 2] / s[j + 3]
        s, t = t, s
    a[2 * n + 1] = a[n] - b[2 * n + 1] * s[2] / t[2]
    return a[1:], b[1:]


@lru_cache(maxsize=None)
def gauss_legendre(n: int):
    """``n``-point Gauss-Legendre nodes and weights on ``[-1, 1]``."""
    nodes, weights = np.polynomial.legendre.leggauss(n)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


@lru_cache(maxsize=None)
def kronrod_rule(n: int = 15):
    """Nodes of the ``2n+1`` point Kronrod extension with both weight sets.

    Returns ``(nodes, kronrod_weights, gauss_weights)``; ``gauss_weights`` is zero at
    the Kronrod-only nodes.
    """
    a0, b0 = _legendre_recurrence(math.ceil(3 * n / 2) + 1)
    a, b = _kronrod_recurrence(n, a0, b0)
    nodes, kweights = _golub_welsch(a, b)
    # symmetrise against round-off
    nodes = 0.5 * (nodes - nodes[::-1])
    kweights = 0.5 * (kweights + kweights[::-1])
    gnodes, gweights_only = gauss_legendre(n)
    gweights = np.zeros_like(kweights)
    for x, w in zip(gnodes, gweights_only):
        idx = int(np.argmin(np.abs(nodes - x)))
        gweights[idx] = w
    for arr in (nodes, kweights, gweights):
        arr.setflags(write=False)
    return nodes, kweights, gweights


def _panel(f, a, b):
    nodes, kw, gw = kronrod_rule(15)
    half = 0.5 * (b - a)
    center = 0.5 * (a + b)
    fx = np.asarray(f(center + half * nodes), dtype=float)
    if fx.shape != nodes.shape:
        fx = np.broadcast_to(fx, nodes.shape)
    if not np.all(np.isfinite(fx)):
        raise ValueError(f"integrand not finite on [{a}, {b}]")
    kronrod = half * float(kw @ fx)
    gauss = half * float(gw @ fx)
    mean = kronrod / (2.0 * half) if half else 0.0
    resasc = abs(half) * float(kw @ np.abs(fx - mean))
    err = abs(kronrod - gauss)
    if resasc != 0.0 and err != 0.0:
        err = resasc * min(1.0, (200.0 * err / resasc) ** 1.5)
    resabs = abs(half) * float(kw @ np.abs(fx))
    eps = np.finfo(float).eps
    if resabs > np.finfo(float).tiny / (50 * eps):
        err = max(err, 50 * eps * resabs)
    return kronrod, err


def gauss_kronrod(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    quad: QuadratureSpec | None = None,
) -> tuple[float, float]:
    """Globally adaptive 15/31-point Gauss-Kronrod integration of ``f`` over ``[a, b]``.

    ``f`` must accept an array of abscissae. The worst panel is bisected until the
    summed error estimate is below ``max(abs_tol, rel_tol * |value|)``.

    Returns
    -------
    value, error_estimate
    """
    quad = quad or QuadratureSpec()
    if a == b:
        return 0.0, 0.0
    if b < a:
        value, err = gauss_kronrod(f, b, a, quad)
        return -value, err
    value, err = _panel(f, a, b)
    heap = [(-err, a, b, value)]
    total, total_err = value, err
    subdivisions = 1
    while total_err > max(quad.abs_tol, quad.rel_tol * abs(total)):
        if subdivisions >= quad.max_subdivisions:
            raise QuadratureError("maximum number of subdivisions exceeded", total, total_err)
        neg_err, lo, hi, val = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        v1, e1 = _panel(f, lo, mid)
        v2, e2 = _panel(f, mid, hi)
        heapq.heappush(heap, (-e1, lo, mid, v1))
        heapq.heappush(heap, (-e2, mid, hi, v2))
        subdivisions += 1
        total = sum(item[3] for item in heap)
        total_err = sum(-item[0] for item in heap)
    return total, total_err
