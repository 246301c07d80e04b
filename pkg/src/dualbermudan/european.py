"""European prices and deltas: Black-Scholes, moment-matched basket put, max-call.

The scalar functions return :class:`EuropeanQuote` objects and are meant as
validation oracles. ``basket_put_batch`` and ``max_call_batch`` evaluate the same
quantities for large arrays of states and are what the regression basis uses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .quadrature import QuadratureSpec, gauss_kronrod, gauss_legendre

__all__ = [
    "EuropeanQuote",
    "norm_cdf",
    "norm_pdf",
    "bs_put",
    "bs_call",
    "basket_moments",
    "matched_moments",
    "moment_match_parameters",
    "basket_put_moment_match",
    "basket_put_batch",
    "max_call_price",
    "max_call_deltas",
    "max_call_batch",
]

_SQRT2PI = math.sqrt(2.0 * math.pi)

norm_cdf = ndtr


def norm_pdf(z):
    return np.exp(-0.5 * np.square(z)) / _SQRT2PI


@dataclass(frozen=True)
class EuropeanQuote:
    price: float | np.ndarray
    deltas: np.ndarray
    t: float
    maturity: float


def _quote(price, delta, t, tau) -> EuropeanQuote:
    price = float(price) if np.ndim(price) == 0 else np.asarray(price)
    return EuropeanQuote(price, np.atleast_1d(np.asarray(delta, dtype=float)), t, t + np.asarray(tau))


def _check_positive(**kwargs):
    for name, value in kwargs.items():
        if np.any(np.asarray(value) <= 0):
            raise ValueError(f"{name} must be positive")


def _bs_put_arrays(spot, strike, r, sigma, tau, dividend=0.0):
    spot = np.asarray(spot, dtype=float)
    tau = np.asarray(tau, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        vol = sigma * np.sqrt(tau)
        d1 = (np.log(spot / strike) + (r - dividend + 0.5 * sigma**2) * tau) / vol
        d2 = d1 - vol
        price = strike * np.exp(-r * tau) * ndtr(-d2) - spot * np.exp(-dividend * tau) * ndtr(-d1)
        delta = -np.exp(-dividend * tau) * ndtr(-d1)
    expired = tau <= 0
    if np.any(expired):
        price = np.where(expired, np.maximum(strike - spot, 0.0), price)
        delta = np.where(expired, np.where(spot < strike, -1.0, 0.0), delta)
    return price, delta


def bs_put(spot, strike, r, sigma, tau, t: float = 0.0) -> EuropeanQuote:
    """Black-Scholes put. At ``tau == 0`` the intrinsic value is returned with delta -1 or 0."""
    _check_positive(spot=spot, strike=strike, sigma=sigma)
    if np.any(np.asarray(tau) < 0):
        raise ValueError("tau must be non-negative")
    price, delta = _bs_put_arrays(spot, strike, r, sigma, tau)
    return _quote(price, delta, t, tau)


def bs_call(spot, strike, r, sigma, tau, dividend: float = 0.0, t: float = 0.0) -> EuropeanQuote:
    """Black-Scholes call with continuous dividend yield."""
    _check_positive(spot=spot, strike=strike, sigma=sigma)
    spot = np.asarray(spot, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("tau must be non-negative")
    with np.errstate(divide="ignore", invalid="ignore"):
        vol = sigma * np.sqrt(tau)
        d1 = (np.log(spot / strike) + (r - dividend + 0.5 * sigma**2) * tau) / vol
        d2 = d1 - vol
        price = spot * np.exp(-dividend * tau) * ndtr(d1) - strike * np.exp(-r * tau) * ndtr(d2)
        delta = np.exp(-dividend * tau) * ndtr(d1)
    expired = tau <= 0
    if np.any(expired):
        price = np.where(expired, np.maximum(spot - strike, 0.0), price)
        delta = np.where(expired, np.where(spot > strike, 1.0, 0.0), delta)
    return _quote(price, delta, t, tau)


def basket_moments(spots, r, sigma, tau):
    """First two moments of the arithmetic basket average at horizon ``tau``."""
    x = np.asarray(spots, dtype=float)
    d = x.shape[-1]
    total = x.sum(axis=-1)
    m1 = total / d * np.exp(r * tau)
    cross = total**2 + np.square(x).sum(axis=-1) * np.expm1(sigma**2 * tau)
    m2 = cross / d**2 * np.exp(2 * r * tau)
    return m1, m2


def moment_match_parameters(spots, sigma, tau):
    """Spot ``G0`` and volatility of the lognormal proxy matching the basket's two moments."""
    x = np.asarray(spots, dtype=float)
    total = x.sum(axis=-1)
    g0 = total / x.shape[-1]
    ratio = np.square(x).sum(axis=-1) / total**2
    with np.errstate(divide="ignore", invalid="ignore"):
        var = np.log1p(ratio * np.expm1(sigma**2 * np.asarray(tau, dtype=float)))
        sigma_tilde = np.sqrt(var / tau)
    return g0, sigma_tilde


def matched_moments(g0, sigma_tilde, r, tau):
    """``E[G_T]`` and ``E[G_T^2]`` of the proxy asset."""
    return g0 * np.exp(r * tau), g0**2 * np.exp(2 * r * tau + sigma_tilde**2 * tau)


def basket_put_batch(spots, strike, r, sigma, tau):
    """Moment-matched basket put prices and (approximate) deltas for arrays of states.

    ``spots`` has the assets on its last axis, ``tau`` broadcasts against the rest.
    Returns ``price`` with the leading shape and ``deltas`` with the shape of ``spots``.
    """
    x = np.asarray(spots, dtype=float)
    d = x.shape[-1]
    tau = np.asarray(tau, dtype=float)
    total = x.sum(axis=-1)
    g0 = total / d
    var = np.log1p(np.square(x).sum(axis=-1) / total**2 * np.expm1(sigma**2 * tau))
    with np.errstate(divide="ignore", invalid="ignore"):
        vol = np.sqrt(var)
        d1 = (np.log(g0 / strike) + r * tau + 0.5 * var) / vol
        d2 = d1 - vol
        disc_k = strike * np.exp(-r * tau)
        price = disc_k * ndtr(-d2) - g0 * ndtr(-d1)
        delta = -ndtr(-d1) / d
    expired = np.broadcast_to(tau <= 0, price.shape)
    if np.any(expired):
        price = np.where(expired, np.maximum(strike - g0, 0.0), price)
        delta = np.where(expired, np.where(g0 < strike, -1.0 / d, 0.0), delta)
    deltas = np.broadcast_to(delta[..., None], x.shape)
    return price, deltas


def basket_put_moment_match(spots, strike, r, sigma, tau, t: float = 0.0) -> EuropeanQuote:
    """Basket put priced as a Black-Scholes put on the moment-matched lognormal proxy.

    Deltas are the chain-rule approximation ``-N(-d1) / D`` for every asset.
    """
    _check_positive(spots=spots, strike=strike, sigma=sigma)
    if np.any(np.asarray(tau) < 0):
        raise ValueError("tau must be non-negative")
    price, deltas = basket_put_batch(spots, strike, r, sigma, tau)
    if np.ndim(price) == 0:
        price = float(price)
    return EuropeanQuote(price, np.array(deltas), t, t + np.asarray(tau))


def _max_call_terms(spots, strike, r, dividend, sigma, tau):
    x = np.asarray(spots, dtype=float)
    vol = sigma * math.sqrt(tau)
    d_minus = (np.log(x / strike) + (r - dividend - 0.5 * sigma**2) * tau) / vol
    d_plus = d_minus + vol
    return x, vol, d_minus, d_plus


def _max_call_integrals(spots, strike, r, dividend, sigma, tau, quad):
    x, vol, _, d_plus = _max_call_terms(spots, strike, r, dividend, sigma, tau)
    lo = quad.lower_truncation
    values = np.zeros(x.size)
    for l in range(x.size):
        others = np.delete(x, l)
        shifts = np.log(x[l] / others) / vol + vol
        hi = min(d_plus[l], -lo)
        if hi <= lo:
            continue

        def integrand(z, shifts=shifts):
            z = np.asarray(z, dtype=float)
            out = norm_pdf(z)
            for c in shifts:
                out = out * ndtr(c - z)
            return out

        values[l], _ = gauss_kronrod(integrand, lo, hi, quad)
    return values


def _validate_max_call(spots, strike, sigma, tau):
    _check_positive(spots=spots, strike=strike, sigma=sigma)
    if tau < 0:
        raise ValueError("tau must be non-negative")


def max_call_price(spots, strike, r, delta_div, sigma, tau, quad: QuadratureSpec | None = None) -> float:
    """European call on the maximum of independent lognormal assets (Johnson's formula).

    One Gaussian-kernel integral per asset, evaluated by adaptive Gauss-Kronrod.
    """
    quad = quad or QuadratureSpec()
    _validate_max_call(spots, strike, sigma, tau)
    x = np.atleast_1d(np.asarray(spots, dtype=float))
    if tau == 0:
        return float(max(x.max() - strike, 0.0))
    integrals = _max_call_integrals(x, strike, r, delta_div, sigma, tau, quad)
    _, _, d_minus, _ = _max_call_terms(x, strike, r, delta_div, sigma, tau)
    disc_k = strike * math.exp(-r * tau)
    none_exercised = float(np.prod(ndtr(-d_minus)))
    return float(math.exp(-delta_div * tau) * (x @ integrals) - disc_k + disc_k * none_exercised)


def max_call_deltas(spots, strike, r, delta_div, sigma, tau, quad: QuadratureSpec | None = None) -> np.ndarray:
    """``dC/dX^l`` of the max-call, one entry per asset."""
    quad = quad or QuadratureSpec()
    _validate_max_call(spots, strike, sigma, tau)
    x = np.atleast_1d(np.asarray(spots, dtype=float))
    if tau == 0:
        out = np.zeros(x.size)
        if x.max() > strike:
            out[int(np.argmax(x))] = 1.0
        return out
    return math.exp(-delta_div * tau) * _max_call_integrals(x, strike, r, delta_div, sigma, tau, quad)


def max_call_batch(spots, strike, r, dividend, sigma, tau, nodes: int = 20, width: float = 6.5, chunk: int = 20000):
    """Vectorised max-call prices and deltas with a fixed Gauss-Legendre rule.

    Each integral is restricted to ``[-width, min(d_plus, width, min_shift + width)]``,
    outside of which the integrand is below ``pdf(width)``. Accuracy is about 5e-5
    on the deltas for ``nodes=20``, enough for regression features; use
    :func:`max_call_price` when an accurate value is needed.

    Returns ``price`` with the leading shape of ``spots`` and ``deltas`` shaped like ``spots``.
    """
    x = np.asarray(spots, dtype=float)
    lead = x.shape[:-1]
    d = x.shape[-1]
    tau_full = np.broadcast_to(np.asarray(tau, dtype=float), lead).reshape(-1)
    flat = x.reshape(-1, d)
    price = np.empty(flat.shape[0])
    deltas = np.empty_like(flat)
    t_nodes, t_weights = gauss_legendre(nodes)
    for start in range(0, flat.shape[0], chunk):
        sl = slice(start, start + chunk)
        price[sl], deltas[sl] = _max_call_chunk(
            flat[sl], tau_full[sl], strike, r, dividend, sigma, t_nodes, t_weights, width
        )
    return price.reshape(lead), deltas.reshape(x.shape)


def _max_call_chunk(x, tau, strike, r, dividend, sigma, t_nodes, t_weights, width):
    n, d = x.shape
    alive = tau > 0
    tau_safe = np.where(alive, tau, 1.0)
    vol = sigma * np.sqrt(tau_safe)
    logx = np.log(x)
    d_minus = (logx - math.log(strike) + ((r - dividend - 0.5 * sigma**2) * tau_safe)[:, None]) / vol[:, None]
    d_plus = d_minus + vol[:, None]
    integrals = np.empty((n, d))
    if d == 1:
        integrals[:, 0] = ndtr(d_plus[:, 0])
    else:
        for l in range(d):
            others = [k for k in range(d) if k != l]
            shifts = (logx[:, [l]] - logx[:, others]) / vol[:, None] + vol[:, None]
            hi = np.minimum(np.minimum(d_plus[:, l], width), shifts.min(axis=1) + width)
            lo = -width
            half = np.maximum(0.5 * (hi - lo), 0.0)
            z = (lo + half)[:, None] + half[:, None] * t_nodes[None, :]
            f = norm_pdf(z)
            for k in range(len(others)):
                f *= ndtr(shifts[:, [k]] - z)
            integrals[:, l] = half * (f @ t_weights)
    disc_div = np.exp(-dividend * tau_safe)
    disc_k = strike * np.exp(-r * tau_safe)
    deltas = disc_div[:, None] * integrals
    none_exercised = np.prod(ndtr(-d_minus), axis=1)
    price = (x * deltas).sum(axis=1) - disc_k * (1.0 - none_exercised)
    if not np.all(alive):
        dead = ~alive
        xm = x[dead]
        price[dead] = np.maximum(xm.max(axis=1) - strike, 0.0)
        dd = np.zeros_like(xm)
        itm = xm.max(axis=1) > strike
        dd[np.flatnonzero(itm), np.argmax(xm[itm], axis=1)] = 1.0
        deltas[dead] = dd
    return price, deltas
