"""Basis functions, design matrices and the least-squares solver of the dual regression.

Two feature families are used at every exercise date ``i``:

* continuation features ``psi_k(i, X_i)``, functions of the state at ``T_i``;
* martingale features ``m_k = sum_s phi_k(s, X_s) dW_s`` over the fine steps of
  ``[T_i, T_{i+1}]``, Euler sums of adapted integrands against the batch's own
  Brownian increments (left endpoint, so they are martingale increments).

Regressing the pathwise dual value ``theta_{i+1}`` on both families gives the
martingale increment ``xi = sum beta_k m_k`` and the continuation estimate
``sum gamma_k psi_k``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .european import basket_put_batch, max_call_batch
from .stochastic import GbmModel, PathBatch, TimeGrid

__all__ = [
    "FeatureGroup",
    "BasisSet",
    "default_basis",
    "european_pricer",
    "DesignBlock",
    "RegressionFit",
    "LeastSquaresRegressor",
    "assemble_block",
    "martingale_features",
    "solve_least_squares",
    "evaluate_continuation",
]


# --------------------------------------------------------------------------- basis


@dataclass(frozen=True)
class FeatureGroup:
    """A named block of features.

    For ``kind="psi"`` ``evaluate(i, x)`` maps states ``(n, D)`` at ``T_i`` to ``(n, width)``.
    For ``kind="phi"`` ``evaluate(i, t, x)`` maps fine-grid times ``t`` (shape ``(L,)``)
    and states ``(n, L, D)`` to integrands ``(n, L, D)``; the group contributes one
    martingale feature per Brownian component, ``sum_s f^d(s, X_s) dW^d_s``.
    """

    name: str
    kind: str
    width: int
    evaluate: Callable
    active: Callable[[int], bool] = lambda i: True
    labels: tuple = ()

    def __post_init__(self):
        if self.kind not in ("psi", "phi"):
            raise ValueError(f"feature group kind must be 'psi' or 'phi', got {self.kind!r}")
        if self.width < 1:
            raise ValueError(f"feature group {self.name!r} has no columns")

    def column_names(self):
        if self.labels:
            return [f"{self.name}:{lab}" for lab in self.labels]
        return [f"{self.name}[{k}]" for k in range(self.width)]


@dataclass(frozen=True)
class BasisSet:
    """Continuation (``psi``) and martingale-integrand (``phi``) feature groups on a grid."""

    grid: TimeGrid
    dimension: int
    groups: tuple
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        names = [g.name for g in self.groups]
        if len(set(names)) != len(names):
            raise ValueError(f"feature group names must be unique, got {names}")
        for g in self.groups:
            if g.kind == "phi" and g.width != self.dimension:
                raise ValueError(f"phi group {g.name!r} must have one column per Brownian component")

    def psi_groups(self, i: int):
        return [g for g in self.groups if g.kind == "psi" and g.active(i)]

    def phi_groups(self, i: int):
        return [g for g in self.groups if g.kind == "phi" and g.active(i)]

    def psi_names(self, i: int) -> list:
        return [n for g in self.psi_groups(i) for n in g.column_names()]

    def phi_names(self, i: int) -> list:
        return [n for g in self.phi_groups(i) for n in g.column_names()]

    def n_psi(self, i: int) -> int:
        return sum(g.width for g in self.psi_groups(i))

    def n_phi(self, i: int) -> int:
        return sum(g.width for g in self.phi_groups(i))

    def psi(self, i: int, x: np.ndarray) -> np.ndarray:
        """Continuation features at exercise date ``i`` for states ``x`` of shape ``(n, D)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        blocks = [np.asarray(g.evaluate(i, x), dtype=float).reshape(x.shape[0], g.width) for g in self.psi_groups(i)]
        if not blocks:
            return np.empty((x.shape[0], 0))
        return np.concatenate(blocks, axis=1)

    def describe(self) -> dict:
        """JSON-friendly description used for hashing serialized coefficients."""
        return {
            "spec": dict(sorted(self.spec.items())),
            "dimension": self.dimension,
            "grid": [self.grid.maturity, self.grid.exercise_count, self.grid.substeps],
            "groups": [[g.name, g.kind, g.width] for g in self.groups],
        }


def european_pricer(model: GbmModel) -> Callable:
    """``(x, tau) -> (price, deltas)`` for the European counterpart of ``model``'s payoff."""
    if model.payoff == "basket_put":
        if model.dividend != 0.0:
            raise ValueError("the moment-matched basket put basis assumes a zero dividend yield")
        return lambda x, tau: basket_put_batch(x, model.strike, model.rate, model.sigma, tau)
    return lambda x, tau: max_call_batch(x, model.strike, model.rate, model.dividend, model.sigma, tau)


def _monomial_exponents(dimension: int, degree: int, cross_terms: bool):
    if not cross_terms:
        return [tuple(p if k == d else 0 for k in range(dimension)) for p in range(1, degree + 1) for d in range(dimension)]
    out = []
    for total in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(dimension), total):
            out.append(tuple(combo.count(d) for d in range(dimension)))
    return out


def _monomials(x, exponents):
    cols = np.ones((x.shape[0], len(exponents)))
    for k, expo in enumerate(exponents):
        for d, p in enumerate(expo):
            if p:
                cols[:, k] *= x[:, d] ** p
    return cols


def default_basis(model: GbmModel, grid: TimeGrid, degree: int = 3, cross_terms: bool = False) -> BasisSet:
    """Polynomial-plus-European basis for the basket put or the max-call.

    ``psi`` at date ``1 <= i < J``: constant, monomials of the state up to ``degree``
    (per component unless ``cross_terms``), and powers ``1..degree`` of the European
    price expiring at the next exercise date and at maturity. At ``i = J - 1`` the two
    maturities coincide and the final-maturity powers are dropped; at ``i = 0`` the
    state is deterministic and only the constant is kept.

    ``phi``: the constant integrand (raw increments ``dW^d``) and the discounted
    ``X^d dEP/dX^d`` for the next-date and final maturities, again dropping the final
    block at ``J - 1``.
    """
    if degree < 1:
        raise ValueError("degree must be >= 1")
    if model.dimension < 1:
        raise ValueError("dimension must be >= 1")
    pricer = european_pricer(model)
    J = grid.exercise_count
    D = model.dimension
    times = grid.exercise_times
    r = model.rate
    exps = _monomial_exponents(D, degree, cross_terms)
    powers = np.arange(1, degree + 1)

    def ep_powers(maturity_of):
        def evaluate(i, x):
            price, _ = pricer(x, times[maturity_of(i)] - times[i])
            return price[:, None] ** powers[None, :]

        return evaluate

    def delta_integrand(maturity_of):
        def evaluate(i, t, x):
            tau = times[maturity_of(i)] - t
            _, deltas = pricer(x, np.broadcast_to(tau, x.shape[:-1]))
            return np.exp(-r * t)[None, :, None] * x * deltas

        return evaluate

    next_date = lambda i: i + 1  # noqa: E731
    final_date = lambda i: J  # noqa: E731
    groups = (
        FeatureGroup("const", "psi", 1, lambda i, x: np.ones((x.shape[0], 1)), labels=("1",)),
        FeatureGroup(
            "poly",
            "psi",
            len(exps),
            lambda i, x: _monomials(x, exps),
            active=lambda i: i >= 1,
            labels=tuple("*".join(f"x{d}^{p}" for d, p in enumerate(e) if p) for e in exps),
        ),
        FeatureGroup(
            "ep_next", "psi", degree, ep_powers(next_date), active=lambda i: 1 <= i < J, labels=tuple(f"EP^{p}" for p in powers)
        ),
        FeatureGroup(
            "ep_final", "psi", degree, ep_powers(final_date), active=lambda i: 1 <= i < J - 1, labels=tuple(f"EP^{p}" for p in powers)
        ),
        FeatureGroup("dW", "phi", D, lambda i, t, x: np.ones_like(x), labels=tuple(f"d{d}" for d in range(D))),
        FeatureGroup("delta_next", "phi", D, delta_integrand(next_date), labels=tuple(f"d{d}" for d in range(D))),
        FeatureGroup(
            "delta_final",
            "phi",
            D,
            delta_integrand(final_date),
            active=lambda i: i < J - 1,
            labels=tuple(f"d{d}" for d in range(D)),
        ),
    )
    spec = {
        "payoff": model.payoff,
        "degree": degree,
        "cross_terms": bool(cross_terms),
        "model": [model.dimension, model.rate, model.dividend, model.sigma, model.strike, list(model.spot)],
    }
    return BasisSet(grid, D, groups, spec)


# --------------------------------------------------------------------------- design


def martingale_features(basis: BasisSet, i: int, states: np.ndarray, increments: np.ndarray) -> np.ndarray:
    """Euler sums ``sum_s phi(s, X_s) dW_s`` over interval ``[T_i, T_{i+1}]``.

    ``states`` is the full fine-grid state array ``(n, N + 1, D)`` and ``increments``
    the matching ``(n, N, D)``; only steps of interval ``i`` are read, with the
    integrand evaluated at the left end of each step.
    """
    grid = basis.grid
    sl = grid.interval_steps(i)
    x_left = states[:, sl, :]
    dw = increments[:, sl, :]
    t_left = grid.times[sl]
    blocks = []
    for g in basis.phi_groups(i):
        integrand = np.asarray(g.evaluate(i, t_left, x_left), dtype=float)
        blocks.append(np.einsum("nld,nld->nd", integrand, dw))
    if not blocks:
        return np.empty((states.shape[0], 0))
    return np.concatenate(blocks, axis=1)


@dataclass(frozen=True, eq=False)
class DesignBlock:
    """Regression inputs for one exercise date.

    ``mart`` holds the martingale features of interval ``[T_i, T_{i+1}]``, ``psi``
    the continuation features at ``T_i`` and ``response`` the dual value ``theta_{i+1}``.
    """

    date: int
    mart: np.ndarray
    psi: np.ndarray
    response: np.ndarray
    weights: np.ndarray | None = None
    mart_names: tuple = ()
    psi_names: tuple = ()

    def __post_init__(self):
        n = self.response.shape[0]
        if self.mart.ndim != 2 or self.psi.ndim != 2:
            raise ValueError("feature blocks must be two-dimensional")
        if self.mart.shape[0] != n or self.psi.shape[0] != n:
            raise ValueError(
                f"dimension mismatch: response has {n} rows, features {self.mart.shape[0]} and {self.psi.shape[0]}"
            )
        if self.weights is not None and self.weights.shape != (n,):
            raise ValueError("weights must have one entry per path")

    @property
    def n_samples(self) -> int:
        return self.response.shape[0]

    @property
    def design(self) -> np.ndarray:
        return np.concatenate([self.mart, self.psi], axis=1)

    def mean_zero_scores(self) -> np.ndarray:
        """``mean / (sd / sqrt(n))`` of every martingale feature (0 for constant columns)."""
        if self.mart.shape[1] == 0 or self.n_samples < 2:
            return np.zeros(self.mart.shape[1])
        mean = self.mart.mean(axis=0)
        sd = self.mart.std(axis=0, ddof=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = mean / (sd / np.sqrt(self.n_samples))
        return np.where(sd > 0, z, 0.0)


def assemble_block(batch: PathBatch, basis: BasisSet, i: int, theta_next: np.ndarray) -> DesignBlock:
    """Design block for exercise date ``i`` from a simulated batch."""
    if basis.grid != batch.grid:
        raise ValueError("basis and batch are defined on different time grids")
    if batch.dimension != basis.dimension:
        raise ValueError(f"batch dimension {batch.dimension} != basis dimension {basis.dimension}")
    theta_next = np.asarray(theta_next, dtype=float)
    if theta_next.shape != (batch.n_paths,):
        raise ValueError(f"theta_next has shape {theta_next.shape}, expected ({batch.n_paths},)")
    if not 0 <= i < basis.grid.exercise_count:
        raise IndexError(f"exercise date {i} outside 0..{basis.grid.exercise_count - 1}")
    x_i = batch.states[:, basis.grid.fine_index(i), :]
    return DesignBlock(
        date=i,
        mart=martingale_features(basis, i, batch.states, batch.increments),
        psi=basis.psi(i, x_i),
        response=theta_next,
        weights=batch.weights,
        mart_names=tuple(basis.phi_names(i)),
        psi_names=tuple(basis.psi_names(i)),
    )


# --------------------------------------------------------------------------- solver


class LeastSquaresRegressor(RegressorMixin, BaseEstimator):
    """Rank-revealing linear least squares with optional ridge and sample weights.

    The solve uses a complete orthogonal decomposition with column pivoting
    (LAPACK ``gelsy``), so rank-deficient designs get the minimum-norm solution.
    With ``standardize=True`` columns are scaled to unit root-mean-square and, when
    the design has a constant column and ``ridge == 0``, centred as well; the
    reported ``coef_`` is in the original units. The minimum-norm property then
    refers to the standardized coordinates.

    Parameters
    ----------
    ridge : float
        Penalty ``ridge * |coef|^2`` added to the residual sum of squares.
    standardize : bool
        Scale (and centre) columns before solving.
    rcond : float
        Relative singular-value cutoff used for rank detection.
    """

    def __init__(self, ridge: float = 0.0, standardize: bool = True, rcond: float = 1e-12):
        self.ridge = ridge
        self.standardize = standardize
        self.rcond = rcond

    def fit(self, X, y, sample_weight=None):
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        X, y = check_X_y(X, y, dtype=float, y_numeric=True, ensure_min_features=0)
        n, p = X.shape
        if sample_weight is None:
            sw = np.ones(n)
        else:
            sw = np.asarray(sample_weight, dtype=float)
            if sw.shape != (n,) or np.any(sw < 0):
                raise ValueError("sample_weight must be a non-negative vector with one entry per row")
        root = np.sqrt(sw)
        self.n_features_in_ = p
        wsum = sw.sum()
        col_rms = np.sqrt((sw @ np.square(X)) / wsum) if p else np.zeros(0)
        if p == 0 or not np.any(col_rms > 0):
            self.coef_ = np.zeros(p)
            self.rank_ = 0
            self.rss_ = float(sw @ np.square(y))
            return self

        shift = np.zeros(p)
        scale = np.ones(p)
        if self.standardize:
            mean = (sw @ X) / wsum
            is_const = np.all(X == X[:1], axis=0) & (col_rms > 0)
            const_cols = np.flatnonzero(is_const)
            if const_cols.size and self.ridge == 0:
                shift = np.where(is_const, 0.0, mean)
            centred_sq = (sw @ np.square(X - shift)) / wsum
            scale = np.sqrt(centred_sq)
            scale[scale == 0] = 1.0
        A = (X - shift) / scale * root[:, None]
        b = y * root
        if self.ridge > 0:
            A = np.vstack([A, np.sqrt(self.ridge) * np.diag(1.0 / scale)])
            b = np.concatenate([b, np.zeros(p)])
        z, _, rank, _ = linalg.lstsq(A, b, cond=self.rcond, lapack_driver="gelsy")
        coef = z / scale
        if np.any(shift != 0):
            const = const_cols[0]
            coef[const] -= (shift @ coef) / X[0, const]
        if not np.all(np.isfinite(coef)):
            raise FloatingPointError("least-squares solution is not finite")
        self.coef_ = coef
        self.rank_ = int(rank)
        resid = y - X @ coef
        self.rss_ = float(sw @ np.square(resid))
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float, ensure_min_features=0)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_


@dataclass(frozen=True, eq=False)
class RegressionFit:
    """Coefficients of one date: ``beta`` on martingale features, ``gamma`` on ``psi``."""

    beta: np.ndarray
    gamma: np.ndarray
    rss: float
    rank: int
    ridge: float
    n_samples: int = 0

    def increment(self, mart: np.ndarray) -> np.ndarray:
        return mart @ self.beta

    def continuation(self, psi: np.ndarray) -> np.ndarray:
        return psi @ self.gamma


def solve_least_squares(block: DesignBlock, ridge: float = 0.0, standardize: bool = True, rcond: float = 1e-12) -> RegressionFit:
    """Fit ``theta_{i+1} ~ sum beta_k m_k + sum gamma_k psi_k`` for one design block."""
    if block.n_samples < 1:
        raise ValueError("need at least one sample")
    est = LeastSquaresRegressor(ridge=ridge, standardize=standardize, rcond=rcond)
    est.fit(block.design, block.response, sample_weight=block.weights)
    k = block.mart.shape[1]
    return RegressionFit(
        beta=est.coef_[:k].copy(),
        gamma=est.coef_[k:].copy(),
        rss=est.rss_,
        rank=est.rank_,
        ridge=float(ridge),
        n_samples=block.n_samples,
    )


def evaluate_continuation(gamma, basis: BasisSet, i: int, state) -> np.ndarray | float:
    """Continuation estimate ``sum gamma_k psi_k(i, x)``; identically 0 at maturity."""
    state = np.asarray(state, dtype=float)
    single = state.ndim == 1
    x = np.atleast_2d(state)
    if i == basis.grid.exercise_count:
        out = np.zeros(x.shape[0])
    else:
        gamma = np.asarray(gamma, dtype=float)
        if gamma.shape != (basis.n_psi(i),):
            raise ValueError(f"gamma has {gamma.size} entries, basis has {basis.n_psi(i)} at date {i}")
        out = basis.psi(i, x) @ gamma
    return float(out[0]) if single else out
