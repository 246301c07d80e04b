"""Backward regression for near surely optimal dual martingales, and the two bound estimators.

Training walks the exercise dates backwards. With ``theta_J = Z_J``, at every date
``i`` the dual value ``theta_{i+1}`` is regressed on the martingale features of
``[T_i, T_{i+1}]`` together with the continuation features at ``T_i``. The
martingale part of the fit gives the increment ``xi_{i+1}``, and

    theta_i = Z_i + (theta_{i+1} - xi_{i+1} - Z_i)^+ .

On fresh, independent paths the fitted increments define a martingale ``M``. Then
``mean max_i (Z_i - M_i)`` is an upper bound, and exercising as soon as the payoff
reaches the fitted continuation value gives a lower bound.
"""
from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from . import __version__
from .regression import (
    BasisSet,
    DesignBlock,
    RegressionFit,
    default_basis,
    evaluate_continuation,
    martingale_features,
    solve_least_squares,
)
from .stochastic import GbmModel, PathBatch, TimeGrid

__all__ = [
    "BoundEstimate",
    "DateDiagnostics",
    "VarianceDiagnostics",
    "DualCoefficients",
    "DualMartingaleEstimator",
    "StreamCollisionError",
    "RegressionFailure",
    "EXERCISE_POLICIES",
    "theta_recursion_step",
    "backward_pass_arrays",
    "backward_pass",
    "exercise_payoffs",
    "upper_bound",
    "lower_bound",
    "upper_bound_arrays",
    "lower_bound_arrays",
    "empirical_variance",
    "sample_size_heuristic",
    "basis_hash",
]

COEFFICIENT_FORMAT_VERSION = 1
MEAN_ZERO_THRESHOLD = 5.0
EXERCISE_POLICIES = ("in_the_money", "payoff_above_continuation")


class StreamCollisionError(ValueError):
    """Bound estimation was asked to reuse the training random stream."""


class RegressionFailure(RuntimeError):
    def __init__(self, date: int, cause: Exception):
        super().__init__(f"regression failed at exercise date {date}: {cause}")
        self.date = date


# --------------------------------------------------------------------------- small pieces


def theta_recursion_step(z_now, theta_next, xi_hat) -> np.ndarray:
    """``theta_i = Z_i + (theta_{i+1} - xi_{i+1} - Z_i)^+``."""
    z_now = np.asarray(z_now, dtype=float)
    theta_next = np.asarray(theta_next, dtype=float)
    xi_hat = np.asarray(xi_hat, dtype=float)
    if not (z_now.shape == theta_next.shape == xi_hat.shape):
        raise ValueError(f"length mismatch: {z_now.shape}, {theta_next.shape}, {xi_hat.shape}")
    return z_now + np.maximum(theta_next - xi_hat - z_now, 0.0)


def empirical_variance(samples) -> tuple[float, float]:
    """Sample mean and unbiased (``N - 1`` divisor) variance."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("at least two samples are needed for an unbiased variance")
    return float(x.mean()), float(x.var(ddof=1))


def sample_size_heuristic(kappa: float, C: float, c_alpha: float) -> int:
    """Smallest ``n`` with ``q = c_alpha sqrt(C / n) < 1`` and ``kappa (1 + q) / (1 - q) < 1``.

    The inequality is equivalent to ``n > C c_alpha^2 ((1 + kappa) / (1 - kappa))^2``.
    """
    if not 0.0 < kappa < 1.0:
        raise ValueError(f"kappa must lie in (0, 1) for a finite sample size, got {kappa}")
    if not (C > 0 and c_alpha > 0):
        raise ValueError("C and c_alpha must be positive")

    # the closed form avoids a cancellation in 1 - q exactly at the boundary
    bound = C * c_alpha**2 * ((1.0 + kappa) / (1.0 - kappa)) ** 2
    return max(1, math.floor(bound) + 1)


def _weighted_mean_var(x, w):
    if w is None:
        return float(x.mean()), float(x.var(ddof=1)) if x.size > 1 else 0.0
    wsum = w.sum()
    mean = float(w @ x / wsum)
    return mean, float(w @ np.square(x - mean) / wsum)


def _weighted_mean_zscore(x, w):
    n = x.size
    mean, var = _weighted_mean_var(x, w)
    if w is not None:
        # effective sample size for the weighted mean
        n = w.sum() ** 2 / np.square(w).sum()
    sd = math.sqrt(max(var, 0.0))
    scale = sd / math.sqrt(n) if n > 0 else 0.0
    if scale <= 1e-14 * max(1.0, abs(mean)):
        return 0.0 if abs(mean) <= 1e-12 else math.inf
    return mean / scale


# --------------------------------------------------------------------------- diagnostics


@dataclass(frozen=True)
class DateDiagnostics:
    date: int
    n_mart: int
    n_psi: int
    rank: int
    var_before: float
    var_after: float
    var_theta: float
    xi_mean: float
    xi_zscore: float
    flagged: bool


@dataclass(frozen=True)
class VarianceDiagnostics:
    """Per-date variance reduction of the regression and the final ``Var theta_0``.

    ``var_before`` is the variance of the response ``theta_{i+1}``; ``var_after`` is
    the residual variance of the fit. A date is flagged when the fitted increment's
    training mean is more than five standard errors from zero, which signals a fit
    that does not behave like a martingale increment.
    """

    dates: tuple
    theta0_mean: float
    theta0_variance: float

    @property
    def flagged_dates(self) -> list:
        return [d.date for d in self.dates if d.flagged]

    @property
    def suspicious(self) -> bool:
        return bool(self.flagged_dates)

    def suggested_sample_size(self, kappa: float, C: float, c_alpha: float) -> int:
        return sample_size_heuristic(kappa, C, c_alpha)

    def to_dict(self) -> dict:
        return {
            "theta0_mean": self.theta0_mean,
            "theta0_variance": self.theta0_variance,
            "dates": [asdict(d) for d in self.dates],
        }


# --------------------------------------------------------------------------- coefficients


def basis_hash(basis: BasisSet) -> str:
    blob = json.dumps(basis.describe(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class DualCoefficients:
    """Fitted ``beta`` and ``gamma`` for every exercise date ``0..J-1``."""

    fits: tuple
    basis_hash: str = ""
    metadata: dict = field(default_factory=dict)

    @property
    def exercise_count(self) -> int:
        return len(self.fits)

    def beta(self, i: int) -> np.ndarray:
        return self.fits[i].beta

    def gamma(self, i: int) -> np.ndarray:
        return self.fits[i].gamma

    @property
    def training_key(self):
        key = self.metadata.get("training_stream")
        return tuple(key) if key is not None else None

    def check_basis(self, basis: BasisSet):
        if self.basis_hash and self.basis_hash != basis_hash(basis):
            raise ValueError("coefficients were trained with a different basis")
        for i, fit in enumerate(self.fits):
            if fit.beta.shape != (basis.n_phi(i),) or fit.gamma.shape != (basis.n_psi(i),):
                raise ValueError(f"coefficient shapes at date {i} do not match the basis")

    def to_json(self) -> str:
        payload = {
            "format_version": COEFFICIENT_FORMAT_VERSION,
            "library_version": __version__,
            "basis_hash": self.basis_hash,
            "metadata": self.metadata,
            "dates": [
                {
                    "beta": fit.beta.tolist(),
                    "gamma": fit.gamma.tolist(),
                    "rss": fit.rss,
                    "rank": fit.rank,
                    "ridge": fit.ridge,
                    "n_samples": fit.n_samples,
                }
                for fit in self.fits
            ],
        }
        return json.dumps(payload, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DualCoefficients":
        payload = json.loads(text)
        version = payload.get("format_version")
        if version != COEFFICIENT_FORMAT_VERSION:
            raise ValueError(f"unsupported coefficient format version {version!r}")
        fits = tuple(
            RegressionFit(
                beta=np.asarray(d["beta"], dtype=float),
                gamma=np.asarray(d["gamma"], dtype=float),
                rss=float(d["rss"]),
                rank=int(d["rank"]),
                ridge=float(d["ridge"]),
                n_samples=int(d["n_samples"]),
            )
            for d in payload["dates"]
        )
        return cls(fits, payload.get("basis_hash", ""), payload.get("metadata", {}))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "DualCoefficients":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


# --------------------------------------------------------------------------- training


def backward_pass_arrays(
    payoffs: np.ndarray,
    mart: Sequence[np.ndarray],
    psi: Sequence[np.ndarray],
    weights: np.ndarray | None = None,
    ridge: float = 0.0,
    standardize: bool = True,
    mart_names: Sequence[Sequence[str]] | None = None,
    psi_names: Sequence[Sequence[str]] | None = None,
):
    """Backward regression on precomputed features.

    Parameters
    ----------
    payoffs : (n, J + 1) array
        Discounted exercise values ``Z_i`` per path.
    mart : sequence of J arrays
        ``mart[i]`` holds the martingale features of ``[T_i, T_{i+1}]``, shape ``(n, K_i)``.
    psi : sequence of J arrays
        ``psi[i]`` holds the continuation features at ``T_i``, shape ``(n, K1_i)``.
    weights : (n,) array, optional
        Path weights, e.g. probabilities when the paths enumerate a finite tree.

    Returns
    -------
    fits : tuple of RegressionFit
    diagnostics : VarianceDiagnostics
    theta : (n, J + 1) array of pathwise dual values
    """
    Z = np.asarray(payoffs, dtype=float)
    if Z.ndim != 2:
        raise ValueError("payoffs must be an (n, J + 1) array")
    n, J1 = Z.shape
    J = J1 - 1
    if J < 1:
        raise ValueError("need at least one exercise interval")
    if len(mart) != J or len(psi) != J:
        raise ValueError(f"expected {J} feature blocks, got {len(mart)} martingale and {len(psi)} continuation")
    w = None if weights is None else np.asarray(weights, dtype=float)
    theta = np.empty_like(Z)
    theta[:, J] = Z[:, J]
    fits = [None] * J
    diags = [None] * J
    for i in range(J - 1, -1, -1):
        block = DesignBlock(
            date=i,
            mart=np.asarray(mart[i], dtype=float),
            psi=np.asarray(psi[i], dtype=float),
            response=theta[:, i + 1],
            weights=w,
            mart_names=tuple(mart_names[i]) if mart_names else (),
            psi_names=tuple(psi_names[i]) if psi_names else (),
        )
        try:
            fit = solve_least_squares(block, ridge=ridge, standardize=standardize)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            raise RegressionFailure(i, exc) from exc
        xi = block.mart @ fit.beta
        theta[:, i] = theta_recursion_step(Z[:, i], theta[:, i + 1], xi)
        _, var_before = _weighted_mean_var(theta[:, i + 1], w)
        denom = (w.sum() if w is not None else n - 1) or 1.0
        xi_mean, _ = _weighted_mean_var(xi, w)
        z = _weighted_mean_zscore(xi, w)
        diags[i] = DateDiagnostics(
            date=i,
            n_mart=block.mart.shape[1],
            n_psi=block.psi.shape[1],
            rank=fit.rank,
            var_before=var_before,
            var_after=fit.rss / denom,
            var_theta=_weighted_mean_var(theta[:, i], w)[1],
            xi_mean=xi_mean,
            xi_zscore=float(z),
            flagged=bool(abs(z) > MEAN_ZERO_THRESHOLD),
        )
        fits[i] = fit
    mean0, var0 = _weighted_mean_var(theta[:, 0], w)
    return tuple(fits), VarianceDiagnostics(tuple(diags), mean0, var0), theta


def exercise_payoffs(model: GbmModel, grid: TimeGrid, states: np.ndarray) -> np.ndarray:
    """Discounted payoff at every exercise date, shape ``(n, J + 1)``."""
    x = states[:, grid.exercise_indices, :]
    return model.discounted_payoff(grid.exercise_times[None, :], x)


def _features(basis: BasisSet, batch: PathBatch):
    J = basis.grid.exercise_count
    mart = [martingale_features(basis, i, batch.states, batch.increments) for i in range(J)]
    psi = [basis.psi(i, batch.states[:, basis.grid.fine_index(i), :]) for i in range(J)]
    return mart, psi


def backward_pass(batch: PathBatch, model: GbmModel, basis: BasisSet, ridge: float = 0.0, standardize: bool = True):
    """Train dual coefficients on a simulated batch.

    Returns ``(DualCoefficients, VarianceDiagnostics)``.
    """
    if batch.grid != basis.grid:
        raise ValueError("batch and basis use different time grids")
    Z = exercise_payoffs(model, basis.grid, batch.states)
    mart, psi = _features(basis, batch)
    J = basis.grid.exercise_count
    fits, diagnostics, _ = backward_pass_arrays(
        Z,
        mart,
        psi,
        weights=batch.weights,
        ridge=ridge,
        standardize=standardize,
        mart_names=[basis.phi_names(i) for i in range(J)],
        psi_names=[basis.psi_names(i) for i in range(J)],
    )
    metadata = {
        "n_train": batch.n_paths,
        "ridge": ridge,
        "rss": [f.rss for f in fits],
        "basis": basis.describe(),
    }
    if batch.stream is not None:
        metadata["training_stream"] = list(batch.stream.key)
    return DualCoefficients(fits, basis_hash(basis), metadata), diagnostics


# --------------------------------------------------------------------------- bounds


@dataclass(frozen=True)
class BoundEstimate:
    kind: str
    estimate: float
    stderr: float
    n_samples: int
    seed: int | None = None
    stream_id: int | None = None
    elapsed: float = 0.0

    def __post_init__(self):
        if self.kind not in ("upper", "lower"):
            raise ValueError(f"bound kind must be 'upper' or 'lower', got {self.kind!r}")
        if not self.stderr >= 0:
            raise ValueError("standard error must be non-negative")

    @classmethod
    def from_samples(cls, kind, samples, seed=None, stream_id=None, elapsed=0.0) -> "BoundEstimate":
        x = np.asarray(samples, dtype=float)
        if x.size == 0:
            raise ValueError("no samples")
        se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
        return cls(kind, float(x.mean()), se, int(x.size), seed, stream_id, elapsed)

    def interval(self, k: float = 3.0):
        return self.estimate - k * self.stderr, self.estimate + k * self.stderr

    def to_dict(self) -> dict:
        return asdict(self)


def upper_bound_arrays(payoffs: np.ndarray, mart: Sequence[np.ndarray], betas: Sequence[np.ndarray]) -> np.ndarray:
    """Pathwise ``max_i (Z_i - M_i)`` with ``M_i = sum_{j<i} mart[j] @ betas[j]``."""
    Z = np.asarray(payoffs, dtype=float)
    J = Z.shape[1] - 1
    best = Z[:, 0].copy()
    m = np.zeros(Z.shape[0])
    for i in range(J):
        m += mart[i] @ betas[i]
        np.maximum(best, Z[:, i + 1] - m, out=best)
    return best


def lower_bound_arrays(
    payoffs: np.ndarray,
    continuation: Sequence[np.ndarray],
    policy: str = "in_the_money",
) -> np.ndarray:
    """Payoff at the first date with ``Z_i >= C_i`` (exercise forced at maturity).

    With ``policy="in_the_money"`` a date only triggers when ``Z_i > 0`` as well.
    """
    if policy not in EXERCISE_POLICIES:
        raise ValueError(f"unknown exercise policy {policy!r}; expected one of {EXERCISE_POLICIES}")
    Z = np.asarray(payoffs, dtype=float)
    n, J1 = Z.shape
    out = Z[:, J1 - 1].copy()
    alive = np.ones(n, dtype=bool)
    for i in range(J1 - 1):
        stop = alive & (Z[:, i] >= continuation[i])
        if policy == "in_the_money":
            stop &= Z[:, i] > 0
        out[stop] = Z[stop, i]
        alive &= ~stop
    return out


def _as_batches(fresh) -> Iterable[PathBatch]:
    if isinstance(fresh, PathBatch):
        return (fresh,)
    return fresh


def _check_stream(coeffs: DualCoefficients, batch: PathBatch):
    key = coeffs.training_key
    if batch.stream is not None and key is not None and tuple(batch.stream.key) == key:
        raise StreamCollisionError(
            f"fresh paths use the training stream {key}; bounds need independent samples"
        )


def _stream_ids(batch):
    if batch is None or batch.stream is None:
        return None, None
    return batch.stream.seed, batch.stream.stream_id


def upper_bound(coeffs: DualCoefficients, fresh, model: GbmModel, basis: BasisSet) -> BoundEstimate:
    """Dual upper bound on fresh paths (a ``PathBatch`` or an iterable of them)."""
    coeffs.check_basis(basis)
    start = time.perf_counter()
    values = []
    first = None
    for batch in _as_batches(fresh):
        _check_stream(coeffs, batch)
        first = first or batch
        Z = exercise_payoffs(model, basis.grid, batch.states)
        mart = [martingale_features(basis, i, batch.states, batch.increments) for i in range(basis.grid.exercise_count)]
        values.append(upper_bound_arrays(Z, mart, [f.beta for f in coeffs.fits]))
    seed, sid = _stream_ids(first)
    return BoundEstimate.from_samples("upper", np.concatenate(values), seed, sid, time.perf_counter() - start)


def lower_bound(
    coeffs: DualCoefficients, fresh, model: GbmModel, basis: BasisSet, policy: str = "in_the_money"
) -> BoundEstimate:
    """Lower bound from the fitted exercise rule on fresh paths."""
    coeffs.check_basis(basis)
    start = time.perf_counter()
    values = []
    first = None
    grid = basis.grid
    for batch in _as_batches(fresh):
        _check_stream(coeffs, batch)
        first = first or batch
        Z = exercise_payoffs(model, grid, batch.states)
        cont = [
            basis.psi(i, batch.states[:, grid.fine_index(i), :]) @ coeffs.gamma(i)
            for i in range(grid.exercise_count)
        ]
        values.append(lower_bound_arrays(Z, cont, policy))
    seed, sid = _stream_ids(first)
    return BoundEstimate.from_samples("lower", np.concatenate(values), seed, sid, time.perf_counter() - start)


# --------------------------------------------------------------------------- estimator


class DualMartingaleEstimator(BaseEstimator):
    """Estimator wrapper around the backward pass and the bound estimators.

    Parameters
    ----------
    model : GbmModel
    grid : TimeGrid
    degree : int
        Polynomial degree of the continuation features.
    cross_terms : bool
        Use all monomials of the state instead of per-component powers.
    ridge : float
        Ridge penalty of every per-date regression.
    standardize : bool
        Standardize design columns before solving.
    exercise_policy : {"in_the_money", "payoff_above_continuation"}
        Stopping rule of the lower bound.
    """

    def __init__(
        self,
        model: GbmModel | None = None,
        grid: TimeGrid | None = None,
        degree: int = 3,
        cross_terms: bool = False,
        ridge: float = 0.0,
        standardize: bool = True,
        exercise_policy: str = "in_the_money",
    ):
        self.model = model
        self.grid = grid
        self.degree = degree
        self.cross_terms = cross_terms
        self.ridge = ridge
        self.standardize = standardize
        self.exercise_policy = exercise_policy

    def _check_params(self):
        if self.model is None or self.grid is None:
            raise ValueError("model and grid must be set")
        if self.exercise_policy not in EXERCISE_POLICIES:
            raise ValueError(f"unknown exercise policy {self.exercise_policy!r}")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")

    def fit(self, paths: PathBatch, y=None):
        self._check_params()
        if not isinstance(paths, PathBatch):
            raise TypeError("fit expects a PathBatch")
        self.basis_ = default_basis(self.model, self.grid, self.degree, self.cross_terms)
        self.coefficients_, self.diagnostics_ = backward_pass(
            paths, self.model, self.basis_, ridge=self.ridge, standardize=self.standardize
        )
        return self

    def _fitted(self):
        if not hasattr(self, "coefficients_"):
            raise AttributeError("estimator is not fitted; call fit first")

    def upper_bound(self, fresh) -> BoundEstimate:
        self._fitted()
        return upper_bound(self.coefficients_, fresh, self.model, self.basis_)

    def lower_bound(self, fresh) -> BoundEstimate:
        self._fitted()
        return lower_bound(self.coefficients_, fresh, self.model, self.basis_, self.exercise_policy)

    def predict_continuation(self, i: int, states) -> np.ndarray:
        """Fitted continuation value at exercise date ``i`` (0 at maturity)."""
        self._fitted()
        J = self.grid.exercise_count
        gamma = self.coefficients_.gamma(i) if i < J else None
        return evaluate_continuation(gamma, self.basis_, i, states)
