"""Exact optimal stopping on finite trees.

Everything here is computed by backward induction or by enumerating the paths of
a small tree, which makes the module an oracle for the duality results used by
the Monte Carlo engine: Snell envelope, additive and multiplicative Doob
decompositions, the family of surely optimal martingales, pathwise dual values
and their conditional variances.

A tree is stored layer by layer. Node ``k`` at time ``i`` has a unique parent at
time ``i - 1`` and a transition probability from that parent. A *path* is a leaf
at the horizon; ``ancestors(i)`` maps every path to its node at time ``i``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "FIXTURE_ALIASES",
    "LatticeModel",
    "ValueField",
    "MartingaleField",
    "LatticeError",
    "EnumerationLimitError",
    "MAX_PATHS",
    "conditional_expectation",
    "snell_envelope",
    "first_optimal_stopping",
    "stopped_value",
    "doob_decomposition",
    "multiplicative_doob",
    "martingale_from_zeta",
    "alpha_family",
    "alpha_one_closed_form",
    "extract_zeta",
    "increasing_part",
    "pathwise_dual_value",
    "dual_expectation",
    "conditional_variance",
    "is_surely_optimal",
    "u_plus_measurability_check",
    "MeasurabilityReport",
    "build_fixture",
    "fixture_martingale",
    "random_zeta",
    "random_martingale",
    "read_lattice",
    "write_lattice",
]

MAX_PATHS = 1_000_000
_PROB_TOL = 1e-12
_MART_TOL = 1e-10


class LatticeError(ValueError):
    pass


class EnumerationLimitError(LatticeError):
    pass


class ValueField:
    """One array of node values per time layer."""

    def __init__(self, layers: Sequence[np.ndarray]):
        self.layers = tuple(np.asarray(v, dtype=float) for v in layers)

    def __getitem__(self, i):
        return self.layers[i]

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    def __repr__(self):
        return f"{type(self).__name__}({[v.tolist() for v in self.layers]})"

    def along_paths(self, lattice: "LatticeModel") -> np.ndarray:
        """Values along every path, shape ``(n_paths, T + 1)``."""
        return np.stack([self.layers[i][lattice.ancestors(i)] for i in range(lattice.horizon + 1)], axis=1)

    def map(self, fn) -> "ValueField":
        return ValueField([fn(v) for v in self.layers])

    def __add__(self, other):
        return ValueField([a + b for a, b in zip(self, other)])

    def __sub__(self, other):
        return ValueField([a - b for a, b in zip(self, other)])


class MartingaleField(ValueField):
    """Node values of a martingale; construction checks the martingale property."""

    def __init__(self, layers, lattice: "LatticeModel | None" = None, tol: float = _MART_TOL):
        super().__init__(layers)
        if lattice is not None:
            _check_shapes(self, lattice)
            for i in range(lattice.horizon):
                gap = np.abs(conditional_expectation(lattice, self[i + 1], i) - self[i])
                if gap.size and gap.max() > tol:
                    raise LatticeError(f"martingale property violated at time {i} (gap {gap.max():.3e})")


@dataclass(frozen=True, eq=False)
class LatticeModel:
    """Finite tree with transition probabilities and a payoff per node.

    ``parents[i][k]`` is the parent index of node ``k`` at time ``i`` (``-1`` at the
    root), ``probs[i][k]`` the probability of moving there from the parent.
    ``state`` is optional per-node data; fixtures use it to carry the martingale of
    the example they encode.
    """

    parents: tuple
    probs: tuple
    payoff: tuple
    state: tuple | None = None
    name: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        parents = tuple(np.asarray(p, dtype=np.int64) for p in self.parents)
        probs = tuple(np.asarray(p, dtype=float) for p in self.probs)
        payoff = tuple(np.asarray(z, dtype=float) for z in self.payoff)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "payoff", payoff)
        if self.state is not None:
            object.__setattr__(self, "state", tuple(np.asarray(s, dtype=float) for s in self.state))
        self._validate()

    def _validate(self):
        if not (len(self.parents) == len(self.probs) == len(self.payoff)):
            raise LatticeError("parents, probs and payoff must have one layer per time")
        if len(self.parents[0]) != 1:
            raise LatticeError("time-0 layer must contain exactly one node")
        for i, (par, pr, z) in enumerate(zip(self.parents, self.probs, self.payoff)):
            if not (len(par) == len(pr) == len(z)):
                raise LatticeError(f"layer {i}: inconsistent node counts")
            if not np.all(np.isfinite(z)):
                raise LatticeError(f"layer {i}: payoff must be finite")
            if np.any(pr < 0):
                raise LatticeError(f"layer {i}: negative transition probability")
            if i == 0:
                continue
            n_prev = len(self.parents[i - 1])
            if np.any(par < 0) or np.any(par >= n_prev):
                raise LatticeError(f"layer {i}: parent index out of range")
            sums = np.bincount(par, weights=pr, minlength=n_prev)
            if np.any(np.abs(sums - 1.0) > _PROB_TOL):
                bad = int(np.argmax(np.abs(sums - 1.0)))
                raise LatticeError(f"layer {i - 1}: node {bad} transition probabilities sum to {float(sums[bad])!r}")
        if self.state is not None and [len(s) for s in self.state] != [len(z) for z in self.payoff]:
            raise LatticeError("state layers must match payoff layers")

    @property
    def horizon(self) -> int:
        return len(self.payoff) - 1

    def n_nodes(self, i: int) -> int:
        return len(self.payoff[i])

    @property
    def n_paths(self) -> int:
        return self.n_nodes(self.horizon)

    def ancestors(self, i: int) -> np.ndarray:
        """Node index at time ``i`` of every path."""
        key = ("anc", i)
        if key not in self._cache:
            idx = np.arange(self.n_paths)
            for t in range(self.horizon, i, -1):
                idx = self.parents[t][idx]
            self._cache[key] = idx
        return self._cache[key]

    def path_probabilities(self, start: int = 0) -> np.ndarray:
        """Probability of every path conditional on its node at time ``start``."""
        key = ("pp", start)
        if key not in self._cache:
            prob = np.ones(self.n_paths)
            for t in range(start + 1, self.horizon + 1):
                prob = prob * self.probs[t][self.ancestors(t)]
            self._cache[key] = prob
        return self._cache[key]

    def node_probabilities(self, i: int) -> np.ndarray:
        return np.bincount(self.ancestors(i), weights=self.path_probabilities(0), minlength=self.n_nodes(i))

    def payoff_field(self) -> ValueField:
        return ValueField(self.payoff)

    def zeros(self) -> ValueField:
        return ValueField([np.zeros(self.n_nodes(i)) for i in range(self.horizon + 1)])


def _check_shapes(values: ValueField, lattice: LatticeModel):
    if len(values) != lattice.horizon + 1:
        raise LatticeError(f"field has {len(values)} layers, lattice has {lattice.horizon + 1}")
    for i, v in enumerate(values):
        if v.shape != (lattice.n_nodes(i),):
            raise LatticeError(f"layer {i}: field shape {v.shape} != ({lattice.n_nodes(i)},)")


def _guard(lattice: LatticeModel):
    if lattice.n_paths > MAX_PATHS:
        raise EnumerationLimitError(f"{lattice.n_paths} paths exceed the enumeration limit of {MAX_PATHS}")


def conditional_expectation(lattice: LatticeModel, next_values: np.ndarray, i: int) -> np.ndarray:
    """``E_i`` of a time-``(i+1)`` node quantity, one value per time-``i`` node."""
    par = lattice.parents[i + 1]
    return np.bincount(par, weights=lattice.probs[i + 1] * next_values, minlength=lattice.n_nodes(i))


def _prev_expectation(lattice, values: ValueField) -> ValueField:
    """``E_{i-1} V_i`` broadcast onto time-``i`` nodes (``NaN`` at time 0)."""
    out = [np.full(1, np.nan)]
    for i in range(1, lattice.horizon + 1):
        out.append(conditional_expectation(lattice, values[i], i - 1)[lattice.parents[i]])
    return ValueField(out)


def snell_envelope(lattice: LatticeModel) -> ValueField:
    """``Y*_T = Z_T``, ``Y*_i = max(Z_i, E_i Y*_{i+1})``."""
    T = lattice.horizon
    layers = [None] * (T + 1)
    layers[T] = lattice.payoff[T].copy()
    for i in range(T - 1, -1, -1):
        layers[i] = np.maximum(lattice.payoff[i], conditional_expectation(lattice, layers[i + 1], i))
    return ValueField(layers)


def first_optimal_stopping(lattice: LatticeModel, snell: ValueField, tol: float = 0.0) -> list:
    """``tau*_i = inf{j >= i : Z_j >= Y*_j}`` along every path.

    Returns one integer array per start time ``i`` with the stopping date of each path.
    """
    T = lattice.horizon
    stops = np.stack(
        [(lattice.payoff[t] >= snell[t] - tol)[lattice.ancestors(t)] for t in range(T)]
        + [np.ones(lattice.n_paths, dtype=bool)],
        axis=1,
    )
    return [i + np.argmax(stops[:, i:], axis=1) for i in range(T + 1)]


def stopped_value(lattice: LatticeModel, tau_paths: np.ndarray, i: int) -> np.ndarray:
    """``E_i Z_tau`` per time-``i`` node for a per-path stopping time."""
    z_paths = lattice.payoff_field().along_paths(lattice)
    z_tau = z_paths[np.arange(lattice.n_paths), tau_paths]
    w = lattice.path_probabilities(i)
    return np.bincount(lattice.ancestors(i), weights=w * z_tau, minlength=lattice.n_nodes(i))


def doob_decomposition(lattice: LatticeModel, snell: ValueField):
    """Additive Doob decomposition ``Y* = Y*_0 + M* - A*``.

    Returns ``(M*, A*)``; ``A*`` is predictable and nondecreasing.
    """
    prev = _prev_expectation(lattice, snell)
    m = [np.zeros(1)]
    a = [np.zeros(1)]
    for i in range(1, lattice.horizon + 1):
        par = lattice.parents[i]
        m.append(m[i - 1][par] + snell[i] - prev[i])
        a.append(a[i - 1][par] + snell[i - 1][par] - prev[i])
    return MartingaleField(m, lattice), ValueField(a)


def multiplicative_doob(lattice: LatticeModel, snell: ValueField):
    """Multiplicative decomposition ``Y* = Y*_0 N* B*`` for a strictly positive payoff.

    Returns ``(N*, B*)`` with ``N*_0 = B*_0 = 1``.
    """
    if any(np.any(z <= 0) for z in lattice.payoff):
        raise LatticeError("multiplicative decomposition requires a strictly positive payoff")
    prev = _prev_expectation(lattice, snell)
    n = [np.ones(1)]
    b = [np.ones(1)]
    for i in range(1, lattice.horizon + 1):
        par = lattice.parents[i]
        n.append(n[i - 1][par] * snell[i] / prev[i])
        b.append(b[i - 1][par] * prev[i] / snell[i - 1][par])
    return MartingaleField(n, lattice), ValueField(b)


def _validate_zeta(lattice, zeta: ValueField, tol=_MART_TOL):
    _check_shapes(zeta, lattice)
    for i in range(1, lattice.horizon + 1):
        if np.any(zeta[i] < -tol):
            raise LatticeError(f"zeta must be nonnegative (time {i})")
        mean = conditional_expectation(lattice, zeta[i], i - 1)
        if np.any(np.abs(mean - 1.0) > tol):
            raise LatticeError(f"E_(i-1) zeta_i must equal 1 (time {i}, worst {mean[np.argmax(np.abs(mean - 1))]!r})")


def martingale_from_zeta(lattice: LatticeModel, snell: ValueField, zeta: ValueField) -> MartingaleField:
    """``M_i = M*_i - A*_i + sum_{l<=i} (A*_l - A*_{l-1}) zeta_l``.

    ``zeta_l >= 0`` with ``E_{l-1} zeta_l = 1`` is required; ``zeta_0`` is ignored.
    """
    _validate_zeta(lattice, zeta)
    m_star, a_star = doob_decomposition(lattice, snell)
    m = [np.zeros(1)]
    for i in range(1, lattice.horizon + 1):
        par = lattice.parents[i]
        inc_a = a_star[i] - a_star[i - 1][par]
        m.append(m[i - 1][par] + (m_star[i] - m_star[i - 1][par]) - inc_a + inc_a * zeta[i])
    return MartingaleField(m, lattice)


def alpha_family(lattice: LatticeModel, snell: ValueField, alpha: float) -> MartingaleField:
    """Surely optimal martingale with ``zeta_i = 1 - alpha + alpha Y*_i / E_{i-1} Y*_i``."""
    if not 0.0 <= alpha <= 1.0:
        raise LatticeError(f"alpha must lie in [0, 1], got {alpha}")
    if any(np.any(z <= 0) for z in lattice.payoff):
        raise LatticeError("alpha family requires a strictly positive payoff")
    prev = _prev_expectation(lattice, snell)
    zeta = [np.ones(1)] + [1.0 - alpha + alpha * snell[i] / prev[i] for i in range(1, lattice.horizon + 1)]
    return martingale_from_zeta(lattice, snell, ValueField(zeta))


def alpha_one_closed_form(lattice: LatticeModel, snell: ValueField) -> MartingaleField:
    """``M_i = Y*_0 sum_{l<=i} B*_{l-1} (N*_l - N*_{l-1})`` from the multiplicative decomposition."""
    n_star, b_star = multiplicative_doob(lattice, snell)
    y0 = snell[0][0]
    m = [np.zeros(1)]
    for i in range(1, lattice.horizon + 1):
        par = lattice.parents[i]
        m.append(m[i - 1][par] + y0 * b_star[i - 1][par] * (n_star[i] - n_star[i - 1][par]))
    return MartingaleField(m, lattice)


def extract_zeta(lattice: LatticeModel, snell: ValueField, martingale: ValueField, tol: float = 1e-12) -> ValueField:
    """Recover ``zeta`` from a martingale through its increments.

    ``zeta_i = mu_i / (A*_i - A*_{i-1})`` where ``A*`` increases and 1 elsewhere, with
    ``mu_i = M_i - M_{i-1} - (M*_i - M*_{i-1}) + A*_i - A*_{i-1}``.
    """
    m_star, a_star = doob_decomposition(lattice, snell)
    zeta = [np.ones(1)]
    for i in range(1, lattice.horizon + 1):
        par = lattice.parents[i]
        inc_a = a_star[i] - a_star[i - 1][par]
        mu = martingale[i] - martingale[i - 1][par] - (m_star[i] - m_star[i - 1][par]) + inc_a
        grows = inc_a > tol
        zeta.append(np.where(grows, mu / np.where(grows, inc_a, 1.0), 1.0))
    return ValueField(zeta)


def increasing_part(lattice: LatticeModel, snell: ValueField, martingale: ValueField) -> ValueField:
    """``N_i = Y*_0 + M_i - Y*_i``; nondecreasing along paths when ``M`` is surely optimal."""
    y0 = snell[0][0]
    return ValueField([y0 + martingale[i] - snell[i] for i in range(lattice.horizon + 1)])


def pathwise_dual_value(lattice: LatticeModel, martingale: ValueField, i: int) -> np.ndarray:
    """``theta_i = max_{i<=j<=T} (Z_j - M_j + M_i)`` on every path."""
    _guard(lattice)
    _check_shapes(martingale, lattice)
    z = lattice.payoff_field().along_paths(lattice)
    m = martingale.along_paths(lattice)
    return np.max(z[:, i:] - m[:, i:], axis=1) + m[:, i]


def dual_expectation(lattice: LatticeModel, martingale: ValueField, i: int) -> np.ndarray:
    """``E_i theta_i`` per time-``i`` node."""
    theta = pathwise_dual_value(lattice, martingale, i)
    w = lattice.path_probabilities(i)
    return np.bincount(lattice.ancestors(i), weights=w * theta, minlength=lattice.n_nodes(i))


def conditional_variance(lattice: LatticeModel, martingale: ValueField, i: int) -> np.ndarray:
    """``Var_i theta_i`` per time-``i`` node, by enumeration."""
    theta = pathwise_dual_value(lattice, martingale, i)
    w = lattice.path_probabilities(i)
    anc = lattice.ancestors(i)
    n = lattice.n_nodes(i)
    mean = np.bincount(anc, weights=w * theta, minlength=n)
    var = np.bincount(anc, weights=w * (theta - mean[anc]) ** 2, minlength=n)
    return np.maximum(var, 0.0)


def is_surely_optimal(lattice: LatticeModel, martingale: ValueField, i: int, snell: ValueField | None = None, tol: float = 1e-10) -> bool:
    """``theta_i(M) = Y*_i`` on every path."""
    snell = snell if snell is not None else snell_envelope(lattice)
    theta = pathwise_dual_value(lattice, martingale, i)
    return bool(np.all(np.abs(theta - snell[i][lattice.ancestors(i)]) <= tol))


@dataclass(frozen=True)
class MeasurabilityReport:
    """Per time ``i >= 1``: whether ``(U_i)^+`` and ``U_i`` are ``F_{i-1}``-measurable."""

    u_plus: np.ndarray
    u: np.ndarray
    u_plus_matches_gap: np.ndarray

    @property
    def all_u_plus(self) -> bool:
        return bool(np.all(self.u_plus))


def _constant_on_siblings(values, parents, n_parents, tol):
    hi = np.full(n_parents, -np.inf)
    lo = np.full(n_parents, np.inf)
    np.maximum.at(hi, parents, values)
    np.minimum.at(lo, parents, values)
    return bool(np.all(hi - lo <= tol))


def u_plus_measurability_check(lattice: LatticeModel, martingale: ValueField, snell: ValueField | None = None, tol: float = 1e-10) -> MeasurabilityReport:
    """Check ``U_i = Y*_i - M_i + M_{i-1} - Z_{i-1}`` and its positive part.

    For a surely optimal martingale ``(U_i)^+ = Y*_{i-1} - Z_{i-1}``, which depends on
    the parent node only; ``U_i`` itself generally does not.
    """
    snell = snell if snell is not None else snell_envelope(lattice)
    T = lattice.horizon
    u_plus_ok = np.zeros(T, dtype=bool)
    u_ok = np.zeros(T, dtype=bool)
    gap_ok = np.zeros(T, dtype=bool)
    for i in range(1, T + 1):
        par = lattice.parents[i]
        u = snell[i] - martingale[i] + martingale[i - 1][par] - lattice.payoff[i - 1][par]
        n_par = lattice.n_nodes(i - 1)
        u_ok[i - 1] = _constant_on_siblings(u, par, n_par, tol)
        u_plus_ok[i - 1] = _constant_on_siblings(np.maximum(u, 0.0), par, n_par, tol)
        gap = (snell[i - 1] - lattice.payoff[i - 1])[par]
        gap_ok[i - 1] = bool(np.all(np.abs(np.maximum(u, 0.0) - gap) <= tol))
    return MeasurabilityReport(u_plus_ok, u_ok, gap_ok)


# --------------------------------------------------------------------------- fixtures


def _binary_layers(T):
    parents = [np.array([-1])]
    for i in range(1, T + 1):
        parents.append(np.repeat(np.arange(2 ** (i - 1)), 2))
    return parents


def _one_period():
    parents = _binary_layers(1)
    probs = [np.ones(1), np.array([0.5, 0.5])]
    payoff = [np.zeros(1), np.array([2.0, 2.0])]
    state = [np.zeros(1), np.array([1.0, -1.0])]
    return LatticeModel(parents, probs, payoff, state, name="one_period")


def _sure_not_hereditary():
    parents = _binary_layers(2)
    probs = [np.ones(1), np.full(2, 0.5), np.full(4, 0.5)]
    payoff = [np.array([4.0]), np.zeros(2), np.full(4, 2.0)]
    m1 = np.array([1.0, -1.0])
    m2 = m1[parents[2]] + np.tile([1.0, -1.0], 2)
    state = [np.zeros(1), m1, m2]
    return LatticeModel(parents, probs, payoff, state, name="sure_not_hereditary")


def _rare_loss(n: int):
    if n < 2:
        raise LatticeError("rare_loss needs n >= 2")
    parents = [np.array([-1]), np.array([0, 0])]
    probs = [np.ones(1), np.array([(n - 1) / n, 1.0 / n])]
    payoff = [np.zeros(1), np.zeros(2)]
    xi = np.array([1.0, 1.0 - n])
    state = [np.zeros(1), -xi]
    return LatticeModel(parents, probs, payoff, state, name=f"rare_loss({n})")


def _random_binary(T: int = 3, seed: int = 0, positive: bool = True, branching: int = 2):
    rng = np.random.default_rng(seed)
    parents = [np.array([-1])]
    probs = [np.ones(1)]
    payoff = [rng.uniform(0.5, 2.0, 1) if positive else rng.normal(size=1)]
    width = 1
    for _ in range(T):
        par = np.repeat(np.arange(width), branching)
        raw = rng.uniform(0.2, 1.0, par.size)
        sums = np.bincount(par, weights=raw)
        p = raw / sums[par]
        # force exact row sums
        p[branching - 1 :: branching] = 1.0 - np.bincount(par, weights=p)[np.arange(width)] + p[branching - 1 :: branching]
        width = par.size
        parents.append(par)
        probs.append(p)
        payoff.append(rng.uniform(0.5, 2.0, width) if positive else rng.normal(size=width))
    return LatticeModel(parents, probs, payoff, name=f"random_binary(T={T},seed={seed})")


# older names accepted for the same constructions
FIXTURE_ALIASES = {"remark31": "one_period", "counter1": "rare_loss"}

_FIXTURE_RE = re.compile(r"^(?P<name>[a-z_0-9]+)(?:\((?P<args>[^)]*)\))?$")


def build_fixture(name: str, **kwargs) -> LatticeModel:
    """Named lattices.

    ``one_period`` (alias ``remark31``)
        one period, ``Z = (0, 2)``, martingale ``M_1 = +-1``.
    ``sure_not_hereditary``
        two periods, ``Z = (4, 0, 2)``, martingale with ``+-1`` increments.
    ``rare_loss(n)`` (alias ``counter1(n)``)
        one period, zero payoff, ``M_1 = -xi`` with ``xi = 1`` w.p. ``(n-1)/n`` and ``1 - n`` w.p. ``1/n``.
    ``random_binary(T, seed)``
        random binary tree with strictly positive payoff (``positive=False`` for signed).
    """
    match = _FIXTURE_RE.match(name.strip())
    if not match:
        raise LatticeError(f"unknown fixture {name!r}")
    base = FIXTURE_ALIASES.get(match.group("name"), match.group("name"))
    args = {}
    if match.group("args"):
        for k, part in enumerate(a.strip() for a in match.group("args").split(",") if a.strip()):
            if "=" in part:
                key, val = part.split("=", 1)
                args[key.strip()] = int(val)
            else:
                args[k] = int(part)
    if base == "one_period":
        return _one_period()
    if base == "sure_not_hereditary":
        return _sure_not_hereditary()
    if base == "rare_loss":
        n = args.get(0, args.get("n", kwargs.get("n")))
        if n is None:
            raise LatticeError("rare_loss needs n")
        return _rare_loss(int(n))
    if base == "random_binary":
        T = args.get(0, args.get("T", kwargs.pop("T", 3)))
        seed = args.get(1, args.get("seed", kwargs.pop("seed", 0)))
        return _random_binary(int(T), int(seed), **kwargs)
    raise LatticeError(f"unknown fixture {name!r}")


def fixture_martingale(lattice: LatticeModel) -> MartingaleField:
    if lattice.state is None:
        raise LatticeError(f"lattice {lattice.name!r} carries no martingale")
    return MartingaleField(lattice.state, lattice)


def random_zeta(lattice: LatticeModel, rng: np.random.Generator) -> ValueField:
    """Positive weights normalised so that ``E_{i-1} zeta_i = 1``."""
    zeta = [np.ones(1)]
    for i in range(1, lattice.horizon + 1):
        raw = rng.uniform(0.0, 2.0, lattice.n_nodes(i))
        mean = conditional_expectation(lattice, raw, i - 1)
        zeta.append(raw / mean[lattice.parents[i]])
    return ValueField(zeta)


def random_martingale(lattice: LatticeModel, rng: np.random.Generator, scale: float = 1.0) -> MartingaleField:
    """Arbitrary martingale with ``M_0 = 0`` built from centred random increments."""
    m = [np.zeros(1)]
    for i in range(1, lattice.horizon + 1):
        raw = rng.normal(scale=scale, size=lattice.n_nodes(i))
        mean = conditional_expectation(lattice, raw, i - 1)
        m.append(m[i - 1][lattice.parents[i]] + raw - mean[lattice.parents[i]])
    return MartingaleField(m, lattice)


# --------------------------------------------------------------------------- file format
#
#   # comment
#   node <time> <index> <parent> <prob> <payoff> [<martingale>]
#
# nodes of a layer are listed in index order; the root uses parent -1, prob 1.


def read_lattice(path) -> LatticeModel:
    layers: dict[int, list] = {}
    with_state = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] != "node" or len(parts) not in (6, 7):
                raise LatticeError(f"{path}:{lineno}: expected 'node t index parent prob payoff [martingale]'")
            try:
                t, idx, parent = (int(p) for p in parts[1:4])
                values = [float(p) for p in parts[4:]]
            except ValueError as exc:
                raise LatticeError(f"{path}:{lineno}: {exc}") from None
            has_state = len(parts) == 7
            if with_state is None:
                with_state = has_state
            elif with_state != has_state:
                raise LatticeError(f"{path}:{lineno}: martingale column must be given for all nodes or none")
            layer = layers.setdefault(t, [])
            if idx != len(layer):
                raise LatticeError(f"{path}:{lineno}: node index {idx} out of order (expected {len(layer)})")
            layer.append((parent, *values))
    if not layers or sorted(layers) != list(range(len(layers))):
        raise LatticeError(f"{path}: time layers must be 0..T without gaps")
    ordered = [np.array(layers[t]) for t in range(len(layers))]
    parents = [row[:, 0].astype(np.int64) for row in ordered]
    probs = [row[:, 1] for row in ordered]
    payoff = [row[:, 2] for row in ordered]
    state = [row[:, 3] for row in ordered] if with_state else None
    try:
        return LatticeModel(parents, probs, payoff, state, name=str(path))
    except LatticeError as exc:
        raise LatticeError(f"{path}: {exc}") from None


def write_lattice(lattice: LatticeModel, path, martingale: ValueField | None = None) -> None:
    values = martingale if martingale is not None else (ValueField(lattice.state) if lattice.state is not None else None)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# node <time> <index> <parent> <prob> <payoff> [<martingale>]\n")
        for t in range(lattice.horizon + 1):
            for k in range(lattice.n_nodes(t)):
                row = [
                    "node",
                    str(t),
                    str(k),
                    str(int(lattice.parents[t][k])),
                    repr(float(lattice.probs[t][k])),
                    repr(float(lattice.payoff[t][k])),
                ]
                if values is not None:
                    row.append(repr(float(values[t][k])))
                fh.write(" ".join(row) + "\n")
