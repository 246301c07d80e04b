"""Exact property checks of the duality theory on finite trees.

Each check returns a :class:`CheckResult`. ``run_suite`` runs them all and is what
the ``verify`` command prints. ``fault=True`` perturbs the Doob martingale by a
small (still martingale) amount, so the sure-optimality checks must fail. It is a
smoke test of the checks themselves.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import lattice as lt

__all__ = ["CheckResult", "run_suite", "DEFAULT_FIXTURES", "resolve_fixtures"]

TOL = 1e-10
ALPHAS = (0.0, 0.25, 0.5, 1.0)
DEFAULT_FIXTURES = ("one_period", "sure_not_hereditary", "rare_loss", "random_binary")
FAULT_SIZE = 1e-3


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}" + (f"  ({self.detail})" if self.detail else "")


def _doob(lattice, snell, fault):
    m_star, a_star = lt.doob_decomposition(lattice, snell)
    if fault:
        noise = lt.random_martingale(lattice, np.random.default_rng(0), scale=FAULT_SIZE)
        m_star = lt.MartingaleField(list(m_star + noise), lattice)
    return m_star, a_star


def _random_lattices(count=100, horizon=4, seed=0):
    for k in range(count):
        yield lt.build_fixture(f"random_binary({horizon},{seed + k})")


def check_doob_pathwise(lattices, fault=False) -> CheckResult:
    worst = 0.0
    for lat in lattices:
        snell = lt.snell_envelope(lat)
        m_star, a_star = _doob(lat, snell, fault)
        for i in range(lat.horizon + 1):
            theta = lt.pathwise_dual_value(lat, m_star, i)
            worst = max(worst, float(np.abs(theta - snell[i][lat.ancestors(i)]).max()))
        rebuilt = [snell[0][0] + m - a for m, a in zip(m_star, a_star)]
        worst = max(worst, max(float(np.abs(r - y).max()) for r, y in zip(rebuilt, snell)))
    return CheckResult("doob martingale attains Y* pathwise", worst <= TOL, f"max deviation {worst:.2e}")


def check_zeta_roundtrip(lattices, fault=False) -> CheckResult:
    rng = np.random.default_rng(1)
    ok = True
    worst = 0.0
    for lat in lattices:
        snell = lt.snell_envelope(lat)
        zeta = lt.random_zeta(lat, rng)
        m = lt.martingale_from_zeta(lat, snell, zeta)
        if fault:
            m = lt.MartingaleField(list(m + lt.random_martingale(lat, rng, FAULT_SIZE)), lat)
        ok &= all(lt.is_surely_optimal(lat, m, i, snell, TOL) for i in range(lat.horizon + 1))
        back = lt.extract_zeta(lat, snell, m)
        for i in range(1, lat.horizon + 1):
            worst = max(worst, float(-back[i].min()))
            mean = lt.conditional_expectation(lat, back[i], i - 1)
            worst = max(worst, float(np.abs(mean - 1).max()))
        steps = np.diff(lt.increasing_part(lat, snell, m).along_paths(lat), axis=1)
        worst = max(worst, float(-steps.min(initial=0.0)))
    return CheckResult(
        "zeta construction is surely optimal and zeta extraction is valid",
        ok and worst <= TOL,
        f"max violation {worst:.2e}",
    )


def check_alpha_family(lattices, fault=False) -> CheckResult:
    ok = True
    worst = 0.0
    for lat in lattices:
        snell = lt.snell_envelope(lat)
        m_star, _ = _doob(lat, snell, False)
        for alpha in ALPHAS:
            m = lt.alpha_family(lat, snell, alpha)
            if fault:
                m = lt.MartingaleField(list(m + lt.random_martingale(lat, np.random.default_rng(2), FAULT_SIZE)), lat)
            ok &= all(lt.is_surely_optimal(lat, m, i, snell, TOL) for i in range(lat.horizon + 1))
            if alpha == 0.0:
                worst = max(worst, max(float(np.abs(a - b).max()) for a, b in zip(m, m_star)))
            if alpha == 1.0:
                closed = lt.alpha_one_closed_form(lat, snell)
                worst = max(worst, max(float(np.abs(a - b).max()) for a, b in zip(m, closed)))
    return CheckResult(
        f"alpha family surely optimal for alpha in {list(ALPHAS)}", ok and worst <= TOL, f"max mismatch {worst:.2e}"
    )


def check_one_period(fault=False) -> CheckResult:
    lat = lt.build_fixture("one_period")
    m = lt.fixture_martingale(lat)
    snell = lt.snell_envelope(lat)
    theta = lt.pathwise_dual_value(lat, m, 0)
    mean = float(lt.dual_expectation(lat, m, 0)[0])
    var = float(lt.conditional_variance(lat, m, 0)[0])
    ok = (
        abs(snell[0][0] - 2) <= TOL
        and abs(mean - 2) <= TOL
        and np.allclose(np.sort(theta), [1, 3], atol=TOL)
        and abs(var - 1) <= TOL
    )
    return CheckResult("one-period fixture: optimal in mean, not surely", ok, f"E theta0={mean:g}, Var={var:g}")


def check_not_hereditary(fault=False) -> CheckResult:
    lat = lt.build_fixture("sure_not_hereditary")
    m = lt.fixture_martingale(lat)
    snell = lt.snell_envelope(lat)
    at0 = lt.is_surely_optimal(lat, m, 0, snell)
    at1 = lt.is_surely_optimal(lat, m, 1, snell)
    ok = abs(snell[0][0] - 4) <= TOL and at0 and not at1
    return CheckResult("two-period fixture: surely optimal at 0 but not at 1", ok, f"at0={at0}, at1={at1}")


def check_rare_loss(n_values=range(2, 51), fault=False) -> CheckResult:
    worst = 0.0
    for n in n_values:
        lat = lt.build_fixture(f"rare_loss({n})")
        m = lt.fixture_martingale(lat)
        mean = float(lt.dual_expectation(lat, m, 0)[0])
        var = float(lt.conditional_variance(lat, m, 0)[0])
        worst = max(worst, abs(mean - (n - 1) / n), abs(var - (n - 1) / n**2))
    return CheckResult(
        f"zero-payoff family n={min(n_values)}..{max(n_values)}: mean (n-1)/n, variance (n-1)/n^2",
        worst <= 1e-12,
        f"max error {worst:.2e}",
    )


def check_u_plus(lattices, fault=False) -> CheckResult:
    all_plus = True
    some_u_fails = False
    doob_u = True
    for lat in lattices:
        snell = lt.snell_envelope(lat)
        m_star, _ = _doob(lat, snell, fault)
        rep = lt.u_plus_measurability_check(lat, m_star, snell)
        doob_u &= bool(np.all(rep.u))
        all_plus &= rep.all_u_plus and bool(np.all(rep.u_plus_matches_gap))
        for alpha in (0.5, 1.0):
            rep = lt.u_plus_measurability_check(lat, lt.alpha_family(lat, snell, alpha), snell)
            all_plus &= rep.all_u_plus and bool(np.all(rep.u_plus_matches_gap))
            some_u_fails |= not bool(np.all(rep.u))
    return CheckResult(
        "(U_i)^+ depends on the past only; U_i does not in general",
        all_plus and some_u_fails and doob_u,
        f"u_plus_ok={all_plus}, doob_u_ok={doob_u}, non_doob_u_fails={some_u_fails}",
    )


def check_duality(lattices, fault=False) -> CheckResult:
    rng = np.random.default_rng(3)
    worst = 0.0
    for lat in lattices:
        snell = lt.snell_envelope(lat)
        m = lt.random_martingale(lat, rng)
        for i in range(lat.horizon + 1):
            gap = lt.dual_expectation(lat, m, i) - snell[i]
            worst = max(worst, float(-gap.min()))
            var = lt.conditional_variance(lat, m, i)
            theta = lt.pathwise_dual_value(lat, m, i)
            exact = np.abs(theta - snell[i][lat.ancestors(i)]) <= TOL
            per_node = np.bincount(lat.ancestors(i), weights=~exact, minlength=lat.n_nodes(i)) == 0
            if np.any(per_node != (var <= TOL)):
                worst = max(worst, 1.0)
    return CheckResult("duality inequality and zero variance iff exact", worst <= TOL, f"max violation {worst:.2e}")


def check_lattice_file(lattice: lt.LatticeModel, fault=False) -> CheckResult:
    snell = lt.snell_envelope(lattice)
    m_star, _ = _doob(lattice, snell, fault)
    ok = all(lt.is_surely_optimal(lattice, m_star, i, snell) for i in range(lattice.horizon + 1))
    detail = f"Y*0={snell[0][0]:.10g}"
    if lattice.state is not None:
        m = lt.MartingaleField(lattice.state, lattice)
        flags = [lt.is_surely_optimal(lattice, m, i, snell) for i in range(lattice.horizon + 1)]
        detail += f", file martingale surely optimal at {[i for i, f in enumerate(flags) if f]}"
    return CheckResult(f"lattice file {lattice.name}: doob martingale attains Y*", ok, detail)


def resolve_fixtures(names):
    """Split requested fixture names into built-in groups and lattice files."""
    groups, files = [], []
    for name in names:
        name = name.strip()
        if not name:
            continue
        if Path(name).is_file():
            files.append(lt.read_lattice(name))
        elif lt.FIXTURE_ALIASES.get(name.split("(")[0], name.split("(")[0]) in DEFAULT_FIXTURES:
            groups.append(lt.FIXTURE_ALIASES.get(name.split("(")[0], name.split("(")[0]))
        else:
            raise lt.LatticeError(f"unknown fixture {name!r}; known: {', '.join(DEFAULT_FIXTURES)} or a lattice file")
    return groups, files


def run_suite(fixtures=None, fault: bool = False, n_random: int = 100) -> list:
    """Run the checks relevant to the requested fixtures (default: all)."""
    groups, files = resolve_fixtures(fixtures) if fixtures else (list(DEFAULT_FIXTURES), [])
    results = []
    if "one_period" in groups:
        results.append(check_one_period(fault))
    if "sure_not_hereditary" in groups:
        results.append(check_not_hereditary(fault))
    if "rare_loss" in groups:
        results.append(check_rare_loss(fault=fault))
    if "random_binary" in groups:
        random4 = list(_random_lattices(n_random, 4, 0))
        small = random4[:20]
        results.append(check_doob_pathwise(random4, fault))
        results.append(check_zeta_roundtrip(small, fault))
        results.append(check_alpha_family(small, fault))
        results.append(check_u_plus(small, fault))
        results.append(check_duality(small, fault))
    for lat in files:
        results.append(check_lattice_file(lat, fault))
    return results
