"""Self-contained correctness checks shared by the CLI `check` command and tests."""

from __future__ import annotations

import numpy as np
from scipy.integrate import quad

from .diagnostics import ess
from .distributions import Ar1Params, sample_ar1
from .expansion import StiefelTarget, check_gradient, expand_general
from .matcore import DegenerateMatrixError
from .models import (
    eigenmodel_target,
    fpca_empirical_bayes,
    fpca_target,
    simulate_eigenmodel,
    simulate_fpca,
)


def uniform_circle_target() -> StiefelTarget:
    """Uniform density on V(1, 2) (the circle), w.r.t. the probability measure."""

    def value_and_grad(q):
        return 0.0, np.zeros_like(q)

    return StiefelTarget(p=2, k=1, value_and_grad=value_and_grad)


def quadrature_mass_check(n_angles: int = 72, r_max: float = 12.0):
    """2-D quadrature of the expanded uniform-circle density.

    Integrates in polar coordinates: a radial quad per angle, then the
    trapezoid rule over the (periodic, smooth) angle marginal. Returns the
    total mass, the worst deviation of the angle marginal from 1/(2pi),
    and a pass flag at tolerance 1e-6.
    """
    target = expand_general(uniform_circle_target())

    def radial(theta):
        direction = np.array([np.cos(theta), np.sin(theta)])

        def integrand(r):
            if r == 0.0:
                return 0.0
            try:
                return np.exp(target.log_density(r * direction)) * r
            except DegenerateMatrixError:
                return 0.0

        val, _ = quad(integrand, 0.0, r_max, epsabs=1e-10, epsrel=1e-10)
        return val

    thetas = np.linspace(0.0, 2.0 * np.pi, n_angles, endpoint=False)
    marginal = np.array([radial(t) for t in thetas])
    mass = float(np.mean(marginal) * 2.0 * np.pi)
    marginal_dev = float(np.max(np.abs(marginal - 1.0 / (2.0 * np.pi))))
    return {
        "mass": mass,
        "mass_error": abs(mass - 1.0),
        "marginal_deviation": marginal_dev,
        "passed": bool(abs(mass - 1.0) <= 1e-6 and marginal_dev <= 1e-6),
    }


def gradient_checks(n_points: int = 5, seed: int = 20240301, tol: float = 1e-5):
    """Finite-difference checks of both model targets at random points."""
    rng = np.random.default_rng(seed)
    results = {}

    q0 = np.linalg.qr(rng.standard_normal((12, 2)))[0]
    data = simulate_eigenmodel(12, 0.0, q0, np.array([4.0, -3.0]), rng)
    target = eigenmodel_target(data, k=2)
    worst = 0.0
    worst_coord = -1
    for _ in range(n_points):
        x = 0.8 * rng.standard_normal(target.dim)
        rep = check_gradient(target, x)
        if rep.max_rel_error > worst:
            worst, worst_coord = rep.max_rel_error, rep.worst_coordinate
    results["eigenmodel"] = {
        "max_rel_error": worst,
        "worst_coordinate": worst_coord,
        "passed": bool(worst <= tol),
    }

    grid = np.linspace(1.0, 365.0, 16)
    fdata = simulate_fpca(6, grid, 2, [8.0, 5.0], 0.5, 0.3, 40.0, rng)
    hyper = fpca_empirical_bayes(fdata.y, 2)
    ftarget = fpca_target(fdata, hyper)
    worst = 0.0
    worst_coord = -1
    for _ in range(n_points):
        x = 0.5 * rng.standard_normal(ftarget.dim)
        rep = check_gradient(ftarget, x)
        if rep.max_rel_error > worst:
            worst, worst_coord = rep.max_rel_error, rep.worst_coordinate
    results["fpca"] = {
        "max_rel_error": worst,
        "worst_coordinate": worst_coord,
        "passed": bool(worst <= tol),
    }
    return results


def ess_oracle_check(phi: float = 0.5, n: int = 100_000, seed: int = 7, rtol: float = 0.10):
    """ESS of a synthetic AR(1) chain against (1-phi)/(1+phi)."""
    rng = np.random.default_rng(seed)
    chain = sample_ar1(1, n, Ar1Params(phi=phi, sigma2=1.0), rng)[0]
    ratio = ess(chain) / n
    expected = (1.0 - phi) / (1.0 + phi)
    rel = abs(ratio - expected) / expected
    return {
        "phi": phi,
        "ess_per_draw": ratio,
        "expected": expected,
        "rel_error": rel,
        "passed": bool(rel <= rtol),
    }


def run_all_checks():
    """All checks as a single report dict with an overall pass flag."""
    report = {
        "quadrature": quadrature_mass_check(),
        "gradients": gradient_checks(),
        "ess_oracle": ess_oracle_check(),
    }
    ok = (
        report["quadrature"]["passed"]
        and all(r["passed"] for r in report["gradients"].values())
        and report["ess_oracle"]["passed"]
    )
    report["passed"] = bool(ok)
    return report
