from fractions import Fraction

import pytest

from src.exponents import (ParameterError, ProblemParams, compute_exponents, proof_exponents, theta_factors,
                           validate_params, xi_bounds)


def rational_exponents(p, q, n, beta):
    p, q, beta = Fraction(p), Fraction(q), Fraction(beta)
    gap = p - q
    theta = (n * gap + q + 1) / (n * gap + (q + 1) * (p + 1))
    denom = q * (p + 1) + theta * gap
    return {
        "alpha": (q + 1) / gap - beta,
        "beta0": (q + 1) / gap - 1 / p,
        "theta": theta,
        "nu1": (1 - theta) * (q + 1) / denom,
        "mu1": (1 - theta) * gap / denom,
        "nu2": (q + 1) / (q * (p + 1)),
        "mu2": gap / (q * (p + 1)),
        "nu": (n * gap + (q + 1) * (p + 1)) * (q + 1 - beta * gap) / (beta * gap ** 2),
        "mu": (n * gap + (p + 1) * (q + 1) - beta * gap * (p + 1)) / (beta * gap ** 2),
    }


def test_heat_like_exponents_are_exact():
    exps = compute_exponents(ProblemParams(p=2, q=1, n=1, beta=1))
    expected = {"nu": 7, "mu": 4, "theta": Fraction(3, 7), "nu1": Fraction(1, 3), "mu1": Fraction(1, 6),
                "nu2": Fraction(2, 3), "mu2": Fraction(1, 3), "beta0": Fraction(3, 2), "alpha": 1}
    for key, value in expected.items():
        assert getattr(exps, key) == pytest.approx(float(value), rel=1e-12), key


@pytest.mark.parametrize("p, q, n, beta", [
    ("3/2", "4/5", 1, 1),
    (2, 1, 1, 1),
    (3, "1/2", 2, "1/2"),
    ("5/2", 2, 3, "3/2"),
])
def test_exponents_match_rational_oracle(p, q, n, beta):
    oracle = rational_exponents(p, q, n, beta)
    exps = compute_exponents(ProblemParams(p=float(Fraction(p)), q=float(Fraction(q)), n=n,
                                           beta=float(Fraction(beta))))
    for key, value in oracle.items():
        assert getattr(exps, key) == pytest.approx(float(value), rel=1e-12), key


def test_acceptance_scenario_values():
    exps = compute_exponents(ProblemParams(p=1.5, q=0.8, n=1, beta=1))
    assert exps.nu == pytest.approx(11.673469, rel=1e-6)
    assert exps.mu == pytest.approx(7.040816, rel=1e-6)
    assert exps.beta0 == pytest.approx(1.904762, rel=1e-6)
    assert exps.corollary_applicable
    assert exps.omega_power_theorem == pytest.approx(1.8 / 0.7)
    assert exps.omega_power_corollary == pytest.approx(1 / 0.7)


def test_iteration_exponent_recovers_nu():
    for p, q, beta in ((1.5, 0.8, 1.0), (2.0, 1.0, 1.0), (3.0, 0.5, 0.5)):
        params = ProblemParams(p=p, q=q, beta=beta)
        exps = compute_exponents(params)
        proof = proof_exponents(params, exps)
        assert proof["nu_from_iteration"] == pytest.approx(exps.nu, rel=1e-10)


def test_worked_example_factors():
    params = ProblemParams(p=1.5, q=0.8, n=1, beta=1, alpha1=0.9, xi=0.3, gamma=0.1)
    exps = compute_exponents(params)
    assert exps.theta == pytest.approx(0.4808, abs=1e-4)
    assert exps.nu1 == pytest.approx(0.4, abs=1e-4)
    assert exps.mu1 == pytest.approx(0.1556, abs=1e-4)
    assert exps.nu2 == pytest.approx(0.9)
    assert exps.mu2 == pytest.approx(0.35)
    theta1, theta2 = theta_factors(params, exps)
    assert theta1 == pytest.approx(0.557, abs=1e-3)
    assert theta2 == pytest.approx(0.81, abs=1e-3)
    report = validate_params(params)
    assert report.passed
    assert report.get("lambda<1").passed
    assert 1.1 * 0.3 ** 0.9 == pytest.approx(0.372, abs=1e-3)
    bounds = xi_bounds(params, exps)
    assert report.xi_binding == min(bounds, key=bounds.get)
    assert 0.3 < report.xi_bound < 1


@pytest.mark.parametrize("p, q, beta", [(0.5, 0.8, 1.0), (1.0, 0.0, 1.0), (1.5, 0.8, -1.0)])
def test_invalid_parameters_raise(p, q, beta):
    with pytest.raises(ParameterError):
        compute_exponents(ProblemParams(p=p, q=q, beta=beta))


def test_p_not_above_q_fails_validation_with_named_condition():
    report = validate_params(ProblemParams(p=0.5, q=0.8, beta=1.0))
    assert not report.passed
    assert "p>q" in [item.name for item in report.failures()]


def test_beta_above_beta0_warns_but_computes():
    params = ProblemParams(p=1.5, q=0.8, beta=2.0)
    exps = compute_exponents(params)
    assert exps.warnings
    assert not validate_params(params).get("beta<beta0").passed


def test_corollary_condition():
    assert not compute_exponents(ProblemParams(p=2, q=1, beta=1)).corollary_applicable
    assert not compute_exponents(ProblemParams(p=1.9, q=0.8, beta=0.5)).corollary_applicable
    assert compute_exponents(ProblemParams(p=1.5, q=0.8, beta=1)).corollary_applicable


def test_holder_range_reported_only_when_corollary_applies():
    names = [item.name for item in validate_params(ProblemParams(p=1.5, q=0.8, beta=1, alpha1=0.9)).conditions]
    assert "holder_range" in names
    names = [item.name for item in validate_params(ProblemParams(p=2, q=1, beta=1)).conditions]
    assert "holder_range" not in names


def test_omega0_condition_only_when_set():
    params = ProblemParams(p=1.5, q=0.8, beta=1, alpha1=0.9)
    assert "omega0>0" not in [item.name for item in validate_params(params).conditions]
    assert validate_params(params.with_omega0(2.0)).get("omega0>0").passed


def test_default_alpha1_is_admissible():
    params = ProblemParams(p=1.5, q=0.8, beta=1)
    alpha = compute_exponents(params).alpha
    assert 1 / 1.5 < params.resolved_alpha1() < alpha
